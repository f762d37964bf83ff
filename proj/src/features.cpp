#include "gf/features.h"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "gf/io_util.h"

namespace gf {

namespace {
constexpr char kMagic[4] = {'G', 'F', 'V', 'Q'};
constexpr uint32_t kVersion = 1;
}  // namespace

void FeatureSet::validate() const {
    if (vectors.rank() != 2) throw std::invalid_argument("FeatureSet: vectors must be NxD");
    const size_t n = static_cast<size_t>(vectors.dim(0));
    if (mask.size() != n) throw std::invalid_argument("FeatureSet: mask length mismatch");
    if (kind == Kind::region) {
        if (boxes.size() != n) throw std::invalid_argument("FeatureSet: box count mismatch");
    } else {
        if (grid.grid_h * grid.grid_w != static_cast<int>(n)) {
            throw std::invalid_argument("FeatureSet: grid extents do not match N");
        }
        for (bool m : mask) {
            if (!m) throw std::invalid_argument("FeatureSet: grid mask must be all true");
        }
    }
    if (image_h <= 0 || image_w <= 0) {
        throw std::invalid_argument("FeatureSet: bad image size");
    }
}

FeatureSet from_regions(const SelectedRegions& selected, const RegionBatch& batch,
                        int image_h, int image_w) {
    const int n = static_cast<int>(selected.rows.size());
    const int d = batch.vectors.dim(1);
    FeatureSet set;
    set.kind = FeatureSet::Kind::region;
    set.vectors = Tensor({n, d});
    set.mask = selected.mask;
    set.boxes.reserve(static_cast<size_t>(n));
    set.image_h = image_h;
    set.image_w = image_w;
    for (int i = 0; i < n; ++i) {
        const Detection& det = selected.rows[static_cast<size_t>(i)];
        set.boxes.push_back(det.box);
        if (selected.mask[static_cast<size_t>(i)]) {
            if (det.region_index < 0 || det.region_index >= batch.count) {
                throw std::invalid_argument("from_regions: detection row index out of range");
            }
            std::copy(batch.vectors.data() + static_cast<size_t>(det.region_index) * d,
                      batch.vectors.data() + static_cast<size_t>(det.region_index + 1) * d,
                      set.vectors.data() + static_cast<size_t>(i) * d);
        }
    }
    set.validate();
    return set;
}

FeatureSet from_grid(const Tensor& grid_map, int stride, int image_h, int image_w) {
    if (grid_map.rank() != 3) throw std::invalid_argument("from_grid: map must be DxGHxGW");
    const int d = grid_map.dim(0), gh = grid_map.dim(1), gw = grid_map.dim(2);
    FeatureSet set;
    set.kind = FeatureSet::Kind::grid;
    set.vectors = Tensor({gh * gw, d});
    set.mask.assign(static_cast<size_t>(gh) * gw, true);
    set.grid = GridGeometry{gh, gw, stride};
    set.image_h = image_h;
    set.image_w = image_w;
    for (int c = 0; c < d; ++c) {
        for (int r = 0; r < gh; ++r) {
            for (int q = 0; q < gw; ++q) {
                set.vectors.at(r * gw + q, c) = grid_map.at(c, r, q);
            }
        }
    }
    set.validate();
    return set;
}

Tensor to_grid_map(const FeatureSet& set) {
    if (set.kind != FeatureSet::Kind::grid) {
        throw std::invalid_argument("to_grid_map: grid kind required");
    }
    const int d = set.dim(), gh = set.grid.grid_h, gw = set.grid.grid_w;
    Tensor map({d, gh, gw});
    for (int c = 0; c < d; ++c) {
        for (int r = 0; r < gh; ++r) {
            for (int q = 0; q < gw; ++q) {
                map.at(c, r, q) = set.vectors.at(r * gw + q, c);
            }
        }
    }
    return map;
}

std::vector<Box> row_boxes(const FeatureSet& set) {
    if (set.kind == FeatureSet::Kind::region) return set.boxes;
    std::vector<Box> cells;
    cells.reserve(static_cast<size_t>(set.count()));
    const float s = static_cast<float>(set.grid.stride);
    for (int r = 0; r < set.grid.grid_h; ++r) {
        for (int q = 0; q < set.grid.grid_w; ++q) {
            cells.push_back(Box{q * s, r * s,
                                std::min((q + 1) * s, static_cast<float>(set.image_w)),
                                std::min((r + 1) * s, static_cast<float>(set.image_h))});
        }
    }
    return cells;
}

FeatureSet with_feature_count(const FeatureSet& set, int n) {
    if (set.kind != FeatureSet::Kind::region) {
        throw std::invalid_argument("with_feature_count: region kind required");
    }
    if (n < 1) throw std::invalid_argument("with_feature_count: n must be >= 1");
    FeatureSet out;
    out.kind = set.kind;
    out.image_h = set.image_h;
    out.image_w = set.image_w;
    out.vectors = Tensor({n, set.dim()});
    out.mask.assign(static_cast<size_t>(n), false);
    out.boxes.assign(static_cast<size_t>(n), Box{});
    const int copy_n = std::min(n, set.count());
    std::copy(set.vectors.data(), set.vectors.data() + static_cast<size_t>(copy_n) * set.dim(),
              out.vectors.data());
    for (int i = 0; i < copy_n; ++i) {
        out.mask[static_cast<size_t>(i)] = set.mask[static_cast<size_t>(i)];
        out.boxes[static_cast<size_t>(i)] = set.boxes[static_cast<size_t>(i)];
    }
    return out;
}

void save_cache(const FeatureSet& set, const std::string& path) {
    set.validate();
    io::AtomicFileWriter w(path);
    auto& os = w.stream();
    os.write(kMagic, 4);
    io::write_u32(os, kVersion);
    io::write_u8(os, static_cast<uint8_t>(set.kind));
    io::write_u32(os, static_cast<uint32_t>(set.count()));
    io::write_u32(os, static_cast<uint32_t>(set.dim()));
    io::write_u32(os, static_cast<uint32_t>(set.image_h));
    io::write_u32(os, static_cast<uint32_t>(set.image_w));
    if (set.kind == FeatureSet::Kind::region) {
        for (const Box& b : set.boxes) {
            io::write_f32(os, b.x1);
            io::write_f32(os, b.y1);
            io::write_f32(os, b.x2);
            io::write_f32(os, b.y2);
        }
        for (bool m : set.mask) io::write_u8(os, m ? 1 : 0);
    } else {
        io::write_u32(os, static_cast<uint32_t>(set.grid.grid_h));
        io::write_u32(os, static_cast<uint32_t>(set.grid.grid_w));
        io::write_u32(os, static_cast<uint32_t>(set.grid.stride));
    }
    io::write_f32_array(os, set.vectors.data(), static_cast<size_t>(set.vectors.numel()));
    w.commit();
}

FeatureSet load_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open feature cache: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a GFVQ cache file: " + path);
    }
    const uint32_t version = io::read_u32(is);
    if (version != kVersion) {
        throw std::runtime_error("unsupported GFVQ version " + std::to_string(version));
    }
    const uint8_t kind = io::read_u8(is);
    if (kind > 1) throw std::runtime_error("bad GFVQ kind byte in " + path);
    const int n = static_cast<int>(io::read_u32(is));
    const int d = static_cast<int>(io::read_u32(is));
    FeatureSet set;
    set.kind = static_cast<FeatureSet::Kind>(kind);
    set.image_h = static_cast<int>(io::read_u32(is));
    set.image_w = static_cast<int>(io::read_u32(is));
    if (set.kind == FeatureSet::Kind::region) {
        set.boxes.resize(static_cast<size_t>(n));
        for (Box& b : set.boxes) {
            b.x1 = io::read_f32(is);
            b.y1 = io::read_f32(is);
            b.x2 = io::read_f32(is);
            b.y2 = io::read_f32(is);
        }
        set.mask.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) set.mask[static_cast<size_t>(i)] = io::read_u8(is) != 0;
    } else {
        set.grid.grid_h = static_cast<int>(io::read_u32(is));
        set.grid.grid_w = static_cast<int>(io::read_u32(is));
        set.grid.stride = static_cast<int>(io::read_u32(is));
        set.mask.assign(static_cast<size_t>(n), true);
    }
    set.vectors = Tensor({n, d});
    io::read_f32_array(is, set.vectors.data(), static_cast<size_t>(set.vectors.numel()));
    set.validate();
    return set;
}

std::string cache_path(const std::string& dir, const std::string& split,
                       const std::string& image_id) {
    return dir + "/" + split + "/" + image_id + ".gfvq";
}

}  // namespace gf
