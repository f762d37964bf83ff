#pragma once

#include <string>
#include <vector>

#include "gf/box.h"
#include "gf/detector.h"
#include "gf/tensor.h"

namespace gf {

struct GridGeometry {
    int grid_h = 0;
    int grid_w = 0;
    int stride = 0;
};

// The unified visual input to the VQA model: N feature vectors of dimension
// D, either detector regions (with boxes and a padding mask) or the cells of
// a convolutional map flattened row-major.
struct FeatureSet {
    enum class Kind : uint8_t { region = 0, grid = 1 };

    Kind kind = Kind::grid;
    Tensor vectors;          // N x D
    std::vector<bool> mask;  // true = real feature; all true for grids
    std::vector<Box> boxes;  // region kind only, one per row
    GridGeometry grid;       // grid kind only
    int image_h = 0;
    int image_w = 0;

    int count() const { return vectors.dim(0); }
    int dim() const { return vectors.dim(1); }
    void validate() const;
};

// Region rows in selection order; padded rows keep zero vectors and boxes.
FeatureSet from_regions(const SelectedRegions& selected, const RegionBatch& batch,
                        int image_h, int image_w);

// Row i holds the channel vector of cell (i / GW, i mod GW).
FeatureSet from_grid(const Tensor& grid_map, int stride, int image_h, int image_w);

// Inverse of from_grid; reproduces the map bitwise.
Tensor to_grid_map(const FeatureSet& set);

// Pixel footprint of each row: the stored box for regions, the stride-sized
// cell (clipped to the image) for grids.
std::vector<Box> row_boxes(const FeatureSet& set);

// Truncates or zero-pads a region set to exactly n rows.
FeatureSet with_feature_count(const FeatureSet& set, int n);

// GFVQ cache file: magic "GFVQ", version u32 LE, kind u8 (0 region, 1 grid),
// N u32, D u32, image H u32, image W u32, geometry block (region: N boxes of
// 4 f32 each then N mask bytes; grid: GH, GW, stride u32), payload f32 LE
// row-major. Round-trips bit-exactly.
void save_cache(const FeatureSet& set, const std::string& path);
FeatureSet load_cache(const std::string& path);

// {dir}/{split}/{image_id}.gfvq
std::string cache_path(const std::string& dir, const std::string& split,
                       const std::string& image_id);

}  // namespace gf
