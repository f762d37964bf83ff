#include "gf/weights.h"

#include <cmath>

#include "gf/io_util.h"

namespace gf {

namespace {
constexpr char kMagic[4] = {'G', 'F', 'W', 'T'};
constexpr uint32_t kVersion = 1;
}  // namespace

const Tensor& param(const ParamStore& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
        throw std::runtime_error("missing parameter: " + name);
    }
    return it->second;
}

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.values()) v = rng.normal(0.0f, stddev);
    return t;
}

void save_weights(const ParamStore& params, const std::string& path) {
    io::AtomicFileWriter w(path);
    auto& os = w.stream();
    os.write(kMagic, 4);
    io::write_u32(os, kVersion);
    io::write_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
        io::write_u16(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_u8(os, static_cast<uint8_t>(tensor.rank()));
        for (int i = 0; i < tensor.rank(); ++i) {
            io::write_u32(os, static_cast<uint32_t>(tensor.dim(i)));
        }
        io::write_f32_array(os, tensor.data(), static_cast<size_t>(tensor.numel()));
    }
    w.commit();
}

ParamStore load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open weight file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("not a GFWT weight file: " + path);
    }
    const uint32_t version = io::read_u32(is);
    if (version != kVersion) {
        throw std::runtime_error("unsupported GFWT version " + std::to_string(version));
    }
    const uint32_t count = io::read_u32(is);
    ParamStore params;
    for (uint32_t t = 0; t < count; ++t) {
        const uint16_t name_len = io::read_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw std::runtime_error("truncated GFWT file: " + path);
        const uint8_t rank = io::read_u8(is);
        if (rank < 1 || rank > 4) throw std::runtime_error("bad tensor rank in " + path);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(io::read_u32(is));
        Tensor tensor(shape);
        io::read_f32_array(is, tensor.data(), static_cast<size_t>(tensor.numel()));
        params.emplace(std::move(name), std::move(tensor));
    }
    return params;
}

}  // namespace gf
