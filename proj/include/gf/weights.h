#pragma once

#include <map>
#include <string>

#include "gf/rng.h"
#include "gf/tensor.h"

namespace gf {

// Named tensor collection. std::map keeps iteration (and therefore file
// layout) in name order, so identical contents serialize identically.
using ParamStore = std::map<std::string, Tensor>;

const Tensor& param(const ParamStore& params, const std::string& name);

// He-style fan-in init: N(0, sqrt(2 / fan_in)) drawn from the given rng.
Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng);

// GFWT weight file:
//   magic "GFWT", version u32 LE, tensor count u32 LE, then per tensor:
//   name length u16 LE + UTF-8 name, rank u8, extents u32 LE each,
//   payload f32 LE. Round-trips bit-exactly.
void save_weights(const ParamStore& params, const std::string& path);
ParamStore load_weights(const std::string& path);

}  // namespace gf
