#pragma once

#include <vector>

#include "gf/box.h"
#include "gf/tensor.h"

namespace gf {

// One RoI pooling bin: cell rows [r0, r1) x cols [c0, c1); empty if degenerate.
struct RoiBin {
    int r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    bool empty() const { return r0 >= r1 || c0 >= c1; }
};

// Projects the pixel box onto the feature map (divide by stride, round to
// nearest cell, clamp into the map) and partitions the covered cells into
// k x k quantized bins, row-major. Throws if the box has no overlap with the
// map's pixel span at all.
std::vector<RoiBin> roi_bins(int feat_h, int feat_w, const Box& box, int k,
                             int image_stride);

struct RoiPoolResult {
    Tensor pooled;            // D x k x k
    std::vector<int> argmax;  // flat h*W+w index per output element, -1 for empty bins
};

// Per-bin per-channel max (or mean when mean_pool); empty bins yield 0.
RoiPoolResult roi_pool_with_indices(const Tensor& map, const Box& box, int k,
                                    int image_stride, bool mean_pool = false);

Tensor roi_pool(const Tensor& map, const Box& box, int k, int image_stride,
                bool mean_pool = false);

}  // namespace gf
