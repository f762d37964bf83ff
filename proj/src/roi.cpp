#include "gf/roi.h"

#include <cmath>
#include <stdexcept>

namespace gf {

std::vector<RoiBin> roi_bins(int feat_h, int feat_w, const Box& box, int k,
                             int image_stride) {
    if (k < 1) throw std::invalid_argument("roi_pool: k must be >= 1");
    if (box.width() <= 0.0f || box.height() <= 0.0f) {
        throw std::invalid_argument("roi_pool: box must have positive extents");
    }
    const float s = static_cast<float>(image_stride);
    if (box.x1 >= static_cast<float>(feat_w) * s || box.x2 <= 0.0f ||
        box.y1 >= static_cast<float>(feat_h) * s || box.y2 <= 0.0f) {
        throw std::invalid_argument("roi_pool: box fully outside the feature map");
    }
    const int cx1 = std::clamp(static_cast<int>(std::round(box.x1 / s)), 0, feat_w - 1);
    const int cy1 = std::clamp(static_cast<int>(std::round(box.y1 / s)), 0, feat_h - 1);
    int cx2 = std::clamp(static_cast<int>(std::round(box.x2 / s)), 0, feat_w - 1);
    int cy2 = std::clamp(static_cast<int>(std::round(box.y2 / s)), 0, feat_h - 1);
    if (cx2 < cx1) cx2 = cx1;
    if (cy2 < cy1) cy2 = cy1;
    const int h = cy2 - cy1 + 1;
    const int w = cx2 - cx1 + 1;

    std::vector<RoiBin> bins;
    bins.reserve(static_cast<size_t>(k) * k);
    for (int i = 0; i < k; ++i) {
        const int r0 = cy1 + (i * h) / k;
        const int r1 = cy1 + ((i + 1) * h) / k;
        for (int j = 0; j < k; ++j) {
            const int c0 = cx1 + (j * w) / k;
            const int c1 = cx1 + ((j + 1) * w) / k;
            bins.push_back(RoiBin{r0, r1, c0, c1});
        }
    }
    return bins;
}

RoiPoolResult roi_pool_with_indices(const Tensor& map, const Box& box, int k,
                                    int image_stride, bool mean_pool) {
    if (map.rank() != 3) throw std::invalid_argument("roi_pool: map must be DxHxW");
    const int D = map.dim(0), H = map.dim(1), W = map.dim(2);
    const auto bins = roi_bins(H, W, box, k, image_stride);

    RoiPoolResult res;
    res.pooled = Tensor({D, k, k});
    res.argmax.assign(static_cast<size_t>(D) * k * k, -1);
    for (int d = 0; d < D; ++d) {
        const float* ch = map.data() + static_cast<size_t>(d) * H * W;
        for (int bi = 0; bi < k * k; ++bi) {
            const RoiBin& b = bins[static_cast<size_t>(bi)];
            float* out = res.pooled.data() + static_cast<size_t>(d) * k * k + bi;
            if (b.empty()) {
                *out = 0.0f;
                continue;
            }
            if (mean_pool) {
                float acc = 0.0f;
                for (int r = b.r0; r < b.r1; ++r) {
                    for (int c = b.c0; c < b.c1; ++c) acc += ch[r * W + c];
                }
                *out = acc / static_cast<float>((b.r1 - b.r0) * (b.c1 - b.c0));
            } else {
                float m = ch[b.r0 * W + b.c0];
                int arg = b.r0 * W + b.c0;
                for (int r = b.r0; r < b.r1; ++r) {
                    for (int c = b.c0; c < b.c1; ++c) {
                        if (ch[r * W + c] > m) {
                            m = ch[r * W + c];
                            arg = r * W + c;
                        }
                    }
                }
                *out = m;
                res.argmax[static_cast<size_t>(d) * k * k + bi] = arg;
            }
        }
    }
    return res;
}

Tensor roi_pool(const Tensor& map, const Box& box, int k, int image_stride,
                bool mean_pool) {
    return roi_pool_with_indices(map, box, k, image_stride, mean_pool).pooled;
}

}  // namespace gf
