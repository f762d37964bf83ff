#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace gf {

// Pixel-space rectangle, x2 >= x1 and y2 >= y1, continuous coordinates.
struct Box {
    float x1 = 0.0f;
    float y1 = 0.0f;
    float x2 = 0.0f;
    float y2 = 0.0f;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return width() * height(); }
    float cx() const { return 0.5f * (x1 + x2); }
    float cy() const { return 0.5f * (y1 + y2); }

    bool valid() const {
        return x2 >= x1 && y2 >= y1 && std::isfinite(x1) && std::isfinite(y1) &&
               std::isfinite(x2) && std::isfinite(y2);
    }
};

inline float iou(const Box& a, const Box& b) {
    const float ix1 = std::max(a.x1, b.x1);
    const float iy1 = std::max(a.y1, b.y1);
    const float ix2 = std::min(a.x2, b.x2);
    const float iy2 = std::min(a.y2, b.y2);
    const float iw = std::max(0.0f, ix2 - ix1);
    const float ih = std::max(0.0f, iy2 - iy1);
    const float inter = iw * ih;
    const float uni = a.area() + b.area() - inter;
    if (uni <= 0.0f) return 0.0f;
    return inter / uni;
}

inline Box clip_box(const Box& b, int img_w, int img_h) {
    Box out;
    out.x1 = std::clamp(b.x1, 0.0f, static_cast<float>(img_w));
    out.y1 = std::clamp(b.y1, 0.0f, static_cast<float>(img_h));
    out.x2 = std::clamp(b.x2, out.x1, static_cast<float>(img_w));
    out.y2 = std::clamp(b.y2, out.y1, static_cast<float>(img_h));
    return out;
}

using BoxDeltas = std::array<float, 4>;  // dx, dy, dw, dh

// Shift the center by (dx*w, dy*h), scale extents by exp(dw), exp(dh)
// (dw, dh clamped to +-4), then clip to image bounds.
inline Box decode_deltas(const Box& anchor, const BoxDeltas& d, int img_w, int img_h) {
    if (anchor.width() <= 0.0f || anchor.height() <= 0.0f) {
        throw std::invalid_argument("decode_deltas: anchor must have positive extents");
    }
    const float w = anchor.width(), h = anchor.height();
    const float cx = anchor.cx() + d[0] * w;
    const float cy = anchor.cy() + d[1] * h;
    const float nw = w * std::exp(std::clamp(d[2], -4.0f, 4.0f));
    const float nh = h * std::exp(std::clamp(d[3], -4.0f, 4.0f));
    Box out{cx - 0.5f * nw, cy - 0.5f * nh, cx + 0.5f * nw, cy + 0.5f * nh};
    return clip_box(out, img_w, img_h);
}

// Inverse of decode_deltas (before clipping).
inline BoxDeltas encode_deltas(const Box& anchor, const Box& target) {
    const float w = anchor.width(), h = anchor.height();
    if (w <= 0.0f || h <= 0.0f) {
        throw std::invalid_argument("encode_deltas: anchor must have positive extents");
    }
    if (target.width() <= 0.0f || target.height() <= 0.0f) {
        throw std::invalid_argument("encode_deltas: target must have positive extents");
    }
    return BoxDeltas{(target.cx() - anchor.cx()) / w, (target.cy() - anchor.cy()) / h,
                     std::log(target.width() / w), std::log(target.height() / h)};
}

}  // namespace gf
