#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gf/tensor.h"

namespace gf {

// 8-bit RGB image, row-major.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> pixels;  // H*W*3

    Image() = default;
    Image(int h, int w, std::array<uint8_t, 3> fill = {0, 0, 0});

    uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// Binary PPM (P6), 8-bit, written atomically.
void save_ppm(const Image& image, const std::string& path);
Image load_ppm(const std::string& path);

// Binary PGM (P5) of a HxW map with values in [0,1].
void save_pgm(const Tensor& map, const std::string& path);

// 3xHxW float tensor in [0,1].
Tensor image_to_tensor(const Image& image);

Image resize_nearest(const Image& image, int out_h, int out_w);

// Aspect-preserving extraction resize: scale so the shorter side hits
// `shorter`, unless that pushes the longer side past `longer`, in which
// case scale by the longer-side cap instead.
std::pair<int, int> extract_resize_extents(int h, int w, int shorter, int longer);

}  // namespace gf
