#include "gf/image.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "gf/io_util.h"

namespace gf {

Image::Image(int h, int w, std::array<uint8_t, 3> fill) : height(h), width(w) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("Image: extents must be positive");
    pixels.resize(static_cast<size_t>(h) * w * 3);
    for (size_t p = 0; p < pixels.size(); p += 3) {
        pixels[p] = fill[0];
        pixels[p + 1] = fill[1];
        pixels[p + 2] = fill[2];
    }
}

void save_ppm(const Image& image, const std::string& path) {
    io::AtomicFileWriter w(path);
    auto& os = w.stream();
    os << "P6\n" << image.width << " " << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()),
             static_cast<std::streamsize>(image.pixels.size()));
    w.commit();
}

Image load_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw std::runtime_error("not a P6 PPM file: " + path);
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255) {
        throw std::runtime_error("bad PPM header: " + path);
    }
    is.get();  // single whitespace after the header
    Image image(h, w);
    is.read(reinterpret_cast<char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
    if (!is) throw std::runtime_error("truncated PPM payload: " + path);
    return image;
}

void save_pgm(const Tensor& map, const std::string& path) {
    if (map.rank() != 2) throw std::invalid_argument("save_pgm: map must be HxW");
    io::AtomicFileWriter w(path);
    auto& os = w.stream();
    os << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n255\n";
    std::vector<uint8_t> bytes(static_cast<size_t>(map.numel()));
    for (int64_t i = 0; i < map.numel(); ++i) {
        const float v = std::clamp(map.data()[i], 0.0f, 1.0f);
        bytes[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    w.commit();
}

Tensor image_to_tensor(const Image& image) {
    Tensor t({3, image.height, image.width});
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                t.at(c, y, x) = static_cast<float>(image.at(y, x, c)) / 255.0f;
            }
        }
    }
    return t;
}

Image resize_nearest(const Image& image, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) {
        throw std::invalid_argument("resize_nearest: extents must be positive");
    }
    Image out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>((static_cast<int64_t>(y) * image.height) / out_h);
        for (int x = 0; x < out_w; ++x) {
            const int sx = static_cast<int>((static_cast<int64_t>(x) * image.width) / out_w);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
        }
    }
    return out;
}

std::pair<int, int> extract_resize_extents(int h, int w, int shorter, int longer) {
    const int short_side = std::min(h, w);
    const int long_side = std::max(h, w);
    double scale = static_cast<double>(shorter) / short_side;
    if (scale * long_side > static_cast<double>(longer)) {
        scale = static_cast<double>(longer) / long_side;
    }
    const int oh = std::max(1, static_cast<int>(std::lround(h * scale)));
    const int ow = std::max(1, static_cast<int>(std::lround(w * scale)));
    return {oh, ow};
}

}  // namespace gf
