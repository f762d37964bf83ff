#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gf::io {

// All file formats in this project are little-endian.

inline uint32_t to_le(uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xff) << 24) | ((v & 0xff00) << 8) | ((v >> 8) & 0xff00) | (v >> 24);
    }
    return v;
}

inline uint16_t to_le(uint16_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return static_cast<uint16_t>((v << 8) | (v >> 8));
    }
    return v;
}

inline void write_u32(std::ostream& os, uint32_t v) {
    uint32_t le = to_le(v);
    os.write(reinterpret_cast<const char*>(&le), 4);
}

inline void write_u16(std::ostream& os, uint16_t v) {
    uint16_t le = to_le(v);
    os.write(reinterpret_cast<const char*>(&le), 2);
}

inline void write_u8(std::ostream& os, uint8_t v) {
    os.write(reinterpret_cast<const char*>(&v), 1);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline void write_f32_array(std::ostream& os, const float* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * 4));
    } else {
        for (size_t i = 0; i < n; ++i) write_f32(os, data[i]);
    }
}

inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw std::runtime_error("read_u32: truncated stream");
    return to_le(v);
}

inline uint16_t read_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    if (!is) throw std::runtime_error("read_u16: truncated stream");
    return to_le(v);
}

inline uint8_t read_u8(std::istream& is) {
    uint8_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 1);
    if (!is) throw std::runtime_error("read_u8: truncated stream");
    return v;
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void read_f32_array(std::istream& is, float* data, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * 4));
        if (!is) throw std::runtime_error("read_f32_array: truncated stream");
    } else {
        for (size_t i = 0; i < n; ++i) data[i] = read_f32(is);
    }
}

// Writes to <path>.tmp then renames, so readers never see partial files.
class AtomicFileWriter {
public:
    explicit AtomicFileWriter(const std::string& path)
        : path_(path), tmp_path_(path + ".tmp"), os_(tmp_path_, std::ios::binary) {
        if (!os_) throw std::runtime_error("cannot open for writing: " + tmp_path_);
    }

    std::ofstream& stream() { return os_; }

    void commit() {
        os_.flush();
        if (!os_) throw std::runtime_error("write failed: " + tmp_path_);
        os_.close();
        std::filesystem::rename(tmp_path_, path_);
        committed_ = true;
    }

    ~AtomicFileWriter() {
        if (!committed_) {
            os_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_path_, ec);
        }
    }

private:
    std::string path_;
    std::string tmp_path_;
    std::ofstream os_;
    bool committed_ = false;
};

inline void write_text_file(const std::string& path, const std::string& content) {
    AtomicFileWriter w(path);
    w.stream() << content;
    w.commit();
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace gf::io
