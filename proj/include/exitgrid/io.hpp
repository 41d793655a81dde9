#pragma once

// Little-endian binary readers/writers shared by the dataset and model file
// formats (and the grid hash, which runs over the same serialized bytes).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "exitgrid/tensor.hpp"

namespace exitgrid {

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) { raw(&v, sizeof v); }
    void u64(uint64_t v) { raw(&v, sizeof v); }
    void i32(int32_t v) { raw(&v, sizeof v); }
    void f32(float v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    const std::vector<uint8_t>& buffer() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open file for writing: " + path);
        f.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!f) throw IoError("failed writing file: " + path);
    }

private:
    template <typename T>
    void raw(const T* v, size_t n) {
        static_assert(std::endian::native == std::endian::little,
                      "serialization assumes a little-endian host");
        bytes(v, n);
    }
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<uint8_t> data, std::string origin = "buffer")
        : buf_(std::move(data)), origin_(std::move(origin)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary | std::ios::ate);
        if (!f) throw IoError("cannot open file: " + path);
        auto size = f.tellg();
        f.seekg(0);
        std::vector<uint8_t> data(static_cast<size_t>(size));
        f.read(reinterpret_cast<char*>(data.data()), size);
        if (!f) throw IoError("failed reading file: " + path);
        return ByteReader(std::move(data), path);
    }

    uint8_t u8() { return take<uint8_t>(); }
    uint32_t u32() { return take<uint32_t>(); }
    uint64_t u64() { return take<uint64_t>(); }
    int32_t i32() { return take<int32_t>(); }
    float f32() { return take<float>(); }
    double f64() { return take<double>(); }
    void bytes(void* out, size_t n) {
        need(n);
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }
    size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    template <typename T>
    T take() {
        static_assert(std::endian::native == std::endian::little,
                      "serialization assumes a little-endian host");
        T v;
        bytes(&v, sizeof v);
        return v;
    }
    void need(size_t n) {
        if (buf_.size() - pos_ < n)
            throw IoError("truncated data in " + origin_ + ": wanted " + std::to_string(n) +
                          " bytes, " + std::to_string(buf_.size() - pos_) + " left");
    }
    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
    std::string origin_;
};

inline uint64_t fnv1a(const std::vector<uint8_t>& bytes) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace exitgrid
