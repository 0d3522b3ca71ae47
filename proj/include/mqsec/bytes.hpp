#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace mqsec {

using Bytes = std::vector<uint8_t>;

// Little-endian writers/readers (model file format).
inline void put_u8(Bytes& b, uint8_t v) { b.push_back(v); }
inline void put_u32le(Bytes& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_u64le(Bytes& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_f64le(Bytes& b, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64le(b, u);
}

// Big-endian writers/readers (wire protocol).
inline void put_u16be(Bytes& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v >> 8));
    b.push_back(static_cast<uint8_t>(v));
}
inline void put_u32be(Bytes& b, uint32_t v) {
    for (int i = 3; i >= 0; --i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_u64be(Bytes& b, uint64_t v) {
    for (int i = 7; i >= 0; --i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

// Bounds-checked cursor over a byte buffer.
class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

    size_t remaining() const { return size_ - pos_; }
    size_t pos() const { return pos_; }

    uint8_t u8() { return take(1)[0]; }
    uint32_t u32le() {
        const uint8_t* p = take(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    uint64_t u64le() {
        const uint8_t* p = take(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    double f64le() {
        uint64_t u = u64le();
        double d;
        std::memcpy(&d, &u, 8);
        return d;
    }
    uint16_t u16be() {
        const uint8_t* p = take(2);
        return static_cast<uint16_t>((p[0] << 8) | p[1]);
    }
    uint32_t u32be() {
        const uint8_t* p = take(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
        return v;
    }
    uint64_t u64be() {
        const uint8_t* p = take(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
        return v;
    }
    Bytes raw(size_t n) {
        const uint8_t* p = take(n);
        return Bytes(p, p + n);
    }
    void copy_to(uint8_t* out, size_t n) { std::memcpy(out, take(n), n); }

private:
    const uint8_t* take(size_t n) {
        if (pos_ + n > size_) throw std::runtime_error("byte stream truncated");
        const uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

inline std::string to_hex(const uint8_t* data, size_t n) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(n * 2);
    for (size_t i = 0; i < n; ++i) {
        s.push_back(digits[data[i] >> 4]);
        s.push_back(digits[data[i] & 0xF]);
    }
    return s;
}
inline std::string to_hex(const Bytes& b) { return to_hex(b.data(), b.size()); }

inline int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

inline Bytes from_hex(const std::string& s) {
    if (s.size() % 2 != 0) throw std::runtime_error("odd-length hex string");
    Bytes out;
    out.reserve(s.size() / 2);
    for (size_t i = 0; i < s.size(); i += 2) {
        int hi = hex_nibble(s[i]), lo = hex_nibble(s[i + 1]);
        if (hi < 0 || lo < 0) throw std::runtime_error("invalid hex digit in: " + s);
        out.push_back(static_cast<uint8_t>((hi << 4) | lo));
    }
    return out;
}

}  // namespace mqsec
