#pragma once

// Shared error types, little-endian binary IO, and the streaming corpus
// checksum used by the embedding cache.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nlm {

inline constexpr const char* kVersion = "0.1.0";

// Malformed or inconsistent input data (bad files, unknown ids, shape
// mismatches). CLI maps this to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or degenerate numeric configurations. CLI maps this to
// exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Little-endian primitives. All on-disk formats are byte-order independent.

inline void put_u8(std::ostream& out, uint8_t v) {
    out.put(static_cast<char>(v));
}

inline void put_u32(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                 static_cast<char>((v >> 16) & 0xffu), static_cast<char>((v >> 24) & 0xffu)};
    out.write(b, 4);
}

inline void put_u64(std::ostream& out, uint64_t v) {
    put_u32(out, static_cast<uint32_t>(v & 0xffffffffu));
    put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f64(std::ostream& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

inline void put_string(std::ostream& out, std::string_view s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint8_t get_u8(std::istream& in) {
    int c = in.get();
    if (c == EOF) throw DataError("unexpected end of file");
    return static_cast<uint8_t>(c);
}

inline uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw DataError("unexpected end of file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& in) {
    uint64_t lo = get_u32(in);
    uint64_t hi = get_u32(in);
    return lo | (hi << 32);
}

inline float get_f32(std::istream& in) {
    uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double get_f64(std::istream& in) {
    uint64_t bits = get_u64(in);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string get_string(std::istream& in, uint32_t max_len = 1u << 20) {
    uint32_t n = get_u32(in);
    if (n > max_len) throw DataError("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<uint32_t>(in.gcount()) != n) throw DataError("unexpected end of file");
    return s;
}

inline void put_f32_array(std::ostream& out, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) put_f32(out, data[i]);
}

inline void get_f32_array(std::istream& in, float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) data[i] = get_f32(in);
}

// ---------------------------------------------------------------------------
// 32-byte streaming checksum: four independent 64-bit mixing lanes fed with
// the input in 8-byte blocks (zero-padded tail, length absorbed at the end).
// Non-cryptographic; identifies a corpus, does not authenticate it.

class Checksum256 {
public:
    Checksum256() {
        for (int i = 0; i < 4; ++i) lanes_[i] = kInit[i];
    }

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const uint8_t*>(data);
        for (size_t i = 0; i < n; ++i) {
            block_ |= static_cast<uint64_t>(p[i]) << (8 * fill_);
            if (++fill_ == 8) absorb_();
        }
        total_ += n;
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    std::array<uint8_t, 32> finish() const {
        Checksum256 c = *this;
        if (c.fill_ > 0) c.absorb_();
        c.block_ = c.total_;
        c.fill_ = 8;
        c.absorb_();
        std::array<uint8_t, 32> out{};
        for (int lane = 0; lane < 4; ++lane) {
            uint64_t v = mix_(c.lanes_[lane] + kInit[(lane + 1) % 4]);
            for (int b = 0; b < 8; ++b) out[static_cast<size_t>(lane * 8 + b)] = static_cast<uint8_t>(v >> (8 * b));
        }
        return out;
    }

private:
    static constexpr uint64_t kInit[4] = {0x6a09e667f3bcc908ull, 0xbb67ae8584caa73bull,
                                          0x3c6ef372fe94f82bull, 0xa54ff53a5f1d36f1ull};

    static uint64_t mix_(uint64_t x) {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return x;
    }

    void absorb_() {
        for (int i = 0; i < 4; ++i) lanes_[i] = mix_(lanes_[i] ^ (block_ + kInit[i]));
        block_ = 0;
        fill_ = 0;
    }

    uint64_t lanes_[4];
    uint64_t block_ = 0;
    int fill_ = 0;
    uint64_t total_ = 0;
};

inline std::string hex_string(const std::array<uint8_t, 32>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

}  // namespace nlm
