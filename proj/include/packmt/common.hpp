#pragma once

// Shared plumbing: error types, deterministic RNG streams, little-endian
// byte encoding, and CRC32 checksums. Everything here must behave
// identically across platforms so that runs and checkpoints are
// byte-reproducible.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace packmt {

// A precondition or internal invariant was violated by the caller.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Experiment configuration is malformed (unknown key, bad range, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// No free parameters left to adapt another pair.
struct CapacityError : std::runtime_error {
    explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-level failure: truncated or corrupted checkpoint, missing artifact.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// One named deterministic random stream. All distribution draws are
// hand-rolled on top of mt19937_64 because the std <random> distributions
// are implementation-defined and would break cross-platform determinism.
class Stream {
public:
    Stream(std::uint64_t global_seed, std::string_view name)
        : gen_(splitmix64(global_seed ^ fnv1a64(name))) {}

    explicit Stream(std::uint64_t raw_seed) : gen_(raw_seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractViolation("rng::Stream::below: n must be > 0");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    // Uniform double in [0, 1) with 53 random bits.
    double real01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Box-Muller with cached spare draw.
    double normal(double mean, double stddev) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = real01();
        double u2 = real01();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives the stream for a named component, e.g. stream(seed, "corpus.pair.3").
inline Stream stream(std::uint64_t global_seed, std::string_view name) {
    return Stream(global_seed, name);
}

}  // namespace rng

namespace io {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
    put_u32le(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
    put_u32le(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32le(out, bits);
}

// Bounds-checked readers over a byte buffer.
class Reader {
public:
    Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32le() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + static_cast<std::size_t>(i)]);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64le() {
        const std::uint64_t lo = u32le();
        const std::uint64_t hi = u32le();
        return lo | (hi << 32);
    }

    float f32le() {
        const std::uint32_t bits = u32le();
        float f;
        std::memcpy(&f, &bits, sizeof(f));
        return f;
    }

    void bytes(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    std::string_view view(std::size_t n) {
        need(n);
        std::string_view v(data_ + pos_, n);
        pos_ += n;
        return v;
    }

    std::size_t remaining() const { return size_ - pos_; }
    std::size_t position() const { return pos_; }

    void seek(std::size_t pos) {
        if (pos > size_) throw IoError("read past end of buffer");
        pos_ = pos;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw IoError("truncated input: wanted " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
    }

    const char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32(const void* data, std::size_t size, std::uint32_t seed = 0) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320U ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t c = seed ^ 0xffffffffU;
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < size; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffU;
}

}  // namespace io

}  // namespace packmt
