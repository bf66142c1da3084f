// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace seqsplat {

// --- hashing ---------------------------------------------------------------

inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return fnv1a(&b, sizeof(b), fnv1a(&a, sizeof(a)));
}

std::string hash_hex(uint64_t h);

// --- deterministic RNG streams ---------------------------------------------
//
// One named stream per consumer, seeded from (run seed, stream name) so
// adding a consumer never perturbs the draws of another.
class RngStream {
public:
    RngStream(uint64_t seed, const std::string& name)
        : gen_(hash_combine(seed, fnv1a(name))) {}

    explicit RngStream(uint64_t raw_seed) : gen_(raw_seed) {}

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per call (stateless across calls).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0)
            u1 = 5e-324;
        double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
        return mean + stddev * z;
    }

    // [0, n)
    size_t index(size_t n) { return n == 0 ? 0 : static_cast<size_t>(gen_() % n); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[index(i)]);
    }

private:
    std::mt19937_64 gen_;
};

// --- base64 ------------------------------------------------------------------

std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);

// --- little-endian binary io -------------------------------------------------

void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);

// --- files -------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path);
// write-temp-then-rename so readers never observe partial files
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
uint64_t hash_file(const std::filesystem::path& path, uint64_t h = 0xcbf29ce484222325ull);

// --- parallelism ---------------------------------------------------------------

// SEQSPLAT_THREADS caps worker threads; defaults to hardware concurrency.
int worker_threads();

// Runs fn(i) for i in [0, n). Work is partitioned into contiguous blocks so
// results written to disjoint slots are identical for any thread count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace seqsplat
