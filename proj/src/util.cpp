// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0

#include "seqsplat/util.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace seqsplat {

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

// --- base64 ---

static const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back(kB64[v & 63]);
        i += 3;
    }
    size_t rem = bytes.size() - i;
    if (rem == 1) {
        uint32_t v = bytes[i] << 16;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back('=');
        out.push_back('=');
    } else if (rem == 2) {
        uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(kB64[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    uint32_t buf = 0;
    int bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r')
            continue;
        int v = val(c);
        if (v < 0)
            throw std::runtime_error("base64: invalid character");
        buf = (buf << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((buf >> bits) & 0xff));
        }
    }
    return out;
}

// --- little-endian binary io ---

namespace {
template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is)
        throw std::runtime_error("binary read: unexpected end of stream");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}
}  // namespace

void write_u16(std::ostream& os, uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, uint64_t v) { write_le(os, v); }
void write_f32(std::ostream& os, float v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }
uint16_t read_u16(std::istream& is) { return read_le<uint16_t>(is); }
uint32_t read_u32(std::istream& is) { return read_le<uint32_t>(is); }
uint64_t read_u64(std::istream& is) { return read_le<uint64_t>(is); }
float read_f32(std::istream& is) { return read_le<float>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }

// --- files ---

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw std::runtime_error("cannot write file: " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f)
            throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

uint64_t hash_file(const std::filesystem::path& path, uint64_t h) {
    std::string bytes = read_text_file(path);
    return fnv1a(bytes.data(), bytes.size(), h);
}

// --- parallelism ---

int worker_threads() {
    if (const char* env = std::getenv("SEQSPLAT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1)
            return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    int workers = worker_threads();
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    size_t nthreads = std::min<size_t>(static_cast<size_t>(workers), n);
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    std::atomic<size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    for (size_t t = 0; t < nthreads; ++t) {
        threads.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err)
                        err = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : threads)
        th.join();
    if (err)
        std::rethrow_exception(err);
}

}  // namespace seqsplat
