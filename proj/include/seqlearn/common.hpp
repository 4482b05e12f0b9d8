#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seqlearn {

// All randomness in the project flows from a single master seed through
// derive_seed chains. Every stochastic site owns a tagged stream, so outputs
// are reproducible regardless of execution order, parallelism, or resume.

uint64_t splitmix64(uint64_t& state);

uint64_t derive_seed(uint64_t base, std::string_view tag);
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a);
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a, uint64_t b);

// mt19937_64 is bit-specified by the standard; the draw helpers below avoid
// std::*_distribution, whose outputs are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Unbiased integer in [0, n), rejection sampled.
    uint64_t below(uint64_t n);

    int uniform_int(int lo, int hi);  // inclusive range

    // 53-bit uniform in [0, 1).
    double real01();

    double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// FNV-1a, used for config hashes and file checksums.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a(std::string_view s);
std::string hex64(uint64_t v);

uint64_t file_checksum(const std::filesystem::path& p);

struct RunError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Little-endian float32 blobs (weight files, image tensors).
void write_f32_le(std::ostream& os, const float* data, size_t n);
void read_f32_le(std::istream& is, float* data, size_t n);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, std::string_view content);

// Runs fn(i) for i in [0, n) on up to n_workers threads. Each index is
// processed exactly once; no ordering guarantees, so fn must write to
// disjoint state.
void parallel_for(size_t n, int n_workers, const std::function<void(size_t)>& fn);

}  // namespace seqlearn
