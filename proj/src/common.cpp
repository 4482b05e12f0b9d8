#include "seqlearn/common.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace seqlearn {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t base, std::string_view tag) {
    uint64_t s = base ^ fnv1a(tag);
    return splitmix64(s);
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a) {
    uint64_t s = derive_seed(base, tag) ^ (a * 0x9e3779b97f4a7c15ull + 1);
    return splitmix64(s);
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a, uint64_t b) {
    uint64_t s = derive_seed(base, tag, a) ^ (b * 0xd1342543de82ef95ull + 1);
    return splitmix64(s);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return x % n;
}

int Rng::uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
}

double Rng::real01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a(std::string_view s) { return fnv1a(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

uint64_t file_checksum(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw RunError("cannot open file for checksum: " + p.string());
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a(buf, static_cast<size_t>(is.gcount()), h);
    }
    return h;
}

void write_f32_le(std::ostream& os, const float* data, size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

void read_f32_le(std::istream& is, float* data, size_t n) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<size_t>(is.gcount()) != n * sizeof(float))
        throw RunError("short read in float32 blob");
}

std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw RunError("cannot open file: " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& p, std::string_view content) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw RunError("cannot write file: " + p.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void parallel_for(size_t n, int n_workers, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    const int workers = std::max(1, std::min<int>(n_workers, static_cast<int>(n)));
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mu;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!failed.exchange(true)) first_error = e.what();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed) throw RunError("parallel task failed: " + first_error);
}

}  // namespace seqlearn
