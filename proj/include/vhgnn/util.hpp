#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace vhgnn {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stateless uniform draw in [0,1) keyed by (seed, epoch, layer, element).
inline double counter_uniform(std::uint64_t seed, std::uint64_t epoch,
                              std::uint64_t layer, std::uint64_t element) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ (epoch * 0xa0761d6478bd642fULL));
    k = splitmix64(k ^ (layer * 0xe7037ed1a0b428dbULL));
    k = splitmix64(k ^ (element * 0x8ebc6af09c88c6e3ULL));
    return static_cast<double>(k >> 11) * 0x1.0p-53;
}

/// Worker cap: VHGNN_THREADS if set, otherwise hardware concurrency.
inline unsigned max_threads() {
    static const unsigned cached = [] {
        if (const char* env = std::getenv("VHGNN_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<unsigned>(v);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? hw : 1u;
    }();
    return cached;
}

/// Runs fn(i) for i in [0, n). Contiguous chunks per worker; writes must be
/// disjoint per index so results do not depend on the worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace vhgnn
