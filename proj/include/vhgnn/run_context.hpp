#pragma once

#include <cstdint>
#include <vector>

namespace vhgnn {

/// Collects every attention distribution produced during a forward pass,
/// one row per softmax (hyperedge rows, node rows, self-attention rows, in
/// execution order). Each row must sum to one.
struct AttentionSink {
    std::vector<std::vector<double>> rows;

    template <class It>
    void add(It begin, It end) {
        rows.emplace_back();
        auto& r = rows.back();
        for (It it = begin; it != end; ++it) r.push_back(static_cast<double>(*it));
    }
};

/// Per-forward-pass switches threaded through the layers.
struct RunContext {
    bool training = false;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    AttentionSink* sink = nullptr;
};

} // namespace vhgnn
