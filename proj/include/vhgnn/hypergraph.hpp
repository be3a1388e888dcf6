#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vhgnn/errors.hpp"

namespace vhgnn {

enum class Metric { kEuclidean, kCosine };

inline const char* metric_name(Metric m) {
    return m == Metric::kEuclidean ? "euclidean" : "cosine";
}

/// Sparse incidence of a hypergraph with one hyperedge per anchor node.
/// `members[e]` lists the nodes of hyperedge e ascending; `edges_of[v]`
/// lists the hyperedges containing node v ascending. `mask` is the dense
/// node x edge view kept for O(1) membership checks.
struct Incidence {
    std::size_t num_nodes = 0;
    std::size_t num_edges = 0;
    std::vector<std::uint8_t> mask; // num_nodes * num_edges
    std::vector<std::vector<std::size_t>> members;
    std::vector<std::vector<std::size_t>> edges_of;

    bool contains(std::size_t node, std::size_t edge) const {
        return mask[node * num_edges + edge] != 0;
    }
};

/// Immutable per-sample topology. Cheap to copy (shared structure).
class VisualHypergraph {
public:
    VisualHypergraph() = default;
    VisualHypergraph(std::size_t k, bool has_virtual, std::shared_ptr<const Incidence> inc)
        : k_(k), has_virtual_(has_virtual), inc_(std::move(inc)) {}

    std::size_t num_nodes() const { return inc_ ? inc_->num_nodes : 0; }
    std::size_t num_edges() const { return inc_ ? inc_->num_edges : 0; }
    std::size_t k() const { return k_; }
    bool has_virtual_node() const { return has_virtual_; }
    const Incidence& incidence() const {
        if (!inc_) throw ConfigError("hypergraph used before construction");
        return *inc_;
    }
    const std::vector<std::size_t>& members(std::size_t edge) const {
        return incidence().members.at(edge);
    }
    const std::vector<std::size_t>& edges_of(std::size_t node) const {
        return incidence().edges_of.at(node);
    }

private:
    std::size_t k_ = 0;
    bool has_virtual_ = false;
    std::shared_ptr<const Incidence> inc_;
};

Incidence incidence_from_members(std::size_t num_nodes,
                                 std::vector<std::vector<std::size_t>> members);

/// Appends one node that belongs to every hyperedge. The column count is
/// unchanged: the virtual node anchors no hyperedge of its own.
VisualHypergraph add_virtual_hypernode(const VisualHypergraph& g);

/// Pairwise distance matrix (n x n, row-major) between the rows of an
/// n x d feature matrix. Cosine mode measures 1 - cosine similarity, with
/// zero vectors treated as maximally distant from everything but themselves.
template <class S>
std::vector<S> pairwise_distances(std::span<const S> features, std::size_t n, std::size_t d,
                                  Metric metric) {
    if (features.size() != n * d) {
        throw DimensionError("pairwise_distances: buffer holds " +
                             std::to_string(features.size()) + " values, expected " +
                             std::to_string(n * d));
    }
    std::vector<S> dist(n * n, S(0));
    if (metric == Metric::kEuclidean) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                S acc = S(0);
                const S* a = features.data() + i * d;
                const S* b = features.data() + j * d;
                for (std::size_t c = 0; c < d; ++c) {
                    const S diff = a[c] - b[c];
                    acc += diff * diff;
                }
                const S v = std::sqrt(acc);
                dist[i * n + j] = v;
                dist[j * n + i] = v;
            }
        }
        return dist;
    }

    std::vector<S> norms(n, S(0));
    for (std::size_t i = 0; i < n; ++i) {
        const S* a = features.data() + i * d;
        S acc = S(0);
        for (std::size_t c = 0; c < d; ++c) acc += a[c] * a[c];
        norms[i] = std::sqrt(acc);
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            S v;
            if (norms[i] == S(0) || norms[j] == S(0)) {
                v = S(2); // maximal 1 - cos distance
            } else {
                const S* a = features.data() + i * d;
                const S* b = features.data() + j * d;
                S dot = S(0);
                for (std::size_t c = 0; c < d; ++c) dot += a[c] * b[c];
                v = S(1) - dot / (norms[i] * norms[j]);
            }
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    return dist;
}

/// One hyperedge per node: the anchor plus its k nearest neighbours under
/// the given distance matrix, ties resolved toward the smaller node index.
/// k must be < n; with clamp_k it is reduced (once, with a warning) instead
/// of rejected.
template <class S>
VisualHypergraph build_visual_hypergraph(const std::vector<S>& dist, std::size_t n,
                                         std::size_t k, bool clamp_k = false) {
    if (n == 0) throw DimensionError("hypergraph construction needs at least one node");
    if (dist.size() != n * n) {
        throw DimensionError("distance matrix size " + std::to_string(dist.size()) +
                             " does not match n=" + std::to_string(n));
    }
    if (k == 0) throw ConfigError("hypergraph k must be >= 1");
    if (k >= n) {
        if (!clamp_k) {
            throw ConfigError("hypergraph k=" + std::to_string(k) + " must be smaller than n=" +
                              std::to_string(n) + " (pass clamp_k to reduce it automatically)");
        }
        std::cerr << "warning: clamping hypergraph k from " << k << " to " << (n - 1)
                  << " for n=" << n << " nodes\n";
        k = n - 1;
    }

    std::vector<std::vector<std::size_t>> members(n);
    std::vector<std::pair<S, std::size_t>> order;
    order.reserve(n - 1);
    for (std::size_t p = 0; p < n; ++p) {
        order.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i == p) continue;
            order.emplace_back(dist[p * n + i], i);
        }
        std::sort(order.begin(), order.end()); // pair ordering breaks ties by index
        members[p].push_back(p);
        for (std::size_t r = 0; r < k; ++r) members[p].push_back(order[r].second);
        std::sort(members[p].begin(), members[p].end());
    }
    auto inc = std::make_shared<Incidence>(incidence_from_members(n, std::move(members)));
    return VisualHypergraph(k, false, std::move(inc));
}

template <class S>
VisualHypergraph build_visual_hypergraph_from_features(std::span<const S> features,
                                                       std::size_t n, std::size_t d, Metric metric,
                                                       std::size_t k, bool clamp_k = false) {
    return build_visual_hypergraph(pairwise_distances(features, n, d, metric), n, k, clamp_k);
}

} // namespace vhgnn
