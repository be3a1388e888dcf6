#pragma once

// Hypergraph attention: nodes score their hyperedges, hyperedges gather
// node messages, nodes gather hyperedge messages back. The two aggregation
// ops are fused (forward + custom backward) because their access pattern is
// the ragged incidence structure, which none of the dense core ops express.

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "vhgnn/hypergraph.hpp"
#include "vhgnn/run_context.hpp"
#include "vhgnn/tensor.hpp"

namespace vhgnn {

/// Node-to-hyperedge attention aggregation. For hyperedge p with members
/// N_p, the attention over members is softmax of their scalar scores, and
/// the hyperedge output row is the attention-weighted sum of member rows of
/// `m`. Scores enter raw; the caller applies any activation beforehand.
template <class S>
Tensor<S> edge_attention_aggregate(const Tensor<S>& m, const Tensor<S>& scores,
                                   const VisualHypergraph& g, AttentionSink* sink = nullptr) {
    const std::size_t n = g.num_nodes(), e_count = g.num_edges();
    if (m.rank() != 2 || m.dim(0) != n) {
        throw DimensionError("edge_attention_aggregate: features " + shape_str(m.shape()) +
                             " do not match " + std::to_string(n) + " nodes");
    }
    if (scores.size() != n) {
        throw DimensionError("edge_attention_aggregate: " + std::to_string(scores.size()) +
                             " scores for " + std::to_string(n) + " nodes");
    }
    const std::size_t d = m.dim(1);
    auto mv = m.values();
    auto sv = scores.values();

    auto alphas = std::make_shared<std::vector<std::vector<S>>>(e_count);
    std::vector<S> out(e_count * d, S(0));
    for (std::size_t e = 0; e < e_count; ++e) {
        const auto& mem = g.members(e);
        auto& alpha = (*alphas)[e];
        alpha.resize(mem.size());
        S mx = sv[mem[0]];
        for (std::size_t j = 1; j < mem.size(); ++j) mx = std::max(mx, sv[mem[j]]);
        S denom = S(0);
        for (std::size_t j = 0; j < mem.size(); ++j) {
            alpha[j] = std::exp(sv[mem[j]] - mx);
            denom += alpha[j];
        }
        for (std::size_t j = 0; j < mem.size(); ++j) {
            alpha[j] /= denom;
            const S* row = mv.data() + mem[j] * d;
            S* dst = out.data() + e * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += alpha[j] * row[c];
        }
        if (sink) sink->add(alpha.begin(), alpha.end());
    }

    Tensor<S> result({e_count, d}, std::move(out));
    if (auto rec = detail::begin_record(result, {&m, &scores})) {
        auto mdata = m.storage();
        auto inc = std::make_shared<VisualHypergraph>(g);
        const int im = rec.ids[0], is = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto gout = tp.grad_buffer(io);
            const auto& mvls = *mdata;
            for (std::size_t e = 0; e < e_count; ++e) {
                const auto& mem = inc->members(e);
                const auto& alpha = (*alphas)[e];
                const S* ge = gout.data() + e * d;
                if (im >= 0) {
                    auto gm = tp.grad_buffer(im);
                    for (std::size_t j = 0; j < mem.size(); ++j) {
                        S* dst = gm.data() + mem[j] * d;
                        for (std::size_t c = 0; c < d; ++c) dst[c] += alpha[j] * ge[c];
                    }
                }
                if (is >= 0) {
                    auto gs = tp.grad_buffer(is);
                    // t_j = <dL/dout_e, m_j>; ds = alpha * (t - <alpha, t>)
                    std::vector<S> t(mem.size());
                    S avg = S(0);
                    for (std::size_t j = 0; j < mem.size(); ++j) {
                        const S* row = mvls.data() + mem[j] * d;
                        S dot = S(0);
                        for (std::size_t c = 0; c < d; ++c) dot += ge[c] * row[c];
                        t[j] = dot;
                        avg += alpha[j] * dot;
                    }
                    for (std::size_t j = 0; j < mem.size(); ++j)
                        gs[mem[j]] += alpha[j] * (t[j] - avg);
                }
            }
        });
    }
    return result;
}

/// Hyperedge-to-node attention aggregation. Node i attends over its incident
/// hyperedges with compatibility relu(node_score_i + edge_score_p), softmaxed
/// across those edges, and gathers hyperedge message rows.
template <class S>
Tensor<S> inter_attention_aggregate(const Tensor<S>& msgs, const Tensor<S>& node_score,
                                    const Tensor<S>& edge_score, const VisualHypergraph& g,
                                    AttentionSink* sink = nullptr) {
    const std::size_t n = g.num_nodes(), e_count = g.num_edges();
    if (msgs.rank() != 2 || msgs.dim(0) != e_count) {
        throw DimensionError("inter_attention_aggregate: messages " + shape_str(msgs.shape()) +
                             " do not match " + std::to_string(e_count) + " hyperedges");
    }
    if (node_score.size() != n || edge_score.size() != e_count) {
        throw DimensionError("inter_attention_aggregate: score lengths " +
                             std::to_string(node_score.size()) + "/" +
                             std::to_string(edge_score.size()) + " do not match graph " +
                             std::to_string(n) + "/" + std::to_string(e_count));
    }
    const std::size_t d = msgs.dim(1);
    auto msv = msgs.values();
    auto av = node_score.values();
    auto bv = edge_score.values();

    auto betas = std::make_shared<std::vector<std::vector<S>>>(n);
    auto gates = std::make_shared<std::vector<std::vector<std::uint8_t>>>(n);
    std::vector<S> out(n * d, S(0));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& edges = g.edges_of(i);
        if (edges.empty()) {
            throw DimensionError("node " + std::to_string(i) + " belongs to no hyperedge");
        }
        auto& beta = (*betas)[i];
        auto& gate = (*gates)[i];
        beta.resize(edges.size());
        gate.resize(edges.size());
        S mx = std::numeric_limits<S>::lowest();
        for (std::size_t j = 0; j < edges.size(); ++j) {
            const S pre = av[i] + bv[edges[j]];
            gate[j] = pre > S(0) ? 1 : 0;
            beta[j] = pre > S(0) ? pre : S(0); // phi = relu(pre)
            mx = std::max(mx, beta[j]);
        }
        S denom = S(0);
        for (std::size_t j = 0; j < edges.size(); ++j) {
            beta[j] = std::exp(beta[j] - mx);
            denom += beta[j];
        }
        for (std::size_t j = 0; j < edges.size(); ++j) {
            beta[j] /= denom;
            const S* row = msv.data() + edges[j] * d;
            S* dst = out.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += beta[j] * row[c];
        }
        if (sink) sink->add(beta.begin(), beta.end());
    }

    Tensor<S> result({n, d}, std::move(out));
    if (auto rec = detail::begin_record(result, {&msgs, &node_score, &edge_score})) {
        auto msgdata = msgs.storage();
        auto inc = std::make_shared<VisualHypergraph>(g);
        const int imsg = rec.ids[0], ia = rec.ids[1], ib = rec.ids[2], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto gout = tp.grad_buffer(io);
            const auto& msgv = *msgdata;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& edges = inc->edges_of(i);
                const auto& beta = (*betas)[i];
                const auto& gate = (*gates)[i];
                const S* gi = gout.data() + i * d;
                if (imsg >= 0) {
                    auto gm = tp.grad_buffer(imsg);
                    for (std::size_t j = 0; j < edges.size(); ++j) {
                        S* dst = gm.data() + edges[j] * d;
                        for (std::size_t c = 0; c < d; ++c) dst[c] += beta[j] * gi[c];
                    }
                }
                if (ia >= 0 || ib >= 0) {
                    std::vector<S> t(edges.size());
                    S avg = S(0);
                    for (std::size_t j = 0; j < edges.size(); ++j) {
                        const S* row = msgv.data() + edges[j] * d;
                        S dot = S(0);
                        for (std::size_t c = 0; c < d; ++c) dot += gi[c] * row[c];
                        t[j] = dot;
                        avg += beta[j] * dot;
                    }
                    for (std::size_t j = 0; j < edges.size(); ++j) {
                        const S dphi = beta[j] * (t[j] - avg);
                        const S dpre = gate[j] ? dphi : S(0);
                        if (ia >= 0) tp.grad_buffer(ia)[i] += dpre;
                        if (ib >= 0) tp.grad_buffer(ib)[edges[j]] += dpre;
                    }
                }
            }
        });
    }
    return result;
}

/// One attention block: shared projection for scoring and self term (w0),
/// hyperedge message projection (w1), compatibility projection (w2) and the
/// two compatibility read-out vectors stacked as rows of w3 (row 0 reads the
/// node side, row 1 the hyperedge side).
template <class S>
struct HgatBlockParams {
    Tensor<S> w0; // d x d
    Tensor<S> w1; // d x d
    Tensor<S> w2; // d x d
    Tensor<S> w3; // 2 x d
};

/// One HgAT layer: hyperedge features are the sum over blocks of
/// sigmoid(attention-aggregated node projections); node outputs are the sum
/// over blocks of relu(self projection + attention-aggregated messages).
template <class S>
Tensor<S> hgat_layer(const Tensor<S>& x, const std::vector<HgatBlockParams<S>>& blocks,
                     const VisualHypergraph& g, AttentionSink* sink = nullptr) {
    if (blocks.empty()) throw ConfigError("hgat_layer needs at least one attention block");
    const std::size_t z_count = blocks.size();

    std::vector<Tensor<S>> m(z_count);
    Tensor<S> hedge;
    for (std::size_t z = 0; z < z_count; ++z) {
        m[z] = matmul(x, blocks[z].w0);
        Tensor<S> score = sum_reduce(relu(m[z]), 1); // per-node scalar
        Tensor<S> gathered = edge_attention_aggregate(m[z], score, g, sink);
        Tensor<S> sig = sigmoid(gathered);
        hedge = z == 0 ? sig : add(hedge, sig);
    }

    Tensor<S> out;
    for (std::size_t z = 0; z < z_count; ++z) {
        Tensor<S> msgs = matmul(hedge, blocks[z].w1);
        Tensor<S> u = transpose(take_rows(blocks[z].w3, 0, 1)); // d x 1
        Tensor<S> w = transpose(take_rows(blocks[z].w3, 1, 1));
        Tensor<S> a = matmul(matmul(x, blocks[z].w2), u);     // n x 1
        Tensor<S> b = matmul(matmul(hedge, blocks[z].w2), w); // E x 1
        Tensor<S> inter = inter_attention_aggregate(msgs, a, b, g, sink);
        Tensor<S> node_z = relu(add(m[z], inter));
        out = z == 0 ? node_z : add(out, node_z);
    }
    return out;
}

template <class S>
struct HgatNorm {
    Tensor<S> gain;
    Tensor<S> bias;
    RunningStats<S> stats;
};

template <class S>
struct HgatParams {
    std::vector<std::vector<HgatBlockParams<S>>> layers; // L x Z
    std::vector<HgatNorm<S>> norms;                      // L - 1 boundary norms
    Tensor<S> proj;                                      // (d*L) x d
};

/// Full stack. Layer outputs feed forward through batch-norm + dropout at
/// the boundaries; the raw (pre-norm) outputs of every layer concatenate
/// along features and project back to width d.
template <class S>
Tensor<S> hgat_stack(const Tensor<S>& x0, HgatParams<S>& p, const VisualHypergraph& g,
                     double dropout_rate, const RunContext& ctx) {
    const std::size_t l_count = p.layers.size();
    if (l_count == 0) throw ConfigError("hgat_stack needs at least one layer");
    if (p.norms.size() + 1 != l_count) {
        throw ConfigError("hgat_stack: " + std::to_string(p.norms.size()) + " boundary norms for " +
                          std::to_string(l_count) + " layers");
    }

    std::vector<Tensor<S>> raw;
    raw.reserve(l_count);
    Tensor<S> cur = x0;
    for (std::size_t l = 0; l < l_count; ++l) {
        Tensor<S> h = hgat_layer(cur, p.layers[l], g, ctx.sink);
        raw.push_back(h);
        if (l + 1 < l_count) {
            Tensor<S> t =
                batch_norm(h, p.norms[l].gain, p.norms[l].bias, p.norms[l].stats, ctx.training);
            cur = dropout(t, dropout_rate, ctx.training, DropoutKey{ctx.seed, ctx.epoch, l + 1});
        }
    }
    Tensor<S> cat = raw.size() == 1 ? raw[0] : concat(raw, 1);
    return matmul(cat, p.proj);
}

} // namespace vhgnn
