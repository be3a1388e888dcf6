#pragma once

// Full finite-difference surface: core ops, the fused ragged attention ops
// with their hand-written backwards, and three end-to-end toy models that
// cover every architectural path (both stages, virtual node, cls readout,
// both metrics, both readout pools, dropout and batch-norm in training mode).

#include <cstdint>
#include <vector>

#include "vhgnn/gradcheck.hpp"
#include "vhgnn/hgat.hpp"
#include "vhgnn/hgt.hpp"
#include "vhgnn/model.hpp"

namespace vhgnn {

namespace gradcheck_detail {

inline VisualHypergraph suite_graph(std::mt19937_64& rng, std::size_t n, std::size_t k) {
    Tensor<double> pts = random_tensor(rng, {n, 2}, -2.0, 2.0);
    return build_visual_hypergraph_from_features<double>(pts.values(), n, 2, Metric::kEuclidean, k);
}

inline std::vector<HgatBlockParams<double>> suite_blocks(std::mt19937_64& rng, std::size_t z,
                                                         std::size_t d) {
    std::vector<HgatBlockParams<double>> blocks;
    for (std::size_t i = 0; i < z; ++i) {
        blocks.push_back({random_tensor(rng, {d, d}), random_tensor(rng, {d, d}),
                          random_tensor(rng, {d, d}), random_tensor_off_kink(rng, {2, d})});
    }
    return blocks;
}

inline HgtLayerParams<double> suite_hgt_layer(std::mt19937_64& rng, std::size_t d,
                                              std::size_t heads) {
    HgtLayerParams<double> lp;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
        lp.heads.push_back({random_tensor(rng, {d, dh}), random_tensor(rng, {d, dh}),
                            random_tensor(rng, {d, dh})});
    }
    lp.wo = random_tensor(rng, {d, d});
    lp.ln1_gain = random_tensor(rng, {d}, 0.5, 1.5);
    lp.ln1_bias = random_tensor(rng, {d});
    lp.ln2_gain = random_tensor(rng, {d}, 0.5, 1.5);
    lp.ln2_bias = random_tensor(rng, {d});
    lp.mlp_w1 = random_tensor(rng, {d, 4 * d});
    lp.mlp_b1 = random_tensor(rng, {4 * d});
    lp.mlp_w2 = random_tensor(rng, {4 * d, d});
    lp.mlp_b2 = random_tensor(rng, {d});
    return lp;
}

} // namespace gradcheck_detail

/// The fused attention primitives and the layer stacks built from them.
inline std::vector<GradCheckRow> fused_gradcheck_rows(std::uint64_t seed, double tol = 1e-4) {
    using gradcheck_detail::random_tensor;
    using gradcheck_detail::suite_blocks;
    using gradcheck_detail::suite_graph;
    using gradcheck_detail::suite_hgt_layer;
    using T = Tensor<double>;

    std::mt19937_64 rng(seed);
    GradChecker checker(tol);
    std::vector<GradCheckRow> rows;

    const std::size_t n = 7, d = 3;
    VisualHypergraph g = suite_graph(rng, n, 2);

    {
        T m = random_tensor(rng, {n, d});
        T s = random_tensor(rng, {n}, -2.0, 2.0);
        T w = random_tensor(rng, {n, d});
        rows.push_back(checker.check("edge_attention_aggregate", {&m, &s}, [&] {
            return sum_reduce(mul(edge_attention_aggregate(m, s, g), w));
        }));
    }
    {
        // Grid-offset scores keep relu(a+b) clear of its kink under the
        // finite-difference probe.
        T msgs = random_tensor(rng, {n, d});
        std::vector<double> av(n), bv(n);
        for (std::size_t i = 0; i < n; ++i) {
            av[i] = 0.1 * static_cast<double>(static_cast<int>(rng() % 13) - 6) + 0.03;
            bv[i] = 0.1 * static_cast<double>(static_cast<int>(rng() % 13) - 6) + 0.01;
        }
        T a({n}, av), b({n}, bv);
        T w = random_tensor(rng, {n, d});
        rows.push_back(checker.check("inter_attention_aggregate", {&msgs, &a, &b}, [&] {
            return sum_reduce(mul(inter_attention_aggregate(msgs, a, b, g), w));
        }));
    }
    {
        T x = random_tensor(rng, {n, d});
        auto blocks = suite_blocks(rng, 2, d);
        T w = random_tensor(rng, {n, d});
        std::vector<Tensor<double>*> params{&x};
        for (auto& blk : blocks) {
            params.push_back(&blk.w0);
            params.push_back(&blk.w1);
            params.push_back(&blk.w2);
            params.push_back(&blk.w3);
        }
        rows.push_back(checker.check("hgat_layer", params, [&] {
            return sum_reduce(mul(hgat_layer(x, blocks, g), w));
        }));
    }
    {
        T x = random_tensor(rng, {n, d});
        HgatParams<double> stack;
        stack.layers.push_back(suite_blocks(rng, 2, d));
        stack.layers.push_back(suite_blocks(rng, 2, d));
        stack.norms.push_back({random_tensor(rng, {d}, 0.5, 1.5), random_tensor(rng, {d}),
                               RunningStats<double>{T({d}, 0.0), T({d}, 1.0)}});
        stack.proj = random_tensor(rng, {2 * d, d});
        T w = random_tensor(rng, {n, d});
        std::vector<Tensor<double>*> params{&x, &stack.proj, &stack.norms[0].gain,
                                            &stack.norms[0].bias};
        for (auto& layer : stack.layers)
            for (auto& blk : layer) {
                params.push_back(&blk.w0);
                params.push_back(&blk.w1);
                params.push_back(&blk.w2);
                params.push_back(&blk.w3);
            }
        RunContext ctx;
        ctx.training = true;
        ctx.seed = 5;
        rows.push_back(checker.check("hgat_stack", params, [&] {
            return sum_reduce(mul(hgat_stack(x, stack, g, 0.2, ctx), w));
        }));
    }
    {
        const std::size_t dt = 4, heads = 2, toks = 5;
        T x = random_tensor(rng, {toks, dt});
        auto lp = suite_hgt_layer(rng, dt, heads);
        T wo_probe = random_tensor(rng, {toks, dt});
        std::vector<Tensor<double>*> params{&x, &lp.wo};
        for (auto& h : lp.heads) {
            params.push_back(&h.wq);
            params.push_back(&h.wk);
            params.push_back(&h.wv);
        }
        rows.push_back(checker.check("multi_head_self_attention", params, [&] {
            return sum_reduce(mul(multi_head_self_attention(x, lp.heads, lp.wo), wo_probe));
        }));
    }
    {
        const std::size_t dt = 4, heads = 2, toks = 5;
        T x = random_tensor(rng, {toks, dt});
        T skip = random_tensor(rng, {toks, dt});
        std::vector<HgtLayerParams<double>> layers{suite_hgt_layer(rng, dt, heads),
                                                   suite_hgt_layer(rng, dt, heads)};
        T w = random_tensor(rng, {toks, dt});
        std::vector<Tensor<double>*> params{&x, &skip};
        for (auto& lp : layers) {
            params.push_back(&lp.wo);
            params.push_back(&lp.ln1_gain);
            params.push_back(&lp.ln1_bias);
            params.push_back(&lp.ln2_gain);
            params.push_back(&lp.ln2_bias);
            params.push_back(&lp.mlp_w1);
            params.push_back(&lp.mlp_b1);
            params.push_back(&lp.mlp_w2);
            params.push_back(&lp.mlp_b2);
            for (auto& h : lp.heads) {
                params.push_back(&h.wq);
                params.push_back(&h.wk);
                params.push_back(&h.wv);
            }
        }
        rows.push_back(checker.check("hgt_stack", params, [&] {
            return sum_reduce(mul(hgt_stack(x, skip, layers), w));
        }));
    }
    return rows;
}

/// End-to-end model checks on 2 x 2 patch grids. Each row differentiates the
/// cross-entropy of one forward pass with respect to every trainable
/// parameter and the input features.
inline std::vector<GradCheckRow> model_gradcheck_rows(std::uint64_t seed, double tol = 1e-4) {
    std::vector<GradCheckRow> rows;
    GradChecker checker(tol);

    auto toy = [] {
        ModelConfig c;
        c.image_size = 4;
        c.patch = 2; // 4 patches of 12 features
        c.dim = 8;
        c.k = 1;
        c.z_blocks = 2;
        c.hgat_layers = 2;
        c.hgt_layers = 1;
        c.heads = 2;
        c.num_classes = 3;
        c.dropout = 0.1;
        return c;
    };

    auto run = [&](const std::string& name, const ModelConfig& cfg, bool training,
                   std::uint64_t case_seed) {
        std::mt19937_64 rng(case_seed);
        auto params = init_parameters<double>(cfg, case_seed);
        // Zero-initialized compatibility read-outs would pin the inter-edge
        // attention to its kink; give them off-kink values instead.
        for (auto& e : params.entries()) {
            if (e.name.find(".w3") != std::string::npos) {
                auto fresh = gradcheck_detail::random_tensor_off_kink(rng, e.tensor.shape());
                std::copy(fresh.values().begin(), fresh.values().end(),
                          e.tensor.mutable_values().begin());
            }
        }
        Tensor<double> feats =
            gradcheck_detail::random_tensor(rng, {cfg.num_patches(), cfg.patch_dim()});
        RunContext ctx;
        ctx.training = training;
        ctx.seed = 11;
        ctx.epoch = 1;
        std::vector<Tensor<double>*> targets{&feats};
        for (auto& e : params.entries())
            if (e.trainable) targets.push_back(&e.tensor);
        rows.push_back(checker.check(name, targets, [&] {
            return cross_entropy(forward_features(cfg, params, feats, ctx), std::vector<int>{1});
        }));
    };

    {
        ModelConfig cfg = toy();
        run("model_mean_readout_train", cfg, true, seed);
    }
    {
        ModelConfig cfg = toy();
        cfg.metric = Metric::kCosine;
        cfg.virtual_node = true;
        cfg.readout = Readout::kCls;
        cfg.hgat_layers = 1;
        run("model_virtual_cls_eval", cfg, false, seed + 1);
    }
    {
        ModelConfig cfg = toy();
        cfg.disable_hgat = true;
        cfg.hgt_layers = 2;
        cfg.readout = Readout::kSum;
        run("model_attention_only_sum", cfg, false, seed + 2);
    }
    return rows;
}

inline std::vector<GradCheckRow> run_all_gradchecks(std::uint64_t seed, double tol = 1e-4) {
    std::vector<GradCheckRow> rows = op_gradcheck_rows(seed, tol);
    auto fused = fused_gradcheck_rows(seed, tol);
    rows.insert(rows.end(), fused.begin(), fused.end());
    auto model = model_gradcheck_rows(seed, tol);
    rows.insert(rows.end(), model.begin(), model.end());
    return rows;
}

} // namespace vhgnn
