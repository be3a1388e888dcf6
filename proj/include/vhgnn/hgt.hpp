#pragma once

// Transformer refinement stage. Each layer re-injects the raw patch
// embedding as a skip into pre-norm multi-head self-attention, then applies
// a pre-norm MLP; both sublayers carry residual connections, so a stack
// with zeroed weights is exactly the identity.

#include <cmath>
#include <vector>

#include "vhgnn/run_context.hpp"
#include "vhgnn/tensor.hpp"

namespace vhgnn {

template <class S>
struct HgtHeadParams {
    Tensor<S> wq; // d x (d/heads)
    Tensor<S> wk;
    Tensor<S> wv;
};

template <class S>
struct HgtLayerParams {
    std::vector<HgtHeadParams<S>> heads;
    Tensor<S> wo;       // d x d
    Tensor<S> ln1_gain; // d
    Tensor<S> ln1_bias;
    Tensor<S> ln2_gain;
    Tensor<S> ln2_bias;
    Tensor<S> mlp_w1; // d x 4d
    Tensor<S> mlp_b1; // 4d
    Tensor<S> mlp_w2; // 4d x d
    Tensor<S> mlp_b2; // d
};

template <class S>
Tensor<S> multi_head_self_attention(const Tensor<S>& x,
                                    const std::vector<HgtHeadParams<S>>& heads,
                                    const Tensor<S>& wo, AttentionSink* sink = nullptr) {
    if (heads.empty()) throw ConfigError("self-attention needs at least one head");
    const std::size_t n = x.dim(0), d = x.dim(1);
    const std::size_t dh = heads[0].wq.dim(1);
    if (dh * heads.size() != d) {
        throw ConfigError("head width " + std::to_string(dh) + " x " +
                          std::to_string(heads.size()) + " heads does not equal model width " +
                          std::to_string(d));
    }

    std::vector<Tensor<S>> outputs;
    outputs.reserve(heads.size());
    const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
    for (const auto& head : heads) {
        Tensor<S> q = matmul(x, head.wq);
        Tensor<S> k = matmul(x, head.wk);
        Tensor<S> v = matmul(x, head.wv);
        Tensor<S> att = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dh), 1);
        if (sink) {
            auto vals = att.values();
            for (std::size_t r = 0; r < n; ++r)
                sink->add(vals.begin() + r * n, vals.begin() + (r + 1) * n);
        }
        outputs.push_back(matmul(att, v));
    }
    Tensor<S> cat = outputs.size() == 1 ? outputs[0] : concat(outputs, 1);
    return matmul(cat, wo);
}

/// One layer: h' = MSA(LN(h + skip)) + h, out = MLP(LN(h')) + h'.
template <class S>
Tensor<S> hgt_layer(const Tensor<S>& h, const Tensor<S>& patch_skip,
                    const HgtLayerParams<S>& p, AttentionSink* sink = nullptr) {
    if (h.shape() != patch_skip.shape()) {
        throw DimensionError("hgt_layer: state " + shape_str(h.shape()) +
                             " and patch skip " + shape_str(patch_skip.shape()) + " differ");
    }
    Tensor<S> pre = layer_norm(add(h, patch_skip), p.ln1_gain, p.ln1_bias);
    Tensor<S> attended = multi_head_self_attention(pre, p.heads, p.wo, sink);
    Tensor<S> h1 = add(attended, h);

    Tensor<S> normed = layer_norm(h1, p.ln2_gain, p.ln2_bias);
    Tensor<S> hidden = gelu(add_rowvec(matmul(normed, p.mlp_w1), p.mlp_b1));
    Tensor<S> mlp = add_rowvec(matmul(hidden, p.mlp_w2), p.mlp_b2);
    return add(mlp, h1);
}

/// Zero layers is the identity.
template <class S>
Tensor<S> hgt_stack(const Tensor<S>& h, const Tensor<S>& patch_skip,
                    const std::vector<HgtLayerParams<S>>& layers,
                    AttentionSink* sink = nullptr) {
    Tensor<S> cur = h;
    for (const auto& layer : layers) cur = hgt_layer(cur, patch_skip, layer, sink);
    return cur;
}

} // namespace vhgnn
