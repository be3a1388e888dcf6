#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vhgnn/hgat.hpp"
#include "vhgnn/hgt.hpp"
#include "vhgnn/hypergraph.hpp"
#include "vhgnn/image.hpp"
#include "vhgnn/run_context.hpp"
#include "vhgnn/tensor.hpp"

namespace vhgnn {

enum class Readout { kMean, kSum, kCls, kVirtual };

inline const char* readout_name(Readout r) {
    switch (r) {
        case Readout::kMean: return "mean";
        case Readout::kSum: return "sum";
        case Readout::kCls: return "cls";
        default: return "virtual";
    }
}

inline Readout parse_readout(const std::string& s) {
    if (s == "mean") return Readout::kMean;
    if (s == "sum") return Readout::kSum;
    if (s == "cls") return Readout::kCls;
    if (s == "virtual") return Readout::kVirtual;
    throw ConfigError("unknown readout '" + s + "' (expected mean, sum, cls, or virtual)");
}

inline Metric parse_metric(const std::string& s) {
    if (s == "euclidean") return Metric::kEuclidean;
    if (s == "cosine") return Metric::kCosine;
    throw ConfigError("unknown metric '" + s + "' (expected euclidean or cosine)");
}

struct ModelConfig {
    std::size_t image_size = 256;
    std::size_t patch = 32;
    std::size_t dim = 128;
    std::size_t k = 20;
    std::size_t z_blocks = 4;
    std::size_t hgat_layers = 2;
    std::size_t hgt_layers = 2;
    std::size_t heads = 4;
    std::size_t num_classes = 0;
    double dropout = 0.2;
    Metric metric = Metric::kEuclidean;
    Readout readout = Readout::kMean;
    bool disable_hgat = false;
    bool disable_hgt = false;
    bool virtual_node = false;
    bool clamp_k = false;

    std::size_t grid_side() const { return image_size / patch; }
    std::size_t num_patches() const { return grid_side() * grid_side(); }
    std::size_t patch_dim() const { return patch * patch * 3; }
    std::size_t effective_hgt_layers() const { return disable_hgt ? 0 : hgt_layers; }

    void validate() const {
        if (patch == 0 || image_size == 0) throw ConfigError("image and patch sizes must be positive");
        if (image_size % patch != 0) {
            throw ConfigError("image size " + std::to_string(image_size) +
                              " is not divisible by patch size " + std::to_string(patch));
        }
        if (num_patches() < 2) throw ConfigError("model needs at least 2 patches");
        if (dim == 0) throw ConfigError("model width must be positive");
        if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
        if (dropout < 0.0 || dropout >= 1.0) {
            throw ConfigError("dropout must lie in [0,1), got " + std::to_string(dropout));
        }
        if (k == 0) throw ConfigError("hypergraph k must be >= 1");
        if (k >= num_patches() && !clamp_k) {
            throw ConfigError("hypergraph k=" + std::to_string(k) + " must be below the patch count " +
                              std::to_string(num_patches()) + " (or set clamp_k)");
        }
        if (!disable_hgat) {
            if (hgat_layers == 0) throw ConfigError("hgat_layers must be >= 1 when the stage is enabled");
            if (z_blocks == 0) throw ConfigError("z_blocks must be >= 1");
        }
        if (effective_hgt_layers() > 0) {
            if (heads == 0) throw ConfigError("attention needs at least one head");
            if (dim % heads != 0) {
                throw ConfigError("model width " + std::to_string(dim) +
                                  " is not divisible by " + std::to_string(heads) + " heads");
            }
        }
        if (readout == Readout::kCls && effective_hgt_layers() == 0) {
            throw ConfigError("cls readout requires at least one transformer layer");
        }
        if (readout == Readout::kVirtual && !virtual_node) {
            throw ConfigError("virtual readout requires virtual_node");
        }
    }
};

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"image_size", c.image_size},
                          {"patch", c.patch},
                          {"dim", c.dim},
                          {"k", c.k},
                          {"z_blocks", c.z_blocks},
                          {"hgat_layers", c.hgat_layers},
                          {"hgt_layers", c.hgt_layers},
                          {"heads", c.heads},
                          {"num_classes", c.num_classes},
                          {"dropout", c.dropout},
                          {"metric", metric_name(c.metric)},
                          {"readout", readout_name(c.readout)},
                          {"disable_hgat", c.disable_hgat},
                          {"disable_hgt", c.disable_hgt},
                          {"virtual_node", c.virtual_node},
                          {"clamp_k", c.clamp_k}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.image_size = j.at("image_size").get<std::size_t>();
        c.patch = j.at("patch").get<std::size_t>();
        c.dim = j.at("dim").get<std::size_t>();
        c.k = j.at("k").get<std::size_t>();
        c.z_blocks = j.at("z_blocks").get<std::size_t>();
        c.hgat_layers = j.at("hgat_layers").get<std::size_t>();
        c.hgt_layers = j.at("hgt_layers").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.dropout = j.at("dropout").get<double>();
        c.metric = parse_metric(j.at("metric").get<std::string>());
        c.readout = parse_readout(j.at("readout").get<std::string>());
        c.disable_hgat = j.at("disable_hgat").get<bool>();
        c.disable_hgt = j.at("disable_hgt").get<bool>();
        c.virtual_node = j.at("virtual_node").get<bool>();
        c.clamp_k = j.at("clamp_k").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model config: ") + e.what());
    }
    return c;
}

template <class S>
struct ParamEntry {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
};

/// Ordered, named parameter registry. Order is the checkpoint payload order
/// and the initialization draw order, so it must stay stable.
template <class S>
class ParameterSet {
public:
    void add(std::string name, Tensor<S> t, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        t.set_requires_grad(trainable);
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(t), trainable});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<S>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second].tensor;
    }
    const Tensor<S>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return entries_[it->second].tensor;
    }

    std::vector<ParamEntry<S>>& entries() { return entries_; }
    const std::vector<ParamEntry<S>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t trainable_scalars() const {
        std::size_t total = 0;
        for (const auto& e : entries_)
            if (e.trainable) total += e.tensor.size();
        return total;
    }

    void zero_grad() {
        for (auto& e : entries_)
            if (e.trainable) e.tensor.zero_grad();
    }

    ParameterSet clone() const {
        ParameterSet out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.clone(), e.trainable);
        return out;
    }

private:
    std::vector<ParamEntry<S>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace model_detail {

template <class S>
Tensor<S> glorot(std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out,
                 std::vector<std::size_t> shape) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<S> v(n);
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return Tensor<S>(std::move(shape), std::move(v));
}

template <class S>
Tensor<S> gaussian(std::mt19937_64& rng, double stddev, std::vector<std::size_t> shape) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<S> v(n);
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return Tensor<S>(std::move(shape), std::move(v));
}

} // namespace model_detail

/// Deterministic initialization: matrix weights are Glorot-uniform, the
/// positional table and class token are small Gaussians, compatibility
/// read-outs and all biases start at zero. Draws consume one shared RNG in
/// registration order, so (config, seed) fully determines every value.
template <class S>
ParameterSet<S> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    using model_detail::gaussian;
    using model_detail::glorot;

    std::mt19937_64 rng(seed);
    ParameterSet<S> params;
    const std::size_t d = cfg.dim, n = cfg.num_patches(), pd = cfg.patch_dim();

    params.add("E", glorot<S>(rng, pd, d, {pd, d}));
    params.add("E_pos", gaussian<S>(rng, 0.02, {n, d}));

    if (!cfg.disable_hgat) {
        for (std::size_t l = 0; l < cfg.hgat_layers; ++l) {
            const std::string base = "hgat." + std::to_string(l) + ".";
            for (std::size_t z = 0; z < cfg.z_blocks; ++z) {
                const std::string zb = base + "z" + std::to_string(z) + ".";
                params.add(zb + "w0", glorot<S>(rng, d, d, {d, d}));
                params.add(zb + "w1", glorot<S>(rng, d, d, {d, d}));
                params.add(zb + "w2", glorot<S>(rng, d, d, {d, d}));
                params.add(zb + "w3", Tensor<S>({2, d}, S(0)));
            }
            if (l + 1 < cfg.hgat_layers) {
                params.add(base + "bn.gain", Tensor<S>({d}, S(1)));
                params.add(base + "bn.bias", Tensor<S>({d}, S(0)));
                params.add(base + "bn.running_mean", Tensor<S>({d}, S(0)), false);
                params.add(base + "bn.running_var", Tensor<S>({d}, S(1)), false);
            }
        }
        const std::size_t cat = d * cfg.hgat_layers;
        params.add("hgat.proj", glorot<S>(rng, cat, d, {cat, d}));
    }

    const std::size_t lt = cfg.effective_hgt_layers();
    for (std::size_t l = 0; l < lt; ++l) {
        const std::string base = "hgt." + std::to_string(l) + ".";
        const std::size_t dh = d / cfg.heads;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::string hb = base + "h" + std::to_string(h) + ".";
            params.add(hb + "wq", glorot<S>(rng, d, dh, {d, dh}));
            params.add(hb + "wk", glorot<S>(rng, d, dh, {d, dh}));
            params.add(hb + "wv", glorot<S>(rng, d, dh, {d, dh}));
        }
        params.add(base + "wo", glorot<S>(rng, d, d, {d, d}));
        params.add(base + "ln1.gain", Tensor<S>({d}, S(1)));
        params.add(base + "ln1.bias", Tensor<S>({d}, S(0)));
        params.add(base + "ln2.gain", Tensor<S>({d}, S(1)));
        params.add(base + "ln2.bias", Tensor<S>({d}, S(0)));
        params.add(base + "mlp.w1", glorot<S>(rng, d, 4 * d, {d, 4 * d}));
        params.add(base + "mlp.b1", Tensor<S>({4 * d}, S(0)));
        params.add(base + "mlp.w2", glorot<S>(rng, 4 * d, d, {4 * d, d}));
        params.add(base + "mlp.b2", Tensor<S>({d}, S(0)));
    }

    if (cfg.readout == Readout::kCls) params.add("cls", gaussian<S>(rng, 0.02, {1, d}));
    params.add("head", glorot<S>(rng, d, cfg.num_classes, {d, cfg.num_classes}));
    return params;
}

/// Trainable scalar count implied by a config, kept in closed form so the
/// registry can be cross-checked against it.
inline std::size_t count_parameters(const ModelConfig& cfg) {
    const std::size_t d = cfg.dim, n = cfg.num_patches(), pd = cfg.patch_dim();
    std::size_t total = pd * d + n * d; // embedding + positions
    if (!cfg.disable_hgat) {
        const std::size_t per_block = 3 * d * d + 2 * d;
        total += cfg.hgat_layers * cfg.z_blocks * per_block;
        total += (cfg.hgat_layers - 1) * 2 * d;  // norm gain+bias
        total += (d * cfg.hgat_layers) * d;      // concat projection
    }
    const std::size_t lt = cfg.effective_hgt_layers();
    if (lt > 0) {
        const std::size_t dh = d / cfg.heads;
        const std::size_t per_layer = cfg.heads * 3 * d * dh // qkv
                                      + d * d                // output proj
                                      + 4 * d                // two layer norms
                                      + d * 4 * d + 4 * d    // mlp in
                                      + 4 * d * d + d;       // mlp out
        total += lt * per_layer;
    }
    if (cfg.readout == Readout::kCls) total += d;
    total += d * cfg.num_classes;
    return total;
}

namespace model_detail {

template <class S>
HgatParams<S> hgat_views(const ModelConfig& cfg, ParameterSet<S>& p) {
    HgatParams<S> hp;
    for (std::size_t l = 0; l < cfg.hgat_layers; ++l) {
        const std::string base = "hgat." + std::to_string(l) + ".";
        std::vector<HgatBlockParams<S>> blocks;
        for (std::size_t z = 0; z < cfg.z_blocks; ++z) {
            const std::string zb = base + "z" + std::to_string(z) + ".";
            blocks.push_back({p.get(zb + "w0"), p.get(zb + "w1"), p.get(zb + "w2"),
                              p.get(zb + "w3")});
        }
        hp.layers.push_back(std::move(blocks));
        if (l + 1 < cfg.hgat_layers) {
            hp.norms.push_back({p.get(base + "bn.gain"), p.get(base + "bn.bias"),
                                RunningStats<S>{p.get(base + "bn.running_mean"),
                                                p.get(base + "bn.running_var")}});
        }
    }
    hp.proj = p.get("hgat.proj");
    return hp;
}

template <class S>
std::vector<HgtLayerParams<S>> hgt_views(const ModelConfig& cfg, ParameterSet<S>& p) {
    std::vector<HgtLayerParams<S>> layers;
    for (std::size_t l = 0; l < cfg.effective_hgt_layers(); ++l) {
        const std::string base = "hgt." + std::to_string(l) + ".";
        HgtLayerParams<S> lp;
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::string hb = base + "h" + std::to_string(h) + ".";
            lp.heads.push_back({p.get(hb + "wq"), p.get(hb + "wk"), p.get(hb + "wv")});
        }
        lp.wo = p.get(base + "wo");
        lp.ln1_gain = p.get(base + "ln1.gain");
        lp.ln1_bias = p.get(base + "ln1.bias");
        lp.ln2_gain = p.get(base + "ln2.gain");
        lp.ln2_bias = p.get(base + "ln2.bias");
        lp.mlp_w1 = p.get(base + "mlp.w1");
        lp.mlp_b1 = p.get(base + "mlp.b1");
        lp.mlp_w2 = p.get(base + "mlp.w2");
        lp.mlp_b2 = p.get(base + "mlp.b2");
        layers.push_back(std::move(lp));
    }
    return layers;
}

} // namespace model_detail

/// Hypergraph over the position-aware patch embeddings, exactly as the
/// forward pass builds it.
template <class S>
VisualHypergraph model_structure(const ModelConfig& cfg, const ParameterSet<S>& params,
                                 const Tensor<S>& features) {
    Tensor<S> emb = matmul(features, params.get("E"));
    Tensor<S> pos = add(emb, params.get("E_pos"));
    VisualHypergraph g = build_visual_hypergraph_from_features<S>(
        pos.values(), cfg.num_patches(), cfg.dim, cfg.metric, cfg.k, cfg.clamp_k);
    if (cfg.virtual_node) g = add_virtual_hypernode(g);
    return g;
}

/// End-to-end forward from flattened patch features (n x patch_dim) to
/// logits (1 x num_classes).
template <class S>
Tensor<S> forward_features(const ModelConfig& cfg, ParameterSet<S>& params,
                           const Tensor<S>& features, const RunContext& ctx) {
    const std::size_t n = cfg.num_patches();
    if (features.rank() != 2 || features.dim(0) != n || features.dim(1) != cfg.patch_dim()) {
        throw DimensionError("forward: features " + shape_str(features.shape()) +
                             " do not match expected [" + std::to_string(n) + "," +
                             std::to_string(cfg.patch_dim()) + "]");
    }

    Tensor<S> emb = matmul(features, params.get("E"));
    Tensor<S> x = add(emb, params.get("E_pos"));

    VisualHypergraph g = build_visual_hypergraph_from_features<S>(
        x.values(), n, cfg.dim, cfg.metric, cfg.k, cfg.clamp_k);
    if (cfg.virtual_node) {
        g = add_virtual_hypernode(g);
        x = concat(x, Tensor<S>({1, cfg.dim}, S(0)), 0);
    }

    if (!cfg.disable_hgat) {
        HgatParams<S> hp = model_detail::hgat_views(cfg, params);
        x = hgat_stack(x, hp, g, cfg.dropout, ctx);
    }

    std::size_t cls_row = 0;
    const bool use_cls = cfg.readout == Readout::kCls;
    if (cfg.effective_hgt_layers() > 0) {
        if (use_cls) {
            cls_row = x.dim(0);
            x = concat(x, params.get("cls"), 0);
        }
        Tensor<S> skip = emb;
        if (x.dim(0) > n) skip = concat(skip, Tensor<S>({x.dim(0) - n, cfg.dim}, S(0)), 0);
        auto layers = model_detail::hgt_views(cfg, params);
        x = hgt_stack(x, skip, layers, ctx.sink);
    }

    Tensor<S> pooled;
    switch (cfg.readout) {
        case Readout::kMean:
            pooled = scale(matmul(Tensor<S>({1, n}, S(1)), take_rows(x, 0, n)),
                           S(1) / static_cast<S>(n));
            break;
        case Readout::kSum:
            pooled = matmul(Tensor<S>({1, n}, S(1)), take_rows(x, 0, n));
            break;
        case Readout::kCls:
            pooled = take_rows(x, cls_row, 1);
            break;
        case Readout::kVirtual:
            pooled = take_rows(x, n, 1); // virtual row sits right after the patches
            break;
    }
    return matmul(pooled, params.get("head"));
}

template <class S>
Tensor<S> forward_from_grid(const ModelConfig& cfg, ParameterSet<S>& params,
                            const PatchGrid& grid, const RunContext& ctx) {
    if (grid.num_patches() != cfg.num_patches() || grid.feature_dim() != cfg.patch_dim()) {
        throw DimensionError("forward: patch grid " + std::to_string(grid.num_patches()) + "x" +
                             std::to_string(grid.feature_dim()) + " does not match config " +
                             std::to_string(cfg.num_patches()) + "x" +
                             std::to_string(cfg.patch_dim()));
    }
    std::vector<S> vals(grid.features.begin(), grid.features.end());
    Tensor<S> feats({grid.num_patches(), grid.feature_dim()}, std::move(vals));
    return forward_features(cfg, params, feats, ctx);
}

struct Ranked {
    int cls = -1;
    double prob = 0.0;
};

/// Softmax over 1 x C logits, descending by probability, ties broken toward
/// the smaller class index.
template <class S>
std::vector<Ranked> rank_classes(const Tensor<S>& logits) {
    if (logits.rank() != 2 || logits.dim(0) != 1) {
        throw DimensionError("rank_classes expects 1 x C logits, got " + shape_str(logits.shape()));
    }
    const std::size_t c_count = logits.dim(1);
    auto v = logits.values();
    double mx = static_cast<double>(v[0]);
    for (std::size_t c = 1; c < c_count; ++c) mx = std::max(mx, static_cast<double>(v[c]));
    std::vector<Ranked> out(c_count);
    double denom = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
        out[c] = {static_cast<int>(c), std::exp(static_cast<double>(v[c]) - mx)};
        denom += out[c].prob;
    }
    for (auto& r : out) r.prob /= denom;
    std::stable_sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
        if (a.prob != b.prob) return a.prob > b.prob;
        return a.cls < b.cls;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: 8-byte magic, little-endian u64 JSON header length,
// JSON header (config, class names, precision, tensor directory), then raw
// little-endian tensor payloads in directory order.
// ---------------------------------------------------------------------------

inline constexpr unsigned char kCheckpointMagic[8] = {'V', 'H', 'G', 'N', 'N', 0, 0, 1};

template <class S>
const char* precision_name() {
    if constexpr (std::is_same_v<S, float>) return "f32";
    else return "f64";
}

template <class S>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParameterSet<S>& params,
                     const std::vector<std::string>& class_names) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    if (class_names.size() != cfg.num_classes) {
        throw ConfigError("checkpoint: " + std::to_string(class_names.size()) +
                          " class names for " + std::to_string(cfg.num_classes) + " classes");
    }

    nlohmann::json dir = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& e : params.entries()) {
        dir.push_back({{"name", e.name},
                       {"shape", e.tensor.shape()},
                       {"dtype", precision_name<S>()},
                       {"byte_offset", offset}});
        offset += e.tensor.size() * sizeof(S);
    }
    nlohmann::json header{{"config", config_to_json(cfg)},
                          {"class_names", class_names},
                          {"precision", precision_name<S>()},
                          {"tensors", dir}};
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(reinterpret_cast<const char*>(kCheckpointMagic), 8);
    const std::uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& e : params.entries()) {
        out.write(reinterpret_cast<const char*>(e.tensor.values().data()),
                  static_cast<std::streamsize>(e.tensor.size() * sizeof(S)));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

template <class S>
struct LoadedModel {
    ModelConfig config;
    ParameterSet<S> params;
    std::vector<std::string> class_names;
};

template <class S>
LoadedModel<S> load_checkpoint(const std::string& path) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint reader assumes a little-endian host");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw DataError("not a model checkpoint: " + path);
    }
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    if (16 + hlen > bytes.size()) throw DataError("checkpoint header truncated: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header is not valid JSON (" + path + "): " + e.what());
    }

    LoadedModel<S> loaded;
    try {
        loaded.config = config_from_json(header.at("config"));
        loaded.class_names = header.at("class_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint header incomplete (" + path + "): " + e.what());
    }
    loaded.config.validate();
    if (loaded.class_names.size() != loaded.config.num_classes) {
        throw DataError("checkpoint class names do not match num_classes: " + path);
    }

    // The config dictates the exact tensor set; the file must match it.
    loaded.params = init_parameters<S>(loaded.config, 0);
    const unsigned char* payload = bytes.data() + 16 + hlen;
    const std::size_t payload_size = bytes.size() - 16 - hlen;

    std::unordered_map<std::string, const nlohmann::json*> by_name;
    const auto& dir = header.at("tensors");
    for (const auto& rec : dir) by_name.emplace(rec.at("name").get<std::string>(), &rec);
    if (by_name.size() != loaded.params.size()) {
        throw DataError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, config expects " +
                        std::to_string(loaded.params.size()) + ": " + path);
    }

    for (auto& e : loaded.params.entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            throw DataError("checkpoint is missing tensor '" + e.name + "': " + path);
        }
        const nlohmann::json& rec = *it->second;
        const auto shape = rec.at("shape").get<std::vector<std::size_t>>();
        if (shape != e.tensor.shape()) {
            throw DataError("checkpoint tensor '" + e.name + "' has shape " + shape_str(shape) +
                            ", config expects " + shape_str(e.tensor.shape()) + ": " + path);
        }
        const std::string dtype = rec.at("dtype").get<std::string>();
        const std::size_t elem = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
        if (elem == 0) throw DataError("checkpoint tensor '" + e.name + "' has unknown dtype " + dtype);
        const std::size_t off = rec.at("byte_offset").get<std::size_t>();
        const std::size_t nbytes = e.tensor.size() * elem;
        if (off + nbytes > payload_size) {
            throw DataError("checkpoint payload truncated at tensor '" + e.name + "': " + path);
        }
        auto dst = e.tensor.mutable_values();
        if (elem == sizeof(S) && dtype == precision_name<S>()) {
            std::memcpy(dst.data(), payload + off, nbytes);
        } else if (elem == 4) {
            for (std::size_t i = 0; i < dst.size(); ++i) {
                float v;
                std::memcpy(&v, payload + off + i * 4, 4);
                dst[i] = static_cast<S>(v);
            }
        } else {
            for (std::size_t i = 0; i < dst.size(); ++i) {
                double v;
                std::memcpy(&v, payload + off + i * 8, 8);
                dst[i] = static_cast<S>(v);
            }
        }
    }
    return loaded;
}

} // namespace vhgnn
