#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "vhgnn/model.hpp"

using namespace vhgnn;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 16;
    c.patch = 4; // 16 patches of 48 features
    c.dim = 16;
    c.k = 3;
    c.z_blocks = 2;
    c.hgat_layers = 2;
    c.hgt_layers = 1;
    c.heads = 2;
    c.num_classes = 4;
    c.dropout = 0.2;
    return c;
}

template <class S>
Tensor<S> random_features(const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<S> v(cfg.num_patches() * cfg.patch_dim());
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return Tensor<S>({cfg.num_patches(), cfg.patch_dim()}, std::move(v));
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

// Reassembles a checkpoint file after header surgery, preserving payload.
void rewrite_header(const std::filesystem::path& path, void (*mutate)(nlohmann::json&)) {
    std::ifstream in(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    in.close();
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    nlohmann::json header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
    mutate(header);
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), 8);
    const std::uint64_t nlen = hs.size();
    out.write(reinterpret_cast<const char*>(&nlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(bytes.data() + 16 + hlen),
              static_cast<std::streamsize>(bytes.size() - 16 - hlen));
}

} // namespace

TEST_CASE("config validation rejects bad combinations") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());

    ModelConfig bad = c;
    bad.patch = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.num_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.heads = 3; // 16 % 3 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.disable_hgt = true; // heads no longer matter
    CHECK_NOTHROW(bad.validate());

    bad = c;
    bad.k = 16; // k must stay below the 16 patches
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.clamp_k = true;
    CHECK_NOTHROW(bad.validate());

    bad = c;
    bad.readout = Readout::kCls;
    CHECK_NOTHROW(bad.validate());
    bad.disable_hgt = true;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = c;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config json round trip preserves every field") {
    ModelConfig c = tiny_config();
    c.metric = Metric::kCosine;
    c.readout = Readout::kCls;
    c.virtual_node = true;
    c.clamp_k = true;
    c.dropout = 0.35;
    ModelConfig r = config_from_json(config_to_json(c));
    CHECK(r.image_size == c.image_size);
    CHECK(r.patch == c.patch);
    CHECK(r.dim == c.dim);
    CHECK(r.k == c.k);
    CHECK(r.z_blocks == c.z_blocks);
    CHECK(r.hgat_layers == c.hgat_layers);
    CHECK(r.hgt_layers == c.hgt_layers);
    CHECK(r.heads == c.heads);
    CHECK(r.num_classes == c.num_classes);
    CHECK(r.dropout == doctest::Approx(c.dropout));
    CHECK(r.metric == Metric::kCosine);
    CHECK(r.readout == Readout::kCls);
    CHECK(r.virtual_node);
    CHECK(r.clamp_k);

    nlohmann::json j = config_to_json(c);
    j.erase("heads");
    CHECK_THROWS_AS(config_from_json(j), DataError);
}

TEST_CASE("initialization is seed deterministic and respects layout") {
    ModelConfig c = tiny_config();
    auto a = init_parameters<double>(c, 7);
    auto b = init_parameters<double>(c, 7);
    auto other = init_parameters<double>(c, 8);
    REQUIRE(a.size() == b.size());
    bool any_diff_seed = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& ea = a.entries()[i];
        const auto& eb = b.entries()[i];
        CHECK(ea.name == eb.name);
        REQUIRE(ea.tensor.shape() == eb.tensor.shape());
        auto va = ea.tensor.values(), vb = eb.tensor.values();
        for (std::size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
        auto vo = other.entries()[i].tensor.values();
        for (std::size_t j = 0; j < va.size(); ++j)
            if (va[j] != vo[j]) any_diff_seed = true;
    }
    CHECK(any_diff_seed);

    // Structural expectations on named entries.
    CHECK(a.get("E").shape() == std::vector<std::size_t>{48, 16});
    CHECK(a.get("E_pos").shape() == std::vector<std::size_t>{16, 16});
    CHECK(a.get("hgat.0.z1.w3").shape() == std::vector<std::size_t>{2, 16});
    for (double v : a.get("hgat.0.z1.w3").values()) CHECK(v == 0.0);
    for (double v : a.get("hgat.0.bn.gain").values()) CHECK(v == 1.0);
    for (double v : a.get("hgat.0.bn.running_var").values()) CHECK(v == 1.0);
    CHECK(a.get("hgat.proj").shape() == std::vector<std::size_t>{32, 16});
    CHECK(a.get("hgt.0.h1.wq").shape() == std::vector<std::size_t>{16, 8});
    CHECK(a.get("hgt.0.mlp.w1").shape() == std::vector<std::size_t>{16, 64});
    CHECK(a.get("head").shape() == std::vector<std::size_t>{16, 4});
    CHECK(!a.has("cls"));
    CHECK(a.has("hgat.1.z0.w0"));
    CHECK(!a.has("hgat.1.bn.gain")); // only layer boundaries carry norms
}

TEST_CASE("closed-form parameter count matches the registry") {
    ModelConfig c = tiny_config();
    for (int variant = 0; variant < 5; ++variant) {
        ModelConfig v = c;
        if (variant == 1) v.disable_hgat = true;
        if (variant == 2) v.disable_hgt = true;
        if (variant == 3) v.readout = Readout::kCls;
        if (variant == 4) {
            v.virtual_node = true;
            v.z_blocks = 3;
            v.hgat_layers = 3;
        }
        auto p = init_parameters<float>(v, 1);
        CHECK(count_parameters(v) == p.trainable_scalars());
    }

    // Reference configuration: 64 patches of 3072 features at width 128,
    // two stages of depth 2, 10 classes.
    ModelConfig reference;
    reference.num_classes = 10;
    CHECK(count_parameters(reference) == 1226496u);
    auto p = init_parameters<float>(reference, 1);
    CHECK(p.trainable_scalars() == 1226496u);
}

TEST_CASE("forward produces finite logits at the reference configuration") {
    ModelConfig cfg;
    cfg.num_classes = 10;
    auto params = init_parameters<float>(cfg, 42);
    auto feats = random_features<float>(cfg, 3);
    RunContext ctx;
    Tensor<float> logits = forward_features(cfg, params, feats, ctx);
    REQUIRE(logits.shape() == std::vector<std::size_t>{1, 10});
    for (float v : logits.values()) CHECK(std::isfinite(v));

    VisualHypergraph g = model_structure(cfg, params, feats);
    CHECK(g.num_nodes() == 64);
    CHECK(g.num_edges() == 64);
    for (std::size_t e = 0; e < g.num_edges(); ++e) CHECK(g.members(e).size() == 21);
}

TEST_CASE("forward with both stages disabled reduces to embedding mean") {
    ModelConfig cfg = tiny_config();
    cfg.disable_hgat = true;
    cfg.disable_hgt = true;
    auto params = init_parameters<double>(cfg, 11);
    auto feats = random_features<double>(cfg, 4);
    RunContext ctx;
    Tensor<double> logits = forward_features(cfg, params, feats, ctx);

    const std::size_t n = cfg.num_patches(), d = cfg.dim, pd = cfg.patch_dim();
    const auto& e_mat = params.get("E");
    const auto& e_pos = params.get("E_pos");
    const auto& head = params.get("head");
    std::vector<double> pooled(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            double x = e_pos.at(i, j);
            for (std::size_t f = 0; f < pd; ++f) x += feats.at(i, f) * e_mat.at(f, j);
            pooled[j] += x / static_cast<double>(n);
        }
    }
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        double want = 0.0;
        for (std::size_t j = 0; j < d; ++j) want += pooled[j] * head.at(j, c);
        CHECK(logits.at(0, c) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("sum readout is n times the mean readout") {
    ModelConfig mean_cfg = tiny_config();
    ModelConfig sum_cfg = tiny_config();
    sum_cfg.readout = Readout::kSum;
    auto pm = init_parameters<double>(mean_cfg, 5);
    auto ps = init_parameters<double>(sum_cfg, 5); // same tensors: no extra entries
    auto feats = random_features<double>(mean_cfg, 6);
    RunContext ctx;
    auto lm = forward_features(mean_cfg, pm, feats, ctx);
    auto ls = forward_features(sum_cfg, ps, feats, ctx);
    const double n = static_cast<double>(mean_cfg.num_patches());
    for (std::size_t c = 0; c < mean_cfg.num_classes; ++c) {
        CHECK(ls.at(0, c) == doctest::Approx(n * lm.at(0, c)).epsilon(1e-9));
    }
}

TEST_CASE("virtual node and cls readout extend the token list") {
    ModelConfig cfg = tiny_config();
    cfg.virtual_node = true;
    cfg.readout = Readout::kCls;
    auto params = init_parameters<double>(cfg, 19);
    CHECK(params.has("cls"));
    auto feats = random_features<double>(cfg, 20);

    RunContext ctx;
    ctx.training = true;
    ctx.seed = 9;
    ctx.epoch = 2;
    Tensor<double> logits = forward_features(cfg, params, feats, ctx);
    REQUIRE(logits.shape() == std::vector<std::size_t>{1, 4});
    for (double v : logits.values()) CHECK(std::isfinite(v));

    VisualHypergraph g = model_structure(cfg, params, feats);
    CHECK(g.num_nodes() == cfg.num_patches() + 1);
    CHECK(g.num_edges() == cfg.num_patches());
    CHECK(g.edges_of(cfg.num_patches()).size() == cfg.num_patches());
}

TEST_CASE("virtual readout pools the virtual hypernode row") {
    ModelConfig cfg = tiny_config();
    cfg.virtual_node = true;
    cfg.readout = Readout::kVirtual;
    ModelConfig no_virtual = cfg;
    no_virtual.virtual_node = false;
    CHECK_THROWS_AS(no_virtual.validate(), ConfigError);

    // With every stage disabled the virtual row stays all-zero, so the
    // logits must be exactly zero.
    ModelConfig bare = cfg;
    bare.disable_hgat = true;
    bare.disable_hgt = true;
    auto params = init_parameters<double>(bare, 2);
    auto feats = random_features<double>(bare, 3);
    RunContext ctx;
    Tensor<double> logits = forward_features(bare, params, feats, ctx);
    for (double v : logits.values()) CHECK(v == 0.0);

    // The aggregation stage writes into the virtual row.
    ModelConfig active = cfg;
    active.disable_hgt = true;
    auto params2 = init_parameters<double>(active, 2);
    Tensor<double> logits2 = forward_features(active, params2, feats, ctx);
    double mag = 0.0;
    for (double v : logits2.values()) {
        CHECK(std::isfinite(v));
        mag += std::abs(v);
    }
    CHECK(mag > 0.0);
}

TEST_CASE("logits are invariant under a joint patch permutation") {
    for (bool use_cls : {false, true}) {
        ModelConfig cfg = tiny_config();
        if (use_cls) cfg.readout = Readout::kCls;
        auto params = init_parameters<double>(cfg, 23);
        auto feats = random_features<double>(cfg, 24);
        RunContext ctx;
        auto base = forward_features(cfg, params, feats, ctx);

        const std::size_t n = cfg.num_patches(), pd = cfg.patch_dim(), d = cfg.dim;
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 rng(77);
        std::shuffle(perm.begin(), perm.end(), rng);

        // Permute both the patch features and the positional table so each
        // patch keeps its own position vector.
        std::vector<double> pf(n * pd), pp(n * d);
        const auto& e_pos = params.get("E_pos");
        auto permuted = params.clone();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < pd; ++f) pf[i * pd + f] = feats.at(perm[i], f);
            for (std::size_t j = 0; j < d; ++j) pp[i * d + j] = e_pos.at(perm[i], j);
        }
        std::copy(pp.begin(), pp.end(), permuted.get("E_pos").mutable_values().begin());
        Tensor<double> pfeats({n, pd}, std::move(pf));
        auto out = forward_features(cfg, permuted, pfeats, ctx);
        for (std::size_t c = 0; c < cfg.num_classes; ++c) {
            CHECK(out.at(0, c) == doctest::Approx(base.at(0, c)).epsilon(1e-9));
        }
    }
}

TEST_CASE("class ranking is ordered, normalized, and tie-stable") {
    Tensor<double> logits({1, 3}, {10.0, 0.0, 0.0});
    auto ranked = rank_classes(logits);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].cls == 0);
    CHECK(ranked[0].prob > 0.9999);
    CHECK(ranked[1].cls == 1); // tied tail breaks toward the smaller index
    CHECK(ranked[2].cls == 2);
    double total = 0.0;
    for (const auto& r : ranked) total += r.prob;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    Tensor<double> tied({1, 4}, {1.0, 3.0, 3.0, 1.0});
    auto r2 = rank_classes(tied);
    CHECK(r2[0].cls == 1);
    CHECK(r2[1].cls == 2);
    CHECK(r2[2].cls == 0);
    CHECK(r2[3].cls == 3);
    for (std::size_t i = 1; i < r2.size(); ++i) CHECK(r2[i - 1].prob >= r2[i].prob);

    CHECK_THROWS_AS(rank_classes(Tensor<double>({2, 3}, 0.0)), DimensionError);
}

TEST_CASE("checkpoint round trip is value exact and byte stable") {
    ModelConfig cfg = tiny_config();
    cfg.metric = Metric::kCosine;
    cfg.virtual_node = true;
    auto params = init_parameters<double>(cfg, 31);
    std::vector<std::string> names = {"a", "b", "c", "d"};

    auto path1 = temp_file("vhgnn_ckpt_rt1.bin");
    auto path2 = temp_file("vhgnn_ckpt_rt2.bin");
    save_checkpoint(path1.string(), cfg, params, names);

    auto loaded = load_checkpoint<double>(path1.string());
    CHECK(loaded.class_names == names);
    CHECK(loaded.config.metric == Metric::kCosine);
    CHECK(loaded.config.virtual_node);
    REQUIRE(loaded.params.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& want = params.entries()[i];
        const auto& got = loaded.params.entries()[i];
        CHECK(want.name == got.name);
        CHECK(want.trainable == got.trainable);
        auto vw = want.tensor.values(), vg = got.tensor.values();
        REQUIRE(vw.size() == vg.size());
        for (std::size_t j = 0; j < vw.size(); ++j) CHECK(vw[j] == vg[j]);
    }

    save_checkpoint(path2.string(), loaded.config, loaded.params, loaded.class_names);
    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint survives a precision change") {
    ModelConfig cfg = tiny_config();
    auto params = init_parameters<double>(cfg, 13);
    auto path = temp_file("vhgnn_ckpt_prec.bin");
    save_checkpoint(path.string(), cfg, params, {"w", "x", "y", "z"});
    auto as_float = load_checkpoint<float>(path.string());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto vd = params.entries()[i].tensor.values();
        auto vf = as_float.params.entries()[i].tensor.values();
        for (std::size_t j = 0; j < vd.size(); ++j)
            CHECK(vf[j] == static_cast<float>(vd[j]));
    }
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader names the offending tensor") {
    ModelConfig cfg = tiny_config();
    auto params = init_parameters<float>(cfg, 3);
    auto path = temp_file("vhgnn_ckpt_bad.bin");
    std::vector<std::string> names = {"a", "b", "c", "d"};

    // Width mismatch: header claims dim 32, payload tensors are built at 16.
    save_checkpoint(path.string(), cfg, params, names);
    rewrite_header(path, [](nlohmann::json& h) { h["config"]["dim"] = 32; });
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path.string()),
                         doctest::Contains("'E'"), DataError);

    // Renamed tensor: expected entry is gone.
    save_checkpoint(path.string(), cfg, params, names);
    rewrite_header(path, [](nlohmann::json& h) { h["tensors"][0]["name"] = "bogus"; });
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path.string()),
                         doctest::Contains("missing tensor 'E'"), DataError);

    // Garbage magic.
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_WITH_AS(load_checkpoint<float>(path.string()),
                         doctest::Contains("not a model checkpoint"), DataError);
    CHECK_THROWS_AS(load_checkpoint<float>("/nonexistent/vhgnn.bin"), DataError);
    std::filesystem::remove(path);
}

TEST_CASE("forward rejects mis-shaped features") {
    ModelConfig cfg = tiny_config();
    auto params = init_parameters<double>(cfg, 1);
    RunContext ctx;
    Tensor<double> wrong({4, 4}, 0.1);
    CHECK_THROWS_AS(forward_features(cfg, params, wrong, ctx), DimensionError);
}

TEST_CASE("gradients reach every trainable parameter") {
    ModelConfig cfg = tiny_config();
    cfg.dropout = 0.0;
    auto params = init_parameters<double>(cfg, 17);
    // Compatibility read-outs start at zero, which would zero their own
    // gradient paths; nudge them so every parameter participates.
    for (auto& e : params.entries()) {
        if (e.name.find(".w3") != std::string::npos) {
            auto mv = e.tensor.mutable_values();
            for (std::size_t i = 0; i < mv.size(); ++i)
                mv[i] = 0.05 + 0.01 * static_cast<double>(i % 7);
        }
    }
    auto feats = random_features<double>(cfg, 18);
    RunContext ctx;
    ctx.training = true;

    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        Tensor<double> logits = forward_features(cfg, params, feats, ctx);
        Tensor<double> loss = cross_entropy(logits, std::vector<int>{2});
        tape.backward(loss);
    }
    for (const auto& e : params.entries()) {
        if (!e.trainable) continue;
        double mag = 0.0;
        for (double gv : e.tensor.grad()) mag += std::abs(gv);
        INFO(e.name);
        CHECK(mag > 0.0);
    }
}
