#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vhgnn/dataset.hpp"
#include "vhgnn/gradcheck_suite.hpp"
#include "vhgnn/metrics.hpp"
#include "vhgnn/model.hpp"
#include "vhgnn/synthetic.hpp"
#include "vhgnn/train.hpp"

namespace fs = std::filesystem;

namespace vhgnn::cli {
namespace {

struct ModelFlags {
    std::size_t image_size = 256;
    std::size_t patch = 32;
    std::size_t dim = 128;
    std::size_t k = 20;
    std::size_t z_blocks = 4;
    std::size_t hgat_layers = 2;
    std::size_t hgt_layers = 2;
    std::size_t heads = 4;
    double dropout = 0.2;
    std::string metric = "euclidean";
    std::string readout = "mean";
    bool disable_hgat = false;
    bool disable_hgt = false;
    bool virtual_node = false;
    bool clamp_k = false;
    std::string variant = "full";
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--image-size", f.image_size, "Square input edge in pixels")
        ->capture_default_str();
    cmd->add_option("--patch", f.patch, "Patch edge in pixels")->capture_default_str();
    cmd->add_option("--dim", f.dim, "Model width")->capture_default_str();
    cmd->add_option("--k", f.k, "Neighbors per hyperedge (edge size is k+1)")
        ->capture_default_str();
    cmd->add_option("--z-blocks", f.z_blocks, "Parallel attention blocks per aggregation layer")
        ->capture_default_str();
    cmd->add_option("--hgat-layers", f.hgat_layers, "Aggregation layers")->capture_default_str();
    cmd->add_option("--hgt-layers", f.hgt_layers, "Transformer layers")->capture_default_str();
    cmd->add_option("--heads", f.heads, "Self-attention heads")->capture_default_str();
    cmd->add_option("--dropout", f.dropout, "Dropout rate between aggregation layers")
        ->capture_default_str();
    cmd->add_option("--metric", f.metric, "Patch distance: euclidean or cosine")
        ->capture_default_str();
    cmd->add_option("--readout", f.readout, "Pooling: mean, sum, cls, or virtual")
        ->capture_default_str();
    cmd->add_flag("--disable-hgat", f.disable_hgat, "Skip the hypergraph aggregation stage");
    cmd->add_flag("--disable-hgt", f.disable_hgt, "Skip the transformer stage");
    cmd->add_flag("--virtual-node", f.virtual_node, "Add a virtual node shared by every hyperedge");
    cmd->add_flag("--clamp-k", f.clamp_k, "Clamp k instead of rejecting k >= patch count");
    cmd->add_option("--variant", f.variant,
                    "Preset: full, no-hgat, no-hgt, virtual, cls, sum, cosine")
        ->capture_default_str();
}

void apply_variant(ModelFlags& f) {
    if (f.variant == "full") return;
    if (f.variant == "no-hgat") {
        f.disable_hgat = true;
    } else if (f.variant == "no-hgt") {
        f.disable_hgt = true;
    } else if (f.variant == "virtual") {
        f.virtual_node = true;
        f.disable_hgt = true;
        f.readout = "virtual";
    } else if (f.variant == "cls") {
        f.readout = "cls";
    } else if (f.variant == "sum") {
        f.readout = "sum";
    } else if (f.variant == "cosine") {
        f.metric = "cosine";
    } else {
        throw ConfigError("unknown variant '" + f.variant +
                          "' (expected full, no-hgat, no-hgt, virtual, cls, sum, or cosine)");
    }
}

ModelConfig to_config(const ModelFlags& f, std::size_t num_classes) {
    ModelConfig cfg;
    cfg.image_size = f.image_size;
    cfg.patch = f.patch;
    cfg.dim = f.dim;
    cfg.k = f.k;
    cfg.z_blocks = f.z_blocks;
    cfg.hgat_layers = f.hgat_layers;
    cfg.hgt_layers = f.hgt_layers;
    cfg.heads = f.heads;
    cfg.dropout = f.dropout;
    cfg.metric = parse_metric(f.metric);
    cfg.readout = parse_readout(f.readout);
    cfg.disable_hgat = f.disable_hgat;
    cfg.disable_hgt = f.disable_hgt;
    cfg.virtual_node = f.virtual_node;
    cfg.clamp_k = f.clamp_k;
    cfg.num_classes = num_classes;
    cfg.validate();
    return cfg;
}

void set_thread_cap(std::size_t threads) {
    if (threads > 0) setenv("VHGNN_THREADS", std::to_string(threads).c_str(), 1);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

struct TrainArgs {
    std::string data_dir;
    std::string out_dir;
    ModelFlags model;
    TrainOptions opt;
    std::size_t folds = 10;
    std::size_t fold = 0;
    std::uint64_t split_seed = 0;
    std::size_t seeds = 1;
    std::string precision = "f32";
    std::size_t threads = 0;
    bool force = false;
};

template <class S>
int run_train(const TrainArgs& args) {
    const fs::path out_root(args.out_dir);
    if (fs::exists(out_root / "summary.json") && !args.force) {
        throw ConfigError("output directory already holds a run: " + args.out_dir +
                          " (pass --force to overwrite)");
    }

    DatasetIndex index = load_dataset(args.data_dir);
    ModelConfig cfg = to_config(args.model, index.class_names.size());

    std::printf("dataset: %zu samples, %zu classes\n", index.samples.size(),
                index.class_names.size());
    std::printf("model: %zu parameters\n", count_parameters(cfg));

    auto folds = kfold_split(index.samples.size(), args.folds, args.split_seed);
    SplitIndices split = assemble_split(folds, args.fold);
    std::printf("split: %zu train / %zu val / %zu test (fold %zu of %zu)\n", split.train.size(),
                split.val.size(), split.test.size(), args.fold, args.folds);

    PreparedDataset<S> data = prepare_dataset<S>(index, cfg);
    fs::create_directories(out_root);

    std::vector<double> test_scores, val_scores;
    nlohmann::json seed_rows = nlohmann::json::array();
    for (std::size_t i = 0; i < args.seeds; ++i) {
        const std::uint64_t seed = args.opt.seed + i;
        TrainOptions opt = args.opt;
        opt.seed = seed;

        ParameterSet<S> params = init_parameters<S>(cfg, seed);
        TrainResult<S> result = train_model(cfg, params, data, split.train, split.val, opt);

        EvalReport report = evaluate_model(cfg, result.best_params, data, split.test);
        const double test_top1 = report.top_n.at(1);

        const fs::path seed_dir = out_root / ("seed_" + std::to_string(seed));
        fs::create_directories(seed_dir);
        save_checkpoint((seed_dir / "model.ckpt").string(), cfg, result.best_params,
                        index.class_names);
        std::string csv = "epoch,train_loss,val_top1,lr\n";
        for (const auto& row : result.history) csv += row + "\n";
        write_text(seed_dir / "history.csv", csv);

        nlohmann::json rj = report_to_json(report);
        rj["split"] = "test";
        rj["fold"] = args.fold;
        rj["seed"] = seed;
        rj["best_epoch"] = result.best_epoch;
        rj["epochs_run"] = result.epochs_run;
        rj["val_top1"] = result.best_val_top1;
        write_text(seed_dir / "report.json", rj.dump(2) + "\n");

        std::printf("seed %llu: best val top-1 %.4f (epoch %zu/%zu), test top-1 %.4f\n",
                    static_cast<unsigned long long>(seed), result.best_val_top1,
                    result.best_epoch, result.epochs_run, test_top1);
        test_scores.push_back(test_top1);
        val_scores.push_back(result.best_val_top1);
        seed_rows.push_back({{"seed", seed},
                             {"val_top1", result.best_val_top1},
                             {"test_top1", test_top1},
                             {"best_epoch", result.best_epoch},
                             {"epochs_run", result.epochs_run}});
    }

    auto mean_std = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
        return std::pair<double, double>(mean, sd);
    };
    const auto [test_mean, test_std] = mean_std(test_scores);
    const auto [val_mean, val_std] = mean_std(val_scores);

    nlohmann::json summary{{"config", config_to_json(cfg)},
                           {"class_names", index.class_names},
                           {"folds", args.folds},
                           {"fold", args.fold},
                           {"split_seed", args.split_seed},
                           {"precision", args.precision},
                           {"runs", seed_rows},
                           {"test_top1_mean", test_mean},
                           {"test_top1_std", test_std},
                           {"val_top1_mean", val_mean},
                           {"val_top1_std", val_std}};
    write_text(out_root / "summary.json", summary.dump(2) + "\n");
    std::printf("test top-1: %.4f +/- %.4f over %zu seed(s)\n", test_mean, test_std, args.seeds);
    return 0;
}

int cmd_train(const TrainArgs& args) {
    set_thread_cap(args.threads);
    if (args.seeds == 0) throw ConfigError("--seeds must be >= 1");
    if (args.precision == "f32") return run_train<float>(args);
    if (args.precision == "f64") return run_train<double>(args);
    throw ConfigError("unknown precision '" + args.precision + "' (expected f32 or f64)");
}

struct EvalArgs {
    std::string model_path;
    std::string data_dir;
    std::string split = "test";
    std::size_t folds = 10;
    std::size_t fold = 0;
    std::uint64_t split_seed = 0;
    std::string out_path;
    std::size_t threads = 0;
};

int cmd_eval(const EvalArgs& args) {
    set_thread_cap(args.threads);
    LoadedModel<double> model = load_checkpoint<double>(args.model_path);
    DatasetIndex index = load_dataset(args.data_dir);
    if (index.class_names != model.class_names) {
        throw DataError("dataset classes do not match the checkpoint (expected " +
                        std::to_string(model.class_names.size()) + " matching names)");
    }

    std::vector<std::size_t> idx;
    if (args.split == "all") {
        for (std::size_t i = 0; i < index.samples.size(); ++i) idx.push_back(i);
    } else {
        auto folds = kfold_split(index.samples.size(), args.folds, args.split_seed);
        SplitIndices split = assemble_split(folds, args.fold);
        if (args.split == "train") idx = split.train;
        else if (args.split == "val") idx = split.val;
        else if (args.split == "test") idx = split.test;
        else
            throw ConfigError("unknown split '" + args.split +
                              "' (expected train, val, test, or all)");
    }

    PreparedDataset<double> data = prepare_dataset<double>(index, model.config);
    EvalReport report = evaluate_model(model.config, model.params, data, idx);
    std::fputs(report_to_table(report).c_str(), stdout);
    if (!args.out_path.empty()) {
        nlohmann::json j = report_to_json(report);
        j["split"] = args.split;
        write_text(args.out_path, j.dump(2) + "\n");
    }
    return 0;
}

struct PredictArgs {
    std::string model_path;
    std::string image_path;
    std::size_t top = 5;
};

int cmd_predict(const PredictArgs& args) {
    LoadedModel<double> model = load_checkpoint<double>(args.model_path);
    Micrograph img = decode_image(args.image_path);
    Tensor<double> feats = features_from_image<double>(img, model.config);
    RunContext ctx;
    Tensor<double> logits = forward_features(model.config, model.params, feats, ctx);
    auto ranked = rank_classes(logits);
    const std::size_t n = std::min<std::size_t>(args.top, ranked.size());
    for (std::size_t i = 0; i < n; ++i) {
        std::printf("%s %.6f\n", model.class_names[static_cast<std::size_t>(ranked[i].cls)].c_str(),
                    ranked[i].prob);
    }
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 404;
    double tol = 1e-4;
};

int cmd_gradcheck(const GradcheckArgs& args) {
    auto rows = run_all_gradchecks(args.seed, args.tol);
    std::size_t passed = 0;
    for (const auto& r : rows) {
        std::printf("[%s] %-32s max_rel=%.3e\n", r.pass ? "ok" : "FAIL", r.name.c_str(),
                    r.max_rel_err);
        if (r.pass) ++passed;
    }
    std::printf("gradcheck: %zu/%zu passed (tol %.1e, seed %llu)\n", passed, rows.size(), args.tol,
                static_cast<unsigned long long>(args.seed));
    return passed == rows.size() ? 0 : 3;
}

struct InspectArgs {
    std::string image_path;
    std::string model_path;
    ModelFlags model;
    std::uint64_t seed = 0;
    std::size_t k_override = 0;
};

int cmd_inspect(const InspectArgs& args) {
    Micrograph img = decode_image(args.image_path);

    ModelConfig cfg;
    std::vector<std::string> class_names;
    ParameterSet<double> params;
    if (!args.model_path.empty()) {
        LoadedModel<double> model = load_checkpoint<double>(args.model_path);
        cfg = model.config;
        params = std::move(model.params);
        class_names = std::move(model.class_names);
    } else {
        ModelFlags flags = args.model;
        apply_variant(flags);
        cfg = to_config(flags, 2); // class count does not affect the structure
        params = init_parameters<double>(cfg, args.seed);
    }
    if (args.k_override > 0) {
        cfg.k = args.k_override;
        cfg.validate();
    }

    std::printf("image: %zux%zu -> %zux%zu\n", img.width, img.height, cfg.image_size,
                cfg.image_size);
    Tensor<double> feats = features_from_image<double>(img, cfg);
    std::printf("patches: %zu (%zux%zu grid of %zupx), %zu features each\n", cfg.num_patches(),
                cfg.grid_side(), cfg.grid_side(), cfg.patch, cfg.patch_dim());
    double lo = feats.values()[0], hi = lo, sum = 0.0;
    for (double v : feats.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    std::printf("feature range: [%.4f, %.4f] mean %.4f\n", lo, hi,
                sum / static_cast<double>(feats.size()));

    VisualHypergraph g = model_structure(cfg, params, feats);
    std::printf("hypergraph: metric=%s k=%zu -> %zu hyperedges over %zu nodes\n",
                metric_name(cfg.metric), cfg.k, g.num_edges(), g.num_nodes());
    for (std::size_t e = 0; e < g.num_edges(); ++e) {
        std::string line = std::to_string(e) + ":";
        for (std::size_t v : g.members(e)) {
            line += ' ';
            line += std::to_string(v);
        }
        std::puts(line.c_str());
    }
    return 0;
}

struct MakeDataArgs {
    std::string out_dir;
    std::size_t image_size = 64;
    std::size_t per_class = 32;
    std::uint64_t seed = 0;
    double noise = 0.05;
    bool force = false;
};

int cmd_make_data(const MakeDataArgs& args) {
    if (fs::exists(args.out_dir) && !fs::is_empty(args.out_dir) && !args.force) {
        throw ConfigError("output directory is not empty: " + args.out_dir +
                          " (pass --force to overwrite)");
    }
    SyntheticOptions opt;
    opt.image_size = args.image_size;
    opt.per_class = args.per_class;
    opt.seed = args.seed;
    opt.noise = args.noise;
    write_synthetic_dataset(args.out_dir, opt);
    std::printf("wrote %zu images (%zu classes x %zu) under %s\n", 4 * args.per_class,
                std::size_t{4}, args.per_class, args.out_dir.c_str());
    return 0;
}

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"Hypergraph attention classifier for micrograph images"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Train on an image directory tree");
    train->add_option("--data", train_args.data_dir, "Dataset root (one subdirectory per class)")
        ->required();
    train->add_option("--out", train_args.out_dir, "Output directory for checkpoints and reports")
        ->required();
    train->set_config("--config", "", "Read options from a key=value file");
    add_model_flags(train, train_args.model);
    train->add_option("--epochs", train_args.opt.epochs, "Max training epochs")
        ->capture_default_str();
    train->add_option("--batch", train_args.opt.batch_size, "Minibatch size")
        ->capture_default_str();
    train->add_option("--lr", train_args.opt.lr, "Initial learning rate")->capture_default_str();
    train->add_option("--plateau-patience", train_args.opt.plateau_patience,
                      "Epochs without val improvement before halving the lr")
        ->capture_default_str();
    train->add_option("--early-stop-patience", train_args.opt.early_stop_patience,
                      "Epochs without val improvement before stopping")
        ->capture_default_str();
    train->add_option("--folds", train_args.folds, "Cross-validation fold count")
        ->capture_default_str();
    train->add_option("--fold", train_args.fold, "Test fold index")->capture_default_str();
    train->add_option("--split-seed", train_args.split_seed, "Fold shuffling seed")
        ->capture_default_str();
    train->add_option("--seed", train_args.opt.seed, "First training seed")->capture_default_str();
    train->add_option("--seeds", train_args.seeds, "Consecutive seeds to train")
        ->capture_default_str();
    train->add_option("--precision", train_args.precision, "Weights precision: f32 or f64")
        ->capture_default_str();
    train->add_option("--threads", train_args.threads, "Worker cap (0 = auto)")
        ->capture_default_str();
    train->add_flag("--force", train_args.force, "Overwrite an existing run directory");
    train->add_flag("--verbose", train_args.opt.verbose, "Print one line per epoch");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    eval->add_option("--model", eval_args.model_path, "Checkpoint path")->required();
    eval->add_option("--data", eval_args.data_dir, "Dataset root")->required();
    eval->add_option("--split", eval_args.split, "train, val, test, or all")
        ->capture_default_str();
    eval->add_option("--folds", eval_args.folds, "Fold count used at training time")
        ->capture_default_str();
    eval->add_option("--fold", eval_args.fold, "Test fold index used at training time")
        ->capture_default_str();
    eval->add_option("--split-seed", eval_args.split_seed, "Fold shuffling seed")
        ->capture_default_str();
    eval->add_option("--out", eval_args.out_path, "Also write the report as JSON");
    eval->add_option("--threads", eval_args.threads, "Worker cap (0 = auto)")
        ->capture_default_str();

    PredictArgs predict_args;
    CLI::App* predict = app.add_subcommand("predict", "Classify a single image");
    predict->add_option("--model", predict_args.model_path, "Checkpoint path")->required();
    predict->add_option("--image", predict_args.image_path, "Image file (png/jpeg/bmp)")
        ->required();
    predict->add_option("--top", predict_args.top, "Ranked classes to print")
        ->capture_default_str();

    GradcheckArgs grad_args;
    CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
    grad->add_option("--seed", grad_args.seed, "Instance seed")->capture_default_str();
    grad->add_option("--tol", grad_args.tol, "Max relative error")->capture_default_str();

    InspectArgs inspect_args;
    CLI::App* inspect =
        app.add_subcommand("inspect", "Show the patch grid and hypergraph for one image");
    inspect->add_option("--image", inspect_args.image_path, "Image file")->required();
    inspect->add_option("--model", inspect_args.model_path,
                        "Checkpoint path (defaults to fresh weights)");
    add_model_flags(inspect, inspect_args.model);
    inspect->add_option("--seed", inspect_args.seed, "Init seed when no checkpoint is given")
        ->capture_default_str();
    inspect->add_option("--k-override", inspect_args.k_override,
                        "Rebuild the structure with a different k");

    MakeDataArgs make_args;
    CLI::App* make_data =
        app.add_subcommand("make-data", "Generate the synthetic grating benchmark");
    make_data->add_option("--out", make_args.out_dir, "Dataset root to create")->required();
    make_data->add_option("--image-size", make_args.image_size, "Image edge in pixels")
        ->capture_default_str();
    make_data->add_option("--per-class", make_args.per_class, "Images per class")
        ->capture_default_str();
    make_data->add_option("--seed", make_args.seed, "Generator seed")->capture_default_str();
    make_data->add_option("--noise", make_args.noise, "Pixel noise level")->capture_default_str();
    make_data->add_flag("--force", make_args.force, "Write into a non-empty directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) {
            apply_variant(train_args.model);
            return cmd_train(train_args);
        }
        if (eval->parsed()) return cmd_eval(eval_args);
        if (predict->parsed()) return cmd_predict(predict_args);
        if (grad->parsed()) return cmd_gradcheck(grad_args);
        if (inspect->parsed()) return cmd_inspect(inspect_args);
        if (make_data->parsed()) return cmd_make_data(make_args);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

} // namespace vhgnn::cli
