#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "vhgnn/dataset.hpp"
#include "vhgnn/image.hpp"
#include "vhgnn/metrics.hpp"
#include "vhgnn/model.hpp"
#include "vhgnn/util.hpp"

namespace vhgnn {

template <class S>
struct PreparedDataset {
    std::vector<Tensor<S>> features; // one n x patch_dim matrix per sample
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::size_t size() const { return features.size(); }
};

/// Resize to the model's input square, map [0,1] to [-1,1], and flatten into
/// patch rows.
template <class S>
Tensor<S> features_from_image(const Micrograph& img, const ModelConfig& cfg) {
    Micrograph sized = resize_bilinear(img, cfg.image_size, cfg.image_size);
    normalize_signed(sized);
    PatchGrid grid = patchify(sized, cfg.patch);
    std::vector<S> vals(grid.features.begin(), grid.features.end());
    return Tensor<S>({grid.num_patches(), grid.feature_dim()}, std::move(vals));
}

/// Decode and preprocess every sample in the index. Decoding is spread over
/// the worker pool; order matches the index.
template <class S>
PreparedDataset<S> prepare_dataset(const DatasetIndex& index, const ModelConfig& cfg) {
    PreparedDataset<S> out;
    out.class_names = index.class_names;
    out.features.resize(index.samples.size());
    out.labels.resize(index.samples.size());
    std::vector<std::string> errors(index.samples.size());
    parallel_for(index.samples.size(), [&](std::size_t i) {
        try {
            Micrograph img = decode_image(index.samples[i].path);
            out.features[i] = features_from_image<S>(img, cfg);
            out.labels[i] = index.samples[i].label;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (const auto& e : errors) {
        if (!e.empty()) throw DataError(e);
    }
    return out;
}

/// In-memory variant of prepare_dataset for already-decoded images.
template <class S>
PreparedDataset<S> prepare_micrographs(const std::vector<Micrograph>& images,
                                       const std::vector<int>& labels,
                                       const std::vector<std::string>& class_names,
                                       const ModelConfig& cfg) {
    if (images.size() != labels.size()) {
        throw DimensionError("prepare_micrographs: " + std::to_string(images.size()) +
                             " images vs " + std::to_string(labels.size()) + " labels");
    }
    PreparedDataset<S> out;
    out.class_names = class_names;
    out.labels = labels;
    out.features.resize(images.size());
    parallel_for(images.size(),
                 [&](std::size_t i) { out.features[i] = features_from_image<S>(images[i], cfg); });
    return out;
}

/// Adam with bias correction. Moment buffers live in double regardless of
/// the parameter precision.
template <class S>
class Adam {
public:
    explicit Adam(ParameterSet<S>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : params_(&params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& e : params.entries()) {
            if (!e.trainable) continue;
            m_.emplace_back(e.tensor.size(), 0.0);
            v_.emplace_back(e.tensor.size(), 0.0);
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::size_t steps() const { return t_; }

    /// Consumes the gradients accumulated on the parameters; the caller is
    /// responsible for zeroing them afterwards.
    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        std::size_t slot = 0;
        for (auto& e : params_->entries()) {
            if (!e.trainable) continue;
            auto grad = e.tensor.grad();
            auto vals = e.tensor.mutable_values();
            auto& m = m_[slot];
            auto& v = v_[slot];
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = b1_ * m[i] + (1.0 - b1_) * g;
                v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
                const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
                vals[i] = static_cast<S>(static_cast<double>(vals[i]) - update);
            }
            ++slot;
        }
    }

private:
    ParameterSet<S>* params_;
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// Halves the learning rate after `patience` consecutive epochs without a
/// strict improvement of the observed metric (higher is better).
class PlateauScheduler {
public:
    PlateauScheduler(double initial_lr, std::size_t patience, double factor = 0.5)
        : lr_(initial_lr), patience_(patience), factor_(factor) {
        if (patience_ == 0) throw ConfigError("plateau scheduler patience must be >= 1");
    }

    double observe(double metric) {
        if (metric > best_) {
            best_ = metric;
            stale_ = 0;
        } else if (++stale_ == patience_) {
            lr_ *= factor_;
            stale_ = 0;
        }
        return lr_;
    }

    double lr() const { return lr_; }
    std::size_t stale_epochs() const { return stale_; }

private:
    double lr_;
    std::size_t patience_;
    double factor_;
    double best_ = -std::numeric_limits<double>::infinity();
    std::size_t stale_ = 0;
};

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 48;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t plateau_patience = 10;
    std::size_t early_stop_patience = 20;
    std::uint64_t seed = 0;
    bool verbose = false;
};

template <class S>
struct TrainResult {
    ParameterSet<S> best_params;
    double best_val_top1 = 0.0;
    std::size_t best_epoch = 0; // 1-based; 0 if training never ran
    std::size_t epochs_run = 0;
    std::vector<std::string> history; // "epoch,train_loss,val_top1,lr" rows
};

namespace train_detail {

template <class S>
std::vector<double> softmax_row(const Tensor<S>& logits) {
    auto v = logits.values();
    double mx = -std::numeric_limits<double>::infinity();
    for (S x : v) mx = std::max(mx, static_cast<double>(x));
    std::vector<double> out(v.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(static_cast<double>(v[i]) - mx);
        denom += out[i];
    }
    for (auto& x : out) x /= denom;
    return out;
}

} // namespace train_detail

/// Class probabilities for a subset of samples, in untaped eval mode.
template <class S>
std::vector<std::vector<double>> predict_probs(const ModelConfig& cfg, ParameterSet<S>& params,
                                               const PreparedDataset<S>& data,
                                               const std::vector<std::size_t>& idx) {
    std::vector<std::vector<double>> probs(idx.size());
    RunContext ctx;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        Tensor<S> logits = forward_features(cfg, params, data.features[idx[j]], ctx);
        probs[j] = train_detail::softmax_row(logits);
    }
    return probs;
}

template <class S>
EvalReport evaluate_model(const ModelConfig& cfg, ParameterSet<S>& params,
                          const PreparedDataset<S>& data, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw ConfigError("evaluation split is empty");
    auto probs = predict_probs(cfg, params, data, idx);
    std::vector<int> labels(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) labels[j] = data.labels[idx[j]];
    return evaluate(probs, labels, cfg.num_classes, data.class_names);
}

template <class S>
double top1_accuracy(const ModelConfig& cfg, ParameterSet<S>& params,
                     const PreparedDataset<S>& data, const std::vector<std::size_t>& idx) {
    auto probs = predict_probs(cfg, params, data, idx);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < probs[j].size(); ++c)
            if (probs[j][c] > probs[j][arg]) arg = c;
        if (static_cast<int>(arg) == data.labels[idx[j]]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(idx.size());
}

/// Minibatch training loop: Adam on mean cross-entropy, plateau-halved
/// learning rate, early stopping, and a deep copy of the best-validation
/// weights. Deterministic for a fixed (options.seed, data) pair.
template <class S>
TrainResult<S> train_model(const ModelConfig& cfg, ParameterSet<S>& params,
                           const PreparedDataset<S>& data,
                           const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& val_idx, const TrainOptions& opt) {
    cfg.validate();
    if (train_idx.empty()) throw ConfigError("training split is empty");
    if (val_idx.empty()) throw ConfigError("validation split is empty");
    if (opt.batch_size == 0) throw ConfigError("batch size must be >= 1");
    for (std::size_t i : train_idx) {
        if (i >= data.size()) throw ConfigError("train index out of range");
    }
    for (std::size_t i : val_idx) {
        if (i >= data.size()) throw ConfigError("val index out of range");
    }

    Adam<S> adam(params, opt.lr, opt.beta1, opt.beta2, opt.eps);
    PlateauScheduler sched(opt.lr, opt.plateau_patience);

    TrainResult<S> result;
    result.best_params = params.clone();
    std::size_t stale = 0;
    std::vector<std::size_t> order(train_idx);

    for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(opt.seed * 1000003ull + epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        RunContext ctx;
        ctx.training = true;
        ctx.seed = opt.seed;
        ctx.epoch = epoch;

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t count = std::min(opt.batch_size, order.size() - start);
            Tape<S> tape;
            TapeScope<S> scope(tape);
            std::vector<Tensor<S>> logits;
            logits.reserve(count);
            std::vector<int> labels(count);
            for (std::size_t j = 0; j < count; ++j) {
                const std::size_t si = order[start + j];
                logits.push_back(forward_features(cfg, params, data.features[si], ctx));
                labels[j] = data.labels[si];
            }
            Tensor<S> batch = count == 1 ? logits[0] : concat(logits, 0);
            Tensor<S> loss = cross_entropy(batch, labels);
            tape.backward(loss);
            adam.step();
            params.zero_grad();
            loss_sum += static_cast<double>(loss.values()[0]) * static_cast<double>(count);
        }
        const double train_loss = loss_sum / static_cast<double>(order.size());

        const double val_top1 = top1_accuracy(cfg, params, data, val_idx);
        result.epochs_run = epoch;

        char row[128];
        std::snprintf(row, sizeof(row), "%zu,%.6f,%.6f,%.8g", epoch, train_loss, val_top1,
                      adam.lr());
        result.history.emplace_back(row);
        if (opt.verbose) std::fprintf(stderr, "epoch %s\n", row);

        if (val_top1 > result.best_val_top1 || result.best_epoch == 0) {
            result.best_val_top1 = val_top1;
            result.best_epoch = epoch;
            result.best_params = params.clone();
            stale = 0;
        } else {
            ++stale;
        }
        adam.set_lr(sched.observe(val_top1));
        if (stale >= opt.early_stop_patience) break;
    }
    return result;
}

} // namespace vhgnn
