#pragma once

// Finite-difference verification of the reverse-mode engine. Always runs in
// double precision: central differences with h = 1e-5 leave ~1e-10 of
// headroom against the 1e-4 acceptance threshold, which float would eat.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vhgnn/tensor.hpp"

namespace vhgnn {

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline bool all_passed(const std::vector<GradCheckRow>& rows) {
    for (const auto& r : rows)
        if (!r.pass) return false;
    return !rows.empty();
}

/// Compares tape gradients against central differences for every element of
/// every parameter of a scalar-valued forward closure.
class GradChecker {
public:
    explicit GradChecker(double tol = 1e-4, double step = 1e-5) : tol_(tol), step_(step) {}

    /// `forward` must re-read the current parameter values on every call and
    /// return a scalar. It is invoked untaped for the difference quotients.
    GradCheckRow check(const std::string& name, std::vector<Tensor<double>*> params,
                       const std::function<Tensor<double>()>& forward) const {
        for (auto* p : params) {
            p->set_requires_grad(true);
            p->zero_grad();
        }
        {
            Tape<double> tape;
            TapeScope<double> scope(tape);
            tape.backward(forward());
        }
        std::vector<std::vector<double>> analytic;
        analytic.reserve(params.size());
        for (auto* p : params) analytic.emplace_back(p->grad().begin(), p->grad().end());

        double max_rel = 0.0;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto vals = params[pi]->mutable_values();
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const double orig = vals[i];
                const double an = analytic[pi][i];
                auto probe = [&](double h) {
                    vals[i] = orig + h;
                    const double fp = forward().values()[0];
                    vals[i] = orig - h;
                    const double fm = forward().values()[0];
                    vals[i] = orig;
                    const double fd = (fp - fm) / (2.0 * h);
                    return std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
                };
                double rel = probe(step_);
                // A kink (relu corner) inside the probe interval blends two
                // linear pieces and poisons the quotient. Narrowing the step
                // clears the kink in that case, while a genuinely wrong
                // gradient keeps failing at every step size.
                for (double h = step_ / 32; rel >= tol_ && h >= step_ / 2000; h /= 32) {
                    rel = std::min(rel, probe(h));
                }
                max_rel = std::max(max_rel, rel);
            }
        }
        return {name, max_rel, max_rel < tol_};
    }

    double tolerance() const { return tol_; }

private:
    double tol_;
    double step_;
};

namespace gradcheck_detail {

inline Tensor<double> random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape,
                                    double lo = -1.0, double hi = 1.0) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor<double>(std::move(shape), std::move(v));
}

/// Kinked ops (relu, gelu near the origin) need inputs clear of the kink or
/// the difference quotient straddles it.
inline Tensor<double> random_tensor_off_kink(std::mt19937_64& rng, std::vector<std::size_t> shape,
                                             double margin = 0.05) {
    Tensor<double> t = random_tensor(rng, std::move(shape));
    for (auto& x : t.mutable_values()) {
        if (std::abs(x) < margin) x += x >= 0 ? margin : -margin;
    }
    return t;
}

} // namespace gradcheck_detail

/// One row per core op (several ops appear in multiple broadcast/axis modes).
inline std::vector<GradCheckRow> op_gradcheck_rows(std::uint64_t seed, double tol = 1e-4) {
    using gradcheck_detail::random_tensor;
    using gradcheck_detail::random_tensor_off_kink;
    using T = Tensor<double>;

    std::mt19937_64 rng(seed);
    GradChecker checker(tol);
    std::vector<GradCheckRow> rows;

    // Scalarize through a fixed random projection so every output element
    // influences the loss with a distinct weight.
    auto weighted_sum = [](const T& x, const T& w) { return sum_reduce(mul(x, w)); };

    {
        T a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2});
        T w = random_tensor(rng, {3, 2});
        rows.push_back(checker.check("matmul", {&a, &b},
                                     [&] { return weighted_sum(matmul(a, b), w); }));
    }
    {
        T x = random_tensor(rng, {3, 5});
        T w = random_tensor(rng, {5, 3});
        rows.push_back(checker.check("transpose", {&x},
                                     [&] { return weighted_sum(transpose(x), w); }));
    }
    {
        T a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
        T w = random_tensor(rng, {2, 3});
        rows.push_back(
            checker.check("add", {&a, &b}, [&] { return weighted_sum(add(a, b), w); }));
        rows.push_back(
            checker.check("sub", {&a, &b}, [&] { return weighted_sum(sub(a, b), w); }));
        rows.push_back(
            checker.check("mul", {&a, &b}, [&] { return weighted_sum(mul(a, b), w); }));
    }
    {
        T a = random_tensor(rng, {2, 3}), s = random_tensor(rng, {1});
        T w = random_tensor(rng, {2, 3});
        rows.push_back(checker.check("add_scalar_broadcast", {&a, &s},
                                     [&] { return weighted_sum(add(a, s), w); }));
        rows.push_back(checker.check("sub_scalar_broadcast", {&s, &a},
                                     [&] { return weighted_sum(sub(s, a), w); }));
        rows.push_back(checker.check("mul_scalar_broadcast", {&a, &s},
                                     [&] { return weighted_sum(mul(s, a), w); }));
    }
    {
        T x = random_tensor(rng, {4, 3});
        T w = random_tensor(rng, {4, 3});
        rows.push_back(checker.check("scale", {&x},
                                     [&] { return weighted_sum(scale(x, 2.375), w); }));
    }
    {
        T x = random_tensor_off_kink(rng, {4, 4});
        T w = random_tensor(rng, {4, 4});
        rows.push_back(
            checker.check("relu", {&x}, [&] { return weighted_sum(relu(x), w); }));
        rows.push_back(
            checker.check("gelu", {&x}, [&] { return weighted_sum(gelu(x), w); }));
    }
    {
        T x = random_tensor(rng, {3, 4});
        T w = random_tensor(rng, {3, 4});
        rows.push_back(
            checker.check("sigmoid", {&x}, [&] { return weighted_sum(sigmoid(x), w); }));
        rows.push_back(checker.check("softmax_rows", {&x},
                                     [&] { return weighted_sum(softmax(x, 1), w); }));
        rows.push_back(checker.check("softmax_cols", {&x},
                                     [&] { return weighted_sum(softmax(x, 0), w); }));
    }
    {
        T x = random_tensor(rng, {6});
        T w = random_tensor(rng, {6});
        rows.push_back(checker.check("softmax_vector", {&x},
                                     [&] { return weighted_sum(softmax(x, 0), w); }));
    }
    {
        T a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {1, 3}), c = random_tensor(rng, {2, 3});
        T w = random_tensor(rng, {5, 3});
        rows.push_back(checker.check("concat_rows", {&a, &b, &c}, [&] {
            return weighted_sum(concat(std::vector<T>{a, b, c}, 0), w);
        }));
    }
    {
        T a = random_tensor(rng, {3, 2}), b = random_tensor(rng, {3, 4});
        T w = random_tensor(rng, {3, 6});
        rows.push_back(checker.check("concat_cols", {&a, &b},
                                     [&] { return weighted_sum(concat(a, b, 1), w); }));
    }
    {
        T x = random_tensor(rng, {3, 4});
        T w0 = random_tensor(rng, {4}), w1 = random_tensor(rng, {3});
        rows.push_back(checker.check("sum_reduce_all", {&x}, [&] { return sum_reduce(x); }));
        rows.push_back(checker.check("mean_reduce_all", {&x}, [&] { return mean_reduce(x); }));
        rows.push_back(checker.check("sum_reduce_axis0", {&x},
                                     [&] { return weighted_sum(sum_reduce(x, 0), w0); }));
        rows.push_back(checker.check("sum_reduce_axis1", {&x},
                                     [&] { return weighted_sum(sum_reduce(x, 1), w1); }));
        rows.push_back(checker.check("mean_reduce_axis0", {&x},
                                     [&] { return weighted_sum(mean_reduce(x, 0), w0); }));
    }
    {
        T x = random_tensor(rng, {4, 3}), v = random_tensor(rng, {3});
        T w = random_tensor(rng, {4, 3});
        rows.push_back(checker.check("add_rowvec", {&x, &v},
                                     [&] { return weighted_sum(add_rowvec(x, v), w); }));
    }
    {
        T x = random_tensor(rng, {5, 3});
        T w = random_tensor(rng, {2, 3});
        rows.push_back(checker.check("take_rows", {&x},
                                     [&] { return weighted_sum(take_rows(x, 1, 2), w); }));
    }
    {
        T x = random_tensor(rng, {4, 6}), gain = random_tensor(rng, {6}, 0.5, 1.5),
          bias = random_tensor(rng, {6});
        T w = random_tensor(rng, {4, 6});
        rows.push_back(checker.check("layer_norm", {&x, &gain, &bias}, [&] {
            return weighted_sum(layer_norm(x, gain, bias), w);
        }));
    }
    {
        T x = random_tensor(rng, {5, 4}), gain = random_tensor(rng, {4}, 0.5, 1.5),
          bias = random_tensor(rng, {4});
        T w = random_tensor(rng, {5, 4});
        RunningStats<double> stats{Tensor<double>({4}, 0.0), Tensor<double>({4}, 1.0)};
        rows.push_back(checker.check("batch_norm_train", {&x, &gain, &bias}, [&] {
            RunningStats<double> scratch{stats.mean.clone(), stats.var.clone()};
            return weighted_sum(batch_norm(x, gain, bias, scratch, true), w);
        }));
        rows.push_back(checker.check("batch_norm_eval", {&x, &gain, &bias}, [&] {
            return weighted_sum(batch_norm(x, gain, bias, stats, false), w);
        }));
    }
    {
        T x = random_tensor(rng, {4, 5});
        T w = random_tensor(rng, {4, 5});
        DropoutKey key{seed, 3, 1};
        rows.push_back(checker.check("dropout", {&x}, [&] {
            return weighted_sum(dropout(x, 0.3, true, key), w);
        }));
    }
    {
        T logits = random_tensor(rng, {4, 3});
        std::vector<int> labels{0, 2, 1, 2};
        rows.push_back(checker.check("cross_entropy", {&logits},
                                     [&] { return cross_entropy(logits, labels); }));
    }
    return rows;
}

} // namespace vhgnn
