#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vhgnn/errors.hpp"
#include "vhgnn/util.hpp"

namespace vhgnn {

template <class S>
class Tape;

/// Dense row-major tensor. Copies are shallow: they share the underlying
/// value buffer, which is treated as immutable once an op has consumed it.
/// Parameters additionally own a gradient slot that accumulates across
/// backward passes until zero_grad().
template <class S>
class Tensor {
    static_assert(std::is_floating_point_v<S>);

public:
    Tensor() : data_(std::make_shared<std::vector<S>>()) {}

    explicit Tensor(std::vector<std::size_t> shape, S fill = S(0))
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<S>>(count(shape_), fill)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<S> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<S>>(std::move(values))) {
        if (data_->size() != count(shape_)) {
            throw DimensionError("tensor: " + std::to_string(data_->size()) +
                                 " values do not fill shape " + shape_str(shape_));
        }
    }

    static Tensor param(std::vector<std::size_t> shape, std::vector<S> values) {
        Tensor t(std::move(shape), std::move(values));
        t.set_requires_grad(true);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_->size(); }

    std::span<const S> values() const { return {data_->data(), data_->size()}; }

    /// In-place access for initialization and optimizer updates. Must not be
    /// used on a tensor already recorded on a live tape.
    std::span<S> mutable_values() { return {data_->data(), data_->size()}; }

    const std::shared_ptr<std::vector<S>>& storage() const { return data_; }

    S at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }

    bool requires_grad() const { return requires_grad_; }

    void set_requires_grad(bool rg) {
        requires_grad_ = rg;
        if (rg && !grad_) grad_ = std::make_shared<std::vector<S>>(size(), S(0));
        if (!rg) grad_.reset();
    }

    /// Accumulated gradient; same shape as the tensor.
    std::span<S> grad() {
        if (!requires_grad_) throw ConfigError("grad() on a tensor with requires_grad=false");
        return {grad_->data(), grad_->size()};
    }
    std::span<const S> grad() const {
        if (!requires_grad_) throw ConfigError("grad() on a tensor with requires_grad=false");
        return {grad_->data(), grad_->size()};
    }

    const std::shared_ptr<std::vector<S>>& grad_slot() const { return grad_; }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
    }

    /// Deep copy: fresh value buffer (and gradient slot when trainable).
    Tensor clone() const {
        Tensor t(shape_, *data_);
        t.set_requires_grad(requires_grad_);
        return t;
    }

    // Tape bookkeeping. A node id is only meaningful together with the stamp
    // of the tape that issued it.
    int tape_node() const { return node_; }
    std::uint64_t tape_stamp() const { return stamp_; }
    void bind_node(std::uint64_t stamp, int node) {
        stamp_ = stamp;
        node_ = node;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::shared_ptr<std::vector<S>> data_;
    std::shared_ptr<std::vector<S>> grad_;
    bool requires_grad_ = false;
    std::uint64_t stamp_ = 0;
    int node_ = -1;
};

/// Reverse-mode record of one forward pass. Ops append themselves in
/// execution order, so inputs always precede the operation that consumes
/// them; backward() replays the list once, in reverse.
template <class S>
class Tape {
public:
    Tape() : id_(next_id()) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }

    static Tape*& current() {
        thread_local Tape* cur = nullptr;
        return cur;
    }

    /// Registers a leaf (parameter) tensor; the same storage always maps to
    /// the same node. Gradients flush into the tensor's grad slot.
    int leaf_node(const Tensor<S>& t) {
        const void* key = t.storage().get();
        auto it = leaves_.find(key);
        if (it != leaves_.end()) return it->second.node;
        int node = new_node(t.size());
        leaves_.emplace(key, LeafBinding{node, t.grad_slot()});
        return node;
    }

    int new_node(std::size_t size) {
        grads_.emplace_back(size, S(0));
        return static_cast<int>(grads_.size()) - 1;
    }

    void record(std::vector<int> inputs, int output, std::function<void(Tape&)> backward) {
        for (int in : inputs) {
            if (in >= output) throw ConfigError("tape: op input does not precede its output");
        }
        ops_.push_back(OpRec{std::move(inputs), output, std::move(backward)});
    }

    std::span<S> grad_buffer(int node) { return {grads_[node].data(), grads_[node].size()}; }

    std::size_t num_ops() const { return ops_.size(); }

    /// Seeds d(loss)/d(loss)=1 and sweeps the op list in reverse, visiting
    /// each recorded op exactly once. Leaf gradients accumulate into their
    /// tensors; calling again without zero_grad keeps accumulating.
    void backward(const Tensor<S>& loss) {
        if (loss.size() != 1) {
            throw DimensionError("backward: loss must be scalar, got shape " +
                                 shape_str(loss.shape()));
        }
        if (loss.tape_stamp() != id_ || loss.tape_node() < 0) {
            throw ConfigError("backward: loss is not connected to this tape");
        }
        for (auto& g : grads_) std::fill(g.begin(), g.end(), S(0));
        grads_[loss.tape_node()][0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward(*this);
        for (auto& kv : leaves_) {
            auto& dst = *kv.second.slot;
            const auto& src = grads_[kv.second.node];
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }

    /// Copy of the tape-internal gradient of any tensor recorded on this
    /// tape (valid after backward).
    std::vector<S> grad_of(const Tensor<S>& t) const {
        if (t.tape_stamp() != id_ || t.tape_node() < 0) {
            throw ConfigError("grad_of: tensor is not recorded on this tape");
        }
        return grads_[t.tape_node()];
    }

private:
    static std::uint64_t next_id() {
        static std::uint64_t counter = 0;
        return ++counter;
    }

    struct OpRec {
        std::vector<int> inputs;
        int output;
        std::function<void(Tape&)> backward;
    };
    struct LeafBinding {
        int node;
        std::shared_ptr<std::vector<S>> slot;
    };

    std::uint64_t id_;
    std::vector<std::vector<S>> grads_;
    std::vector<OpRec> ops_;
    std::unordered_map<const void*, LeafBinding> leaves_;
};

template <class S>
class TapeScope {
public:
    explicit TapeScope(Tape<S>& t) : prev_(Tape<S>::current()) { Tape<S>::current() = &t; }
    ~TapeScope() { Tape<S>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<S>* prev_;
};

namespace detail {

/// Live recording handle for one op. Null tape means nothing on the current
/// path needs gradients and the op can skip its closure entirely.
template <class S>
struct Recording {
    Tape<S>* tape = nullptr;
    std::vector<int> ids;
    int out = -1;
    explicit operator bool() const { return tape != nullptr; }
};

template <class S>
Recording<S> begin_record(Tensor<S>& out, const std::vector<const Tensor<S>*>& inputs) {
    Recording<S> rec;
    Tape<S>* tape = Tape<S>::current();
    if (!tape) return rec;
    rec.ids.reserve(inputs.size());
    bool any = false;
    for (const Tensor<S>* in : inputs) {
        int id = -1;
        if (in->tape_node() >= 0 && in->tape_stamp() == tape->id()) {
            id = in->tape_node();
        } else if (in->requires_grad()) {
            id = tape->leaf_node(*in);
        }
        any = any || id >= 0;
        rec.ids.push_back(id);
    }
    if (!any) return rec;
    rec.tape = tape;
    rec.out = tape->new_node(out.size());
    out.bind_node(tape->id(), rec.out);
    return rec;
}

template <class S>
Recording<S> begin_record(Tensor<S>& out, std::initializer_list<const Tensor<S>*> inputs) {
    std::vector<const Tensor<S>*> v(inputs);
    return begin_record(out, v);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Core ops. Each registers its backward rule when a tape is active.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n, S(0));
    {
        const S* pa = a.values().data();
        const S* pb = b.values().data();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const S av = pa[i * k + p];
                if (av == S(0)) continue;
                const S* brow = pb + p * n;
                S* orow = out.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    }
    Tensor<S> result({m, n}, std::move(out));
    if (auto rec = detail::begin_record(result, {&a, &b})) {
        auto adata = a.storage();
        auto bdata = b.storage();
        const int ia = rec.ids[0], ib = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            if (ia >= 0) {
                auto ga = tp.grad_buffer(ia); // m x k += g (m x n) . b^T (n x k)
                const S* pb = bdata->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const S gv = g[i * n + j];
                        if (gv == S(0)) continue;
                        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * pb[p * n + j];
                    }
            }
            if (ib >= 0) {
                auto gb = tp.grad_buffer(ib); // k x n += a^T (k x m) . g (m x n)
                const S* pa = adata->data();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const S av = pa[i * k + p];
                        if (av == S(0)) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
            }
        });
    }
    return result;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<S> out(m * n);
    auto v = x.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
    Tensor<S> result({n, m}, std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += g[j * m + i];
        });
    }
    return result;
}

namespace detail {

enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <class S>
Broadcast binary_mode(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::kNone;
    if (a.size() == 1) return Broadcast::kLeftScalar;
    if (b.size() == 1) return Broadcast::kRightScalar;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()) + " (only exact or scalar broadcast)");
}

} // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::binary_mode(a, b, "add");
    const auto& big = (mode == detail::Broadcast::kLeftScalar) ? b : a;
    std::vector<S> out(big.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S x = (mode == detail::Broadcast::kLeftScalar) ? va[0] : va[i];
        const S y = (mode == detail::Broadcast::kRightScalar) ? vb[0] : vb[i];
        out[i] = x + y;
    }
    Tensor<S> result(big.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&a, &b})) {
        const int ia = rec.ids[0], ib = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            if (ia >= 0) {
                auto ga = tp.grad_buffer(ia);
                if (mode == detail::Broadcast::kLeftScalar)
                    ga[0] += std::accumulate(g.begin(), g.end(), S(0));
                else
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (ib >= 0) {
                auto gb = tp.grad_buffer(ib);
                if (mode == detail::Broadcast::kRightScalar)
                    gb[0] += std::accumulate(g.begin(), g.end(), S(0));
                else
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return result;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::binary_mode(a, b, "sub");
    const auto& big = (mode == detail::Broadcast::kLeftScalar) ? b : a;
    std::vector<S> out(big.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S x = (mode == detail::Broadcast::kLeftScalar) ? va[0] : va[i];
        const S y = (mode == detail::Broadcast::kRightScalar) ? vb[0] : vb[i];
        out[i] = x - y;
    }
    Tensor<S> result(big.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&a, &b})) {
        const int ia = rec.ids[0], ib = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            if (ia >= 0) {
                auto ga = tp.grad_buffer(ia);
                if (mode == detail::Broadcast::kLeftScalar)
                    ga[0] += std::accumulate(g.begin(), g.end(), S(0));
                else
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (ib >= 0) {
                auto gb = tp.grad_buffer(ib);
                if (mode == detail::Broadcast::kRightScalar)
                    gb[0] -= std::accumulate(g.begin(), g.end(), S(0));
                else
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return result;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    const auto mode = detail::binary_mode(a, b, "mul");
    const auto& big = (mode == detail::Broadcast::kLeftScalar) ? b : a;
    std::vector<S> out(big.size());
    auto va = a.values(), vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S x = (mode == detail::Broadcast::kLeftScalar) ? va[0] : va[i];
        const S y = (mode == detail::Broadcast::kRightScalar) ? vb[0] : vb[i];
        out[i] = x * y;
    }
    Tensor<S> result(big.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&a, &b})) {
        auto adata = a.storage();
        auto bdata = b.storage();
        const int ia = rec.ids[0], ib = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            const auto& av = *adata;
            const auto& bv = *bdata;
            if (ia >= 0) {
                auto ga = tp.grad_buffer(ia);
                if (mode == detail::Broadcast::kLeftScalar) {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i] * bv[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * (mode == detail::Broadcast::kRightScalar ? bv[0] : bv[i]);
                }
            }
            if (ib >= 0) {
                auto gb = tp.grad_buffer(ib);
                if (mode == detail::Broadcast::kRightScalar) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * av[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb[i] += g[i] * (mode == detail::Broadcast::kLeftScalar ? av[0] : av[i]);
                }
            }
        });
    }
    return result;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    std::vector<S> out(x.size());
    auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * c;
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
        });
    }
    return result;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > S(0) ? v[i] : S(0);
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        auto xdata = x.storage();
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            const auto& xv = *xdata;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > S(0)) gx[i] += g[i];
        });
    }
    return result;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    std::vector<S> out(x.size());
    auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S z = v[i];
        out[i] = z >= S(0) ? S(1) / (S(1) + std::exp(-z))
                           : std::exp(z) / (S(1) + std::exp(z));
    }
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        auto ydata = result.storage();
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            const auto& y = *ydata;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (S(1) - y[i]);
        });
    }
    return result;
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    std::vector<S> out(x.size());
    auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = static_cast<double>(v[i]);
        out[i] = static_cast<S>(z * 0.5 * (1.0 + std::erf(z * inv_sqrt2)));
    }
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        auto xdata = x.storage();
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            const auto& xv = *xdata;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double z = static_cast<double>(xv[i]);
                const double cdf = 0.5 * (1.0 + std::erf(z * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * z * z);
                gx[i] += g[i] * static_cast<S>(cdf + z * pdf);
            }
        });
    }
    return result;
}

/// Max-shifted softmax along the given axis of a rank-1 or rank-2 tensor.
template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
    if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape()));
    }
    if (x.dim(axis) == 0) throw DimensionError("softmax: empty axis");

    const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
    const std::size_t cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
    // slices run along `axis`; for rank-1, axis 0 is the only choice.
    const bool along_cols = (x.rank() == 1) || axis == 1;
    const std::size_t nslices = along_cols ? rows : cols;
    const std::size_t slice_len = along_cols ? cols : rows;
    const std::size_t stride = along_cols ? 1 : cols;

    auto v = x.values();
    std::vector<S> out(x.size());
    for (std::size_t s = 0; s < nslices; ++s) {
        const std::size_t base = along_cols ? s * cols : s;
        S mx = v[base];
        for (std::size_t i = 1; i < slice_len; ++i) mx = std::max(mx, v[base + i * stride]);
        S denom = S(0);
        for (std::size_t i = 0; i < slice_len; ++i) {
            const S e = std::exp(v[base + i * stride] - mx);
            out[base + i * stride] = e;
            denom += e;
        }
        for (std::size_t i = 0; i < slice_len; ++i) out[base + i * stride] /= denom;
    }
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        auto ydata = result.storage();
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            const auto& y = *ydata;
            for (std::size_t s = 0; s < nslices; ++s) {
                const std::size_t base = along_cols ? s * cols : s;
                S dot = S(0);
                for (std::size_t i = 0; i < slice_len; ++i) {
                    const std::size_t k = base + i * stride;
                    dot += g[k] * y[k];
                }
                for (std::size_t i = 0; i < slice_len; ++i) {
                    const std::size_t k = base + i * stride;
                    gx[k] += y[k] * (g[k] - dot);
                }
            }
        });
    }
    return result;
}

/// Concatenates along axis 0 (rank-1 or rank-2) or axis 1 (rank-2).
template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const std::size_t rank = parts[0].rank();
    if (rank == 0 || rank > 2 || axis >= rank) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for rank " +
                             std::to_string(rank));
    }
    for (const auto& p : parts) {
        if (p.rank() != rank)
            throw DimensionError("concat: mixed ranks " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        for (std::size_t d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != parts[0].dim(d))
                throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) +
                                     " vs " + shape_str(p.shape()));
    }

    std::vector<std::size_t> shape = parts[0].shape();
    std::size_t total_axis = 0;
    for (const auto& p : parts) total_axis += p.dim(axis);
    shape[axis] = total_axis;

    std::vector<S> out;
    out.reserve([&] {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }());
    std::vector<std::size_t> offsets; // start of each part along `axis`
    if (axis == 0) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            offsets.push_back(off);
            auto v = p.values();
            out.insert(out.end(), v.begin(), v.end());
            off += p.dim(0);
        }
    } else {
        const std::size_t rows = shape[0];
        out.resize(rows * total_axis);
        std::size_t col_off = 0;
        for (const auto& p : parts) {
            offsets.push_back(col_off);
            const std::size_t pc = p.dim(1);
            auto v = p.values();
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(v.data() + r * pc, pc, out.data() + r * total_axis + col_off);
            col_off += pc;
        }
    }

    Tensor<S> result(std::move(shape), std::move(out));
    std::vector<const Tensor<S>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    if (auto rec = detail::begin_record(result, ptrs)) {
        std::vector<std::size_t> sizes, axis_dims;
        for (const auto& p : parts) {
            sizes.push_back(p.size());
            axis_dims.push_back(p.dim(axis));
        }
        const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
        const auto ids = rec.ids;
        const int io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                if (ids[pi] < 0) continue;
                auto gp = tp.grad_buffer(ids[pi]);
                if (axis == 0) {
                    const std::size_t start = [&] {
                        std::size_t s = 0;
                        for (std::size_t q = 0; q < pi; ++q) s += sizes[q];
                        return s;
                    }();
                    for (std::size_t i = 0; i < sizes[pi]; ++i) gp[i] += g[start + i];
                } else {
                    const std::size_t pc = axis_dims[pi];
                    const std::size_t col_off = offsets[pi];
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c)
                            gp[r * pc + c] += g[r * total_axis + col_off + c];
                }
            }
        });
    }
    return result;
}

template <class S>
Tensor<S> concat(const Tensor<S>& a, const Tensor<S>& b, std::size_t axis) {
    return concat(std::vector<Tensor<S>>{a, b}, axis);
}

template <class S>
Tensor<S> sum_reduce(const Tensor<S>& x) {
    auto v = x.values();
    S total = std::accumulate(v.begin(), v.end(), S(0));
    Tensor<S> result({1}, std::vector<S>{total});
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        const std::size_t n = x.size();
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            const S g = tp.grad_buffer(io)[0];
            auto gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return result;
}

template <class S>
Tensor<S> mean_reduce(const Tensor<S>& x) {
    if (x.size() == 0) throw DimensionError("mean_reduce: empty tensor");
    return scale(sum_reduce(x), S(1) / static_cast<S>(x.size()));
}

/// Rank-2 reduction along one axis: axis 0 collapses rows (result [cols]),
/// axis 1 collapses columns (result [rows]).
template <class S>
Tensor<S> sum_reduce(const Tensor<S>& x, std::size_t axis) {
    if (x.rank() != 2 || axis > 1) {
        throw DimensionError("sum_reduce: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    auto v = x.values();
    std::vector<S> out(axis == 0 ? cols : rows, S(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            out[axis == 0 ? c : r] += v[r * cols + c];
    const std::size_t out_len = out.size();
    Tensor<S> result({out_len}, std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[axis == 0 ? c : r];
        });
    }
    return result;
}

template <class S>
Tensor<S> mean_reduce(const Tensor<S>& x, std::size_t axis) {
    Tensor<S> s = sum_reduce(x, axis);
    const std::size_t len = axis == 0 ? x.dim(0) : x.dim(1);
    if (len == 0) throw DimensionError("mean_reduce: empty axis");
    return scale(s, S(1) / static_cast<S>(len));
}

/// Adds a length-n vector to every row of an m x n matrix.
template <class S>
Tensor<S> add_rowvec(const Tensor<S>& x, const Tensor<S>& v) {
    if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1)) {
        throw DimensionError("add_rowvec: shapes " + shape_str(x.shape()) + " and " +
                             shape_str(v.shape()) + " do not align");
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    std::vector<S> out(x.size());
    auto xv = x.values(), vv = v.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + vv[c];
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x, &v})) {
        const int ix = rec.ids[0], iv = rec.ids[1], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            if (ix >= 0) {
                auto gx = tp.grad_buffer(ix);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (iv >= 0) {
                auto gv = tp.grad_buffer(iv);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
            }
        });
    }
    return result;
}

/// Contiguous row slice [start, start+count) of a rank-2 tensor.
template <class S>
Tensor<S> take_rows(const Tensor<S>& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2 || start + count > x.dim(0)) {
        throw DimensionError("take_rows: rows [" + std::to_string(start) + "," +
                             std::to_string(start + count) + ") out of range for " +
                             shape_str(x.shape()));
    }
    const std::size_t cols = x.dim(1);
    auto v = x.values();
    std::vector<S> out(v.begin() + start * cols, v.begin() + (start + count) * cols);
    Tensor<S> result({count, cols}, std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < count * cols; ++i) gx[start * cols + i] += g[i];
        });
    }
    return result;
}

inline constexpr double kNormEps = 1e-5;

/// Per-row standardization then affine: gain * (x - mu)/sqrt(var + eps) + bias.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
    if (x.rank() != 2 || x.dim(1) == 0) {
        throw DimensionError("layer_norm: expected n x d with d >= 1, got " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (gain.shape() != std::vector<std::size_t>{d} || bias.shape() != std::vector<std::size_t>{d}) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                             shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    std::vector<S> out(x.size());
    auto xhat = std::make_shared<std::vector<S>>(x.size());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = xv.data() + r * d;
        S mean = S(0);
        for (std::size_t c = 0; c < d; ++c) mean += row[c];
        mean /= static_cast<S>(d);
        S var = S(0);
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<S>(d);
        const S inv = S(1) / std::sqrt(var + static_cast<S>(kNormEps));
        (*inv_std)[r] = inv;
        for (std::size_t c = 0; c < d; ++c) {
            const S xh = (row[c] - mean) * inv;
            (*xhat)[r * d + c] = xh;
            out[r * d + c] = xh * gv[c] + bv[c];
        }
    }
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x, &gain, &bias})) {
        auto gdata = gain.storage();
        const int ix = rec.ids[0], ig = rec.ids[1], ib = rec.ids[2], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            const auto& gq = *gdata;
            for (std::size_t r = 0; r < rows; ++r) {
                const S* gr = g.data() + r * d;
                const S* xh = xhat->data() + r * d;
                if (ig >= 0) {
                    auto gg = tp.grad_buffer(ig);
                    for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * xh[c];
                }
                if (ib >= 0) {
                    auto gb = tp.grad_buffer(ib);
                    for (std::size_t c = 0; c < d; ++c) gb[c] += gr[c];
                }
                if (ix >= 0) {
                    auto gx = tp.grad_buffer(ix);
                    S mean_gh = S(0), mean_ghx = S(0);
                    for (std::size_t c = 0; c < d; ++c) {
                        const S gh = gr[c] * gq[c];
                        mean_gh += gh;
                        mean_ghx += gh * xh[c];
                    }
                    mean_gh /= static_cast<S>(d);
                    mean_ghx /= static_cast<S>(d);
                    const S inv = (*inv_std)[r];
                    for (std::size_t c = 0; c < d; ++c) {
                        const S gh = gr[c] * gq[c];
                        gx[r * d + c] += inv * (gh - mean_gh - xh[c] * mean_ghx);
                    }
                }
            }
        });
    }
    return result;
}

/// Mutable per-feature running statistics owned by a batch-norm site.
template <class S>
struct RunningStats {
    Tensor<S> mean; // [d], requires_grad = false
    Tensor<S> var;  // [d]
};

/// Column-wise batch normalization over the rows of an n x d matrix.
/// Training mode uses batch statistics and folds them into the running
/// buffers with momentum 0.1; eval mode applies the running statistics.
template <class S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     RunningStats<S>& running, bool training, S momentum = S(0.1)) {
    if (x.rank() != 2 || x.dim(0) == 0) {
        throw DimensionError("batch_norm: expected non-empty n x d, got " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (gain.dim(0) != d || bias.dim(0) != d || running.mean.dim(0) != d || running.var.dim(0) != d) {
        throw DimensionError("batch_norm: parameter width does not match " + shape_str(x.shape()));
    }
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    std::vector<S> out(x.size());

    if (!training) {
        auto rm = running.mean.values();
        auto rv = running.var.values();
        std::vector<S> inv(d);
        for (std::size_t c = 0; c < d; ++c) inv[c] = S(1) / std::sqrt(rv[c] + static_cast<S>(kNormEps));
        auto xhat = std::make_shared<std::vector<S>>(x.size());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) {
                const S xh = (xv[r * d + c] - rm[c]) * inv[c];
                (*xhat)[r * d + c] = xh;
                out[r * d + c] = xh * gv[c] + bv[c];
            }
        Tensor<S> result(x.shape(), std::move(out));
        if (auto rec = detail::begin_record(result, {&x, &gain, &bias})) {
            auto gdata = gain.storage();
            auto invp = std::make_shared<std::vector<S>>(std::move(inv));
            const int ix = rec.ids[0], ig = rec.ids[1], ib = rec.ids[2], io = rec.out;
            rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
                auto g = tp.grad_buffer(io);
                const auto& gq = *gdata;
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                        const S gr = g[r * d + c];
                        if (ig >= 0) tp.grad_buffer(ig)[c] += gr * (*xhat)[r * d + c];
                        if (ib >= 0) tp.grad_buffer(ib)[c] += gr;
                        if (ix >= 0) tp.grad_buffer(ix)[r * d + c] += gr * gq[c] * (*invp)[c];
                    }
            });
        }
        return result;
    }

    // Batch statistics (population variance) per column.
    std::vector<S> mean(d, S(0)), var(d, S(0));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += xv[r * d + c];
    for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<S>(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            const S diff = xv[r * d + c] - mean[c];
            var[c] += diff * diff;
        }
    for (std::size_t c = 0; c < d; ++c) var[c] /= static_cast<S>(rows);

    {
        auto rm = running.mean.mutable_values();
        auto rv = running.var.mutable_values();
        for (std::size_t c = 0; c < d; ++c) {
            rm[c] = (S(1) - momentum) * rm[c] + momentum * mean[c];
            rv[c] = (S(1) - momentum) * rv[c] + momentum * var[c];
        }
    }

    auto xhat = std::make_shared<std::vector<S>>(x.size());
    auto inv_std = std::make_shared<std::vector<S>>(d);
    for (std::size_t c = 0; c < d; ++c)
        (*inv_std)[c] = S(1) / std::sqrt(var[c] + static_cast<S>(kNormEps));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            const S xh = (xv[r * d + c] - mean[c]) * (*inv_std)[c];
            (*xhat)[r * d + c] = xh;
            out[r * d + c] = xh * gv[c] + bv[c];
        }
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x, &gain, &bias})) {
        auto gdata = gain.storage();
        const int ix = rec.ids[0], ig = rec.ids[1], ib = rec.ids[2], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            const auto& gq = *gdata;
            for (std::size_t c = 0; c < d; ++c) {
                S col_g = S(0), col_gx = S(0);
                for (std::size_t r = 0; r < rows; ++r) {
                    const S gr = g[r * d + c];
                    col_g += gr;
                    col_gx += gr * (*xhat)[r * d + c];
                }
                if (ig >= 0) tp.grad_buffer(ig)[c] += col_gx;
                if (ib >= 0) tp.grad_buffer(ib)[c] += col_g;
                if (ix >= 0) {
                    auto gx = tp.grad_buffer(ix);
                    const S mean_g = col_g / static_cast<S>(rows);
                    const S mean_gx = col_gx / static_cast<S>(rows);
                    const S scale_c = gq[c] * (*inv_std)[c];
                    for (std::size_t r = 0; r < rows; ++r) {
                        const S gr = g[r * d + c];
                        gx[r * d + c] +=
                            scale_c * (gr - mean_g - (*xhat)[r * d + c] * mean_gx);
                    }
                }
            }
        });
    }
    return result;
}

/// Dropout key: masks are a pure function of it, so replays are bit-stable.
struct DropoutKey {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t layer = 0;
};

template <class S>
Tensor<S> dropout(const Tensor<S>& x, double rate, bool training, DropoutKey key = {}) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;

    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<S>>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        (*mask)[i] = counter_uniform(key.seed, key.epoch, key.layer, i) >= rate ? keep_scale : S(0);
    }
    std::vector<S> out(x.size());
    auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * (*mask)[i];
    Tensor<S> result(x.shape(), std::move(out));
    if (auto rec = detail::begin_record(result, {&x})) {
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            auto g = tp.grad_buffer(io);
            auto gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
        });
    }
    return result;
}

/// Mean over the batch of -log softmax(logits)[label], stabilized by
/// row-max shifting. Backward is (softmax - one_hot)/batch.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) {
        throw DimensionError("cross_entropy: logits must be B x C, got " + shape_str(logits.shape()));
    }
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                             std::to_string(batch));
    }
    for (int lab : labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= classes) {
            throw DataError("cross_entropy: label " + std::to_string(lab) + " outside [0," +
                            std::to_string(classes) + ")");
        }
    }
    auto v = logits.values();
    auto probs = std::make_shared<std::vector<S>>(logits.size());
    S total = S(0);
    for (std::size_t b = 0; b < batch; ++b) {
        const S* row = v.data() + b * classes;
        S mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        S denom = S(0);
        for (std::size_t c = 0; c < classes; ++c) {
            const S e = std::exp(row[c] - mx);
            (*probs)[b * classes + c] = e;
            denom += e;
        }
        for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] /= denom;
        total += std::log(denom) + mx - row[labels[b]];
    }
    Tensor<S> result({1}, std::vector<S>{total / static_cast<S>(batch)});
    if (auto rec = detail::begin_record(result, {&logits})) {
        auto labs = std::make_shared<std::vector<int>>(labels);
        const int ix = rec.ids[0], io = rec.out;
        rec.tape->record(rec.ids, io, [=](Tape<S>& tp) {
            const S g = tp.grad_buffer(io)[0];
            auto gx = tp.grad_buffer(ix);
            const S invb = S(1) / static_cast<S>(batch);
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t c = 0; c < classes; ++c) {
                    S delta = (*probs)[b * classes + c];
                    if (static_cast<std::size_t>((*labs)[b]) == c) delta -= S(1);
                    gx[b * classes + c] += g * delta * invb;
                }
        });
    }
    return result;
}

} // namespace vhgnn
