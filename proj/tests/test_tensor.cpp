#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <random>

#include "vhgnn/gradcheck.hpp"
#include "vhgnn/tensor.hpp"

using namespace vhgnn;

namespace {

using T32 = Tensor<float>;
using T64 = Tensor<double>;

T64 make(std::vector<std::size_t> shape, std::vector<double> vals) {
    return T64(std::move(shape), std::move(vals));
}

} // namespace

TEST_CASE("tensor construction and shape checks") {
    T64 t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(t.values()[5] == 0.0);

    CHECK_THROWS_AS(make({2, 2}, {1.0, 2.0, 3.0}), DimensionError);

    T64 filled({2}, {1.5, -2.5});
    CHECK(filled.values()[0] == 1.5);
    CHECK(filled.values()[1] == -2.5);
}

TEST_CASE("copies share storage, clone does not") {
    T64 a({2}, {1.0, 2.0});
    T64 b = a;
    CHECK(a.storage().get() == b.storage().get());
    T64 c = a.clone();
    CHECK(a.storage().get() != c.storage().get());
    c.mutable_values()[0] = 9.0;
    CHECK(a.values()[0] == 1.0);
}

TEST_CASE("matmul matches hand-computed product") {
    T64 a = make({2, 2}, {1, 2, 3, 4});
    T64 b = make({2, 2}, {5, 6, 7, 8});
    T64 c = matmul(a, b);
    CHECK(c.values()[0] == doctest::Approx(19.0));
    CHECK(c.values()[1] == doctest::Approx(22.0));
    CHECK(c.values()[2] == doctest::Approx(43.0));
    CHECK(c.values()[3] == doctest::Approx(50.0));

    CHECK_THROWS_AS(matmul(a, make({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("transpose is an involution") {
    T64 x = make({2, 3}, {1, 2, 3, 4, 5, 6});
    T64 t = transpose(x);
    CHECK(t.shape() == std::vector<std::size_t>{3, 2});
    CHECK(t.at(0, 1) == 4.0);
    T64 tt = transpose(t);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(tt.values()[i] == x.values()[i]);
}

TEST_CASE("softmax of [1,2,3] reproduces the frozen reference") {
    T64 x = make({3}, {1.0, 2.0, 3.0});
    T64 y = softmax(x, 0);
    // Reference computed with exact exponentials: exp(1), exp(2), exp(3)
    // normalized by their sum.
    CHECK(y.values()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-5));
    CHECK(y.values()[1] == doctest::Approx(0.24472847105479764).epsilon(1e-5));
    CHECK(y.values()[2] == doctest::Approx(0.66524095577482190).epsilon(1e-5));
}

TEST_CASE("softmax rows sum to one even for extreme magnitudes") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-50.0, 50.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> vals(4 * 6);
        for (auto& v : vals) v = dist(rng);
        T64 x({4, 6}, vals);
        T64 y = softmax(x, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 6; ++c) s += y.at(r, c);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            for (std::size_t c = 0; c < 6; ++c) CHECK(y.at(r, c) >= 0.0);
        }
    }
}

TEST_CASE("softmax along axis 0 normalizes columns") {
    T64 x = make({2, 2}, {0.0, 10.0, 0.0, -10.0});
    T64 y = softmax(x, 0);
    CHECK(y.at(0, 0) + y.at(1, 0) == doctest::Approx(1.0));
    CHECK(y.at(0, 1) + y.at(1, 1) == doctest::Approx(1.0));
    CHECK(y.at(0, 1) > 0.999); // 10 dominates -10 in column 1
}

TEST_CASE("backward of sum(w) is all ones") {
    T64 w = make({4}, {0.3, -1.2, 5.0, 0.0});
    w.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum_reduce(w));
    for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of sum(w*w) at w=[1,2] is [2,4]") {
    T64 w = make({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum_reduce(mul(w, w)));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("gradients accumulate until zero_grad") {
    T64 w = make({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    for (int pass = 0; pass < 2; ++pass) {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        tape.backward(sum_reduce(mul(w, w)));
    }
    CHECK(w.grad()[0] == doctest::Approx(4.0));
    CHECK(w.grad()[1] == doctest::Approx(8.0));
    w.zero_grad();
    CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar and disconnected losses") {
    T64 w = make({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T64 y = mul(w, w);
    CHECK_THROWS_AS(tape.backward(y), DimensionError);

    T64 constant = make({1}, {3.0}); // never recorded
    CHECK_THROWS_AS(tape.backward(constant), ConfigError);
}

TEST_CASE("ops run untaped when no tape is active") {
    T64 w = make({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    T64 y = mul(w, w);
    CHECK(y.tape_node() == -1);
}

TEST_CASE("broadcast rules: exact shape or single-element only") {
    T64 a = make({2, 2}, {1, 2, 3, 4});
    T64 s = make({1}, {10.0});
    T64 bad = make({2}, {1.0, 2.0});

    T64 y = add(a, s);
    CHECK(y.values()[3] == doctest::Approx(14.0));
    T64 z = mul(s, a);
    CHECK(z.values()[2] == doctest::Approx(30.0));
    T64 d = sub(s, a);
    CHECK(d.values()[0] == doctest::Approx(9.0));

    CHECK_THROWS_AS(add(a, bad), DimensionError);
    CHECK_THROWS_AS(mul(a, bad), DimensionError);
}

TEST_CASE("concat joins and take_rows splits") {
    T64 a = make({1, 3}, {1, 2, 3});
    T64 b = make({2, 3}, {4, 5, 6, 7, 8, 9});
    T64 cat = concat(a, b, 0);
    CHECK(cat.shape() == std::vector<std::size_t>{3, 3});
    CHECK(cat.at(2, 2) == 9.0);

    T64 back = take_rows(cat, 1, 2);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.values()[i] == b.values()[i]);

    T64 side = concat(b, b, 1);
    CHECK(side.shape() == std::vector<std::size_t>{2, 6});
    CHECK(side.at(1, 5) == 9.0);

    CHECK_THROWS_AS(concat(a, make({1, 2}, {1, 2}), 0), DimensionError);
    CHECK_THROWS_AS(take_rows(cat, 2, 2), DimensionError);
}

TEST_CASE("reductions") {
    T64 x = make({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_reduce(x).values()[0] == doctest::Approx(21.0));
    CHECK(mean_reduce(x).values()[0] == doctest::Approx(3.5));

    T64 cols = sum_reduce(x, 0);
    CHECK(cols.shape() == std::vector<std::size_t>{3});
    CHECK(cols.values()[0] == doctest::Approx(5.0));
    CHECK(cols.values()[2] == doctest::Approx(9.0));

    T64 rows = sum_reduce(x, 1);
    CHECK(rows.shape() == std::vector<std::size_t>{2});
    CHECK(rows.values()[1] == doctest::Approx(15.0));

    T64 mrows = mean_reduce(x, 1);
    CHECK(mrows.values()[0] == doctest::Approx(2.0));
}

TEST_CASE("layer_norm standardizes each row") {
    T64 x = make({2, 4}, {1, 2, 3, 4, -10, 0, 10, 20});
    T64 gain({4}, 1.0);
    T64 bias({4}, 0.0);
    T64 y = layer_norm(x, gain, bias);
    for (std::size_t r = 0; r < 2; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t c = 0; c < 4; ++c) mean += y.at(r, c);
        mean /= 4.0;
        for (std::size_t c = 0; c < 4; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= 4.0;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("batch_norm training updates running stats with momentum 0.1") {
    T64 x = make({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
    T64 gain({2}, 1.0);
    T64 bias({2}, 0.0);
    RunningStats<double> stats{Tensor<double>({2}, 0.0), Tensor<double>({2}, 1.0)};

    T64 y = batch_norm(x, gain, bias, stats, true);
    // column means 2.5 / 25, population vars 1.25 / 125
    CHECK(stats.mean.values()[0] == doctest::Approx(0.25));
    CHECK(stats.mean.values()[1] == doctest::Approx(2.5));
    CHECK(stats.var.values()[0] == doctest::Approx(0.9 + 0.125));
    CHECK(stats.var.values()[1] == doctest::Approx(0.9 + 12.5));
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < 4; ++r) mean += y.at(r, c);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    }

    // Eval mode applies the running stats verbatim.
    T64 z = batch_norm(x, gain, bias, stats, false);
    const double expect = (1.0 - 0.25) / std::sqrt(1.025 + 1e-5);
    CHECK(z.at(0, 0) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("dropout modes") {
    T64 x = make({1, 8}, {1, 1, 1, 1, 1, 1, 1, 1});
    CHECK_THROWS_AS(dropout(x, 1.0, true), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true), ConfigError);

    T64 eval = dropout(x, 0.5, false);
    CHECK(eval.storage().get() == x.storage().get()); // identity passthrough

    DropoutKey key{42, 1, 2};
    T64 a = dropout(x, 0.5, true, key);
    T64 b = dropout(x, 0.5, true, key);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
    for (double v : a.values()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));

    // Different key, different mask (overwhelmingly likely on 64 elements).
    T64 big({1, 64}, 1.0);
    T64 m1 = dropout(big, 0.5, true, DropoutKey{1, 0, 0});
    T64 m2 = dropout(big, 0.5, true, DropoutKey{2, 0, 0});
    bool differ = false;
    for (std::size_t i = 0; i < big.size(); ++i) differ |= m1.values()[i] != m2.values()[i];
    CHECK(differ);
}

TEST_CASE("cross_entropy of uniform logits is ln(C)") {
    T64 logits({3, 4}, 0.0);
    T64 loss = cross_entropy(logits, {0, 1, 3});
    CHECK(loss.values()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), DimensionError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1, 4}), DataError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, -1, 2}), DataError);
}

TEST_CASE("cross_entropy on a confident correct prediction is near zero") {
    T64 logits = make({1, 3}, {50.0, 0.0, 0.0});
    T64 loss = cross_entropy(logits, {0});
    CHECK(loss.values()[0] < 1e-6);
}

TEST_CASE("finite differences confirm every op gradient") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        auto rows = op_gradcheck_rows(seed);
        REQUIRE(all_passed(rows) == true);
        for (const auto& row : rows) {
            CHECK_MESSAGE(row.pass, row.name, " seed=", seed, " max_rel=", row.max_rel_err);
        }
    }
}

TEST_CASE("taped computation is bit-identical across repeat runs") {
    auto run = [](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        auto rand_vec = [&](std::size_t n) {
            std::vector<double> v(n);
            for (auto& x : v) x = dist(rng);
            return v;
        };
        T64 x({4, 3}, rand_vec(12));
        T64 w({3, 3}, rand_vec(9));
        w.set_requires_grad(true);
        T64 gain({3}, 1.0), bias({3}, 0.0);

        Tape<double> tape;
        TapeScope<double> scope(tape);
        T64 h = relu(matmul(x, w));
        T64 n = layer_norm(h, gain, bias);
        T64 p = softmax(n, 1);
        T64 loss = mean_reduce(mul(p, p));
        tape.backward(loss);

        std::vector<double> out(loss.values().begin(), loss.values().end());
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto a = run(123);
    auto b = run(123);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]); // exact, not approx
}

TEST_CASE("grad_of exposes intermediate gradients") {
    T64 w = make({2}, {3.0, 4.0});
    w.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T64 y = mul(w, w);
    T64 loss = sum_reduce(y);
    tape.backward(loss);
    auto gy = tape.grad_of(y);
    CHECK(gy[0] == doctest::Approx(1.0));
    CHECK(gy[1] == doctest::Approx(1.0));

    T64 stranger = make({1}, {0.0});
    CHECK_THROWS_AS(tape.grad_of(stranger), ConfigError);
}

TEST_CASE("float and double instantiations agree on small inputs") {
    T32 a({2, 2}, {1.f, 2.f, 3.f, 4.f});
    T32 b({2, 2}, {0.5f, -0.5f, 1.f, 1.f});
    T32 c = matmul(a, b);
    CHECK(c.values()[0] == doctest::Approx(2.5f));

    T32 s = softmax(T32({2}, {0.f, 0.f}), 0);
    CHECK(s.values()[0] == doctest::Approx(0.5f));
}
