#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mgfte/gradcheck.hpp"
#include "mgfte/rng.hpp"
#include "mgfte/tape.hpp"
#include "mgfte/tensor.hpp"

using namespace mgfte;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(r, c);
    for (auto& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

/// Checks reverse-mode gradients of a tape-built scalar against central
/// differences for every input tensor.
void check_op_gradients(const std::vector<Tensor>& inputs,
                        const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                        double tol = 1e-6) {
    std::vector<Tensor> work = inputs;
    auto loss_at = [&]() {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& t : work) vars.push_back(tape.leaf(t));
        return tape.value(build(tape, vars)).item();
    };
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : work) vars.push_back(tape.leaf(t));
    Var loss = build(tape, vars);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < work.size(); ++i) {
        analytic.push_back(tape.grad(vars[i]));
        refs.push_back({"input" + std::to_string(i), &work[i]});
    }
    GradCheckReport report = grad_check(refs, analytic, loss_at);
    CAPTURE(report.worst.param);
    CAPTURE(report.worst.index);
    CAPTURE(report.worst.analytic);
    CAPTURE(report.worst.numeric);
    CHECK(report.ok(tol));
}

/// Folds any matrix to a scalar with nonuniform weights so gradient checks
/// exercise every output entry.
Var weighted_sum(Tape& tape, Var m) {
    const Tensor& v = tape.value(m);
    Tensor w = Tensor::zeros(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.data.size(); ++i) w.data[i] = 0.3 + 0.17 * double(i);
    Var prod = tape.hadamard(m, tape.constant(w));
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t c = 0; c < v.cols(); ++c) cells.emplace_back(r, c);
    return tape.sum_picks(prod, cells);
}

}  // namespace

TEST_CASE("softmax_axis spec examples") {
    Tensor zeros({2, 2}, {0, 0, 0, 0});
    Tensor sm = softmax_axis(zeros, Axis::rows);
    for (double v : sm.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    Tensor one_row({1, 2}, {0.0, std::log(3.0)});
    Tensor sm2 = softmax_axis(one_row, Axis::rows);
    CHECK(sm2.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sm2.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

    Tensor big({1, 2}, {1000.0, 1000.0});
    Tensor sm3 = softmax_axis(big, Axis::rows);
    CHECK(sm3.all_finite());
    CHECK(sm3.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax_axis column mode and slice sums") {
    Rng rng(7);
    Tensor x = random_tensor(4, 3, rng, 1000.0);
    Tensor rows = softmax_axis(x, Axis::rows);
    Tensor cols = softmax_axis(x, Axis::cols);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(rows.at(r, c) >= 0.0);
            s += rows.at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t r = 0; r < 4; ++r) s += cols.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("softmax_axis rejects non-rank-2") {
    Tensor bad({4}, {1, 2, 3, 4});
    CHECK_THROWS_AS(softmax_axis(bad, Axis::rows), std::invalid_argument);
}

TEST_CASE("sq_euclidean examples and symmetry") {
    std::vector<double> v = {1.5, -2.0, 3.25};
    CHECK(sq_euclidean(v, v) == 0.0);
    CHECK(sq_euclidean<double>({0, 0}, {3, 4}) == 25.0);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x(5), y(5);
        for (auto& e : x) e = rng.uniform(-2, 2);
        for (auto& e : y) e = rng.uniform(-2, 2);
        CHECK(sq_euclidean(x, y) == sq_euclidean(y, x));
        CHECK(sq_euclidean(x, y) >= 0.0);
    }
    CHECK_THROWS_AS(sq_euclidean<double>({1, 2}, {1}), std::invalid_argument);
}

TEST_CASE("logsumexp examples and bounds") {
    CHECK(logsumexp<double>({0, 0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(logsumexp<double>({1000, 1000}) ==
          doctest::Approx(1000 + std::log(2.0)).epsilon(1e-12));
    CHECK(logsumexp<double>({-3.5}) == -3.5);
    CHECK_THROWS_AS(logsumexp<double>({}), std::invalid_argument);

    double neg_inf = -std::numeric_limits<double>::infinity();
    CHECK(logsumexp<double>({neg_inf, 2.0}) == doctest::Approx(2.0).epsilon(1e-12));

    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        std::size_t n = 1 + rng.index(6);
        std::vector<double> x(n);
        double mx = -1e18;
        for (auto& e : x) {
            e = rng.uniform(-100, 100);
            mx = std::max(mx, e);
        }
        double l = logsumexp(x);
        CHECK(l >= mx);
        CHECK(l <= mx + std::log(double(n)) + 1e-12);
    }
}

TEST_CASE("forward ops are deterministic") {
    Rng rng(5);
    Tensor x = random_tensor(3, 4, rng);
    Tensor a = softmax_axis(x, Axis::rows);
    Tensor b = softmax_axis(x, Axis::rows);
    CHECK(a == b);
}

TEST_CASE("tape: gradient of sum of losses equals sum of gradients") {
    Rng rng(21);
    Tensor w = random_tensor(2, 3, rng);
    auto grad_of = [&](int which) {
        Tape tape;
        Var wv = tape.leaf(w);
        Var l1 = tape.sum_picks(tape.hadamard(wv, wv), {{0, 0}, {1, 2}});
        Var l2 = tape.sum_picks(tape.relu(wv), {{0, 1}, {1, 0}});
        Var loss = which == 0 ? l1 : which == 1 ? l2 : tape.add(l1, l2);
        tape.backward(loss);
        return tape.grad(wv);
    };
    Tensor g1 = grad_of(0), g2 = grad_of(1), gsum = grad_of(2);
    for (std::size_t i = 0; i < gsum.data.size(); ++i)
        CHECK(gsum.data[i] == doctest::Approx(g1.data[i] + g2.data[i]).epsilon(1e-12));
}

TEST_CASE("tape: zero gradient off the loss path") {
    Rng rng(22);
    Tensor a = random_tensor(2, 2, rng);
    Tensor b = random_tensor(2, 2, rng);
    Tape tape;
    Var av = tape.leaf(a);
    Var bv = tape.leaf(b);  // never used by the loss
    Var loss = tape.sum_picks(tape.hadamard(av, av), {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
    tape.backward(loss);
    (void)bv;
    for (double g : tape.grad(bv).data) CHECK(g == 0.0);
}

TEST_CASE("tape: backward only runs once") {
    Tape tape;
    Var w = tape.leaf(Tensor::scalar(2.0));
    Var loss = tape.hadamard(w, w);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
}

TEST_CASE("relu subgradient at exactly zero is zero") {
    Tape tape;
    Var w = tape.leaf(Tensor({1, 3}, {-1.0, 0.0, 2.0}));
    Var loss = tape.sum_picks(tape.relu(w), {{0, 0}, {0, 1}, {0, 2}});
    tape.backward(loss);
    const Tensor& g = tape.grad(w);
    CHECK(g.data[0] == 0.0);
    CHECK(g.data[1] == 0.0);
    CHECK(g.data[2] == 1.0);
}

TEST_CASE("max-pool gradient routes to first maximal row") {
    Tape tape;
    Var x = tape.leaf(Tensor({3, 2}, {5.0, 1.0, 5.0, 3.0, 2.0, 3.0}));
    Var pooled = tape.max_pool_cols(x);
    Var loss = tape.sum_picks(pooled, {{0, 0}, {0, 1}});
    tape.backward(loss);
    const Tensor& g = tape.grad(x);
    // col 0: rows 0 and 1 tie at 5 -> row 0; col 1: rows 1 and 2 tie at 3 -> row 1.
    CHECK(g.at(0, 0) == 1.0);
    CHECK(g.at(1, 0) == 0.0);
    CHECK(g.at(1, 1) == 1.0);
    CHECK(g.at(2, 1) == 0.0);
}

TEST_CASE("grad_check: linear loss is exact") {
    Rng rng(31);
    Tensor w = random_tensor(1, 6, rng);
    Tensor x = random_tensor(1, 6, rng);
    auto loss_at = [&]() {
        double acc = 0;
        for (std::size_t i = 0; i < 6; ++i) acc += w.data[i] * x.data[i];
        return acc;
    };
    GradCheckReport report = grad_check({{"w", &w}}, {x}, loss_at);
    CHECK(report.entries_checked == 6);
    CHECK(report.ok(1e-8));
}

TEST_CASE("grad_check: quadratic loss gradient is 2w") {
    Rng rng(32);
    Tensor w = random_tensor(2, 3, rng);
    auto loss_at = [&]() {
        double acc = 0;
        for (double v : w.data) acc += v * v;
        return acc;
    };
    Tensor analytic = w;
    for (auto& v : analytic.data) v *= 2.0;
    GradCheckReport report = grad_check({{"w", &w}}, {analytic}, loss_at);
    CHECK(report.ok(1e-8));
}

TEST_CASE("grad_check reports non-finite losses instead of swallowing them") {
    Tensor w = Tensor({1, 1}, {0.0});
    auto loss_at = [&]() { return std::log(w.data[0]); };  // nan on negative side
    GradCheckReport report = grad_check({{"w", &w}}, {Tensor::scalar(0.0)}, loss_at);
    CHECK_FALSE(report.issues.empty());
    CHECK_FALSE(report.ok(1.0));
}

TEST_CASE("per-op gradients pass finite-difference checks") {
    Rng rng(41);
    SUBCASE("matmul chain") {
        check_op_gradients(
            {random_tensor(3, 4, rng), random_tensor(4, 2, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.matmul(v[0], v[1]));
            });
    }
    SUBCASE("matmul_nt") {
        check_op_gradients(
            {random_tensor(3, 4, rng), random_tensor(5, 4, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.matmul_nt(v[0], v[1]));
            });
    }
    SUBCASE("matmul_tn") {
        check_op_gradients(
            {random_tensor(4, 3, rng), random_tensor(4, 2, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.matmul_tn(v[0], v[1]));
            });
    }
    SUBCASE("hadamard, absdiff, relu") {
        check_op_gradients(
            {random_tensor(2, 3, rng), random_tensor(2, 3, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                Var h = t.hadamard(v[0], v[1]);
                Var a = t.absdiff(v[0], v[1]);
                return weighted_sum(t, t.relu(t.add(h, a)));
            });
    }
    SUBCASE("softmax rows and cols") {
        check_op_gradients({random_tensor(3, 4, rng)},
                           [](Tape& t, const std::vector<Var>& v) {
                               return weighted_sum(
                                   t, t.add(t.softmax_rows(v[0]), t.softmax_cols(v[0])));
                           });
    }
    SUBCASE("logsumexp vec and cols") {
        check_op_gradients({random_tensor(3, 4, rng)},
                           [](Tape& t, const std::vector<Var>& v) {
                               Var lse = t.logsumexp_cols(v[0]);
                               return t.add(t.logsumexp_vec(lse),
                                            t.logsumexp_vec(t.row(v[0], 1)));
                           });
    }
    SUBCASE("pooling and concat") {
        check_op_gradients({random_tensor(4, 3, rng)},
                           [](Tape& t, const std::vector<Var>& v) {
                               Var pooled = t.concat_cols(
                                   {t.max_pool_cols(v[0]), t.mean_pool_cols(v[0])});
                               return weighted_sum(t, pooled);
                           });
    }
    SUBCASE("pairwise_neg_sqdist") {
        check_op_gradients(
            {random_tensor(3, 4, rng), random_tensor(2, 4, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return weighted_sum(t, t.pairwise_neg_sqdist(v[0], v[1]));
            });
    }
    SUBCASE("embedding gather with repeated ids") {
        check_op_gradients({random_tensor(5, 3, rng)},
                           [](Tape& t, const std::vector<Var>& v) {
                               return weighted_sum(t, t.embedding_rows(v[0], {1, 3, 1, 0}));
                           });
    }
    SUBCASE("broadcast adds, block, transpose, stack") {
        check_op_gradients(
            {random_tensor(3, 3, rng), random_tensor(1, 3, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                Var m = t.add_rowvec(t.add_colvec(v[0], v[1]), v[1]);
                Var b = t.block(m, 1, 0, 2, 3);
                Var s = t.stack_rows({t.row(b, 0), t.row(b, 1), v[1]});
                return weighted_sum(t, t.transpose(s));
            });
    }
    SUBCASE("scaling and means") {
        check_op_gradients(
            {random_tensor(1, 1, rng), random_tensor(1, 1, rng)},
            [](Tape& t, const std::vector<Var>& v) {
                return t.mean_of({t.add_scaled(v[0], v[1], 2.5), t.scale(v[1], -0.5), v[0]});
            });
    }
    SUBCASE("sum_selected_rows with duplicates") {
        check_op_gradients({random_tensor(4, 3, rng)},
                           [](Tape& t, const std::vector<Var>& v) {
                               return weighted_sum(t, t.sum_selected_rows(v[0], {0, 2, 2}));
                           });
    }
}

TEST_CASE("tape op shape violations are rejected") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros(2, 3));
    Var b = tape.leaf(Tensor::zeros(2, 2));
    CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS(tape.pairwise_neg_sqdist(a, b), std::invalid_argument);
    CHECK_THROWS_AS(tape.row(a, 5), std::invalid_argument);
    CHECK_THROWS_AS(tape.concat_cols({a, b}), std::invalid_argument);
    CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);  // non-scalar loss
}
