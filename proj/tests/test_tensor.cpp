#include <cmath>

#include "doctest.h"
#include "ptu/grad_check.hpp"
#include "ptu/ops.hpp"
#include "ptu/rng.hpp"
#include "ptu/tensor.hpp"
#include "ptu/verify.hpp"

using namespace ptu;

namespace {

struct F64Guard {
    Precision saved = precision();
    F64Guard() { set_precision(Precision::f64); }
    ~F64Guard() { set_precision(saved); }
};

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor invariants") {
    F64Guard g;
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from({1}, {std::nan("")}), ValueError);
    CHECK_THROWS_AS(Tensor::from({1}, {INFINITY}), ValueError);

    // Op results are immutable; leaves can be overwritten in place.
    Tensor r = ops::add(t, t);
    CHECK_THROWS_AS(r.overwrite_values({0, 0, 0, 0, 0, 0}), ValueError);
    Tensor leaf = Tensor::zeros({2});
    leaf.overwrite_values({1.0, 2.0});
    CHECK(leaf.values()[1] == 2.0);
}

TEST_CASE("matmul examples") {
    F64Guard g;
    // identity passthrough is bitwise in 64-bit mode
    Tensor a = Tensor::from({2, 2}, {1.25, -3.5, 0.125, 7.75});
    Tensor out = ops::matmul(a, Tensor::identity(2));
    for (int i = 0; i < 4; ++i) CHECK(out.values()[i] == a.values()[i]);

    // hand-arithmetic oracle
    Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor c = Tensor::from({2, 1}, {5, 6});
    Tensor prod = ops::matmul(b, c);
    CHECK(prod.values()[0] == doctest::Approx(17.0));
    CHECK(prod.values()[1] == doctest::Approx(39.0));

    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul identity bitwise across random matrices") {
    F64Guard g;
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const int64_t n = 1 + static_cast<int64_t>(rng.below(8));
        Tensor a = Tensor::randn({n, n}, rng, 1.0);
        Tensor out = ops::matmul(a, Tensor::identity(n));
        for (int64_t i = 0; i < n * n; ++i) CHECK(out.values()[i] == a.values()[i]);
    }
}

TEST_CASE("softmax examples") {
    F64Guard g;
    Tensor flat = ops::softmax(Tensor::from({3}, {0, 0, 0}), 0);
    for (int i = 0; i < 3; ++i) CHECK(flat.values()[i] == doctest::Approx(1.0 / 3.0));

    Tensor lg = ops::softmax(Tensor::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}), 0);
    CHECK(lg.values()[0] == doctest::Approx(1.0 / 6.0));
    CHECK(lg.values()[1] == doctest::Approx(2.0 / 6.0));
    CHECK(lg.values()[2] == doctest::Approx(3.0 / 6.0));

    CHECK_THROWS_AS(ops::softmax(Tensor::from({3}, {0, 0, 0}), 2), ShapeError);
}

TEST_CASE("softmax shift invariance and normalization") {
    F64Guard g;
    Rng rng(23);
    for (int t = 0; t < 50; ++t) {
        const int64_t n = 2 + static_cast<int64_t>(rng.below(6));
        std::vector<double> v(static_cast<size_t>(n * 3));
        for (double& x : v) x = rng.uniform(-5, 5);
        Tensor x = Tensor::from({3, n}, v);
        const double c = rng.uniform(-100, 100);
        std::vector<double> shifted = v;
        for (double& s : shifted) s += c;
        Tensor y = ops::softmax(x, 1);
        Tensor ys = ops::softmax(Tensor::from({3, n}, shifted), 1);
        for (int64_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double p = y.values()[static_cast<size_t>(r * n + i)];
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                CHECK(p == doctest::Approx(ys.values()[static_cast<size_t>(r * n + i)]).epsilon(1e-9));
                sum += p;
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("layer_norm examples") {
    F64Guard g;
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::full({4}, 2.5);
    Tensor constant = ops::layer_norm(Tensor::full({1, 4}, 7.0), gain, bias);
    for (int i = 0; i < 4; ++i) CHECK(constant.values()[i] == doctest::Approx(2.5));

    Tensor two = ops::layer_norm(Tensor::from({1, 2}, {1.0, -1.0}), Tensor::full({2}, 1.0),
                                 Tensor::zeros({2}));
    CHECK(two.values()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(two.values()[1] == doctest::Approx(-1.0).epsilon(1e-4));

    CHECK_THROWS_AS(
        ops::layer_norm(Tensor::zeros({2, 4}), Tensor::zeros({3}), Tensor::zeros({4})),
        ShapeError);
}

TEST_CASE("layer_norm standardizes when variance dominates eps") {
    F64Guard g;
    Rng rng(31);
    const int64_t d = 16;
    Tensor gain = Tensor::full({d}, 1.0);
    Tensor bias = Tensor::zeros({d});
    for (int t = 0; t < 20; ++t) {
        Tensor x = Tensor::randn({5, d}, rng, 4.0);
        Tensor y = ops::layer_norm(x, gain, bias);
        for (int64_t r = 0; r < 5; ++r) {
            double mean = 0.0, var = 0.0;
            for (int64_t c = 0; c < d; ++c) mean += y.values()[static_cast<size_t>(r * d + c)];
            mean /= static_cast<double>(d);
            for (int64_t c = 0; c < d; ++c) {
                const double v = y.values()[static_cast<size_t>(r * d + c)] - mean;
                var += v * v;
            }
            var /= static_cast<double>(d);
            CHECK(std::fabs(mean) <= 1e-6);
            CHECK(std::fabs(var - 1.0) <= 1e-4);
        }
    }
}

TEST_CASE("backward basics") {
    F64Guard g;
    Tensor x = Tensor::from({4}, {1, 2, 3, 4}, true);
    backward(ops::sum(x));
    for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == 1.0);

    Tensor a = Tensor::from({3}, {1, 2, 3}, true);
    Tensor b = Tensor::from({3}, {-1, 0.5, 2}, true);
    backward(ops::sum(ops::mul(a, b)));
    for (int i = 0; i < 3; ++i) {
        CHECK(a.grad()[i] == doctest::Approx(b.values()[i]));
        CHECK(b.grad()[i] == doctest::Approx(a.values()[i]));
    }
}

TEST_CASE("backward softmax cross-entropy identity") {
    F64Guard g;
    Tensor z = Tensor::from({1, 4}, {0.2, -1.3, 0.7, 2.0}, true);
    Tensor loss = ops::cross_entropy_logits_mean(z, {2});
    backward(loss);
    Tensor p = ops::softmax(Tensor::from({1, 4}, z.values()), 1);
    for (int i = 0; i < 4; ++i) {
        const double expect = p.values()[i] - (i == 2 ? 1.0 : 0.0);
        CHECK(z.grad()[i] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("backward errors") {
    F64Guard g;
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    CHECK_THROWS_AS(backward(ops::scalar_mul(x, 2.0)), ShapeError);  // non-scalar

    Tensor loss = ops::sum(x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ValueError);  // second call without reset
}

TEST_CASE("backward linearity of sums") {
    F64Guard g;
    Rng rng(7);
    for (int t = 0; t < 10; ++t) {
        std::vector<double> xv(6);
        for (double& v : xv) v = rng.uniform(-2, 2);

        Tensor x1 = Tensor::from({2, 3}, xv, true);
        backward(ops::sum(ops::mul(x1, x1)));
        Tensor x2 = Tensor::from({2, 3}, xv, true);
        backward(ops::mean(ops::gelu(x2)));
        Tensor x3 = Tensor::from({2, 3}, xv, true);
        backward(ops::add(ops::sum(ops::mul(x3, x3)), ops::mean(ops::gelu(x3))));

        for (int i = 0; i < 6; ++i)
            CHECK(std::fabs(x3.grad()[i] - (x1.grad()[i] + x2.grad()[i])) <= 1e-12);
    }
}

TEST_CASE("grad accumulates across losses until cleared") {
    F64Guard g;
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    backward(ops::sum(x));
    backward(ops::sum(ops::mul(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(1.0 + 2.0));
    x.clear_grad();
    CHECK_FALSE(x.has_grad());
}

TEST_CASE("grad_check examples") {
    F64Guard g;
    Tensor point = Tensor::from({3}, {0.3, -0.2, 1.1});
    GradReport ok = grad_check(
        "softmax", [](const std::vector<Tensor>& in) { return ops::softmax(in[0], 0); }, {point});
    CHECK(ok.passed);
    CHECK(ok.max_rel_err <= 1e-4);

    // An op whose analytic gradient is deliberately off by 1%.
    auto corrupted = [](const std::vector<Tensor>& in) {
        const Tensor& x = in[0];
        std::vector<double> out(x.values());
        for (double& v : out) v *= 2.0;
        return make_op("corrupted_double", x.shape(), std::move(out), {x}, [](TensorNode& n) {
            TensorNode& p = *n.parents[0];
            if (p.grad.empty()) p.grad.assign(p.values.size(), 0.0);
            for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i] * 2.0 * 1.01;
        });
    };
    GradReport bad = grad_check("corrupted_double", corrupted, {point});
    CHECK_FALSE(bad.passed);

    GradReport constant = grad_check(
        "constant", [](const std::vector<Tensor>&) { return Tensor::scalar(3.5); }, {point});
    CHECK(constant.passed);
    CHECK(constant.max_rel_err == 0.0);
}

TEST_CASE("grad_check report invariant") {
    F64Guard g;
    GradReport r = grad_check(
        "gelu", [](const std::vector<Tensor>& in) { return ops::gelu(in[0]); },
        {Tensor::from({3}, {0.4, -1.0, 2.0})});
    CHECK(r.passed == (r.max_rel_err <= r.tolerance));
}

TEST_CASE("every differentiable primitive passes grad_check at 5 random points") {
    const auto reports = run_gradient_verification(1234, 5, 1e-4);
    for (const auto& r : reports) {
        INFO(r.op_name, " max_rel_err=", r.max_rel_err);
        CHECK(r.passed);
    }
}

TEST_CASE("f32 mode quantizes op results") {
    set_precision(Precision::f32);
    Tensor x = Tensor::from({2}, {0.1, 0.2});
    for (const double v : x.values()) CHECK(v == static_cast<double>(static_cast<float>(v)));
    Tensor y = ops::scalar_mul(x, 1.0 / 3.0);
    for (const double v : y.values()) CHECK(v == static_cast<double>(static_cast<float>(v)));
    set_precision(Precision::f64);
}

TEST_CASE("ops raise located errors instead of propagating non-finite values") {
    F64Guard g;
    Tensor big = Tensor::from({1}, {1e308});
    try {
        ops::mul(big, big);
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
}

TEST_CASE("masked_row_softmax excludes columns exactly") {
    F64Guard g;
    Tensor x = Tensor::from({2, 3}, {5.0, 1.0, 2.0, 0.0, 3.0, -1.0});
    Tensor p = ops::masked_row_softmax(x, {true, false, false});
    CHECK(p.values()[0] == 0.0);
    CHECK(p.values()[3] == 0.0);
    CHECK(p.values()[1] + p.values()[2] == doctest::Approx(1.0));
    CHECK_THROWS_AS(ops::masked_row_softmax(x, {true, true, true}), ValueError);
}

TEST_CASE("packed_mha matches per-sample reference within sample blocks") {
    F64Guard g;
    // Attention must not cross the sample boundary: identical Q rows in
    // different samples attend to different key sets.
    Rng rng(5);
    Tensor q = Tensor::randn({5, 4}, rng, 1.0);
    Tensor k = Tensor::randn({5, 4}, rng, 1.0);
    Tensor v = Tensor::randn({5, 4}, rng, 1.0);
    Tensor whole = ops::packed_mha(q, k, v, {0, 5}, 1);
    Tensor split = ops::packed_mha(q, k, v, {0, 2, 5}, 1);
    bool differs = false;
    for (int i = 0; i < 20; ++i) differs = differs || whole.values()[i] != split.values()[i];
    CHECK(differs);

    // Single sample, one head, one key: output equals the value row.
    Tensor q1 = Tensor::from({1, 2}, {0.3, -0.2});
    Tensor v1 = Tensor::from({1, 2}, {5.0, 7.0});
    Tensor out = ops::packed_mha(q1, q1, v1, {0, 1}, 1);
    CHECK(out.values()[0] == doctest::Approx(5.0));
    CHECK(out.values()[1] == doctest::Approx(7.0));
}

}  // TEST_SUITE
