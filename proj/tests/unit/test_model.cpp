#include <doctest.h>

#include "oracles.hpp"
#include "waveq/model.hpp"

using namespace waveq;

namespace {

TensorD random_batch(Rng& rng, Index n, Index d) {
    TensorD x({n, d});
    for (Index i = 0; i < x.size(); ++i) x[i] = standard_normal(rng);
    return x;
}

// Scalar-by-scalar re-evaluation of an MLP.
std::vector<std::vector<double>> naive_forward(const ModelD& m, const TensorD& x) {
    std::vector<std::vector<double>> out;
    for (Index r = 0; r < x.dim(0); ++r) {
        std::vector<double> a(std::size_t(x.dim(1)));
        for (Index c = 0; c < x.dim(1); ++c) a[std::size_t(c)] = x.matrix()(r, c);
        for (const auto& l : m.layers()) {
            std::vector<double> z(std::size_t(l.outputs()));
            for (Index o = 0; o < l.outputs(); ++o) {
                double s = 0;
                for (Index i = 0; i < l.inputs(); ++i) s += l.weights.matrix()(o, i) * a[std::size_t(i)];
                s += l.bias[o];
                z[std::size_t(o)] = l.activation == Activation::relu ? std::max(0.0, s) : s;
            }
            a = z;
        }
        out.push_back(a);
    }
    return out;
}

}  // namespace

TEST_CASE("identity layer passes the input through") {
    DenseLayer<double> l{TensorD({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}), TensorD({3}), Activation::identity};
    ModelD m({l});
    TensorD x({2, 3}, {1, -2, 3, 0.5, 0, -7});
    CHECK(forward(m, x).logits == x);
}

TEST_CASE("zero parameters give zero logits") {
    ModelD m({{TensorD({4, 3}), TensorD({4}), Activation::relu}, {TensorD({2, 4}), TensorD({2}), Activation::identity}});
    Rng rng(1);
    auto logits = forward(m, random_batch(rng, 5, 3)).logits;
    CHECK(logits.vector().isZero(0.0));
}

TEST_CASE("forward matches scalar re-evaluation") {
    Rng rng(42);
    auto m = init_mlp<double>({6, 5, 3}, rng);
    for (auto& l : m.layers())
        for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * standard_normal(rng);
    auto x = random_batch(rng, 7, 6);
    auto logits = forward(m, x).logits;
    auto ref = naive_forward(m, x);
    for (Index r = 0; r < 7; ++r)
        for (Index c = 0; c < 3; ++c) CHECK(logits.matrix()(r, c) == doctest::Approx(ref[std::size_t(r)][std::size_t(c)]).epsilon(1e-13));
}

TEST_CASE("forward is deterministic and leaves the model alone") {
    Rng rng(2);
    auto m = init_mlp<double>({4, 8, 3}, rng);
    const auto copy = m;
    auto x = random_batch(rng, 9, 4);
    CHECK(forward(m, x).logits == forward(m, x).logits);
    CHECK(m == copy);
}

TEST_CASE("shape mismatch names the layer") {
    Rng rng(3);
    auto m = init_mlp<double>({4, 3}, rng);
    try {
        forward(m, random_batch(rng, 2, 5));
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("model rejects broken chains and non-identity heads") {
    CHECK_THROWS_AS(ModelD({{TensorD({4, 3}), TensorD({4}), Activation::relu}, {TensorD({2, 5}), TensorD({2}), Activation::identity}}),
                    DimensionError);
    CHECK_THROWS(ModelD({{TensorD({4, 3}), TensorD({4}), Activation::relu}}));
}

TEST_CASE("uniform logits over 10 classes give ln 10") {
    RowMatrix<double> logits = RowMatrix<double>::Constant(3, 10, 0.25);
    std::vector<int> t{0, 4, 9};
    CHECK(softmax_cross_entropy<double>(logits, t, nullptr) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
}

TEST_CASE("two-class uniform logit gradient is softmax minus one-hot over batch") {
    RowMatrix<double> logits = RowMatrix<double>::Zero(4, 2);
    std::vector<int> t{0, 0, 0, 0};
    RowMatrix<double> d;
    softmax_cross_entropy<double>(logits, t, &d);
    for (Index i = 0; i < 4; ++i) {
        CHECK(d(i, 0) == doctest::Approx(-0.5 / 4));
        CHECK(d(i, 1) == doctest::Approx(0.5 / 4));
    }
}

TEST_CASE("cross-entropy is non-negative and stable for large logits") {
    RowMatrix<double> logits(2, 3);
    logits << 1000, 0, -1000, -5e3, 5e3, 0;
    std::vector<int> t{0, 1};
    const double e = softmax_cross_entropy<double>(logits, t, nullptr);
    CHECK(std::isfinite(e));
    CHECK(e >= 0.0);
    CHECK(e == doctest::Approx(0.0));
    std::vector<int> wrong{2, 2};
    CHECK(softmax_cross_entropy<double>(logits, wrong, nullptr) > 1000);
}

TEST_CASE("target out of range is an input error") {
    RowMatrix<double> logits = RowMatrix<double>::Zero(1, 3);
    std::vector<int> t{3};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, t, nullptr), InputError);
    std::vector<int> neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy<double>(logits, neg, nullptr), InputError);
}

TEST_CASE("finite_diff_grad on closed forms") {
    TensorD p({1}, {3.0});
    auto sq = finite_diff_grad<double>([](const TensorD& x) { return x[0] * x[0]; }, p, 1e-5);
    CHECK(std::abs(sq[0] - 6.0) < 1e-8);

    TensorD q({3}, {1, -2, 5});
    auto c = finite_diff_grad<double>([](const TensorD&) { return 4.0; }, q, 1e-5);
    CHECK(c.vector().isZero(0.0));

    TensorD z({1}, {0.0});
    auto s = finite_diff_grad<double>([](const TensorD& x) { return std::sin(x[0]); }, z, 1e-5);
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("finite_diff_grad rejects non-finite probes and bad steps") {
    TensorD p({1}, {0.0});
    CHECK_THROWS_AS(finite_diff_grad<double>([](const TensorD& x) { return 1.0 / x[0] > 0 ? 1.0 / 0.0 : 0.0; }, p, 1e-3),
                    NumericError);
    CHECK_THROWS_AS(finite_diff_grad<double>([](const TensorD& x) { return x[0]; }, p, 0.0), DomainError);
}

TEST_CASE("backward matches finite differences on 100 random parameter points") {
    // The oracle runs the same network in extended precision so the central
    // difference at h = 1e-6 max(1, |p|) is not dominated by rounding.
    Rng rng(2024);
    int checked = 0;
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto m = init_mlp<double>({5, 4, 3}, rng);
        for (auto& l : m.layers())
            for (Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.2 * standard_normal(rng);
        auto x = random_batch(rng, 6, 5);
        std::vector<int> t;
        for (int i = 0; i < 6; ++i) t.push_back(int(uniform_index(rng, 3)));

        const auto analytic = flatten_gradients(loss_and_gradients(m, x, t).grads);
        Model<long double> mx;
        {
            std::vector<DenseLayer<long double>> layers;
            for (const auto& l : m.layers()) layers.push_back({l.weights.cast<long double>(), l.bias.cast<long double>(), l.activation});
            mx = Model<long double>(layers);
        }
        const auto xl = x.cast<long double>();
        auto fn = [&](const Tensor<long double>& p) {
            Model<long double> probe = mx;
            assign_parameters(probe, p);
            return loss(probe, xl, t);
        };
        const auto numeric = finite_diff_grad<long double>(fn, flatten_parameters(mx), 1e-6L, StepRule::relative);
        for (Index i = 0; i < analytic.size(); ++i) {
            const double e = oracle::relative_error(analytic[i], double(numeric[i]), 1e-9);
            worst = std::max(worst, e);
            ++checked;
        }
    }
    INFO("worst relative error " << worst << " over " << checked << " coordinates");
    CHECK(worst < 1e-6);
}

TEST_CASE("parameter flatten and assign round-trip") {
    Rng rng(8);
    auto m = init_mlp<double>({3, 4, 2}, rng);
    auto flat = flatten_parameters(m);
    CHECK(flat.size() == m.parameter_count());
    ModelD z = m;
    for (auto& l : z.layers()) {
        l.weights.vector().setZero();
        l.bias.vector().setZero();
    }
    assign_parameters(z, flat);
    CHECK(z == m);
    CHECK_THROWS_AS(assign_parameters(z, TensorD({3})), DimensionError);
}

TEST_CASE("init_mlp respects the He-uniform bound") {
    Rng rng(9);
    auto m = init_mlp<double>({50, 20, 4}, rng, 1.0);
    CHECK(m.layer(0).weights.vector().cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50));
    CHECK(m.layer(1).weights.vector().cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 20));
    CHECK(m.layer(0).activation == Activation::relu);
    CHECK(m.layer(1).activation == Activation::identity);
}
