#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "waveq/quantizer.hpp"
#include "waveq/random.hpp"

using namespace waveq;

namespace {

bool member(const std::vector<double>& levels, double v) { return std::find(levels.begin(), levels.end(), v) != levels.end(); }

}  // namespace

TEST_CASE("level set examples") {
    auto two = level_set(2, QuantStyle::mid_tread);
    std::vector<double> expected{-1, -2.0 / 3, -1.0 / 3, 0, 1.0 / 3, 2.0 / 3, 1};
    CHECK(two.levels == expected);
    CHECK(two.bin_width == 1.0 / 3);

    CHECK(level_set(1, QuantStyle::mid_tread).levels == std::vector<double>{-1, 0, 1});
    CHECK(level_set(1, QuantStyle::mid_rise).levels == std::vector<double>{-1, 1});
    CHECK_THROWS_AS(level_set(0, QuantStyle::mid_tread), DomainError);
    CHECK_THROWS_AS(level_set(17, QuantStyle::mid_tread), DomainError);
}

TEST_CASE("level set invariants") {
    for (int b = 1; b <= 12; ++b)
        for (auto style : {QuantStyle::mid_tread, QuantStyle::mid_rise}) {
            const auto ls = level_set(b, style);
            CHECK(std::is_sorted(ls.levels.begin(), ls.levels.end()));
            CHECK(std::adjacent_find(ls.levels.begin(), ls.levels.end()) == ls.levels.end());
            CHECK(ls.levels.front() >= -1.0);
            CHECK(ls.levels.back() <= 1.0);
            for (std::size_t i = 0; i < ls.levels.size(); ++i) CHECK(ls.levels[i] == -ls.levels[ls.levels.size() - 1 - i]);
            if (style == QuantStyle::mid_tread) {
                const double k = std::exp2(b) - 1;
                CHECK(ls.levels.size() == std::size_t(2 * k + 1));
                CHECK(member(ls.levels, 0.0));
                CHECK(ls.bin_width == 1.0 / k);
            } else {
                CHECK_FALSE(member(ls.levels, 0.0));
            }
        }
}

TEST_CASE("mid-rise levels sit half a bin off the mid-tread grid") {
    const auto tread = level_set(3, QuantStyle::mid_tread);
    const auto rise = level_set(3, QuantStyle::mid_rise);
    CHECK(rise.levels.size() == 14);
    CHECK(rise.bin_width == tread.bin_width);
    for (std::size_t i = 1; i < rise.levels.size(); ++i)
        CHECK(rise.levels[i] - rise.levels[i - 1] == doctest::Approx(rise.bin_width).epsilon(1e-14));
    for (std::size_t i = 0; i < rise.levels.size(); ++i)
        CHECK(rise.levels[i] == doctest::Approx((tread.levels[i] + tread.levels[i + 1]) / 2).epsilon(1e-15));
}

TEST_CASE("dorefa examples") {
    // Extended-precision evaluation of 2 round(3 (tanh(w) / (2 max|tanh|) + 1/2)) / 3 - 1
    // at w = +-0.5 gives round(3) = 3 and round(0) = 0, i.e. +1 and -1.
    auto ref = [](long double w, long double m) {
        const long double x = std::tanh(w) / (2 * m) + 0.5L;
        return double(2.0L * std::nearbyint(3.0L * x) / 3.0L - 1.0L);
    };
    const long double m = std::tanh(0.5L);
    auto q = dorefa_quantize(TensorD({2}, {0.5, -0.5}), 2);
    CHECK(q[0] == ref(0.5L, m));
    CHECK(q[1] == ref(-0.5L, m));
    CHECK(q[0] == 1.0);
    CHECK(q[1] == -1.0);

    auto z = dorefa_quantize(TensorD({3}), 4);
    CHECK(z.vector().isZero(0.0));
    CHECK_THROWS_AS(dorefa_quantize(TensorD({1}, {0.3}), 1), DomainError);
}

TEST_CASE("dorefa is odd, saturates at the maximum and lands exactly on levels") {
    // Outputs are odd multiples of 1 / (2^b - 1), so w = 0 itself has no
    // symmetric image and is left out of the pairs.
    Rng rng(21);
    for (int b = 2; b <= 8; ++b) {
        TensorD w({40});
        for (Index i = 0; i < 20; ++i) {
            w[i] = standard_normal(rng);
            w[39 - i] = -w[i];
        }
        const auto q = dorefa_quantize(w, b);
        const auto ls = level_set(b, QuantStyle::mid_tread);
        Index argmax = 0;
        w.vector().maxCoeff(&argmax);
        CHECK(q[argmax] == 1.0);
        for (Index i = 0; i < 40; ++i) {
            CHECK(member(ls.levels, q[i]));
            CHECK(q[i] == -q[39 - i]);
        }
    }
}

TEST_CASE("wrpn examples") {
    CHECK(wrpn_quantize(TensorD({1}, {0.3}), 2)[0] == 0.0);
    CHECK(wrpn_quantize(TensorD({1}, {1.4}), 4)[0] == 1.0);
    CHECK(wrpn_quantize(TensorD({1}, {-1.4}), 4)[0] == -1.0);
    CHECK(wrpn_quantize(TensorD({1}, {0.4}), 3)[0] == 1.0 / 3);
    CHECK_THROWS_AS(wrpn_quantize(TensorD({1}, {0.4}), 1), DomainError);
}

TEST_CASE("quantizer outputs are exact level members and monotone") {
    Rng rng(31);
    for (int b = 2; b <= 8; ++b) {
        TensorD w({2000});
        for (Index i = 0; i < w.size(); ++i) w[i] = uniform(rng, -1.5, 1.5);
        std::sort(w.data(), w.data() + w.size());
        const auto d = dorefa_quantize(w, b);
        const auto r = wrpn_quantize(w, b);
        const auto dl = level_set(b, QuantStyle::mid_tread);
        const auto rl = level_set(b - 1, QuantStyle::mid_tread);
        for (Index i = 0; i < w.size(); ++i) {
            CHECK(member(dl.levels, d[i]));
            CHECK(member(rl.levels, r[i]));
            if (i > 0) {
                CHECK(d[i] >= d[i - 1]);
                CHECK(r[i] >= r[i - 1]);
            }
        }
    }
}

TEST_CASE("snap matches exhaustive search on 10^4 random weights") {
    Rng rng(1234);
    for (int b : {1, 2, 3, 5, 8}) {
        for (auto style : {QuantStyle::mid_tread, QuantStyle::mid_rise}) {
            const auto ls = level_set(b, style);
            const double c = uniform(rng, 0.5, 2.5);
            TensorD w({10000});
            for (Index i = 0; i < w.size(); ++i) w[i] = uniform(rng, -1.2 * c, 1.2 * c);
            const auto s = snap_and_error(w, ls, c);
            int mismatches = 0;
            for (Index i = 0; i < w.size(); ++i) mismatches += s.snapped[i] != oracle::exhaustive_snap(ls.levels, c, w[i]);
            CHECK(mismatches == 0);
        }
    }
}

TEST_CASE("snap fixed point, mid-bin error and idempotence") {
    const auto ls = level_set(3, QuantStyle::mid_tread);
    const double c = 1.7;
    TensorD on({Index(ls.levels.size())});
    for (std::size_t i = 0; i < ls.levels.size(); ++i) on[Index(i)] = ls.levels[i] * c;
    auto s = snap_and_error(on, ls, c);
    CHECK(s.snapped == on);
    CHECK(s.mean_abs_err == 0.0);
    CHECK(s.mse == 0.0);

    // Mid-bins chosen as dyadic values so the midpoint is exact.
    const auto two = level_set(1, QuantStyle::mid_tread);
    TensorD mid({2}, {0.5, -0.5});
    auto m = snap_and_error(mid, two, 1.0);
    CHECK(m.mean_abs_err == two.bin_width / 2);
    CHECK(m.snapped[0] == 0.0);
    CHECK(m.snapped[1] == -1.0);

    Rng rng(5);
    TensorD w({1000});
    for (Index i = 0; i < w.size(); ++i) w[i] = uniform(rng, -2, 2);
    auto once = snap_and_error(w, ls, c).snapped;
    CHECK(snap_and_error(once, ls, c).snapped == once);
}

TEST_CASE("snap error is at most half a scaled bin inside [-c, c]") {
    Rng rng(8);
    for (int b = 1; b <= 8; ++b) {
        const auto ls = level_set(b, QuantStyle::mid_tread);
        const double c = uniform(rng, 0.1, 3.0);
        TensorD w({2000});
        for (Index i = 0; i < w.size(); ++i) w[i] = uniform(rng, -c, c);
        const auto s = snap_and_error(w, ls, c);
        CHECK((w.vector() - s.snapped.vector()).cwiseAbs().maxCoeff() <= c * ls.bin_width / 2 + 1e-15);
    }
}

TEST_CASE("snap rejects a non-positive scale or empty levels") {
    const auto ls = level_set(2, QuantStyle::mid_tread);
    CHECK_THROWS(snap_and_error(TensorD({1}), ls, 0.0));
    LevelSet empty;
    CHECK_THROWS(snap_and_error(TensorD({1}), empty, 1.0));
}

TEST_CASE("quantized layer spans [-c, c]") {
    auto q = quantized_layer(3, 2.5, QuantStyle::mid_tread);
    auto s = q.scaled_levels();
    CHECK(s.front() == -2.5);
    CHECK(s.back() == 2.5);
    CHECK_THROWS(quantized_layer(3, -1.0, QuantStyle::mid_tread));
}
