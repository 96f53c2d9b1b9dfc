#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "pbat/gaussian.hpp"
#include "test_util.hpp"

using namespace pbat;

namespace {

DiagonalGaussian g1(double mean, double var) { return {{mean}, {var}}; }

// Empirical W2^2 between two 1-D normals from the sorted (monotone) coupling.
double empirical_w2_sq(double m1, double v1, double m2, double v2, std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> a(m1, std::sqrt(v1)), b(m2, std::sqrt(v2));
    std::vector<double> xs(n), ys(n);
    for (auto& x : xs) x = a(rng);
    for (auto& y : ys) y = b(rng);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (xs[i] - ys[i]) * (xs[i] - ys[i]);
    return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("elu_plus_one branches") {
    CHECK(elu_plus_one(std::vector<double>{0.0, 0.0}) == std::vector<double>{1.0, 1.0});
    CHECK(elu_plus_one(1.0) == 2.0);
    CHECK(elu_plus_one(-1.0) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
    CHECK(elu_plus_one(-700.0) > 0.0);
    CHECK_THROWS_AS(elu_plus_one(NAN), std::invalid_argument);
    CHECK_THROWS_AS(elu_plus_one(INFINITY), std::invalid_argument);
    // derivative continuous at 0: one-sided slopes both 1
    const double h = 1e-7;
    CHECK((elu_plus_one(h) - elu_plus_one(0.0)) / h == doctest::Approx(1.0).epsilon(1e-6));
    CHECK((elu_plus_one(0.0) - elu_plus_one(-h)) / h == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("DiagonalGaussian validates its fields") {
    CHECK_THROWS_AS(DiagonalGaussian({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(DiagonalGaussian({1.0}, {1.0, 2.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagonalGaussian({1.0}, {0.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagonalGaussian({1.0}, {-1.0}), std::invalid_argument);
    CHECK_THROWS_AS(DiagonalGaussian({NAN}, {1.0}), std::invalid_argument);
}

TEST_CASE("wasserstein_sq closed form") {
    CHECK(wasserstein_sq(g1(0, 1), g1(3, 4)) == doctest::Approx(10.0));
    CHECK(wasserstein_sq({{1, 1}, {1, 1}}, {{1, 1}, {4, 4}}) == doctest::Approx(2.0));
    const DiagonalGaussian a({0.3, -2.0}, {0.5, 2.0});
    CHECK(wasserstein_sq(a, a) == 0.0);
    CHECK_THROWS_AS(wasserstein_sq(g1(0, 1), a), std::invalid_argument);
}

TEST_CASE("wasserstein_sq examples agree with sorted-coupling Monte Carlo") {
    std::mt19937_64 rng(11);
    const double mc = empirical_w2_sq(0, 1, 3, 4, 1'000'000, rng);
    CHECK(std::abs(mc - 10.0) / 10.0 < 0.02);
    // two independent dimensions, each (1,1) vs (1,4): summed per-dimension estimate
    const double mc2 = empirical_w2_sq(1, 1, 1, 4, 1'000'000, rng) + empirical_w2_sq(1, 1, 1, 4, 1'000'000, rng);
    CHECK(std::abs(mc2 - 2.0) / 2.0 < 0.02);
}

TEST_CASE("wasserstein_sq symmetry, identity and triangle inequality") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto a = test::random_gaussian(rng, 4), b = test::random_gaussian(rng, 4), c = test::random_gaussian(rng, 4);
        CHECK(wasserstein_sq(a, a) == 0.0);
        CHECK(wasserstein_sq(a, b) == wasserstein_sq(b, a));
        CHECK(wasserstein_sq(a, b) > 0.0);
        const double ab = std::sqrt(wasserstein_sq(a, b)), bc = std::sqrt(wasserstein_sq(b, c)),
                     ac = std::sqrt(wasserstein_sq(a, c));
        CHECK(ac <= ab + bc + 1e-9);
    }
}

TEST_CASE("sagp closed form") {
    const auto fixed = sagp(g1(1, 1), g1(1, 1), SquareMatrix::identity(1));
    CHECK(fixed.mean()[0] == doctest::Approx(1.0));
    CHECK(fixed.var()[0] == doctest::Approx(1.0));

    const auto out = sagp(g1(0, 1), g1(4, 3), SquareMatrix::identity(1));
    CHECK(out.mean()[0] == doctest::Approx(1.0));
    CHECK(out.var()[0] == doctest::Approx(1.5));

    CHECK(sagp(g1(5, 2), g1(-1, 2)).var()[0] == doctest::Approx(2.0));

    // alignment maps v's mean only: v.mean [1, 0] * W with W swapping axes -> [0, 1]
    const SquareMatrix swap{2, {0, 1, 1, 0}};
    const auto s = sagp({{0, 0}, {1, 1}}, {{1, 0}, {1, 1}}, swap);
    CHECK(s.mean()[0] == doctest::Approx(0.0));
    CHECK(s.mean()[1] == doctest::Approx(0.5));
    CHECK_THROWS_AS(sagp(g1(0, 1), {{0, 0}, {1, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(sagp(g1(0, 1), g1(0, 1), SquareMatrix::identity(2)), std::invalid_argument);
}

TEST_CASE("sagp variance envelope") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        const auto u = test::random_gaussian(rng, 3), v = test::random_gaussian(rng, 3);
        const auto out = sagp(u, v);
        for (std::size_t d = 0; d < 3; ++d) {
            CHECK(out.var()[d] >= std::min(u.var()[d], v.var()[d]) * (1 - 1e-15));
            CHECK(out.var()[d] <= std::max(u.var()[d], v.var()[d]) * (1 + 1e-15));
        }
    }
}

TEST_CASE("tri_sagp closed form and precision additivity") {
    const auto id = SquareMatrix::identity(1);
    const auto same = tri_sagp(g1(3, 1), g1(3, 1), g1(3, 1), id, id);
    CHECK(same.var()[0] == doctest::Approx(1.0 / 3.0));
    CHECK(same.mean()[0] == doctest::Approx(3.0));
    const auto mix = tri_sagp(g1(0, 1), g1(3, 1), g1(6, 1), id, id);
    CHECK(mix.mean()[0] == doctest::Approx(3.0));
    CHECK(tri_sagp(g1(0, 1), g1(0, 0.5), g1(0, 0.5), id, id).var()[0] == doctest::Approx(0.2));

    std::mt19937_64 rng(9);
    for (int i = 0; i < 1000; ++i) {
        const auto a = test::random_gaussian(rng, 2), b = test::random_gaussian(rng, 2), c = test::random_gaussian(rng, 2);
        const auto id2 = SquareMatrix::identity(2);
        const auto out = tri_sagp(a, b, c, id2, id2);
        for (std::size_t d = 0; d < 2; ++d) {
            const double want = 1 / a.var()[d] + 1 / b.var()[d] + 1 / c.var()[d];
            CHECK(std::abs(1 / out.var()[d] - want) / want <= 1e-12);
            CHECK(out.var()[d] < std::min({a.var()[d], b.var()[d], c.var()[d]}));
        }
    }
}

TEST_CASE("tri_sagp applies alignment to ip and pos means") {
    const SquareMatrix twice{1, {2.0}};
    const auto out = tri_sagp(g1(0, 1), g1(1, 1), g1(1, 1), twice, SquareMatrix::identity(1));
    CHECK(out.mean()[0] == doctest::Approx((0 + 2 + 1) / 3.0));
    // weak ip/pos (huge variance) leave the base nearly untouched
    const auto weak = tri_sagp(g1(2, 1), g1(-5, 1e12), g1(9, 1e12), SquareMatrix::identity(1), SquareMatrix::identity(1));
    CHECK(weak.mean()[0] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(weak.var()[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gaussian_aggregate linear combination") {
    const auto v = g1(2, 4);
    const std::vector<DiagonalGaussian> one{v};
    const std::vector<double> w1{1.0};
    CHECK(gaussian_aggregate(one, w1) == v);

    const std::vector<DiagonalGaussian> two{v, v};
    const std::vector<double> half{0.5, 0.5};
    const auto out = gaussian_aggregate(two, half);
    CHECK(out.mean()[0] == doctest::Approx(2.0));
    CHECK(out.var()[0] == doctest::Approx(2.0));

    const std::vector<DiagonalGaussian> pair{g1(-7, 3), g1(1.5, 0.25)};
    const std::vector<double> select{0.0, 1.0};
    CHECK(gaussian_aggregate(pair, select) == pair[1]);

    CHECK_THROWS_AS(gaussian_aggregate(std::vector<DiagonalGaussian>{}, std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_aggregate(two, w1), std::invalid_argument);
}

TEST_CASE("gaussian_aggregate with probability weights stays under the largest variance") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        std::vector<DiagonalGaussian> vals;
        std::vector<double> w;
        for (int j = 0; j < 4; ++j) {
            vals.push_back(test::random_gaussian(rng, 2));
            w.push_back(u(rng));
        }
        const double z = w[0] + w[1] + w[2] + w[3];
        for (auto& x : w) x /= z;
        const auto out = gaussian_aggregate(vals, w);
        for (std::size_t d = 0; d < 2; ++d) {
            double mx = 0.0;
            for (const auto& v : vals) mx = std::max(mx, v.var()[d]);
            CHECK(out.var()[d] <= mx);
        }
    }
}
