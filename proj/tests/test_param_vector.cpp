#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "tmc/param_vector.hpp"

using tmc::ParamVector;

namespace {

ParamVector random_vector(std::size_t dim, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    return ParamVector(std::move(v));
}

}  // namespace

TEST_CASE("add is elementwise") {
    const ParamVector a(std::vector<double>{1.0, 2.0});
    const ParamVector b(std::vector<double>{3.0, 4.0});
    const ParamVector c = tmc::add(a, b);
    CHECK(c[0] == 4.0);
    CHECK(c[1] == 6.0);
}

TEST_CASE("add with zeros is identity") {
    const ParamVector v = random_vector(16, 7);
    const ParamVector z = ParamVector::zeros(16);
    CHECK(tmc::add(v, z) == v);
}

TEST_CASE("add is exactly commutative") {
    const ParamVector a = random_vector(128, 11);
    const ParamVector b = random_vector(128, 12);
    const ParamVector ab = tmc::add(a, b);
    const ParamVector ba = tmc::add(b, a);
    for (std::size_t i = 0; i < ab.dim(); ++i) CHECK(ab[i] == ba[i]);
}

TEST_CASE("add rejects mismatched dims") {
    CHECK_THROWS_AS(tmc::add(ParamVector::zeros(3), ParamVector::zeros(4)), std::invalid_argument);
}

TEST_CASE("scale basics") {
    const ParamVector v(std::vector<double>{1.0, -2.0});
    const ParamVector h = tmc::scale(v, 0.5);
    CHECK(h[0] == 0.5);
    CHECK(h[1] == -1.0);
    CHECK(tmc::scale(v, 1.0) == v);
    CHECK(tmc::scale(v, 0.0) == ParamVector::zeros(2));
    CHECK_THROWS_AS(tmc::scale(v, std::nan("")), std::invalid_argument);
}

TEST_CASE("axpy fuses scale and add") {
    const ParamVector a(std::vector<double>{1.0, 1.0});
    const ParamVector b(std::vector<double>{0.0, 1.0});
    const ParamVector r = tmc::axpy(2.0, a, b);
    CHECK(r[0] == 2.0);
    CHECK(r[1] == 3.0);
    CHECK(tmc::axpy(0.0, a, b) == b);

    const ParamVector x = random_vector(256, 21);
    const ParamVector y = random_vector(256, 22);
    const double c = 1.37;
    CHECK(tmc::max_abs_diff(tmc::axpy(c, x, y), tmc::add(tmc::scale(x, c), y)) < 1e-12);
}

TEST_CASE("convex_combine") {
    const ParamVector v = random_vector(32, 31);

    SUBCASE("single vector with weight 1") {
        const std::vector<ParamVector> vs{v};
        const std::vector<double> w{1.0};
        CHECK(tmc::convex_combine(vs, w) == v);
    }
    SUBCASE("midpoint") {
        const ParamVector a(std::vector<double>{0.0, 2.0});
        const ParamVector b(std::vector<double>{4.0, 0.0});
        const std::vector<ParamVector> vs{a, b};
        const std::vector<double> w{0.5, 0.5};
        const ParamVector mid = tmc::convex_combine(vs, w);
        CHECK(mid[0] == 2.0);
        CHECK(mid[1] == 1.0);
    }
    SUBCASE("affine invariance over equal vectors") {
        const std::vector<ParamVector> vs{v, v, v};
        const std::vector<double> w{0.2, 0.5, 0.3};
        CHECK(tmc::max_abs_diff(tmc::convex_combine(vs, w), v) < 1e-12);
    }
    SUBCASE("uniform weights over copies return the vector") {
        const std::vector<ParamVector> vs(7, v);
        const std::vector<double> w(7, 1.0 / 7.0);
        CHECK(tmc::max_abs_diff(tmc::convex_combine(vs, w), v) < 1e-12);
    }
    SUBCASE("weight violations") {
        const std::vector<ParamVector> vs{v, v};
        CHECK_THROWS_AS(tmc::convex_combine(vs, std::vector<double>{0.7, 0.7}),
                        std::invalid_argument);
        CHECK_THROWS_AS(tmc::convex_combine(vs, std::vector<double>{-0.5, 1.5}),
                        std::invalid_argument);
        CHECK_THROWS_AS(tmc::convex_combine(std::vector<ParamVector>{}, std::vector<double>{}),
                        std::invalid_argument);
    }
}

TEST_CASE("vector space axioms on random instances") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const ParamVector a = random_vector(64, rng());
        const ParamVector b = random_vector(64, rng());
        const ParamVector c = random_vector(64, rng());
        const double s = unif(rng);
        const double t = unif(rng);

        // associativity and commutativity
        CHECK(tmc::max_abs_diff(tmc::add(tmc::add(a, b), c), tmc::add(a, tmc::add(b, c))) < 1e-12);
        CHECK(tmc::max_abs_diff(tmc::add(a, b), tmc::add(b, a)) == 0.0);
        // distributivity
        CHECK(tmc::max_abs_diff(tmc::scale(tmc::add(a, b), s),
                                tmc::add(tmc::scale(a, s), tmc::scale(b, s))) < 1e-12);
        CHECK(tmc::max_abs_diff(tmc::scale(a, s + t), tmc::add(tmc::scale(a, s), tmc::scale(a, t))) <
              1e-12);
        (void)normal;
    }
}

TEST_CASE("finiteness is preserved on finite inputs") {
    const ParamVector a = random_vector(64, 5, 1e3);
    const ParamVector b = random_vector(64, 6, 1e3);
    CHECK(tmc::add(a, b).all_finite());
    CHECK(tmc::scale(a, 1e6).all_finite());
    CHECK(tmc::axpy(-3.0, a, b).all_finite());
}
