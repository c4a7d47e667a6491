#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fesd/butcher.hpp"

using namespace fesd;
using Catch::Approx;

TEST_CASE("implicit Euler is Radau IIA with one stage") {
    auto t = tableau(RkFamily::RadauIIA, 1);
    CHECK(t.A(0, 0) == Approx(1.0).margin(1e-15));
    CHECK(t.b(0) == Approx(1.0).margin(1e-15));
    CHECK(t.c(0) == Approx(1.0).margin(1e-15));
    CHECK(t.order == 1);
    CHECK(t.c_last_is_one);
}

TEST_CASE("midpoint rule is Gauss-Legendre with one stage") {
    auto t = tableau(RkFamily::GaussLegendre, 1);
    CHECK(t.A(0, 0) == Approx(0.5).margin(1e-15));
    CHECK(t.b(0) == Approx(1.0).margin(1e-15));
    CHECK(t.c(0) == Approx(0.5).margin(1e-15));
    CHECK(t.order == 2);
    CHECK_FALSE(t.c_last_is_one);
}

TEST_CASE("Radau IIA with two stages") {
    auto t = tableau(RkFamily::RadauIIA, 2);
    CHECK(t.c(0) == Approx(1.0 / 3.0).margin(1e-14));
    CHECK(t.c(1) == Approx(1.0).margin(1e-14));
    CHECK(t.order == 3);
    // classical coefficients
    CHECK(t.A(0, 0) == Approx(5.0 / 12.0).margin(1e-14));
    CHECK(t.A(0, 1) == Approx(-1.0 / 12.0).margin(1e-14));
    CHECK(t.b(0) == Approx(3.0 / 4.0).margin(1e-14));
    CHECK(t.b(1) == Approx(1.0 / 4.0).margin(1e-14));
}

TEST_CASE("order and collocation conditions hold for all supported tableaus") {
    for (auto family : {RkFamily::RadauIIA, RkFamily::GaussLegendre}) {
        for (int n_s = 1; n_s <= 4; ++n_s) {
            auto t = tableau(family, n_s);
            INFO((family == RkFamily::RadauIIA ? "radau " : "gauss ") << n_s);

            // B(q): sum_j b_j c_j^{k-1} = 1/k for k = 1..min(order, 2 n_s)
            for (int k = 1; k <= std::min(t.order, 2 * n_s); ++k) {
                double s = 0;
                for (int j = 0; j < n_s; ++j) s += t.b(j) * std::pow(t.c(j), k - 1);
                CHECK(s == Approx(1.0 / k).margin(1e-14));
            }
            // C(s): sum_j a_ij c_j^{k-1} = c_i^k / k for k = 1..n_s
            for (int k = 1; k <= n_s; ++k)
                for (int i = 0; i < n_s; ++i) {
                    double s = 0;
                    for (int j = 0; j < n_s; ++j) s += t.A(i, j) * std::pow(t.c(j), k - 1);
                    CHECK(s == Approx(std::pow(t.c(i), k) / k).margin(1e-13));
                }

            double bsum = t.b.sum();
            CHECK(bsum == Approx(1.0).margin(1e-14));
            if (family == RkFamily::RadauIIA) {
                CHECK(t.c(n_s - 1) == Approx(1.0).margin(1e-14));
                CHECK(t.order == 2 * n_s - 1);
            } else {
                CHECK(t.c(n_s - 1) < 1.0);
                CHECK(t.order == 2 * n_s);
            }
        }
    }
}

TEST_CASE("unsupported combinations are rejected") {
    CHECK_THROWS_AS(tableau(RkFamily::RadauIIA, 0), std::invalid_argument);
    CHECK_THROWS_AS(tableau(RkFamily::RadauIIA, 5), std::invalid_argument);
    CHECK_THROWS_AS(tableau(RkFamily::Explicit, 2), std::invalid_argument);
    CHECK_THROWS_AS(tableau("rk4", 4), std::invalid_argument);
}

TEST_CASE("string lookup") {
    CHECK(tableau("radau-iia", 2).order == 3);
    CHECK(tableau("gauss-legendre", 3).order == 6);
}
