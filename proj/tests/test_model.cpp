#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fesd/catalog.hpp"
#include "fesd/model.hpp"

using namespace fesd;
using Catch::Approx;

TEST_CASE("heaviside oracle on mixed signs") {
    std::vector<double> psi{2.0, -3.0, 0.0};
    auto s = heaviside_oracle(psi);
    CHECK(s.lambda_p == std::vector<double>{2.0, 0.0, 0.0});
    CHECK(s.lambda_n == std::vector<double>{0.0, 3.0, 0.0});
    CHECK(s.alpha[0] == 1.0);
    CHECK(s.alpha[1] == 0.0);
    CHECK(s.alpha_free[2]);
    CHECK_FALSE(s.alpha_free[0]);
}

TEST_CASE("heaviside oracle scalar zero and tiny negative") {
    std::vector<double> zero{0.0};
    auto s = heaviside_oracle(zero);
    CHECK(s.lambda_p[0] == 0.0);
    CHECK(s.lambda_n[0] == 0.0);
    CHECK(s.alpha_free[0]);

    std::vector<double> tiny{-1e-12};
    s = heaviside_oracle(tiny);
    CHECK(s.alpha[0] == 0.0);
    CHECK(s.lambda_n[0] == Approx(1e-12));

    std::vector<double> bad{std::nan("")};
    CHECK_THROWS_AS(heaviside_oracle(bad), std::invalid_argument);
}

TEST_CASE("oracle invariants on random inputs") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> d(-5, 5);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> psi(4);
        for (auto& p : psi) p = d(rng);
        auto s = heaviside_oracle(psi);
        for (size_t j = 0; j < psi.size(); ++j) {
            CHECK(s.lambda_p[j] - s.lambda_n[j] == Approx(psi[j]));
            CHECK(s.lambda_p[j] >= 0.0);
            CHECK(s.lambda_n[j] >= 0.0);
            CHECK(s.lambda_p[j] * s.lambda_n[j] == 0.0);
        }
    }
}

TEST_CASE("region algebra follows the table") {
    Arena A;
    Expr aA = A.var(0), aB = A.var(1);
    std::vector<double> v{0.3, 0.8};

    CHECK(eval_once(region_algebra(RegionOp::Union, aA, aB), v) == Approx(1.1));
    CHECK(eval_once(region_algebra(RegionOp::Intersect, aA, aB), v) == Approx(0.24));
    CHECK(eval_once(region_algebra(RegionOp::Complement, aA), v) == Approx(0.7));
    CHECK(eval_once(region_algebra(RegionOp::Difference, aA, aB), v) == Approx(-0.5));
}

TEST_CASE("validate accepts the dense 4x2 example") {
    NonsmoothModel m;
    m.arena = std::make_shared<Arena>();
    m.n_x = 2;
    m.psi = {m.arena->var(0), m.arena->var(1)};
    m.S = SignMatrix::dense(2);
    m.regions.regions = {{0}, {1}, {2}, {3}};
    std::vector<Expr> f{m.arena->constant(1.0), m.arena->constant(0.0)};
    m.dynamics = {f, f, f, f};
    CHECK(validate_model(m).empty());
    CHECK(m.S.rows[0] == std::vector<int>{1, 1});
    CHECK(m.S.rows[3] == std::vector<int>{-1, -1});
}

TEST_CASE("validate flags duplicate rows and uncovered base sets") {
    NonsmoothModel m;
    m.arena = std::make_shared<Arena>();
    m.n_x = 1;
    m.psi = {m.arena->var(0)};
    m.S.rows = {{1}, {1}};
    m.regions.regions = {{0}, {1}};
    std::vector<Expr> f{m.arena->constant(1.0)};
    m.dynamics = {f, f};
    auto v = validate_model(m);
    bool dup = false;
    for (auto& viol : v) dup |= viol.code == "duplicate row";
    CHECK(dup);

    NonsmoothModel m2;
    m2.arena = std::make_shared<Arena>();
    m2.n_x = 2;
    m2.psi = {m2.arena->var(0), m2.arena->var(1)};
    m2.S = SignMatrix::dense(2);
    m2.regions.regions = {{0}, {1}, {2}};  // row 3 missing
    std::vector<Expr> f2{m2.arena->constant(1.0), m2.arena->constant(1.0)};
    m2.dynamics = {f2, f2, f2};
    v = validate_model(m2);
    bool uncovered = false;
    for (auto& viol : v) uncovered |= viol.code == "uncovered base set";
    CHECK(uncovered);
}

TEST_CASE("catalog models validate") {
    for (const char* id : {"tutorial-a", "tutorial-b", "tutorial-c", "tutorial-d",
                           "union-2region", "irma", "robot-regions"}) {
        auto m = load_catalog(id);
        auto v = validate_model(m);
        INFO(id);
        CHECK(v.empty());
    }
    CHECK_THROWS_AS(load_catalog("nope"), std::invalid_argument);
}

TEST_CASE("crossing reference") {
    std::vector<double> x0{-1.0};
    auto ref = analytic_reference("crossing", x0, 1.0);
    REQUIRE(ref.switch_times.size() == 1);
    CHECK(ref.switch_times[0] == Approx(1.0 / 3.0));
    CHECK(ref.state(1.0)[0] == Approx(2.0 / 3.0));

    std::vector<double> x0p{1.0};
    auto ref2 = analytic_reference("crossing", x0p, 1.0);
    CHECK(ref2.switch_times.empty());
    CHECK(ref2.state(1.0)[0] == Approx(2.0));
}

TEST_CASE("slide-in reference sticks at zero") {
    std::vector<double> x0{1.0};
    auto ref = analytic_reference("slide-in", x0, 3.0);
    REQUIRE(ref.switch_times.size() == 1);
    double th = ref.switch_times[0];
    // at the hit time the closed form is zero
    CHECK(std::abs(ref.state(th - 1e-12)[0]) < 1e-9);
    CHECK(ref.state(th + 0.5)[0] == 0.0);
    CHECK(ref.state(3.0)[0] == 0.0);
}

TEST_CASE("slide-out and spontaneous references") {
    std::vector<double> zero{0.0};
    auto c = analytic_reference("slide-out", zero, 2.0);
    CHECK(c.state(0.5)[0] == 0.0);
    CHECK(c.state(2.0)[0] == Approx(0.5));
    REQUIRE(c.switch_times.size() == 1);
    CHECK(c.switch_times[0] == Approx(1.0));

    auto d = analytic_reference("spontaneous", zero, 1.0);
    CHECK_FALSE(d.unique);
    CHECK(d.state(1.0)[0] == 0.0);

    CHECK_THROWS_AS(analytic_reference("bogus", zero, 1.0), std::invalid_argument);
}

TEST_CASE("irma catalog data") {
    auto m = make_irma();
    CHECK(m.n_x == 5);
    CHECK(m.n_psi() == 7);
    CHECK(m.ap_direct);
    CHECK(m.default_x0 == std::vector<double>{0.011, 0.09, 0.04, 0.05, 0.015});

    IrmaParameters prm;
    CHECK(prm.kappa2 == std::array<double, 5>{9e-4, 0.15, 0.018, 0.03, 0.015});

    // switching functions at the initial state are all positive
    std::vector<double> x(m.default_x0);
    for (auto& p : m.psi) CHECK(eval_once(p, x) > 0.0);

    // reference: first switch at 50 ln(5/3), second around 39.19 min
    auto ref = irma_reference();
    CHECK(ref.t1 == Approx(50.0 * std::log(5.0 / 3.0)).epsilon(1e-12));
    CHECK(ref.t2 == Approx(39.1909).margin(1e-3));
    // at both switch times the respective switching function vanishes
    CHECK(ref.state(ref.t1)[3] == Approx(0.04).margin(1e-12));
    CHECK(ref.state(ref.t2)[0] == Approx(0.01).margin(1e-12));
}

TEST_CASE("irma reference matches a crude RK4 integration") {
    auto m = make_irma();
    auto ref = irma_reference();

    // dense fixed-step RK4 on the single-valued selection (valid away from
    // switching surfaces; the switch crossing error is O(h) but h is tiny)
    auto rhs = [&](const std::vector<double>& x) {
        std::vector<double> psi(7), full(5 + 7);
        for (int j = 0; j < 7; ++j) psi[static_cast<size_t>(j)] = eval_once(m.psi[static_cast<size_t>(j)], x);
        auto sel = heaviside_oracle(psi);
        for (int i = 0; i < 5; ++i) full[static_cast<size_t>(i)] = x[static_cast<size_t>(i)];
        for (int j = 0; j < 7; ++j) full[static_cast<size_t>(5 + j)] = sel.alpha[static_cast<size_t>(j)];
        std::vector<double> dx(5);
        for (int i = 0; i < 5; ++i) dx[static_cast<size_t>(i)] = eval_once(m.ap_dynamics[static_cast<size_t>(i)], full);
        return dx;
    };

    std::vector<double> x(m.default_x0);
    const double T = 100.0;
    const int N = 200000;
    const double h = T / N;
    for (int k = 0; k < N; ++k) {
        auto k1 = rhs(x);
        std::vector<double> x2(5), x3(5), x4(5);
        for (int i = 0; i < 5; ++i) x2[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + 0.5 * h * k1[static_cast<size_t>(i)];
        auto k2 = rhs(x2);
        for (int i = 0; i < 5; ++i) x3[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + 0.5 * h * k2[static_cast<size_t>(i)];
        auto k3 = rhs(x3);
        for (int i = 0; i < 5; ++i) x4[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + h * k3[static_cast<size_t>(i)];
        auto k4 = rhs(x4);
        for (int i = 0; i < 5; ++i)
            x[static_cast<size_t>(i)] += h / 6.0 * (k1[static_cast<size_t>(i)] + 2 * k2[static_cast<size_t>(i)] + 2 * k3[static_cast<size_t>(i)] + k4[static_cast<size_t>(i)]);
    }
    auto want = ref.state(T);
    for (int i = 0; i < 5; ++i)
        CHECK(x[static_cast<size_t>(i)] == Approx(want[static_cast<size_t>(i)]).margin(2e-6));
}
