#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fesd/catalog.hpp"
#include "fesd/reformulate.hpp"

using namespace fesd;
using Catch::Approx;

namespace {

// Solves G_beta = 0 by forward substitution (each beta depends only on alpha
// and earlier betas), returning the full (alpha, beta) vector.
std::vector<double> with_betas(const LiftingResult& lr, int n_psi, const std::vector<double>& alpha) {
    std::vector<double> x(alpha);
    x.resize(static_cast<size_t>(n_psi + lr.n_beta), 0.0);
    for (size_t k = 0; k < lr.g_beta.size(); ++k) {
        double r = eval_once(lr.g_beta[k], x);  // beta_k - prod with beta_k = current (0)
        x[static_cast<size_t>(n_psi) + k] -= r;
    }
    return x;
}

std::vector<double> eval_thetas(const std::vector<Expr>& theta, const std::vector<double>& point) {
    std::vector<double> out;
    out.reserve(theta.size());
    for (const Expr& t : theta) out.push_back(eval_once(t, point));
    return out;
}

}  // namespace

TEST_CASE("theta expressions for singleton regions") {
    Arena A;
    SignMatrix S = SignMatrix::dense(2);
    RegionSpec R;
    R.regions = {{0}, {1}, {2}, {3}};
    auto theta = build_theta_exprs(A, S, R);
    std::vector<double> a{0.3, 0.8};
    auto th = eval_thetas(theta, a);
    CHECK(th[0] == Approx(0.3 * 0.8));
    CHECK(th[1] == Approx(0.3 * 0.2));
    CHECK(th[2] == Approx(0.7 * 0.8));
    CHECK(th[3] == Approx(0.7 * 0.2));
}

TEST_CASE("theta expressions for unions") {
    auto m = make_union_2region();
    Arena A;
    auto theta = build_theta_exprs(m, A);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> d(0, 1);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> a{d(rng), d(rng)};
        auto th = eval_thetas(theta, a);
        CHECK(th[0] == Approx(a[0] + (1 - a[0]) * a[1]).margin(1e-15));
        CHECK(th[1] == Approx((1 - a[0]) * (1 - a[1])).margin(1e-15));
    }
}

TEST_CASE("theta for one switching function") {
    Arena A;
    SignMatrix S;
    S.rows = {{1}, {-1}};
    RegionSpec R;
    R.regions = {{0}, {1}};
    auto theta = build_theta_exprs(A, S, R);
    std::vector<double> a{0.25};
    auto th = eval_thetas(theta, a);
    CHECK(th[0] == Approx(0.25));
    CHECK(th[1] == Approx(0.75));
}

TEST_CASE("simplex property on catalog models") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> d(0, 1);
    for (const char* id : {"tutorial-a", "tutorial-b", "tutorial-c", "tutorial-d",
                           "union-2region", "robot-regions"}) {
        auto m = load_catalog(id);
        Arena A;
        auto theta = build_theta_exprs(m, A);
        for (int t = 0; t < 1000; ++t) {
            std::vector<double> a(static_cast<size_t>(m.n_psi()));
            for (auto& ai : a) ai = d(rng);
            auto th = eval_thetas(theta, a);
            double sum = 0;
            for (double v : th) {
                CHECK(v >= -1e-14);
                CHECK(v <= 1.0 + 1e-14);
                sum += v;
            }
            CHECK(sum == Approx(1.0).margin(1e-14));
        }
    }
}

TEST_CASE("lifting of the dense 3-function matrix") {
    Arena A;
    SignMatrix S = SignMatrix::dense(3);
    auto lr = lift(A, S, 2);
    CHECK(lr.n_beta == 4);
    REQUIRE(lr.g_beta.size() == 4);

    // beta definitions are the four two-factor prefix products
    std::vector<double> a{0.3, 0.8, 0.6};
    auto x = with_betas(lr, 3, a);
    CHECK(x[3] == Approx(0.3 * 0.8));
    CHECK(x[4] == Approx(0.3 * 0.2));
    CHECK(x[5] == Approx(0.7 * 0.8));
    CHECK(x[6] == Approx(0.7 * 0.2));

    // first row product is beta_1 * alpha_3
    CHECK(eval_once(lr.row_products[0], x) == Approx(0.3 * 0.8 * 0.6));
    CHECK(eval_once(lr.row_products[7], x) == Approx(0.7 * 0.2 * 0.4));
}

TEST_CASE("lifting beta counts") {
    CHECK(lift_beta_count(SignMatrix::dense(4), 2) == 12);  // 2^4 - 2^2
    CHECK(lift_beta_count(SignMatrix::dense(5), 2) == 28);
    CHECK(lift_beta_count(SignMatrix::dense(5), 3) == 24);
    CHECK(lift_beta_count(SignMatrix::dense(3), 3) == 0);   // n_d >= n_psi: no lifting
    for (int n_psi : {3, 4, 5})
        for (int n_d : {2, 3})
            if (n_d < n_psi)
                CHECK(lift_beta_count(SignMatrix::dense(n_psi), n_d) ==
                      (1 << n_psi) - (1 << n_d));
}

TEST_CASE("lifted and unlifted theta agree") {
    std::mt19937 rng(29);
    std::uniform_real_distribution<double> d(0, 1);
    for (int n_psi : {3, 4, 5}) {
        SignMatrix S = SignMatrix::dense(n_psi);
        Arena plain_arena;
        std::vector<Expr> plain;
        auto alpha = [&](int j) { return plain_arena.var(j); };
        for (const auto& row : S.rows) plain.push_back(sign_row_product(plain_arena, row, alpha));

        for (int n_d : {2, 3}) {
            if (n_d >= n_psi) continue;
            Arena lift_arena;
            auto lr = lift(lift_arena, S, n_d);
            for (int t = 0; t < 1000; ++t) {
                std::vector<double> a(static_cast<size_t>(n_psi));
                for (auto& ai : a) ai = d(rng);
                auto x = with_betas(lr, n_psi, a);
                for (int i = 0; i < S.n_rows(); ++i) {
                    double unlifted = eval_once(plain[static_cast<size_t>(i)], a);
                    double lifted = eval_once(lr.row_products[static_cast<size_t>(i)], x);
                    CHECK(lifted == Approx(unlifted).margin(1e-14));
                }
            }
        }
    }
}

TEST_CASE("step DCS of tutorial-a") {
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    CHECK(dcs.variant == DcsVariant::Step);
    CHECK(dcs.n_z == 2 + 3 * 1);
    REQUIRE(dcs.pairs.size() == 2);          // (lambda_n, alpha), (lambda_p, 1 - alpha)
    REQUIRE(dcs.eq_groups.size() == 1);
    CHECK(dcs.alg_smooth.size() == 3);       // two theta rows + one split row

    // dynamics evaluate to theta_1 * 1 + theta_2 * 3
    std::vector<double> point(static_cast<size_t>(dcs.n_x + dcs.n_z), 0.0);
    point[0] = -2.0;                          // x
    point[static_cast<size_t>(dcs.n_x + dcs.z_theta)] = 0.0;
    point[static_cast<size_t>(dcs.n_x + dcs.z_theta + 1)] = 1.0;
    CHECK(eval_once(dcs.dynamics[0], point) == Approx(3.0));
    point[static_cast<size_t>(dcs.n_x + dcs.z_theta)] = 1.0;
    point[static_cast<size_t>(dcs.n_x + dcs.z_theta + 1)] = 0.0;
    CHECK(eval_once(dcs.dynamics[0], point) == Approx(1.0));
}

TEST_CASE("step DCS of robot-regions has 3 paired complementarities and 6 equalities") {
    auto m = make_robot_regions();
    auto dcs = build_step_dcs(m);
    CHECK(dcs.eq_groups.size() == 3);
    CHECK(dcs.pairs.size() == 6);
    CHECK(dcs.alg_smooth.size() == 6);  // 3 theta defs + 3 splits
}

TEST_CASE("irma DCS bypasses the theta layer") {
    auto m = make_irma();
    auto dcs = build_step_dcs(m);
    CHECK(dcs.variant == DcsVariant::ApDirect);
    CHECK(dcs.pairs.size() == 14);
    CHECK(dcs.n_z == 21);
    CHECK(dcs.alg_smooth.size() == 7);
    CHECK(dcs.selection_products.size() == 5);  // one step-product per gene
}

TEST_CASE("stewart DCS of the scalar example") {
    auto m = make_tutorial_a();
    auto dcs = build_stewart_dcs(m);
    CHECK(dcs.n_z == 2 * 2 + 1);
    REQUIRE(dcs.g_x.size() == 2);
    // g(x) = (-x, x)
    std::vector<double> x{0.7};
    CHECK(eval_once(dcs.g_x[0], x) == Approx(-0.7));
    CHECK(eval_once(dcs.g_x[1], x) == Approx(0.7));
    CHECK(dcs.pairs.size() == 2);
    CHECK(dcs.alg_smooth.size() == 3);  // two indicator rows + simplex row
}

TEST_CASE("stewart DCS counts for robot-regions") {
    auto m = make_robot_regions();
    auto dcs = build_stewart_dcs(m);
    CHECK(dcs.pairs.size() == 8);
    CHECK(dcs.alg_smooth.size() == 9);
}

TEST_CASE("g + S psi is identically zero") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> d(-2, 2);
    for (const char* id : {"tutorial-a", "union-2region", "robot-regions"}) {
        auto m = load_catalog(id);
        auto dcs = build_stewart_dcs(m);
        std::vector<double> point(static_cast<size_t>(dcs.n_x + dcs.n_z + dcs.n_u), 0.0);
        for (int t = 0; t < 200; ++t) {
            for (int i = 0; i < dcs.n_x; ++i) point[static_cast<size_t>(i)] = d(rng);
            for (int i = 0; i < dcs.n_f; ++i) {
                double g = eval_once(dcs.g_x[static_cast<size_t>(i)], point);
                double spsi = 0;
                for (int j = 0; j < dcs.n_psi; ++j)
                    spsi += m.S.rows[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                            eval_once(dcs.psi_x[static_cast<size_t>(j)], point);
                CHECK(std::abs(g + spsi) <= 1e-15 * (1 + std::abs(g)));
            }
        }
    }
}

TEST_CASE("stewart LP selects the first base region at interior points") {
    auto m = make_union_2region();
    auto dcs = build_stewart_dcs(m);
    // psi > 0 componentwise: g_i = -S_i psi minimized by the all-plus row
    std::vector<double> x{0.5, 0.9};
    int argmin = 0;
    double best = 1e300;
    for (int i = 0; i < dcs.n_f; ++i) {
        double gi = eval_once(dcs.g_x[static_cast<size_t>(i)], x);
        if (gi < best) {
            best = gi;
            argmin = i;
        }
    }
    CHECK(argmin == 0);
}

TEST_CASE("step and stewart region selection agree at random interior points") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> d(-3, 3);
    for (const char* id : {"union-2region", "robot-regions"}) {
        auto m = load_catalog(id);
        Arena A;
        auto theta = build_theta_exprs(m, A);
        auto dcs = build_stewart_dcs(m);

        std::vector<int> owner(static_cast<size_t>(m.S.n_rows()));
        for (size_t k = 0; k < m.regions.regions.size(); ++k)
            for (int r : m.regions.regions[k]) owner[static_cast<size_t>(r)] = static_cast<int>(k);

        int tested = 0;
        for (int t = 0; t < 2000 && tested < 1000; ++t) {
            std::vector<double> x(static_cast<size_t>(m.n_x));
            for (auto& xi : x) xi = d(rng);
            std::vector<double> psi(static_cast<size_t>(m.n_psi()));
            bool interior = true;
            for (int j = 0; j < m.n_psi(); ++j) {
                psi[static_cast<size_t>(j)] = eval_once(m.psi[static_cast<size_t>(j)], x);
                interior &= std::abs(psi[static_cast<size_t>(j)]) > 1e-6;
            }
            if (!interior) continue;
            ++tested;

            auto sel = heaviside_oracle(psi);
            auto th = eval_thetas(theta, sel.alpha);
            int step_region = static_cast<int>(std::max_element(th.begin(), th.end()) - th.begin());

            int argmin = 0;
            double best = 1e300;
            for (int i = 0; i < dcs.n_f; ++i) {
                double gi = eval_once(dcs.g_x[static_cast<size_t>(i)], x);
                if (gi < best) {
                    best = gi;
                    argmin = i;
                }
            }
            CHECK(step_region == owner[static_cast<size_t>(argmin)]);
        }
        CHECK(tested >= 1000);
    }
}

TEST_CASE("fixed active set diagnostics") {
    SECTION("interior point is ODE mode") {
        auto m = make_tutorial_a();
        std::vector<double> x{0.5};
        auto d = fixed_active_set_diagnostics(m, x, {}, {0}, {});
        CHECK(d.ode_mode);
    }
    SECTION("tutorial-b sliding at x = 0 is regular") {
        auto m = make_tutorial_b();
        std::vector<double> x{0.0, 0.3};  // on the surface, at time 0.3
        auto d = fixed_active_set_diagnostics(m, x, {}, {0, 1}, {0});
        REQUIRE_FALSE(d.ode_mode);
        CHECK(d.W.rows() == 1);
        CHECK(d.W.cols() == 2);
        CHECK(d.B.rows() == 2);
        CHECK(d.B.cols() == 1);
        // W = (f_plus, f_minus) at the surface, B = (1, -1)'
        double g = 0.2 * std::sin(5.0 * 0.3);
        CHECK(d.W(0, 0) == Approx(-1.0 + g));
        CHECK(d.W(0, 1) == Approx(1.0 + g));
        CHECK(d.rank == 1);
    }
    SECTION("tutorial-d at x = 0 reports rank without claiming uniqueness") {
        auto m = make_tutorial_d();
        std::vector<double> x{0.0};
        auto d = fixed_active_set_diagnostics(m, x, {}, {0, 1}, {0});
        CHECK(d.rank == 1);  // W = (1, -1), B = (1, -1)': WB = 2
    }
}

TEST_CASE("complexity report") {
    // n_psi = 3, n_f = 8, no lift: both reformulations have 17 algebraic vars
    auto r = step_complexity("dense3", 3, 8, 0);
    CHECK(r.n_alg == 17);
    auto s = stewart_complexity("dense3", 3);
    CHECK(s.n_alg == 17);

    // robot: step 3 paired / 6 eq vs stewart 8 / 9
    auto m = make_robot_regions();
    auto rows = complexity_report(m);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].n_comp_pairs == 3);
    CHECK(rows[0].n_comp_scalar == 6);
    CHECK(rows[0].n_eq == 6);
    CHECK(rows[1].n_comp_pairs == 8);
    CHECK(rows[1].n_eq == 9);

    // n_psi = 5, n_f = 2, no lift: 17 vs 65
    CHECK(step_complexity("x", 5, 2, 0).n_alg == 17);
    CHECK(stewart_complexity("x", 5).n_alg == 65);

    // table formulas for n_psi in 1..6
    for (int n = 1; n <= 6; ++n) {
        auto st = step_complexity("f", n, 1 << n, 0);
        CHECK(st.n_alg == (1 << n) + 3 * n);
        CHECK(st.n_comp_scalar == 2 * n);
        CHECK(st.n_eq == n + (1 << n));
        auto sw = stewart_complexity("f", n);
        CHECK(sw.n_alg == 2 * (1 << n) + 1);
        CHECK(sw.n_comp_scalar == (1 << n));
        CHECK(sw.n_eq == (1 << n) + 1);
    }
}
