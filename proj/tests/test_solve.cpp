#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fesd/catalog.hpp"
#include "fesd/solve.hpp"

using namespace fesd;
using Catch::Approx;

TEST_CASE("assembled FESD dimensions match the closed-form counts") {
    // N_FE = 2, n_s = 1, n_psi = 1, n_f = 2, c_s = 1:
    // n_Z = 3 + 2 + 4 + 6 = 15 unknowns plus h in R^2, 15 + 2*2 - 1 = 18 rows
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    auto S = assemble_fesd(dcs, tableau(RkFamily::RadauIIA, 1), 2);
    CHECK(S.n_Z == 15);
    CHECK(S.n_w == 17);
    CHECK(S.bundle->rows() == 18);
    CHECK(S.rows_cross.size() == 1);
    CHECK(S.rows_eq.size() == 1);
}

TEST_CASE("single-element FESD reduces to standard RK plus the horizon row") {
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    auto S = assemble_fesd(dcs, tableau(RkFamily::RadauIIA, 2), 1);
    CHECK(S.rows_cross.empty());
    CHECK(S.rows_eq.empty());
    CHECK(S.rows_sum_h.size() == 1);
    CHECK(S.bundle->rows() == S.n_Z + 1);

    auto Sstd = assemble_std(dcs, tableau(RkFamily::RadauIIA, 2), 3);
    CHECK(Sstd.n_w == Sstd.n_Z);
    CHECK(Sstd.bundle->rows() == Sstd.n_Z);
    CHECK(Sstd.p_h >= 0);
}

TEST_CASE("smoothed C-function facts") {
    // phi_0(2, 0) = 0 and roots of phi_sigma satisfy a b = sigma
    auto arena = std::make_shared<Arena>();
    Expr a = arena->var(0), b = arena->var(1), s = arena->var(2);
    Expr phi = a + b - arena->sqrt(a * a + b * b + 2.0 * s);
    std::vector<double> v{2.0, 0.0, 0.0};
    CHECK(eval_once(phi, v) == Approx(0.0).margin(1e-15));
    double sig = 0.3;
    std::vector<double> r{std::sqrt(sig), std::sqrt(sig), sig};
    CHECK(eval_once(phi, r) == Approx(0.0).margin(1e-14));
}

TEST_CASE("newton on scalar and affine problems") {
    HomotopySettings hs;
    SECTION("x^2 - 4 from 3") {
        auto arena = std::make_shared<Arena>();
        ResidualBundle R(arena, 1, 0);
        Expr x = arena->var(0);
        R.add_row(x * x - 4.0, RowTag::Algebraic);
        Eigen::VectorXd w(1);
        w << 3.0;
        auto out = newton_solve(R, {}, w, 1e-12, 50, hs);
        CHECK(out.ok);
        CHECK(out.iters <= 8);
        CHECK(w(0) == Approx(2.0).margin(1e-12));
    }
    SECTION("affine system in one iteration") {
        auto arena = std::make_shared<Arena>();
        ResidualBundle R(arena, 2, 0);
        Expr x = arena->var(0), y = arena->var(1);
        R.add_row(2.0 * x + y - 5.0, RowTag::Algebraic);
        R.add_row(x - y - 1.0, RowTag::Algebraic);
        Eigen::VectorXd w(2);
        w << 10.0, -3.0;
        auto out = newton_solve(R, {}, w, 1e-12, 50, hs);
        CHECK(out.ok);
        CHECK(out.iters == 1);
        CHECK(w(0) == Approx(2.0));
        CHECK(w(1) == Approx(1.0));
    }
}

TEST_CASE("cross complementarity arithmetic") {
    // single pair, one stage: alpha_{n,1} = 0.5 against lambda_n at m' = 0
    Eigen::MatrixXd W(1, 1), L(2, 1);
    W << 0.5;        // selector at stage 1
    L << 0.2, 0.0;   // lambda at m' = 0 (boundary) and m' = 1
    Eigen::MatrixXd Wz = Eigen::MatrixXd::Zero(1, 1), Lz = Eigen::MatrixXd::Zero(2, 1);
    CHECK(cross_complementarity_value(W, L, Wz, Lz) == Approx(0.1));
}

TEST_CASE("cross row vanishes when every stage shares the region") {
    // alpha = 1, lambda_n = 0, lambda_p > 0 throughout: every product has a
    // zero factor. Pairs: p0 = (lambda_n, alpha), p1 = (lambda_p, 1 - alpha).
    int n_s = 2;
    Eigen::MatrixXd W(n_s, 2), L(n_s + 1, 2);
    W << 1.0, 0.0, 1.0, 0.0;            // alpha = 1, 1 - alpha = 0
    L << 0.0, 0.7, 0.0, 0.9, 0.0, 1.1;  // lambda_n = 0, lambda_p > 0
    CHECK(cross_complementarity_value(W, L, W, L) == Approx(0.0).margin(1e-15));
}

TEST_CASE("step equilibration switching table") {
    // patterns of (sigma_n^{ln,B}, sigma^{ln,F}, sigma^{lp,B}, sigma^{lp,F});
    // the selector sums make the persistent-sliding boundary positive but do
    // not disturb the five table rows.
    int n_s = 2;
    std::vector<std::vector<int>> groups{{0, 1}};
    auto block_L = [&](double ln, double lp) {
        Eigen::MatrixXd L(n_s + 1, 2);
        for (int m = 0; m <= n_s; ++m) {
            L(m, 0) = ln;
            L(m, 1) = lp;
        }
        return L;
    };
    auto block_W = [&](double alpha) {
        Eigen::MatrixXd W(n_s, 2);
        for (int m = 0; m < n_s; ++m) {
            W(m, 0) = alpha;
            W(m, 1) = 1 - alpha;
        }
        return W;
    };

    // no switch (psi < 0 on both neighbours): eta > 0, forces h_n = h_{n-1}
    double eta = eta_value(block_L(1.0, 0.0), block_L(1.2, 0.0), block_W(0.0), block_W(0.0), groups);
    CHECK(eta > 0.0);

    // crossing: lambda_n vanishes forward, lambda_p vanishes backward
    eta = eta_value(block_L(1.0, 0.0), block_L(0.0, 0.8), block_W(0.0), block_W(1.0), groups);
    CHECK(eta == Approx(0.0).margin(1e-15));

    // entering sliding: only the backward lambda_n is nonzero
    eta = eta_value(block_L(1.0, 0.0), block_L(0.0, 0.0), block_W(0.0), block_W(0.4), groups);
    CHECK(eta == Approx(0.0).margin(1e-15));

    // leaving sliding: only the forward lambda_p is nonzero
    eta = eta_value(block_L(0.0, 0.0), block_L(0.0, 0.9), block_W(0.35), block_W(1.0), groups);
    CHECK(eta == Approx(0.0).margin(1e-15));

    // spontaneous switch: same signature as leaving
    eta = eta_value(block_L(0.0, 0.0), block_L(0.0, 0.5), block_W(0.5), block_W(1.0), groups);
    CHECK(eta == Approx(0.0).margin(1e-15));

    // persistent sliding (not a table row): lambdas vanish on both sides but
    // the selector product keeps the indicator positive
    eta = eta_value(block_L(0.0, 0.0), block_L(0.0, 0.0), block_W(0.35), block_W(0.4), groups);
    CHECK(eta > 0.0);
}

TEST_CASE("boundary multipliers for c_s != 1") {
    auto gauss = tableau(RkFamily::GaussLegendre, 2);
    std::vector<double> psi{0.5};
    auto [lp, ln] = boundary_multipliers(gauss, psi);
    CHECK(lp[0] == Approx(0.5));
    CHECK(ln[0] == 0.0);

    std::vector<double> psi2{0.0};
    std::tie(lp, ln) = boundary_multipliers(gauss, psi2);
    CHECK(lp[0] == 0.0);
    CHECK(ln[0] == 0.0);

    std::vector<double> psi3{-2.0, 1.0};
    std::tie(lp, ln) = boundary_multipliers(gauss, psi3);
    CHECK(ln[0] == Approx(2.0));
    CHECK(lp[0] == 0.0);
    CHECK(lp[1] == Approx(1.0));

    auto radau = tableau(RkFamily::RadauIIA, 2);
    CHECK_THROWS_AS(boundary_multipliers(radau, psi), std::invalid_argument);
}

TEST_CASE("FESD detects the crossing of tutorial-a exactly") {
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    auto S = assemble_fesd(dcs, tableau(RkFamily::RadauIIA, 2), 2);

    std::vector<double> s0{-1.0};
    auto sol = homotopy_solve(S, s0, {}, 1.0);
    INFO(sol.report.failure);
    REQUIRE(sol.report.converged);

    CHECK(sol.w(S.idx_h(0)) == Approx(1.0 / 3.0).margin(1e-9));
    CHECK(sol.w(S.idx_h(1)) == Approx(2.0 / 3.0).margin(1e-9));
    CHECK(sol.w(S.idx_x(2, 0)) == Approx(2.0 / 3.0).margin(1e-9));
    CHECK(sol.report.comp_residual <= 1e-9);
    CHECK(sol.report.residual_inf <= 1e-9);

    REQUIRE(sol.boundaries.size() == 1);
    CHECK(sol.boundaries[0].switched);
    CHECK(sol.boundaries[0].kind == SwitchKind::Crossing);
}

TEST_CASE("switch-free run equalizes the grid") {
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    auto S = assemble_fesd(dcs, tableau(RkFamily::RadauIIA, 2), 5);

    std::vector<double> s0{1.0};
    auto sol = homotopy_solve(S, s0, {}, 1.0);
    INFO(sol.report.failure);
    REQUIRE(sol.report.converged);
    for (int n = 0; n < 5; ++n) CHECK(sol.w(S.idx_h(n)) == Approx(0.2).margin(1e-10));
    CHECK(sol.w(S.idx_x(5, 0)) == Approx(2.0).margin(1e-9));
    for (const auto& b : sol.boundaries) CHECK_FALSE(b.switched);
}

TEST_CASE("smooth problem converges quickly at every homotopy stage") {
    auto m = make_tutorial_a();
    auto dcs = build_step_dcs(m);
    auto S = assemble_fesd(dcs, tableau(RkFamily::RadauIIA, 2), 2);
    std::vector<double> s0{3.0};  // deep inside one region the whole time
    auto sol = homotopy_solve(S, s0, {}, 0.5);
    REQUIRE(sol.report.converged);
    // 11 homotopy stages (sigma 1 .. 1e-10) plus the polish; a handful of
    // iterations per stage after the first
    CHECK(sol.report.newton_iters <= 11 * 5 + 25);
    CHECK(sol.w(S.idx_x(2, 0)) == Approx(3.5).margin(1e-10));
}
