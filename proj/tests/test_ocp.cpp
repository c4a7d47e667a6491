#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fesd/catalog.hpp"
#include "fesd/ocp.hpp"

using namespace fesd;
using Catch::Approx;

namespace {

// dx/dt in -sign(x) + u with one bounded control
NonsmoothModel sliding_control_model() {
    NonsmoothModel m;
    m.name = "sliding-control";
    m.arena = std::make_shared<Arena>();
    m.n_x = 1;
    m.n_u = 1;
    Arena& A = *m.arena;
    Expr u = A.var(1);
    m.psi = {A.var(0)};
    m.S.rows = {{1}, {-1}};
    m.regions.regions = {{0}, {1}};
    m.dynamics = {{A.add(A.constant(-1.0), u)}, {A.add(A.constant(1.0), u)}};
    m.default_x0 = {1.0};
    return m;
}

OcpSpec toy_sliding_ocp() {
    OcpSpec spec;
    spec.model = sliding_control_model();
    spec.T = 2.0;
    spec.n_ctrl = 4;
    spec.n_fe = 2;
    spec.family = RkFamily::RadauIIA;
    spec.n_s = 2;
    Arena& A = *spec.model.arena;
    Expr u = A.var(1), x = A.var(0);
    spec.running_cost = A.mul(u, u);
    spec.terminal_cost = A.mul(A.constant(100.0), A.mul(x, x));
    spec.u_lb = {-2.0};
    spec.u_ub = {2.0};
    spec.x0 = {1.0};
    return spec;
}

}  // namespace

TEST_CASE("quadrature augmentation") {
    auto m = sliding_control_model();
    Arena& A = *m.arena;
    Expr L = A.mul(A.var(1), A.var(1));  // u^2
    auto aug = augment_with_quadrature(m, L);
    CHECK(aug.n_x == 2);
    CHECK(aug.n_u == 1);
    REQUIRE(aug.dynamics.size() == 2);
    REQUIRE(aug.dynamics[0].size() == 2);
    // quadrature row evaluates to u^2 with the shifted control index
    std::vector<double> pt{0.3, 0.0, 0.7};  // x, ell, u
    CHECK(eval_once(aug.dynamics[0][1], pt) == Approx(0.49));
    CHECK(eval_once(aug.dynamics[0][0], pt) == Approx(-1.0 + 0.7));
    CHECK(validate_model(aug).empty());
}

TEST_CASE("transcription layout and objective") {
    auto spec = toy_sliding_ocp();
    auto t = transcribe(spec);
    CHECK(t.S.opt.n_intervals == 4);
    CHECK(t.S.n_elements() == 8);
    CHECK(t.S.off_q >= 0);
    CHECK(t.n_w() == t.S.off_q + 4);

    // pure terminal tracking when L = 0
    OcpSpec spec2 = toy_sliding_ocp();
    spec2.running_cost = Expr{};
    auto t2 = transcribe(spec2);
    std::vector<double> w(static_cast<size_t>(t2.n_w()), 0.0);
    int node = t2.S.n_elements();
    w[static_cast<size_t>(t2.S.idx_x(node, 0))] = 0.5;  // x(T)
    w[static_cast<size_t>(t2.S.idx_x(node, 1))] = 7.0;  // quadrature state
    CHECK(eval_once(t2.objective, w) == Approx(100.0 * 0.25 + 7.0));

    // reference-tracking least squares expands to a weighted quadratic
    OcpSpec spec3 = toy_sliding_ocp();
    Arena& A = *spec3.model.arena;
    spec3.running_cost = A.mul(A.sub(A.var(0), A.constant(0.25)),
                               A.sub(A.var(0), A.constant(0.25)));
    auto t3 = transcribe(spec3);
    CHECK(t3.objective.valid());

    // invalid bounds are rejected
    OcpSpec bad = toy_sliding_ocp();
    bad.u_lb = {3.0};
    CHECK_THROWS_AS(transcribe(bad), std::invalid_argument);
}

TEST_CASE("toy sliding OCP solves to a first-order point") {
    auto spec = toy_sliding_ocp();
    auto t = transcribe(spec);
    OcpSettings settings;
    auto sol = solve_ocp(t, settings);
    INFO(sol.failure);
    REQUIRE(sol.converged);

    CHECK(sol.kkt_inf <= 1e-6);
    CHECK(sol.comp_residual <= 1e-8);
    // optimal policy: coast with u = 0, reach the surface at t = 1, slide
    CHECK(std::abs(sol.x_grid.back()[0]) <= 1e-3);
    for (double u : sol.controls) {
        CHECK(u >= -2.0 - 1e-9);
        CHECK(u <= 2.0 + 1e-9);
    }
    CHECK(sol.objective <= 1e-4);

    // homotopy progress: the gap to the final objective contracts stage by
    // stage (the smoothed stages can overshoot below the exact optimum, so
    // the raw objective is not monotone)
    for (size_t k = 2; k < sol.objective_log.size(); ++k) {
        double gap = std::abs(sol.objective_log[k] - sol.objective);
        double prev = std::abs(sol.objective_log[k - 1] - sol.objective);
        CHECK(gap <= prev * (1 + 1e-3) + 1e-12);
    }

    // switch times sit on element boundaries by construction; psi vanishes there
    for (double ts : sol.switch_times) {
        size_t g = 0;
        while (g < sol.t_grid.size() && std::abs(sol.t_grid[g] - ts) > 1e-12) ++g;
        REQUIRE(g < sol.t_grid.size());
        CHECK(std::abs(sol.x_grid[g][0]) <= 1e-6);
    }
}

TEST_CASE("toy OCP beats the piecewise-constant brute-force grid") {
    auto spec = toy_sliding_ocp();
    auto t = transcribe(spec);
    auto sol = solve_ocp(t);
    REQUIRE(sol.converged);

    // oracle: all 5^4 piecewise-constant control sequences with levels
    // {-2,-1,0,1,2}, simulated with the same discretization
    auto aug = augment_with_quadrature(spec.model, spec.running_cost);
    auto dcs = build_step_dcs(aug);
    auto S = assemble_fesd(dcs, tableau(spec.family, spec.n_s), spec.n_fe);
    const double levels[5] = {-2, -1, 0, 1, 2};
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> x0{1.0, 0.0};
    for (int c0 = 0; c0 < 5; ++c0)
        for (int c1 = 0; c1 < 5; ++c1)
            for (int c2 = 0; c2 < 5; ++c2)
                for (int c3 = 0; c3 < 5; ++c3) {
                    std::vector<double> state = x0;
                    bool ok = true;
                    int seq[4] = {c0, c1, c2, c3};
                    for (int k = 0; k < 4 && ok; ++k) {
                        std::vector<double> u{levels[seq[k]]};
                        auto s = homotopy_solve(S, state, u, 0.5);
                        ok = s.report.converged;
                        if (ok)
                            for (int i = 0; i < 2; ++i) state[static_cast<size_t>(i)] = s.w(S.idx_x(S.n_fe, i));
                    }
                    if (ok) best = std::min(best, state[1] + 100.0 * state[0] * state[0]);
                }
    INFO("brute force best = " << best << " solver = " << sol.objective);
    CHECK(best < std::numeric_limits<double>::infinity());
    CHECK(sol.objective <= best + 1e-6);
}
