#pragma once

// Built-in model catalog: the four scalar tutorial systems, a union-of-sets
// example, the IRMA gene regulatory network and the region structure of the
// hopping robot. Time-dependent right-hand sides are autonomized with a clock
// state so the core stays time-invariant.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>

#include "fesd/model.hpp"

namespace fesd {

namespace detail {

inline NonsmoothModel scalar_two_region(const std::string& name, double f_plus, double f_minus) {
    NonsmoothModel m;
    m.name = name;
    m.arena = std::make_shared<Arena>();
    m.n_x = 1;
    m.n_u = 0;
    m.psi = {m.arena->var(0)};
    m.S.rows = {{1}, {-1}};
    m.regions.regions = {{0}, {1}};
    m.dynamics = {{m.arena->constant(f_plus)}, {m.arena->constant(f_minus)}};
    m.default_x0 = {-1.0};
    return m;
}

// sign(x)-type system with a time-dependent additive term g(t); the clock is
// appended as state x1 with unit rate.
inline NonsmoothModel scalar_clocked(const std::string& name, double sgn_coeff,
                                     const std::function<Expr(Arena&, Expr)>& g_of_t) {
    NonsmoothModel m;
    m.name = name;
    m.arena = std::make_shared<Arena>();
    m.n_x = 2;
    m.n_u = 0;
    m.clock_index = 1;
    Arena& A = *m.arena;
    Expr t = A.var(1);
    Expr g = g_of_t(A, t);
    m.psi = {A.var(0)};
    m.S.rows = {{1}, {-1}};
    m.regions.regions = {{0}, {1}};
    Expr one = A.constant(1.0);
    m.dynamics = {{A.add(A.constant(sgn_coeff), g), one},
                  {A.add(A.constant(-sgn_coeff), g), one}};
    m.default_x0 = {1.0, 0.0};
    return m;
}

}  // namespace detail

// dx/dt in 2 - sign(x): crossing tutorial. Region 1 is {x > 0} with speed 1,
// region 2 is {x < 0} with speed 3.
inline NonsmoothModel make_tutorial_a() {
    NonsmoothModel m = detail::scalar_two_region("tutorial-a", 1.0, 3.0);
    return m;
}

// dx/dt in -sign(x) + 0.2 sin(5 t): reaches x = 0 and stays (sliding).
inline NonsmoothModel make_tutorial_b() {
    return detail::scalar_clocked("tutorial-b", -1.0, [](Arena& A, Expr t) {
        return A.mul(A.constant(0.2), A.sin(A.mul(A.constant(5.0), t)));
    });
}

// dx/dt in -sign(x) + t: leaves the sliding mode at t = 1.
inline NonsmoothModel make_tutorial_c() {
    return detail::scalar_clocked("tutorial-c", -1.0, [](Arena& A, Expr t) { return t; });
}

// dx/dt in sign(x): spontaneous switch; infinitely many solutions from x0 = 0.
inline NonsmoothModel make_tutorial_d() {
    NonsmoothModel m = detail::scalar_two_region("tutorial-d", 1.0, -1.0);
    m.default_x0 = {0.0};
    return m;
}

// Two regions over two switching functions, the first being a union of three
// base sets: R1 = {psi1 > 0} u {psi1 <= 0, psi2 > 0}, R2 = {psi1 < 0, psi2 < 0}.
inline NonsmoothModel make_union_2region() {
    NonsmoothModel m;
    m.name = "union-2region";
    m.arena = std::make_shared<Arena>();
    m.n_x = 2;
    m.n_u = 0;
    Arena& A = *m.arena;
    m.psi = {A.var(0), A.var(1)};
    m.S = SignMatrix::dense(2);  // rows: ++, +-, -+, --
    m.regions.regions = {{0, 1, 2}, {3}};
    m.dynamics = {{A.constant(-1.0), A.constant(-0.5)},
                  {A.constant(1.0), A.constant(1.0)}};
    m.default_x0 = {1.0, 1.0};
    return m;
}

struct IrmaParameters {
    std::array<double, 5> p{0.05, 0.04, 0.05, 0.02, 0.6};
    std::array<double, 5> kappa1{1.1e-4, 3e-4, 6e-4, 5e-4, 7.5e-4};
    std::array<double, 5> kappa2{9e-4, 0.15, 0.018, 0.03, 0.015};
    std::array<double, 5> x0{0.011, 0.09, 0.04, 0.05, 0.015};
    std::array<double, 7> thresholds{0.01, 0.01, 0.06, 0.08, 0.035, 0.04, 0.01};
};

// IRMA synthetic gene network: five protein concentrations, seven switching
// functions. The external input u multiplies the Gal80-dependent factor of
// the Swi5 equation; the catalog scenario uses u_input = 0, which is the
// setting whose first 100 minutes contain exactly two switches.
//
// Dynamics (alpha_j is the step selection of psi_j):
//   dx1 = -p1 x1 + k1_1 + k2_1 a6
//   dx2 = -p2 x2 + k1_2 + k2_2 a1 (1 - u) a7
//   dx3 = -p3 x3 + k1_3 + k2_3 a3
//   dx4 = -p4 x4 + k1_4 + k2_4 a2 (1 - a5)
//   dx5 = -p5 x5 + k1_5 + k2_5 a4
// This is an Aizerman-Pyatnitskii system (products of step functions), so
// its DCS is built directly from the step selections, without Filippov
// multipliers.
inline NonsmoothModel make_irma(double u_input = 0.0) {
    IrmaParameters prm;
    NonsmoothModel m;
    m.name = "irma";
    m.arena = std::make_shared<Arena>();
    m.n_x = 5;
    m.n_u = 0;
    m.ap_direct = true;
    Arena& A = *m.arena;

    auto x = [&](int i) { return A.var(i); };
    auto a = [&](int j) { return A.var(5 + j); };  // alpha_j, j = 0..6

    m.psi = {x(0) - prm.thresholds[0], x(1) - prm.thresholds[1], x(1) - prm.thresholds[2],
             x(1) - prm.thresholds[3], x(2) - prm.thresholds[4], x(3) - prm.thresholds[5],
             x(4) - prm.thresholds[6]};

    m.ap_dynamics = {
        -prm.p[0] * x(0) + prm.kappa1[0] + prm.kappa2[0] * a(5),
        -prm.p[1] * x(1) + prm.kappa1[1] + prm.kappa2[1] * a(0) * (1.0 - u_input) * a(6),
        -prm.p[2] * x(2) + prm.kappa1[2] + prm.kappa2[2] * a(2),
        -prm.p[3] * x(3) + prm.kappa1[3] + prm.kappa2[3] * a(1) * (1.0 - a(4)),
        -prm.p[4] * x(4) + prm.kappa1[4] + prm.kappa2[4] * a(3),
    };
    m.default_x0.assign(prm.x0.begin(), prm.x0.end());
    return m;
}

// Region/complexity structure of the time-freezing hopping robot: three
// switching functions, eight base sets, regions {1..6}, {7}, {8}. The vector
// fields are placeholders; the entry exists for structural reports.
inline NonsmoothModel make_robot_regions() {
    NonsmoothModel m;
    m.name = "robot-regions";
    m.arena = std::make_shared<Arena>();
    m.n_x = 3;
    m.n_u = 0;
    Arena& A = *m.arena;
    m.psi = {A.var(0), A.var(1), A.var(2)};
    m.S = SignMatrix::dense(3);
    m.regions.regions = {{0, 1, 2, 3, 4, 5}, {6}, {7}};
    std::vector<Expr> zero{A.constant(0.0), A.constant(0.0), A.constant(0.0)};
    m.dynamics = {zero, zero, zero};
    m.default_x0 = {1.0, 1.0, 1.0};
    return m;
}

inline NonsmoothModel load_catalog(const std::string& id) {
    if (id == "tutorial-a" || id == "crossing") return make_tutorial_a();
    if (id == "tutorial-b" || id == "slide-in") return make_tutorial_b();
    if (id == "tutorial-c" || id == "slide-out") return make_tutorial_c();
    if (id == "tutorial-d" || id == "spontaneous") return make_tutorial_d();
    if (id == "union-2region") return make_union_2region();
    if (id == "irma") return make_irma();
    if (id == "robot-regions") return make_robot_regions();
    throw std::invalid_argument("unknown catalog id '" + id + "'");
}

// ---------------------------------------------------------------------------
// Closed-form references for the tutorial systems.
// ---------------------------------------------------------------------------
struct AnalyticReference {
    std::vector<double> switch_times;
    bool unique = true;
    std::function<std::vector<double>(double)> state;  // physical state only (no clock)
};

namespace detail {

// Root of a scalar monotone-ish function by bisection refined with Newton.
inline double find_root(const std::function<double(double)>& f, double lo, double hi) {
    double flo = f(lo);
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = f(mid);
        if ((flo <= 0) == (fm <= 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

inline AnalyticReference analytic_reference(const std::string& id, std::span<const double> x0v, double T) {
    AnalyticReference ref;
    if (id == "crossing" || id == "tutorial-a") {
        double x0 = x0v[0];
        if (x0 < 0) {
            double ts = -x0 / 3.0;
            if (ts < T) ref.switch_times = {ts};
            ref.state = [x0, ts](double t) {
                return std::vector<double>{t < ts ? x0 + 3 * t : (t - ts)};
            };
        } else {
            ref.state = [x0](double t) { return std::vector<double>{x0 + t}; };
        }
        return ref;
    }
    if (id == "slide-in" || id == "tutorial-b") {
        double x0 = x0v[0];
        double s = x0 >= 0 ? 1.0 : -1.0;
        // |x| shrinks at rate 1 - s*0.2 sin(5t); closed-form antiderivative.
        auto traj = [x0, s](double t) {
            return x0 - s * t + s * 0.04 * (1.0 - std::cos(5.0 * t));
        };
        double t_hit = x0 == 0 ? 0.0 : detail::find_root([&](double t) { return s * traj(t); }, 0.0,
                                                         std::abs(x0) / 0.8 + 1.0);
        if (t_hit < T && x0 != 0) ref.switch_times = {t_hit};
        ref.state = [traj, t_hit](double t) {
            return std::vector<double>{t < t_hit ? traj(t) : 0.0};
        };
        return ref;
    }
    if (id == "slide-out" || id == "tutorial-c") {
        double x0 = x0v[0];
        if (x0 != 0.0) throw std::invalid_argument("slide-out reference supports x0 = 0");
        // slides on x = 0 until t = 1, then dx/dt = -1 + t.
        if (1.0 < T) ref.switch_times = {1.0};
        ref.state = [](double t) {
            return std::vector<double>{t <= 1.0 ? 0.0 : 0.5 * (t - 1.0) * (t - 1.0)};
        };
        return ref;
    }
    if (id == "spontaneous" || id == "tutorial-d") {
        double x0 = x0v[0];
        if (x0 == 0.0) {
            ref.unique = false;  // x == 0 is one of infinitely many solutions
            ref.state = [](double) { return std::vector<double>{0.0}; };
        } else {
            double s = x0 > 0 ? 1.0 : -1.0;
            ref.state = [x0, s](double t) { return std::vector<double>{x0 + s * t}; };
        }
        return ref;
    }
    throw std::invalid_argument("analytic_reference: unsupported model id '" + id + "'");
}

// Piecewise-exponential solution of the catalog IRMA scenario (u_input = 0),
// valid while only the two known switches occur (first ~140 minutes).
struct IrmaReference {
    double t1, t2;
    std::function<std::vector<double>(double)> state;
};

inline IrmaReference irma_reference() {
    IrmaParameters prm;
    const double a1_hi = (prm.kappa1[0] + prm.kappa2[0]) / prm.p[0];  // x1 asymptote, a6 = 1
    const double a1_lo = prm.kappa1[0] / prm.p[0];
    const double a2_hi = (prm.kappa1[1] + prm.kappa2[1]) / prm.p[1];  // x2 asymptote, term on
    const double a2_lo = prm.kappa1[1] / prm.p[1];
    const double a3 = (prm.kappa1[2] + prm.kappa2[2]) / prm.p[2];
    const double a4 = prm.kappa1[3] / prm.p[3];
    const double a5 = (prm.kappa1[4] + prm.kappa2[4]) / prm.p[4];

    IrmaReference ref;
    // x4 decays from 0.05 toward 0.025 and crosses the 0.04 threshold (psi_6).
    ref.t1 = std::log((prm.x0[3] - a4) / (prm.thresholds[5] - a4)) / prm.p[3];
    double x1_t1 = a1_hi + (prm.x0[0] - a1_hi) * std::exp(-prm.p[0] * ref.t1);
    // x1 then decays toward kappa1_1/p1 and crosses the 0.01 threshold (psi_1).
    ref.t2 = ref.t1 + std::log((x1_t1 - a1_lo) / (prm.thresholds[0] - a1_lo)) / prm.p[0];
    double t1 = ref.t1, t2 = ref.t2;
    double x2_t2 = a2_hi + (prm.x0[1] - a2_hi) * std::exp(-prm.p[1] * t2);

    ref.state = [=](double t) {
        IrmaParameters q;
        std::vector<double> x(5);
        x[0] = t < t1 ? a1_hi + (q.x0[0] - a1_hi) * std::exp(-q.p[0] * t)
                      : a1_lo + (x1_t1 - a1_lo) * std::exp(-q.p[0] * (t - t1));
        x[1] = t < t2 ? a2_hi + (q.x0[1] - a2_hi) * std::exp(-q.p[1] * t)
                      : a2_lo + (x2_t2 - a2_lo) * std::exp(-q.p[1] * (t - t2));
        x[2] = a3 + (q.x0[2] - a3) * std::exp(-q.p[2] * t);
        x[3] = a4 + (q.x0[3] - a4) * std::exp(-q.p[3] * t);
        x[4] = a5 + (q.x0[4] - a5) * std::exp(-q.p[4] * t);
        return x;
    };
    return ref;
}

}  // namespace fesd
