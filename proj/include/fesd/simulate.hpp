#pragma once

// =============================================================================
// Multi-step integration driving FESD (or fixed-grid RK) solves, trajectory
// and switch extraction, collocation-polynomial dense output, forward
// sensitivities by implicit differentiation of the reduced square system, and
// convergence-order studies with a small worker pool.
// =============================================================================

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "fesd/solve.hpp"

namespace fesd {

struct TrajectorySwitch {
    double t = 0;
    int psi_index = -1;
    SwitchKind kind = SwitchKind::None;
    double psi_value = 0;  // |psi| at the detected switch
};

struct StepSolution {
    Eigen::VectorXd w;
    std::vector<double> params;
    std::vector<BoundaryClassification> boundaries;
    SolveReport report;
};

struct Trajectory {
    int n_x = 0;
    double T_sim = 0;
    std::vector<double> t_grid;                // all element boundaries
    std::vector<std::vector<double>> x_grid;   // states at the grid points
    std::vector<TrajectorySwitch> switches;
    std::vector<std::vector<int>> active_sets; // per element (theta-based variants)
    std::vector<StepSolution> steps;
    bool failed = false;
    int failed_step = -1;

    const std::vector<double>& terminal_state() const { return x_grid.back(); }
};

struct IntegrateOptions {
    HomotopySettings homotopy;
    bool warm_start = true;
    double switch_psi_tol = 1e-7;
    double theta_active_tol = 1e-6;
};

namespace detail {

// Active set of one element from the stage selector values.
inline std::vector<int> element_active_set(const FesdSystem& S, const Eigen::VectorXd& w, int n,
                                           double tol) {
    std::vector<int> act;
    if (S.dcs.z_theta < 0) return act;
    int n_theta = S.dcs.variant == DcsVariant::Stewart ? S.dcs.n_f : S.dcs.n_f;
    for (int k = 0; k < n_theta; ++k) {
        double v = 0;
        for (int m = 0; m < S.n_s(); ++m) v = std::max(v, w(S.idx_z(n, m, S.dcs.z_theta + k)));
        if (v > tol) act.push_back(k);
    }
    return act;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// integrate: chains N_sim FESD solves over [0, T_sim].
// ---------------------------------------------------------------------------
inline Trajectory integrate(const FesdSystem& S_template, int n_sim, double T_sim,
                            std::span<const double> s0, std::span<const double> u = {},
                            const IntegrateOptions& opt = {}) {
    if (T_sim <= 0 || n_sim < 1) throw std::invalid_argument("integrate: bad horizon");
    const FesdSystem& S = S_template;
    const int n_x = S.n_x();
    const double dt = T_sim / n_sim;

    Trajectory traj;
    traj.n_x = n_x;
    traj.T_sim = T_sim;
    traj.t_grid.push_back(0.0);
    traj.x_grid.emplace_back(s0.begin(), s0.end());

    std::vector<double> qv(u.begin(), u.end());
    if (qv.empty()) qv.assign(static_cast<size_t>(S.dcs.n_u), 0.0);

    std::vector<double> state(s0.begin(), s0.end());
    Eigen::VectorXd prev_w, warm;
    std::vector<double> fixed_h(static_cast<size_t>(S.n_fe), dt / S.n_fe);

    for (int k = 0; k < n_sim; ++k) {
        const Eigen::VectorXd* warm_ptr = nullptr;
        if (opt.warm_start && prev_w.size() == S.n_w) {
            warm = warm_from_previous(S, prev_w, state, qv, dt, opt.homotopy.sigma0);
            warm_ptr = &warm;
        }
        FesdSolution sol =
            homotopy_solve(S, state, qv, dt, opt.homotopy, warm_ptr,
                           S.opt.free_grid ? std::span<const double>{} : std::span<const double>(fixed_h));

        StepSolution step;
        step.w = sol.w;
        step.params = S.make_params(state, qv, dt, 0.0,
                                    S.opt.free_grid ? std::span<const double>{} : std::span<const double>(fixed_h));
        step.boundaries = sol.boundaries;
        step.report = sol.report;
        traj.steps.push_back(step);

        if (!sol.report.converged) {
            traj.failed = true;
            traj.failed_step = k;
            return traj;
        }

        double t0 = k * dt;
        double tacc = t0;
        for (int n = 0; n < S.n_fe; ++n) {
            double h = S.opt.free_grid ? sol.w(S.idx_h(n)) : fixed_h[static_cast<size_t>(n)];
            tacc += h;
            traj.t_grid.push_back(tacc);
            std::vector<double> xn(static_cast<size_t>(n_x));
            for (int i = 0; i < n_x; ++i) xn[static_cast<size_t>(i)] = sol.w(S.idx_x(n + 1, i));
            traj.x_grid.push_back(xn);
            traj.active_sets.push_back(detail::element_active_set(S, sol.w, n, opt.theta_active_tol));

            // interior switch records
            if (n + 1 < S.n_fe && !sol.boundaries.empty()) {
                BoundaryClassification bc;
                for (const auto& cand : sol.boundaries)
                    if (cand.element_boundary == n + 1) bc = cand;
                if (bc.switched) {
                    TrajectorySwitch sw;
                    sw.t = tacc;
                    sw.kind = bc.kind;
                    // switching function index and value at the boundary
                    double best = std::numeric_limits<double>::infinity();
                    for (int j = 0; j < S.dcs.n_psi; ++j) {
                        double pv = std::abs(eval_once(S.dcs.psi_x[static_cast<size_t>(j)], xn));
                        if (!S.dcs.g_x.empty()) {
                            if (pv < best) {
                                best = pv;
                                sw.psi_index = j;
                            }
                        } else if (bc.group == j) {
                            best = pv;
                            sw.psi_index = j;
                        }
                    }
                    sw.psi_value = best;
                    traj.switches.push_back(sw);
                }
            }
        }

        for (int i = 0; i < n_x; ++i) state[static_cast<size_t>(i)] = sol.w(S.idx_x(S.n_fe, i));
        prev_w = sol.w;
    }

    // switches falling exactly on step boundaries: the active set changes
    // between the last element of one step and the first of the next
    for (size_t e = S.n_fe; e < traj.active_sets.size(); e += 1) {
        if (e % static_cast<size_t>(S.n_fe) != 0) continue;
        const auto& prev = traj.active_sets[e - 1];
        const auto& next = traj.active_sets[e];
        if (!prev.empty() && !next.empty() && prev != next) {
            double t = traj.t_grid[e];
            bool known = false;
            for (const auto& sw : traj.switches) known |= std::abs(sw.t - t) < 1e-12;
            if (!known) {
                TrajectorySwitch sw;
                sw.t = t;
                sw.kind = prev.size() < next.size()
                              ? SwitchKind::EnterSliding
                              : (prev.size() > next.size() ? SwitchKind::LeaveSliding
                                                           : SwitchKind::Crossing);
                double best = std::numeric_limits<double>::infinity();
                const auto& xn = traj.x_grid[e];
                for (int j = 0; j < S.dcs.n_psi; ++j) {
                    double pv = std::abs(eval_once(S.dcs.psi_x[static_cast<size_t>(j)], xn));
                    if (pv < best) {
                        best = pv;
                        sw.psi_index = j;
                    }
                }
                sw.psi_value = best;
                traj.switches.push_back(sw);
            }
        }
    }
    std::sort(traj.switches.begin(), traj.switches.end(),
              [](const TrajectorySwitch& a, const TrajectorySwitch& b) { return a.t < b.t; });
    return traj;
}

// Convenience: build + integrate a catalog-style model.
inline Trajectory integrate(const DcsSystem& dcs, const ButcherTableau& tab, int n_fe, int n_sim,
                            double T_sim, std::span<const double> s0,
                            std::span<const double> u = {}, bool fesd_grid = true,
                            const IntegrateOptions& opt = {}) {
    FesdOptions fo;
    fo.free_grid = fesd_grid;
    auto S = assemble(dcs, tab, n_fe, fo);
    return integrate(S, n_sim, T_sim, s0, u, opt);
}

// ---------------------------------------------------------------------------
// Dense output: collocation polynomial inside the containing element.
// ---------------------------------------------------------------------------
inline std::vector<double> interpolate(const Trajectory& traj, const FesdSystem& S, double t) {
    if (t < -1e-12 || t > traj.T_sim * (1 + 1e-12))
        throw std::invalid_argument("interpolate: t outside the simulated range");
    t = std::clamp(t, 0.0, traj.T_sim);

    // containing element
    size_t e = 0;
    while (e + 1 < traj.t_grid.size() - 1 && traj.t_grid[e + 1] < t) ++e;
    int step = static_cast<int>(e) / S.n_fe;
    int n = static_cast<int>(e) % S.n_fe;
    const auto& w = traj.steps[static_cast<size_t>(step)].w;

    double t0 = traj.t_grid[e];
    double h = traj.t_grid[e + 1] - traj.t_grid[e];
    double rho = h > 0 ? (t - t0) / h : 0.0;

    std::vector<double> x(static_cast<size_t>(traj.n_x));
    for (int i = 0; i < traj.n_x; ++i) {
        double acc = w(S.idx_x(n, i));
        for (int m = 0; m < S.n_s(); ++m) {
            // integral of the Lagrange basis from 0 to rho
            double integral = 0.0, power = rho;
            const auto& ell = S.tab.ell[static_cast<size_t>(m)];
            for (size_t d = 0; d < ell.size(); ++d) {
                integral += ell[d] * power / static_cast<double>(d + 1);
                power *= rho;
            }
            acc += h * integral * w(S.idx_v(n, m, i));
        }
        x[static_cast<size_t>(i)] = acc;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Forward sensitivity d s1 / d s0 of one step by implicit differentiation of
// the reduced (polished) square system.
// ---------------------------------------------------------------------------
inline Eigen::MatrixXd forward_sensitivity(const FesdSystem& S, const StepSolution& step) {
    auto reduced = build_polished_bundle(S, step.w, step.params, step.boundaries);
    const int n = S.n_w;
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(reduced->rows(), n);
    std::span<const double> params(step.params);
    std::span<const double> wv(step.w.data(), static_cast<size_t>(n));
    reduced->jacobian_into(wv, params, [&](int r, int c, double v) { J(r, c) = v; });
    if (J.rows() != n) throw std::runtime_error("forward_sensitivity: reduced system not square");

    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible())
        throw std::runtime_error("forward_sensitivity: singular Jacobian (degenerate switch)");

    const int n_x = S.n_x();
    Eigen::MatrixXd rhs(n, n_x);
    for (int i = 0; i < n_x; ++i) {
        auto col = reduced->param_derivative(wv, params, S.p_s0 + i);
        for (int r = 0; r < n; ++r) rhs(r, i) = -col[static_cast<size_t>(r)];
    }
    Eigen::MatrixXd dW = lu.solve(rhs);

    Eigen::MatrixXd out(n_x, n_x);
    for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_x; ++j) out(i, j) = dW(S.idx_x(S.n_fe, i), j);
    return out;
}

inline Eigen::MatrixXd forward_sensitivity(const FesdSystem& S, const Trajectory& traj) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(S.n_x(), S.n_x());
    for (const auto& step : traj.steps) acc = forward_sensitivity(S, step) * acc;
    return acc;
}

// ---------------------------------------------------------------------------
// Convergence-order study.
// ---------------------------------------------------------------------------
struct SchemeSpec {
    RkFamily family = RkFamily::RadauIIA;
    int n_s = 2;
    bool fesd = true;

    std::string name() const {
        std::string base = family == RkFamily::RadauIIA ? "radau-iia" : "gauss-legendre";
        base += "-" + std::to_string(n_s);
        if (!fesd) base += "-std";
        return base;
    }
    int nominal_order() const { return family == RkFamily::RadauIIA ? 2 * n_s - 1 : 2 * n_s; }
};

struct OrderStudyCell {
    std::string scheme;
    int order_nominal = 0;
    int n_sim = 0;
    double h_avg = 0;
    double err = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
};

struct OrderStudyScheme {
    std::string scheme;
    int order_nominal = 0;
    double slope = std::numeric_limits<double>::quiet_NaN();
    int points_used = 0;
    std::vector<OrderStudyCell> cells;
};

struct OrderStudyResult {
    std::vector<OrderStudyScheme> schemes;
};

struct OrderStudyOptions {
    double fit_err_lo = 1e-11;
    double fit_err_hi = 1e-2;
    bool error_max_over_grid = false;  // default terminal-state error
    IntegrateOptions integrate;
    int threads = 0;  // 0: FESD_STEP_THREADS env or hardware concurrency
};

inline int worker_count(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("FESD_STEP_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// reference: map t -> state
using ReferenceFn = std::function<std::vector<double>(double)>;

inline OrderStudyResult order_study(const DcsSystem& dcs, const std::vector<SchemeSpec>& schemes,
                                    const std::vector<int>& n_sims, int n_fe, double T_sim,
                                    std::span<const double> s0, std::span<const double> u,
                                    const ReferenceFn& reference,
                                    const OrderStudyOptions& opt = {}) {
    struct Cell {
        int scheme;
        int n_sim;
    };
    std::vector<Cell> cells;
    for (size_t s = 0; s < schemes.size(); ++s)
        for (int ns : n_sims) cells.push_back({static_cast<int>(s), ns});

    std::vector<OrderStudyCell> results(cells.size());
    std::atomic<size_t> next{0};
    std::vector<double> s0v(s0.begin(), s0.end());
    std::vector<double> uv(u.begin(), u.end());

    auto run_cell = [&](size_t c) {
        const auto& cell = cells[c];
        const auto& sch = schemes[static_cast<size_t>(cell.scheme)];
        OrderStudyCell out;
        out.scheme = sch.name();
        out.order_nominal = sch.nominal_order();
        out.n_sim = cell.n_sim;
        out.h_avg = T_sim / (static_cast<double>(cell.n_sim) * n_fe);
        try {
            auto tab = tableau(sch.family, sch.n_s);
            FesdOptions fo;
            fo.free_grid = sch.fesd;
            auto S = assemble(dcs, tab, n_fe, fo);
            auto traj = integrate(S, cell.n_sim, T_sim, s0v, uv, opt.integrate);
            if (!traj.failed) {
                if (opt.error_max_over_grid) {
                    double e = 0;
                    for (size_t g = 0; g < traj.t_grid.size(); ++g) {
                        auto ref = reference(traj.t_grid[g]);
                        double acc = 0;
                        for (size_t i = 0; i < ref.size(); ++i) {
                            double d = traj.x_grid[g][i] - ref[i];
                            acc += d * d;
                        }
                        e = std::max(e, std::sqrt(acc));
                    }
                    out.err = e;
                } else {
                    auto ref = reference(T_sim);
                    double acc = 0;
                    for (size_t i = 0; i < ref.size(); ++i) {
                        double d = traj.terminal_state()[i] - ref[i];
                        acc += d * d;
                    }
                    out.err = std::sqrt(acc);
                }
                out.ok = true;
            }
        } catch (const std::exception&) {
            out.ok = false;
        }
        results[c] = out;
    };

    int n_threads = std::min<int>(worker_count(opt.threads), static_cast<int>(cells.size()));
    if (n_threads <= 1) {
        for (size_t c = 0; c < cells.size(); ++c) run_cell(c);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&]() {
                for (;;) {
                    size_t c = next.fetch_add(1);
                    if (c >= cells.size()) return;
                    run_cell(c);
                }
            });
        for (auto& th : pool) th.join();
    }

    OrderStudyResult res;
    for (size_t s = 0; s < schemes.size(); ++s) {
        OrderStudyScheme row;
        row.scheme = schemes[s].name();
        row.order_nominal = schemes[s].nominal_order();
        for (size_t c = 0; c < cells.size(); ++c)
            if (cells[c].scheme == static_cast<int>(s)) row.cells.push_back(results[c]);
        std::sort(row.cells.begin(), row.cells.end(),
                  [](const OrderStudyCell& a, const OrderStudyCell& b) { return a.n_sim < b.n_sim; });

        // log-log fit over the pre-floor window
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int used = 0;
        for (const auto& cell : row.cells) {
            if (!cell.ok || !(cell.err >= opt.fit_err_lo && cell.err <= opt.fit_err_hi)) continue;
            double lx = std::log(cell.h_avg), ly = std::log(cell.err);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
            ++used;
        }
        row.points_used = used;
        if (used >= 3) {
            double denom = used * sxx - sx * sx;
            row.slope = (used * sxy - sx * sy) / denom;
        }
        res.schemes.push_back(std::move(row));
    }
    return res;
}

}  // namespace fesd
