#pragma once

// =============================================================================
// Direct transcription of optimal control problems: N_ctrl control intervals
// with piecewise-constant inputs, the switch-detecting discretization inside
// each interval, and a scalar quadrature state for the running cost.
//
// The transcribed problem is a mathematical program with complementarity
// constraints. It is solved by a barrier-homotopy interior Newton method:
// complementarity rows are smoothed C-functions at level sigma, control
// bounds and terminal inequalities enter a log-barrier at level mu, and both
// parameters decay jointly. A terminal active-set polish (fixed branches,
// fixed active bounds, mu = sigma = 0) restores exact complementarity and a
// machine-accurate KKT point.
// =============================================================================

#include "fesd/simulate.hpp"

namespace fesd {

struct OcpSpec {
    NonsmoothModel model;
    double T = 1.0;
    int n_ctrl = 1;
    int n_fe = 2;
    RkFamily family = RkFamily::RadauIIA;
    int n_s = 2;

    Expr running_cost;                 // L(x, u), in the model's variable space
    Expr terminal_cost;                // R(x)
    std::vector<double> u_lb, u_ub;    // per control component
    std::vector<Expr> terminal_eq;     // g(x(T)) = 0
    std::vector<Expr> terminal_ineq;   // g(x(T)) <= 0
    std::vector<double> x0;
};

struct TranscribedOcp {
    FesdSystem S;          // multi-interval system with controls as unknowns
    int n_ctrl = 1;
    int n_u = 0;
    double dt = 0;         // interval length
    int ell_index = 0;     // quadrature state index in the augmented state
    Expr objective;        // over S's unknowns
    std::vector<Expr> terminal_eq, terminal_ineq;
    std::vector<double> u_lb, u_ub;
    std::vector<double> x0_aug;

    int idx_s(int k, int i = 0) const { return S.idx_x(k * S.n_fe, i); }
    int n_w() const { return S.n_w; }
};

// Appends the quadrature state (ell' = L, ell(0) = 0) to a model.
inline NonsmoothModel augment_with_quadrature(const NonsmoothModel& m, Expr running_cost) {
    NonsmoothModel out;
    out.name = m.name + "+quadrature";
    out.arena = std::make_shared<Arena>();
    out.n_x = m.n_x + 1;
    out.n_u = m.n_u;
    out.clock_index = m.clock_index;
    out.ap_direct = m.ap_direct;
    out.default_x0 = m.default_x0;
    out.default_x0.push_back(0.0);

    // index map: x unchanged, u shifted one slot right, alpha likewise
    auto remap = [&](Expr e, int n_alpha) {
        std::vector<Expr> map(static_cast<size_t>(m.n_x + m.n_u + n_alpha));
        for (int i = 0; i < m.n_x; ++i) map[static_cast<size_t>(i)] = out.arena->var(i);
        for (int i = 0; i < m.n_u; ++i)
            map[static_cast<size_t>(m.n_x + i)] = out.arena->var(out.n_x + i);
        for (int j = 0; j < n_alpha; ++j)
            map[static_cast<size_t>(m.n_x + m.n_u + j)] = out.arena->var(out.n_x + out.n_u + j);
        return out.arena->import(*m.arena, e, map);
    };

    for (const Expr& p : m.psi) out.psi.push_back(remap(p, 0));
    out.S = m.S;
    out.regions = m.regions;
    if (m.ap_direct) {
        for (const Expr& f : m.ap_dynamics) out.ap_dynamics.push_back(remap(f, m.n_psi()));
        out.ap_dynamics.push_back(remap(running_cost, m.n_psi()));
    } else {
        for (const auto& fk : m.dynamics) {
            std::vector<Expr> f;
            for (const Expr& fi : fk) f.push_back(remap(fi, 0));
            f.push_back(remap(running_cost, 0));
            out.dynamics.push_back(std::move(f));
        }
    }
    return out;
}

inline TranscribedOcp transcribe(const OcpSpec& spec) {
    if (spec.n_ctrl < 1) throw std::invalid_argument("transcribe: N_ctrl must be >= 1");
    if (static_cast<int>(spec.u_lb.size()) != spec.model.n_u ||
        static_cast<int>(spec.u_ub.size()) != spec.model.n_u)
        throw std::invalid_argument("transcribe: control bounds must match n_u");
    for (int i = 0; i < spec.model.n_u; ++i)
        if (!(spec.u_lb[static_cast<size_t>(i)] < spec.u_ub[static_cast<size_t>(i)]) ||
            !std::isfinite(spec.u_lb[static_cast<size_t>(i)]) ||
            !std::isfinite(spec.u_ub[static_cast<size_t>(i)]))
            throw std::invalid_argument("transcribe: declared bounds must be finite and ordered");

    TranscribedOcp t;
    t.n_ctrl = spec.n_ctrl;
    t.n_u = spec.model.n_u;
    t.dt = spec.T / spec.n_ctrl;
    t.u_lb = spec.u_lb;
    t.u_ub = spec.u_ub;

    Expr L = spec.running_cost.valid() ? spec.running_cost : spec.model.arena->constant(0.0);
    NonsmoothModel aug = augment_with_quadrature(spec.model, L);
    t.ell_index = aug.n_x - 1;
    auto dcs = build_step_dcs(aug);

    FesdOptions fo;
    fo.free_grid = true;
    fo.n_intervals = spec.n_ctrl;
    fo.controls_as_vars = spec.model.n_u > 0;
    t.S = assemble(dcs, tableau(spec.family, spec.n_s), spec.n_fe, fo);

    // objective: accumulated quadrature state at the end plus the terminal cost
    Arena& A = *t.S.arena;
    int terminal_node = t.S.n_elements();
    Expr obj = A.var(t.S.idx_x(terminal_node, t.ell_index));
    auto import_terminal = [&](Expr e) {
        std::vector<Expr> map(static_cast<size_t>(spec.model.n_x));
        for (int i = 0; i < spec.model.n_x; ++i)
            map[static_cast<size_t>(i)] = A.var(t.S.idx_x(terminal_node, i));
        return A.import(*spec.model.arena, e, map);
    };
    if (spec.terminal_cost.valid()) obj = A.add(obj, import_terminal(spec.terminal_cost));
    t.objective = obj;
    for (const Expr& g : spec.terminal_eq) t.terminal_eq.push_back(import_terminal(g));
    for (const Expr& g : spec.terminal_ineq) t.terminal_ineq.push_back(import_terminal(g));

    t.x0_aug = std::vector<double>(spec.x0.begin(), spec.x0.end());
    t.x0_aug.push_back(0.0);
    return t;
}

// ---------------------------------------------------------------------------
// Barrier-homotopy interior Newton solver.
// ---------------------------------------------------------------------------
struct OcpSettings {
    HomotopySettings homotopy;      // sigma schedule, Armijo parameters
    double mu0 = 1.0;               // initial barrier level
    bool couple_barrier = true;     // mu tracks sigma (both *= kappa per stage)
    double kkt_tol = 1e-6;
    double comp_tol = 1e-8;
    int max_iters_per_stage = 60;
    int polish_iters = 40;
};

struct OcpSolution {
    bool converged = false;
    Eigen::VectorXd w;
    Eigen::VectorXd nu;             // equality multipliers
    double objective = std::numeric_limits<double>::quiet_NaN();
    double kkt_inf = std::numeric_limits<double>::infinity();
    double eq_inf = std::numeric_limits<double>::infinity();
    double comp_residual = std::numeric_limits<double>::infinity();
    int stages = 0;
    int iters = 0;
    double wall_time_s = 0;
    std::string failure;
    std::vector<double> objective_log;  // per homotopy stage

    std::vector<double> controls;                 // n_ctrl x n_u, row-major
    std::vector<double> t_grid;                   // element boundaries
    std::vector<std::vector<double>> x_grid;      // augmented states on the grid
    std::vector<double> switch_times;             // boundaries with active-set changes
};

namespace detail {

// weight * gradient of one bundle row accumulated into g.
inline void accumulate_gradient(const ResidualBundle& R, int row, std::span<const double> xfull,
                                double weight, Eigen::VectorXd& g) {
    const auto& vars = R.row_var_indices(row);
    std::vector<Dual<double>> x(xfull.size());
    for (size_t i = 0; i < xfull.size(); ++i) x[i] = Dual<double>(xfull[i]);
    for (int v : vars) {
        x[static_cast<size_t>(v)].d = 1.0;
        auto val = R.eval_row<Dual<double>>(row, std::span<const Dual<double>>(x));
        x[static_cast<size_t>(v)].d = 0.0;
        g(v) += weight * val.d;
    }
}

// weight * Hessian of one bundle row accumulated into H (dense, symmetric).
inline void accumulate_hessian(const ResidualBundle& R, int row, std::span<const double> xfull,
                               double weight, Eigen::MatrixXd& H) {
    if (weight == 0.0) return;
    const auto& vars = R.row_var_indices(row);
    using D2 = Dual<Dual<double>>;
    std::vector<D2> x(xfull.size());
    for (size_t i = 0; i < xfull.size(); ++i) x[i] = D2(Dual<double>(xfull[i]));
    for (size_t a = 0; a < vars.size(); ++a) {
        for (size_t b = a; b < vars.size(); ++b) {
            int va = vars[a], vb = vars[b];
            x[static_cast<size_t>(va)].v.d = 1.0;  // inner direction
            x[static_cast<size_t>(vb)].d.v = 1.0;  // outer direction
            auto val = R.eval_row<D2>(row, std::span<const D2>(x));
            x[static_cast<size_t>(va)].v.d = 0.0;
            x[static_cast<size_t>(vb)].d.v = 0.0;
            double h = weight * val.d.d;
            H(va, vb) += h;
            if (va != vb) H(vb, va) += h;
        }
    }
}

}  // namespace detail

inline OcpSolution solve_ocp(const TranscribedOcp& t, const OcpSettings& settings = {}) {
    auto t_start = std::chrono::steady_clock::now();
    const FesdSystem& S = t.S;
    OcpSolution sol;

    // Equality bundle: discretization rows plus terminal equalities. The
    // aggregated cross rows are excluded: on the smoothed central path they
    // cannot vanish exactly, so they enter the objective as a least-squares
    // penalty instead (their exactness is restored by the terminal polish).
    ResidualBundle E(S.arena, S.n_w, S.n_p);
    for (int r = 0; r < S.bundle->rows(); ++r) {
        bool is_cross = std::find(S.rows_cross.begin(), S.rows_cross.end(), r) != S.rows_cross.end();
        if (!is_cross) E.add_row(S.bundle->row(r), S.bundle->tag(r));
    }
    for (const Expr& g : t.terminal_eq) E.add_row(g, RowTag::Algebraic);
    const int m_eq = E.rows();

    ResidualBundle C(S.arena, S.n_w, S.n_p);
    for (int r : S.rows_cross) C.add_row(S.bundle->row(r), RowTag::Complementarity);
    const int m_cross = C.rows();
    const double w_pen = 1.0;

    ResidualBundle F(S.arena, S.n_w, S.n_p);
    F.add_row(t.objective, RowTag::Algebraic);
    for (const Expr& g : t.terminal_ineq) F.add_row(g, RowTag::Algebraic);

    const int n = S.n_w;
    const int n_ineq = static_cast<int>(t.terminal_ineq.size());
    const auto& hs = settings.homotopy;

    std::vector<double> qzero(static_cast<size_t>(S.dcs.n_u), 0.0);
    auto params_at = [&](double sigma) {
        return S.make_params(t.x0_aug, qzero, t.dt, sigma);
    };

    // ---- primal initialization: forward simulation with mid-bound controls
    std::vector<double> u_mid(static_cast<size_t>(t.n_u));
    for (int i = 0; i < t.n_u; ++i)
        u_mid[static_cast<size_t>(i)] = 0.5 * (t.u_lb[static_cast<size_t>(i)] + t.u_ub[static_cast<size_t>(i)]);

    Eigen::VectorXd w = initial_guess(S, t.x0_aug, qzero, t.dt, hs.sigma0);
    for (int k = 0; k < t.n_ctrl; ++k)
        for (int i = 0; i < t.n_u; ++i) w(S.idx_q(k, i)) = u_mid[static_cast<size_t>(i)];
    {
        FesdOptions fo;
        fo.free_grid = true;
        auto Ssim = assemble(S.dcs, S.tab, S.n_fe, fo);
        IntegrateOptions iopt;
        auto traj = integrate(Ssim, t.n_ctrl, t.n_ctrl * t.dt, t.x0_aug, u_mid, iopt);
        if (!traj.failed) {
            for (int k = 0; k < t.n_ctrl; ++k) {
                const auto& ws = traj.steps[static_cast<size_t>(k)].w;
                for (int n_el = 0; n_el <= S.n_fe; ++n_el)
                    for (int i = 0; i < S.n_x(); ++i)
                        w(S.idx_x(k * S.n_fe + n_el, i)) = ws(Ssim.idx_x(n_el, i));
                for (int n_el = 0; n_el < S.n_fe; ++n_el) {
                    for (int m = 0; m < S.n_s(); ++m)
                        for (int i = 0; i < S.n_x(); ++i)
                            w(S.idx_v(k * S.n_fe + n_el, m, i)) = ws(Ssim.idx_v(n_el, m, i));
                    for (int m = 0; m < S.n_s(); ++m)
                        for (int z = 0; z < S.n_z(); ++z)
                            w(S.idx_z(k * S.n_fe + n_el, m, z)) = ws(Ssim.idx_z(n_el, m, z));
                    w(S.idx_h(k * S.n_fe + n_el)) = ws(Ssim.idx_h(n_el));
                }
            }
        }
    }
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(m_eq);

    auto eval_F = [&](const Eigen::VectorXd& wv, std::span<const double> params) {
        return F.eval(std::span<const double>(wv.data(), static_cast<size_t>(n)), params);
    };

    // barrier value; returns +inf when outside the interior
    auto barrier_value = [&](const Eigen::VectorXd& wv, const std::vector<double>& fvals,
                             double mu) -> double {
        double b = 0;
        for (int k = 0; k < t.n_ctrl; ++k)
            for (int i = 0; i < t.n_u; ++i) {
                double u = wv(S.idx_q(k, i));
                double lo = u - t.u_lb[static_cast<size_t>(i)], hi = t.u_ub[static_cast<size_t>(i)] - u;
                if (lo <= 0 || hi <= 0) return std::numeric_limits<double>::infinity();
                b -= mu * (std::log(lo) + std::log(hi));
            }
        for (int j = 0; j < n_ineq; ++j) {
            double slack = -fvals[static_cast<size_t>(1 + j)];
            if (slack <= 0) return std::numeric_limits<double>::infinity();
            b -= mu * std::log(slack);
        }
        return b;
    };

    double rho = 1.0;
    double sigma = hs.sigma0;
    double mu = settings.mu0;
    bool failed = false;

    auto stage_solve = [&](double sig, double mub, double tol_r) -> bool {
        auto params = params_at(sig);
        std::span<const double> pspan(params);
        std::vector<double> xfull(static_cast<size_t>(n + S.n_p));

        for (int it = 0; it < settings.max_iters_per_stage; ++it) {
            ++sol.iters;
            for (int i = 0; i < n; ++i) xfull[static_cast<size_t>(i)] = w(i);
            for (int i = 0; i < S.n_p; ++i) xfull[static_cast<size_t>(n + i)] = params[static_cast<size_t>(i)];

            std::vector<double> evals, fvals, cvals;
            try {
                evals = E.eval(std::span<const double>(w.data(), static_cast<size_t>(n)), pspan);
                fvals = eval_F(w, pspan);
                cvals = m_cross ? C.eval(std::span<const double>(w.data(), static_cast<size_t>(n)), pspan)
                                : std::vector<double>{};
            } catch (const EvalError&) {
                return false;
            }

            // gradient of f + cross penalty + barrier
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
            detail::accumulate_gradient(F, 0, xfull, 1.0, grad);
            for (int c = 0; c < m_cross; ++c)
                detail::accumulate_gradient(C, c, xfull, w_pen * cvals[static_cast<size_t>(c)], grad);
            for (int k = 0; k < t.n_ctrl; ++k)
                for (int i = 0; i < t.n_u; ++i) {
                    double u = w(S.idx_q(k, i));
                    grad(S.idx_q(k, i)) += -mub / (u - t.u_lb[static_cast<size_t>(i)]) +
                                           mub / (t.u_ub[static_cast<size_t>(i)] - u);
                }
            for (int j = 0; j < n_ineq; ++j) {
                double slack = -fvals[static_cast<size_t>(1 + j)];
                detail::accumulate_gradient(F, 1 + j, xfull, mub / slack, grad);
            }

            // KKT residual
            Eigen::VectorXd Evec(m_eq);
            for (int r = 0; r < m_eq; ++r) Evec(r) = evals[static_cast<size_t>(r)];
            Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m_eq, n);
            E.jacobian_into(std::span<const double>(w.data(), static_cast<size_t>(n)), pspan,
                            [&](int r, int c, double v) { J(r, c) = v; });
            Eigen::VectorXd stat = grad + J.transpose() * nu;
            double kkt = stat.lpNorm<Eigen::Infinity>();
            double eqn = Evec.lpNorm<Eigen::Infinity>();
            if (kkt <= tol_r && eqn <= tol_r) return true;

            // Hessian of the Lagrangian (Gauss-Newton form for the penalty)
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
            detail::accumulate_hessian(F, 0, xfull, 1.0, H);
            for (int r = 0; r < m_eq; ++r) detail::accumulate_hessian(E, r, xfull, nu(r), H);
            for (int c = 0; c < m_cross; ++c) {
                Eigen::VectorXd gc = Eigen::VectorXd::Zero(n);
                detail::accumulate_gradient(C, c, xfull, 1.0, gc);
                H += w_pen * gc * gc.transpose();
                detail::accumulate_hessian(C, c, xfull, w_pen * cvals[static_cast<size_t>(c)], H);
            }
            for (int k = 0; k < t.n_ctrl; ++k)
                for (int i = 0; i < t.n_u; ++i) {
                    double u = w(S.idx_q(k, i));
                    double lo = u - t.u_lb[static_cast<size_t>(i)], hi = t.u_ub[static_cast<size_t>(i)] - u;
                    H(S.idx_q(k, i), S.idx_q(k, i)) += mub / (lo * lo) + mub / (hi * hi);
                }
            for (int j = 0; j < n_ineq; ++j) {
                double slack = -fvals[static_cast<size_t>(1 + j)];
                Eigen::VectorXd gj = Eigen::VectorXd::Zero(n);
                detail::accumulate_gradient(F, 1 + j, xfull, 1.0, gj);
                H += (mub / (slack * slack)) * gj * gj.transpose();
                detail::accumulate_hessian(F, 1 + j, xfull, mub / slack, H);
            }

            // KKT step with inertia regularization fallback
            Eigen::VectorXd dw(n), dnu(m_eq);
            double delta = 0.0;
            for (int attempt = 0; attempt < 8; ++attempt) {
                Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m_eq, n + m_eq);
                K.topLeftCorner(n, n) = H + delta * Eigen::MatrixXd::Identity(n, n);
                K.topRightCorner(n, m_eq) = J.transpose();
                K.bottomLeftCorner(m_eq, n) = J;
                K.bottomRightCorner(m_eq, m_eq) -= 1e-10 * Eigen::MatrixXd::Identity(m_eq, m_eq);
                Eigen::VectorXd rhs(n + m_eq);
                rhs.head(n) = -stat;
                rhs.tail(m_eq) = -Evec;
                Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
                Eigen::VectorXd step = lu.solve(rhs);
                if (step.allFinite()) {
                    dw = step.head(n);
                    dnu = step.tail(m_eq);
                    break;
                }
                delta = delta == 0 ? 1e-8 : delta * 100;
                if (attempt == 7) return false;
            }

            // fraction-to-boundary on the barrier interior
            double t_max = 1.0;
            for (int k = 0; k < t.n_ctrl; ++k)
                for (int i = 0; i < t.n_u; ++i) {
                    double u = w(S.idx_q(k, i));
                    double du = dw(S.idx_q(k, i));
                    if (du < 0) t_max = std::min(t_max, 0.995 * (t.u_lb[static_cast<size_t>(i)] - u) / du);
                    if (du > 0) t_max = std::min(t_max, 0.995 * (t.u_ub[static_cast<size_t>(i)] - u) / du);
                }

            // l1 merit line search
            rho = std::max(rho, 1.5 * (nu + dnu).lpNorm<Eigen::Infinity>() + 1.0);
            double pen0 = 0;
            for (int c = 0; c < m_cross; ++c)
                pen0 += 0.5 * w_pen * cvals[static_cast<size_t>(c)] * cvals[static_cast<size_t>(c)];
            double phi0 = fvals[0] + pen0 + barrier_value(w, fvals, mub) + rho * Evec.lpNorm<1>();
            double dirder = grad.dot(dw) - rho * Evec.lpNorm<1>();
            double step_t = t_max;
            bool accepted = false;
            while (step_t >= hs.min_step) {
                Eigen::VectorXd wt = w + step_t * dw;
                try {
                    auto et = E.eval(std::span<const double>(wt.data(), static_cast<size_t>(n)), pspan);
                    auto ft = eval_F(wt, pspan);
                    double e1 = 0;
                    for (double v : et) e1 += std::abs(v);
                    double pent = 0;
                    if (m_cross) {
                        auto ct = C.eval(std::span<const double>(wt.data(), static_cast<size_t>(n)), pspan);
                        for (double v : ct) pent += 0.5 * w_pen * v * v;
                    }
                    double phi = ft[0] + pent + barrier_value(wt, ft, mub) + rho * e1;
                    if (std::isfinite(phi) && phi <= phi0 + hs.armijo_c * step_t * std::min(dirder, 0.0)) {
                        w = wt;
                        nu += step_t * dnu;
                        accepted = true;
                        break;
                    }
                } catch (const EvalError&) {
                }
                step_t *= hs.backtrack_ratio;
            }
            if (!accepted) return false;
        }
        return false;  // iteration cap, treated as soft failure by the caller
    };

    // ---- homotopy over (sigma, mu)
    while (true) {
        double tol_stage = std::max(settings.kkt_tol, 0.1 * std::sqrt(sigma * settings.mu0));
        bool ok = stage_solve(sigma, mu, tol_stage);
        ++sol.stages;
        auto params = params_at(sigma);
        try {
            auto fv = eval_F(w, params);
            sol.objective_log.push_back(fv[0]);
        } catch (const EvalError&) {
            sol.objective_log.push_back(std::numeric_limits<double>::quiet_NaN());
        }
        if (!ok && !w.allFinite()) {
            failed = true;
            sol.failure = "barrier stage diverged";
            break;
        }
        if (sigma <= hs.sigma_min) break;
        sigma = std::max(sigma * hs.kappa, hs.sigma_min);
        if (settings.couple_barrier) mu = std::max(mu * hs.kappa, 1e-12);
    }

    // ---- active-set polish: exact complementarity branches, active bounds
    bool polished = false;
    std::vector<BoundaryClassification> classification;
    if (!failed) {
        auto params_exact = params_at(0.0);
        std::span<const double> pspan(params_exact);
        classification = classify_boundaries(S, w, params_exact, sigma);

        for (int round = 0; round < 3; ++round) {
            auto reduced = build_polished_bundle(S, w, params_exact, classification);
            ResidualBundle Ered(S.arena, S.n_w, S.n_p);
            for (int r = 0; r < reduced->rows(); ++r) Ered.add_row(reduced->row(r), reduced->tag(r));
            for (const Expr& g : t.terminal_eq) Ered.add_row(g, RowTag::Algebraic);
            // active control bounds
            double act_tol = 10 * std::sqrt(std::max(mu, 1e-16));
            for (int k = 0; k < t.n_ctrl; ++k)
                for (int i = 0; i < t.n_u; ++i) {
                    double u = w(S.idx_q(k, i));
                    double bound = std::numeric_limits<double>::quiet_NaN();
                    if (u - t.u_lb[static_cast<size_t>(i)] < act_tol) bound = t.u_lb[static_cast<size_t>(i)];
                    else if (t.u_ub[static_cast<size_t>(i)] - u < act_tol) bound = t.u_ub[static_cast<size_t>(i)];
                    if (std::isfinite(bound))
                        Ered.add_row(S.arena->sub(S.arena->var(S.idx_q(k, i)), S.arena->constant(bound)),
                                     RowTag::Algebraic);
                }
            // active terminal inequalities
            {
                std::vector<double> fvals = eval_F(w, params_exact);
                for (int j = 0; j < n_ineq; ++j)
                    if (-fvals[static_cast<size_t>(1 + j)] < act_tol)
                        Ered.add_row(t.terminal_ineq[static_cast<size_t>(j)], RowTag::Algebraic);
            }

            const int m_red = Ered.rows();
            Eigen::VectorXd nur = Eigen::VectorXd::Zero(m_red);
            std::vector<double> xfull(static_cast<size_t>(n + S.n_p));
            bool round_ok = false;

            for (int it = 0; it < settings.polish_iters; ++it) {
                ++sol.iters;
                for (int i = 0; i < n; ++i) xfull[static_cast<size_t>(i)] = w(i);
                for (int i = 0; i < S.n_p; ++i)
                    xfull[static_cast<size_t>(n + i)] = params_exact[static_cast<size_t>(i)];
                std::vector<double> evals;
                try {
                    evals = Ered.eval(std::span<const double>(w.data(), static_cast<size_t>(n)), pspan);
                } catch (const EvalError&) {
                    break;
                }
                Eigen::VectorXd Evec(m_red);
                for (int r = 0; r < m_red; ++r) Evec(r) = evals[static_cast<size_t>(r)];
                Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
                detail::accumulate_gradient(F, 0, xfull, 1.0, grad);
                Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m_red, n);
                Ered.jacobian_into(std::span<const double>(w.data(), static_cast<size_t>(n)), pspan,
                                   [&](int r, int c, double v) { J(r, c) = v; });
                Eigen::VectorXd stat = grad + J.transpose() * nur;
                sol.kkt_inf = stat.lpNorm<Eigen::Infinity>();
                sol.eq_inf = Evec.lpNorm<Eigen::Infinity>();
                if (sol.kkt_inf <= settings.kkt_tol && sol.eq_inf <= 1e-10) {
                    round_ok = true;
                    break;
                }

                Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
                detail::accumulate_hessian(F, 0, xfull, 1.0, H);
                for (int r = 0; r < m_red; ++r) detail::accumulate_hessian(Ered, r, xfull, nur(r), H);

                Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m_red, n + m_red);
                double delta = 1e-12;
                Eigen::VectorXd step;
                for (int attempt = 0; attempt < 8; ++attempt) {
                    K.topLeftCorner(n, n) = H + delta * Eigen::MatrixXd::Identity(n, n);
                    K.topRightCorner(n, m_red) = J.transpose();
                    K.bottomLeftCorner(m_red, n) = J;
                    K.bottomRightCorner(m_red, m_red) = -1e-12 * Eigen::MatrixXd::Identity(m_red, m_red);
                    Eigen::VectorXd rhs(n + m_red);
                    rhs.head(n) = -stat;
                    rhs.tail(m_red) = -Evec;
                    step = Eigen::PartialPivLU<Eigen::MatrixXd>(K).solve(rhs);
                    if (step.allFinite()) break;
                    delta = std::max(delta * 100, 1e-8);
                }
                if (!step.allFinite()) break;
                double damp = 1.0;
                // keep controls inside their (closed) bounds during the polish
                for (int k = 0; k < t.n_ctrl; ++k)
                    for (int i = 0; i < t.n_u; ++i) {
                        double u = w(S.idx_q(k, i)), du = step(S.idx_q(k, i));
                        if (du < 0 && u + du < t.u_lb[static_cast<size_t>(i)] - 1e-12)
                            damp = std::min(damp, (t.u_lb[static_cast<size_t>(i)] - u) / du);
                        if (du > 0 && u + du > t.u_ub[static_cast<size_t>(i)] + 1e-12)
                            damp = std::min(damp, (t.u_ub[static_cast<size_t>(i)] - u) / du);
                    }
                w += damp * step.head(n);
                nur += damp * step.tail(m_red);
            }

            if (!round_ok) break;
            // switches can migrate onto grid boundaries during the polish;
            // redo the reduction if the pattern changed
            auto again = classify_boundaries(S, w, params_exact, sigma);
            if (again == classification) {
                polished = true;
                break;
            }
            classification = again;
        }
    }

    // ---- reporting and extraction
    auto params_exact = params_at(0.0);
    sol.w = w;
    sol.nu = nu;
    try {
        sol.objective = eval_F(w, params_exact)[0];
    } catch (const EvalError&) {
    }
    sol.comp_residual = complementarity_residual(S, w, params_exact);

    bool bounds_ok = true;
    sol.controls.resize(static_cast<size_t>(t.n_ctrl * t.n_u));
    for (int k = 0; k < t.n_ctrl; ++k)
        for (int i = 0; i < t.n_u; ++i) {
            double u = w(S.idx_q(k, i));
            sol.controls[static_cast<size_t>(k * t.n_u + i)] = u;
            bounds_ok &= u >= t.u_lb[static_cast<size_t>(i)] - 1e-9 &&
                         u <= t.u_ub[static_cast<size_t>(i)] + 1e-9;
        }

    double tacc = 0;
    sol.t_grid.push_back(0);
    sol.x_grid.emplace_back(t.x0_aug);
    for (int n_el = 0; n_el < S.n_elements(); ++n_el) {
        tacc += w(S.idx_h(n_el));
        sol.t_grid.push_back(tacc);
        std::vector<double> xn(static_cast<size_t>(S.n_x()));
        for (int i = 0; i < S.n_x(); ++i) xn[static_cast<size_t>(i)] = w(S.idx_x(n_el + 1, i));
        sol.x_grid.push_back(std::move(xn));
    }
    {
        auto boundaries = classify_boundaries(S, w, params_exact, hs.sigma_min);
        for (const auto& bc : boundaries)
            if (bc.switched) sol.switch_times.push_back(sol.t_grid[static_cast<size_t>(bc.element_boundary)]);
    }

    bool h_ok = true;
    for (int n_el = 0; n_el < S.n_elements(); ++n_el) h_ok &= w(S.idx_h(n_el)) > 1e-9 * t.dt;

    sol.converged = !failed && polished && bounds_ok && h_ok && sol.kkt_inf <= settings.kkt_tol &&
                    sol.comp_residual <= settings.comp_tol;
    if (!sol.converged && sol.failure.empty()) {
        if (failed) sol.failure = "homotopy failure";
        else if (!polished) sol.failure = "polish did not reach the KKT tolerance";
        else if (!bounds_ok) sol.failure = "control bounds violated";
        else if (!h_ok) sol.failure = "degenerate step size";
        else sol.failure = "complementarity residual above tolerance";
    }
    sol.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return sol;
}

}  // namespace fesd
