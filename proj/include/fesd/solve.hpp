#pragma once

// =============================================================================
// Homotopy solver for the assembled FESD / standard-RK systems.
//
// Outer loop: the relaxation parameter sigma decays geometrically; the stage
// complementarity rows are smoothed C-functions (roots satisfy a b = sigma),
// the aggregated cross rows are targeted at c_n sigma and treated as soft
// least-squares rows (their products cannot all sit on the smoothed central
// path simultaneously, so they carry an O(sqrt(sigma)) floor).
//
// Terminal stage: the active set is classified from the last relaxed iterate
// and the reduced square system is solved exactly (sigma = 0): complementarity
// rows become single-branch equations, each interior grid boundary carries
// either an h-continuation row (no switch) or a switch-alignment row, and the
// equilibration rows are dropped. Newton on this smooth square system restores
// machine-accurate switch times and residuals.
// =============================================================================

#include <array>
#include <chrono>
#include <cstdlib>

#include "fesd/discretize.hpp"

namespace fesd {

struct HomotopySettings {
    double sigma0 = 1.0;
    double kappa = 0.1;
    double sigma_min = 1e-10;
    int max_newton_per_stage = 50;
    double armijo_c = 1e-4;
    double backtrack_ratio = 0.5;
    double min_step = 1e-8;
    double tol_min = 1e-12;
    double tol_sigma_factor = 0.1;
    double comp_tol = 1e-9;
    double accept_residual = 1e-8;  // exact-system residual bound for success
    int polish_iters = 40;
    int polish_retries = 3;
    double sigma_reseed = 1e-6;     // restart level after an event-located reseed

    double tol(double sigma) const { return std::max(tol_min, tol_sigma_factor * sigma); }
};

struct SolveReport {
    bool converged = false;
    double residual_inf = std::numeric_limits<double>::infinity();   // exact system, sigma = 0
    double comp_residual = std::numeric_limits<double>::infinity();  // worst pair violation
    int homotopy_stages = 0;
    int newton_iters = 0;
    double wall_time_s = 0.0;
    bool nonstrict = false;   // repulsive sliding arc: solution not unique
    std::string failure;      // empty on success
};

enum class SwitchKind : uint8_t { None, Crossing, EnterSliding, LeaveSliding };

inline const char* switch_kind_name(SwitchKind k) {
    switch (k) {
        case SwitchKind::Crossing: return "crossing";
        case SwitchKind::EnterSliding: return "enter_sliding";
        case SwitchKind::LeaveSliding: return "leave_sliding";
        default: return "none";
    }
}

struct BoundaryClassification {
    int element_boundary = -1;  // grid boundary index b (between elements b-1 and b)
    bool switched = false;
    SwitchKind kind = SwitchKind::None;
    int group = -1;  // switching group (psi index for step/AP, base set for Stewart)
    // Stewart-specific: entering/leaving base sets
    int enter_set = -1, leave_set = -1, stay_set = -1;

    bool operator==(const BoundaryClassification& o) const {
        return element_boundary == o.element_boundary && switched == o.switched &&
               kind == o.kind && group == o.group && enter_set == o.enter_set &&
               leave_set == o.leave_set;
    }
};

struct FesdSolution {
    Eigen::VectorXd w;
    SolveReport report;
    std::vector<BoundaryClassification> boundaries;  // size N_FE-1 (free grids)
    double sigma_end = 0.0;
};

// ---------------------------------------------------------------------------
// Newton with QR least-squares steps and Armijo backtracking.
// ---------------------------------------------------------------------------
struct NewtonOutcome {
    bool ok = false;
    int iters = 0;
    double masked_inf = std::numeric_limits<double>::infinity();
    std::string msg;
};

namespace detail {

inline double masked_norm(const std::vector<double>& r, const std::vector<char>* mask) {
    double m = 0;
    for (size_t i = 0; i < r.size(); ++i)
        if (!mask || (*mask)[i]) m = std::max(m, std::abs(r[i]));
    return m;
}

}  // namespace detail

inline NewtonOutcome newton_solve(const ResidualBundle& R, std::span<const double> params,
                                  Eigen::VectorXd& w, double tol, int max_iters,
                                  const HomotopySettings& hs,
                                  const std::vector<char>* conv_mask = nullptr) {
    NewtonOutcome out;
    const int n = R.n_vars();
    const int m = R.rows();
    Eigen::MatrixXd J(m, n);
    Eigen::VectorXd r(m), dw(n), wtrial(n);

    auto eval_into = [&](const Eigen::VectorXd& wv, Eigen::VectorXd& rv) -> bool {
        try {
            auto vals = R.eval(std::span<const double>(wv.data(), static_cast<size_t>(n)), params);
            for (int i = 0; i < m; ++i) rv(i) = vals[static_cast<size_t>(i)];
            return true;
        } catch (const EvalError&) {
            return false;
        }
    };

    if (!eval_into(w, r)) {
        out.msg = "non-finite residual at initial point";
        return out;
    }

    double best_masked = std::numeric_limits<double>::infinity();
    int stagnant = 0;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<double> rv(r.data(), r.data() + m);
        out.masked_inf = detail::masked_norm(rv, conv_mask);
        if (out.masked_inf <= tol) {
            out.ok = true;
            out.iters = it;
            return out;
        }
        // soft rows can leave the least-squares optimum short of tol; stop
        // once the masked norm stops improving
        if (out.masked_inf >= 0.95 * best_masked) {
            if (++stagnant >= 4) {
                out.msg = "stagnation";
                out.iters = it;
                return out;
            }
        } else {
            stagnant = 0;
        }
        best_masked = std::min(best_masked, out.masked_inf);

        J.setZero();
        try {
            R.jacobian_into(std::span<const double>(w.data(), static_cast<size_t>(n)), params,
                            [&](int row, int col, double v) { J(row, col) = v; });
        } catch (const EvalError& e) {
            out.msg = std::string("jacobian failure: ") + e.what();
            out.iters = it;
            return out;
        }

        dw = J.colPivHouseholderQr().solve(-r);
        bool good = dw.allFinite();
        double phi0 = 0.5 * r.squaredNorm();
        double slope = good ? (J * dw).dot(r) : 0.0;  // directional derivative of phi
        if (!good || slope > 0) {
            // Levenberg fallback
            Eigen::MatrixXd JtJ = J.transpose() * J;
            Eigen::VectorXd g = J.transpose() * r;
            double mu = 1e-8 * (JtJ.diagonal().maxCoeff() + 1.0);
            for (int attempt = 0; attempt < 12; ++attempt) {
                Eigen::MatrixXd M = JtJ + mu * Eigen::MatrixXd::Identity(n, n);
                dw = M.ldlt().solve(-g);
                if (dw.allFinite() && (J * dw).dot(r) < 0) break;
                mu *= 10;
            }
            if (!dw.allFinite()) {
                out.msg = "singular Jacobian";
                out.iters = it;
                return out;
            }
            slope = (J * dw).dot(r);
        }

        double t = 1.0;
        bool accepted = false;
        Eigen::VectorXd rtrial(m);
        while (t >= hs.min_step) {
            wtrial = w + t * dw;
            if (eval_into(wtrial, rtrial)) {
                double phi = 0.5 * rtrial.squaredNorm();
                if (phi <= phi0 + hs.armijo_c * t * slope) {
                    accepted = true;
                    break;
                }
            }
            t *= hs.backtrack_ratio;
        }
        if (!accepted) {
            std::vector<double> rr(r.data(), r.data() + m);
            out.masked_inf = detail::masked_norm(rr, conv_mask);
            out.msg = "line search stall";
            out.iters = it + 1;
            return out;
        }
        w = wtrial;
        r = rtrial;
        out.iters = it + 1;
    }
    std::vector<double> rr(r.data(), r.data() + m);
    out.masked_inf = detail::masked_norm(rr, conv_mask);
    out.msg = "iteration cap";
    out.ok = out.masked_inf <= tol;
    return out;
}

// ---------------------------------------------------------------------------
// Initialization policy.
// ---------------------------------------------------------------------------
// Central-path values of one (alpha, lambda_p, lambda_n) triple: the exact
// root of lambda_n alpha = sigma, lambda_p (1 - alpha) = sigma,
// lambda_p - lambda_n = psi.
inline std::array<double, 3> central_path_selection(double psi, double sigma) {
    if (sigma <= 0) {
        auto sel = heaviside_oracle(std::span<const double>(&psi, 1));
        return {sel.alpha[0], sel.lambda_p[0], sel.lambda_n[0]};
    }
    double lo = 1e-12, hi = 1.0 - 1e-12;
    for (int it = 0; it < 200; ++it) {
        double a = 0.5 * (lo + hi);
        double r = sigma / (1.0 - a) - sigma / a - psi;
        (r < 0 ? lo : hi) = a;
    }
    double a = 0.5 * (lo + hi);
    return {a, sigma / (1.0 - a), sigma / a};
}

inline std::vector<double> initial_stage_z(const DcsSystem& dcs, std::span<const double> x,
                                           double sigma0) {
    std::vector<double> z(static_cast<size_t>(dcs.n_z), 0.0);
    std::vector<double> psi(static_cast<size_t>(dcs.n_psi));
    for (int j = 0; j < dcs.n_psi; ++j)
        psi[static_cast<size_t>(j)] = eval_once(dcs.psi_x[static_cast<size_t>(j)], x);
    double pad = std::sqrt(sigma0);

    if (dcs.variant == DcsVariant::Stewart) {
        std::vector<double> g(static_cast<size_t>(dcs.n_f));
        double gmin = std::numeric_limits<double>::infinity();
        for (int i = 0; i < dcs.n_f; ++i) {
            g[static_cast<size_t>(i)] = eval_once(dcs.g_x[static_cast<size_t>(i)], x);
            gmin = std::min(gmin, g[static_cast<size_t>(i)]);
        }
        for (int i = 0; i < dcs.n_f; ++i) {
            double lam = g[static_cast<size_t>(i)] - gmin + pad;
            z[static_cast<size_t>(dcs.z_lambda + i)] = lam;
            z[static_cast<size_t>(dcs.z_theta + i)] = sigma0 > 0 ? sigma0 / lam : 1.0 / dcs.n_f;
        }
        z[static_cast<size_t>(dcs.z_mu)] = -gmin;
        return z;
    }

    for (int j = 0; j < dcs.n_psi; ++j) {
        auto [a, lp, ln] = central_path_selection(psi[static_cast<size_t>(j)], sigma0);
        z[static_cast<size_t>(dcs.z_alpha + j)] = a;
        z[static_cast<size_t>(dcs.z_lp + j)] = lp;
        z[static_cast<size_t>(dcs.z_ln + j)] = ln;
    }
    if (dcs.variant == DcsVariant::Step) {
        // betas by forward substitution, then thetas from their definitions
        // (theta rows are the first n_f entries of alg_smooth, then the betas)
        std::vector<double> point(static_cast<size_t>(dcs.n_x + dcs.n_z + dcs.n_u), 0.0);
        for (int i = 0; i < dcs.n_x; ++i) point[static_cast<size_t>(i)] = x[static_cast<size_t>(i)];
        for (int k = 0; k < dcs.n_z; ++k) point[static_cast<size_t>(dcs.n_x + k)] = z[static_cast<size_t>(k)];
        for (int k = 0; k < dcs.n_beta; ++k) {
            Expr row = dcs.alg_smooth[static_cast<size_t>(dcs.n_f + k)];
            point[static_cast<size_t>(dcs.n_x + dcs.z_beta + k)] -= eval_once(row, point);
            z[static_cast<size_t>(dcs.z_beta + k)] = point[static_cast<size_t>(dcs.n_x + dcs.z_beta + k)];
        }
        for (int k = 0; k < dcs.n_f; ++k) {
            Expr row = dcs.alg_smooth[static_cast<size_t>(k)];
            point[static_cast<size_t>(dcs.n_x + dcs.z_theta + k)] -= eval_once(row, point);
            z[static_cast<size_t>(dcs.z_theta + k)] = point[static_cast<size_t>(dcs.n_x + dcs.z_theta + k)];
        }
    }
    return z;
}

inline Eigen::VectorXd initial_guess(const FesdSystem& S, std::span<const double> s0,
                                     std::span<const double> q, double T, double sigma0) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(S.n_w);
    const int n_x = S.n_x(), n_s = S.n_s(), n_z = S.n_z();

    for (int n = 0; n <= S.n_elements(); ++n)
        for (int i = 0; i < n_x; ++i) w(S.idx_x(n, i)) = s0[static_cast<size_t>(i)];

    auto z0 = initial_stage_z(S.dcs, s0, sigma0);
    std::vector<double> point(static_cast<size_t>(n_x + n_z + S.dcs.n_u), 0.0);
    for (int i = 0; i < n_x; ++i) point[static_cast<size_t>(i)] = s0[static_cast<size_t>(i)];
    for (int k = 0; k < n_z; ++k) point[static_cast<size_t>(n_x + k)] = z0[static_cast<size_t>(k)];
    for (int i = 0; i < S.dcs.n_u; ++i) point[static_cast<size_t>(n_x + n_z + i)] = q[static_cast<size_t>(i)];

    std::vector<double> v0(static_cast<size_t>(n_x));
    for (int i = 0; i < n_x; ++i)
        v0[static_cast<size_t>(i)] = eval_once(S.dcs.dynamics[static_cast<size_t>(i)], point);

    for (int n = 0; n < S.n_elements(); ++n)
        for (int m = 0; m < n_s; ++m) {
            for (int i = 0; i < n_x; ++i) w(S.idx_v(n, m, i)) = v0[static_cast<size_t>(i)];
            for (int k = 0; k < n_z; ++k) w(S.idx_z(n, m, k)) = z0[static_cast<size_t>(k)];
        }

    if (S.boundary_points) {
        for (int n = 0; n < S.n_elements(); ++n)
            for (int j = 0; j < S.dcs.n_psi; ++j) {
                double psi = eval_once(S.dcs.psi_x[static_cast<size_t>(j)], std::vector<double>(s0.begin(), s0.end()));
                double ln = 0.5 * (-psi + std::sqrt(psi * psi + 4 * sigma0));
                w(S.idx_bnd(n, j)) = ln;
                w(S.idx_bnd(n, S.dcs.n_psi + j)) = ln + psi;
            }
    }
    if (S.opt.free_grid)
        for (int n = 0; n < S.n_elements(); ++n) w(S.idx_h(n)) = T / S.n_fe;
    return w;
}

// Warm start for a chained step: keep the algebraic pattern of the previous
// step's final element (the region we ended in) but reset the geometry to the
// new initial state and a uniform grid.
inline Eigen::VectorXd warm_from_previous(const FesdSystem& S, const Eigen::VectorXd& prev,
                                          std::span<const double> s0, std::span<const double> q,
                                          double T, double sigma0) {
    Eigen::VectorXd w = initial_guess(S, s0, q, T, sigma0);
    // overwrite stage values with the previous final element's pattern when
    // the state is away from all switching surfaces; near a surface the
    // central-path guess from initial_guess is the safer choice
    std::vector<double> s0v(s0.begin(), s0.end());
    double min_psi = std::numeric_limits<double>::infinity();
    double max_psi = 0;
    for (const Expr& p : S.dcs.psi_x) {
        double v = std::abs(eval_once(p, s0v));
        min_psi = std::min(min_psi, v);
        max_psi = std::max(max_psi, v);
    }
    if (min_psi > 1e-3 * (1 + max_psi)) {
        for (int n = 0; n < S.n_fe; ++n)
            for (int m = 0; m < S.n_s(); ++m) {
                for (int i = 0; i < S.n_x(); ++i)
                    w(S.idx_v(n, m, i)) = prev(S.idx_v(S.n_fe - 1, S.n_s() - 1, i));
                for (int k = 0; k < S.n_z(); ++k)
                    w(S.idx_z(n, m, k)) = prev(S.idx_z(S.n_fe - 1, S.n_s() - 1, k));
            }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Classification of the relaxed iterate and the reduced exact system.
// ---------------------------------------------------------------------------
enum class PairClass : uint8_t { AZero, BZero, Degen };

namespace detail {

inline PairClass classify_pair(double a, double b) {
    double aa = std::abs(a), ab = std::abs(b);
    const double rel = 0.02;
    if (aa <= rel * ab) return PairClass::AZero;
    if (ab <= rel * aa) return PairClass::BZero;
    return PairClass::Degen;
}

enum class SideState : uint8_t { Minus, Plus, Sliding };

struct StageData {
    // lambda values per (element, m'=0..m_hi, pair) and selector values per
    // (element, m=1..n_s, pair), evaluated at the current iterate
    std::vector<Eigen::MatrixXd> L;  // per element: (m_hi+1) x n_pairs
    std::vector<Eigen::MatrixXd> W;  // per element: n_s x n_pairs
    std::vector<Eigen::MatrixXd> Av; // per element: n_s x n_pairs (a-side values)
};

inline StageData collect_stage_data(const FesdSystem& S, const Eigen::VectorXd& w,
                                    std::span<const double> params) {
    StageData d;
    const int n_s = S.n_s(), n_pairs = S.n_pairs();
    const int m_hi = S.boundary_points ? n_s + 1 : n_s;
    std::vector<double> full(static_cast<size_t>(S.n_w + S.n_p));
    for (int i = 0; i < S.n_w; ++i) full[static_cast<size_t>(i)] = w(i);
    for (int i = 0; i < S.n_p; ++i) full[static_cast<size_t>(S.n_w + i)] = params[static_cast<size_t>(i)];

    auto lam = [&](int n, int m, int p) -> double {
        if (m == 0) {
            if (n == 0) return params[static_cast<size_t>(S.p_lambda00 + p)];
            if (S.boundary_points) return w(S.idx_bnd(n - 1, p));
            return w(S.idx_z(n - 1, n_s - 1, S.dcs.lambda_z[static_cast<size_t>(p)]));
        }
        if (m <= n_s) return w(S.idx_z(n, m - 1, S.dcs.lambda_z[static_cast<size_t>(p)]));
        return w(S.idx_bnd(n, p));
    };

    for (int n = 0; n < S.n_elements(); ++n) {
        Eigen::MatrixXd L(m_hi + 1, n_pairs), W(n_s, n_pairs), Av(n_s, n_pairs);
        for (int p = 0; p < n_pairs; ++p) {
            for (int m = 0; m <= m_hi; ++m) L(m, p) = lam(n, m, p);
            for (int m = 0; m < n_s; ++m) {
                W(m, p) = eval_once(S.stage_pair_b[static_cast<size_t>(S.stage_pair_index(n, m, p))], full);
                Av(m, p) = eval_once(S.stage_pair_a[static_cast<size_t>(S.stage_pair_index(n, m, p))], full);
            }
        }
        d.L.push_back(std::move(L));
        d.W.push_back(std::move(W));
        d.Av.push_back(std::move(Av));
    }
    return d;
}

// Per-group side state of one element from its lambda values (step/AP only).
inline SideState group_state(const FesdSystem& S, const StageData& d, int element, int group,
                             double tau, bool use_left_boundary) {
    int p_n = S.dcs.eq_groups[static_cast<size_t>(group)][0];   // lambda_n pair
    int p_p = S.dcs.eq_groups[static_cast<size_t>(group)][1];   // lambda_p pair
    const auto& L = d.L[static_cast<size_t>(element)];
    int lo = use_left_boundary ? 0 : 1;
    int hi = S.n_s() - (S.boundary_points ? 0 : 1);  // exclude the c_s = 1 boundary stage
    hi = std::max(hi, lo);
    double ln = 0, lp = 0;
    for (int m = lo; m <= hi; ++m) {
        ln = std::max(ln, L(m, p_n));
        lp = std::max(lp, L(m, p_p));
    }
    if (ln > tau && ln >= lp) return SideState::Minus;
    if (lp > tau) return SideState::Plus;
    return SideState::Sliding;
}

}  // namespace detail

inline std::vector<BoundaryClassification> classify_boundaries(const FesdSystem& S,
                                                               const Eigen::VectorXd& w,
                                                               std::span<const double> params,
                                                               double sigma_end) {
    std::vector<BoundaryClassification> out;
    if (!S.opt.free_grid || S.n_fe < 2) return out;
    auto d = detail::collect_stage_data(S, w, params);
    const bool stewart = S.dcs.variant == DcsVariant::Stewart;

    for (int b = 1; b < S.n_elements(); ++b) {
        if (!S.internal_boundary(b)) continue;
        BoundaryClassification bc;
        bc.element_boundary = b;
        if (!stewart) {
            for (size_t g = 0; g < S.dcs.eq_groups.size(); ++g) {
                int p_n = S.dcs.eq_groups[g][0], p_p = S.dcs.eq_groups[g][1];
                double scale = std::max({d.L[static_cast<size_t>(b - 1)].col(p_n).maxCoeff(),
                                         d.L[static_cast<size_t>(b - 1)].col(p_p).maxCoeff(),
                                         d.L[static_cast<size_t>(b)].col(p_n).maxCoeff(),
                                         d.L[static_cast<size_t>(b)].col(p_p).maxCoeff()});
                double tau = std::max({1e-3 * scale, 30 * sigma_end, 1e-12});
                auto left = detail::group_state(S, d, b - 1, static_cast<int>(g), tau, true);
                auto right = detail::group_state(S, d, b, static_cast<int>(g), tau, false);
                if (left == right) continue;
                bc.switched = true;
                bc.group = static_cast<int>(g);
                using detail::SideState;
                if (left == SideState::Sliding)
                    bc.kind = SwitchKind::LeaveSliding;
                else if (right == SideState::Sliding)
                    bc.kind = SwitchKind::EnterSliding;
                else
                    bc.kind = SwitchKind::Crossing;
                break;
            }
        } else {
            // active sets from the theta (selector) stage values
            auto active = [&](int element, bool skip_last) {
                std::vector<int> act;
                const auto& W = d.W[static_cast<size_t>(element)];
                int hi = skip_last ? std::max(S.n_s() - 1, 1) : S.n_s();
                for (int p = 0; p < S.n_pairs(); ++p) {
                    double th = 0;
                    for (int m = 0; m < hi; ++m) th = std::max(th, W(m, p));
                    if (th > 1e-4) act.push_back(p);
                }
                return act;
            };
            auto L = active(b - 1, true), R = active(b, false);
            if (L != R) {
                bc.switched = true;
                for (int i : R)
                    if (std::find(L.begin(), L.end(), i) == L.end()) bc.enter_set = i;
                for (int i : L)
                    if (std::find(R.begin(), R.end(), i) == R.end()) bc.leave_set = i;
                bc.stay_set = L.empty() ? 0 : L.front();
                if (bc.enter_set >= 0 && bc.leave_set >= 0)
                    bc.kind = R.size() > L.size() ? SwitchKind::EnterSliding : SwitchKind::Crossing;
                else if (bc.enter_set >= 0)
                    bc.kind = SwitchKind::EnterSliding;
                else
                    bc.kind = SwitchKind::LeaveSliding;
                if (L.size() == 1 && R.size() == 1) bc.kind = SwitchKind::Crossing;
            }
        }
        out.push_back(bc);
    }
    return out;
}

// Reduced exact system for a classified iterate. Shares the assembly arena.
inline std::shared_ptr<ResidualBundle> build_polished_bundle(
    const FesdSystem& S, const Eigen::VectorXd& w, std::span<const double> params,
    const std::vector<BoundaryClassification>& boundaries) {
    auto& A = *S.arena;
    auto bundle = std::make_shared<ResidualBundle>(S.arena, S.n_w, S.n_p);
    const ResidualBundle& R = *S.bundle;

    // smooth rows carry over unchanged
    for (int row : S.rows_smooth) bundle->add_row(R.row(row), R.tag(row));
    for (int row : S.rows_sum_h) bundle->add_row(R.row(row), RowTag::Algebraic);

    std::vector<double> full(static_cast<size_t>(S.n_w + S.n_p));
    for (int i = 0; i < S.n_w; ++i) full[static_cast<size_t>(i)] = w(i);
    for (int i = 0; i < S.n_p; ++i) full[static_cast<size_t>(S.n_w + i)] = params[static_cast<size_t>(i)];

    const int n_s = S.n_s();
    // stage pair branch rows
    for (int n = 0; n < S.n_elements(); ++n)
        for (int m = 0; m < n_s; ++m)
            for (int p = 0; p < S.n_pairs(); ++p) {
                int k = S.stage_pair_index(n, m, p);
                Expr a = S.stage_pair_a[static_cast<size_t>(k)];
                Expr b = S.stage_pair_b[static_cast<size_t>(k)];
                double av = eval_once(a, full), bv = eval_once(b, full);
                auto cls = detail::classify_pair(av, bv);
                Expr row;
                if (cls == PairClass::AZero) row = a;
                else if (cls == PairClass::BZero) row = b;
                else {
                    // doubly degenerate (switch stage): the selector freezes at
                    // the value of the no-switch side; we detect that side from
                    // the pair's multiplier history inside this element
                    double hist = 0.0;
                    for (int mm = 0; mm <= n_s; ++mm) {
                        double lv;
                        if (mm == 0)
                            lv = (n == 0) ? params[static_cast<size_t>(S.p_lambda00 + p)]
                                 : S.boundary_points
                                     ? w(S.idx_bnd(n - 1, p))
                                     : w(S.idx_z(n - 1, n_s - 1, S.dcs.lambda_z[static_cast<size_t>(p)]));
                        else
                            lv = w(S.idx_z(n, mm - 1, S.dcs.lambda_z[static_cast<size_t>(p)]));
                        if (mm <= n_s - 1) hist = std::max(hist, lv);
                    }
                    row = hist > 1e-6 ? b : a;
                }
                bundle->add_row(row, RowTag::Complementarity);
            }

    // boundary pair branch rows (c_s != 1)
    if (S.boundary_points) {
        for (size_t k = 0; k < S.boundary_pairs.size(); ++k) {
            Expr a = S.boundary_pairs[k].first, b = S.boundary_pairs[k].second;
            double av = eval_once(a, full), bv = eval_once(b, full);
            auto cls = detail::classify_pair(av, bv);
            bundle->add_row(cls == PairClass::BZero ? b : a, RowTag::Complementarity);
        }
    }

    // one h-determination row per interval-interior boundary
    if (S.opt.free_grid) {
        for (const auto& bc : boundaries) {
            int b = bc.element_boundary;
            Expr row;
            if (!bc.switched) {
                row = A.sub(S.h_exprs[static_cast<size_t>(b)], S.h_exprs[static_cast<size_t>(b - 1)]);
            } else if (S.dcs.variant == DcsVariant::Stewart) {
                if (bc.kind == SwitchKind::LeaveSliding && bc.leave_set >= 0) {
                    // leaving region's selector hits zero at the boundary
                    row = S.stage_pair_b[static_cast<size_t>(
                        S.stage_pair_index(b - 1, n_s - 1, bc.leave_set))];
                } else {
                    int i = bc.enter_set >= 0 ? bc.enter_set : bc.leave_set;
                    int j = bc.stay_set >= 0 && bc.stay_set != i ? bc.stay_set : (i == 0 ? 1 : 0);
                    row = A.sub(S.g_boundary[static_cast<size_t>(b - 1)][static_cast<size_t>(i)],
                                S.g_boundary[static_cast<size_t>(b - 1)][static_cast<size_t>(j)]);
                }
            } else {
                if (bc.kind == SwitchKind::LeaveSliding) {
                    // selector extrapolated to the right end of the left
                    // element reaches its bound; pick the bound from the
                    // right-hand side's multiplier pattern
                    int p_n = S.dcs.eq_groups[static_cast<size_t>(bc.group)][0];
                    int p_p = S.dcs.eq_groups[static_cast<size_t>(bc.group)][1];
                    auto d = detail::collect_stage_data(S, w, params);
                    double ln_f = d.L[static_cast<size_t>(b)].col(p_n).maxCoeff();
                    double lp_f = d.L[static_cast<size_t>(b)].col(p_p).maxCoeff();
                    int p_sel = lp_f >= ln_f ? p_p : p_n;  // 1-alpha -> 0 resp. alpha -> 0
                    Expr acc;
                    for (int m = 0; m < n_s; ++m) {
                        // Lagrange basis value of stage m at the element's right end
                        double v = 0.0;
                        for (double c : S.tab.ell[static_cast<size_t>(m)]) v += c;
                        Expr term = A.mul(A.constant(v),
                                          S.stage_pair_b[static_cast<size_t>(
                                              S.stage_pair_index(b - 1, m, p_sel))]);
                        acc = acc.valid() ? A.add(acc, term) : term;
                    }
                    row = acc;
                } else {
                    row = S.psi_boundary[static_cast<size_t>(b - 1)][static_cast<size_t>(bc.group)];
                }
            }
            bundle->add_row(row, RowTag::Equilibration);
        }
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Exact complementarity violation of the current iterate.
// ---------------------------------------------------------------------------
inline double complementarity_residual(const FesdSystem& S, const Eigen::VectorXd& w,
                                       std::span<const double> params) {
    std::vector<double> full(static_cast<size_t>(S.n_w + S.n_p));
    for (int i = 0; i < S.n_w; ++i) full[static_cast<size_t>(i)] = w(i);
    for (int i = 0; i < S.n_p; ++i) full[static_cast<size_t>(S.n_w + i)] = params[static_cast<size_t>(i)];
    double worst = 0.0;
    auto violation = [&](Expr ae, Expr be) {
        double a = eval_once(ae, full), b = eval_once(be, full);
        double v = std::max(0.0, std::min(a, b));
        v = std::max(v, -a);
        v = std::max(v, -b);
        worst = std::max(worst, v);
    };
    for (size_t k = 0; k < S.stage_pair_a.size(); ++k)
        violation(S.stage_pair_a[k], S.stage_pair_b[k]);
    for (const auto& bp : S.boundary_pairs) violation(bp.first, bp.second);
    return worst;
}

// Repulsive sliding arcs make the solution non-unique (spontaneous switches).
inline bool detect_nonstrict(const FesdSystem& S, const Eigen::VectorXd& w,
                             std::span<const double> params) {
    if (S.dcs.variant == DcsVariant::Stewart) return false;
    auto d = detail::collect_stage_data(S, w, params);
    const int n_s = S.n_s();

    // psi gradients in the DCS variable space
    ResidualBundle psi_b(S.dcs.arena, S.dcs.n_x, S.dcs.n_z + S.dcs.n_u);
    for (const Expr& p : S.dcs.psi_x) psi_b.add_row(p, RowTag::Algebraic);

    for (int n = 0; n < S.n_elements(); ++n) {
        for (size_t g = 0; g < S.dcs.eq_groups.size(); ++g) {
            int p_n = S.dcs.eq_groups[g][0], p_p = S.dcs.eq_groups[g][1];
            double ln = d.L[static_cast<size_t>(n)].col(p_n).maxCoeff();
            double lp = d.L[static_cast<size_t>(n)].col(p_p).maxCoeff();
            double alpha = d.W[static_cast<size_t>(n)](std::max(n_s - 1, 0), p_n);  // alpha value
            bool sliding = ln < 1e-7 && lp < 1e-7 && alpha > 0.05 && alpha < 0.95;
            if (!sliding) continue;

            // stage point (x, z, u) at the last stage of the element
            std::vector<double> pt(static_cast<size_t>(S.dcs.n_x + S.dcs.n_z + S.dcs.n_u), 0.0);
            int m = n_s - 1;
            for (int i = 0; i < S.dcs.n_x; ++i) {
                double xs = w(S.idx_x(n, i));
                double h = S.opt.free_grid ? w(S.idx_h(n)) : params[static_cast<size_t>(S.p_h + n)];
                for (int j = 0; j < n_s; ++j) xs += h * S.tab.A(m, j) * w(S.idx_v(n, j, i));
                pt[static_cast<size_t>(i)] = xs;
            }
            for (int k = 0; k < S.dcs.n_z; ++k)
                pt[static_cast<size_t>(S.dcs.n_x + k)] = w(S.idx_z(n, m, k));
            for (int i = 0; i < S.dcs.n_u; ++i)
                pt[static_cast<size_t>(S.dcs.n_x + S.dcs.n_z + i)] = params[static_cast<size_t>(S.p_q + i)];

            std::vector<double> xv(pt.begin(), pt.begin() + S.dcs.n_x);
            std::vector<double> rest(pt.begin() + S.dcs.n_x, pt.end());
            auto Jpsi = psi_b.jacobian(std::span<const double>(xv), std::span<const double>(rest));

            auto drift = [&](double alpha_val) {
                auto q = pt;
                q[static_cast<size_t>(S.dcs.n_x + S.dcs.z_alpha + static_cast<int>(g))] = alpha_val;
                if (S.dcs.variant == DcsVariant::Step) {
                    // refresh lifted betas and the Filippov multipliers from
                    // their defining rows before evaluating the vector field
                    for (int k = 0; k < S.dcs.n_beta; ++k) {
                        Expr row = S.dcs.alg_smooth[static_cast<size_t>(S.dcs.n_f + k)];
                        q[static_cast<size_t>(S.dcs.n_x + S.dcs.z_beta + k)] -= eval_once(row, q);
                    }
                    for (int k = 0; k < S.dcs.n_f; ++k) {
                        Expr row = S.dcs.alg_smooth[static_cast<size_t>(k)];
                        q[static_cast<size_t>(S.dcs.n_x + S.dcs.z_theta + k)] -= eval_once(row, q);
                    }
                }
                double acc = 0;
                for (int i = 0; i < S.dcs.n_x; ++i)
                    acc += Jpsi[g][static_cast<size_t>(i)] *
                           eval_once(S.dcs.dynamics[static_cast<size_t>(i)], q);
                return acc;
            };
            if (drift(1.0) > 1e-9 && drift(0.0) < -1e-9) return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Event-located grid reseed. The relaxed least-squares iterate can stall in a
// configuration that smears a switch across an element interior (the soft
// cross rows lose their h-gradient there). In that case the current
// collocation interpolant still reveals where the switching functions cross
// or touch zero; we re-seed the grid to put element boundaries at those
// locations and re-run the homotopy from a moderate sigma.
// ---------------------------------------------------------------------------
namespace detail {

inline std::vector<double> interp_state_at(const FesdSystem& S, const Eigen::VectorXd& w,
                                           const std::vector<double>& h, double t) {
    double acc = 0;
    int n = 0;
    while (n + 1 < S.n_fe && acc + h[static_cast<size_t>(n)] < t) acc += h[static_cast<size_t>(n++)];
    double rho = h[static_cast<size_t>(n)] > 0 ? (t - acc) / h[static_cast<size_t>(n)] : 0.0;
    rho = std::clamp(rho, 0.0, 1.0);
    std::vector<double> x(static_cast<size_t>(S.n_x()));
    for (int i = 0; i < S.n_x(); ++i) {
        double v = w(S.idx_x(n, i));
        for (int m = 0; m < S.n_s(); ++m) {
            // integral of the stage's Lagrange basis from 0 to rho
            double integral = 0.0, power = rho;
            const auto& ell = S.tab.ell[static_cast<size_t>(m)];
            for (size_t d = 0; d < ell.size(); ++d) {
                integral += ell[d] * power / static_cast<double>(d + 1);
                power *= rho;
            }
            v += h[static_cast<size_t>(n)] * integral * w(S.idx_v(n, m, i));
        }
        x[static_cast<size_t>(i)] = v;
    }
    return x;
}

inline std::vector<double> event_aligned_h(const FesdSystem& S, const Eigen::VectorXd& w, double T) {
    std::vector<double> h(static_cast<size_t>(S.n_fe));
    for (int n = 0; n < S.n_fe; ++n) h[static_cast<size_t>(n)] = w(S.idx_h(n));

    const int samples = 50 * S.n_fe;
    const int n_psi = S.dcs.n_psi;
    std::vector<std::vector<double>> psi(static_cast<size_t>(n_psi),
                                         std::vector<double>(static_cast<size_t>(samples + 1)));
    for (int s = 0; s <= samples; ++s) {
        double t = T * s / samples;
        auto x = interp_state_at(S, w, h, t);
        for (int j = 0; j < n_psi; ++j)
            psi[static_cast<size_t>(j)][static_cast<size_t>(s)] =
                eval_once(S.dcs.psi_x[static_cast<size_t>(j)], x);
    }

    std::vector<double> events;
    for (int j = 0; j < n_psi; ++j) {
        const auto& pj = psi[static_cast<size_t>(j)];
        double scale = 0;
        for (double v : pj) scale = std::max(scale, std::abs(v));
        if (scale <= 0) continue;
        double touch = 1e-3 * scale;
        for (int s = 1; s <= samples; ++s) {
            double t0 = T * (s - 1) / samples, t1 = T * s / samples;
            bool sign_change = (pj[static_cast<size_t>(s - 1)] > 0) != (pj[static_cast<size_t>(s)] > 0);
            bool touched = (std::abs(pj[static_cast<size_t>(s - 1)]) > touch) !=
                           (std::abs(pj[static_cast<size_t>(s)]) > touch);
            if (sign_change || touched) {
                // linear localization inside the sample
                double a = pj[static_cast<size_t>(s - 1)], b = pj[static_cast<size_t>(s)];
                double frac = sign_change && std::abs(b - a) > 0 ? a / (a - b) : 0.5;
                events.push_back(t0 + frac * (t1 - t0));
            }
        }
    }
    std::sort(events.begin(), events.end());
    // merge near-duplicates, drop endpoints
    std::vector<double> interior;
    for (double e : events) {
        if (e < 1e-6 * T || e > (1 - 1e-6) * T) continue;
        if (!interior.empty() && e - interior.back() < 1e-3 * T) continue;
        interior.push_back(e);
    }
    if (static_cast<int>(interior.size()) > S.n_fe - 1)
        interior.resize(static_cast<size_t>(S.n_fe - 1));

    // fill the remaining boundaries by splitting the largest gaps
    std::vector<double> bnds = interior;
    while (static_cast<int>(bnds.size()) < S.n_fe - 1) {
        std::vector<double> pts{0.0};
        pts.insert(pts.end(), bnds.begin(), bnds.end());
        pts.push_back(T);
        double best_gap = -1, best_mid = T / 2;
        for (size_t i = 1; i < pts.size(); ++i) {
            double gap = pts[i] - pts[i - 1];
            if (gap > best_gap) {
                best_gap = gap;
                best_mid = 0.5 * (pts[i] + pts[i - 1]);
            }
        }
        bnds.push_back(best_mid);
        std::sort(bnds.begin(), bnds.end());
    }

    std::vector<double> out(static_cast<size_t>(S.n_fe));
    double prev = 0;
    for (int n = 0; n < S.n_fe; ++n) {
        double next = n + 1 < S.n_fe ? bnds[static_cast<size_t>(n)] : T;
        out[static_cast<size_t>(n)] = next - prev;
        prev = next;
    }
    return out;
}

inline Eigen::VectorXd reseed_from_events(const FesdSystem& S, const Eigen::VectorXd& w_old,
                                          std::span<const double> q, double T, double sigma,
                                          const std::vector<double>& h_new) {
    std::vector<double> h_old(static_cast<size_t>(S.n_fe));
    for (int n = 0; n < S.n_fe; ++n) h_old[static_cast<size_t>(n)] = w_old(S.idx_h(n));

    Eigen::VectorXd w = Eigen::VectorXd::Zero(S.n_w);
    const int n_x = S.n_x(), n_s = S.n_s(), n_z = S.n_z();
    std::vector<double> qv(q.begin(), q.end());

    double t = 0;
    for (int n = 0; n <= S.n_fe; ++n) {
        auto x = interp_state_at(S, w_old, h_old, t);
        for (int i = 0; i < n_x; ++i) w(S.idx_x(n, i)) = x[static_cast<size_t>(i)];
        if (n < S.n_fe) t += h_new[static_cast<size_t>(n)];
    }

    t = 0;
    for (int n = 0; n < S.n_fe; ++n) {
        double mid = t + 0.5 * h_new[static_cast<size_t>(n)];
        auto xm = interp_state_at(S, w_old, h_old, mid);
        auto z0 = initial_stage_z(S.dcs, xm, sigma);
        std::vector<double> point(static_cast<size_t>(n_x + n_z + S.dcs.n_u), 0.0);
        for (int i = 0; i < n_x; ++i) point[static_cast<size_t>(i)] = xm[static_cast<size_t>(i)];
        for (int k = 0; k < n_z; ++k) point[static_cast<size_t>(n_x + k)] = z0[static_cast<size_t>(k)];
        for (int i = 0; i < S.dcs.n_u; ++i)
            point[static_cast<size_t>(n_x + n_z + i)] = qv[static_cast<size_t>(i)];
        for (int m = 0; m < n_s; ++m) {
            for (int i = 0; i < n_x; ++i)
                w(S.idx_v(n, m, i)) = eval_once(S.dcs.dynamics[static_cast<size_t>(i)], point);
            for (int k = 0; k < n_z; ++k) w(S.idx_z(n, m, k)) = z0[static_cast<size_t>(k)];
        }
        if (S.boundary_points) {
            auto xe = interp_state_at(S, w_old, h_old, t + h_new[static_cast<size_t>(n)]);
            for (int j = 0; j < S.dcs.n_psi; ++j) {
                double psi = eval_once(S.dcs.psi_x[static_cast<size_t>(j)], xe);
                double ln = 0.5 * (-psi + std::sqrt(psi * psi + 4 * sigma));
                w(S.idx_bnd(n, j)) = ln;
                w(S.idx_bnd(n, S.dcs.n_psi + j)) = ln + psi;
            }
        }
        w(S.idx_h(n)) = h_new[static_cast<size_t>(n)];
        t += h_new[static_cast<size_t>(n)];
    }
    return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Homotopy driver.
// ---------------------------------------------------------------------------
inline FesdSolution homotopy_solve(const FesdSystem& S, std::span<const double> s0,
                                   std::span<const double> q, double T,
                                   const HomotopySettings& hs = {},
                                   const Eigen::VectorXd* warm = nullptr,
                                   std::span<const double> fixed_h = {}) {
    auto t_start = std::chrono::steady_clock::now();
    FesdSolution sol;
    SolveReport& rep = sol.report;

    std::vector<double> own_h;
    if (!S.opt.free_grid && fixed_h.empty()) {
        own_h.assign(static_cast<size_t>(S.n_fe), T / S.n_fe);
        fixed_h = own_h;
    }

    // convergence mask: cross rows are soft
    std::vector<char> mask(static_cast<size_t>(S.bundle->rows()), 1);
    for (int r : S.rows_cross) mask[static_cast<size_t>(r)] = 0;

    auto params_exact = S.make_params(s0, q, T, 0.0, fixed_h);

    double sigma_end = hs.sigma0;
    auto run_homotopy = [&](Eigen::VectorXd& w, double sigma_from) -> bool {
        double sigma = sigma_from;
        while (true) {
            auto params = S.make_params(s0, q, T, sigma, fixed_h);
            auto out = newton_solve(*S.bundle, params, w, hs.tol(sigma), hs.max_newton_per_stage,
                                    hs, &mask);
            rep.newton_iters += out.iters;
            ++rep.homotopy_stages;
            sigma_end = sigma;
            if (!out.ok && (!std::isfinite(out.masked_inf) || out.masked_inf > 0.3)) {
                rep.failure = "homotopy stage " + std::to_string(rep.homotopy_stages) +
                              " failed: " + out.msg;
                return false;
            }
            if (sigma <= hs.sigma_min) return true;
            sigma = std::max(sigma * hs.kappa, hs.sigma_min);
        }
    };

    auto exact_residual = [&](const Eigen::VectorXd& w) -> double {
        try {
            auto r = S.bundle->eval(std::span<const double>(w.data(), static_cast<size_t>(S.n_w)),
                                    params_exact);
            double inf = 0;
            for (double v : r) inf = std::max(inf, std::abs(v));
            return inf;
        } catch (const EvalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    auto attempt_polish = [&](Eigen::VectorXd& w) -> bool {
        double sig = sigma_end;
        for (int attempt = 0; attempt <= hs.polish_retries; ++attempt) {
            sol.boundaries = classify_boundaries(S, w, params_exact, sig);
            auto reduced = build_polished_bundle(S, w, params_exact, sol.boundaries);
            Eigen::VectorXd wp = w;
            auto out = newton_solve(*reduced, params_exact, wp, hs.tol_min * 10, hs.polish_iters, hs);
            rep.newton_iters += out.iters;
            // a switch may migrate onto a grid boundary during the polish;
            // re-classify at the polished point and redo the reduction when
            // the pattern changed
            if (out.ok) {
                auto again = classify_boundaries(S, wp, params_exact, sig);
                if (!(again == sol.boundaries)) {
                    auto reduced2 = build_polished_bundle(S, wp, params_exact, again);
                    Eigen::VectorXd wp2 = wp;
                    auto out2 = newton_solve(*reduced2, params_exact, wp2, hs.tol_min * 10,
                                             hs.polish_iters, hs);
                    rep.newton_iters += out2.iters;
                    if (out2.ok && exact_residual(wp2) <= hs.accept_residual) {
                        sol.boundaries = again;
                        w = wp2;
                        return true;
                    }
                }
            }
            if (out.ok && exact_residual(wp) <= hs.accept_residual) {
                w = wp;
                return true;
            }
            // deepen the relaxation and retry the classification
            sig = std::max(sig * hs.kappa * hs.kappa, 1e-14);
            auto params = S.make_params(s0, q, T, sig, fixed_h);
            auto deeper = newton_solve(*S.bundle, params, w, hs.tol(sig),
                                       hs.max_newton_per_stage, hs, &mask);
            rep.newton_iters += deeper.iters;
            ++rep.homotopy_stages;
        }
        return false;
    };

    Eigen::VectorXd w = (warm && warm->size() == S.n_w) ? *warm
                                                        : initial_guess(S, s0, q, T, hs.sigma0);
    bool polished = false;
    if (run_homotopy(w, hs.sigma0)) polished = attempt_polish(w);

    // event-located reseed against switch smearing (single-interval free grids)
    if (!polished && S.opt.free_grid && S.opt.n_intervals == 1 && rep.failure.empty()) {
        for (int attempt = 0; attempt < 2 && !polished; ++attempt) {
            auto h_new = detail::event_aligned_h(S, w, T);
            Eigen::VectorXd w2 = detail::reseed_from_events(S, w, q, T, hs.sigma_reseed, h_new);
            if (run_homotopy(w2, hs.sigma_reseed) && attempt_polish(w2)) {
                w = w2;
                polished = true;
            } else if (w2.allFinite()) {
                w = w2;  // at least carry the better-aligned iterate
            }
        }
    }

    sol.w = w;
    sol.sigma_end = sigma_end;
    rep.comp_residual = complementarity_residual(S, w, params_exact);
    rep.residual_inf = exact_residual(w);
    rep.nonstrict = detect_nonstrict(S, w, params_exact);

    bool h_ok = true;
    if (S.opt.free_grid)
        for (int n = 0; n < S.n_elements(); ++n) h_ok &= w(S.idx_h(n)) > 0;

    rep.converged = polished && h_ok && rep.comp_residual <= hs.comp_tol &&
                    rep.residual_inf <= hs.accept_residual;
    if (rep.converged) {
        rep.failure.clear();
    } else if (rep.failure.empty()) {
        if (!polished) rep.failure = "polish failed";
        else if (!h_ok) rep.failure = "degenerate step size";
        else if (rep.comp_residual > hs.comp_tol) rep.failure = "complementarity residual above tolerance";
        else rep.failure = "exact residual above tolerance";
    }
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return sol;
}

}  // namespace fesd
