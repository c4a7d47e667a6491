#pragma once

// =============================================================================
// Discretization of a DCS over one control interval:
//
//   - standard implicit Runge-Kutta residuals on a fixed grid, and
//   - the FESD system with free element lengths h_n, cross complementarity,
//     step-size equilibration, boundary multipliers for c_s != 1, and the
//     horizon constraint sum(h) = T.
//
// The assembled residual bundle keeps exact complementarity rows in
// C-function form with the relaxation level sigma as a parameter slot, so the
// same bundle serves the homotopy (sigma > 0) and the exact system (sigma = 0).
//
// Unknown layout:  [ x_0..x_{N_FE} | V | Z_stage | boundary multipliers | h ]
// Parameter layout:[ s0 | q | T | sigma | lambda_{0,0} | (h for std grids) ]
// =============================================================================

#include <optional>

#include "fesd/butcher.hpp"
#include "fesd/reformulate.hpp"

namespace fesd {

struct FesdOptions {
    bool free_grid = true;      // false: fixed-grid standard RK
    double cross_scale = 1.0;   // multiplier on the c_n * sigma cross-row target
    int n_intervals = 1;        // control intervals, each with n_fe elements
    bool controls_as_vars = false;  // one control vector per interval as unknowns
};

struct FesdSystem {
    DcsSystem dcs;
    ButcherTableau tab;
    int n_fe = 1;      // elements per control interval
    FesdOptions opt;
    bool boundary_points = false;  // c_s != 1: extra multipliers at t_{n+1}

    // unknown layout
    int n_w = 0;
    int n_Z = 0;  // (N_FE+1) n_x + N_FE n_s n_x + N_FE n_s n_z (paper count)
    int off_v = 0, off_z = 0, off_bnd = 0, off_h = 0, off_q = -1;

    // parameter layout
    int n_p = 0;
    int p_s0 = 0, p_q = 0, p_T = 0, p_sigma = 0, p_lambda00 = 0, p_h = -1;

    std::shared_ptr<Arena> arena;
    std::shared_ptr<ResidualBundle> bundle;

    // row bookkeeping (indices into the bundle)
    std::vector<int> rows_smooth;       // dynamics, algebraic, continuity, boundary splits
    std::vector<int> rows_pairs;        // stage complementarity rows, one per (n,m,pair)
    std::vector<int> rows_boundary;     // boundary-pair C-function rows (c_s != 1)
    std::vector<int> rows_cross;        // one per interval-interior boundary
    std::vector<int> rows_eq;           // one per interval-interior boundary
    std::vector<int> rows_sum_h;        // one horizon row per interval

    // complementarity pair expressions per element/stage, flattened
    // stage_pair_a[(n*n_s + m)*n_pairs + p]
    std::vector<Expr> stage_pair_a, stage_pair_b;
    std::vector<std::pair<Expr, Expr>> boundary_pairs;  // per (n, j): (lambda_n, lambda_p)

    std::vector<std::vector<Expr>> psi_boundary;  // per n: psi_j(x_{n+1})
    std::vector<std::vector<Expr>> g_boundary;    // per n: stewart indicators at x_{n+1}
    std::vector<Expr> h_exprs;                    // per n: variable or parameter expr
    std::vector<Expr> eta_exprs;                  // per interior boundary (n = 1..N_FE-1)

    int n_x() const { return dcs.n_x; }
    int n_s() const { return tab.n_s; }
    int n_z() const { return dcs.n_z; }
    int n_pairs() const { return dcs.n_pairs(); }
    int n_elements() const { return opt.n_intervals * n_fe; }
    int interval_of(int element) const { return element / n_fe; }
    // grid boundary b (between elements b-1 and b) interior to an interval?
    bool internal_boundary(int b) const { return b % n_fe != 0; }

    int idx_x(int n, int i = 0) const { return n * dcs.n_x + i; }
    int idx_v(int n, int m, int i = 0) const { return off_v + (n * tab.n_s + m) * dcs.n_x + i; }
    int idx_z(int n, int m, int k = 0) const { return off_z + (n * tab.n_s + m) * dcs.n_z + k; }
    int idx_bnd(int n, int p = 0) const { return off_bnd + n * n_pairs() + p; }
    int idx_h(int n) const { return off_h + n; }
    int idx_q(int interval, int i = 0) const { return off_q + interval * dcs.n_u + i; }

    int stage_pair_index(int n, int m, int p) const { return (n * tab.n_s + m) * n_pairs() + p; }

    // parameter vector for a solve; lambda_{0,0} follows from s0
    std::vector<double> make_params(std::span<const double> s0, std::span<const double> q,
                                    double T, double sigma,
                                    std::span<const double> fixed_h = {}) const {
        std::vector<double> p(static_cast<size_t>(n_p), 0.0);
        for (int i = 0; i < dcs.n_x; ++i) p[static_cast<size_t>(p_s0 + i)] = s0[static_cast<size_t>(i)];
        for (int i = 0; i < dcs.n_u; ++i) p[static_cast<size_t>(p_q + i)] = q[static_cast<size_t>(i)];
        p[static_cast<size_t>(p_T)] = T;
        p[static_cast<size_t>(p_sigma)] = sigma;
        auto l0 = dcs.boundary_lambda(s0);
        for (int k = 0; k < n_pairs(); ++k) p[static_cast<size_t>(p_lambda00 + k)] = l0[static_cast<size_t>(k)];
        if (p_h >= 0) {
            if (static_cast<int>(fixed_h.size()) != n_elements())
                throw std::invalid_argument("make_params: fixed grid requires h values");
            for (int n = 0; n < n_elements(); ++n)
                p[static_cast<size_t>(p_h + n)] = fixed_h[static_cast<size_t>(n)];
        }
        return p;
    }
};

namespace detail {

struct FesdBuilder {
    FesdSystem sys;
    Arena* A = nullptr;

    Expr pvar(int slot) const { return A->var(sys.n_w + slot); }

    Expr fb(Expr a, Expr b, Expr sigma2) const {
        // a + b - sqrt(a^2 + b^2 + 2 sigma)
        return A->sub(A->add(a, b), A->sqrt(A->add(A->add(A->mul(a, a), A->mul(b, b)), sigma2)));
    }

    // lambda stage value for cross/equilibration sums; m = 0 is the left
    // boundary of element n, m in [1, n_s] the stages, m = n_s + 1 the right
    // boundary multiplier when c_s != 1.
    Expr lambda_value(int n, int m, int p) const {
        if (m == 0) {
            if (n == 0) return pvar(sys.p_lambda00 + p);
            if (sys.boundary_points) return A->var(sys.idx_bnd(n - 1, p));
            return A->var(sys.idx_z(n - 1, sys.tab.n_s - 1, sys.dcs.lambda_z[static_cast<size_t>(p)]));
        }
        if (m <= sys.tab.n_s)
            return A->var(sys.idx_z(n, m - 1, sys.dcs.lambda_z[static_cast<size_t>(p)]));
        return A->var(sys.idx_bnd(n, p));  // m = n_s + 1
    }
};

}  // namespace detail

inline FesdSystem assemble(const DcsSystem& dcs, const ButcherTableau& tab, int n_fe,
                           FesdOptions opt = {}) {
    if (n_fe < 1) throw std::invalid_argument("assemble: N_FE must be >= 1");
    if (opt.n_intervals < 1) throw std::invalid_argument("assemble: need at least one interval");
    if (opt.n_intervals > 1 && (!opt.free_grid || !tab.c_last_is_one))
        throw std::invalid_argument("assemble: multi-interval systems need a free grid and c_s = 1");
    detail::FesdBuilder B;
    FesdSystem& S = B.sys;
    S.dcs = dcs;
    S.tab = tab;
    S.n_fe = n_fe;
    S.opt = opt;
    S.boundary_points = !tab.c_last_is_one;
    if (S.boundary_points && dcs.variant == DcsVariant::Stewart)
        throw std::invalid_argument("assemble: Stewart DCS requires a c_s = 1 tableau");

    const int n_x = dcs.n_x, n_s = tab.n_s, n_z = dcs.n_z, n_pairs = dcs.n_pairs();
    const int n_el = opt.n_intervals * n_fe;

    // unknown layout
    S.off_v = (n_el + 1) * n_x;
    S.off_z = S.off_v + n_el * n_s * n_x;
    S.off_bnd = S.off_z + n_el * n_s * n_z;
    int n_bnd = S.boundary_points ? n_el * n_pairs : 0;
    S.off_h = S.off_bnd + n_bnd;
    S.off_q = S.off_h + (opt.free_grid ? n_el : 0);
    S.n_w = S.off_q + (opt.controls_as_vars ? opt.n_intervals * dcs.n_u : 0);
    S.n_Z = (n_el + 1) * n_x + n_el * n_s * n_x + n_el * n_s * n_z;

    // parameter layout
    S.p_s0 = 0;
    S.p_q = n_x;
    S.p_T = S.p_q + dcs.n_u;
    S.p_sigma = S.p_T + 1;
    S.p_lambda00 = S.p_sigma + 1;
    S.n_p = S.p_lambda00 + n_pairs;
    if (!opt.free_grid) {
        S.p_h = S.n_p;
        S.n_p += n_el;
    }

    S.arena = std::make_shared<Arena>();
    B.A = S.arena.get();
    Arena& A = *S.arena;
    S.bundle = std::make_shared<ResidualBundle>(S.arena, S.n_w, S.n_p);
    ResidualBundle& R = *S.bundle;

    Expr sigma = B.pvar(S.p_sigma);
    Expr sigma2 = A.mul(A.constant(2.0), sigma);

    for (int n = 0; n < n_el; ++n)
        S.h_exprs.push_back(opt.free_grid ? A.var(S.idx_h(n)) : B.pvar(S.p_h + n));

    auto add_row = [&](Expr e, RowTag tag, std::vector<int>& bucket) {
        bucket.push_back(R.rows());
        R.add_row(e, tag);
    };

    // initial value rows x_0 - s_0
    for (int i = 0; i < n_x; ++i)
        add_row(A.sub(A.var(S.idx_x(0, i)), B.pvar(S.p_s0 + i)), RowTag::Continuity, S.rows_smooth);

    // per-element rows
    S.stage_pair_a.resize(static_cast<size_t>(n_el * n_s * n_pairs));
    S.stage_pair_b.resize(static_cast<size_t>(n_el * n_s * n_pairs));
    for (int n = 0; n < n_el; ++n) {
        Expr h = S.h_exprs[static_cast<size_t>(n)];

        // stage x expressions and variable maps
        std::vector<std::vector<Expr>> zmap(static_cast<size_t>(n_s));
        for (int m = 0; m < n_s; ++m) {
            auto& map = zmap[static_cast<size_t>(m)];
            map.resize(static_cast<size_t>(n_x + n_z + dcs.n_u));
            for (int i = 0; i < n_x; ++i) {
                Expr acc;
                for (int j = 0; j < n_s; ++j) {
                    double a_mj = tab.A(m, j);
                    if (a_mj == 0.0) continue;
                    Expr term = A.mul(A.constant(a_mj), A.var(S.idx_v(n, j, i)));
                    acc = acc.valid() ? A.add(acc, term) : term;
                }
                Expr xs = A.var(S.idx_x(n, i));
                if (acc.valid()) xs = A.add(xs, A.mul(h, acc));
                map[static_cast<size_t>(i)] = xs;
            }
            for (int k = 0; k < n_z; ++k) map[static_cast<size_t>(n_x + k)] = A.var(S.idx_z(n, m, k));
            for (int i = 0; i < dcs.n_u; ++i)
                map[static_cast<size_t>(n_x + n_z + i)] =
                    opt.controls_as_vars ? A.var(S.idx_q(S.interval_of(n), i)) : B.pvar(S.p_q + i);
        }

        // v_{n,m} - f(x_stage, z_stage, q) = 0
        for (int m = 0; m < n_s; ++m)
            for (int i = 0; i < n_x; ++i) {
                Expr f = A.import(*dcs.arena, dcs.dynamics[static_cast<size_t>(i)], zmap[static_cast<size_t>(m)]);
                add_row(A.sub(A.var(S.idx_v(n, m, i)), f), RowTag::Dynamics, S.rows_smooth);
            }

        // smooth algebraic rows at every stage
        for (int m = 0; m < n_s; ++m)
            for (const Expr& g : dcs.alg_smooth)
                add_row(A.import(*dcs.arena, g, zmap[static_cast<size_t>(m)]), RowTag::Algebraic, S.rows_smooth);

        // stage complementarity pairs as C-function rows
        for (int m = 0; m < n_s; ++m)
            for (int p = 0; p < n_pairs; ++p) {
                Expr a = A.import(*dcs.arena, dcs.pairs[static_cast<size_t>(p)].first, zmap[static_cast<size_t>(m)]);
                Expr b = A.import(*dcs.arena, dcs.pairs[static_cast<size_t>(p)].second, zmap[static_cast<size_t>(m)]);
                S.stage_pair_a[static_cast<size_t>(S.stage_pair_index(n, m, p))] = a;
                S.stage_pair_b[static_cast<size_t>(S.stage_pair_index(n, m, p))] = b;
                add_row(B.fb(a, b, sigma2), RowTag::Complementarity, S.rows_pairs);
            }

        // continuity x_{n+1} = x_n + h sum b_m v_{n,m}
        for (int i = 0; i < n_x; ++i) {
            Expr acc;
            for (int m = 0; m < n_s; ++m) {
                Expr term = A.mul(A.constant(tab.b(m)), A.var(S.idx_v(n, m, i)));
                acc = acc.valid() ? A.add(acc, term) : term;
            }
            Expr rhs = A.add(A.var(S.idx_x(n, i)), A.mul(h, acc));
            add_row(A.sub(A.var(S.idx_x(n + 1, i)), rhs), RowTag::Continuity, S.rows_smooth);
        }

        // boundary values psi(x_{n+1}) (and Stewart indicators) for diagnostics
        {
            std::vector<Expr> xmap(static_cast<size_t>(n_x + n_z + dcs.n_u));
            for (int i = 0; i < n_x; ++i) xmap[static_cast<size_t>(i)] = A.var(S.idx_x(n + 1, i));
            std::vector<Expr> psi_b;
            for (const Expr& p : dcs.psi_x) psi_b.push_back(A.import(*dcs.arena, p, xmap));
            S.psi_boundary.push_back(psi_b);
            std::vector<Expr> g_b;
            for (const Expr& g : dcs.g_x) g_b.push_back(A.import(*dcs.arena, g, xmap));
            S.g_boundary.push_back(g_b);

            // true boundary multipliers when c_s != 1
            if (S.boundary_points) {
                int n_psi = dcs.n_psi;
                for (int j = 0; j < n_psi; ++j) {
                    Expr ln = A.var(S.idx_bnd(n, j));
                    Expr lp = A.var(S.idx_bnd(n, n_psi + j));
                    add_row(A.add(A.sub(psi_b[static_cast<size_t>(j)], lp), ln), RowTag::Algebraic,
                            S.rows_smooth);
                    S.boundary_pairs.emplace_back(ln, lp);
                    add_row(B.fb(ln, lp, sigma2), RowTag::Complementarity, S.rows_boundary);
                }
            }
        }
    }

    if (opt.free_grid) {
        const int m_hi = S.boundary_points ? n_s + 1 : n_s;  // last lambda index per element

        // cross complementarity, one aggregated row per interval-interior boundary
        for (int n = 0; n + 1 < n_el; ++n) {
            if (!S.internal_boundary(n + 1)) continue;
            Expr row;
            int count = 0;
            for (int k = n; k <= n + 1; ++k) {
                for (int m = 1; m <= n_s; ++m) {
                    for (int mp = 0; mp <= m_hi; ++mp) {
                        if (mp == m) continue;
                        for (int p = 0; p < n_pairs; ++p) {
                            Expr w = S.stage_pair_b[static_cast<size_t>(S.stage_pair_index(k, m - 1, p))];
                            Expr term = A.mul(w, B.lambda_value(k, mp, p));
                            row = row.valid() ? A.add(row, term) : term;
                            ++count;
                        }
                    }
                }
            }
            // normalized by the term count so the row keeps O(sigma) scale
            Expr target = A.mul(A.constant(opt.cross_scale), sigma);
            Expr scaled = A.mul(A.constant(1.0 / static_cast<double>(count)), row);
            add_row(A.sub(scaled, target), RowTag::Complementarity, S.rows_cross);
        }

        // Step equilibration (h_n - h_{n-1}) eta_n. Each group factor is
        //   upsilon = sum_p sigmaB_p sigmaF_p + prod_p wB_p wF_p,
        // i.e. the backward/forward multiplier sums of the paper augmented
        // with a selector-sum product, which keeps the indicator strictly
        // positive across persistent sliding arcs (where all multipliers
        // vanish) while preserving the zero set at genuine active-set
        // changes. Every factor is normalized by an AM-GM upper bound so the
        // row scale stays O(h) regardless of n_psi and multiplier magnitudes.
        for (int n = 1; n < n_el; ++n) {
            if (!S.internal_boundary(n)) continue;
            Expr eta;
            for (const auto& group : dcs.eq_groups) {
                Expr upsilon, normalizer;
                for (int p : group) {
                    Expr sb, sf;
                    for (int m = 0; m <= m_hi; ++m) {
                        Expr lb = B.lambda_value(n - 1, m, p);
                        Expr lf = B.lambda_value(n, m, p);
                        sb = sb.valid() ? A.add(sb, lb) : lb;
                        sf = sf.valid() ? A.add(sf, lf) : lf;
                    }
                    Expr prod = A.mul(sb, sf);
                    upsilon = upsilon.valid() ? A.add(upsilon, prod) : prod;
                    Expr half = A.mul(A.constant(0.5),
                                      A.add(A.mul(sb, sb), A.mul(sf, sf)));
                    normalizer = normalizer.valid() ? A.add(normalizer, half) : half;
                }
                Expr wprod, wnorm;
                for (int p : group) {
                    Expr wb, wf;
                    for (int m = 1; m <= n_s; ++m) {
                        Expr bwd = S.stage_pair_b[static_cast<size_t>(S.stage_pair_index(n - 1, m - 1, p))];
                        Expr fwd = S.stage_pair_b[static_cast<size_t>(S.stage_pair_index(n, m - 1, p))];
                        wb = wb.valid() ? A.add(wb, bwd) : bwd;
                        wf = wf.valid() ? A.add(wf, fwd) : fwd;
                    }
                    Expr prod = A.mul(wb, wf);
                    wprod = wprod.valid() ? A.mul(wprod, prod) : prod;
                    Expr half = A.mul(A.constant(0.5),
                                      A.add(A.mul(wb, wb), A.mul(wf, wf)));
                    wnorm = wnorm.valid() ? A.mul(wnorm, half) : half;
                }
                if (wprod.valid()) {
                    upsilon = A.add(upsilon, wprod);
                    normalizer = A.add(normalizer, wnorm);
                }
                Expr hat = A.div(upsilon, A.add(normalizer, A.constant(1e-12)));
                eta = eta.valid() ? A.mul(eta, hat) : hat;
            }
            S.eta_exprs.push_back(eta);
            Expr dh = A.sub(S.h_exprs[static_cast<size_t>(n)], S.h_exprs[static_cast<size_t>(n - 1)]);
            add_row(A.mul(dh, eta), RowTag::Equilibration, S.rows_eq);
        }

        // sum(h) = T per control interval
        for (int k = 0; k < opt.n_intervals; ++k) {
            Expr hsum;
            for (int n = k * n_fe; n < (k + 1) * n_fe; ++n)
                hsum = hsum.valid() ? A.add(hsum, S.h_exprs[static_cast<size_t>(n)])
                                    : S.h_exprs[static_cast<size_t>(n)];
            S.rows_sum_h.push_back(R.rows());
            R.add_row(A.sub(hsum, B.pvar(S.p_T)), RowTag::Algebraic);
        }
    }

    return S;
}

inline FesdSystem assemble_fesd(const DcsSystem& dcs, const ButcherTableau& tab, int n_fe,
                                double cross_scale = 1.0) {
    FesdOptions opt;
    opt.free_grid = true;
    opt.cross_scale = cross_scale;
    return assemble(dcs, tab, n_fe, opt);
}

inline FesdSystem assemble_std(const DcsSystem& dcs, const ButcherTableau& tab, int n_fe) {
    FesdOptions opt;
    opt.free_grid = false;
    return assemble(dcs, tab, n_fe, opt);
}

// ---------------------------------------------------------------------------
// Numeric helpers mirroring the assembled expressions; used by tests and by
// the switch classifier.
//
// Lambda blocks are laid out with rows m = 0..M (boundary value first) and one
// column per pair; weight blocks with rows m = 1..n_s.
// ---------------------------------------------------------------------------

inline double cross_complementarity_value(const Eigen::MatrixXd& W_n, const Eigen::MatrixXd& L_n,
                                          const Eigen::MatrixXd& W_n1, const Eigen::MatrixXd& L_n1) {
    auto one_element = [](const Eigen::MatrixXd& W, const Eigen::MatrixXd& L) {
        double acc = 0.0;
        for (int m = 1; m <= W.rows(); ++m)
            for (int mp = 0; mp < L.rows(); ++mp) {
                if (mp == m) continue;
                acc += W.row(m - 1).dot(L.row(mp));
            }
        return acc;
    };
    return one_element(W_n, L_n) + one_element(W_n1, L_n1);
}

// upsilon/eta from multiplier and selector stage sums; groups index pairs.
inline Eigen::VectorXd upsilon_values(const Eigen::MatrixXd& L_back, const Eigen::MatrixXd& L_fwd,
                                      const Eigen::MatrixXd& W_back, const Eigen::MatrixXd& W_fwd,
                                      const std::vector<std::vector<int>>& groups) {
    Eigen::VectorXd sb = L_back.colwise().sum(), sf = L_fwd.colwise().sum();
    Eigen::VectorXd wb = W_back.colwise().sum(), wf = W_fwd.colwise().sum();
    Eigen::VectorXd ups(static_cast<Eigen::Index>(groups.size()));
    for (size_t g = 0; g < groups.size(); ++g) {
        double lam_sum = 0.0, w_prod = 1.0;
        for (int p : groups[g]) {
            lam_sum += sb(p) * sf(p);
            w_prod *= wb(p) * wf(p);
        }
        ups(static_cast<Eigen::Index>(g)) = lam_sum + w_prod;
    }
    return ups;
}

inline double eta_value(const Eigen::MatrixXd& L_back, const Eigen::MatrixXd& L_fwd,
                        const Eigen::MatrixXd& W_back, const Eigen::MatrixXd& W_fwd,
                        const std::vector<std::vector<int>>& groups) {
    Eigen::VectorXd ups = upsilon_values(L_back, L_fwd, W_back, W_fwd, groups);
    double eta = 1.0;
    for (Eigen::Index g = 0; g < ups.size(); ++g) eta *= ups(g);
    return eta;
}

// Boundary multipliers implied by psi(x_{n+1}); the assembler enforces these
// through split + C-function rows, this is the closed-form counterpart.
inline std::pair<std::vector<double>, std::vector<double>> boundary_multipliers(
    const ButcherTableau& tab, std::span<const double> psi_next) {
    if (tab.c_last_is_one)
        throw std::invalid_argument("boundary_multipliers: tableau already has c_s = 1");
    auto sel = heaviside_oracle(psi_next);
    return {sel.lambda_p, sel.lambda_n};
}

}  // namespace fesd
