#pragma once

// =============================================================================
// Reformulation of nonsmooth models into dynamic complementarity systems:
//   - Heaviside-step DCS with Filippov multipliers theta (optionally lifted),
//   - Stewart DCS with indicator functions g(x) = -S psi(x),
//   - direct step-selection DCS for Aizerman-Pyatnitskii systems,
// plus fixed-active-set regularity diagnostics and problem-size reports.
// =============================================================================

#include <Eigen/Dense>

#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fesd/model.hpp"

namespace fesd {

// ---------------------------------------------------------------------------
// Filippov multiplier expressions. Local variable convention: alpha_j = var(j).
// theta_k = sum over rows i in region k of prod_j ((1 - S_ij)/2 + S_ij alpha_j).
// ---------------------------------------------------------------------------
inline Expr sign_row_product(Arena& A, const std::vector<int>& row,
                             const std::function<Expr(int)>& alpha) {
    Expr prod;
    for (size_t j = 0; j < row.size(); ++j) {
        Expr factor = row[j] > 0 ? alpha(static_cast<int>(j))
                                 : A.sub(A.constant(1.0), alpha(static_cast<int>(j)));
        prod = prod.valid() ? A.mul(prod, factor) : factor;
    }
    return prod.valid() ? prod : A.constant(1.0);
}

inline std::vector<Expr> build_theta_exprs(Arena& A, const SignMatrix& S, const RegionSpec& regions) {
    auto alpha = [&](int j) { return A.var(j); };
    std::vector<Expr> theta;
    theta.reserve(regions.regions.size());
    for (const auto& rows : regions.regions) {
        Expr sum;
        for (int i : rows) {
            Expr p = sign_row_product(A, S.rows[static_cast<size_t>(i)], alpha);
            sum = sum.valid() ? A.add(sum, p) : p;
        }
        theta.push_back(sum);
    }
    return theta;
}

inline std::vector<Expr> build_theta_exprs(const NonsmoothModel& m, Arena& A) {
    return build_theta_exprs(A, m.S, m.regions);
}

// ---------------------------------------------------------------------------
// Lifting of the multi-affine row products: whenever a product would have
// more than n_d affine factors, shared prefixes are replaced by auxiliary
// beta variables. Local variable convention: alpha_j = var(j),
// beta_k = var(n_psi + k). Prefix classes are detected with a unique-rows
// step; ties are broken by row index so the beta numbering is deterministic.
// ---------------------------------------------------------------------------
struct LiftingResult {
    int n_d = 0;
    int n_beta = 0;
    std::vector<Expr> row_products;  // one per sign-matrix row, lifted form
    std::vector<Expr> g_beta;        // beta_k - (defining product), forward-substitutable
};

inline LiftingResult lift(Arena& A, const SignMatrix& S, int n_d) {
    if (n_d < 2) throw std::invalid_argument("lift: n_d must be >= 2");
    const int n_psi = S.n_psi();
    const int n_rows = S.n_rows();
    auto alpha = [&](int j) { return A.var(j); };

    LiftingResult out;
    out.n_d = n_d;

    // Running partial products per row; after processing column j, work[i]
    // holds the (possibly beta-rewritten) product of the first j+1 factors.
    std::vector<Expr> work(static_cast<size_t>(n_rows));
    for (int i = 0; i < n_rows; ++i) {
        Expr f = S.rows[static_cast<size_t>(i)][0] > 0 ? alpha(0) : A.sub(A.constant(1.0), alpha(0));
        work[static_cast<size_t>(i)] = f;
    }
    for (int j = 1; j < n_psi; ++j) {
        // Introduce a lifting layer before appending factor j+1 whenever the
        // accumulated prefix already has n_d factors.
        if (j >= n_d && j <= n_psi - 1) {
            // unique prefix classes over columns [0, j)
            std::vector<int> cls(static_cast<size_t>(n_rows), -1);
            std::vector<int> reps;
            for (int i = 0; i < n_rows; ++i) {
                for (size_t r = 0; r < reps.size(); ++r) {
                    bool same = true;
                    for (int c = 0; c < j; ++c)
                        if (S.rows[static_cast<size_t>(i)][static_cast<size_t>(c)] !=
                            S.rows[static_cast<size_t>(reps[r])][static_cast<size_t>(c)]) {
                            same = false;
                            break;
                        }
                    if (same) {
                        cls[static_cast<size_t>(i)] = static_cast<int>(r);
                        break;
                    }
                }
                if (cls[static_cast<size_t>(i)] < 0) {
                    cls[static_cast<size_t>(i)] = static_cast<int>(reps.size());
                    reps.push_back(i);
                }
            }
            for (size_t r = 0; r < reps.size(); ++r) {
                Expr beta = A.var(n_psi + out.n_beta + static_cast<int>(r));
                out.g_beta.push_back(A.sub(beta, work[static_cast<size_t>(reps[r])]));
            }
            for (int i = 0; i < n_rows; ++i)
                work[static_cast<size_t>(i)] =
                    A.var(n_psi + out.n_beta + cls[static_cast<size_t>(i)]);
            out.n_beta += static_cast<int>(reps.size());
        }
        for (int i = 0; i < n_rows; ++i) {
            Expr f = S.rows[static_cast<size_t>(i)][static_cast<size_t>(j)] > 0
                         ? alpha(j)
                         : A.sub(A.constant(1.0), alpha(j));
            work[static_cast<size_t>(i)] = A.mul(work[static_cast<size_t>(i)], f);
        }
    }
    out.row_products = std::move(work);
    return out;
}

// Number of beta variables lift() will introduce, without building it.
inline int lift_beta_count(const SignMatrix& S, int n_d) {
    if (n_d < 2) throw std::invalid_argument("lift_beta_count: n_d must be >= 2");
    const int n_psi = S.n_psi();
    int n_beta = 0;
    for (int j = n_d; j <= n_psi - 1; ++j) {
        std::vector<std::vector<int>> seen;
        for (const auto& row : S.rows) {
            std::vector<int> prefix(row.begin(), row.begin() + j);
            if (std::find(seen.begin(), seen.end(), prefix) == seen.end()) seen.push_back(prefix);
        }
        n_beta += static_cast<int>(seen.size());
    }
    return n_beta;
}

// ---------------------------------------------------------------------------
// The assembled DCS. All expressions use the variable convention
//   [0, n_x): x,  [n_x, n_x + n_z): z,  [n_x + n_z, n_x + n_z + n_u): u.
// ---------------------------------------------------------------------------
enum class DcsVariant : uint8_t { Step, Stewart, ApDirect };

struct DcsSystem {
    std::shared_ptr<Arena> arena;
    DcsVariant variant = DcsVariant::Step;
    std::string model_name;

    int n_x = 0, n_u = 0, n_z = 0;
    int n_psi = 0, n_f = 0, n_beta = 0;

    // offsets into z (-1 when the block is absent)
    int z_theta = -1, z_alpha = -1, z_lp = -1, z_ln = -1, z_beta = -1, z_lambda = -1, z_mu = -1;

    std::vector<Expr> dynamics;    // n_x rows
    std::vector<Expr> alg_smooth;  // smooth equality rows

    // Complementarity pairs (a, b): `a` is always a continuous multiplier
    // (a z variable, index in lambda_z), `b` the matching selector expression.
    std::vector<std::pair<Expr, Expr>> pairs;
    std::vector<int> lambda_z;
    // Equilibration groups: pair indices whose multipliers guard one switching
    // surface (step: {lambda_n_j, lambda_p_j}; Stewart: {lambda_i}).
    std::vector<std::vector<int>> eq_groups;

    std::vector<Expr> psi_x;  // switching functions of x (DCS variable space)
    std::vector<Expr> g_x;    // Stewart indicators of x, when variant == Stewart

    // For AP systems: the per-equation step-product expressions (metadata).
    std::vector<Expr> selection_products;

    int n_pairs() const { return static_cast<int>(pairs.size()); }
    Expr xvar(int i) const { return arena->var(i); }
    Expr zvar(int k) const { return arena->var(n_x + k); }
    Expr uvar(int i) const { return arena->var(n_x + n_z + i); }

    // Boundary multiplier values implied by a state (exact LP solution),
    // ordered like `pairs`.
    std::vector<double> boundary_lambda(std::span<const double> x) const {
        std::vector<double> psi(psi_x.size());
        for (size_t j = 0; j < psi_x.size(); ++j) psi[j] = eval_once(psi_x[j], x);
        std::vector<double> out(pairs.size(), 0.0);
        if (variant == DcsVariant::Stewart) {
            std::vector<double> g(g_x.size());
            double gmin = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < g_x.size(); ++i) {
                g[i] = eval_once(g_x[i], x);
                gmin = std::min(gmin, g[i]);
            }
            for (size_t i = 0; i < g.size(); ++i) out[i] = g[i] - gmin;
        } else {
            auto sel = heaviside_oracle(psi);
            for (int j = 0; j < n_psi; ++j) {
                out[static_cast<size_t>(j)] = sel.lambda_n[static_cast<size_t>(j)];
                out[static_cast<size_t>(n_psi + j)] = sel.lambda_p[static_cast<size_t>(j)];
            }
        }
        return out;
    }
};

namespace detail {

// Import model expressions into the DCS arena; `alpha_map` applies only to
// AP-direct dynamics.
inline Expr import_model_expr(DcsSystem& dcs, const NonsmoothModel& m, Expr e,
                              bool map_alpha = false) {
    std::vector<Expr> var_map(static_cast<size_t>(m.n_x + m.n_u + (map_alpha ? m.n_psi() : 0)));
    for (int i = 0; i < m.n_x; ++i) var_map[static_cast<size_t>(i)] = dcs.xvar(i);
    for (int i = 0; i < m.n_u; ++i) var_map[static_cast<size_t>(m.n_x + i)] = dcs.uvar(i);
    if (map_alpha)
        for (int j = 0; j < m.n_psi(); ++j)
            var_map[static_cast<size_t>(m.n_x + m.n_u + j)] = dcs.zvar(dcs.z_alpha + j);
    return dcs.arena->import(*m.arena, e, var_map);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Heaviside-step DCS: z = [theta, alpha, lambda_p, lambda_n, beta].
// Pass n_d = 0 for no lifting.
// ---------------------------------------------------------------------------
inline DcsSystem build_step_dcs(const NonsmoothModel& m, int n_d = 0) {
    if (m.ap_direct) {
        // AP systems get the direct selection-based DCS (no theta simplex).
        DcsSystem dcs;
        dcs.arena = std::make_shared<Arena>();
        dcs.variant = DcsVariant::ApDirect;
        dcs.model_name = m.name;
        dcs.n_x = m.n_x;
        dcs.n_u = m.n_u;
        dcs.n_psi = m.n_psi();
        dcs.n_z = 3 * dcs.n_psi;
        dcs.z_alpha = 0;
        dcs.z_lp = dcs.n_psi;
        dcs.z_ln = 2 * dcs.n_psi;
        Arena& A = *dcs.arena;

        for (const Expr& p : m.psi) dcs.psi_x.push_back(detail::import_model_expr(dcs, m, p));
        for (const Expr& f : m.ap_dynamics)
            dcs.dynamics.push_back(detail::import_model_expr(dcs, m, f, /*map_alpha=*/true));

        for (int j = 0; j < dcs.n_psi; ++j)
            dcs.alg_smooth.push_back(A.sub(A.add(dcs.psi_x[static_cast<size_t>(j)],
                                                 dcs.zvar(dcs.z_ln + j)),
                                           dcs.zvar(dcs.z_lp + j)));
        for (int j = 0; j < dcs.n_psi; ++j) {
            dcs.pairs.emplace_back(dcs.zvar(dcs.z_ln + j), dcs.zvar(dcs.z_alpha + j));
            dcs.lambda_z.push_back(dcs.z_ln + j);
        }
        for (int j = 0; j < dcs.n_psi; ++j) {
            dcs.pairs.emplace_back(dcs.zvar(dcs.z_lp + j),
                                   A.sub(A.constant(1.0), dcs.zvar(dcs.z_alpha + j)));
            dcs.lambda_z.push_back(dcs.z_lp + j);
        }
        for (int j = 0; j < dcs.n_psi; ++j) dcs.eq_groups.push_back({j, dcs.n_psi + j});

        // per-equation selection products: the alpha-dependent factor of each row
        for (int i = 0; i < m.n_x; ++i) {
            Expr f = dcs.dynamics[static_cast<size_t>(i)];
            auto vars = dcs.arena->vars_of(f);
            bool has_alpha = false;
            for (int v : vars)
                if (v >= dcs.n_x + dcs.z_alpha && v < dcs.n_x + dcs.z_alpha + dcs.n_psi) has_alpha = true;
            if (has_alpha) dcs.selection_products.push_back(f);
        }
        return dcs;
    }

    DcsSystem dcs;
    dcs.arena = std::make_shared<Arena>();
    dcs.variant = DcsVariant::Step;
    dcs.model_name = m.name;
    dcs.n_x = m.n_x;
    dcs.n_u = m.n_u;
    dcs.n_psi = m.n_psi();
    dcs.n_f = m.n_f();
    dcs.n_beta = (n_d >= 2 && n_d < dcs.n_psi) ? lift_beta_count(m.S, n_d) : 0;
    bool lifted = dcs.n_beta > 0;

    dcs.z_theta = 0;
    dcs.z_alpha = dcs.n_f;
    dcs.z_lp = dcs.n_f + dcs.n_psi;
    dcs.z_ln = dcs.n_f + 2 * dcs.n_psi;
    dcs.z_beta = dcs.n_f + 3 * dcs.n_psi;
    dcs.n_z = dcs.n_f + 3 * dcs.n_psi + dcs.n_beta;
    Arena& A = *dcs.arena;

    for (const Expr& p : m.psi) dcs.psi_x.push_back(detail::import_model_expr(dcs, m, p));

    // theta definitions (optionally lifted), expressed in z variables
    {
        Arena local;
        std::vector<Expr> row_products;
        std::vector<Expr> g_beta;
        if (lifted) {
            LiftingResult lr = lift(local, m.S, n_d);
            row_products = lr.row_products;
            g_beta = lr.g_beta;
        } else {
            auto alpha = [&](int j) { return local.var(j); };
            for (const auto& row : m.S.rows) row_products.push_back(sign_row_product(local, row, alpha));
        }
        std::vector<Expr> var_map(static_cast<size_t>(dcs.n_psi + dcs.n_beta));
        for (int j = 0; j < dcs.n_psi; ++j) var_map[static_cast<size_t>(j)] = dcs.zvar(dcs.z_alpha + j);
        for (int k = 0; k < dcs.n_beta; ++k)
            var_map[static_cast<size_t>(dcs.n_psi + k)] = dcs.zvar(dcs.z_beta + k);

        for (int k = 0; k < dcs.n_f; ++k) {
            Expr sum;
            for (int i : m.regions.regions[static_cast<size_t>(k)]) {
                Expr p = A.import(local, row_products[static_cast<size_t>(i)], var_map);
                sum = sum.valid() ? A.add(sum, p) : p;
            }
            dcs.alg_smooth.push_back(A.sub(dcs.zvar(dcs.z_theta + k), sum));
        }
        for (const Expr& gb : g_beta) dcs.alg_smooth.push_back(A.import(local, gb, var_map));
    }

    // Lagrangian split psi - lambda_p + lambda_n = 0
    for (int j = 0; j < dcs.n_psi; ++j)
        dcs.alg_smooth.push_back(A.sub(A.add(dcs.psi_x[static_cast<size_t>(j)],
                                             dcs.zvar(dcs.z_ln + j)),
                                       dcs.zvar(dcs.z_lp + j)));

    // dynamics F(x,u) theta
    for (int i = 0; i < m.n_x; ++i) {
        Expr sum;
        for (int k = 0; k < dcs.n_f; ++k) {
            Expr fk = detail::import_model_expr(dcs, m, m.dynamics[static_cast<size_t>(k)][static_cast<size_t>(i)]);
            Expr term = A.mul(dcs.zvar(dcs.z_theta + k), fk);
            sum = sum.valid() ? A.add(sum, term) : term;
        }
        dcs.dynamics.push_back(sum);
    }

    for (int j = 0; j < dcs.n_psi; ++j) {
        dcs.pairs.emplace_back(dcs.zvar(dcs.z_ln + j), dcs.zvar(dcs.z_alpha + j));
        dcs.lambda_z.push_back(dcs.z_ln + j);
    }
    for (int j = 0; j < dcs.n_psi; ++j) {
        dcs.pairs.emplace_back(dcs.zvar(dcs.z_lp + j), A.sub(A.constant(1.0), dcs.zvar(dcs.z_alpha + j)));
        dcs.lambda_z.push_back(dcs.z_lp + j);
    }
    for (int j = 0; j < dcs.n_psi; ++j) dcs.eq_groups.push_back({j, dcs.n_psi + j});
    return dcs;
}

// ---------------------------------------------------------------------------
// Stewart DCS: z = [theta, lambda, mu], with one theta/lambda per base set
// (regions given as unions duplicate columns of F).
// ---------------------------------------------------------------------------
inline DcsSystem build_stewart_dcs(const NonsmoothModel& m) {
    if (m.ap_direct)
        throw std::invalid_argument("build_stewart_dcs: AP-direct systems have no Stewart form");
    const int n_psi = m.n_psi();
    if (m.S.n_rows() != (1 << n_psi))
        throw std::invalid_argument("build_stewart_dcs: sign matrix must enumerate all base sets");

    DcsSystem dcs;
    dcs.arena = std::make_shared<Arena>();
    dcs.variant = DcsVariant::Stewart;
    dcs.model_name = m.name;
    dcs.n_x = m.n_x;
    dcs.n_u = m.n_u;
    dcs.n_psi = n_psi;
    dcs.n_f = m.S.n_rows();
    dcs.z_theta = 0;
    dcs.z_lambda = dcs.n_f;
    dcs.z_mu = 2 * dcs.n_f;
    dcs.n_z = 2 * dcs.n_f + 1;
    Arena& A = *dcs.arena;

    for (const Expr& p : m.psi) dcs.psi_x.push_back(detail::import_model_expr(dcs, m, p));

    // indicators g = -S psi
    for (int i = 0; i < dcs.n_f; ++i) {
        Expr g;
        for (int j = 0; j < n_psi; ++j) {
            double s = -static_cast<double>(m.S.rows[static_cast<size_t>(i)][static_cast<size_t>(j)]);
            Expr term = A.mul(A.constant(s), dcs.psi_x[static_cast<size_t>(j)]);
            g = g.valid() ? A.add(g, term) : term;
        }
        dcs.g_x.push_back(g);
    }

    // column i of F = dynamics of the region owning base set i
    std::vector<int> owner(static_cast<size_t>(dcs.n_f), -1);
    for (size_t k = 0; k < m.regions.regions.size(); ++k)
        for (int r : m.regions.regions[k]) owner[static_cast<size_t>(r)] = static_cast<int>(k);

    for (int i = 0; i < m.n_x; ++i) {
        Expr sum;
        for (int c = 0; c < dcs.n_f; ++c) {
            Expr fc = detail::import_model_expr(
                dcs, m, m.dynamics[static_cast<size_t>(owner[static_cast<size_t>(c)])][static_cast<size_t>(i)]);
            Expr term = A.mul(dcs.zvar(dcs.z_theta + c), fc);
            sum = sum.valid() ? A.add(sum, term) : term;
        }
        dcs.dynamics.push_back(sum);
    }

    // g(x) - lambda + mu e = 0 and e' theta - 1 = 0
    for (int i = 0; i < dcs.n_f; ++i)
        dcs.alg_smooth.push_back(A.add(A.sub(dcs.g_x[static_cast<size_t>(i)],
                                             dcs.zvar(dcs.z_lambda + i)),
                                       dcs.zvar(dcs.z_mu)));
    {
        Expr sum;
        for (int i = 0; i < dcs.n_f; ++i)
            sum = sum.valid() ? A.add(sum, dcs.zvar(dcs.z_theta + i)) : dcs.zvar(dcs.z_theta + i);
        dcs.alg_smooth.push_back(A.sub(sum, A.constant(1.0)));
    }

    for (int i = 0; i < dcs.n_f; ++i) {
        dcs.pairs.emplace_back(dcs.zvar(dcs.z_lambda + i), dcs.zvar(dcs.z_theta + i));
        dcs.lambda_z.push_back(dcs.z_lambda + i);
        dcs.eq_groups.push_back({i});
    }
    return dcs;
}

// ---------------------------------------------------------------------------
// Fixed-active-set regularity diagnostics: W = grad(psi_K)' F_I and the
// partial Jacobian B of the theta-product rows with respect to alpha_K.
// ---------------------------------------------------------------------------
struct ActiveSetDiagnostics {
    bool ode_mode = false;  // K empty: plain ODE, no DAE algebra
    Eigen::MatrixXd W;      // |K| x |I|
    Eigen::MatrixXd B;      // |I| x |K|
    Eigen::MatrixXd WB;     // |K| x |K|
    Eigen::VectorXd singular_values;
    int rank = 0;
    double tolerance = 0.0;
};

inline ActiveSetDiagnostics fixed_active_set_diagnostics(
    const NonsmoothModel& m, std::span<const double> x, std::span<const double> u,
    const std::vector<int>& I, const std::vector<int>& K,
    std::span<const double> alpha_opt = {}) {
    ActiveSetDiagnostics d;
    if (K.empty()) {
        d.ode_mode = true;
        return d;
    }
    const int n_psi = m.n_psi();

    // evaluation point for alpha: exact oracle with 0.5 on the surfaces
    std::vector<double> psi(static_cast<size_t>(n_psi));
    std::vector<double> xv(x.begin(), x.end());
    for (int j = 0; j < n_psi; ++j) psi[static_cast<size_t>(j)] = eval_once(m.psi[static_cast<size_t>(j)], xv);
    auto sel = heaviside_oracle(psi);
    std::vector<double> alpha = sel.alpha;
    if (!alpha_opt.empty()) alpha.assign(alpha_opt.begin(), alpha_opt.end());

    // W = grad(psi_K)' F_I
    auto arena = m.arena;
    ResidualBundle psi_bundle(arena, m.n_x, 0);
    for (int j : K) psi_bundle.add_row(m.psi[static_cast<size_t>(j)], RowTag::Algebraic);
    auto Jpsi = psi_bundle.jacobian(std::span<const double>(xv), {});

    std::vector<double> xu(xv);
    xu.insert(xu.end(), u.begin(), u.end());
    d.W.resize(static_cast<Eigen::Index>(K.size()), static_cast<Eigen::Index>(I.size()));
    for (size_t c = 0; c < I.size(); ++c) {
        for (size_t r = 0; r < K.size(); ++r) {
            double acc = 0.0;
            for (int ix = 0; ix < m.n_x; ++ix)
                acc += Jpsi[r][static_cast<size_t>(ix)] *
                       eval_once(m.dynamics[static_cast<size_t>(I[c])][static_cast<size_t>(ix)], xu);
            d.W(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = acc;
        }
    }

    // B = d theta_I / d alpha_K at the evaluation point
    Arena local;
    auto theta = build_theta_exprs(local, m.S, m.regions);
    auto bundle_arena = std::make_shared<Arena>();
    ResidualBundle tb(bundle_arena, n_psi, 0);
    for (int i : I) {
        std::vector<Expr> id_map;  // plain clone
        tb.add_row(bundle_arena->import(local, theta[static_cast<size_t>(i)], id_map), RowTag::Algebraic);
    }
    auto Jt = tb.jacobian(std::span<const double>(alpha), {});
    d.B.resize(static_cast<Eigen::Index>(I.size()), static_cast<Eigen::Index>(K.size()));
    for (size_t r = 0; r < I.size(); ++r)
        for (size_t c = 0; c < K.size(); ++c)
            d.B(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                Jt[r][static_cast<size_t>(K[c])];

    d.WB = d.W * d.B;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(d.WB);
    d.singular_values = svd.singularValues();
    double norm = d.singular_values.size() > 0 ? d.singular_values(0) : 0.0;
    d.tolerance = 1e-10 * norm;
    d.rank = 0;
    for (Eigen::Index i = 0; i < d.singular_values.size(); ++i)
        if (d.singular_values(i) > d.tolerance && d.singular_values(i) > 0) ++d.rank;
    return d;
}

// ---------------------------------------------------------------------------
// Problem-size comparison between the step and Stewart reformulations.
// n_comp_pairs counts paired conditions (one per switching function resp. per
// base set); n_comp_scalar counts scalar complementarity pairs.
// ---------------------------------------------------------------------------
struct ComplexityRow {
    std::string model;
    std::string variant;  // "step" or "stewart"
    int n_psi = 0;
    int n_f = 0;
    int n_beta = 0;
    int n_alg = 0;
    int n_comp_pairs = 0;
    int n_comp_scalar = 0;
    int n_eq = 0;
};

inline ComplexityRow step_complexity(const std::string& name, int n_psi, int n_f, int n_beta) {
    ComplexityRow r;
    r.model = name;
    r.variant = "step";
    r.n_psi = n_psi;
    r.n_f = n_f;
    r.n_beta = n_beta;
    r.n_alg = n_f + 3 * n_psi + n_beta;
    r.n_comp_pairs = n_psi;
    r.n_comp_scalar = 2 * n_psi;
    r.n_eq = n_psi + n_beta + n_f;
    return r;
}

inline ComplexityRow stewart_complexity(const std::string& name, int n_psi) {
    ComplexityRow r;
    r.model = name;
    r.variant = "stewart";
    r.n_psi = n_psi;
    r.n_f = 1 << n_psi;
    r.n_beta = 0;
    r.n_alg = 2 * (1 << n_psi) + 1;
    r.n_comp_pairs = 1 << n_psi;
    r.n_comp_scalar = 1 << n_psi;
    r.n_eq = (1 << n_psi) + 1;
    return r;
}

inline std::vector<ComplexityRow> complexity_report(const NonsmoothModel& m, int n_d = 0) {
    if (m.ap_direct)
        throw std::invalid_argument("complexity_report: table applies to Filippov models");
    int n_beta = (n_d >= 2 && n_d < m.n_psi()) ? lift_beta_count(m.S, n_d) : 0;
    return {step_complexity(m.name, m.n_psi(), m.n_f(), n_beta),
            stewart_complexity(m.name, m.n_psi())};
}

}  // namespace fesd
