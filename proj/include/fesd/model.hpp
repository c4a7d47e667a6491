#pragma once

// =============================================================================
// Piecewise-smooth / Heaviside-step system definitions: switching functions,
// sign matrices, regions (possibly unions of base sets) and per-region vector
// fields, plus the exact set-valued step oracle.
//
// Variable index conventions inside model expressions:
//   psi:       x only,          indices [0, n_x)
//   dynamics:  (x, u),          indices [0, n_x) and [n_x, n_x + n_u)
//   AP-direct dynamics: (x, u, alpha), alpha_j at index n_x + n_u + j
// =============================================================================

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fesd/expr.hpp"

namespace fesd {

// ---------------------------------------------------------------------------
// Sign matrix: rows of {+1, -1} entries, one column per switching function.
// ---------------------------------------------------------------------------
struct SignMatrix {
    std::vector<std::vector<int>> rows;

    int n_rows() const { return static_cast<int>(rows.size()); }
    int n_psi() const { return rows.empty() ? 0 : static_cast<int>(rows.front().size()); }

    // All 2^n_psi rows; row 0 is all +1 and the last row all -1, with the
    // last column alternating fastest.
    static SignMatrix dense(int n_psi) {
        SignMatrix S;
        int n = 1 << n_psi;
        S.rows.resize(static_cast<size_t>(n), std::vector<int>(static_cast<size_t>(n_psi), 1));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n_psi; ++j)
                S.rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = ((i >> (n_psi - 1 - j)) & 1) ? -1 : 1;
        return S;
    }
};

// Region k is the union of the base sets given by these sign-matrix rows.
struct RegionSpec {
    std::vector<std::vector<int>> regions;
    int n_regions() const { return static_cast<int>(regions.size()); }
};

struct NonsmoothModel {
    std::string name;
    std::shared_ptr<Arena> arena;
    int n_x = 0;
    int n_u = 0;
    int clock_index = -1;  // index of the clock state when time was autonomized

    std::vector<Expr> psi;                      // n_psi switching functions of x
    SignMatrix S;                               // empty for AP-direct models
    RegionSpec regions;
    std::vector<std::vector<Expr>> dynamics;    // per region: n_x exprs in (x,u)

    // Aizerman-Pyatnitskii systems: dynamics given directly in (x,u,alpha),
    // bypassing the Filippov multiplier construction.
    bool ap_direct = false;
    std::vector<Expr> ap_dynamics;              // n_x exprs in (x,u,alpha)

    std::vector<double> default_x0;

    int n_psi() const { return static_cast<int>(psi.size()); }
    int n_f() const {
        return ap_direct ? 0 : regions.n_regions();
    }
    int alpha_offset() const { return n_x + n_u; }
};

// ---------------------------------------------------------------------------
// Exact set-valued step oracle.
// ---------------------------------------------------------------------------
struct StepSelection {
    std::vector<double> alpha;      // 0.5 placeholder where set-valued
    std::vector<double> lambda_p;
    std::vector<double> lambda_n;
    std::vector<bool> alpha_free;   // true where psi_j == 0
};

inline StepSelection heaviside_oracle(std::span<const double> psi_values) {
    StepSelection s;
    size_t n = psi_values.size();
    s.alpha.resize(n);
    s.lambda_p.resize(n);
    s.lambda_n.resize(n);
    s.alpha_free.resize(n, false);
    for (size_t j = 0; j < n; ++j) {
        double p = psi_values[j];
        if (std::isnan(p)) throw std::invalid_argument("heaviside_oracle: NaN input");
        s.lambda_p[j] = p > 0 ? p : 0.0;
        s.lambda_n[j] = p < 0 ? -p : 0.0;
        if (p > 0) {
            s.alpha[j] = 1.0;
        } else if (p < 0) {
            s.alpha[j] = 0.0;
        } else {
            s.alpha[j] = 0.5;
            s.alpha_free[j] = true;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Region algebra on multiplier expressions built from step selections.
// ---------------------------------------------------------------------------
enum class RegionOp : uint8_t { Union, Intersect, Complement, Difference };

inline Expr region_algebra(RegionOp op, Expr a, Expr b = {}) {
    Arena& A = *a.arena;
    switch (op) {
        case RegionOp::Union: return A.add(a, b);
        case RegionOp::Intersect: return A.mul(a, b);
        case RegionOp::Complement: return A.sub(A.constant(1.0), a);
        case RegionOp::Difference: return A.sub(a, b);
    }
    throw std::logic_error("region_algebra: bad op");
}

// ---------------------------------------------------------------------------
// Structural validation. Returns a violation list; an empty list means the
// model satisfies all invariants. This never throws on bad models.
// ---------------------------------------------------------------------------
struct ModelViolation {
    std::string code;    // e.g. "duplicate row", "uncovered base set"
    std::string detail;
};

inline std::vector<ModelViolation> validate_model(const NonsmoothModel& m) {
    std::vector<ModelViolation> out;
    auto flag = [&](const std::string& code, const std::string& detail) {
        out.push_back(ModelViolation{code, detail});
    };

    const int n_psi = m.n_psi();
    if (!m.ap_direct) {
        if (m.S.n_rows() == 0) flag("empty sign matrix", "model declares no base sets");
        if (m.S.n_rows() > 0 && m.S.n_psi() != n_psi)
            flag("dimension mismatch", "sign matrix has " + std::to_string(m.S.n_psi()) +
                                            " columns, expected " + std::to_string(n_psi));
        for (size_t i = 0; i < m.S.rows.size(); ++i)
            for (int v : m.S.rows[i])
                if (v != 1 && v != -1)
                    flag("zero entry", "sign matrix row " + std::to_string(i) + " has entry " + std::to_string(v));
        if (n_psi < 31 && m.S.n_rows() > (1 << n_psi))
            flag("too many rows", "more rows than 2^n_psi");
        for (size_t i = 0; i < m.S.rows.size(); ++i)
            for (size_t k = i + 1; k < m.S.rows.size(); ++k)
                if (m.S.rows[i] == m.S.rows[k])
                    flag("duplicate row", "sign matrix rows " + std::to_string(i) + " and " + std::to_string(k));

        // Region cover: disjoint, nonempty, covering all rows.
        std::vector<int> owner(static_cast<size_t>(m.S.n_rows()), -1);
        for (size_t k = 0; k < m.regions.regions.size(); ++k) {
            if (m.regions.regions[k].empty()) flag("empty region", "region " + std::to_string(k));
            for (int r : m.regions.regions[k]) {
                if (r < 0 || r >= m.S.n_rows()) {
                    flag("bad row index", "region " + std::to_string(k) + " references row " + std::to_string(r));
                    continue;
                }
                if (owner[static_cast<size_t>(r)] >= 0)
                    flag("overlapping regions", "row " + std::to_string(r) + " in regions " +
                                                    std::to_string(owner[static_cast<size_t>(r)]) + " and " +
                                                    std::to_string(k));
                owner[static_cast<size_t>(r)] = static_cast<int>(k);
            }
        }
        for (size_t r = 0; r < owner.size(); ++r)
            if (owner[r] < 0) flag("uncovered base set", "sign matrix row " + std::to_string(r));

        if (static_cast<int>(m.dynamics.size()) != m.regions.n_regions())
            flag("dimension mismatch", "dynamics count != region count");
        for (size_t k = 0; k < m.dynamics.size(); ++k)
            if (static_cast<int>(m.dynamics[k].size()) != m.n_x)
                flag("dimension mismatch", "dynamics of region " + std::to_string(k) + " has wrong length");
    } else {
        if (static_cast<int>(m.ap_dynamics.size()) != m.n_x)
            flag("dimension mismatch", "AP dynamics have wrong length");
    }

    // Expression variable ranges and finiteness at a fixed pseudo-random point.
    std::mt19937 rng(0x5eedu);
    std::uniform_real_distribution<double> dist(-0.8, 0.9);
    std::vector<double> point(static_cast<size_t>(m.n_x + m.n_u + n_psi));
    for (auto& v : point) v = dist(rng);

    auto check_expr = [&](Expr e, int max_index, const std::string& what) {
        if (!e.valid()) {
            flag("invalid expression", what);
            return;
        }
        for (int v : m.arena->vars_of(e))
            if (v >= max_index)
                flag("undeclared variable", what + " references variable " + std::to_string(v));
        try {
            double val = eval_once(e, point);
            if (!std::isfinite(val)) flag("non-finite value", what);
        } catch (const std::exception& ex) {
            flag("evaluation failure", what + ": " + ex.what());
        }
    };

    for (size_t j = 0; j < m.psi.size(); ++j)
        check_expr(m.psi[j], m.n_x, "psi[" + std::to_string(j) + "]");
    if (!m.ap_direct) {
        for (size_t k = 0; k < m.dynamics.size(); ++k)
            for (size_t i = 0; i < m.dynamics[k].size(); ++i)
                check_expr(m.dynamics[k][i], m.n_x + m.n_u,
                           "f[" + std::to_string(k) + "][" + std::to_string(i) + "]");
    } else {
        for (size_t i = 0; i < m.ap_dynamics.size(); ++i)
            check_expr(m.ap_dynamics[i], m.n_x + m.n_u + n_psi, "f_ap[" + std::to_string(i) + "]");
    }
    return out;
}

}  // namespace fesd
