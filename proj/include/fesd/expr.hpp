#pragma once

// =============================================================================
// Scalar expression graphs with forward-mode differentiation.
//
// Expressions are hash-consed nodes in an Arena; an Expr is a cheap handle
// (arena pointer + node id). Evaluation is generic over the scalar type, so
// the same graph evaluates with double, Dual<double> (first derivatives) or
// Dual<Dual<double>> (second derivatives).
// =============================================================================

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace fesd {

// -----------------------------------------------------------------------------
// Dual numbers for forward-mode AD.
// -----------------------------------------------------------------------------

template <class T>
struct Dual {
    T v{};  // value
    T d{};  // directional derivative

    Dual() = default;
    Dual(T value) : v(value), d(T(0)) {}
    Dual(T value, T deriv) : v(value), d(deriv) {}
};

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
    T q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
}

using std::cos;
using std::exp;
using std::sin;
using std::sqrt;

template <class T> Dual<T> sin(const Dual<T>& a) { return {sin(a.v), cos(a.v) * a.d}; }
template <class T> Dual<T> cos(const Dual<T>& a) { return {cos(a.v), T(-1) * sin(a.v) * a.d}; }
template <class T> Dual<T> exp(const Dual<T>& a) { T e = exp(a.v); return {e, e * a.d}; }
template <class T> Dual<T> sqrt(const Dual<T>& a) {
    T r = sqrt(a.v);
    return {r, a.d / (T(2) * r)};
}

// min2/max2 pick a branch by value; differentiation through them is rejected
// at the bundle level, these exist so oracle-style graphs stay evaluable.
inline double min2(double a, double b) { return a < b ? a : b; }
inline double max2(double a, double b) { return a > b ? a : b; }
inline double scalar_value(double v) { return v; }
template <class T> double scalar_value(const Dual<T>& d) { return scalar_value(d.v); }
template <class T> Dual<T> min2(const Dual<T>& a, const Dual<T>& b) {
    return scalar_value(a.v) < scalar_value(b.v) ? a : b;
}
template <class T> Dual<T> max2(const Dual<T>& a, const Dual<T>& b) {
    return scalar_value(a.v) > scalar_value(b.v) ? a : b;
}

// -----------------------------------------------------------------------------
// Expression nodes.
// -----------------------------------------------------------------------------

enum class Op : uint8_t {
    Const,
    Var,
    Add,
    Sub,
    Mul,
    Div,
    Pow,   // integer exponent, evaluated by repeated multiplication
    Sin,
    Cos,
    Exp,
    Sqrt,
    Min2,
    Max2,
};

class Arena;

struct Expr {
    Arena* arena = nullptr;
    int32_t id = -1;

    bool valid() const { return arena != nullptr && id >= 0; }
};

class Arena {
public:
    struct Node {
        Op op;
        int32_t a = -1;
        int32_t b = -1;
        double c = 0.0;  // constant value, variable index, or integer exponent
    };

    Expr constant(double v) { return make(Op::Const, -1, -1, v); }

    Expr var(int index) {
        if (index < 0) throw std::invalid_argument("Arena::var: negative index");
        max_var_ = std::max(max_var_, index);
        return make(Op::Var, -1, -1, static_cast<double>(index));
    }

    Expr add(Expr a, Expr b) { return make(Op::Add, check(a), check(b), 0); }
    Expr sub(Expr a, Expr b) { return make(Op::Sub, check(a), check(b), 0); }
    Expr mul(Expr a, Expr b) { return make(Op::Mul, check(a), check(b), 0); }
    Expr div(Expr a, Expr b) { return make(Op::Div, check(a), check(b), 0); }

    Expr pow_int(Expr a, int n) {
        if (n < 0) return div(constant(1.0), pow_int(a, -n));
        return make(Op::Pow, check(a), -1, static_cast<double>(n));
    }

    Expr sin(Expr a) { return make(Op::Sin, check(a), -1, 0); }
    Expr cos(Expr a) { return make(Op::Cos, check(a), -1, 0); }
    Expr exp(Expr a) { return make(Op::Exp, check(a), -1, 0); }
    Expr sqrt(Expr a) { return make(Op::Sqrt, check(a), -1, 0); }
    Expr min2(Expr a, Expr b) { return make(Op::Min2, check(a), check(b), 0); }
    Expr max2(Expr a, Expr b) { return make(Op::Max2, check(a), check(b), 0); }

    const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }
    int max_var_index() const { return max_var_; }

    // Topological order of the subgraph under `root` (children precede parents;
    // node ids are already ordered that way, so this is the sorted reachable set).
    std::vector<int32_t> topo_order(Expr root) const {
        std::vector<int32_t> order;
        std::vector<char> seen(nodes_.size(), 0);
        collect(root.id, seen, order);
        std::sort(order.begin(), order.end());
        return order;
    }

    // Sorted unique variable indices referenced by `root`.
    std::vector<int> vars_of(Expr root) const {
        std::vector<int> vs;
        for (int32_t id : topo_order(root))
            if (nodes_[static_cast<size_t>(id)].op == Op::Var)
                vs.push_back(static_cast<int>(nodes_[static_cast<size_t>(id)].c));
        std::sort(vs.begin(), vs.end());
        vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
        return vs;
    }

    bool contains_nonsmooth(Expr root) const {
        for (int32_t id : topo_order(root)) {
            Op op = nodes_[static_cast<size_t>(id)].op;
            if (op == Op::Min2 || op == Op::Max2) return true;
        }
        return false;
    }

    // Rebuild `src_expr` (owned by `src`) in this arena, replacing variable i by
    // var_map[i]. Entries may be invalid to keep a variable unmapped only if the
    // variable does not occur. Used both for cloning across arenas and for
    // substituting stage expressions into model residuals.
    Expr import(const Arena& src, Expr src_expr, const std::vector<Expr>& var_map) {
        std::unordered_map<int32_t, int32_t> memo;
        return Expr{this, import_rec(src, src_expr.id, var_map, memo)};
    }

    // Substitution wholly inside this arena.
    Expr substitute(Expr e, const std::vector<Expr>& var_map) { return import(*this, e, var_map); }

private:
    int32_t check(Expr e) const {
        if (!e.valid() || e.arena != this) throw std::invalid_argument("Expr belongs to a different arena");
        return e.id;
    }

    Expr make(Op op, int32_t a, int32_t b, double c) {
        Key key{op, a, b, c};
        auto it = consed_.find(key);
        if (it != consed_.end()) return Expr{this, it->second};
        nodes_.push_back(Node{op, a, b, c});
        int32_t id = static_cast<int32_t>(nodes_.size() - 1);
        consed_.emplace(key, id);
        return Expr{this, id};
    }

    void collect(int32_t id, std::vector<char>& seen, std::vector<int32_t>& order) const {
        if (id < 0 || seen[static_cast<size_t>(id)]) return;
        seen[static_cast<size_t>(id)] = 1;
        const Node& n = nodes_[static_cast<size_t>(id)];
        collect(n.a, seen, order);
        collect(n.b, seen, order);
        order.push_back(id);
    }

    int32_t import_rec(const Arena& src, int32_t id, const std::vector<Expr>& var_map,
                       std::unordered_map<int32_t, int32_t>& memo) {
        auto it = memo.find(id);
        if (it != memo.end()) return it->second;
        const Node& n = src.node(id);
        int32_t out;
        if (n.op == Op::Var) {
            int vi = static_cast<int>(n.c);
            if (vi < static_cast<int>(var_map.size()) && var_map[static_cast<size_t>(vi)].valid()) {
                Expr m = var_map[static_cast<size_t>(vi)];
                if (m.arena != this) throw std::invalid_argument("var_map expression from wrong arena");
                out = m.id;
            } else {
                out = var(vi).id;
            }
        } else if (n.op == Op::Const) {
            out = constant(n.c).id;
        } else {
            int32_t a = n.a >= 0 ? import_rec(src, n.a, var_map, memo) : -1;
            int32_t b = n.b >= 0 ? import_rec(src, n.b, var_map, memo) : -1;
            out = make(n.op, a, b, n.c).id;
        }
        memo.emplace(id, out);
        return out;
    }

    struct Key {
        Op op;
        int32_t a, b;
        double c;
        bool operator==(const Key& o) const {
            return op == o.op && a == o.a && b == o.b &&
                   std::memcmp(&c, &o.c, sizeof(double)) == 0;
        }
    };
    struct KeyHash {
        size_t operator()(const Key& k) const {
            uint64_t bits;
            std::memcpy(&bits, &k.c, sizeof(double));
            uint64_t h = static_cast<uint64_t>(k.op);
            h = h * 1000003u ^ static_cast<uint64_t>(static_cast<uint32_t>(k.a));
            h = h * 1000003u ^ static_cast<uint64_t>(static_cast<uint32_t>(k.b));
            h = h * 1000003u ^ bits;
            return static_cast<size_t>(h ^ (h >> 32));
        }
    };

    std::vector<Node> nodes_;
    std::unordered_map<Key, int32_t, KeyHash> consed_;
    int max_var_ = -1;
};

// Generic single-expression evaluation. `values` is scratch storage indexed by
// node id; `order` must come from Arena::topo_order of the same root.
template <class T>
T eval_expr(const Arena& arena, const std::vector<int32_t>& order, int32_t root,
            std::span<const T> x, std::vector<T>& values) {
    if (values.size() < arena.size()) values.resize(arena.size());
    for (int32_t id : order) {
        const Arena::Node& n = arena.node(id);
        T r;
        switch (n.op) {
            case Op::Const: r = T(n.c); break;
            case Op::Var: {
                size_t vi = static_cast<size_t>(n.c);
                if (vi >= x.size()) throw std::out_of_range("eval: variable index out of range");
                r = x[vi];
                break;
            }
            case Op::Add: r = values[n.a] + values[n.b]; break;
            case Op::Sub: r = values[n.a] - values[n.b]; break;
            case Op::Mul: r = values[n.a] * values[n.b]; break;
            case Op::Div: r = values[n.a] / values[n.b]; break;
            case Op::Pow: {
                int e = static_cast<int>(n.c);
                T base = values[n.a];
                r = T(1.0);
                for (int k = 0; k < e; ++k) r = r * base;
                break;
            }
            case Op::Sin: r = sin(values[n.a]); break;
            case Op::Cos: r = cos(values[n.a]); break;
            case Op::Exp: r = exp(values[n.a]); break;
            case Op::Sqrt: r = sqrt(values[n.a]); break;
            case Op::Min2: r = min2(values[n.a], values[n.b]); break;
            case Op::Max2: r = max2(values[n.a], values[n.b]); break;
            default: throw std::logic_error("eval: bad op");
        }
        values[static_cast<size_t>(id)] = r;
    }
    return values[static_cast<size_t>(root)];
}

// Convenience one-off evaluation (builds the topological order each call).
inline double eval_once(Expr e, std::span<const double> x) {
    std::vector<double> scratch;
    auto order = e.arena->topo_order(e);
    return eval_expr<double>(*e.arena, order, e.id, x, scratch);
}

// -----------------------------------------------------------------------------
// Operator sugar for readable model construction.
// -----------------------------------------------------------------------------

inline Expr operator+(Expr a, Expr b) { return a.arena->add(a, b); }
inline Expr operator-(Expr a, Expr b) { return a.arena->sub(a, b); }
inline Expr operator*(Expr a, Expr b) { return a.arena->mul(a, b); }
inline Expr operator/(Expr a, Expr b) { return a.arena->div(a, b); }
inline Expr operator+(double a, Expr b) { return b.arena->add(b.arena->constant(a), b); }
inline Expr operator+(Expr a, double b) { return a.arena->add(a, a.arena->constant(b)); }
inline Expr operator-(double a, Expr b) { return b.arena->sub(b.arena->constant(a), b); }
inline Expr operator-(Expr a, double b) { return a.arena->sub(a, a.arena->constant(b)); }
inline Expr operator*(double a, Expr b) { return b.arena->mul(b.arena->constant(a), b); }
inline Expr operator*(Expr a, double b) { return a.arena->mul(a, a.arena->constant(b)); }
inline Expr operator/(double a, Expr b) { return b.arena->div(b.arena->constant(a), b); }
inline Expr operator/(Expr a, double b) { return a.arena->div(a, a.arena->constant(b)); }
inline Expr operator-(Expr a) { return a.arena->sub(a.arena->constant(0.0), a); }

// -----------------------------------------------------------------------------
// Residual bundles: a tagged list of expressions over a shared variable space.
// Indices [0, n_vars) are unknowns, [n_vars, n_vars + n_params) parameters.
// -----------------------------------------------------------------------------

enum class RowTag : uint8_t {
    Dynamics,
    Algebraic,
    Complementarity,
    Continuity,
    Equilibration,
};

struct EvalError : std::runtime_error {
    int component;
    explicit EvalError(int comp, const std::string& what)
        : std::runtime_error(what), component(comp) {}
};

class ResidualBundle {
public:
    ResidualBundle(std::shared_ptr<Arena> arena, int n_vars, int n_params)
        : arena_(std::move(arena)), n_vars_(n_vars), n_params_(n_params) {}

    void add_row(Expr e, RowTag tag) {
        if (e.arena != arena_.get()) throw std::invalid_argument("row from wrong arena");
        rows_.push_back(e);
        tags_.push_back(tag);
        finalized_ = false;
    }

    int rows() const { return static_cast<int>(rows_.size()); }
    int n_vars() const { return n_vars_; }
    int n_params() const { return n_params_; }
    Expr row(int i) const { return rows_[static_cast<size_t>(i)]; }
    RowTag tag(int i) const { return tags_[static_cast<size_t>(i)]; }
    const Arena& arena() const { return *arena_; }
    const std::shared_ptr<Arena>& arena_ptr() const { return arena_; }

    // Precomputes per-row evaluation orders and variable dependency lists.
    void finalize() const {
        if (finalized_) return;
        orders_.clear();
        row_vars_.clear();
        nonsmooth_.clear();
        orders_.reserve(rows_.size());
        row_vars_.reserve(rows_.size());
        for (const Expr& e : rows_) {
            orders_.push_back(arena_->topo_order(e));
            std::vector<int> vs = arena_->vars_of(e);
            if (!vs.empty() && vs.back() >= n_vars_ + n_params_)
                throw std::logic_error("bundle: variable index beyond declared counts");
            vs.erase(std::remove_if(vs.begin(), vs.end(), [&](int v) { return v >= n_vars_; }), vs.end());
            row_vars_.push_back(std::move(vs));
            nonsmooth_.push_back(arena_->contains_nonsmooth(e) ? 1 : 0);
        }
        finalized_ = true;
    }

    const std::vector<int>& row_var_indices(int i) const {
        finalize();
        return row_vars_[static_cast<size_t>(i)];
    }

    // Generic single-row evaluation over any scalar type (doubles, duals,
    // second-order duals). `x` must hold unknowns followed by parameters.
    template <class T>
    T eval_row(int i, std::span<const T> x) const {
        finalize();
        std::vector<T> scratch(arena_->size());
        return eval_expr<T>(*arena_, orders_[static_cast<size_t>(i)], rows_[static_cast<size_t>(i)].id,
                            x, scratch);
    }

    std::vector<double> eval(std::span<const double> vars, std::span<const double> params) const {
        check_dims(vars, params);
        finalize();
        std::vector<double> x = concat(vars, params);
        std::vector<double> scratch(arena_->size());
        std::vector<double> out(rows_.size());
        for (size_t i = 0; i < rows_.size(); ++i) {
            out[i] = eval_expr<double>(*arena_, orders_[i], rows_[i].id,
                                       std::span<const double>(x), scratch);
            if (!std::isfinite(out[i]))
                throw EvalError(static_cast<int>(i),
                                "non-finite residual in component " + std::to_string(i));
        }
        return out;
    }

    // Dense Jacobian with respect to the unknowns (not the parameters).
    // Rows containing min2/max2 are rejected.
    std::vector<std::vector<double>> jacobian(std::span<const double> vars,
                                              std::span<const double> params) const {
        check_dims(vars, params);
        finalize();
        std::vector<std::vector<double>> J(rows_.size(), std::vector<double>(static_cast<size_t>(n_vars_), 0.0));
        jacobian_into(vars, params, [&](int r, int c, double v) { J[static_cast<size_t>(r)][static_cast<size_t>(c)] = v; });
        return J;
    }

    // Sparse-aware Jacobian visitor: calls sink(row, col, value) for every
    // structurally nonzero entry.
    template <class Sink>
    void jacobian_into(std::span<const double> vars, std::span<const double> params, Sink&& sink) const {
        check_dims(vars, params);
        finalize();
        std::vector<Dual<double>> x(static_cast<size_t>(n_vars_ + n_params_));
        std::vector<double> xs = concat(vars, params);
        for (size_t i = 0; i < x.size(); ++i) x[i] = Dual<double>(xs[i]);
        std::vector<Dual<double>> scratch(arena_->size());
        for (size_t r = 0; r < rows_.size(); ++r) {
            if (nonsmooth_[r])
                throw EvalError(static_cast<int>(r), "cannot differentiate through min2/max2 in component " +
                                                         std::to_string(r));
            for (int v : row_vars_[r]) {
                x[static_cast<size_t>(v)].d = 1.0;
                Dual<double> val = eval_expr<Dual<double>>(*arena_, orders_[r], rows_[r].id,
                                                           std::span<const Dual<double>>(x), scratch);
                x[static_cast<size_t>(v)].d = 0.0;
                if (!std::isfinite(val.d))
                    throw EvalError(static_cast<int>(r), "non-finite derivative in component " +
                                                             std::to_string(r));
                sink(static_cast<int>(r), v, val.d);
            }
        }
    }

    // Derivatives with respect to a single parameter slot.
    std::vector<double> param_derivative(std::span<const double> vars, std::span<const double> params,
                                         int param_index) const {
        check_dims(vars, params);
        finalize();
        std::vector<Dual<double>> x(static_cast<size_t>(n_vars_ + n_params_));
        std::vector<double> xs = concat(vars, params);
        for (size_t i = 0; i < x.size(); ++i) x[i] = Dual<double>(xs[i]);
        x[static_cast<size_t>(n_vars_ + param_index)].d = 1.0;
        std::vector<Dual<double>> scratch(arena_->size());
        std::vector<double> out(rows_.size());
        for (size_t r = 0; r < rows_.size(); ++r)
            out[r] = eval_expr<Dual<double>>(*arena_, orders_[r], rows_[r].id,
                                             std::span<const Dual<double>>(x), scratch).d;
        return out;
    }

private:
    static std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
        std::vector<double> x;
        x.reserve(a.size() + b.size());
        x.insert(x.end(), a.begin(), a.end());
        x.insert(x.end(), b.begin(), b.end());
        return x;
    }

    void check_dims(std::span<const double> vars, std::span<const double> params) const {
        if (static_cast<int>(vars.size()) != n_vars_ || static_cast<int>(params.size()) != n_params_)
            throw std::invalid_argument("ResidualBundle: dimension mismatch");
    }

    std::shared_ptr<Arena> arena_;
    int n_vars_;
    int n_params_;
    std::vector<Expr> rows_;
    std::vector<RowTag> tags_;
    mutable bool finalized_ = false;
    mutable std::vector<std::vector<int32_t>> orders_;
    mutable std::vector<std::vector<int>> row_vars_;
    mutable std::vector<char> nonsmooth_;
};

}  // namespace fesd
