#pragma once

// Butcher tableaus for the collocation families used by the discretization:
// Radau IIA (orders 1,3,5,7) and Gauss-Legendre (orders 2,4,6,8). Nodes are
// computed at startup from Legendre polynomial roots with Newton iterations
// to 1e-15; the A and b coefficients follow from exact integration of the
// Lagrange basis, so no long decimal literals are transcribed.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fesd {

enum class RkFamily : uint8_t { RadauIIA, GaussLegendre, Explicit };

struct ButcherTableau {
    RkFamily family = RkFamily::RadauIIA;
    int n_s = 1;
    int order = 1;
    bool c_last_is_one = true;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::VectorXd c;
    // monomial coefficients of the Lagrange basis polynomials on the nodes c
    // (ell[j][m] is the coefficient of t^m); used for dense output.
    std::vector<std::vector<double>> ell;
};

namespace detail {

// Legendre P_n and its derivative on [-1, 1].
inline std::pair<double, double> legendre(int n, double x) {
    double p0 = 1.0, p1 = x;
    if (n == 0) return {1.0, 0.0};
    for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1.0);
    return {p1, dp};
}

// Roots of f on (-1, 1) found by sign-change scan + bisection + Newton polish.
inline std::vector<double> roots_in_open_interval(const std::function<double(double)>& f,
                                                  const std::function<double(double)>& df,
                                                  int expected) {
    std::vector<double> roots;
    const int grid = 2000;
    double prev_x = -1.0 + 1e-12, prev_f = f(prev_x);
    for (int i = 1; i <= grid; ++i) {
        double x = -1.0 + 2.0 * i / grid - (i == grid ? 1e-12 : 0.0);
        double fx = f(x);
        if ((prev_f <= 0) != (fx <= 0)) {
            double lo = prev_x, hi = x;
            for (int it = 0; it < 80; ++it) {
                double mid = 0.5 * (lo + hi);
                if ((f(lo) <= 0) == (f(mid) <= 0)) lo = mid;
                else hi = mid;
            }
            double r = 0.5 * (lo + hi);
            for (int it = 0; it < 50; ++it) {
                double step = f(r) / df(r);
                r -= step;
                if (std::abs(step) < 1e-15) break;
            }
            roots.push_back(r);
        }
        prev_x = x;
        prev_f = fx;
    }
    if (static_cast<int>(roots.size()) != expected)
        throw std::runtime_error("tableau: node search found " + std::to_string(roots.size()) +
                                 " roots, expected " + std::to_string(expected));
    return roots;
}

// Monomial coefficients of the Lagrange basis for the given nodes.
inline std::vector<std::vector<double>> lagrange_monomials(const Eigen::VectorXd& c) {
    int n = static_cast<int>(c.size());
    std::vector<std::vector<double>> ell(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        std::vector<double> poly{1.0};
        double denom = 1.0;
        for (int k = 0; k < n; ++k) {
            if (k == j) continue;
            // multiply poly by (t - c_k)
            std::vector<double> next(poly.size() + 1, 0.0);
            for (size_t m = 0; m < poly.size(); ++m) {
                next[m + 1] += poly[m];
                next[m] -= c(k) * poly[m];
            }
            poly = std::move(next);
            denom *= c(j) - c(k);
        }
        for (auto& v : poly) v /= denom;
        ell[static_cast<size_t>(j)] = std::move(poly);
    }
    return ell;
}

inline double integrate_monomials(const std::vector<double>& poly, double upper) {
    double acc = 0.0, power = upper;
    for (size_t m = 0; m < poly.size(); ++m) {
        acc += poly[m] * power / static_cast<double>(m + 1);
        power *= upper;
    }
    return acc;
}

}  // namespace detail

inline ButcherTableau tableau(RkFamily family, int n_s) {
    if (n_s < 1 || n_s > 4)
        throw std::invalid_argument("tableau: supported stage counts are 1..4");
    ButcherTableau t;
    t.family = family;
    t.n_s = n_s;
    t.c.resize(n_s);

    if (family == RkFamily::GaussLegendre) {
        auto f = [&](double x) { return detail::legendre(n_s, x).first; };
        auto df = [&](double x) { return detail::legendre(n_s, x).second; };
        auto roots = detail::roots_in_open_interval(f, df, n_s);
        for (int i = 0; i < n_s; ++i) t.c(i) = 0.5 * (roots[static_cast<size_t>(i)] + 1.0);
        t.order = 2 * n_s;
    } else if (family == RkFamily::RadauIIA) {
        if (n_s == 1) {
            t.c(0) = 1.0;
        } else {
            // interior nodes: roots of P_{s-1}(x) - P_s(x) on (-1, 1)
            auto f = [&](double x) {
                return detail::legendre(n_s - 1, x).first - detail::legendre(n_s, x).first;
            };
            auto df = [&](double x) {
                return detail::legendre(n_s - 1, x).second - detail::legendre(n_s, x).second;
            };
            auto roots = detail::roots_in_open_interval(f, df, n_s - 1);
            for (int i = 0; i < n_s - 1; ++i) t.c(i) = 0.5 * (roots[static_cast<size_t>(i)] + 1.0);
            t.c(n_s - 1) = 1.0;
        }
        t.order = 2 * n_s - 1;
    } else {
        throw std::invalid_argument("tableau: explicit families are not provided");
    }

    t.ell = detail::lagrange_monomials(t.c);
    t.A.resize(n_s, n_s);
    t.b.resize(n_s);
    for (int j = 0; j < n_s; ++j) {
        t.b(j) = detail::integrate_monomials(t.ell[static_cast<size_t>(j)], 1.0);
        for (int i = 0; i < n_s; ++i)
            t.A(i, j) = detail::integrate_monomials(t.ell[static_cast<size_t>(j)], t.c(i));
    }
    t.c_last_is_one = std::abs(t.c(n_s - 1) - 1.0) < 1e-12;
    return t;
}

inline ButcherTableau tableau(const std::string& family, int n_s) {
    if (family == "radau-iia" || family == "radau" || family == "radauiia")
        return tableau(RkFamily::RadauIIA, n_s);
    if (family == "gauss-legendre" || family == "gauss" || family == "gl")
        return tableau(RkFamily::GaussLegendre, n_s);
    throw std::invalid_argument("tableau: unknown family '" + family + "'");
}

}  // namespace fesd
