#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fesd/expr.hpp"
#include "fesd/parse.hpp"

using namespace fesd;
using Catch::Approx;

TEST_CASE("basic evaluation") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0), x1 = arena->var(1);

    ResidualBundle b(arena, 2, 0);
    b.add_row(x0 * x1, RowTag::Algebraic);

    std::vector<double> v{2.0, 3.0};
    auto out = b.eval(v, {});
    CHECK(out[0] == Approx(6.0));
}

TEST_CASE("sqrt evaluation") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0);
    ResidualBundle b(arena, 1, 0);
    b.add_row(arena->sqrt(x0), RowTag::Algebraic);
    std::vector<double> v{4.0};
    CHECK(b.eval(v, {})[0] == Approx(2.0));
}

TEST_CASE("smoothed C-function closed form") {
    // a + b - sqrt(a^2 + b^2 + 2*sigma) at (1,1,sigma=0) equals 2 - sqrt(2)
    auto arena = std::make_shared<Arena>();
    Expr a = arena->var(0), b = arena->var(1), sigma = arena->var(2);
    Expr phi = a + b - arena->sqrt(a * a + b * b + 2.0 * sigma);

    ResidualBundle rb(arena, 3, 0);
    rb.add_row(phi, RowTag::Complementarity);
    std::vector<double> v{1.0, 1.0, 0.0};
    CHECK(rb.eval(v, {})[0] == Approx(2.0 - std::sqrt(2.0)));

    // hand-differentiated Jacobian at (1,1,sigma=1): (0.5, 0.5, .)
    v[2] = 1.0;
    auto J = rb.jacobian(v, {});
    CHECK(J[0][0] == Approx(0.5));
    CHECK(J[0][1] == Approx(0.5));
}

TEST_CASE("derivatives of primitives") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0), x1 = arena->var(1);
    ResidualBundle b(arena, 2, 0);
    b.add_row(arena->sin(x0), RowTag::Algebraic);
    b.add_row(x0 * x1, RowTag::Algebraic);

    std::vector<double> at{0.0, 3.0};
    auto J = b.jacobian(at, {});
    CHECK(J[0][0] == Approx(1.0));  // d sin(x)/dx at 0

    std::vector<double> at2{2.0, 3.0};
    J = b.jacobian(at2, {});
    CHECK(J[1][0] == Approx(3.0));
    CHECK(J[1][1] == Approx(2.0));
}

TEST_CASE("dimension mismatch and NaN reporting") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0);
    ResidualBundle b(arena, 1, 0);
    b.add_row(x0 / x0, RowTag::Algebraic);

    std::vector<double> bad{1.0, 2.0};
    CHECK_THROWS_AS(b.eval(bad, {}), std::invalid_argument);

    std::vector<double> zero{0.0};
    CHECK_THROWS_AS(b.eval(zero, {}), EvalError);
}

TEST_CASE("min2/max2 evaluate but do not differentiate") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0), x1 = arena->var(1);
    ResidualBundle b(arena, 2, 0);
    b.add_row(arena->min2(x0, x1), RowTag::Algebraic);
    std::vector<double> v{2.0, -3.0};
    CHECK(b.eval(v, {})[0] == Approx(-3.0));
    CHECK_THROWS_AS(b.jacobian(v, {}), EvalError);
}

TEST_CASE("sqrt at zero rejected in jacobian") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0);
    ResidualBundle b(arena, 1, 0);
    b.add_row(arena->sqrt(x0), RowTag::Algebraic);
    std::vector<double> v{0.0};
    CHECK_THROWS_AS(b.jacobian(v, {}), EvalError);
}

namespace {

// Random smooth expression trees for the AD-vs-finite-difference property.
Expr random_expr(Arena& a, std::mt19937& rng, int n_vars, int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 8);
    std::uniform_real_distribution<double> cval(0.3, 2.0);
    std::uniform_int_distribution<int> vpick(0, n_vars - 1);
    switch (pick(rng)) {
        case 0: return a.constant(cval(rng));
        case 1: return a.var(vpick(rng));
        case 2: return a.add(random_expr(a, rng, n_vars, depth - 1), random_expr(a, rng, n_vars, depth - 1));
        case 3: return a.sub(random_expr(a, rng, n_vars, depth - 1), random_expr(a, rng, n_vars, depth - 1));
        case 4: return a.mul(random_expr(a, rng, n_vars, depth - 1), random_expr(a, rng, n_vars, depth - 1));
        case 5: return a.sin(random_expr(a, rng, n_vars, depth - 1));
        case 6: return a.cos(random_expr(a, rng, n_vars, depth - 1));
        case 7: return a.pow_int(random_expr(a, rng, n_vars, depth - 1), 2);
        default: {
            // keep sqrt arguments strictly positive
            Expr inner = random_expr(a, rng, n_vars, depth - 1);
            return a.sqrt(a.add(a.mul(inner, inner), a.constant(0.5)));
        }
    }
}

}  // namespace

TEST_CASE("jacobian matches central finite differences on random bundles") {
    std::mt19937 rng(20240517);
    std::uniform_real_distribution<double> xval(-1.5, 1.5);
    const double eps = 1e-6;

    for (int trial = 0; trial < 100; ++trial) {
        auto arena = std::make_shared<Arena>();
        int n_vars = 2 + trial % 4;
        ResidualBundle b(arena, n_vars, 0);
        int n_rows = 1 + trial % 3;
        for (int r = 0; r < n_rows; ++r) b.add_row(random_expr(*arena, rng, n_vars, 4), RowTag::Algebraic);

        std::vector<double> x(static_cast<size_t>(n_vars));
        for (auto& xi : x) xi = xval(rng);

        auto J = b.jacobian(x, {});
        for (int r = 0; r < n_rows; ++r) {
            for (int c = 0; c < n_vars; ++c) {
                auto xp = x, xm = x;
                xp[static_cast<size_t>(c)] += eps;
                xm[static_cast<size_t>(c)] -= eps;
                double fd = (b.eval(xp, {})[static_cast<size_t>(r)] - b.eval(xm, {})[static_cast<size_t>(r)]) / (2 * eps);
                double tol = 1e-6 * (1.0 + std::abs(J[static_cast<size_t>(r)][static_cast<size_t>(c)]));
                CHECK(std::abs(J[static_cast<size_t>(r)][static_cast<size_t>(c)] - fd) <= tol);
            }
        }
    }
}

TEST_CASE("evaluation is deterministic") {
    auto arena = std::make_shared<Arena>();
    Expr x0 = arena->var(0);
    Expr e = arena->sin(arena->mul(x0, arena->constant(3.7)));
    ResidualBundle b(arena, 1, 0);
    b.add_row(e, RowTag::Algebraic);
    std::vector<double> v{0.123456789};
    double r1 = b.eval(v, {})[0];
    double r2 = b.eval(v, {})[0];
    CHECK(std::memcmp(&r1, &r2, sizeof(double)) == 0);
}

TEST_CASE("hash consing deduplicates nodes") {
    Arena a;
    Expr x = a.var(0);
    Expr e1 = a.add(x, a.constant(1.0));
    Expr e2 = a.add(x, a.constant(1.0));
    CHECK(e1.id == e2.id);
}

TEST_CASE("parameters are separate from unknowns") {
    auto arena = std::make_shared<Arena>();
    Expr x = arena->var(0), p = arena->var(1);
    ResidualBundle b(arena, 1, 1);
    b.add_row(x * p, RowTag::Algebraic);
    std::vector<double> v{3.0}, q{5.0};
    CHECK(b.eval(v, q)[0] == Approx(15.0));
    auto J = b.jacobian(v, q);
    REQUIRE(J[0].size() == 1);
    CHECK(J[0][0] == Approx(5.0));
    auto dp = b.param_derivative(v, q, 0);
    CHECK(dp[0] == Approx(3.0));
}

TEST_CASE("infix parser round trip") {
    Arena a;
    VarLayout layout{2, 1, 0, 2, -1};
    InfixParser p(a, layout);

    Expr e = p.parse("x0 + 2*x1^2 - sin(u0)/ (1 + exp(-x0))");
    std::vector<double> v{0.4, -0.7, 0.3};
    double want = 0.4 + 2 * 0.49 - std::sin(0.3) / (1 + std::exp(-0.4));
    CHECK(eval_once(e, v) == Approx(want));

    std::string printed = to_infix(e, layout);
    Expr back = p.parse(printed);
    CHECK(eval_once(back, v) == Approx(eval_once(e, v)));
}

TEST_CASE("parser rejects malformed input") {
    Arena a;
    VarLayout layout{1, 0, 0, 1, -1};
    InfixParser p(a, layout);
    CHECK_THROWS_AS(p.parse("x0 +"), ParseError);
    CHECK_THROWS_AS(p.parse("x5"), ParseError);
    CHECK_THROWS_AS(p.parse("foo(x0)"), ParseError);
    CHECK_THROWS_AS(p.parse("x0 ^ x0"), ParseError);
    CHECK_THROWS_AS(p.parse("t"), ParseError);  // no clock state declared
}

TEST_CASE("import remaps variables across arenas") {
    Arena src;
    Expr e = src.add(src.var(0), src.mul(src.var(1), src.constant(2.0)));

    Arena dst;
    std::vector<Expr> map(2);
    map[0] = dst.var(5);
    map[1] = dst.add(dst.var(0), dst.var(1));  // substitute an expression
    Expr out = dst.import(src, e, map);

    std::vector<double> v{1.0, 2.0, 0, 0, 0, 10.0};
    CHECK(eval_once(out, v) == Approx(10.0 + 2.0 * 3.0));
}
