#pragma once

// Small infix expression parser used by the JSON model format and the OCP
// specs. Identifiers: x0..x{n_x-1}, u0..u{n_u-1}, t (the clock state).
// Operators: + - * / ^ (integer exponents). Functions: sin cos exp sqrt.

#include <cctype>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "fesd/expr.hpp"

namespace fesd {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Maps parsed identifiers to variable indices. `t_index < 0` rejects `t`.
struct VarLayout {
    int n_x = 0;
    int n_u = 0;
    int x_offset = 0;
    int u_offset = 0;   // typically n_x
    int t_index = -1;   // index of the clock state, if the model has one
};

class InfixParser {
public:
    InfixParser(Arena& arena, VarLayout layout) : arena_(arena), layout_(layout) {}

    Expr parse(const std::string& text) {
        src_ = text;
        pos_ = 0;
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    Expr parse_sum() {
        skip_ws();
        bool neg = false;
        if (peek() == '+' || peek() == '-') neg = (get() == '-');
        Expr lhs = parse_term();
        if (neg) lhs = arena_.sub(arena_.constant(0.0), lhs);
        for (;;) {
            skip_ws();
            char c = peek();
            if (c == '+') {
                get();
                lhs = arena_.add(lhs, parse_term());
            } else if (c == '-') {
                get();
                lhs = arena_.sub(lhs, parse_term());
            } else {
                return lhs;
            }
        }
    }

    Expr parse_term() {
        Expr lhs = parse_power();
        for (;;) {
            skip_ws();
            char c = peek();
            if (c == '*') {
                get();
                lhs = arena_.mul(lhs, parse_power());
            } else if (c == '/') {
                get();
                lhs = arena_.div(lhs, parse_power());
            } else {
                return lhs;
            }
        }
    }

    Expr parse_power() {
        Expr base = parse_atom();
        skip_ws();
        if (peek() == '^') {
            get();
            skip_ws();
            bool neg = false;
            if (peek() == '+' || peek() == '-') neg = (get() == '-');
            std::string digits;
            while (std::isdigit(static_cast<unsigned char>(peek()))) digits.push_back(get());
            if (digits.empty()) fail("exponent must be an integer literal");
            int e = std::stoi(digits);
            return arena_.pow_int(base, neg ? -e : e);
        }
        return base;
    }

    Expr parse_atom() {
        skip_ws();
        char c = peek();
        if (c == '(') {
            get();
            Expr e = parse_sum();
            skip_ws();
            if (get() != ')') fail("expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
        fail("unexpected character");
        return {};
    }

    Expr parse_number() {
        size_t start = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.') get();
        if (peek() == 'e' || peek() == 'E') {
            get();
            if (peek() == '+' || peek() == '-') get();
            while (std::isdigit(static_cast<unsigned char>(peek()))) get();
        }
        try {
            return arena_.constant(std::stod(src_.substr(start, pos_ - start)));
        } catch (const std::exception&) {
            fail("bad numeric literal");
        }
        return {};
    }

    Expr parse_ident() {
        size_t start = pos_;
        while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') get();
        std::string name = src_.substr(start, pos_ - start);
        if (name == "sin" || name == "cos" || name == "exp" || name == "sqrt") {
            skip_ws();
            if (get() != '(') fail("expected '(' after function name");
            Expr arg = parse_sum();
            skip_ws();
            if (get() != ')') fail("expected ')'");
            if (name == "sin") return arena_.sin(arg);
            if (name == "cos") return arena_.cos(arg);
            if (name == "exp") return arena_.exp(arg);
            return arena_.sqrt(arg);
        }
        if (name == "t") {
            if (layout_.t_index < 0) fail("'t' is not available in this context");
            return arena_.var(layout_.t_index);
        }
        if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'u')) {
            for (size_t i = 1; i < name.size(); ++i)
                if (!std::isdigit(static_cast<unsigned char>(name[i]))) fail("unknown identifier '" + name + "'");
            int k = std::stoi(name.substr(1));
            if (name[0] == 'x') {
                if (k >= layout_.n_x) fail("state index out of range in '" + name + "'");
                return arena_.var(layout_.x_offset + k);
            }
            if (k >= layout_.n_u) fail("control index out of range in '" + name + "'");
            return arena_.var(layout_.u_offset + k);
        }
        fail("unknown identifier '" + name + "'");
        return {};
    }

    char peek() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }
    char get() { return pos_ < src_.size() ? src_[pos_++] : '\0'; }
    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    [[noreturn]] void fail(const std::string& msg) const {
        std::ostringstream os;
        os << "parse error at position " << pos_ << ": " << msg << " in \"" << src_ << "\"";
        throw ParseError(os.str());
    }

    Arena& arena_;
    VarLayout layout_;
    std::string src_;
    size_t pos_ = 0;
};

// Renders an expression back to parseable infix form. The layout maps variable
// indices back to x/u/t names; parsing the output reproduces an expression
// with identical evaluation.
inline std::string to_infix(Expr e, const VarLayout& layout) {
    const Arena& A = *e.arena;
    std::function<std::string(int32_t)> rec = [&](int32_t id) -> std::string {
        const Arena::Node& n = A.node(id);
        std::ostringstream os;
        switch (n.op) {
            case Op::Const:
                os.precision(17);
                os << n.c;
                return os.str();
            case Op::Var: {
                int vi = static_cast<int>(n.c);
                if (vi == layout.t_index) return "t";
                if (vi >= layout.u_offset && vi < layout.u_offset + layout.n_u)
                    return "u" + std::to_string(vi - layout.u_offset);
                return "x" + std::to_string(vi - layout.x_offset);
            }
            case Op::Add: return "(" + rec(n.a) + " + " + rec(n.b) + ")";
            case Op::Sub: return "(" + rec(n.a) + " - " + rec(n.b) + ")";
            case Op::Mul: return "(" + rec(n.a) + " * " + rec(n.b) + ")";
            case Op::Div: return "(" + rec(n.a) + " / " + rec(n.b) + ")";
            case Op::Pow: return "(" + rec(n.a) + ")^" + std::to_string(static_cast<int>(n.c));
            case Op::Sin: return "sin(" + rec(n.a) + ")";
            case Op::Cos: return "cos(" + rec(n.a) + ")";
            case Op::Exp: return "exp(" + rec(n.a) + ")";
            case Op::Sqrt: return "sqrt(" + rec(n.a) + ")";
            default: throw std::logic_error("to_infix: min2/max2 have no infix form");
        }
    };
    return rec(e.id);
}

}  // namespace fesd
