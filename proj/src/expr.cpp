#include "floq/expr.hpp"

#include <cassert>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace floq::expr {

namespace detail {

enum class Kind : unsigned char {
    Literal, Time, Param, ConstPi, ConstE,
    Neg, Add, Sub, Mul, Div, Pow, Call,
};

enum class Fn : unsigned char { Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Heaviside };

struct Node {
    Kind kind;
    double value = 0.0;  // Literal
    int param = -1;      // Param
    Fn fn = Fn::Sin;     // Call
    NodePtr a, b;
};

namespace {

NodePtr make(Node n) { return std::make_shared<const Node>(std::move(n)); }

NodePtr lit(double v) { return make({.kind = Kind::Literal, .value = v}); }

bool is_lit(const NodePtr& n, double v) {
    return n->kind == Kind::Literal && n->value == v;
}
bool is_lit(const NodePtr& n) { return n->kind == Kind::Literal; }

// Smart constructors fold literals and drop algebraic no-ops so that
// diff_param output stays readable.

NodePtr neg(NodePtr a) {
    if (is_lit(a)) return lit(-a->value);
    if (a->kind == Kind::Neg) return a->a;
    return make({.kind = Kind::Neg, .a = std::move(a)});
}

NodePtr add(NodePtr a, NodePtr b) {
    if (is_lit(a, 0.0)) return b;
    if (is_lit(b, 0.0)) return a;
    if (is_lit(a) && is_lit(b)) return lit(a->value + b->value);
    return make({.kind = Kind::Add, .a = std::move(a), .b = std::move(b)});
}

NodePtr sub(NodePtr a, NodePtr b) {
    if (is_lit(b, 0.0)) return a;
    if (is_lit(a) && is_lit(b)) return lit(a->value - b->value);
    if (is_lit(a, 0.0)) return neg(std::move(b));
    return make({.kind = Kind::Sub, .a = std::move(a), .b = std::move(b)});
}

NodePtr mul(NodePtr a, NodePtr b) {
    if (is_lit(a, 0.0) || is_lit(b, 0.0)) return lit(0.0);
    if (is_lit(a, 1.0)) return b;
    if (is_lit(b, 1.0)) return a;
    if (is_lit(a) && is_lit(b)) return lit(a->value * b->value);
    return make({.kind = Kind::Mul, .a = std::move(a), .b = std::move(b)});
}

NodePtr divn(NodePtr a, NodePtr b) {
    if (is_lit(a, 0.0)) return lit(0.0);
    if (is_lit(b, 1.0)) return a;
    if (is_lit(a) && is_lit(b) && b->value != 0.0) return lit(a->value / b->value);
    return make({.kind = Kind::Div, .a = std::move(a), .b = std::move(b)});
}

NodePtr pow_n(NodePtr a, NodePtr b) {
    if (is_lit(b, 1.0)) return a;
    if (is_lit(b, 0.0)) return lit(1.0);
    if (is_lit(a) && is_lit(b)) {
        double v = std::pow(a->value, b->value);
        if (std::isfinite(v)) return lit(v);
    }
    return make({.kind = Kind::Pow, .a = std::move(a), .b = std::move(b)});
}

NodePtr call(Fn fn, NodePtr a) {
    if (is_lit(a)) {
        double x = a->value, v = 0.0;
        switch (fn) {
            case Fn::Sin: v = std::sin(x); break;
            case Fn::Cos: v = std::cos(x); break;
            case Fn::Tan: v = std::tan(x); break;
            case Fn::Exp: v = std::exp(x); break;
            case Fn::Log: v = std::log(x); break;
            case Fn::Sqrt: v = std::sqrt(x); break;
            case Fn::Abs: v = std::fabs(x); break;
            case Fn::Heaviside: v = x >= 0.0 ? 1.0 : 0.0; break;
        }
        if (std::isfinite(v)) return lit(v);
    }
    return make({.kind = Kind::Call, .fn = fn, .a = std::move(a)});
}

bool subtree_has_param(const Node* n) {
    if (!n) return false;
    if (n->kind == Kind::Param) return true;
    return subtree_has_param(n->a.get()) || subtree_has_param(n->b.get());
}

bool subtree_has_param_j(const Node* n, int j) {
    if (!n) return false;
    if (n->kind == Kind::Param) return n->param == j;
    return subtree_has_param_j(n->a.get(), j) || subtree_has_param_j(n->b.get(), j);
}

bool subtree_has_time(const Node* n) {
    if (!n) return false;
    if (n->kind == Kind::Time) return true;
    return subtree_has_time(n->a.get()) || subtree_has_time(n->b.get());
}

double eval_node(const Node* n, double t, std::span<const double> k) {
    switch (n->kind) {
        case Kind::Literal: return n->value;
        case Kind::Time: return t;
        case Kind::Param: return k[static_cast<std::size_t>(n->param)];
        case Kind::ConstPi: return M_PI;
        case Kind::ConstE: return M_E;
        case Kind::Neg: return -eval_node(n->a.get(), t, k);
        case Kind::Add: return eval_node(n->a.get(), t, k) + eval_node(n->b.get(), t, k);
        case Kind::Sub: return eval_node(n->a.get(), t, k) - eval_node(n->b.get(), t, k);
        case Kind::Mul: return eval_node(n->a.get(), t, k) * eval_node(n->b.get(), t, k);
        case Kind::Div: return eval_node(n->a.get(), t, k) / eval_node(n->b.get(), t, k);
        case Kind::Pow:
            return std::pow(eval_node(n->a.get(), t, k), eval_node(n->b.get(), t, k));
        case Kind::Call: {
            double x = eval_node(n->a.get(), t, k);
            switch (n->fn) {
                case Fn::Sin: return std::sin(x);
                case Fn::Cos: return std::cos(x);
                case Fn::Tan: return std::tan(x);
                case Fn::Exp: return std::exp(x);
                case Fn::Log: return std::log(x);
                case Fn::Sqrt: return std::sqrt(x);
                case Fn::Abs: return std::fabs(x);
                case Fn::Heaviside: return x >= 0.0 ? 1.0 : 0.0;
            }
        }
    }
    return 0.0;
}

NodePtr diff_node(const NodePtr& n, int j) {
    switch (n->kind) {
        case Kind::Literal:
        case Kind::Time:
        case Kind::ConstPi:
        case Kind::ConstE:
            return lit(0.0);
        case Kind::Param:
            return lit(n->param == j ? 1.0 : 0.0);
        case Kind::Neg:
            return neg(diff_node(n->a, j));
        case Kind::Add:
            return add(diff_node(n->a, j), diff_node(n->b, j));
        case Kind::Sub:
            return sub(diff_node(n->a, j), diff_node(n->b, j));
        case Kind::Mul:
            return add(mul(diff_node(n->a, j), n->b), mul(n->a, diff_node(n->b, j)));
        case Kind::Div:
            return divn(sub(mul(diff_node(n->a, j), n->b), mul(n->a, diff_node(n->b, j))),
                        pow_n(n->b, lit(2.0)));
        case Kind::Pow: {
            NodePtr da = diff_node(n->a, j);
            if (!subtree_has_param_j(n->b.get(), j)) {
                // d(a^b) = b * a^(b-1) * a' when b is constant in K_j
                return mul(mul(n->b, pow_n(n->a, sub(n->b, lit(1.0)))), da);
            }
            NodePtr db = diff_node(n->b, j);
            // a^b * (b' log a + b a'/a)
            return mul(make({.kind = Kind::Pow, .a = n->a, .b = n->b}),
                       add(mul(db, call(Fn::Log, n->a)), mul(n->b, divn(da, n->a))));
        }
        case Kind::Call: {
            if (n->fn == Fn::Heaviside) {
                if (subtree_has_param_j(n->a.get(), j))
                    throw NonDifferentiable(
                        "heaviside argument depends on a parameter");
                return lit(0.0);
            }
            NodePtr da = diff_node(n->a, j);
            if (is_lit(da, 0.0)) return lit(0.0);
            NodePtr inner;
            switch (n->fn) {
                case Fn::Sin: inner = call(Fn::Cos, n->a); break;
                case Fn::Cos: inner = neg(call(Fn::Sin, n->a)); break;
                case Fn::Tan:
                    inner = divn(lit(1.0), pow_n(call(Fn::Cos, n->a), lit(2.0)));
                    break;
                case Fn::Exp: inner = make({.kind = Kind::Call, .fn = Fn::Exp, .a = n->a}); break;
                case Fn::Log: inner = divn(lit(1.0), n->a); break;
                case Fn::Sqrt:
                    inner = divn(lit(1.0), mul(lit(2.0), call(Fn::Sqrt, n->a)));
                    break;
                case Fn::Abs: inner = divn(n->a, call(Fn::Abs, n->a)); break;
                case Fn::Heaviside: break;  // handled above
            }
            return mul(inner, da);
        }
    }
    return lit(0.0);
}

int precedence(const Node* n) {
    switch (n->kind) {
        case Kind::Add:
        case Kind::Sub: return 1;
        case Kind::Mul:
        case Kind::Div: return 2;
        case Kind::Neg: return 3;
        case Kind::Pow: return 4;
        case Kind::Literal: return n->value < 0.0 ? 3 : 5;
        default: return 5;
    }
}

const char* fn_name(Fn f) {
    switch (f) {
        case Fn::Sin: return "sin";
        case Fn::Cos: return "cos";
        case Fn::Tan: return "tan";
        case Fn::Exp: return "exp";
        case Fn::Log: return "log";
        case Fn::Sqrt: return "sqrt";
        case Fn::Abs: return "abs";
        case Fn::Heaviside: return "heaviside";
    }
    return "?";
}

void print_node(const Node* n, const std::vector<std::string>* names, std::string& out);

void print_child(const Node* c, int min_prec, const std::vector<std::string>* names,
                 std::string& out) {
    if (precedence(c) < min_prec) {
        out += '(';
        print_node(c, names, out);
        out += ')';
    } else {
        print_node(c, names, out);
    }
}

void print_node(const Node* n, const std::vector<std::string>* names, std::string& out) {
    switch (n->kind) {
        case Kind::Literal: {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", n->value);
            out += buf;
            return;
        }
        case Kind::Time: out += 't'; return;
        case Kind::ConstPi: out += "pi"; return;
        case Kind::ConstE: out += 'e'; return;
        case Kind::Param:
            if (names && n->param >= 0 && n->param < static_cast<int>(names->size()))
                out += (*names)[static_cast<std::size_t>(n->param)];
            else
                out += "k" + std::to_string(n->param);
            return;
        case Kind::Neg:
            out += '-';
            print_child(n->a.get(), 3, names, out);
            return;
        case Kind::Add:
            print_child(n->a.get(), 1, names, out);
            out += '+';
            print_child(n->b.get(), 2, names, out);  // keep reparse left-assoc exact
            return;
        case Kind::Sub:
            print_child(n->a.get(), 1, names, out);
            out += '-';
            print_child(n->b.get(), 2, names, out);  // a-(b+c) needs parens
            return;
        case Kind::Mul:
            print_child(n->a.get(), 2, names, out);
            out += '*';
            print_child(n->b.get(), 3, names, out);  // keep reparse left-assoc exact
            return;
        case Kind::Div:
            print_child(n->a.get(), 2, names, out);
            out += '/';
            print_child(n->b.get(), 3, names, out);  // a/(b*c) needs parens
            return;
        case Kind::Pow:
            print_child(n->a.get(), 5, names, out);  // base is an atom or wrapped
            out += '^';
            print_child(n->b.get(), 3, names, out);  // exponent may be unary '-'
            return;
        case Kind::Call:
            out += fn_name(n->fn);
            out += '(';
            print_node(n->a.get(), names, out);
            out += ')';
            return;
    }
}

}  // namespace
}  // namespace detail

using detail::Fn;
using detail::Kind;
using detail::Node;
using detail::NodePtr;

// ----------------------------------------------------------------- parser --

class Parser {
public:
    Parser(std::string_view text, const std::vector<std::string>& params)
        : text_(text), params_(params) {}

    NodePtr run() {
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ != text_.size())
            throw SyntaxError("unexpected character '" + std::string(1, text_[pos_]) +
                                  "' at offset " + std::to_string(pos_),
                              pos_);
        return e;
    }

private:
    std::string_view text_;
    const std::vector<std::string>& params_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() &&
               (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
                text_[pos_] == '\r'))
            ++pos_;
    }

    bool peek(char c) {
        skip_ws();
        return pos_ < text_.size() && text_[pos_] == c;
    }

    bool accept(char c) {
        if (peek(c)) {
            ++pos_;
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) {
        throw SyntaxError(what + " at offset " + std::to_string(pos_), pos_);
    }

    // Nodes are built through the folding constructors, so literal-only
    // subtrees collapse at parse time.
    NodePtr parse_expr() {
        NodePtr a = parse_term();
        for (;;) {
            if (accept('+'))
                a = detail::add(a, parse_term());
            else if (accept('-'))
                a = detail::sub(a, parse_term());
            else
                return a;
        }
    }

    NodePtr parse_term() {
        NodePtr a = parse_unary();
        for (;;) {
            if (accept('*'))
                a = detail::mul(a, parse_unary());
            else if (accept('/'))
                a = detail::divn(a, parse_unary());
            else
                return a;
        }
    }

    // Unary minus binds looser than '^': -x^2 is -(x^2).
    NodePtr parse_unary() {
        if (accept('-')) return detail::neg(parse_unary());
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_atom();
        if (accept('^')) return detail::pow_n(base, parse_unary());
        return base;
    }

    NodePtr parse_atom() {
        skip_ws();
        if (pos_ >= text_.size()) fail("expected expression");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            if (!accept(')')) fail("expected ')'");
            return e;
        }
        if ((c >= '0' && c <= '9') || c == '.') return parse_number();
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_')
            return parse_ident();
        fail("expected expression");
    }

    NodePtr parse_number() {
        const char* begin = text_.data() + pos_;
        const char* end = text_.data() + text_.size();
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(begin, end, v);
        if (ec != std::errc() || ptr == begin) fail("malformed number");
        pos_ = static_cast<std::size_t>(ptr - text_.data());
        return detail::lit(v);
    }

    NodePtr parse_ident() {
        std::size_t start = pos_;
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                (c >= '0' && c <= '9') || c == '_')
                ++pos_;
            else
                break;
        }
        std::string name(text_.substr(start, pos_ - start));
        if (peek('(')) {
            Fn fn;
            if (name == "sin") fn = Fn::Sin;
            else if (name == "cos") fn = Fn::Cos;
            else if (name == "tan") fn = Fn::Tan;
            else if (name == "exp") fn = Fn::Exp;
            else if (name == "log") fn = Fn::Log;
            else if (name == "sqrt") fn = Fn::Sqrt;
            else if (name == "abs") fn = Fn::Abs;
            else if (name == "heaviside") fn = Fn::Heaviside;
            else
                throw UnknownIdentifier("unknown function '" + name + "' at offset " +
                                            std::to_string(start),
                                        start, name);
            ++pos_;  // '('
            NodePtr arg = parse_expr();
            if (!accept(')')) fail("expected ')'");
            if (fn == Fn::Heaviside && detail::subtree_has_param(arg.get()))
                throw SyntaxError(
                    "heaviside argument must not depend on parameters (offset " +
                        std::to_string(start) + ")",
                    start);
            return detail::call(fn, arg);
        }
        if (name == "t") return detail::make({.kind = Kind::Time});
        if (name == "pi") return detail::make({.kind = Kind::ConstPi});
        if (name == "e") return detail::make({.kind = Kind::ConstE});
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i] == name)
                return detail::make({.kind = Kind::Param, .param = static_cast<int>(i)});
        for (const char* f : {"sin", "cos", "tan", "exp", "log", "sqrt", "abs",
                              "heaviside"})
            if (name == f) fail("expected '(' after function name '" + name + "'");
        throw UnknownIdentifier(
            "unknown identifier '" + name + "' at offset " + std::to_string(start),
            start, name);
    }
};

// ------------------------------------------------------------------- Expr --

Expr::Expr() : root_(detail::lit(0.0)), names_() {}

Expr::Expr(NodePtr root, std::shared_ptr<const std::vector<std::string>> names)
    : root_(std::move(root)), names_(std::move(names)) {}

Expr Expr::parse(std::string_view text, const std::vector<std::string>& params) {
    Parser p(text, params);
    return Expr(p.run(), std::make_shared<const std::vector<std::string>>(params));
}

Expr Expr::constant(double value) { return Expr(detail::lit(value), nullptr); }

double Expr::eval(double t, std::span<const double> params) const {
    return detail::eval_node(root_.get(), t, params);
}

Expr Expr::diff_param(int j) const { return Expr(detail::diff_node(root_, j), names_); }

std::string Expr::print() const {
    std::string out;
    detail::print_node(root_.get(), names_.get(), out);
    return out;
}

bool Expr::depends_on_t() const { return detail::subtree_has_time(root_.get()); }

bool Expr::depends_on_param(int j) const {
    return detail::subtree_has_param_j(root_.get(), j);
}

bool Expr::is_literal() const { return root_->kind == Kind::Literal; }

bool Expr::is_literal_zero() const {
    return root_->kind == Kind::Literal && root_->value == 0.0;
}

double Expr::literal_value() const {
    assert(is_literal());
    return root_->value;
}

}  // namespace floq::expr
