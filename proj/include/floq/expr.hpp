#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace floq::expr {

// Scalar expressions in the time variable t and named real parameters.
// Grammar (binding tightest last): '+' '-'  <  '*' '/'  <  unary '-'  <  '^'
// (right-associative), atoms are numbers, t, pi, e, parameter names, and the
// calls sin cos tan exp log sqrt abs heaviside. heaviside(x) is 1 for x >= 0
// and 0 otherwise; its argument must not involve parameters.

struct ExprError : std::runtime_error {
    std::size_t offset;  // byte offset into the parsed text
    ExprError(std::string msg, std::size_t off)
        : std::runtime_error(std::move(msg)), offset(off) {}
};
struct SyntaxError : ExprError {
    using ExprError::ExprError;
};
struct UnknownIdentifier : ExprError {
    std::string name;
    UnknownIdentifier(std::string msg, std::size_t off, std::string ident)
        : ExprError(std::move(msg), off), name(std::move(ident)) {}
};
struct NonDifferentiable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<const Node>;
}

class Expr {
public:
    /// Literal zero.
    Expr();

    static Expr parse(std::string_view text, const std::vector<std::string>& params);
    static Expr constant(double value);

    double eval(double t, std::span<const double> params) const;

    /// Symbolic derivative with respect to parameter j, with the usual
    /// simplifications (0*x, 1*x, x+0, literal folding) applied.
    Expr diff_param(int j) const;

    /// Text form that parses back to an expression with identical eval.
    std::string print() const;

    bool depends_on_t() const;
    bool depends_on_param(int j) const;
    bool is_literal() const;
    bool is_literal_zero() const;
    double literal_value() const;  // pre: is_literal()

private:
    detail::NodePtr root_;
    std::shared_ptr<const std::vector<std::string>> names_;
    Expr(detail::NodePtr root, std::shared_ptr<const std::vector<std::string>> names);
    friend class Parser;
};

}  // namespace floq::expr
