#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dgsr/error.hpp"

namespace dgsr {

/// Token kinds of the prefix-notation equation language.
enum class Op : std::uint8_t {
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Sin,
  Cos,
  Sqrt,
  Pow2,
  Pow3,
  Pow4,
  Pow5,
  Var,    // value = 1-based variable index
  Int,    // value = integer literal
  Const,  // numeric placeholder, bound at evaluation time
};

struct Token {
  Op op = Op::Var;
  int value = 0;

  constexpr int arity() const noexcept {
    switch (op) {
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Pow: return 2;
      case Op::Exp:
      case Op::Log:
      case Op::Sin:
      case Op::Cos:
      case Op::Sqrt:
      case Op::Pow2:
      case Op::Pow3:
      case Op::Pow4:
      case Op::Pow5: return 1;
      case Op::Var:
      case Op::Int:
      case Op::Const: return 0;
    }
    return 0;
  }

  /// Per-token weight of the complexity measure C(f).
  constexpr int complexity() const noexcept {
    switch (op) {
      case Op::Div: return 2;
      case Op::Sin:
      case Op::Cos: return 3;
      case Op::Exp:
      case Op::Log:
      case Op::Sqrt:
      case Op::Pow: return 4;
      default: return 1;
    }
  }

  constexpr bool is_terminal() const noexcept { return arity() == 0; }
  constexpr bool is_constant() const noexcept { return op == Op::Int || op == Op::Const; }
  constexpr bool is_trig() const noexcept { return op == Op::Sin || op == Op::Cos; }

  std::string name() const;

  friend constexpr bool operator==(const Token&, const Token&) = default;

  static constexpr Token var(int index) { return {Op::Var, index}; }
  static constexpr Token integer(int v) { return {Op::Int, v}; }
  static constexpr Token constant() { return {Op::Const, 0}; }
  static constexpr Token op_token(Op o) { return {o, 0}; }
};

/// Parses a single token name (`mul`, `x3`, `const`, `-1`, ...). Throws UnknownToken.
Token parse_token(std::string_view text);

using PrefixSequence = std::vector<Token>;

/// Whitespace-separated prefix text, e.g. "mul x1 x2".
std::string to_text(std::span<const Token> tokens);
PrefixSequence parse_text(std::string_view text);

/// Completeness counter after consuming all tokens: starts at 1, adds (arity - 1) per token.
/// Returns 0 exactly for complete sequences.
int open_slots(std::span<const Token> tokens);
bool is_complete(std::span<const Token> tokens);

/// Arity-checked expression tree. Nodes are stored in pre-order, so node i is
/// the i-th prefix token and node 0 is the root.
class ExprTree {
 public:
  struct Node {
    Token token;
    std::array<int, 2> children{-1, -1};
  };

  ExprTree() = default;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  /// Pre-order positions of constant placeholders (beta_0, beta_1, ...).
  const std::vector<int>& const_slots() const noexcept { return const_slots_; }

  /// One past the last pre-order index of the subtree rooted at i.
  int subtree_end(int i) const { return ends_[static_cast<std::size_t>(i)]; }

  PrefixSequence tokens() const;

  friend bool operator==(const ExprTree& a, const ExprTree& b) { return a.nodes_ == b.nodes_; }

 private:
  friend ExprTree parse_prefix(std::span<const Token> tokens);

  friend bool operator==(const Node& a, const Node& b) {
    return a.token == b.token && a.children == b.children;
  }

  std::vector<Node> nodes_;
  std::vector<int> ends_;
  std::vector<int> const_slots_;
};

/// Builds a tree from prefix tokens. Throws IncompleteSequence, ExtraTokens, UnknownToken.
ExprTree parse_prefix(std::span<const Token> tokens);
PrefixSequence to_prefix(const ExprTree& tree);

/// Row-wise evaluation of X (n x d). Returns nullopt when any output is NaN or
/// infinite. Throws ConstArityMismatch if consts does not match the slots.
std::optional<Eigen::VectorXd> evaluate(const ExprTree& tree, const Eigen::MatrixXd& X,
                                        std::span<const double> consts = {});

/// C(f): sum of per-token complexity weights.
int complexity(const ExprTree& tree);

/// Highest variable index used (0 if none).
int max_variable(const ExprTree& tree);

/// Human-readable, fully parenthesised infix rendering. Placeholders print as
/// their bound value when consts is provided, else as c0, c1, ...
std::string to_infix(const ExprTree& tree, std::span<const double> consts = {});

/// A tree with its constant placeholders bound.
struct Equation {
  ExprTree tree;
  std::vector<double> consts;
};

/// Parses conventional infix ("x1*x2^2/(3*x3)", "sin(1.5*x1)", implicit products
/// such as "x1 (x2 + x2)"). Integer numerals become integer literals, decimals
/// become bound constant placeholders; integer powers 2..5 use pow2..pow5.
Equation parse_infix(std::string_view text);

}  // namespace dgsr
