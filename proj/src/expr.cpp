#include "dgsr/expr.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dgsr {

namespace {

struct OpName {
  Op op;
  std::string_view name;
};

constexpr std::array<OpName, 14> kOpNames{{
    {Op::Add, "add"},
    {Op::Sub, "sub"},
    {Op::Mul, "mul"},
    {Op::Div, "div"},
    {Op::Pow, "pow"},
    {Op::Exp, "exp"},
    {Op::Log, "log"},
    {Op::Sin, "sin"},
    {Op::Cos, "cos"},
    {Op::Sqrt, "sqrt"},
    {Op::Pow2, "pow2"},
    {Op::Pow3, "pow3"},
    {Op::Pow4, "pow4"},
    {Op::Pow5, "pow5"},
}};

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

}  // namespace

std::string Token::name() const {
  switch (op) {
    case Op::Var: return "x" + std::to_string(value);
    case Op::Int: return std::to_string(value);
    case Op::Const: return "const";
    default:
      for (const auto& e : kOpNames)
        if (e.op == op) return std::string(e.name);
  }
  return "?";
}

Token parse_token(std::string_view text) {
  for (const auto& e : kOpNames)
    if (e.name == text) return Token::op_token(e.op);
  if (text == "+") return Token::op_token(Op::Add);
  if (text == "-" || text == "−") return Token::op_token(Op::Sub);
  if (text == "*" || text == "×") return Token::op_token(Op::Mul);
  if (text == "/" || text == "÷") return Token::op_token(Op::Div);
  if (text == "^") return Token::op_token(Op::Pow);
  if (text == "const" || text == "c") return Token::constant();
  if (text.size() >= 2 && text[0] == 'x') {
    int idx = 0;
    if (parse_int(text.substr(1), idx) && idx >= 1 && idx <= 64) return Token::var(idx);
  }
  int v = 0;
  if (parse_int(text, v)) return Token::integer(v);
  throw Error(Errc::UnknownToken, "unknown token '" + std::string(text) + "'");
}

std::string to_text(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].name();
  }
  return out;
}

PrefixSequence parse_text(std::string_view text) {
  PrefixSequence out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(parse_token(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

int open_slots(std::span<const Token> tokens) {
  int counter = 1;
  for (const auto& t : tokens) counter += t.arity() - 1;
  return counter;
}

bool is_complete(std::span<const Token> tokens) {
  if (tokens.empty()) return false;
  int counter = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (counter <= 0) return false;
    counter += tokens[i].arity() - 1;
  }
  return counter == 0;
}

PrefixSequence ExprTree::tokens() const {
  PrefixSequence out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.token);
  return out;
}

ExprTree parse_prefix(std::span<const Token> tokens) {
  if (tokens.empty()) throw Error(Errc::IncompleteSequence, "empty token sequence");
  ExprTree t;
  const auto n = tokens.size();
  t.nodes_.resize(n);
  t.ends_.assign(n, 0);

  // Stack of (node index, children attached so far).
  std::vector<std::pair<int, int>> stack;
  stack.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Token tok = tokens[i];
    if (i > 0 && stack.empty())
      throw Error(Errc::ExtraTokens, "sequence complete before token " + std::to_string(i));
    auto& node = t.nodes_[i];
    node.token = tok;
    if (tok.op == Op::Const) t.const_slots_.push_back(static_cast<int>(i));
    if (!stack.empty()) {
      auto& [parent, filled] = stack.back();
      t.nodes_[static_cast<std::size_t>(parent)].children[static_cast<std::size_t>(filled)] =
          static_cast<int>(i);
      ++filled;
    }
    if (tok.arity() > 0) {
      stack.emplace_back(static_cast<int>(i), 0);
    } else {
      t.ends_[i] = static_cast<int>(i) + 1;
      // Close every ancestor whose last child just completed.
      while (!stack.empty()) {
        auto [idx, filled] = stack.back();
        if (filled < t.nodes_[static_cast<std::size_t>(idx)].token.arity()) break;
        t.ends_[static_cast<std::size_t>(idx)] = static_cast<int>(i) + 1;
        stack.pop_back();
      }
    }
  }
  if (!stack.empty())
    throw Error(Errc::IncompleteSequence,
                "missing " + std::to_string(open_slots(tokens)) + " operand(s)");
  return t;
}

PrefixSequence to_prefix(const ExprTree& tree) { return tree.tokens(); }

std::optional<Eigen::VectorXd> evaluate(const ExprTree& tree, const Eigen::MatrixXd& X,
                                        std::span<const double> consts) {
  if (consts.size() != tree.const_slots().size())
    throw Error(Errc::ConstArityMismatch, "expected " + std::to_string(tree.const_slots().size()) +
                                              " constants, got " + std::to_string(consts.size()));
  const Eigen::Index n = X.rows();
  const int m = static_cast<int>(tree.size());
  if (m == 0) return std::nullopt;
  Eigen::ArrayXXd buf(n, m);
  int next_const = static_cast<int>(consts.size());
  for (int i = m - 1; i >= 0; --i) {
    const auto& node = tree.node(i);
    auto out = buf.col(i);
    const auto a = node.children[0] >= 0 ? buf.col(node.children[0]) : buf.col(i);
    const auto b = node.children[1] >= 0 ? buf.col(node.children[1]) : buf.col(i);
    switch (node.token.op) {
      case Op::Add: out = a + b; break;
      case Op::Sub: out = a - b; break;
      case Op::Mul: out = a * b; break;
      case Op::Div: out = a / b; break;
      case Op::Pow: out = a.pow(b); break;
      case Op::Exp: out = a.exp(); break;
      case Op::Log: out = a.log(); break;
      case Op::Sin: out = a.sin(); break;
      case Op::Cos: out = a.cos(); break;
      case Op::Sqrt: out = a.sqrt(); break;
      case Op::Pow2: out = a.square(); break;
      case Op::Pow3: out = a.cube(); break;
      case Op::Pow4: out = a.square().square(); break;
      case Op::Pow5: out = a.square().square() * a; break;
      case Op::Var: {
        const int col = node.token.value - 1;
        if (col < 0 || col >= X.cols())
          throw Error(Errc::InvalidArgument, "variable x" + std::to_string(node.token.value) +
                                                 " exceeds input width " +
                                                 std::to_string(X.cols()));
        out = X.col(col).array();
        break;
      }
      case Op::Int: out.setConstant(static_cast<double>(node.token.value)); break;
      case Op::Const: out.setConstant(consts[static_cast<std::size_t>(--next_const)]); break;
    }
  }
  Eigen::VectorXd y = buf.col(0).matrix();
  if (!y.allFinite()) return std::nullopt;
  return y;
}

int complexity(const ExprTree& tree) {
  int c = 0;
  for (const auto& n : tree.nodes()) c += n.token.complexity();
  return c;
}

int max_variable(const ExprTree& tree) {
  int m = 0;
  for (const auto& n : tree.nodes())
    if (n.token.op == Op::Var) m = std::max(m, n.token.value);
  return m;
}

namespace {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string infix_at(const ExprTree& t, int i, std::span<const double> consts, int& next_const) {
  const auto& node = t.node(i);
  const Token tok = node.token;
  auto child = [&](int k) { return infix_at(t, node.children[static_cast<std::size_t>(k)], consts, next_const); };
  switch (tok.op) {
    case Op::Add: { auto a = child(0); auto b = child(1); return "(" + a + " + " + b + ")"; }
    case Op::Sub: { auto a = child(0); auto b = child(1); return "(" + a + " - " + b + ")"; }
    case Op::Mul: { auto a = child(0); auto b = child(1); return "(" + a + " * " + b + ")"; }
    case Op::Div: { auto a = child(0); auto b = child(1); return "(" + a + " / " + b + ")"; }
    case Op::Pow: { auto a = child(0); auto b = child(1); return "(" + a + " ^ " + b + ")"; }
    case Op::Pow2: return "(" + child(0) + ")^2";
    case Op::Pow3: return "(" + child(0) + ")^3";
    case Op::Pow4: return "(" + child(0) + ")^4";
    case Op::Pow5: return "(" + child(0) + ")^5";
    case Op::Exp:
    case Op::Log:
    case Op::Sin:
    case Op::Cos:
    case Op::Sqrt: return tok.name() + "(" + child(0) + ")";
    case Op::Var: return tok.name();
    case Op::Int: return tok.value < 0 ? "(" + tok.name() + ")" : tok.name();
    case Op::Const: {
      const int k = next_const++;
      if (consts.empty()) return "c" + std::to_string(k);
      const double v = consts[static_cast<std::size_t>(k)];
      return v < 0 ? "(" + format_number(v) + ")" : format_number(v);
    }
  }
  return "?";
}

// Recursive-descent infix parser producing prefix tokens.
class InfixParser {
 public:
  explicit InfixParser(std::string_view s) : s_(s) {}

  Equation parse() {
    auto seq = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing input");
    Equation eq;
    eq.tree = parse_prefix(seq);
    eq.consts = consts_;
    return eq;
  }

 private:
  using Seq = PrefixSequence;

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::UnknownToken,
                "infix parse error at " + std::to_string(pos_) + " (" + msg + "): " + std::string(s_));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }

  static Seq binary(Op op, Seq a, const Seq& b) {
    Seq out{Token::op_token(op)};
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }

  // Constants must be numbered in pre-order; `consts_` is appended in the order
  // numbers are parsed, which matches pre-order because operands are emitted in
  // textual order.
  Seq expr() {
    Seq lhs = term();
    for (;;) {
      const char c = peek();
      if (c == '+' || c == '-') {
        ++pos_;
        Seq rhs = term();
        lhs = binary(c == '+' ? Op::Add : Op::Sub, std::move(lhs), rhs);
      } else {
        return lhs;
      }
    }
  }

  bool starts_factor(char c) const {
    return std::isalpha(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
           c == '(' || c == '.';
  }

  Seq term() {
    Seq lhs = unary();
    for (;;) {
      const char c = peek();
      if (c == '*' || c == '/') {
        ++pos_;
        Seq rhs = unary();
        lhs = binary(c == '*' ? Op::Mul : Op::Div, std::move(lhs), rhs);
      } else if (starts_factor(c)) {
        Seq rhs = unary();
        lhs = binary(Op::Mul, std::move(lhs), rhs);
      } else {
        return lhs;
      }
    }
  }

  Seq unary() {
    if (peek() == '-') {
      ++pos_;
      skip_ws();
      if (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) {
        Seq num = number(true);
        return power_tail(std::move(num));
      }
      Seq operand = unary();
      return binary(Op::Mul, Seq{Token::integer(-1)}, operand);
    }
    return power_tail(primary());
  }

  Seq power_tail(Seq base) {
    if (peek() != '^') return base;
    ++pos_;
    Seq exponent = unary();
    if (exponent.size() == 1 && exponent[0].op == Op::Int && exponent[0].value >= 2 &&
        exponent[0].value <= 5) {
      static constexpr std::array<Op, 4> pows{Op::Pow2, Op::Pow3, Op::Pow4, Op::Pow5};
      Seq out{Token::op_token(pows[static_cast<std::size_t>(exponent[0].value - 2)])};
      out.insert(out.end(), base.begin(), base.end());
      return out;
    }
    return binary(Op::Pow, std::move(base), exponent);
  }

  Seq number(bool negative) {
    const std::size_t start = pos_;
    bool decimal = false;
    while (pos_ < s_.size() &&
           (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) {
      if (s_[pos_] == '.') decimal = true;
      ++pos_;
    }
    const std::string lit(s_.substr(start, pos_ - start));
    if (!decimal) {
      const int v = std::stoi(lit);
      return {Token::integer(negative ? -v : v)};
    }
    const double v = std::stod(lit);
    consts_.push_back(negative ? -v : v);
    return {Token::constant()};
  }

  Seq primary() {
    const char c = peek();
    if (c == '(') {
      ++pos_;
      Seq inner = expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number(false);
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      const std::string_view ident = s_.substr(start, pos_ - start);
      if (ident.size() >= 2 && ident[0] == 'x') return {parse_token(ident)};
      Op fn;
      if (ident == "exp") fn = Op::Exp;
      else if (ident == "log") fn = Op::Log;
      else if (ident == "sin") fn = Op::Sin;
      else if (ident == "cos") fn = Op::Cos;
      else if (ident == "sqrt") fn = Op::Sqrt;
      else fail("unknown identifier '" + std::string(ident) + "'");
      if (peek() != '(') fail("expected '(' after function");
      ++pos_;
      Seq arg = expr();
      if (peek() != ')') fail("expected ')'");
      ++pos_;
      Seq out{Token::op_token(fn)};
      out.insert(out.end(), arg.begin(), arg.end());
      return out;
    }
    fail("unexpected character");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::vector<double> consts_;
};

}  // namespace

std::string to_infix(const ExprTree& tree, std::span<const double> consts) {
  if (tree.empty()) return "";
  int next = 0;
  return infix_at(tree, 0, consts, next);
}

Equation parse_infix(std::string_view text) { return InfixParser(text).parse(); }

}  // namespace dgsr
