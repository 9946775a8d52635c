#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <random>

#include "dgsr/canonical.hpp"

using namespace dgsr;

namespace {

ExprTree T(std::string_view prefix) { return parse_prefix(parse_text(prefix)); }
Equation I(std::string_view infix) { return parse_infix(infix); }

std::vector<std::string> equivalents() {
  std::ifstream in(std::string(DGSR_TEST_DATA) + "/feynman7_equivalents.txt");
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace

TEST(Canonical, Distributivity) {
  EXPECT_EQ(canonical_key(T("add mul x1 x2 mul x1 x2")), canonical_key(T("mul 2 mul x1 x2")));
}

TEST(Canonical, Commutativity) {
  EXPECT_EQ(canonical_key(T("add sin x1 x2")), canonical_key(T("add x2 sin x1")));
  EXPECT_EQ(canonical_key(T("sin add x1 x2")), canonical_key(T("sin add x2 x1")));
}

TEST(Canonical, ShortestEquivalentForm) {
  const auto f = I("x1 (x2 + x2 x2/(x2 + x2))");
  const auto g = I("3/2*x1*x2");
  EXPECT_EQ(canonical_key(f.tree), canonical_key(g.tree));
  EXPECT_EQ(canonical_key(g.tree), "3/2*x1*x2");
}

TEST(Canonical, Deterministic) {
  const auto t = T("div add sin x1 exp x2 sub x1 cos mul x2 x2");
  EXPECT_EQ(canonical_key(t), canonical_key(t));
}

TEST(Canonical, RationalCancellation) {
  EXPECT_EQ(canonical_key(I("(x1^2 - 1)/(x1 - 1)").tree), canonical_key(I("x1 + 1").tree));
  EXPECT_EQ(canonical_key(I("(x1^2 - x2^2)/(x1 + x2)").tree), canonical_key(I("x1 - x2").tree));
  EXPECT_EQ(canonical_key(I("x1/x1").tree), "1");
  EXPECT_EQ(canonical_key(I("(x1^3 - x1)/(x1^2 + x1)").tree), canonical_key(I("x1 - 1").tree));
}

TEST(Canonical, ConstantsBound) {
  const std::vector<double> c{1.5};
  EXPECT_EQ(canonical_key(T("mul const x1"), c), canonical_key(I("3/2*x1").tree));
  EXPECT_EQ(canonical_key(T("mul const x1")), "c0*x1");
}

TEST(Canonical, KernelRewrites) {
  EXPECT_EQ(canonical_key(T("exp log x1")), "x1");
  EXPECT_EQ(canonical_key(T("log exp x1")), "x1");
  EXPECT_EQ(canonical_key(T("mul sqrt x1 sqrt x1")), "x1");
  EXPECT_EQ(canonical_key(T("pow x1 2")), canonical_key(T("pow2 x1")));
  EXPECT_EQ(canonical_key(T("sin 0")), "0");
}

TEST(Canonical, SymbolicallyEqual) {
  EXPECT_EQ(symbolically_equal(T("add x1 x2"), T("mul x1 x2")), Equivalence::NotEqual);
  FalsifierDomain pos;
  pos.bounds = {{0.1, 5.0}};
  EXPECT_EQ(symbolically_equal(T("exp log x1"), T("x1"), pos), Equivalence::Equal);
  EXPECT_EQ(symbolically_equal(T("mul x1 x2"), T("mul x2 x1")), Equivalence::Equal);
}

TEST(Canonical, UndecidedWhenOnlyNumericAgreement) {
  // sin^2 + cos^2 = 1 needs a trig identity the CAS does not apply.
  EXPECT_EQ(symbolically_equal(I("sin(x1)^2 + cos(x1)^2").tree, I("1").tree),
            Equivalence::Undecided);
}

TEST(Canonical, TableEquivalentsAllEqual) {
  const auto exprs = equivalents();
  ASSERT_GE(exprs.size(), 64u);
  const auto target = I("3/2*x1*x2");
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& e : exprs) {
    const auto f = I(e);
    EXPECT_EQ(symbolically_equal(f.tree, f.consts, target.tree, target.consts), Equivalence::Equal) << e;
    EXPECT_EQ(canonical_key(f.tree, f.consts), canonical_key(target.tree)) << e;
  }
  // Equivalence relation over the set: reflexive, symmetric, mutually Equal.
  for (std::size_t i = 0; i < exprs.size(); ++i) {
    const auto a = I(exprs[i]);
    EXPECT_EQ(symbolically_equal(a.tree, a.tree), Equivalence::Equal);
    for (std::size_t j = i + 1; j < exprs.size(); ++j) {
      const auto b = I(exprs[j]);
      const auto ab = symbolically_equal(a.tree, b.tree);
      ASSERT_EQ(ab, Equivalence::Equal) << exprs[i] << " vs " << exprs[j];
      ASSERT_EQ(symbolically_equal(b.tree, a.tree), ab);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
}

TEST(Canonical, MutatedPairsNotEqual) {
  const auto exprs = equivalents();
  std::mt19937_64 rng(3);
  const std::vector<Token> swaps{Token::var(1), Token::var(2), Token::integer(2), Token::integer(3)};
  int checked = 0;
  for (int i = 0; checked < 1000 && i < 5000; ++i) {
    const auto base = I(exprs[rng() % exprs.size()]);
    auto toks = base.tree.tokens();
    // Replace one leaf by a different leaf.
    std::vector<std::size_t> leaves;
    for (std::size_t k = 0; k < toks.size(); ++k)
      if (toks[k].is_terminal()) leaves.push_back(k);
    const std::size_t at = leaves[rng() % leaves.size()];
    const Token repl = swaps[rng() % swaps.size()];
    if (repl == toks[at]) continue;
    toks[at] = repl;
    const auto mutated = parse_prefix(toks);
    // Oracle: does the mutation change the value at a generic point?
    Eigen::MatrixXd X(1, 2);
    X << 1.2345, 0.6789;
    const auto a = evaluate(mutated, X);
    const auto b = evaluate(base.tree, X);
    if (!a || !b || std::fabs((*a)(0) - (*b)(0)) < 1e-6) continue;
    ASSERT_EQ(symbolically_equal(mutated, base.tree), Equivalence::NotEqual) << to_text(toks);
    ++checked;
  }
  EXPECT_EQ(checked, 1000);
}
