#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "dgsr/canonical.hpp"
#include "dgsr/corpus.hpp"

using namespace dgsr;

namespace {

std::string corpus_text(const Corpus& c) {
  std::ostringstream os;
  write_corpus(c, os);
  return os.str();
}

}  // namespace

TEST(Corpus, SingleLeafSkeleton) {
  SkeletonSampler s;
  s.l_min = s.l_max = 1;
  s.d = 3;
  std::mt19937_64 rng(7);
  int vars = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto eq = sample_skeleton(rng, s);
    ASSERT_EQ(eq.tree.size(), 1u);
    vars += eq.tree.node(0).token.op == Op::Var;
  }
  const double sd = std::sqrt(n * 0.8 * 0.2);
  EXPECT_NEAR(vars, 0.8 * n, 3 * sd);
}

TEST(Corpus, VariableMonotonicityAndLeafCount) {
  SkeletonSampler s;
  s.d = 5;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5000; ++i) {
    const auto eq = sample_skeleton(rng, s);
    std::set<int> used;
    int leaves = 0;
    for (const auto& n : eq.tree.nodes()) {
      if (n.token.op == Op::Var) used.insert(n.token.value);
      leaves += n.token.is_terminal();
    }
    ASSERT_GE(leaves, s.l_min);
    ASSERT_LE(leaves, s.l_max);
    int k = 1;
    for (int v : used) ASSERT_EQ(v, k++);
  }
}

TEST(Corpus, OperatorFrequenciesFollowWeights) {
  SkeletonSampler s;
  std::mt19937_64 rng(9);
  std::map<Op, long> counts;
  long total = 0;
  for (int i = 0; i < 100000; ++i) {
    const auto eq = sample_skeleton(rng, s);
    for (const auto& n : eq.tree.nodes())
      if (n.token.arity() > 0) {
        ++counts[n.token.op];
        ++total;
      }
  }
  double wsum = 0;
  for (const auto& [op, w] : s.weights) wsum += w;
  for (const auto& [op, w] : s.weights) {
    const double p = w / wsum;
    const double sd = std::sqrt(total * p * (1 - p));
    EXPECT_NEAR(static_cast<double>(counts[op]), total * p, 3 * sd) << Token::op_token(op).name();
  }
  EXPECT_NEAR(static_cast<double>(counts[Op::Add]) / counts[Op::Sub], 2.0, 0.1);
}

TEST(Corpus, HoldoutsExcluded) {
  SkeletonSampler s;
  s.d = 2;
  s.l_min = 2;
  s.l_max = 2;
  const auto hold = parse_infix("x1*x2");
  const auto c = build_pretrain_corpus(100, s, SamplingSpec::parse("U(1,5,20)"), {hold}, 4, "koza-d2");
  ASSERT_EQ(c.entries.size(), 100u);
  for (const auto& e : c.entries) {
    const auto t = parse_prefix(e.tokens);
    EXPECT_NE(symbolically_equal(t, e.consts, hold.tree, hold.consts), Equivalence::Equal) << to_text(e.tokens);
  }
  // Two leaves over two variables hit x1*x2 (or x2*x1) often, so some were rejected.
  EXPECT_GT(c.stats.holdout, 0);
}

TEST(Corpus, InvalidOnDomainRejected) {
  const auto eq = parse_infix("log(x1 - 7)");
  EXPECT_THROW(sample_dataset(eq, SamplingSpec::parse("U(1,5,20)"), 1, Split::Train, 1), Error);
  try {
    sample_dataset(eq, SamplingSpec::parse("U(1,5,20)"), 1, Split::Train, 1);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::GroundTruthInvalidOnDomain);
  }
}

TEST(Corpus, EmptyCorpusHasHeader) {
  const auto c = build_pretrain_corpus(0, SkeletonSampler{}, SamplingSpec::parse("U(1,5,20)"), {}, 1, "koza-d2");
  const auto text = corpus_text(c);
  EXPECT_EQ(text, "# dgsr-corpus v1 library=koza-d2 domain=U(1,5,20) count=0 seed=1\n");
  std::istringstream in(text);
  EXPECT_TRUE(read_corpus(in).entries.empty());
}

TEST(Corpus, DeterministicAndRoundTrip) {
  SkeletonSampler s;
  s.has_const = true;
  const auto dom = SamplingSpec::parse("U(1,5,20)");
  const auto a = corpus_text(build_pretrain_corpus(50, s, dom, {}, 42, "koza-const-d2"));
  const auto b = corpus_text(build_pretrain_corpus(50, s, dom, {}, 42, "koza-const-d2"));
  EXPECT_EQ(a, b);
  std::istringstream in(a);
  const auto back = read_corpus(in);
  EXPECT_EQ(corpus_text(back), a);
  bool any_const = false;
  for (const auto& e : back.entries) any_const |= !e.consts.empty();
  EXPECT_TRUE(any_const);
}

TEST(Corpus, BadHeader) {
  std::istringstream in("# dgsr-corpus v9 library=koza-d2 domain=U(1,5,20) count=0 seed=1\n");
  try {
    read_corpus(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::VersionMismatch);
  }
}

TEST(Corpus, SigmaMatchesTwoPassOracle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto& p = registry()[rng() % registry().size()];
    const auto ds = sample_problem_dataset(p, Split::Train, rng());
    double mean = 0;
    for (int r = 0; r < ds.n(); ++r) mean += ds.y(r);
    mean /= ds.n();
    double ss = 0;
    for (int r = 0; r < ds.n(); ++r) ss += (ds.y(r) - mean) * (ds.y(r) - mean);
    EXPECT_NEAR(ds.sigma_y, std::sqrt(ss / ds.n()), 1e-12 * std::max(1.0, ds.sigma_y)) << p.name;
  }
}

TEST(Corpus, TrainTestSplits) {
  const auto& f = find_problem("Feynman-7");
  const auto tr = sample_problem_dataset(f, Split::Train, 5);
  const auto te = sample_problem_dataset(f, Split::Test, 5);
  for (int i = 0; i < tr.n(); ++i)
    for (int j = 0; j < te.n(); ++j) ASSERT_FALSE(tr.X.row(i) == te.X.row(j));
  for (int i = 0; i < tr.n(); ++i) EXPECT_NEAR(tr.y(i), 1.5 * tr.X(i, 0) * tr.X(i, 1), 1e-12);

  const auto eq = parse_infix("x1");
  const auto e1 = sample_dataset(eq, SamplingSpec::parse("E(-1,1,3)"), 1, Split::Train, 1);
  const auto e2 = sample_dataset(eq, SamplingSpec::parse("E(-1,1,3)"), 1, Split::Test, 2);
  ASSERT_EQ(e1.n(), 3);
  EXPECT_DOUBLE_EQ(e1.X(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(e1.X(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(e1.X(2, 0), 1.0);
  EXPECT_EQ(e1.X, e2.X);
}

TEST(Registry, Lookups) {
  EXPECT_EQ(registry().size(), 99u);
  const auto& n1 = find_problem("Nguyen-1");
  EXPECT_EQ(n1.sampling.str(), "U(-1,1,20)");
  const auto ds = sample_problem_dataset(n1, Split::Train, 1);
  for (int i = 0; i < ds.n(); ++i) {
    const double x = ds.X(i, 0);
    EXPECT_NEAR(ds.y(i), x * x * x + x * x + x, 1e-12);
  }
  const auto& n7 = find_problem("Nguyen-7");
  EXPECT_EQ(n7.sampling.str(), "U(0,2,20)");
  EXPECT_EQ(n7.library.name, "koza-d1");
  EXPECT_EQ(canonical_key(n7.truth->tree), canonical_key(parse_infix("log(x1+1)+log(x1^2+1)").tree));
  const auto& f12 = find_problem("Feynman-12");
  EXPECT_EQ(f12.sampling.str(), "U(1,5,50)");
  EXPECT_EQ(symbolically_equal(f12.truth->tree, parse_infix("x1*x2*x2*x3/(3*x4*x5)").tree), Equivalence::Equal);
  const auto& s3 = find_problem("Synthetic-3");
  EXPECT_EQ(s3.d, 12);
  EXPECT_EQ(s3.sampling.str(), "U(-1,1,120)");
  EXPECT_EQ(s3.library.name, "synth-d12");
  EXPECT_THROW(find_problem("Nguyen-13"), Error);
}

TEST(Registry, EveryProblemSamples) {
  for (const auto& p : registry()) {
    const auto ds = sample_problem_dataset(p, Split::Train, 11);
    EXPECT_EQ(ds.n(), p.sampling.count) << p.name;
    EXPECT_EQ(ds.d(), p.d) << p.name;
    EXPECT_LE(max_variable(p.truth->tree), p.d) << p.name;
  }
}
