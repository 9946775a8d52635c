#include <gtest/gtest.h>

#include <set>

#include "dgsr/canonical.hpp"
#include "dgsr/evolve.hpp"
#include "rule_checker.hpp"

using namespace dgsr;

namespace {

std::vector<int> seq_of(const std::string& text, const LibrarySpec& lib) {
  const auto toks = parse_text(text);
  return to_indices(toks, lib);
}

// Random valid sequences drawn token by token under the mask.
std::vector<std::vector<int>> random_population(const LibrarySpec& lib, int n, std::mt19937_64& rng) {
  std::vector<std::vector<int>> out;
  while (static_cast<int>(out.size()) < n) {
    DecodeState st(lib);
    std::vector<int> s;
    while (!st.complete()) {
      const auto m = st.mask();
      std::vector<int> ok;
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) ok.push_back(static_cast<int>(i));
      const int t = ok[rng() % ok.size()];
      st.push(t);
      s.push_back(t);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Subtree end by explicit recursion over the tree.
int end_oracle(const std::vector<int>& s, int i, const LibrarySpec& lib) {
  const int a = lib.tokens[static_cast<std::size_t>(s[static_cast<std::size_t>(i)])].arity();
  int j = i + 1;
  for (int c = 0; c < a; ++c) j = end_oracle(s, j, lib);
  return j;
}

}  // namespace

TEST(Evolve, SubtreeEndMatchesRecursion) {
  const auto lib = koza_library(2);
  std::mt19937_64 rng(3);
  for (const auto& s : random_population(lib, 200, rng))
    for (int i = 0; i < static_cast<int>(s.size()); ++i) EXPECT_EQ(subtree_end(s, i, lib), end_oracle(s, i, lib));
}

TEST(Evolve, OffspringRespectGrammar) {
  const auto lib = koza_library(2, true);
  std::mt19937_64 rng(5);
  const auto pop = random_population(lib, 400, rng);
  int changed = 0;
  for (std::size_t i = 0; i + 1 < pop.size(); i += 2) {
    std::vector<int> a, b, m;
    if (crossover(pop[i], pop[i + 1], lib, rng, a, b)) {
      for (const auto* c : {&a, &b}) {
        EXPECT_EQ(oracle::rule_violation(to_tokens(*c, lib), lib), "");
        EXPECT_TRUE(satisfies_constraints(*c, lib));
      }
      ++changed;
    }
    if (mutate(pop[i], lib, 3, rng, m)) {
      EXPECT_TRUE(satisfies_constraints(m, lib));
      EXPECT_GE(static_cast<int>(m.size()), lib.min_len);
      EXPECT_LE(static_cast<int>(m.size()), lib.max_len);
      ++changed;
    }
  }
  EXPECT_GT(changed, 100);
}

TEST(Evolve, RandomSubtreeDepth) {
  const auto lib = koza_library(3);
  std::mt19937_64 rng(9);
  for (int depth = 0; depth <= 3; ++depth)
    for (int r = 0; r < 200; ++r) {
      const auto s = random_subtree(lib, depth, rng);
      EXPECT_EQ(open_slots(to_tokens(s, lib)), 0);
      if (depth == 0) EXPECT_EQ(s.size(), 1u);
      EXPECT_LE(s.size(), (1u << (depth + 1)) - 1);
    }
}

TEST(Evolve, IdenticalPopulationWithoutMutationIsUnchanged) {
  const auto lib = koza_library(1);
  const auto& p = find_problem("Nguyen-1");
  const auto data = sample_problem_dataset(p, Split::Train, 1);
  const auto s = seq_of("add x1 mul x1 x1", lib);
  GPConfig cfg;
  cfg.mutation_prob = 0.0;
  cfg.crossover_prob = 1.0;
  Budget budget(1'000'000);
  std::mt19937_64 rng(1);
  const auto elites = gp_refine(std::vector<std::vector<int>>(20, s), lib, data, cfg, budget, rng);
  ASSERT_EQ(elites.size(), 1u);
  EXPECT_EQ(elites[0].seq, s);
  EXPECT_EQ(budget.used.load(), 1);
}

TEST(Evolve, TruthSurvivesWithFullReward) {
  const auto lib = koza_library(1);
  const auto& p = find_problem("Nguyen-2");
  const auto data = sample_problem_dataset(p, Split::Train, 2);
  std::mt19937_64 rng(4);
  auto seeds = random_population(lib, 60, rng);
  seeds[17] = seq_of("add x1 add mul x1 x1 add mul x1 mul x1 x1 mul x1 mul x1 mul x1 x1", lib);
  Budget budget(1'000'000);
  const auto elites = gp_refine(seeds, lib, data, GPConfig{}, budget, rng);
  ASSERT_FALSE(elites.empty());
  EXPECT_DOUBLE_EQ(elites[0].rec.reward, 1.0);
  EXPECT_EQ(symbolically_equal(parse_prefix(to_tokens(elites[0].seq, lib)), p.truth->tree), Equivalence::Equal);
}

TEST(Evolve, ElitesUniqueSortedAndCapped) {
  const auto lib = koza_library(1);
  const auto data = sample_problem_dataset(find_problem("Nguyen-3"), Split::Train, 3);
  std::mt19937_64 rng(6);
  const auto seeds = random_population(lib, 120, rng);
  Budget budget(1'000'000);
  GPConfig cfg;
  cfg.generations = 5;
  const auto elites = gp_refine(seeds, lib, data, cfg, budget, rng);
  EXPECT_EQ(elites.size(), 50u);
  std::set<std::string> keys;
  for (std::size_t i = 0; i < elites.size(); ++i) {
    keys.insert(elites[i].key);
    EXPECT_EQ(elites[i].key, canonical_key(parse_prefix(to_tokens(elites[i].seq, lib))));
    if (i) EXPECT_GE(elites[i - 1].rec.reward, elites[i].rec.reward);
  }
  EXPECT_EQ(keys.size(), elites.size());

  cfg.elites = 10;
  Budget b2(1'000'000);
  EXPECT_EQ(gp_refine(seeds, lib, data, cfg, b2, rng).size(), 10u);
  Budget b3(1'000'000);
  EXPECT_EQ(gp_refine({seeds.begin(), seeds.begin() + 7}, lib, data, GPConfig{}, b3, rng).size(), 7u);
}

TEST(Evolve, BestSoFarNondecreasingAcrossGenerations) {
  const auto lib = koza_library(1);
  const auto data = sample_problem_dataset(find_problem("Nguyen-5"), Split::Train, 5);
  std::mt19937_64 seed_rng(8);
  const auto seeds = random_population(lib, 40, seed_rng);
  double prev = -1;
  for (int g = 1; g <= 8; ++g) {
    GPConfig cfg;
    cfg.generations = g;
    Budget budget(1'000'000);
    std::mt19937_64 rng(77);
    const double best = gp_refine(seeds, lib, data, cfg, budget, rng)[0].rec.reward;
    EXPECT_GE(best, prev) << "generations=" << g;
    prev = best;
  }
}

TEST(Evolve, CacheChargesEachKeyOnce) {
  const auto lib = koza_library(1, true);
  const auto data = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  std::mt19937_64 seed_rng(10);
  const auto seeds = random_population(lib, 30, seed_rng);
  FitnessCache cache;
  Budget budget(10'000'000);
  GPConfig cfg;
  cfg.generations = 3;
  std::mt19937_64 rng(12);
  gp_refine(seeds, lib, data, cfg, budget, rng, &cache);
  const long first = budget.used.load();
  EXPECT_GT(first, 0);
  EXPECT_GE(first, static_cast<long>(cache.size()));

  // Same stream again: every individual is a cache hit.
  std::mt19937_64 rng2(12);
  gp_refine(seeds, lib, data, cfg, budget, rng2, &cache);
  EXPECT_EQ(budget.used.load(), first);

  // Equivalent spellings share one evaluation.
  FitnessCache c2;
  Budget b2;
  const auto r = evaluate_population({seq_of("add x1 mul x1 x1", lib), seq_of("add mul x1 x1 x1", lib)}, lib, data, c2, b2);
  EXPECT_EQ(b2.used.load(), 1);
  EXPECT_EQ(r[0].key, r[1].key);
}

TEST(Evolve, ImprovesOnSeeds) {
  const auto lib = koza_library(1);
  const auto data = sample_problem_dataset(find_problem("Nguyen-3"), Split::Train, 11);
  std::mt19937_64 rng(13);
  const auto seeds = random_population(lib, 100, rng);
  FitnessCache cache;
  Budget budget(1'000'000);
  const auto initial = evaluate_population(seeds, lib, data, cache, budget);
  double seed_best = 0;
  for (const auto& i : initial) seed_best = std::max(seed_best, i.rec.reward);
  const auto elites = gp_refine(seeds, lib, data, GPConfig{}, budget, rng, &cache);
  EXPECT_GT(elites[0].rec.reward, seed_best);
}

TEST(Evolve, StopsWhenBudgetExhausted) {
  const auto lib = koza_library(1);
  const auto data = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  std::mt19937_64 rng(14);
  const auto seeds = random_population(lib, 50, rng);
  Budget budget(10);
  gp_refine(seeds, lib, data, GPConfig{}, budget, rng);
  EXPECT_LE(budget.used.load(), 50);
}

TEST(Evolve, ConfigValidation) {
  GPConfig c;
  EXPECT_NO_THROW(c.validate());
  c.crossover_prob = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = GPConfig{};
  c.tournament_size = 1;
  EXPECT_THROW(c.validate(), Error);
  const auto lib = koza_library(1);
  Budget b;
  std::mt19937_64 rng(1);
  const auto data = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  EXPECT_THROW(gp_refine({}, lib, data, GPConfig{}, b, rng), Error);
}
