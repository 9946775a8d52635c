#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dgsr/canonical.hpp"
#include "dgsr/pipeline.hpp"

using namespace dgsr;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.width = 16;
  a.state_width = 16;
  a.tree_emb = 8;
  a.inducing = 8;
  a.isab_blocks = 1;
  a.state_layers = 1;
  a.decoder_layers = 1;
  a.ff = 32;
  return a;
}

std::string bytes_of(const Generator& g, const TrainState* st = nullptr) {
  std::ostringstream os;
  write_checkpoint(os, g, st);
  return os.str();
}

// 20 integer-coefficient linear equations a*x1 + b in one variable.
Corpus linear_corpus() {
  Corpus c;
  c.library = "koza-d1";
  c.domain = SamplingSpec::parse("U(-1,1,20)");
  c.seed = 1;
  for (int i = 0; i < 20; ++i) {
    const int a = 1 + i % 4;
    const int b = 1 + (i / 4) % 5;
    const auto eq = parse_infix(std::to_string(a) + "*x1+" + std::to_string(b));
    c.entries.push_back({eq.tree.tokens(), eq.consts});
  }
  return c;
}

PretrainConfig quick_pretrain() {
  PretrainConfig cfg;
  cfg.train.k = 16;
  cfg.train.t = 2;
  cfg.max_iterations = 4;
  cfg.validation_k = 8;
  cfg.validation_every = 2;
  cfg.threads = 1;
  cfg.seed = 5;
  return cfg;
}

bool encoder_equal(const Generator& a, const Generator& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (a.params().groups[i] == ParamGroup::Encoder && a.params().tensors[i] != b.params().tensors[i]) return false;
  return true;
}

bool decoder_equal(const Generator& a, const Generator& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (a.params().groups[i] == ParamGroup::Decoder && a.params().tensors[i] != b.params().tensors[i]) return false;
  return true;
}

}  // namespace

TEST(Noise, ZeroIsIdentity) {
  const auto ds = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  std::mt19937_64 rng(1);
  const auto out = add_noise(ds, 0.0, rng);
  EXPECT_EQ(out.y, ds.y);
  EXPECT_EQ(out.sigma_y, ds.sigma_y);
  EXPECT_THROW(add_noise(ds, -0.1, rng), Error);
}

TEST(Noise, StdProportionalToRootSumSquares) {
  Dataset ds;
  ds.X = Eigen::MatrixXd::Zero(2, 1);
  ds.y = Eigen::Vector2d(3, 4);
  ds.refresh();
  std::mt19937_64 rng(2);
  const double alpha = 0.01;
  double s = 0, ss = 0;
  const int n = 20000;
  for (int r = 0; r < n; ++r) {
    const auto out = add_noise(ds, alpha, rng);
    for (int i = 0; i < 2; ++i) {
      const double e = out.y(i) - ds.y(i);
      s += e;
      ss += e * e;
    }
    EXPECT_NEAR(out.sigma_y, population_std(out.y), 1e-15);
  }
  const double sd = std::sqrt(ss / (2.0 * n) - (s / (2.0 * n)) * (s / (2.0 * n)));
  EXPECT_NEAR(sd, 5 * alpha, 5 * alpha * 0.02);
}

TEST(Noise, Reproducible) {
  const auto ds = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(add_noise(ds, 0.001, a).y, add_noise(ds, 0.001, b).y);
}

TEST(Noise, Subsample) {
  const auto ds = sample_problem_dataset(find_problem("Nguyen-1"), Split::Train, 1);
  std::mt19937_64 rng(3);
  const auto sub = subsample(ds, 10, rng);
  ASSERT_EQ(sub.n(), 10);
  int j = 0;
  for (int i = 0; i < sub.n(); ++i) {
    while (j < ds.n() && ds.X(j, 0) != sub.X(i, 0)) ++j;
    ASSERT_LT(j, ds.n());
    EXPECT_EQ(sub.y(i), ds.y(j));
  }
  EXPECT_EQ(subsample(ds, 1000, rng).n(), ds.n());
}

TEST(Trace, JsonLinesRoundTrip) {
  RunTrace t;
  t.records.push_back({0, 500, 0.25, "add x1 x2", 12.5, 0.75});
  t.records.push_back({1, 900, 1.0, "mul x1 x2", std::nullopt, 0.5});
  t.status = RunStatus::Recovered;
  t.evaluations = 900;
  t.recovered_at = 900;
  std::stringstream ss;
  t.write_jsonl(ss);
  const auto back = RunTrace::read_jsonl(ss);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[0].best_prefix, "add x1 x2");
  EXPECT_EQ(*back.records[0].nll, 12.5);
  EXPECT_FALSE(back.records[1].nll);
  EXPECT_EQ(back.status, RunStatus::Recovered);
  EXPECT_EQ(*back.recovered_at, 900);
  std::stringstream bad("{\"iteration\": 1}\n");
  EXPECT_THROW(RunTrace::read_jsonl(bad), Error);
  EXPECT_THROW(parse_status("Done"), Error);
}

TEST(Infer, ZeroBudgetReturnsBestOfOneBatch) {
  const auto& p = find_problem("Feynman-5");
  const auto data = sample_problem_dataset(p, Split::Train, 0);
  Generator g(p.library, small_arch(), 4);
  const Generator copy = g;
  InferConfig cfg;
  cfg.train.k = 64;
  cfg.train.budget = 0;
  std::mt19937_64 rng(8), rng2(8);
  const auto res = infer(data, g, cfg, rng, nullptr);
  EXPECT_EQ(res.trace.status, RunStatus::BudgetExhausted);
  ASSERT_EQ(res.trace.records.size(), 1u);

  const auto batch = copy.sample_batch(copy.encode(data), 64, rng2);
  double best = 0;
  for (const auto& s : batch.seqs) best = std::max(best, score(parse_prefix(to_tokens(s, p.library)), data).reward);
  EXPECT_DOUBLE_EQ(res.best_reward, best);
  EXPECT_EQ(res.trace.evaluations, res.trace.records[0].evaluations);
}

TEST(Infer, RefinesDecoderOnly) {
  const auto& p = find_problem("Nguyen-5");
  const auto data = sample_problem_dataset(p, Split::Train, 0);
  Generator g(p.library, small_arch(), 4);
  const Generator before = g;
  InferConfig cfg;
  cfg.train.k = 64;
  cfg.max_iterations = 3;
  cfg.gp.generations = 2;
  std::mt19937_64 rng(1);
  const auto res = infer(data, g, cfg, rng, nullptr);
  EXPECT_EQ(res.trace.status, RunStatus::Converged);
  EXPECT_EQ(res.trace.records.size(), 3u);
  EXPECT_TRUE(encoder_equal(g, before));
  EXPECT_FALSE(decoder_equal(g, before));
}

TEST(Infer, RecoversAndTraceInvariantsHold) {
  const auto& p = find_problem("Feynman-3");
  const auto data = sample_problem_dataset(p, Split::Train, 2);
  Generator g(p.library, small_arch(), 6);
  InferConfig cfg;
  cfg.train.k = 200;
  cfg.train.budget = 200000;
  cfg.nll_every = 2;
  std::mt19937_64 rng(3);
  std::stringstream stream;
  const auto res = infer(data, g, cfg, rng, &*p.truth, &stream);
  ASSERT_EQ(res.trace.status, RunStatus::Recovered);
  EXPECT_EQ(symbolically_equal(res.best_tree, res.best_consts, p.truth->tree, p.truth->consts), Equivalence::Equal);
  EXPECT_GT(res.best_reward, 0.999);
  EXPECT_EQ(*res.trace.recovered_at, res.trace.evaluations);

  const auto& recs = res.trace.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].iteration, static_cast<long>(i));
    EXPECT_EQ(recs[i].nll.has_value(), i % 2 == 0);
    if (recs[i].nll) EXPECT_GT(*recs[i].nll, 0.0);
    if (i) {
      EXPECT_GE(recs[i].evaluations, recs[i - 1].evaluations);
      EXPECT_GE(recs[i].best_reward, recs[i - 1].best_reward);
    }
  }
  EXPECT_EQ(recs.back().best_prefix, to_text(to_tokens(res.best_seq, p.library)));

  const auto streamed = RunTrace::read_jsonl(stream);
  EXPECT_EQ(streamed.records.size(), recs.size());
  EXPECT_EQ(streamed.status, RunStatus::Recovered);
}

TEST(Infer, BudgetOvershootBounded) {
  const auto& p = find_problem("Nguyen-4");
  const auto data = sample_problem_dataset(p, Split::Train, 0);
  Generator g(p.library, small_arch(), 4);
  InferConfig cfg;
  cfg.train.k = 100;
  cfg.train.budget = 1000;
  std::mt19937_64 rng(1);
  const auto res = infer(data, g, cfg, rng, nullptr);
  EXPECT_EQ(res.trace.status, RunStatus::BudgetExhausted);
  EXPECT_GE(res.trace.evaluations, 1000);
  EXPECT_LE(res.trace.evaluations, 1000 + 2 * cfg.train.k);
}

TEST(Infer, BestIsMaximumOverRun) {
  const auto& p = find_problem("Nguyen-7");
  const auto data = sample_problem_dataset(p, Split::Train, 0);
  Generator g(p.library, small_arch(), 4);
  InferConfig cfg;
  cfg.train.k = 50;
  cfg.max_iterations = 4;
  cfg.no_gp = true;
  std::mt19937_64 rng(2);
  const auto res = infer(data, g, cfg, rng, &*p.truth);
  EXPECT_EQ(res.best_reward, res.trace.records.back().best_reward);
  EXPECT_DOUBLE_EQ(score(res.best_tree, data).reward, res.best_reward);
  // Without GP every iteration costs at most one batch.
  for (std::size_t i = 1; i < res.trace.records.size(); ++i)
    EXPECT_LE(res.trace.records[i].evaluations - res.trace.records[i - 1].evaluations, 50);
}

TEST(Infer, RejectsMismatchedDimension) {
  const auto& p = find_problem("Nguyen-1");
  const auto data = sample_problem_dataset(p, Split::Train, 0);
  Generator g(koza_library(2), small_arch(), 1);
  std::mt19937_64 rng(1);
  try {
    infer(data, g, InferConfig{}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IncompatibleCheckpoint);
  }
}

TEST(Pretrain, DegenerateConfigRuns) {
  Generator g(koza_library(1), small_arch(), 2);
  auto cfg = quick_pretrain();
  cfg.train.t = 1;
  cfg.train.k = 1;
  const auto res = pretrain(g, linear_corpus(), cfg);
  EXPECT_EQ(res.state.iteration, 4);
  EXPECT_TRUE(g.params().all_finite());
  EXPECT_THROW(pretrain(g, Corpus{}, cfg), Error);
}

TEST(Pretrain, DeterministicAndResumable) {
  const auto corpus = linear_corpus();
  const auto cfg = quick_pretrain();
  Generator a(koza_library(1), small_arch(), 2), b = a, c = a;
  const auto ra = pretrain(a, corpus, cfg);
  const auto rb = pretrain(b, corpus, cfg);
  EXPECT_EQ(bytes_of(a, &ra.state), bytes_of(b, &rb.state));

  // Two halves through a checkpoint equal one full run.
  auto half = cfg;
  half.max_iterations = 2;
  const auto r1 = pretrain(c, corpus, half);
  std::stringstream ss;
  write_checkpoint(ss, c, &r1.state);
  auto ck = read_checkpoint(ss);
  ASSERT_TRUE(ck.state);
  const auto r2 = pretrain(ck.generator, corpus, cfg, &*ck.state);
  EXPECT_EQ(bytes_of(ck.generator, &r2.state), bytes_of(a, &ra.state));
}

TEST(Pretrain, UpdatesEncoderAndDecoder) {
  Generator g(koza_library(1), small_arch(), 2);
  const Generator before = g;
  pretrain(g, linear_corpus(), quick_pretrain());
  EXPECT_FALSE(encoder_equal(g, before));
  EXPECT_FALSE(decoder_equal(g, before));
}

TEST(Pretrain, ValidationRewardImprovesOnLinearCorpus) {
  Generator g(koza_library(1), small_arch(), 3);
  auto cfg = quick_pretrain();
  cfg.train.k = 32;
  cfg.train.t = 4;
  cfg.train.lr = 3e-3;
  cfg.max_iterations = 200;
  cfg.validation_every = 200;
  cfg.validation_k = 16;
  cfg.train.patience = 1000;
  const auto res = pretrain(g, linear_corpus(), cfg);
  ASSERT_TRUE(res.log.front().validation);
  ASSERT_TRUE(res.log.back().validation);
  EXPECT_GT(*res.log.back().validation, *res.log.front().validation);
}

TEST(Pretrain, CrossEntropyRaisesTruthLikelihood) {
  const auto corpus = linear_corpus();
  const auto lib = koza_library(1);
  // Corpus truths use literals outside koza-d1; train on expressible ones instead.
  Corpus c = corpus;
  c.entries.clear();
  for (const char* s : {"add x1 mul x1 x1", "mul x1 sin x1", "add x1 exp x1", "sub x1 cos x1", "mul x1 mul x1 x1"})
    c.entries.push_back({parse_text(s), {}});
  Generator g(lib, small_arch(), 4);
  auto cfg = quick_pretrain();
  cfg.ce = true;
  cfg.max_iterations = 60;
  cfg.train.lr = 3e-3;
  const auto seq = to_indices(c.entries[0].tokens, lib);
  const auto ds = corpus_dataset(c.entries[0], c.domain, 1, 1);
  const double before = g.log_prob(ds, seq);
  pretrain(g, c, cfg);
  EXPECT_GT(g.log_prob(ds, seq), before + 1.0);
}

TEST(Pretrain, EarlyStopsWithoutImprovement) {
  Generator g(koza_library(1), small_arch(), 2);
  auto cfg = quick_pretrain();
  cfg.max_iterations = 50;
  cfg.validation_every = 1;
  cfg.train.patience = 3;
  cfg.train.lr = 1e-15;
  const auto res = pretrain(g, linear_corpus(), cfg);
  EXPECT_TRUE(res.early_stopped);
  EXPECT_EQ(res.state.iteration, 3);
}

TEST(Pretrain, NonFiniteLossAborts) {
  Corpus c = linear_corpus();
  c.entries = {{parse_text("add x1 mul x1 x1"), {}}, {parse_text("mul x1 sin x1"), {}}};
  Generator g(koza_library(1), small_arch(), 2);
  g.params().tensors[static_cast<std::size_t>(g.params().index("dec.out.b"))](0, 0) = NAN;
  auto cfg = quick_pretrain();
  cfg.ce = true;
  try {
    pretrain(g, c, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonFiniteLoss);
  }
}

TEST(Pretrain, NoEncoderModeTrains) {
  auto arch = small_arch();
  arch.no_encoder = true;
  Generator g(koza_library(1), arch, 2);
  const auto res = pretrain(g, linear_corpus(), quick_pretrain());
  EXPECT_EQ(res.state.iteration, 4);
  EXPECT_TRUE(g.params().all_finite());
}
