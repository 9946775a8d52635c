#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>

#include "dgsr/optim.hpp"

using namespace dgsr;

namespace {

ArchConfig toy_arch() {
  ArchConfig a;
  a.width = 4;
  a.state_width = 4;
  a.tree_emb = 2;
  a.inducing = 2;
  a.isab_blocks = 1;
  a.state_layers = 1;
  a.decoder_layers = 1;
  a.ff = 4;
  return a;
}

Dataset linear_data(double slope, int n = 20, std::uint64_t seed = 1) {
  return sample_dataset(parse_infix(std::to_string(slope) + "*x1"), SamplingSpec::parse("U(1,5," + std::to_string(n) + ")"),
                        1, Split::Train, seed);
}

// Two-pass NMSE oracle written without Eigen reductions.
double nmse_oracle(const std::vector<double>& y, const std::vector<double>& yh) {
  double mean = 0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss = 0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(y.size()));
  double se = 0;
  for (std::size_t i = 0; i < y.size(); ++i) se += (y[i] - yh[i]) * (y[i] - yh[i]);
  return se / static_cast<double>(y.size()) / sigma;
}

using LossFn = std::function<ad::Var(ad::Tape&, const TeacherForced&)>;

// Max relative FD error of a scalar loss over every parameter of a toy generator.
double loss_grad_error(Generator& g, const Dataset& ds, const std::vector<std::vector<int>>& seqs, const LossFn& loss) {
  auto value = [&](bool backprop, std::vector<Eigen::MatrixXd>* grads) {
    ad::Tape t;
    const auto pv = g.bind(t, backprop, backprop);
    const auto V = g.encode_on(t, pv, ds);
    const auto tf = g.teacher_forced(t, pv, t.repeat_rows(V, static_cast<int>(seqs.size())), seqs);
    const auto l = loss(t, tf);
    if (backprop) {
      t.backward(l);
      *grads = g.gradients(t, pv);
    }
    return t.value(l)(0, 0);
  };
  std::vector<Eigen::MatrixXd> grads;
  value(true, &grads);
  double worst = 0;
  auto& P = g.params().tensors;
  for (std::size_t i = 0; i < P.size(); ++i)
    for (Eigen::Index e = 0; e < P[i].size(); ++e) {
      const double orig = P[i](e);
      const double h = 1e-5;
      P[i](e) = orig + h;
      const double fp = value(false, nullptr);
      P[i](e) = orig - h;
      const double fm = value(false, nullptr);
      P[i](e) = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = grads[i](e);
      if (std::fabs(an - fd) < 1e-9) continue;
      worst = std::max(worst, std::fabs(an - fd) / std::max(std::fabs(an), std::fabs(fd)));
    }
  return worst;
}

}  // namespace

TEST(Reward, HandCases) {
  Dataset ds;
  ds.X = Eigen::MatrixXd::Zero(2, 1);
  ds.y = Eigen::Vector2d(0, 2);
  ds.refresh();
  EXPECT_DOUBLE_EQ(ds.sigma_y, 1.0);
  const auto n = nmse_of_predictions(ds.y, Eigen::Vector2d(1, 1), ds.sigma_y);
  ASSERT_TRUE(n);
  EXPECT_DOUBLE_EQ(*n, 1.0);
  EXPECT_DOUBLE_EQ(reward(n), 0.5);
  EXPECT_DOUBLE_EQ(reward(0.0), 1.0);
  EXPECT_DOUBLE_EQ(reward(std::nullopt), 0.0);
  const auto d = linear_data(3.0);
  EXPECT_DOUBLE_EQ(*nmse(parse_infix("3*x1").tree, {}, d), 0.0);
  const auto neg = sample_dataset(parse_infix("x1"), SamplingSpec::parse("U(-1,1,20)"), 1, Split::Train, 1);
  EXPECT_FALSE(nmse(parse_infix("log(x1)").tree, {}, neg).has_value());
  Dataset flat = ds;
  flat.y.setConstant(2.0);
  flat.refresh();
  EXPECT_THROW(nmse(parse_infix("x1").tree, {}, flat), Error);
}

TEST(Reward, RandomCasesMatchOracle) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 3);
  for (int c = 0; c < 1000; ++c) {
    const int len = 2 + static_cast<int>(rng() % 30);
    std::vector<double> y(len), yh(len);
    Eigen::VectorXd ey(len), eyh(len);
    for (int i = 0; i < len; ++i) {
      ey(i) = y[static_cast<std::size_t>(i)] = n(rng);
      eyh(i) = yh[static_cast<std::size_t>(i)] = n(rng);
    }
    const double want = nmse_oracle(y, yh);
    const auto got = nmse_of_predictions(ey, eyh, population_std(ey));
    ASSERT_TRUE(got);
    ASSERT_NEAR(*got, want, 1e-12 * std::max(1.0, want));
    ASSERT_NEAR(reward(got), 1.0 / (1.0 + want), 1e-12);
  }
}

TEST(Queue, MatchesBruteForce) {
  std::mt19937_64 rng(2);
  for (int stream = 0; stream < 1000; ++stream) {
    const int q = 1 + static_cast<int>(rng() % 10);
    MaxRewardQueue queue(q);
    std::map<std::string, double> best;
    const int n = static_cast<int>(rng() % 60);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < n; ++i) {
      const std::string key = "k" + std::to_string(rng() % 20);
      const double r = u(rng);
      queue.push(key, r, {i});
      best[key] = std::max(best.count(key) ? best[key] : -1.0, r);
      ASSERT_LE(static_cast<int>(queue.size()), q);
    }
    std::vector<std::pair<double, std::string>> all;
    for (const auto& [k, r] : best) all.emplace_back(r, k);
    std::sort(all.rbegin(), all.rend());
    all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(q)));
    ASSERT_EQ(queue.size(), all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      EXPECT_EQ(queue.entries()[i].key, all[i].second);
      EXPECT_EQ(queue.entries()[i].reward, all[i].first);
    }
  }
}

TEST(Queue, DuplicateKeyDoesNotGrow) {
  MaxRewardQueue q(3);
  q.push("a", 0.5, {1});
  EXPECT_TRUE(q.push("a", 0.9, {2}));
  EXPECT_EQ(q.size(), 1u);
  EXPECT_EQ(q.entries()[0].seq, std::vector<int>{2});
  EXPECT_FALSE(q.push("a", 0.1, {3}));
  EXPECT_EQ(q.entries()[0].reward, 0.9);
}

TEST(RiskFilter, Quantiles) {
  std::vector<double> dec;
  for (int i = 1; i <= 10; ++i) dec.push_back(i / 10.0);
  EXPECT_EQ(risk_filter(dec, 0.2), (std::vector<int>{8, 9}));
  EXPECT_TRUE(risk_filter(std::vector<double>(7, 0.3), 0.2).empty());
  const auto almost = risk_filter(dec, 0.999999);
  EXPECT_EQ(almost.size(), 9u);
  EXPECT_THROW(risk_filter(dec, 1.0), Error);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int c = 0; c < 1000; ++c) {
    std::vector<double> r(1 + rng() % 50);
    for (auto& v : r) v = std::round(u(rng) * 20) / 20;  // ties on purpose
    const double eps = 0.01 + 0.98 * u(rng);
    // Oracle: sort, interpolate at (n-1)(1-eps).
    auto s = r;
    std::sort(s.begin(), s.end());
    const double h = (s.size() - 1) * (1 - eps);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double thr = lo + 1 < s.size() ? s[lo] + (h - lo) * (s[lo + 1] - s[lo]) : s[lo];
    std::vector<int> want;
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i] > thr) want.push_back(static_cast<int>(i));
    ASSERT_EQ(risk_filter(r, eps), want);
    for (int i : want) ASSERT_GT(r[static_cast<std::size_t>(i)], thr);
  }
}

TEST(Losses, BaselineUpdate) { EXPECT_DOUBLE_EQ(update_baseline(0.2, {0.4, 0.8}, 0.5), 0.4); }

TEST(Losses, GradientsMatchFiniteDifferences) {
  const auto lib = koza_library(1);
  Generator g(lib, toy_arch(), 4);
  const auto ds = linear_data(2.0);
  std::mt19937_64 rng(5);
  const auto batch = g.sample_batch(ds, 6, rng);
  const std::vector<double> rewards{0.1, 0.9, 0.4, 0.0, 0.7, 0.3};
  EXPECT_LE(loss_grad_error(g, ds, batch.seqs,
                            [&](ad::Tape& t, const TeacherForced& tf) { return vpg_loss(t, tf, rewards, 0.35); }),
            1e-4);
  EXPECT_LE(loss_grad_error(g, ds, batch.seqs, [&](ad::Tape& t, const TeacherForced& tf) { return pqt_loss(t, tf); }),
            1e-4);
  EXPECT_LE(loss_grad_error(g, ds, batch.seqs,
                            [&](ad::Tape& t, const TeacherForced& tf) { return entropy_loss(t, tf, 0.5, 0.9); }),
            1e-4);
}

TEST(Losses, ZeroAdvantageZeroGradient) {
  const auto lib = koza_library(1);
  Generator g(lib, toy_arch(), 6);
  const auto ds = linear_data(2.0);
  std::mt19937_64 rng(7);
  const auto batch = g.sample_batch(ds, 5, rng);
  ad::Tape t;
  const auto pv = g.bind(t, true, true);
  const auto tf = g.teacher_forced(t, pv, t.repeat_rows(g.encode_on(t, pv, ds), 5), batch.seqs);
  t.backward(vpg_loss(t, tf, std::vector<double>(5, 0.4), 0.4));
  for (const auto& gr : g.gradients(t, pv)) EXPECT_EQ(gr.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Losses, PqtSingleSequenceIsNegativeLogProb) {
  const auto lib = koza_library(1);
  Generator g(lib, toy_arch(), 8);
  const auto ds = linear_data(2.0);
  const auto seq = to_indices(parse_text("add x1 mul x1 x1"), lib);
  ad::Tape t;
  const auto pv = g.bind(t, false, false);
  const auto tf = g.teacher_forced(t, pv, g.encode_on(t, pv, ds), {seq});
  EXPECT_NEAR(t.value(pqt_loss(t, tf))(0, 0), -g.log_prob(ds, seq), 1e-12);
}

TEST(Losses, PqtTrainingRaisesLogProb) {
  const auto lib = koza_library(1);
  Generator g(lib, ArchConfig{}, 9);
  const auto ds = linear_data(2.0);
  const std::vector<std::vector<int>> queue{to_indices(parse_text("add x1 mul x1 x1"), lib),
                                            to_indices(parse_text("mul x1 sin x1"), lib)};
  AdamState adam;
  std::vector<double> before;
  for (const auto& s : queue) before.push_back(g.log_prob(ds, s));
  for (int step = 0; step < 10; ++step) {
    ad::Tape t;
    const auto pv = g.bind(t, false, true);
    const auto tf = g.teacher_forced(t, pv, t.repeat_rows(g.encode_on(t, pv, ds), 2), queue);
    t.backward(pqt_loss(t, tf));
    grad_step(g.params(), g.gradients(t, pv), adam, false, true);
  }
  for (std::size_t i = 0; i < queue.size(); ++i) EXPECT_GT(g.log_prob(ds, queue[i]), before[i]);
}

TEST(Losses, EntropyWeightRaisesEntropy) {
  const auto lib = koza_library(1);
  const auto ds = linear_data(2.0);
  auto train = [&](double lambda) {
    Generator g(lib, ArchConfig{}, 10);
    AdamState adam;
    adam.lr = 0.01;
    std::mt19937_64 rng(11);
    for (int step = 0; step < 50; ++step) {
      const auto b = g.sample_batch(ds, 16, rng);
      ad::Tape t;
      const auto pv = g.bind(t, true, true);
      const auto tf = g.teacher_forced(t, pv, t.repeat_rows(g.encode_on(t, pv, ds), 16), b.seqs);
      t.backward(entropy_loss(t, tf, lambda, 0.9));
      grad_step(g.params(), g.gradients(t, pv), adam);
    }
    std::mt19937_64 eval(12);
    // Mean decayed per-sequence entropy, the quantity the regularizer weights.
    return -entropy_term(g.sample_batch(ds, 200, eval), 1.0, 0.9);
  };
  EXPECT_GT(train(1.0), train(0.0));
}

TEST(Losses, RegularizerEdgeCases) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.length_target(), 17.0);
  EXPECT_DOUBLE_EQ(length_penalty(17, cfg), 0.0);
  EXPECT_DOUBLE_EQ(length_penalty(7, cfg), 1.0);
  SampleBatch one_hot;
  one_hot.seqs = {{0, 1}};
  one_hot.entropy = {{0.0, 0.0}};
  EXPECT_DOUBLE_EQ(entropy_term(one_hot, 0.003, 0.9), 0.0);
}

TEST(Adam, StepProperties) {
  GeneratorParams p;
  p.names = {"w"};
  p.groups = {ParamGroup::Decoder};
  p.tensors = {Eigen::MatrixXd::Constant(1, 1, 2.0)};
  AdamState st;
  grad_step(p, {Eigen::MatrixXd::Zero(1, 1)}, st);
  EXPECT_EQ(p.tensors[0](0, 0), 2.0);
  AdamState st2;
  grad_step(p, {Eigen::MatrixXd::Ones(1, 1)}, st2);
  EXPECT_NEAR(2.0 - p.tensors[0](0, 0), 1e-3, 1e-8);
  EXPECT_THROW(grad_step(p, {Eigen::MatrixXd::Constant(1, 1, std::nan(""))}, st2), Error);
  // Encoder-group tensors stay fixed when only the decoder is updated.
  p.groups = {ParamGroup::Encoder};
  const double before = p.tensors[0](0, 0);
  grad_step(p, {Eigen::MatrixXd::Ones(1, 1)}, st2, false, true);
  EXPECT_EQ(p.tensors[0](0, 0), before);
}

TEST(FitConstants, LinearSlope) {
  const auto ds = linear_data(3.0);
  Budget budget;
  const auto fit = fit_constants(parse_prefix(parse_text("mul const x1")), ds, &budget);
  ASSERT_EQ(fit.consts.size(), 1u);
  EXPECT_NEAR(fit.consts[0], 3.0, 1e-6);
  EXPECT_NEAR(*fit.nmse, 0.0, 1e-10);
  EXPECT_EQ(budget.used.load(), fit.evaluations);
}

TEST(FitConstants, NoSlotsAndPhase) {
  const auto ds = linear_data(3.0);
  const auto plain = fit_constants(parse_prefix(parse_text("mul x1 x1")), ds);
  EXPECT_TRUE(plain.consts.empty());
  EXPECT_EQ(*plain.nmse, *nmse(parse_prefix(parse_text("mul x1 x1")), {}, ds));

  const auto sd = sample_dataset(parse_infix("sin(x1 + 1.3)"), SamplingSpec::parse("U(0,2,20)"), 1, Split::Train, 2);
  const auto fit = fit_constants(parse_prefix(parse_text("sin add x1 const")), sd);
  ASSERT_EQ(fit.consts.size(), 1u);
  const double two_pi = 2 * std::acos(-1.0);
  const double wrapped = std::remainder(fit.consts[0] - 1.3, two_pi);
  EXPECT_NEAR(wrapped, 0.0, 1e-4);
}

TEST(FitConstants, Nguyen1cSkeleton) {
  const auto& p = find_problem("Nguyen-1c");
  const auto ds = sample_problem_dataset(p, Split::Train, 3);
  const auto skel = parse_prefix(parse_text("add add mul const mul x1 mul x1 x1 mul const mul x1 x1 mul const x1"));
  const auto fit = fit_constants(skel, ds);
  ASSERT_EQ(fit.consts.size(), 3u);
  EXPECT_NEAR(fit.consts[0], 3.39, 1e-3);
  EXPECT_NEAR(fit.consts[1], 2.12, 1e-3);
  EXPECT_NEAR(fit.consts[2], 1.78, 1e-3);
}

TEST(FitConstants, BudgetAccounting) {
  const auto ds = linear_data(3.0);
  Budget budget;
  std::vector<ExprTree> fs;
  for (const char* s : {"mul const x1", "add x1 const", "sin x1", "log sub x1 const", "mul x1 x1"})
    fs.push_back(parse_prefix(parse_text(s)));
  const auto recs = score_all(fs, ds, &budget, 3);
  long total = 0;
  for (const auto& r : recs) {
    total += r.eval_count_delta;
    EXPECT_GE(r.reward, 0.0);
    EXPECT_LE(r.reward, 1.0);
    EXPECT_EQ(r.valid, r.nmse.has_value());
  }
  EXPECT_EQ(total, budget.used.load());
  EXPECT_NEAR(recs[0].reward, 1.0, 1e-9);
  EXPECT_EQ(recs[2].eval_count_delta, 1);
  // Serial and parallel scoring agree.
  Budget serial;
  const auto again = score_all(fs, ds, &serial, 1);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].reward, again[i].reward);
  EXPECT_EQ(serial.used.load(), budget.used.load());
}

TEST(Threads, EnvironmentCap) {
  setenv("DGSR_THREADS", "1", 1);
  EXPECT_EQ(worker_count(), 1);
  setenv("DGSR_THREADS", "junk", 1);
  EXPECT_GE(worker_count(), 1);
  unsetenv("DGSR_THREADS");
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.epsilon = 1;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.q = 0;
  EXPECT_THROW(c.validate(), Error);
}
