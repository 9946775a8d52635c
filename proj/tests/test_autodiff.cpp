#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "dgsr/autodiff.hpp"

using dgsr::ad::Mat;
using dgsr::ad::Tape;
using dgsr::ad::Var;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Mat random_mat(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Scalar objective: sum(out .* W) with a fixed random W so every output entry matters.
double objective(const std::vector<Mat>& inputs, const Builder& build, const Mat* w, Tape* keep = nullptr,
                 std::vector<Var>* vars = nullptr) {
  Tape local;
  Tape& t = keep ? *keep : local;
  std::vector<Var> in;
  for (const auto& m : inputs) in.push_back(t.leaf(m, true));
  const Var out = build(t, in);
  const Var s = t.dot(out, *w);
  if (keep) {
    t.backward(s);
    *vars = in;
  }
  return t.value(s)(0, 0);
}

// Max relative error between analytic and central-difference gradients.
double grad_check(std::vector<Mat> inputs, const Builder& build, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape probe;
  std::vector<Var> pv;
  for (const auto& m : inputs) pv.push_back(probe.leaf(m, false));
  const Mat& shape = probe.value(build(probe, pv));
  const Mat w = random_mat(rng, static_cast<int>(shape.rows()), static_cast<int>(shape.cols()));

  Tape t;
  std::vector<Var> vars;
  objective(inputs, build, &w, &t, &vars);
  double worst = 0.0;
  const double h = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k](i);
      inputs[k](i) = orig + h;
      const double fp = objective(inputs, build, &w);
      inputs[k](i) = orig - h;
      const double fm = objective(inputs, build, &w);
      inputs[k](i) = orig;
      const double fd = (fp - fm) / (2 * h);
      const Mat& g = t.grad(vars[k]);
      const double an = g.size() ? g(i) : 0.0;
      const double err = std::fabs(an - fd) / std::max(1e-6, std::max(std::fabs(an), std::fabs(fd)));
      if (std::fabs(an - fd) > 1e-8) worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST(Autodiff, LinearAndElementwise) {
  std::mt19937_64 rng(1);
  const Mat x = random_mat(rng, 5, 4), w = random_mat(rng, 4, 3), b = random_mat(rng, 1, 3);
  EXPECT_LE(grad_check({x, w, b}, [](Tape& t, const std::vector<Var>& v) { return t.linear(v[0], v[1], v[2]); }, 2),
            1e-4);
  EXPECT_LE(grad_check({x, random_mat(rng, 6, 4)},
                       [](Tape& t, const std::vector<Var>& v) { return t.matmul_nt(v[0], v[1]); }, 3),
            1e-4);
  EXPECT_LE(grad_check({x, random_mat(rng, 5, 4)},
                       [](Tape& t, const std::vector<Var>& v) {
                         return t.scale(t.cmul(t.add(v[0], v[1]), v[0]), 0.7);
                       },
                       4),
            1e-4);
  EXPECT_LE(grad_check({x}, [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); }, 5), 1e-4);
  EXPECT_LE(grad_check({x}, [](Tape& t, const std::vector<Var>& v) { return t.sum(v[0]); }, 6), 1e-4);
}

TEST(Autodiff, LayerNormSoftmax) {
  std::mt19937_64 rng(2);
  const Mat x = random_mat(rng, 4, 6), g = random_mat(rng, 1, 6), b = random_mat(rng, 1, 6);
  EXPECT_LE(grad_check({x, g, b},
                       [](Tape& t, const std::vector<Var>& v) { return t.layer_norm(v[0], v[1], v[2]); }, 7),
            1e-4);
  EXPECT_LE(grad_check({x}, [](Tape& t, const std::vector<Var>& v) { return t.softmax_rows(v[0]); }, 8), 1e-4);
}

TEST(Autodiff, GatherRepeatConcat) {
  std::mt19937_64 rng(3);
  const Mat table = random_mat(rng, 5, 3), other = random_mat(rng, 6, 2);
  EXPECT_LE(grad_check({table, other},
                       [](Tape& t, const std::vector<Var>& v) {
                         const Var g = t.gather_rows(v[0], {0, 2, 2, 4, 1, 0});
                         return t.concat_cols(g, v[1]);
                       },
                       9),
            1e-4);
  EXPECT_LE(grad_check({random_mat(rng, 2, 3)},
                       [](Tape& t, const std::vector<Var>& v) { return t.repeat_rows(v[0], 3); }, 10),
            1e-4);
}

TEST(Autodiff, CausalAttention) {
  std::mt19937_64 rng(4);
  const Mat q = random_mat(rng, 8, 4), k = random_mat(rng, 8, 4), v = random_mat(rng, 8, 4);
  EXPECT_LE(grad_check({q, k, v},
                       [](Tape& t, const std::vector<Var>& in) { return t.causal_attention(in[0], in[1], in[2], 4); },
                       11),
            1e-4);
  // Row 0 of each block only sees itself.
  Tape t;
  const Var o = t.causal_attention(t.leaf(q), t.leaf(k), t.leaf(v), 4);
  EXPECT_NEAR((t.value(o).row(0) - v.row(0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((t.value(o).row(4) - v.row(4)).norm(), 0.0, 1e-15);
}

TEST(Autodiff, MaskedLogSoftmaxPickEntropy) {
  std::mt19937_64 rng(5);
  const Mat z = random_mat(rng, 4, 5);
  Mat mask = Mat::Ones(4, 5);
  mask(0, 1) = mask(0, 3) = 0;
  mask(2, 0) = mask(2, 1) = mask(2, 2) = mask(2, 3) = 0;  // single allowed entry
  EXPECT_LE(grad_check({z},
                       [&](Tape& t, const std::vector<Var>& v) {
                         const Var lp = t.masked_log_softmax(v[0], mask);
                         return t.concat_cols(t.pick(lp, {0, 2, 4, 1}), t.masked_entropy(lp, mask));
                       },
                       12),
            1e-4);
  Tape t;
  const Var lp = t.masked_log_softmax(t.leaf(z), mask);
  const Var h = t.masked_entropy(lp, mask);
  EXPECT_EQ(t.value(lp)(0, 1), 0.0);
  EXPECT_NEAR(t.value(lp)(2, 4), 0.0, 1e-15);
  EXPECT_NEAR(t.value(h)(2, 0), 0.0, 1e-15);  // deterministic row has no entropy
  double total = 0;
  for (int c = 0; c < 5; ++c)
    if (mask(0, c) != 0) total += std::exp(t.value(lp)(0, c));
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(Autodiff, SharedInputAccumulates) {
  Tape t;
  Mat a(1, 1);
  a(0, 0) = 3.0;
  const Var x = t.leaf(a, true);
  const Var y = t.sum(t.cmul(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 6.0);
}
