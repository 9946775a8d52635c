#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "dgsr/corpus.hpp"
#include "dgsr/generator.hpp"

namespace dgsr {

/// Shared equation-evaluation counter.
struct Budget {
  std::atomic<long> used{0};
  long limit = 2'000'000;

  explicit Budget(long lim = 2'000'000) : limit(lim) {}
  bool exhausted() const noexcept { return used.load() >= limit; }
  long remaining() const noexcept { return std::max(0L, limit - used.load()); }
};

struct RewardRecord {
  std::optional<double> nmse;  // nullopt = Invalid
  double reward = 0.0;
  bool valid = false;
  long eval_count_delta = 0;
  std::vector<double> consts;
};

struct TrainConfig {
  int k = 500;
  int t = 5;
  double alpha = 0.5;        // EWMA baseline weight
  double lambda_h = 0.003;   // entropy weight
  double gamma_h = 0.9;      // per-position entropy decay
  double lr = 1e-3;
  double epsilon = 0.02;     // risk quantile
  int q = 10;                // priority queue capacity
  int patience = 100;
  int min_len = 4;
  int max_len = 30;
  double lambda_len = 0.01;
  double len_target = -1.0;  // < 0: midpoint of [min_len, max_len]
  long budget = 2'000'000;

  double length_target() const { return len_target >= 0 ? len_target : 0.5 * (min_len + max_len); }
  void validate() const;  // throws InvalidArgument
};

/// (1/sigma_y) * mean squared error; nullopt when evaluation is invalid.
/// Throws ZeroVariance when sigma_y == 0.
std::optional<double> nmse(const ExprTree& f, std::span<const double> consts, const Dataset& data);
std::optional<double> nmse_of_predictions(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, double sigma_y);
double reward(std::optional<double> nmse);

/// Top-q buffer keyed by canonical form; a key appears at most once.
class MaxRewardQueue {
 public:
  struct Entry {
    std::string key;
    double reward;
    std::vector<int> seq;
  };

  explicit MaxRewardQueue(int capacity);

  /// Returns true when the queue changed.
  bool push(const std::string& key, double reward, std::vector<int> seq);
  const std::vector<Entry>& entries() const noexcept { return entries_; }  // reward descending
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  int capacity() const noexcept { return capacity_; }

 private:
  int capacity_;
  std::vector<Entry> entries_;
};

/// Linear-interpolation empirical quantile (p in [0,1]).
double quantile(std::vector<double> values, double p);
/// Indices with reward strictly above the (1 - eps) quantile.
std::vector<int> risk_filter(const std::vector<double>& rewards, double eps);

/// -(1/k) * sum_j (R_j - b) * logp_j over a teacher-forced batch. Rewards are per sequence.
ad::Var vpg_loss(ad::Tape& tape, const TeacherForced& tf, const std::vector<double>& rewards, double baseline);
/// b' = alpha * mean(R) + (1 - alpha) * b.
double update_baseline(double baseline, const std::vector<double>& rewards, double alpha);
/// -(1/|queue|) * sum log p(f) for the queue sequences.
ad::Var pqt_loss(ad::Tape& tape, const TeacherForced& tf);
/// -lambda_h * (1/B) * sum_b sum_i gamma^i * H_{b,i}.
ad::Var entropy_loss(ad::Tape& tape, const TeacherForced& tf, double lambda_h, double gamma_h);
/// Reward shaping from the soft length prior: lambda_len * (len - target)^2.
double length_penalty(int len, const TrainConfig& cfg);
/// Entropy regularizer value for recorded sampling statistics (no gradient).
double entropy_term(const SampleBatch& batch, double lambda_h, double gamma_h);

/// In-place adaptive-moment step. Tensors whose group is not enabled are left
/// untouched. Throws NonFiniteGradient.
void grad_step(GeneratorParams& params, const std::vector<Eigen::MatrixXd>& grads, AdamState& state,
               bool update_encoder = true, bool update_decoder = true);

struct FitResult {
  std::vector<double> consts;
  std::optional<double> nmse;
  long evaluations = 0;
};

/// BFGS over the placeholders from an all-ones start with central-difference
/// gradients. Every objective evaluation is charged to `budget` (if given).
FitResult fit_constants(const ExprTree& skeleton, const Dataset& data, Budget* budget = nullptr,
                        int max_iter = 100);

/// Fits constants (if any) and scores one equation; eval_count_delta includes the final evaluation.
RewardRecord score(const ExprTree& f, const Dataset& data, Budget* budget = nullptr);

/// Worker count: DGSR_THREADS when set (>= 1), else hardware concurrency.
int worker_count();
/// Scores many equations in parallel (results in input order).
std::vector<RewardRecord> score_all(const std::vector<ExprTree>& fs, const Dataset& data, Budget* budget,
                                    int threads = 0);

}  // namespace dgsr
