#pragma once

#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgsr/evolve.hpp"

namespace dgsr {

struct PretrainConfig {
  TrainConfig train;
  int max_iterations = 1000;  // mini-batches
  int validation_size = 100;  // fixed validation equations held out of the corpus
  int validation_k = 50;      // samples per validation equation
  int validation_every = 10;  // mini-batches between validation passes
  bool ce = false;            // teacher-forced NLL on corpus truths instead of the reward loss
  std::uint64_t seed = 0;
  int threads = 0;

  void validate() const;
};

struct PretrainLogEntry {
  long iteration = 0;
  double loss = 0.0;
  double mean_reward = 0.0;  // unshaped, over the t*k training samples
  std::optional<double> validation;
};

struct PretrainResult {
  std::vector<PretrainLogEntry> log;
  TrainState state;
  bool early_stopped = false;
  double best_validation = 0.0;
};

/// Mean best-of-batch reward of g over (dataset) pairs, k samples each, from a fixed seed.
double validation_reward(const Generator& g, const std::vector<Dataset>& sets, int k, std::uint64_t seed,
                         int threads = 0);

/// Reward-driven pre-training over corpus mini-batches, updating encoder and
/// decoder. Datasets come from the corpus domain with the generator's d.
/// `state` (from a checkpoint) resumes an interrupted run. The last
/// min(validation_size, size/5) corpus entries are held out for early stopping.
/// Throws NonFiniteLoss, InvalidArgument.
PretrainResult pretrain(Generator& g, const Corpus& corpus, const PretrainConfig& cfg,
                        const TrainState* state = nullptr, std::ostream* log = nullptr);

enum class RunStatus { Recovered, BudgetExhausted, Converged };
std::string status_name(RunStatus s);
RunStatus parse_status(const std::string& s);  // throws InvalidArgument

struct TraceRecord {
  long iteration = 0;
  long evaluations = 0;
  double best_reward = 0.0;
  std::string best_prefix;
  std::optional<double> nll;  // ground-truth NLL, benchmark mode every 10 iterations
  double valid_fraction = 0.0;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  RunStatus status = RunStatus::BudgetExhausted;
  long evaluations = 0;                      // budget counter at the end
  std::optional<long> recovered_at;          // budget counter at recovery

  /// One JSON object per iteration plus a final summary line.
  void write_jsonl(std::ostream& out) const;
  static RunTrace read_jsonl(std::istream& in);  // throws Io
};

struct InferConfig {
  TrainConfig train;
  GPConfig gp;
  bool no_gp = false;
  int max_iterations = 0;      // 0 = until budget or recovery
  double recovery_reward = 0.999;
  int nll_every = 10;
  int threads = 0;

  void validate() const;
};

struct InferResult {
  std::vector<int> best_seq;
  ExprTree best_tree;
  std::vector<double> best_consts;
  double best_reward = 0.0;
  RunTrace trace;
  std::vector<Individual> queue;  // final priority-queue contents, reward descending
};

/// Neural-guided GP with priority-queue training of the decoder only. With a
/// truth, stops once the best equation is symbolically equal to it. `trace_out`
/// receives the trace records as they are produced.
InferResult infer(const Dataset& data, Generator& g, const InferConfig& cfg, std::mt19937_64& rng,
                  const Equation* truth = nullptr, std::ostream* trace_out = nullptr);

/// y + eps with eps ~ N(0, alpha * sqrt(sum y^2)); sigma_y is refreshed.
Dataset add_noise(const Dataset& data, double alpha, std::mt19937_64& rng);
/// n rows drawn without replacement, original order kept (n >= rows keeps everything).
Dataset subsample(const Dataset& data, int n, std::mt19937_64& rng);

}  // namespace dgsr
