#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dgsr/pipeline.hpp"

namespace dgsr {

/// Percentages in [0, 100]; ci is the half-width of the 95% interval.
struct RecoveryRate {
  double rate = 0.0;
  double ci = 0.0;
};

/// Fraction Recovered with the normal-approximation interval 1.96*sqrt(p(1-p)/n).
RecoveryRate recovery_rate(const std::vector<RunTrace>& traces);
/// Per-problem rates and intervals, each averaged across problems.
RecoveryRate recovery_rate(const std::vector<std::vector<RunTrace>>& per_problem);

/// 1 - SS_res / SS_tot. Throws ZeroVariance, ShapeMismatch.
double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);
/// 1 when max |(yhat - y) / y| <= tau. Throws DivisionByZeroTarget, ShapeMismatch.
int acc_tau(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, double tau);

struct ParetoPoint {
  int complexity = 0;
  double nmse = 0.0;
  std::string equation;
};

/// Non-dominated points (minimising both), complexity ascending, NMSE strictly
/// decreasing. Non-finite NMSE values are dropped.
std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> candidates);

/// Everything a finished run leaves in its directory (result.json).
struct RunResult {
  std::string problem;
  std::uint64_t seed = 0;
  std::string prefix;  // best equation
  std::vector<double> consts;
  std::string infix;
  double best_reward = 0.0;
  RunStatus status = RunStatus::BudgetExhausted;
  long evaluations = 0;
  std::optional<long> recovered_at;
  std::vector<std::pair<std::string, std::vector<double>>> candidates;  // final queue

  std::string to_json() const;
  static RunResult from_json(const std::string& text);  // throws Io
};

struct ProblemReport {
  std::string name;
  int runs = 0;
  int recovered = 0;
  RecoveryRate recovery;
  std::optional<double> gamma;      // mean budget counter at recovery; nullopt = DNF
  std::optional<double> test_nmse;  // median over runs; nullopt when every run is invalid
  std::optional<double> r2;         // median over runs
  double acc_tau = 0.0;             // fraction of runs within tolerance
  std::vector<ParetoPoint> pareto;
};

struct BenchReport {
  std::vector<ProblemReport> problems;
  RecoveryRate recovery;
  double tau = 0.05;
  std::string ci_method;

  void write_csv(std::ostream& out) const;
  std::string to_json() const;
};

/// Scores each run's equation on the problem's test split and aggregates.
/// Runs are grouped by problem name (first-seen order). Throws InvalidArgument
/// for empty input or unknown problems.
BenchReport build_report(const std::vector<RunResult>& runs, double tau = 0.05, std::uint64_t test_seed = 0);

/// Plot-ready Pareto table: complexity,nmse,equation.
void write_pareto_csv(const std::vector<ParetoPoint>& front, std::ostream& out);

}  // namespace dgsr
