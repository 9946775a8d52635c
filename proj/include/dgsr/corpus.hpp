#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dgsr/expr.hpp"
#include "dgsr/grammar.hpp"

namespace dgsr {

/// U(a,b,c): c uniform points per variable; E(a,b,c): c evenly spaced points.
struct SamplingSpec {
  char kind = 'U';
  double lo = -1.0;
  double hi = 1.0;
  int count = 20;

  std::string str() const;
  static SamplingSpec parse(const std::string& text);  // throws InvalidArgument
};

struct Dataset {
  Eigen::MatrixXd X;  // n x d
  Eigen::VectorXd y;
  double sigma_y = 0.0;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }
  /// Recomputes sigma_y; throws NonFiniteInput on non-finite entries.
  void refresh();
};

/// Population (divide-by-n) standard deviation.
double population_std(const Eigen::VectorXd& y);

struct ProblemSpec {
  std::string name;
  std::string infix;             // ground truth as written in the benchmark table
  std::optional<Equation> truth;
  LibrarySpec library;
  SamplingSpec sampling;
  int d = 1;
};

enum class Split { Train, Test };

/// All built-in benchmark problems.
const std::vector<ProblemSpec>& registry();
/// Case-sensitive lookup; throws InvalidArgument for unknown names.
const ProblemSpec& find_problem(const std::string& name);

/// Samples X from the spec (seed decides the points; test uses a derived seed
/// for U specs, identical points for E specs) and y = f(X).
/// Throws GroundTruthInvalidOnDomain after 100 invalid resamples.
Dataset sample_dataset(const Equation& truth, const SamplingSpec& spec, int d, Split split,
                       std::uint64_t seed);
Dataset sample_problem_dataset(const ProblemSpec& spec, Split split, std::uint64_t seed);

/// Random equation-tree generator for pre-training corpora.
struct SkeletonSampler {
  int l_min = 3;
  int l_max = 5;
  int d = 2;
  std::vector<std::pair<Op, double>> weights = default_weights();
  double p_variable = 0.8;
  int int_lo = 1;
  int int_hi = 5;
  bool has_const = false;
  double p_promote = 0.5;  // integer leaf -> placeholder when has_const

  static std::vector<std::pair<Op, double>> default_weights();
  void validate() const;
};

/// Samples a tree with l_min..l_max leaves. Placeholder values come from U(-1,1).
Equation sample_skeleton(std::mt19937_64& rng, const SkeletonSampler& sampler);

struct CorpusEntry {
  PrefixSequence tokens;
  std::vector<double> consts;
};

struct CorpusStats {
  long invalid = 0;     // NaN/Inf on the probe sample
  long degenerate = 0;  // constant output on the probe sample
  long holdout = 0;     // symbolically equal to a held-out equation
};

struct Corpus {
  std::string library;
  SamplingSpec domain;
  std::uint64_t seed = 0;
  std::vector<CorpusEntry> entries;
  CorpusStats stats;
};

/// Entry i is drawn from its own stream seeded with seed + i.
/// Throws ExhaustedResampling after 100 consecutive rejections.
Corpus build_pretrain_corpus(int m, const SkeletonSampler& sampler, const SamplingSpec& domain,
                             const std::vector<Equation>& holdouts, std::uint64_t seed,
                             const std::string& library_name);

void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);  // throws VersionMismatch / Io
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

/// Pre-training dataset for one corpus equation: n = 10 * d points from the domain.
Dataset corpus_dataset(const CorpusEntry& entry, const SamplingSpec& domain, int d, std::uint64_t seed);

}  // namespace dgsr
