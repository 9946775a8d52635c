#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgsr/optim.hpp"

namespace dgsr {

struct GPConfig {
  int generations = 25;
  double crossover_prob = 0.5;
  double mutation_prob = 0.5;
  int tournament_size = 5;
  int mutate_tree_max = 3;  // max depth of a regenerated subtree
  int elites = 50;          // cap on individuals returned

  void validate() const;  // throws InvalidArgument
};

struct Individual {
  std::vector<int> seq;  // library indices
  std::string key;       // canonical form
  RewardRecord rec;
};

/// Canonical-key fitness cache. Only the first evaluation of a key is charged.
class FitnessCache {
 public:
  /// Canonical key of a sequence (memoised by prefix text).
  const std::string& key_of(const std::vector<int>& seq, const LibrarySpec& lib);
  const RewardRecord* find(const std::string& key) const;
  void insert(const std::string& key, RewardRecord rec) { records_.emplace(key, std::move(rec)); }
  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::unordered_map<std::string, std::string> keys_;
  std::unordered_map<std::string, RewardRecord> records_;
};

/// Subtree end (exclusive) of position i in a complete prefix sequence.
int subtree_end(const std::vector<int>& seq, int i, const LibrarySpec& lib);

// Variation operators. Each returns false (leaving out untouched) when three
// attempts all violate the grammar constraints or length bounds.
bool crossover(const std::vector<int>& a, const std::vector<int>& b, const LibrarySpec& lib, std::mt19937_64& rng,
               std::vector<int>& child_a, std::vector<int>& child_b);
bool mutate(const std::vector<int>& parent, const LibrarySpec& lib, int max_depth, std::mt19937_64& rng,
            std::vector<int>& out);
/// Random subtree of depth <= max_depth (a single terminal at depth 0).
std::vector<int> random_subtree(const LibrarySpec& lib, int max_depth, std::mt19937_64& rng);

/// Tournament-selection GP seeded with generator samples. Returns up to
/// min(population, elites) unique best individuals seen, reward descending.
std::vector<Individual> gp_refine(const std::vector<std::vector<int>>& seeds, const LibrarySpec& lib,
                                  const Dataset& data, const GPConfig& cfg, Budget& budget, std::mt19937_64& rng,
                                  FitnessCache* cache = nullptr, int threads = 0);

/// Scores sequences through the cache; new keys are evaluated in parallel and charged.
std::vector<Individual> evaluate_population(const std::vector<std::vector<int>>& seqs, const LibrarySpec& lib,
                                            const Dataset& data, FitnessCache& cache, Budget& budget,
                                            int threads = 0);

}  // namespace dgsr
