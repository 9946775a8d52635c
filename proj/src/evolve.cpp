#include "dgsr/evolve.hpp"

#include <algorithm>
#include <map>

#include "dgsr/canonical.hpp"

namespace dgsr {

void GPConfig::validate() const {
  auto bad = [](const std::string& w) { throw Error(Errc::InvalidArgument, w); };
  if (generations < 1) bad("generations must be >= 1");
  if (crossover_prob < 0 || crossover_prob > 1) bad("crossover_prob must be in [0, 1]");
  if (mutation_prob < 0 || mutation_prob > 1) bad("mutation_prob must be in [0, 1]");
  if (tournament_size < 2) bad("tournament_size must be >= 2");
  if (mutate_tree_max < 0) bad("mutate_tree_max must be >= 0");
  if (elites < 1) bad("elites must be >= 1");
}

const std::string& FitnessCache::key_of(const std::vector<int>& seq, const LibrarySpec& lib) {
  const std::string text = to_text(to_tokens(seq, lib));
  auto it = keys_.find(text);
  if (it != keys_.end()) return it->second;
  return keys_.emplace(text, canonical_key(parse_prefix(to_tokens(seq, lib)))).first->second;
}

const RewardRecord* FitnessCache::find(const std::string& key) const {
  auto it = records_.find(key);
  return it == records_.end() ? nullptr : &it->second;
}

int subtree_end(const std::vector<int>& seq, int i, const LibrarySpec& lib) {
  int open = 1;
  int j = i;
  while (open > 0 && j < static_cast<int>(seq.size())) {
    open += lib.tokens[static_cast<std::size_t>(seq[static_cast<std::size_t>(j)])].arity() - 1;
    ++j;
  }
  return j;
}

namespace {

bool acceptable(const std::vector<int>& s, const LibrarySpec& lib) {
  const int n = static_cast<int>(s.size());
  return n >= lib.min_len && n <= lib.max_len && satisfies_constraints(s, lib);
}

std::vector<int> splice(const std::vector<int>& base, int i, int end, const std::vector<int>& piece, int pi,
                        int pend) {
  std::vector<int> out(base.begin(), base.begin() + i);
  out.insert(out.end(), piece.begin() + pi, piece.begin() + pend);
  out.insert(out.end(), base.begin() + end, base.end());
  return out;
}

std::vector<int> tokens_with_arity(const LibrarySpec& lib, int arity) {
  std::vector<int> out;
  for (std::size_t i = 0; i < lib.size(); ++i)
    if (lib.tokens[i].arity() == arity) out.push_back(static_cast<int>(i));
  return out;
}

int pick(const std::vector<int>& v, std::mt19937_64& rng) {
  return v[static_cast<std::size_t>(rng() % v.size())];
}

void grow(const LibrarySpec& lib, int depth, std::mt19937_64& rng, std::vector<int>& out) {
  const int tok = depth <= 0 ? pick(tokens_with_arity(lib, 0), rng)
                             : static_cast<int>(rng() % lib.size());
  out.push_back(tok);
  for (int c = 0; c < lib.tokens[static_cast<std::size_t>(tok)].arity(); ++c) grow(lib, depth - 1, rng, out);
}

}  // namespace

std::vector<int> random_subtree(const LibrarySpec& lib, int max_depth, std::mt19937_64& rng) {
  std::vector<int> out;
  grow(lib, max_depth, rng, out);
  return out;
}

bool crossover(const std::vector<int>& a, const std::vector<int>& b, const LibrarySpec& lib, std::mt19937_64& rng,
               std::vector<int>& child_a, std::vector<int>& child_b) {
  // Identical parents exchange identical material.
  if (a == b) return false;
  bool any = false;
  std::vector<int> ca = a, cb = b;
  for (int attempt = 0; attempt < 3; ++attempt) {
    const int i = static_cast<int>(rng() % a.size());
    const int j = static_cast<int>(rng() % b.size());
    const int ie = subtree_end(a, i, lib);
    const int je = subtree_end(b, j, lib);
    auto x = splice(a, i, ie, b, j, je);
    auto y = splice(b, j, je, a, i, ie);
    const bool okx = acceptable(x, lib);
    const bool oky = acceptable(y, lib);
    if (okx || oky) {
      if (okx) ca = std::move(x);
      if (oky) cb = std::move(y);
      any = true;
      break;
    }
  }
  if (!any) return false;
  child_a = std::move(ca);
  child_b = std::move(cb);
  return true;
}

bool mutate(const std::vector<int>& parent, const LibrarySpec& lib, int max_depth, std::mt19937_64& rng,
            std::vector<int>& out) {
  for (int attempt = 0; attempt < 3; ++attempt) {
    const int i = static_cast<int>(rng() % parent.size());
    const int ie = subtree_end(parent, i, lib);
    const Token& tok = lib.tokens[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])];
    std::vector<int> cand;
    switch (rng() % 4) {
      case 0: {  // uniform: regenerate the subtree
        const auto sub = random_subtree(lib, static_cast<int>(rng() % static_cast<unsigned>(max_depth + 1)), rng);
        cand = splice(parent, i, ie, sub, 0, static_cast<int>(sub.size()));
        break;
      }
      case 1: {  // node replacement with a token of equal arity
        const auto same = tokens_with_arity(lib, tok.arity());
        cand = parent;
        cand[static_cast<std::size_t>(i)] = pick(same, rng);
        break;
      }
      case 2: {  // insertion: wrap the subtree in a new operator
        const auto unary = tokens_with_arity(lib, 1);
        const auto binary = tokens_with_arity(lib, 2);
        const auto terms = tokens_with_arity(lib, 0);
        std::vector<int> sub;
        const bool use_unary = !unary.empty() && (binary.empty() || rng() % 2 == 0);
        if (use_unary) {
          sub.push_back(pick(unary, rng));
          sub.insert(sub.end(), parent.begin() + i, parent.begin() + ie);
        } else if (!binary.empty()) {
          sub.push_back(pick(binary, rng));
          const int leaf = pick(terms, rng);
          if (rng() % 2) {
            sub.insert(sub.end(), parent.begin() + i, parent.begin() + ie);
            sub.push_back(leaf);
          } else {
            sub.push_back(leaf);
            sub.insert(sub.end(), parent.begin() + i, parent.begin() + ie);
          }
        } else {
          continue;
        }
        cand = splice(parent, i, ie, sub, 0, static_cast<int>(sub.size()));
        break;
      }
      default: {  // shrink: replace an operator by one of its children
        if (tok.arity() == 0) continue;
        int c = i + 1;
        if (tok.arity() == 2 && rng() % 2) c = subtree_end(parent, i + 1, lib);
        cand = splice(parent, i, ie, parent, c, subtree_end(parent, c, lib));
        break;
      }
    }
    if (cand != parent && acceptable(cand, lib)) {
      out = std::move(cand);
      return true;
    }
  }
  return false;
}

std::vector<Individual> evaluate_population(const std::vector<std::vector<int>>& seqs, const LibrarySpec& lib,
                                            const Dataset& data, FitnessCache& cache, Budget& budget,
                                            int threads) {
  std::vector<Individual> out(seqs.size());
  std::vector<ExprTree> fresh;
  std::vector<std::string> fresh_keys;
  std::map<std::string, std::size_t> pending;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out[i].seq = seqs[i];
    out[i].key = cache.key_of(seqs[i], lib);
    if (!cache.find(out[i].key) && !pending.count(out[i].key)) {
      pending.emplace(out[i].key, fresh.size());
      fresh.push_back(parse_prefix(to_tokens(seqs[i], lib)));
      fresh_keys.push_back(out[i].key);
    }
  }
  if (!fresh.empty()) {
    auto recs = score_all(fresh, data, &budget, threads);
    for (std::size_t i = 0; i < recs.size(); ++i) cache.insert(fresh_keys[i], std::move(recs[i]));
  }
  for (auto& ind : out) ind.rec = *cache.find(ind.key);
  return out;
}

std::vector<Individual> gp_refine(const std::vector<std::vector<int>>& seeds, const LibrarySpec& lib,
                                  const Dataset& data, const GPConfig& cfg, Budget& budget, std::mt19937_64& rng,
                                  FitnessCache* shared_cache, int threads) {
  cfg.validate();
  if (seeds.empty()) throw Error(Errc::InvalidArgument, "GP needs a non-empty seed population");
  FitnessCache local;
  FitnessCache& cache = shared_cache ? *shared_cache : local;
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::vector<Individual> pop = evaluate_population(seeds, lib, data, cache, budget, threads);
  std::map<std::string, Individual> seen;
  auto remember = [&](const std::vector<Individual>& v) {
    for (const auto& ind : v) {
      auto it = seen.find(ind.key);
      if (it == seen.end()) seen.emplace(ind.key, ind);
    }
  };
  remember(pop);
  const std::size_t n = pop.size();

  for (int gen = 0; gen < cfg.generations && !budget.exhausted(); ++gen) {
    // Tournament selection.
    std::vector<std::vector<int>> off(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = static_cast<std::size_t>(rng() % n);
      for (int t = 1; t < cfg.tournament_size; ++t) {
        const std::size_t c = static_cast<std::size_t>(rng() % n);
        if (pop[c].rec.reward > pop[best].rec.reward) best = c;
      }
      off[i] = pop[best].seq;
    }
    for (std::size_t i = 1; i < n; i += 2)
      if (u01(rng) < cfg.crossover_prob) {
        std::vector<int> a, b;
        if (crossover(off[i - 1], off[i], lib, rng, a, b)) {
          off[i - 1] = std::move(a);
          off[i] = std::move(b);
        }
      }
    for (auto& s : off)
      if (u01(rng) < cfg.mutation_prob) {
        std::vector<int> m;
        if (mutate(s, lib, cfg.mutate_tree_max, rng, m)) s = std::move(m);
      }
    auto next = evaluate_population(off, lib, data, cache, budget, threads);
    // Elitism: the best individual so far stays in the population.
    const auto best_old = std::max_element(pop.begin(), pop.end(), [](const Individual& a, const Individual& b) {
      return a.rec.reward < b.rec.reward;
    });
    const auto worst_new = std::min_element(next.begin(), next.end(), [](const Individual& a, const Individual& b) {
      return a.rec.reward < b.rec.reward;
    });
    const auto best_new = std::max_element(next.begin(), next.end(), [](const Individual& a, const Individual& b) {
      return a.rec.reward < b.rec.reward;
    });
    if (best_new->rec.reward < best_old->rec.reward) *worst_new = *best_old;
    pop = std::move(next);
    remember(pop);
  }

  std::vector<Individual> all;
  all.reserve(seen.size());
  for (auto& [k, ind] : seen) all.push_back(std::move(ind));
  std::stable_sort(all.begin(), all.end(),
                   [](const Individual& a, const Individual& b) { return a.rec.reward > b.rec.reward; });
  all.resize(std::min(all.size(), std::min(n, static_cast<std::size_t>(cfg.elites))));
  return all;
}

}  // namespace dgsr
