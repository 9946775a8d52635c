#include "dgsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dgsr/canonical.hpp"

namespace dgsr {

using json = nlohmann::json;

void PretrainConfig::validate() const {
  train.validate();
  auto bad = [](const std::string& w) { throw Error(Errc::InvalidArgument, w); };
  if (max_iterations < 0) bad("max_iterations must be >= 0");
  if (validation_size < 1) bad("validation_size must be >= 1");
  if (validation_k < 1) bad("validation_k must be >= 1");
  if (validation_every < 1) bad("validation_every must be >= 1");
}

void InferConfig::validate() const {
  train.validate();
  if (!no_gp) gp.validate();
  auto bad = [](const std::string& w) { throw Error(Errc::InvalidArgument, w); };
  if (max_iterations < 0) bad("max_iterations must be >= 0");
  if (!(recovery_reward > 0.0 && recovery_reward <= 1.0)) bad("recovery_reward must be in (0, 1]");
  if (nll_every < 1) bad("nll_every must be >= 1");
}

namespace {

std::vector<ExprTree> trees_of(const std::vector<std::vector<int>>& seqs, const LibrarySpec& lib) {
  std::vector<ExprTree> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(parse_prefix(to_tokens(s, lib)));
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string hex(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

// Trainer fields that are not part of TrainState proper.
struct PretrainExtra {
  double best = -1.0;
  long bad = 0;
  std::mt19937_64 rng;
};

std::string encode_extra(const PretrainExtra& e) {
  std::ostringstream os;
  os << hex(e.best) << ' ' << e.bad << ' ' << e.rng;
  return os.str();
}

PretrainExtra decode_extra(const std::string& s) {
  PretrainExtra e;
  std::istringstream is(s);
  std::string best;
  if (!(is >> best >> e.bad >> e.rng)) throw Error(Errc::InvalidArgument, "unreadable pre-training state");
  e.best = std::strtod(best.c_str(), nullptr);
  return e;
}

// powN(a) -> mul a mul a ... a, for libraries without the power tokens.
PrefixSequence expand_powers(const PrefixSequence& toks, const LibrarySpec& lib) {
  const ExprTree t = parse_prefix(toks);
  PrefixSequence out;
  auto emit = [&](auto&& self, int i) -> void {
    const Token tok = t.node(i).token;
    const int n = tok.op == Op::Pow2 ? 2 : tok.op == Op::Pow3 ? 3 : tok.op == Op::Pow4 ? 4 : tok.op == Op::Pow5 ? 5 : 0;
    if (n == 0 || lib.index_of(tok) >= 0) {
      out.push_back(tok);
      for (int c = 0; c < tok.arity(); ++c) self(self, t.node(i).children[static_cast<std::size_t>(c)]);
      return;
    }
    for (int r = 1; r < n; ++r) {
      out.push_back(Token::op_token(Op::Mul));
      self(self, t.node(i).children[0]);
    }
    self(self, t.node(i).children[0]);
  };
  emit(emit, 0);
  return out;
}

std::optional<std::vector<int>> expressible(const PrefixSequence& toks, const LibrarySpec& lib) {
  try {
    auto s = to_indices(expand_powers(toks, lib), lib);
    if (!satisfies_constraints(s, lib)) return std::nullopt;
    return s;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

double validation_reward(const Generator& g, const std::vector<Dataset>& sets, int k, std::uint64_t seed,
                         int threads) {
  if (sets.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::mt19937_64 rng(seed + i);
    const auto batch = g.sample_batch(sets[i], k, rng);
    const auto recs = score_all(trees_of(batch.seqs, g.library()), sets[i], nullptr, threads);
    double best = 0.0;
    for (const auto& r : recs) best = std::max(best, r.reward);
    total += best;
  }
  return total / static_cast<double>(sets.size());
}

PretrainResult pretrain(Generator& g, const Corpus& corpus, const PretrainConfig& cfg, const TrainState* state,
                        std::ostream* log) {
  cfg.validate();
  if (corpus.entries.empty()) throw Error(Errc::InvalidArgument, "pre-training corpus is empty");
  const LibrarySpec& lib = g.library();
  const int d = lib.d;
  const TrainConfig& tc = cfg.train;

  const std::size_t size = corpus.entries.size();
  const std::size_t nval =
      size == 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(cfg.validation_size), std::max<std::size_t>(1, size / 5));
  const std::size_t ntrain = size == 1 ? 1 : size - nval;

  std::vector<Dataset> val_sets;
  for (std::size_t i = size - nval; i < size; ++i) {
    try {
      val_sets.push_back(corpus_dataset(corpus.entries[i], corpus.domain, d, cfg.seed * 7919 + 104729 + i));
    } catch (const Error&) {
      // entry invalid on this draw of the domain
    }
  }
  const std::uint64_t val_seed = cfg.seed * 7919 + 1;

  PretrainResult res;
  PretrainExtra extra;
  extra.rng.seed(cfg.seed);
  if (state) {
    res.state = *state;
    extra = decode_extra(state->extra);
  } else {
    res.state.adam.lr = tc.lr;
  }
  TrainState& st = res.state;

  auto emit = [&](const PretrainLogEntry& e) {
    res.log.push_back(e);
    if (!log) return;
    json j{{"iteration", e.iteration}, {"loss", e.loss}, {"mean_reward", e.mean_reward}};
    if (e.validation) j["validation"] = *e.validation;
    *log << j.dump() << '\n';
  };

  if (extra.best < 0) {
    extra.best = validation_reward(g, val_sets, cfg.validation_k, val_seed, cfg.threads);
    PretrainLogEntry e;
    e.iteration = st.iteration;
    e.validation = extra.best;
    emit(e);
  }

  while (st.iteration < cfg.max_iterations) {
    // Draw the t datasets and (reward mode) their samples.
    struct Item {
      Dataset data;
      std::vector<std::vector<int>> seqs;
      std::vector<double> shaped;
    };
    std::vector<Item> items;
    std::vector<double> raw;
    for (int i = 0; i < tc.t; ++i) {
      const CorpusEntry& entry = corpus.entries[extra.rng() % ntrain];
      const std::uint64_t ds_seed = extra.rng();
      Item it;
      try {
        it.data = corpus_dataset(entry, corpus.domain, d, ds_seed);
      } catch (const Error&) {
        continue;
      }
      if (cfg.ce) {
        auto s = expressible(entry.tokens, lib);
        if (!s) continue;
        it.seqs.push_back(std::move(*s));
      } else {
        const auto batch = g.sample_batch(it.data, tc.k, extra.rng);
        it.seqs = batch.seqs;
        const auto recs = score_all(trees_of(it.seqs, lib), it.data, nullptr, cfg.threads);
        for (std::size_t j = 0; j < recs.size(); ++j) {
          raw.push_back(recs[j].reward);
          it.shaped.push_back(recs[j].reward - length_penalty(static_cast<int>(it.seqs[j].size()), tc));
        }
      }
      items.push_back(std::move(it));
    }
    ++st.iteration;
    PretrainLogEntry entry;
    entry.iteration = st.iteration;
    entry.mean_reward = mean(raw);

    if (!items.empty()) {
      if (!cfg.ce) {
        std::vector<double> all;
        for (const auto& it : items) all.insert(all.end(), it.shaped.begin(), it.shaped.end());
        if (!st.has_baseline) {
          st.baseline = mean(all);
          st.has_baseline = true;
        }
      }
      ad::Tape tape;
      const auto pv = g.bind(tape, true, true);
      std::optional<ad::Var> total;
      for (const auto& it : items) {
        const auto V = g.encode_on(tape, pv, it.data);
        const int b = static_cast<int>(it.seqs.size());
        const auto tf = g.teacher_forced(tape, pv, tape.repeat_rows(V, b), it.seqs);
        ad::Var l = cfg.ce ? pqt_loss(tape, tf)
                           : tape.add(vpg_loss(tape, tf, it.shaped, st.baseline),
                                      entropy_loss(tape, tf, tc.lambda_h, tc.gamma_h));
        total = total ? tape.add(*total, l) : l;
      }
      const ad::Var loss = tape.scale(*total, 1.0 / static_cast<double>(items.size()));
      entry.loss = tape.value(loss)(0, 0);
      if (!std::isfinite(entry.loss)) {
        std::ostringstream os;
        os << "loss " << entry.loss << " at iteration " << st.iteration << " (mean reward " << entry.mean_reward
           << ", baseline " << st.baseline << ", parameters finite: " << g.params().all_finite() << ")";
        throw Error(Errc::NonFiniteLoss, os.str());
      }
      tape.backward(loss);
      grad_step(g.params(), g.gradients(tape, pv), st.adam, true, true);
      if (!cfg.ce) {
        std::vector<double> all;
        for (const auto& it : items) all.insert(all.end(), it.shaped.begin(), it.shaped.end());
        st.baseline = update_baseline(st.baseline, all, tc.alpha);
      }
    }

    bool stop = false;
    if (st.iteration % cfg.validation_every == 0 || st.iteration == cfg.max_iterations) {
      const double v = validation_reward(g, val_sets, cfg.validation_k, val_seed, cfg.threads);
      entry.validation = v;
      if (v > extra.best) {
        extra.best = v;
        extra.bad = 0;
      } else {
        extra.bad += cfg.validation_every;
        stop = extra.bad >= tc.patience;
      }
    }
    emit(entry);
    if (stop) {
      res.early_stopped = true;
      break;
    }
  }
  res.best_validation = extra.best;
  st.extra = encode_extra(extra);
  return res;
}

std::string status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Recovered: return "Recovered";
    case RunStatus::BudgetExhausted: return "BudgetExhausted";
    case RunStatus::Converged: return "Converged";
  }
  return "?";
}

RunStatus parse_status(const std::string& s) {
  for (auto v : {RunStatus::Recovered, RunStatus::BudgetExhausted, RunStatus::Converged})
    if (status_name(v) == s) return v;
  throw Error(Errc::InvalidArgument, "unknown run status '" + s + "'");
}

namespace {

json record_json(const TraceRecord& r) {
  json j{{"iteration", r.iteration},       {"evaluations", r.evaluations}, {"best_reward", r.best_reward},
         {"best_prefix", r.best_prefix},   {"nll", nullptr},               {"valid_fraction", r.valid_fraction}};
  if (r.nll) j["nll"] = *r.nll;
  return j;
}

json summary_json(const RunTrace& t) {
  json j{{"status", status_name(t.status)}, {"evaluations", t.evaluations}, {"recovered_at", nullptr}};
  if (t.recovered_at) j["recovered_at"] = *t.recovered_at;
  return j;
}

}  // namespace

void RunTrace::write_jsonl(std::ostream& out) const {
  for (const auto& r : records) out << record_json(r).dump() << '\n';
  out << summary_json(*this).dump() << '\n';
}

RunTrace RunTrace::read_jsonl(std::istream& in) {
  RunTrace t;
  bool summary = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("status")) {
        t.status = parse_status(j.at("status").get<std::string>());
        t.evaluations = j.at("evaluations").get<long>();
        if (!j.at("recovered_at").is_null()) t.recovered_at = j.at("recovered_at").get<long>();
        summary = true;
      } else {
        TraceRecord r;
        r.iteration = j.at("iteration").get<long>();
        r.evaluations = j.at("evaluations").get<long>();
        r.best_reward = j.at("best_reward").get<double>();
        r.best_prefix = j.at("best_prefix").get<std::string>();
        if (!j.at("nll").is_null()) r.nll = j.at("nll").get<double>();
        r.valid_fraction = j.at("valid_fraction").get<double>();
        t.records.push_back(std::move(r));
      }
    } catch (const json::exception& e) {
      throw Error(Errc::Io, std::string("bad trace line: ") + e.what());
    }
  }
  if (!summary) throw Error(Errc::Io, "trace has no summary line");
  return t;
}

InferResult infer(const Dataset& data, Generator& g, const InferConfig& cfg, std::mt19937_64& rng,
                  const Equation* truth, std::ostream* trace_out) {
  cfg.validate();
  const LibrarySpec& lib = g.library();
  if (data.d() != lib.d)
    throw Error(Errc::IncompatibleCheckpoint, "dataset has d=" + std::to_string(data.d()) + " but the generator's library " +
                                                  lib.name + " has d=" + std::to_string(lib.d));
  const TrainConfig& tc = cfg.train;
  const Eigen::RowVectorXd V = g.encode(data);

  Budget budget(tc.budget);
  FitnessCache cache;
  MaxRewardQueue queue(tc.q);
  AdamState adam;
  adam.lr = tc.lr;

  std::optional<std::vector<int>> truth_seq;
  if (truth) truth_seq = expressible(truth->tree.tokens(), lib);
  std::set<std::string> checked;

  InferResult res;
  res.best_reward = -1.0;
  RunTrace& trace = res.trace;
  auto take = [&](const Individual& ind) {
    res.best_seq = ind.seq;
    res.best_tree = parse_prefix(to_tokens(ind.seq, lib));
    res.best_consts = ind.rec.consts;
    res.best_reward = ind.rec.reward;
  };

  for (long it = 0;; ++it) {
    const auto batch = g.sample_batch(V, tc.k, rng);
    auto pool = evaluate_population(batch.seqs, lib, data, cache, budget, cfg.threads);
    long valid = 0;
    for (const auto& ind : pool) valid += ind.rec.valid ? 1 : 0;
    if (!cfg.no_gp && !budget.exhausted()) {
      auto elites = gp_refine(batch.seqs, lib, data, cfg.gp, budget, rng, &cache, cfg.threads);
      pool.insert(pool.end(), std::make_move_iterator(elites.begin()), std::make_move_iterator(elites.end()));
    }
    {
      std::set<std::string> seen;
      std::vector<Individual> uniq;
      for (auto& ind : pool)
        if (seen.insert(ind.key).second) uniq.push_back(std::move(ind));
      pool = std::move(uniq);
    }

    const Individual* iter_best = nullptr;
    for (const auto& ind : pool)
      if (!iter_best || ind.rec.reward > iter_best->rec.reward) iter_best = &ind;
    if (iter_best && iter_best->rec.reward > res.best_reward) take(*iter_best);

    bool recovered = false;
    if (truth) {
      std::vector<const Individual*> cands;
      for (const auto& ind : pool)
        if (ind.rec.reward > cfg.recovery_reward && !checked.count(ind.key)) cands.push_back(&ind);
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Individual* a, const Individual* b) { return a->rec.reward > b->rec.reward; });
      for (const Individual* c : cands) {
        checked.insert(c->key);
        const ExprTree tree = parse_prefix(to_tokens(c->seq, lib));
        if (symbolically_equal(tree, c->rec.consts, truth->tree, truth->consts) == Equivalence::Equal) {
          take(*c);
          recovered = true;
          break;
        }
      }
    }

    std::vector<double> rewards;
    rewards.reserve(pool.size());
    for (const auto& ind : pool) rewards.push_back(ind.rec.reward);
    for (int i : risk_filter(rewards, tc.epsilon)) {
      const auto& ind = pool[static_cast<std::size_t>(i)];
      queue.push(ind.key, ind.rec.reward, ind.seq);
    }
    if (iter_best && iter_best->rec.valid) queue.push(iter_best->key, iter_best->rec.reward, iter_best->seq);

    TraceRecord rec;
    rec.iteration = it;
    rec.evaluations = budget.used.load();
    rec.best_reward = res.best_reward;
    rec.best_prefix = to_text(to_tokens(res.best_seq, lib));
    rec.valid_fraction = static_cast<double>(valid) / static_cast<double>(std::max<std::size_t>(batch.size(), 1));
    if (truth_seq && it % cfg.nll_every == 0) rec.nll = -g.log_prob(V, *truth_seq);
    if (trace_out) *trace_out << record_json(rec).dump() << '\n' << std::flush;
    trace.records.push_back(std::move(rec));

    if (recovered) {
      trace.status = RunStatus::Recovered;
      trace.recovered_at = budget.used.load();
      break;
    }
    if (budget.exhausted()) {
      trace.status = RunStatus::BudgetExhausted;
      break;
    }
    if (cfg.max_iterations > 0 && it + 1 >= cfg.max_iterations) {
      trace.status = RunStatus::Converged;
      break;
    }

    if (!queue.empty()) {
      std::vector<std::vector<int>> seqs;
      for (const auto& e : queue.entries()) seqs.push_back(e.seq);
      ad::Tape tape;
      const auto pv = g.bind(tape, false, true);
      const auto Vleaf = tape.leaf(V, false);
      const auto tf = g.teacher_forced(tape, pv, tape.repeat_rows(Vleaf, static_cast<int>(seqs.size())), seqs);
      const auto loss = tape.add(pqt_loss(tape, tf), entropy_loss(tape, tf, tc.lambda_h, tc.gamma_h));
      if (!std::isfinite(tape.value(loss)(0, 0)))
        throw Error(Errc::NonFiniteLoss, "priority-queue loss at iteration " + std::to_string(it));
      tape.backward(loss);
      grad_step(g.params(), g.gradients(tape, pv), adam, false, true);
    }
  }
  trace.evaluations = budget.used.load();
  for (const auto& e : queue.entries()) res.queue.push_back({e.seq, e.key, *cache.find(e.key)});
  if (trace_out) *trace_out << summary_json(trace).dump() << '\n' << std::flush;
  return res;
}

Dataset add_noise(const Dataset& data, double alpha, std::mt19937_64& rng) {
  if (alpha < 0) throw Error(Errc::InvalidArgument, "noise level must be >= 0");
  Dataset out = data;
  if (alpha == 0) return out;
  const double rms = std::sqrt(data.y.squaredNorm());
  std::normal_distribution<double> eps(0.0, alpha * rms);
  for (Eigen::Index i = 0; i < out.y.size(); ++i) out.y(i) += eps(rng);
  out.refresh();
  return out;
}

Dataset subsample(const Dataset& data, int n, std::mt19937_64& rng) {
  if (n < 1) throw Error(Errc::InvalidArgument, "subsample size must be >= 1");
  if (n >= data.n()) return data;
  std::vector<int> idx(static_cast<std::size_t>(data.n()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(n));
  std::sort(idx.begin(), idx.end());
  Dataset out;
  out.X.resize(n, data.d());
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    out.X.row(i) = data.X.row(idx[static_cast<std::size_t>(i)]);
    out.y(i) = data.y(idx[static_cast<std::size_t>(i)]);
  }
  out.seed = data.seed;
  out.refresh();
  return out;
}

}  // namespace dgsr
