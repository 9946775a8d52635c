#include "dgsr/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "dgsr/canonical.hpp"

namespace dgsr {

std::string SamplingSpec::str() const {
  std::ostringstream os;
  os << kind << '(' << lo << ',' << hi << ',' << count << ')';
  return os.str();
}

SamplingSpec SamplingSpec::parse(const std::string& text) {
  static const std::regex re(R"(\s*([UE])\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*(\d+)\s*\)\s*)");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    throw Error(Errc::InvalidArgument, "bad sampling spec '" + text + "', expected U(a,b,c) or E(a,b,c)");
  SamplingSpec s;
  s.kind = m[1].str()[0];
  s.lo = std::stod(m[2]);
  s.hi = std::stod(m[3]);
  s.count = std::stoi(m[4]);
  if (s.count < 1 || !(s.hi >= s.lo)) throw Error(Errc::InvalidArgument, "bad sampling spec '" + text + "'");
  return s;
}

double population_std(const Eigen::VectorXd& y) {
  if (y.size() == 0) return 0.0;
  const double mean = y.mean();
  return std::sqrt((y.array() - mean).square().mean());
}

void Dataset::refresh() {
  if (!X.allFinite() || !y.allFinite()) throw Error(Errc::NonFiniteInput, "dataset contains NaN or Inf");
  if (X.rows() != y.size()) throw Error(Errc::ShapeMismatch, "X rows and y length differ");
  sigma_y = population_std(y);
}

namespace {

std::uint64_t test_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

Eigen::MatrixXd sample_points(const SamplingSpec& spec, int d, int n, std::mt19937_64& rng) {
  Eigen::MatrixXd X(n, d);
  if (spec.kind == 'E') {
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < n; ++i)
        X(i, k) = n == 1 ? spec.lo : spec.lo + (spec.hi - spec.lo) * i / static_cast<double>(n - 1);
  } else {
    std::uniform_real_distribution<double> u(spec.lo, spec.hi);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) X(i, k) = u(rng);
  }
  return X;
}

}  // namespace

Dataset sample_dataset(const Equation& truth, const SamplingSpec& spec, int d, Split split,
                       std::uint64_t seed) {
  const std::uint64_t s = (spec.kind == 'U' && split == Split::Test) ? test_seed(seed) : seed;
  std::mt19937_64 rng(s);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Dataset ds;
    ds.X = sample_points(spec, d, spec.count, rng);
    auto y = evaluate(truth.tree, ds.X, truth.consts);
    if (y) {
      ds.y = std::move(*y);
      ds.seed = s;
      ds.refresh();
      return ds;
    }
    if (spec.kind == 'E') break;
  }
  throw Error(Errc::GroundTruthInvalidOnDomain,
              to_infix(truth.tree, truth.consts) + " is not finite on " + spec.str());
}

Dataset sample_problem_dataset(const ProblemSpec& spec, Split split, std::uint64_t seed) {
  if (!spec.truth) throw Error(Errc::InvalidArgument, "problem " + spec.name + " has no ground truth");
  return sample_dataset(*spec.truth, spec.sampling, spec.d, split, seed);
}

std::vector<std::pair<Op, double>> SkeletonSampler::default_weights() {
  return {{Op::Add, 10}, {Op::Mul, 10}, {Op::Sub, 5},  {Op::Div, 5},  {Op::Pow2, 4}, {Op::Pow3, 2},
          {Op::Pow4, 1}, {Op::Pow5, 1}, {Op::Log, 4},  {Op::Exp, 4},  {Op::Sin, 4},  {Op::Cos, 4}};
}

void SkeletonSampler::validate() const {
  if (l_min < 1 || l_max < l_min) throw Error(Errc::InvalidArgument, "bad leaf bounds");
  if (d < 1) throw Error(Errc::InvalidArgument, "sampler needs d >= 1");
  bool binary = false;
  for (const auto& [op, w] : weights) {
    if (!(w > 0)) throw Error(Errc::InvalidArgument, "operator weights must be positive");
    binary |= Token::op_token(op).arity() == 2;
  }
  if (!binary && l_max > 1) throw Error(Errc::InvalidArgument, "no binary operator to join leaves");
  if (int_hi < int_lo) throw Error(Errc::InvalidArgument, "bad integer leaf range");
}

namespace {

void random_binary_tree(std::mt19937_64& rng, int leaves, std::vector<Op>& binaries, std::size_t& next_bin,
                        PrefixSequence& out) {
  if (leaves == 1) {
    out.push_back(Token::var(0));  // leaf placeholder, filled in later
    return;
  }
  out.push_back(Token::op_token(binaries[next_bin++]));
  const int left = std::uniform_int_distribution<int>(1, leaves - 1)(rng);
  random_binary_tree(rng, left, binaries, next_bin, out);
  random_binary_tree(rng, leaves - left, binaries, next_bin, out);
}

}  // namespace

Equation sample_skeleton(std::mt19937_64& rng, const SkeletonSampler& s) {
  const int leaves = std::uniform_int_distribution<int>(s.l_min, s.l_max)(rng);

  // Operators are i.i.d. draws from the weight table, stopping once enough
  // binary operators are collected; unary draws along the way are kept.
  std::vector<double> w;
  for (const auto& [op, x] : s.weights) w.push_back(x);
  std::discrete_distribution<int> pick(w.begin(), w.end());
  std::vector<Op> binaries, unaries;
  while (static_cast<int>(binaries.size()) < leaves - 1) {
    const Op op = s.weights[static_cast<std::size_t>(pick(rng))].first;
    (Token::op_token(op).arity() == 2 ? binaries : unaries).push_back(op);
  }

  PrefixSequence seq;
  std::size_t next_bin = 0;
  random_binary_tree(rng, leaves, binaries, next_bin, seq);
  // Each unary wraps the subtree rooted at a uniformly chosen node.
  for (Op u : unaries) {
    const auto at = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
    seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(at), Token::op_token(u));
  }

  std::bernoulli_distribution is_var(s.p_variable);
  std::uniform_int_distribution<int> var(1, s.d);
  std::uniform_int_distribution<int> integer(s.int_lo, s.int_hi);
  std::bernoulli_distribution promote(s.p_promote);
  std::uniform_real_distribution<double> cval(-1.0, 1.0);
  Equation eq;
  for (auto& t : seq) {
    if (t.op != Op::Var || t.value != 0) continue;
    if (is_var(rng)) {
      t = Token::var(var(rng));
    } else if (s.has_const && promote(rng)) {
      t = Token::constant();
      eq.consts.push_back(cval(rng));
    } else {
      t = Token::integer(integer(rng));
    }
  }
  // Relabel so the used variables are exactly x1..xk.
  std::map<int, int> relabel;
  for (const auto& t : seq)
    if (t.op == Op::Var) relabel.emplace(t.value, 0);
  int next = 1;
  for (auto& [from, to] : relabel) to = next++;
  for (auto& t : seq)
    if (t.op == Op::Var) t.value = relabel[t.value];
  eq.tree = parse_prefix(seq);
  return eq;
}

Corpus build_pretrain_corpus(int m, const SkeletonSampler& sampler, const SamplingSpec& domain,
                             const std::vector<Equation>& holdouts, std::uint64_t seed,
                             const std::string& library_name) {
  if (m < 0) throw Error(Errc::InvalidArgument, "negative corpus size");
  sampler.validate();
  Corpus c;
  c.library = library_name;
  c.domain = domain;
  c.seed = seed;
  c.entries.reserve(static_cast<std::size_t>(m));

  // Shared probe points: cheap numeric screen before the symbolic holdout check.
  std::mt19937_64 probe_rng(seed ^ 0xabcdefULL);
  const int n_probe = std::max(10 * sampler.d, domain.count);
  const Eigen::MatrixXd probe = sample_points(domain, sampler.d, n_probe, probe_rng);
  std::vector<std::optional<Eigen::VectorXd>> holdout_vals;
  for (const auto& h : holdouts) {
    if (max_variable(h.tree) > sampler.d) {
      holdout_vals.emplace_back(std::nullopt);
      continue;
    }
    holdout_vals.push_back(evaluate(h.tree, probe, h.consts));
  }
  FalsifierDomain fd;
  fd.bounds.assign(static_cast<std::size_t>(sampler.d), {domain.lo, domain.hi});

  for (int i = 0; i < m; ++i) {
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(i));
    int rejections = 0;
    for (;;) {
      if (rejections >= 100)
        throw Error(Errc::ExhaustedResampling, "100 consecutive rejections at corpus entry " + std::to_string(i));
      Equation eq = sample_skeleton(rng, sampler);
      const auto y = evaluate(eq.tree, probe, eq.consts);
      if (!y) {
        ++c.stats.invalid;
        ++rejections;
        continue;
      }
      if (population_std(*y) < 1e-8 * std::max(1.0, y->cwiseAbs().maxCoeff())) {
        ++c.stats.degenerate;
        ++rejections;
        continue;
      }
      bool held = false;
      for (std::size_t h = 0; h < holdouts.size() && !held; ++h) {
        const auto& hv = holdout_vals[h];
        if (hv) {
          const double scale = std::max(1.0, hv->cwiseAbs().maxCoeff());
          if ((*hv - *y).cwiseAbs().maxCoeff() > 1e-6 * scale) continue;
        }
        held = symbolically_equal(eq.tree, eq.consts, holdouts[h].tree, holdouts[h].consts, fd) ==
               Equivalence::Equal;
      }
      if (held) {
        ++c.stats.holdout;
        ++rejections;
        continue;
      }
      c.entries.push_back(CorpusEntry{eq.tree.tokens(), eq.consts});
      break;
    }
  }
  return c;
}

void write_corpus(const Corpus& c, std::ostream& out) {
  out << "# dgsr-corpus v1 library=" << c.library << " domain=" << c.domain.str()
      << " count=" << c.entries.size() << " seed=" << c.seed << "\n";
  char buf[40];
  for (const auto& e : c.entries) {
    out << to_text(e.tokens) << '\t';
    for (std::size_t k = 0; k < e.consts.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", e.consts[k]);
      out << (k ? " " : "") << buf;
    }
    out << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error(Errc::Io, "empty corpus file");
  static const std::regex re(R"(# dgsr-corpus v(\d+) library=(\S+) domain=(\S+) count=(\d+) seed=(\d+)\s*)");
  std::smatch m;
  if (!std::regex_match(header, m, re)) throw Error(Errc::VersionMismatch, "unrecognised corpus header");
  if (m[1] != "1") throw Error(Errc::VersionMismatch, "corpus format v" + m[1].str() + " unsupported");
  Corpus c;
  c.library = m[2];
  c.domain = SamplingSpec::parse(m[3]);
  c.seed = std::stoull(m[5]);
  const auto count = std::stoul(m[4]);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    CorpusEntry e;
    e.tokens = parse_text(line.substr(0, tab));
    if (tab != std::string::npos) {
      std::istringstream cs(line.substr(tab + 1));
      for (double v; cs >> v;) e.consts.push_back(v);
    }
    parse_prefix(e.tokens);
    c.entries.push_back(std::move(e));
  }
  if (c.entries.size() != count)
    throw Error(Errc::Io, "corpus header count " + std::to_string(count) + " but " +
                              std::to_string(c.entries.size()) + " records");
  return c;
}

void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  write_corpus(c, out);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot read " + path);
  return read_corpus(in);
}

Dataset corpus_dataset(const CorpusEntry& entry, const SamplingSpec& domain, int d, std::uint64_t seed) {
  SamplingSpec s = domain;
  s.count = 10 * d;
  Equation eq{parse_prefix(entry.tokens), entry.consts};
  return sample_dataset(eq, s, d, Split::Train, seed);
}

}  // namespace dgsr
