#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "dgsr/generator.hpp"

namespace dgsr {

using ad::Mat;

namespace {

// Per-layer key/value cache: row = sequence, column block t = position t.
struct KvCache {
  Mat K, V;
};

}  // namespace

SampleBatch Generator::sample_batch(const Dataset& data, int k, std::mt19937_64& rng) const {
  return sample_batch(encode(data), k, rng);
}

SampleBatch Generator::sample_batch(const Eigen::RowVectorXd& Vlat, int k, std::mt19937_64& rng) const {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  const int T = static_cast<int>(lib_.size());
  const int Lmax = lib_.max_len;
  const auto& P = params_.tensors;
  const auto row = [&](int i) -> Eigen::RowVectorXd { return P[static_cast<std::size_t>(i)].row(0); };
  const Mat pe_s = positional(Lmax, arch_.state_width);
  const Mat pe_d = positional(Lmax, arch_.width);

  std::vector<KvCache> sc(state_layers_.size()), dc(dec_layers_.size());
  for (auto& c : sc) c = {Mat(k, Lmax * arch_.state_width), Mat(k, Lmax * arch_.state_width)};
  for (auto& c : dc) c = {Mat(k, Lmax * arch_.width), Mat(k, Lmax * arch_.width)};

  // Same arithmetic as the tape layer, restricted to the newest position.
  auto step = [&](const Layer& l, const Mat& x, const std::vector<int>& act, int t, KvCache& c) {
    const int w = static_cast<int>(x.cols());
    Mat q = x * P[static_cast<std::size_t>(l.wq)];
    q.rowwise() += row(l.bq);
    Mat kk = x * P[static_cast<std::size_t>(l.wk)];
    kk.rowwise() += row(l.bk);
    Mat vv = x * P[static_cast<std::size_t>(l.wv)];
    vv.rowwise() += row(l.bv);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w));
    Mat a(x.rows(), w);
    Eigen::RowVectorXd s(t + 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int r = act[static_cast<std::size_t>(i)];
      c.K.row(r).segment(t * w, w) = kk.row(i);
      c.V.row(r).segment(t * w, w) = vv.row(i);
      for (int j = 0; j <= t; ++j) s(j) = q.row(i).dot(c.K.row(r).segment(j * w, w)) * scale;
      const double m = s.maxCoeff();
      s = (s.array() - m).exp();
      s /= s.sum();
      a.row(i).setZero();
      for (int j = 0; j <= t; ++j) a.row(i) += s(j) * c.V.row(r).segment(j * w, w);
    }
    Mat o = a * P[static_cast<std::size_t>(l.wo)];
    o.rowwise() += row(l.bo);
    const Mat h = ad::layer_norm_rows(x + o, row(l.ln1g), row(l.ln1b));
    Mat f1 = h * P[static_cast<std::size_t>(l.w1)];
    f1.rowwise() += row(l.b1);
    Mat f = f1.cwiseMax(0.0) * P[static_cast<std::size_t>(l.w2)];
    f.rowwise() += row(l.b2);
    return ad::layer_norm_rows(h + f, row(l.ln2g), row(l.ln2b));
  };

  SampleBatch out;
  out.seqs.assign(static_cast<std::size_t>(k), {});
  out.logp.assign(static_cast<std::size_t>(k), {});
  out.entropy.assign(static_cast<std::size_t>(k), {});
  out.total_logp.assign(static_cast<std::size_t>(k), 0.0);
  std::vector<DecodeState> states(static_cast<std::size_t>(k), DecodeState(lib_));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::uint8_t> mask;
  std::vector<double> lp(static_cast<std::size_t>(T));
  const int te = arch_.tree_emb;

  for (int t = 0; t < Lmax; ++t) {
    std::vector<int> act;
    for (int i = 0; i < k; ++i)
      if (!states[static_cast<std::size_t>(i)].complete()) act.push_back(i);
    if (act.empty()) break;
    const auto A = static_cast<Eigen::Index>(act.size());
    Mat s(A, arch_.state_width), tok(A, arch_.width);
    for (Eigen::Index i = 0; i < A; ++i) {
      const auto r = static_cast<std::size_t>(act[static_cast<std::size_t>(i)]);
      const TreeStateEntry e = states[r].tree_state();
      s.row(i).head(te) = P[static_cast<std::size_t>(parent_emb_)].row(e.parent < 0 ? T : e.parent);
      s.row(i).tail(te) = P[static_cast<std::size_t>(sibling_emb_)].row(e.sibling < 0 ? T : e.sibling);
      s.row(i) += pe_s.row(t);
      tok.row(i) = P[static_cast<std::size_t>(tok_emb_)].row(t == 0 ? T : out.seqs[r].back()) + pe_d.row(t);
    }
    for (std::size_t l = 0; l < state_layers_.size(); ++l) s = step(state_layers_[l], s, act, t, sc[l]);
    Mat u(A, 2 * arch_.width + arch_.state_width);
    u.leftCols(arch_.width) = tok;
    u.middleCols(arch_.width, arch_.width) = Vlat.replicate(A, 1);
    u.rightCols(arch_.state_width) = s;
    Mat x = u * P[static_cast<std::size_t>(dec_in_w_)];
    x.rowwise() += row(dec_in_b_);
    for (std::size_t l = 0; l < dec_layers_.size(); ++l) x = step(dec_layers_[l], x, act, t, dc[l]);
    Mat z = x * P[static_cast<std::size_t>(out_w_)];
    z.rowwise() += row(out_b_);

    for (Eigen::Index i = 0; i < A; ++i) {
      const auto r = static_cast<std::size_t>(act[static_cast<std::size_t>(i)]);
      states[r].mask(mask);
      double m = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < T; ++c)
        if (mask[static_cast<std::size_t>(c)]) m = std::max(m, z(i, c));
      double sum = 0.0;
      for (int c = 0; c < T; ++c)
        if (mask[static_cast<std::size_t>(c)]) sum += std::exp(z(i, c) - m);
      const double lse = m + std::log(sum);
      double ent = 0.0;
      int last = -1;
      for (int c = 0; c < T; ++c) {
        if (!mask[static_cast<std::size_t>(c)]) continue;
        lp[static_cast<std::size_t>(c)] = z(i, c) - lse;
        ent -= std::exp(lp[static_cast<std::size_t>(c)]) * lp[static_cast<std::size_t>(c)];
        last = c;
      }
      const double u01 = unif(rng);
      double cum = 0.0;
      int pick = last;
      for (int c = 0; c < T; ++c) {
        if (!mask[static_cast<std::size_t>(c)]) continue;
        cum += std::exp(lp[static_cast<std::size_t>(c)]);
        if (u01 < cum) {
          pick = c;
          break;
        }
      }
      states[r].push(pick);
      out.seqs[r].push_back(pick);
      out.logp[r].push_back(lp[static_cast<std::size_t>(pick)]);
      out.entropy[r].push_back(ent);
      out.total_logp[r] += lp[static_cast<std::size_t>(pick)];
    }
  }
  return out;
}

// --- checkpoint IO -----------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'G', 'S', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
void put_str(std::ostream& o, const std::string& s) {
  put<std::uint32_t>(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_mat(std::ostream& o, const Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(o, m(r, c));
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(Errc::Io, "truncated checkpoint");
  return v;
}
std::string get_str(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 24)) throw Error(Errc::Io, "corrupt checkpoint string");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error(Errc::Io, "truncated checkpoint");
  return s;
}
void get_mat(std::istream& in, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in);
}

}  // namespace

struct GeneratorIo {
  static void write(std::ostream& o, const Generator& g, const TrainState* st) {
    const auto& lib = g.lib_;
    const auto& a = g.arch_;
    o.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(o, kVersion);
    put<std::uint64_t>(o, lib.fingerprint());
    put_str(o, lib.name);
    put<std::int32_t>(o, lib.d);
    put<std::uint8_t>(o, lib.has_const ? 1 : 0);
    put<std::int32_t>(o, lib.min_len);
    put<std::int32_t>(o, lib.max_len);
    put<std::int32_t>(o, lib.max_const_slots);
    put<std::uint32_t>(o, static_cast<std::uint32_t>(lib.size()));
    for (const auto& t : lib.tokens) put_str(o, t.name());
    for (int v : {a.width, a.state_width, a.tree_emb, a.inducing, a.isab_blocks, a.state_layers, a.decoder_layers,
                  a.ff, a.max_rows})
      put<std::int32_t>(o, v);
    put<std::uint8_t>(o, a.no_encoder ? 1 : 0);
    const auto& p = g.params_;
    put<std::uint32_t>(o, static_cast<std::uint32_t>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
      put_str(o, p.names[i]);
      put<std::uint8_t>(o, static_cast<std::uint8_t>(p.groups[i]));
      put<std::uint32_t>(o, static_cast<std::uint32_t>(p.tensors[i].rows()));
      put<std::uint32_t>(o, static_cast<std::uint32_t>(p.tensors[i].cols()));
    }
    for (const auto& t : p.tensors) put_mat(o, t);
    put<std::uint8_t>(o, st ? 1 : 0);
    if (st) {
      const auto& ad = st->adam;
      for (double v : {ad.lr, ad.beta1, ad.beta2, ad.eps}) put<double>(o, v);
      put<std::int64_t>(o, ad.step);
      const bool moments = ad.m.size() == p.size() && ad.v.size() == p.size();
      put<std::uint8_t>(o, moments ? 1 : 0);
      if (moments) {
        for (const auto& t : ad.m) put_mat(o, t);
        for (const auto& t : ad.v) put_mat(o, t);
      }
      put<double>(o, st->baseline);
      put<std::uint8_t>(o, st->has_baseline ? 1 : 0);
      put<std::int64_t>(o, st->iteration);
      put_str(o, st->extra);
    }
    if (!o) throw Error(Errc::Io, "checkpoint write failed");
  }

  static Checkpoint read(std::istream& in, const LibrarySpec* target, std::uint64_t seed) {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
      throw Error(Errc::VersionMismatch, "not a generator checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion)
      throw Error(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                             std::to_string(kVersion));
    const auto fp = get<std::uint64_t>(in);
    LibrarySpec lib;
    lib.name = get_str(in);
    lib.d = get<std::int32_t>(in);
    lib.has_const = get<std::uint8_t>(in) != 0;
    lib.min_len = get<std::int32_t>(in);
    lib.max_len = get<std::int32_t>(in);
    lib.max_const_slots = get<std::int32_t>(in);
    const auto nt = get<std::uint32_t>(in);
    if (nt > 4096) throw Error(Errc::VersionMismatch, "corrupt token table");
    for (std::uint32_t i = 0; i < nt; ++i) lib.tokens.push_back(parse_token(get_str(in)));
    if (lib.fingerprint() != fp) throw Error(Errc::VersionMismatch, "library fingerprint does not match tokens");
    ArchConfig a;
    for (int* v : {&a.width, &a.state_width, &a.tree_emb, &a.inducing, &a.isab_blocks, &a.state_layers,
                   &a.decoder_layers, &a.ff, &a.max_rows})
      *v = get<std::int32_t>(in);
    a.no_encoder = get<std::uint8_t>(in) != 0;

    Generator g(lib, a, 0);
    auto& p = g.params_;
    const auto n = get<std::uint32_t>(in);
    if (n != p.size()) throw Error(Errc::ShapeMismatch, "tensor count differs from architecture");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::string name = get_str(in);
      const auto group = get<std::uint8_t>(in);
      const auto r = get<std::uint32_t>(in);
      const auto c = get<std::uint32_t>(in);
      if (name != p.names[i] || group != static_cast<std::uint8_t>(p.groups[i]) ||
          r != static_cast<std::uint32_t>(p.tensors[i].rows()) || c != static_cast<std::uint32_t>(p.tensors[i].cols()))
        throw Error(Errc::ShapeMismatch, "tensor '" + name + "' does not match the architecture");
    }
    for (auto& t : p.tensors) get_mat(in, t);
    std::optional<TrainState> state;
    if (get<std::uint8_t>(in)) {
      TrainState st;
      st.adam.lr = get<double>(in);
      st.adam.beta1 = get<double>(in);
      st.adam.beta2 = get<double>(in);
      st.adam.eps = get<double>(in);
      st.adam.step = get<std::int64_t>(in);
      if (get<std::uint8_t>(in)) {
        st.adam.m.resize(p.size());
        st.adam.v.resize(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          st.adam.m[i].resize(p.tensors[i].rows(), p.tensors[i].cols());
          get_mat(in, st.adam.m[i]);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
          st.adam.v[i].resize(p.tensors[i].rows(), p.tensors[i].cols());
          get_mat(in, st.adam.v[i]);
        }
      }
      st.baseline = get<double>(in);
      st.has_baseline = get<std::uint8_t>(in) != 0;
      st.iteration = get<std::int64_t>(in);
      st.extra = get_str(in);
      state = std::move(st);
    }
    if (!p.all_finite()) throw Error(Errc::NonFiniteInput, "checkpoint holds non-finite parameters");
    if (!target || target->fingerprint() == fp) {
      if (target) {
        g.lib_.min_len = target->min_len;
        g.lib_.max_len = target->max_len;
        g.lib_.max_const_slots = target->max_const_slots;
        g.lib_.name = target->name;
      }
      return Checkpoint{std::move(g), std::move(state)};
    }
    return Checkpoint{extend(g, *target, seed), std::nullopt};
  }

  // Maps a checkpoint onto a library that adds variables; other differences are incompatible.
  static Generator extend(const Generator& src, const LibrarySpec& target, std::uint64_t seed) {
    const auto& sl = src.lib_;
    std::vector<int> map(target.size(), -1);  // target token -> source token
    for (std::size_t i = 0; i < target.size(); ++i) {
      map[i] = sl.index_of(target.tokens[i]);
      if (map[i] < 0 && target.tokens[i].op != Op::Var)
        throw Error(Errc::IncompatibleCheckpoint, "token '" + target.tokens[i].name() + "' absent from checkpoint");
    }
    for (const auto& t : sl.tokens)
      if (target.index_of(t) < 0)
        throw Error(Errc::IncompatibleCheckpoint, "checkpoint token '" + t.name() + "' absent from library");
    if (target.d < sl.d) throw Error(Errc::IncompatibleCheckpoint, "library has fewer variables than checkpoint");

    Generator g(target, src.arch_, seed);
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    std::normal_distribution<double> fresh(0.0, 0.02);
    const int Ts = static_cast<int>(sl.size());
    const int Tt = static_cast<int>(target.size());
    for (std::size_t i = 0; i < g.params_.size(); ++i) {
      const std::string& name = g.params_.names[i];
      Mat& dst = g.params_.tensors[i];
      const int si = src.params_.index(name);
      const Mat& s = src.params_.tensors[static_cast<std::size_t>(si)];
      if (name == "state.parent_emb" || name == "state.sibling_emb" || name == "dec.tok_emb") {
        for (int r = 0; r < Tt; ++r) {
          if (map[static_cast<std::size_t>(r)] >= 0) dst.row(r) = s.row(map[static_cast<std::size_t>(r)]);
          else
            for (Eigen::Index c = 0; c < dst.cols(); ++c) dst(r, c) = fresh(rng);
        }
        dst.row(Tt) = s.row(Ts);
      } else if (name == "dec.out.w" || name == "dec.out.b") {
        for (int c = 0; c < Tt; ++c) {
          if (map[static_cast<std::size_t>(c)] >= 0) dst.col(c) = s.col(map[static_cast<std::size_t>(c)]);
          else
            for (Eigen::Index r = 0; r < dst.rows(); ++r) dst(r, c) = name == "dec.out.b" ? 0.0 : fresh(rng);
        }
      } else if (name == "enc.in.w") {
        for (int r = 0; r < target.d; ++r) {
          if (r < sl.d) dst.row(r) = s.row(r);
          else
            for (Eigen::Index c = 0; c < dst.cols(); ++c) dst(r, c) = fresh(rng);
        }
        dst.row(target.d) = s.row(sl.d);  // y column
      } else {
        if (s.rows() != dst.rows() || s.cols() != dst.cols())
          throw Error(Errc::ShapeMismatch, "tensor '" + name + "' changes shape");
        dst = s;
      }
    }
    return g;
  }
};

void write_checkpoint(std::ostream& out, const Generator& g, const TrainState* state) {
  GeneratorIo::write(out, g, state);
}

void save_checkpoint(const std::string& path, const Generator& g, const TrainState* state) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, g, state);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::Io, "cannot write " + path);
  const std::string s = buf.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw Error(Errc::Io, "write failed: " + path);
}

Checkpoint read_checkpoint(std::istream& in, const LibrarySpec* target, std::uint64_t seed) {
  return GeneratorIo::read(in, target, seed);
}

Checkpoint load_checkpoint(const std::string& path, const LibrarySpec* target, std::uint64_t seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot open " + path);
  return read_checkpoint(f, target, seed);
}

}  // namespace dgsr
