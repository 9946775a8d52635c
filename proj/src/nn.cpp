#include <cmath>

#include "dgsr/generator.hpp"

namespace dgsr {

using ad::Mat;
using ad::Tape;
using ad::Var;

std::size_t GeneratorParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

int GeneratorParams::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

bool GeneratorParams::all_finite() const {
  for (const auto& t : tensors)
    if (!t.allFinite()) return false;
  return true;
}

Generator::Generator(LibrarySpec lib, ArchConfig arch, std::uint64_t seed)
    : lib_(std::move(lib)), arch_(arch) {
  lib_.validate();
  if (arch_.width < 2 || arch_.width % 2 || arch_.state_width < 2 || arch_.tree_emb < 1 ||
      arch_.inducing < 1 || arch_.isab_blocks < 0 || arch_.state_layers < 0 || arch_.decoder_layers < 0 ||
      arch_.ff < 1 || arch_.max_rows < 1 || 2 * arch_.tree_emb != arch_.state_width)
    throw Error(Errc::InvalidArgument, "invalid generator architecture");
  std::mt19937_64 rng(seed);
  build(rng);
}

int Generator::add_param(const std::string& name, ParamGroup group, int rows, int cols, std::mt19937_64* rng,
                         double std) {
  Mat m = Mat::Zero(rows, cols);
  if (rng && std > 0) {
    std::normal_distribution<double> n(0.0, std);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = n(*rng);
  }
  params_.names.push_back(name);
  params_.groups.push_back(group);
  params_.tensors.push_back(std::move(m));
  return static_cast<int>(params_.tensors.size()) - 1;
}

namespace {

double fan_in_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

Generator::Mab Generator::add_mab(const std::string& p, std::mt19937_64& rng) {
  const int w = arch_.width;
  const auto E = ParamGroup::Encoder;
  Mab m{};
  m.wq = add_param(p + ".wq", E, w, w, &rng, fan_in_std(w));
  m.bq = add_param(p + ".bq", E, 1, w, nullptr, 0);
  m.wk = add_param(p + ".wk", E, w, w, &rng, fan_in_std(w));
  m.bk = add_param(p + ".bk", E, 1, w, nullptr, 0);
  m.wv = add_param(p + ".wv", E, w, w, &rng, fan_in_std(w));
  m.bv = add_param(p + ".bv", E, 1, w, nullptr, 0);
  m.wo = add_param(p + ".wo", E, w, w, &rng, fan_in_std(w));
  m.bo = add_param(p + ".bo", E, 1, w, nullptr, 0);
  m.ln1g = add_param(p + ".ln1.g", E, 1, w, nullptr, 0);
  params_.tensors.back().setOnes();
  m.ln1b = add_param(p + ".ln1.b", E, 1, w, nullptr, 0);
  m.wf = add_param(p + ".wf", E, w, w, &rng, fan_in_std(w));
  m.bf = add_param(p + ".bf", E, 1, w, nullptr, 0);
  m.ln2g = add_param(p + ".ln2.g", E, 1, w, nullptr, 0);
  params_.tensors.back().setOnes();
  m.ln2b = add_param(p + ".ln2.b", E, 1, w, nullptr, 0);
  return m;
}

Generator::Layer Generator::add_layer(const std::string& p, int w, std::mt19937_64& rng) {
  const auto D = ParamGroup::Decoder;
  const int ff = arch_.ff;
  Layer l{};
  l.wq = add_param(p + ".wq", D, w, w, &rng, fan_in_std(w));
  l.bq = add_param(p + ".bq", D, 1, w, nullptr, 0);
  l.wk = add_param(p + ".wk", D, w, w, &rng, fan_in_std(w));
  l.bk = add_param(p + ".bk", D, 1, w, nullptr, 0);
  l.wv = add_param(p + ".wv", D, w, w, &rng, fan_in_std(w));
  l.bv = add_param(p + ".bv", D, 1, w, nullptr, 0);
  l.wo = add_param(p + ".wo", D, w, w, &rng, fan_in_std(w));
  l.bo = add_param(p + ".bo", D, 1, w, nullptr, 0);
  l.ln1g = add_param(p + ".ln1.g", D, 1, w, nullptr, 0);
  params_.tensors.back().setOnes();
  l.ln1b = add_param(p + ".ln1.b", D, 1, w, nullptr, 0);
  l.w1 = add_param(p + ".w1", D, w, ff, &rng, fan_in_std(w));
  l.b1 = add_param(p + ".b1", D, 1, ff, nullptr, 0);
  l.w2 = add_param(p + ".w2", D, ff, w, &rng, fan_in_std(ff));
  l.b2 = add_param(p + ".b2", D, 1, w, nullptr, 0);
  l.ln2g = add_param(p + ".ln2.g", D, 1, w, nullptr, 0);
  params_.tensors.back().setOnes();
  l.ln2b = add_param(p + ".ln2.b", D, 1, w, nullptr, 0);
  return l;
}

void Generator::build(std::mt19937_64& rng) {
  const int w = arch_.width;
  const int T = static_cast<int>(lib_.size());
  const int in = lib_.d + 1;
  const auto E = ParamGroup::Encoder;
  const auto D = ParamGroup::Decoder;
  if (arch_.no_encoder) {
    v_const_ = add_param("enc.v_const", E, 1, w, &rng, fan_in_std(w));
  } else {
    enc_in_w_ = add_param("enc.in.w", E, in, w, &rng, fan_in_std(in));
    enc_in_b_ = add_param("enc.in.b", E, 1, w, nullptr, 0);
    for (int b = 0; b < arch_.isab_blocks; ++b) {
      const std::string p = "enc.isab" + std::to_string(b);
      inducing_.push_back(add_param(p + ".ind", E, arch_.inducing, w, &rng, fan_in_std(w)));
      isab_a_.push_back(add_mab(p + ".mab0", rng));
      isab_b_.push_back(add_mab(p + ".mab1", rng));
    }
    pma_seed_ = add_param("enc.pma.seed", E, 1, w, &rng, fan_in_std(w));
    pma_ = add_mab("enc.pma.mab", rng);
  }
  // Row T of each token table is the "none" / start entry.
  parent_emb_ = add_param("state.parent_emb", D, T + 1, arch_.tree_emb, &rng, fan_in_std(arch_.tree_emb));
  sibling_emb_ = add_param("state.sibling_emb", D, T + 1, arch_.tree_emb, &rng, fan_in_std(arch_.tree_emb));
  for (int l = 0; l < arch_.state_layers; ++l)
    state_layers_.push_back(add_layer("state.l" + std::to_string(l), arch_.state_width, rng));
  tok_emb_ = add_param("dec.tok_emb", D, T + 1, w, &rng, fan_in_std(w));
  const int u = w + w + arch_.state_width;
  dec_in_w_ = add_param("dec.in.w", D, u, w, &rng, fan_in_std(u));
  dec_in_b_ = add_param("dec.in.b", D, 1, w, nullptr, 0);
  for (int l = 0; l < arch_.decoder_layers; ++l)
    dec_layers_.push_back(add_layer("dec.l" + std::to_string(l), w, rng));
  out_w_ = add_param("dec.out.w", D, w, T, &rng, fan_in_std(w));
  out_b_ = add_param("dec.out.b", D, 1, T, nullptr, 0);
}

Mat Generator::positional(int L, int width) const {
  Mat pe(L, width);
  for (int t = 0; t < L; ++t)
    for (int i = 0; i < width; i += 2) {
      const double f = std::pow(10000.0, -static_cast<double>(i) / width);
      pe(t, i) = std::sin(t * f);
      if (i + 1 < width) pe(t, i + 1) = std::cos(t * f);
    }
  return pe;
}

Mat Generator::encoder_input(const Dataset& data) const {
  if (data.d() != lib_.d)
    throw Error(Errc::ShapeMismatch, "dataset has " + std::to_string(data.d()) + " variables, library " +
                                         lib_.name + " expects " + std::to_string(lib_.d));
  if (data.n() < 1) throw Error(Errc::InvalidArgument, "empty dataset");
  if (data.n() > arch_.max_rows)
    throw Error(Errc::InvalidArgument, "dataset has " + std::to_string(data.n()) + " rows; encoder limit is " +
                                           std::to_string(arch_.max_rows));
  if (!data.X.allFinite() || !data.y.allFinite()) throw Error(Errc::NonFiniteInput, "non-finite dataset");
  Mat z(data.n(), data.d() + 1);
  z.leftCols(data.d()) = data.X;
  z.col(data.d()) = data.y;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double mu = z.col(c).mean();
    z.col(c).array() -= mu;
    const double sd = std::sqrt(z.col(c).squaredNorm() / static_cast<double>(z.rows()));
    if (sd > 1e-12) z.col(c) /= sd;
  }
  return z;
}

ParamVars Generator::bind(Tape& tape, bool encoder_grad, bool decoder_grad) const {
  ParamVars pv;
  pv.vars.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const bool g = params_.groups[i] == ParamGroup::Encoder ? encoder_grad : decoder_grad;
    pv.vars.push_back(tape.leaf(params_.tensors[i], g));
  }
  return pv;
}

std::vector<Mat> Generator::gradients(const Tape& tape, const ParamVars& pv) const {
  std::vector<Mat> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Mat& g = tape.grad(pv.vars[i]);
    out.push_back(g.size() ? g : Mat::Zero(params_.tensors[i].rows(), params_.tensors[i].cols()));
  }
  return out;
}

Var Generator::mab_on(Tape& t, const ParamVars& pv, const Mab& m, Var q, Var kv) const {
  const auto P = [&](int i) { return pv.vars[static_cast<std::size_t>(i)]; };
  const Var qq = t.linear(q, P(m.wq), P(m.bq));
  const Var kk = t.linear(kv, P(m.wk), P(m.bk));
  const Var vv = t.linear(kv, P(m.wv), P(m.bv));
  const Var a = t.softmax_rows(t.scale(t.matmul_nt(qq, kk), 1.0 / std::sqrt(static_cast<double>(arch_.width))));
  const Var o = t.linear(t.matmul(a, vv), P(m.wo), P(m.bo));
  const Var h = t.layer_norm(t.add(q, o), P(m.ln1g), P(m.ln1b));
  return t.layer_norm(t.add(h, t.relu(t.linear(h, P(m.wf), P(m.bf)))), P(m.ln2g), P(m.ln2b));
}

Var Generator::layer_on(Tape& t, const ParamVars& pv, const Layer& l, Var x, int block) const {
  const auto P = [&](int i) { return pv.vars[static_cast<std::size_t>(i)]; };
  const Var a = t.causal_attention(t.linear(x, P(l.wq), P(l.bq)), t.linear(x, P(l.wk), P(l.bk)),
                                   t.linear(x, P(l.wv), P(l.bv)), block);
  const Var h = t.layer_norm(t.add(x, t.linear(a, P(l.wo), P(l.bo))), P(l.ln1g), P(l.ln1b));
  const Var f = t.linear(t.relu(t.linear(h, P(l.w1), P(l.b1))), P(l.w2), P(l.b2));
  return t.layer_norm(t.add(h, f), P(l.ln2g), P(l.ln2b));
}

Var Generator::encode_on(Tape& t, const ParamVars& pv, const Dataset& data) const {
  const auto P = [&](int i) { return pv.vars[static_cast<std::size_t>(i)]; };
  if (arch_.no_encoder) return P(v_const_);
  Var h = t.linear(t.leaf(encoder_input(data)), P(enc_in_w_), P(enc_in_b_));
  for (std::size_t b = 0; b < inducing_.size(); ++b) {
    const Var hm = mab_on(t, pv, isab_a_[b], P(inducing_[b]), h);
    h = mab_on(t, pv, isab_b_[b], h, hm);
  }
  return mab_on(t, pv, pma_, P(pma_seed_), h);
}

struct Generator::Layout {
  int B = 0;
  int L = 0;
  std::vector<int> parent, sibling, prev, chosen;
  Mat mask;
  std::vector<int> lengths;
};

Generator::Layout Generator::layout(const std::vector<std::vector<int>>& seqs, bool open_last) const {
  const int T = static_cast<int>(lib_.size());
  Layout lay;
  lay.B = static_cast<int>(seqs.size());
  for (const auto& s : seqs) lay.L = std::max<int>(lay.L, static_cast<int>(s.size()) + (open_last ? 1 : 0));
  lay.L = std::max(lay.L, 1);
  const std::size_t rows = static_cast<std::size_t>(lay.B) * static_cast<std::size_t>(lay.L);
  lay.parent.assign(rows, T);
  lay.sibling.assign(rows, T);
  lay.prev.assign(rows, T);
  lay.chosen.assign(rows, 0);
  lay.mask = Mat::Ones(static_cast<Eigen::Index>(rows), T);
  std::vector<std::uint8_t> m;
  for (int b = 0; b < lay.B; ++b) {
    const auto& s = seqs[static_cast<std::size_t>(b)];
    DecodeState st(lib_);
    const int n = static_cast<int>(s.size()) + (open_last ? 1 : 0);
    for (int t = 0; t < n; ++t) {
      const std::size_t r = static_cast<std::size_t>(b * lay.L + t);
      if (st.complete()) throw Error(Errc::ExtraTokens, "sequence continues after completion");
      const TreeStateEntry e = st.tree_state();
      lay.parent[r] = e.parent < 0 ? T : e.parent;
      lay.sibling[r] = e.sibling < 0 ? T : e.sibling;
      lay.prev[r] = t == 0 ? T : s[static_cast<std::size_t>(t - 1)];
      if (open_last && t == n - 1) break;
      const int tok = s[static_cast<std::size_t>(t)];
      if (tok < 0 || tok >= T) throw Error(Errc::UnknownToken, "token index outside library");
      st.mask(m);
      if (!m[static_cast<std::size_t>(tok)])
        throw Error(Errc::MaskViolation, "token '" + lib_.tokens[static_cast<std::size_t>(tok)].name() +
                                             "' is masked at position " + std::to_string(t));
      for (int c = 0; c < T; ++c) lay.mask(static_cast<Eigen::Index>(r), c) = m[static_cast<std::size_t>(c)];
      lay.chosen[r] = tok;
      st.push(tok);
    }
    if (!open_last && !st.complete()) throw Error(Errc::IncompleteSequence, "sequence is not complete");
    lay.lengths.push_back(static_cast<int>(s.size()));
  }
  return lay;
}

Var Generator::logits_on(Tape& t, const ParamVars& pv, Var V_rows, const Layout& lay) const {
  const auto P = [&](int i) { return pv.vars[static_cast<std::size_t>(i)]; };
  const Mat pe_s = positional(lay.L, arch_.state_width).replicate(lay.B, 1);
  const Mat pe_d = positional(lay.L, arch_.width).replicate(lay.B, 1);
  Var s = t.add(t.concat_cols(t.gather_rows(P(parent_emb_), lay.parent), t.gather_rows(P(sibling_emb_), lay.sibling)),
                t.leaf(pe_s));
  for (const auto& l : state_layers_) s = layer_on(t, pv, l, s, lay.L);
  const Var tok = t.add(t.gather_rows(P(tok_emb_), lay.prev), t.leaf(pe_d));
  const Var u = t.concat_cols(t.repeat_rows(V_rows, lay.L), s);
  Var x = t.linear(t.concat_cols(tok, u), P(dec_in_w_), P(dec_in_b_));
  for (const auto& l : dec_layers_) x = layer_on(t, pv, l, x, lay.L);
  return t.linear(x, P(out_w_), P(out_b_));
}

TeacherForced Generator::teacher_forced(Tape& t, const ParamVars& pv, Var V_rows,
                                        const std::vector<std::vector<int>>& seqs) const {
  if (t.value(V_rows).rows() != static_cast<Eigen::Index>(seqs.size()))
    throw Error(Errc::ShapeMismatch, "one latent row per sequence expected");
  const Layout lay = layout(seqs, false);
  const Var lp = t.masked_log_softmax(logits_on(t, pv, V_rows, lay), lay.mask);
  TeacherForced out;
  out.logp = t.pick(lp, lay.chosen);
  out.entropy = t.masked_entropy(lp, lay.mask);
  out.rows = lay.B;
  out.L = lay.L;
  out.lengths = lay.lengths;
  return out;
}

Eigen::RowVectorXd Generator::encode(const Dataset& data) const {
  Tape t;
  const ParamVars pv = bind(t, false, false);
  return t.value(encode_on(t, pv, data)).row(0);
}

Eigen::VectorXd Generator::decode_logits(const Eigen::RowVectorXd& V, const std::vector<int>& partial) const {
  const Layout lay = layout({partial}, true);
  Tape t;
  const ParamVars pv = bind(t, false, false);
  const Var z = logits_on(t, pv, t.leaf(Mat(V)), lay);
  return t.value(z).row(static_cast<Eigen::Index>(partial.size())).transpose();
}

double Generator::log_prob(const Eigen::RowVectorXd& V, const std::vector<int>& seq) const {
  Tape t;
  const ParamVars pv = bind(t, false, false);
  const TeacherForced tf = teacher_forced(t, pv, t.leaf(Mat(V)), {seq});
  const Mat& lp = t.value(tf.logp);
  double s = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) s += lp(static_cast<Eigen::Index>(i), 0);
  return s;
}

double Generator::log_prob(const Dataset& data, const std::vector<int>& seq) const {
  return log_prob(encode(data), seq);
}

}  // namespace dgsr
