#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dgsr/autodiff.hpp"
#include "dgsr/corpus.hpp"
#include "dgsr/grammar.hpp"

namespace dgsr {

struct ArchConfig {
  int width = 32;          // encoder latent w and decoder hidden size
  int state_width = 32;    // d_s
  int tree_emb = 16;       // parent / sibling embedding width
  int inducing = 64;
  int isab_blocks = 3;
  int state_layers = 3;
  int decoder_layers = 2;
  int ff = 128;            // feed-forward width inside the attention layers
  int max_rows = 512;      // encoder input rows
  bool no_encoder = false; // V is a learned constant vector
};

/// zeta (dataset encoder) vs phi (state encoder, decoder, projection).
enum class ParamGroup : std::uint8_t { Encoder = 0, Decoder = 1 };

struct GeneratorParams {
  std::vector<std::string> names;
  std::vector<ParamGroup> groups;
  std::vector<Eigen::MatrixXd> tensors;

  std::size_t size() const noexcept { return tensors.size(); }
  std::size_t scalar_count() const;
  int index(const std::string& name) const;  // -1 when absent
  bool all_finite() const;
};

/// k sampled sequences (library indices) with the statistics of the masked
/// categorical each token was drawn from.
struct SampleBatch {
  std::vector<std::vector<int>> seqs;
  std::vector<std::vector<double>> logp;     // per step
  std::vector<std::vector<double>> entropy;  // per step
  std::vector<double> total_logp;

  std::size_t size() const noexcept { return seqs.size(); }
};

/// Tape leaves for every parameter tensor.
struct ParamVars {
  std::vector<ad::Var> vars;
};

/// Teacher-forced outputs over B sequences padded to L positions; row b*L+t.
struct TeacherForced {
  ad::Var logp;     // (B*L) x 1, log-probability of the token at each position
  ad::Var entropy;  // (B*L) x 1
  int rows = 0;     // B
  int L = 0;
  std::vector<int> lengths;
};

/// Conditional generator p(f | D): set-transformer encoder plus a grammar-masked
/// autoregressive decoder conditioned on [V, state_latent].
class Generator {
 public:
  Generator(LibrarySpec lib, ArchConfig arch, std::uint64_t seed);

  const LibrarySpec& library() const noexcept { return lib_; }
  const ArchConfig& arch() const noexcept { return arch_; }
  GeneratorParams& params() noexcept { return params_; }
  const GeneratorParams& params() const noexcept { return params_; }

  /// Latent V (1 x width). Throws NonFiniteInput, ShapeMismatch, InvalidArgument (too many rows).
  Eigen::RowVectorXd encode(const Dataset& data) const;
  /// Raw logits for the next position after `partial` (a proper prefix).
  Eigen::VectorXd decode_logits(const Eigen::RowVectorXd& V, const std::vector<int>& partial) const;
  SampleBatch sample_batch(const Eigen::RowVectorXd& V, int k, std::mt19937_64& rng) const;
  SampleBatch sample_batch(const Dataset& data, int k, std::mt19937_64& rng) const;
  /// Teacher-forced masked log-likelihood. Throws MaskViolation, IncompleteSequence.
  double log_prob(const Dataset& data, const std::vector<int>& seq) const;
  double log_prob(const Eigen::RowVectorXd& V, const std::vector<int>& seq) const;

  // Differentiable paths used by training.
  ParamVars bind(ad::Tape& tape, bool encoder_grad, bool decoder_grad) const;
  ad::Var encode_on(ad::Tape& tape, const ParamVars& pv, const Dataset& data) const;
  /// V_rows: one latent row per sequence (B x width).
  TeacherForced teacher_forced(ad::Tape& tape, const ParamVars& pv, ad::Var V_rows,
                               const std::vector<std::vector<int>>& seqs) const;
  /// Gradients in parameter order; zero tensors where the tape holds none.
  std::vector<Eigen::MatrixXd> gradients(const ad::Tape& tape, const ParamVars& pv) const;

  /// Row-standardized encoder input (x columns then y), n x (d+1).
  Eigen::MatrixXd encoder_input(const Dataset& data) const;

 private:
  friend struct GeneratorIo;
  Generator() = default;

  struct Mab {
    int wq, bq, wk, bk, wv, bv, wo, bo, ln1g, ln1b, wf, bf, ln2g, ln2b;
  };
  struct Layer {
    int wq, bq, wk, bk, wv, bv, wo, bo, ln1g, ln1b, w1, b1, w2, b2, ln2g, ln2b;
  };
  struct Layout;

  void build(std::mt19937_64& rng);
  int add_param(const std::string& name, ParamGroup group, int rows, int cols, std::mt19937_64* rng, double std);
  Mab add_mab(const std::string& prefix, std::mt19937_64& rng);
  Layer add_layer(const std::string& prefix, int width, std::mt19937_64& rng);

  ad::Var mab_on(ad::Tape& t, const ParamVars& pv, const Mab& m, ad::Var q, ad::Var kv) const;
  ad::Var layer_on(ad::Tape& t, const ParamVars& pv, const Layer& l, ad::Var x, int block) const;
  Layout layout(const std::vector<std::vector<int>>& seqs, bool open_last) const;
  ad::Var logits_on(ad::Tape& t, const ParamVars& pv, ad::Var V_rows, const Layout& lay) const;
  Eigen::MatrixXd positional(int L, int width) const;

  LibrarySpec lib_;
  ArchConfig arch_;
  GeneratorParams params_;

  int enc_in_w_ = -1, enc_in_b_ = -1, v_const_ = -1, pma_seed_ = -1;
  std::vector<int> inducing_;
  std::vector<Mab> isab_a_, isab_b_;
  Mab pma_{};
  int parent_emb_ = -1, sibling_emb_ = -1, tok_emb_ = -1, dec_in_w_ = -1, dec_in_b_ = -1;
  int out_w_ = -1, out_b_ = -1;
  std::vector<Layer> state_layers_, dec_layers_;
};

/// Adaptive-moment optimizer state, stored alongside checkpoints.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
};

/// Trainer state saved with a checkpoint so a resumed run continues exactly.
struct TrainState {
  AdamState adam;
  double baseline = 0.0;
  bool has_baseline = false;
  long iteration = 0;
  std::string extra;  // free-form trainer data (e.g. serialized RNG)
};

struct Checkpoint {
  Generator generator;
  std::optional<TrainState> state;
};

void write_checkpoint(std::ostream& out, const Generator& g, const TrainState* state = nullptr);
void save_checkpoint(const std::string& path, const Generator& g, const TrainState* state = nullptr);
/// With target != nullptr and a different library, shared tokens keep their rows
/// and extra variables get fresh embeddings (std 0.02). Throws VersionMismatch,
/// ShapeMismatch, IncompatibleCheckpoint, Io.
Checkpoint read_checkpoint(std::istream& in, const LibrarySpec* target = nullptr, std::uint64_t seed = 0);
Checkpoint load_checkpoint(const std::string& path, const LibrarySpec* target = nullptr, std::uint64_t seed = 0);

}  // namespace dgsr
