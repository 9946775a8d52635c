#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace dgsr::ad {

using Mat = Eigen::MatrixXd;

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

/// Reverse-mode tape over dense matrices. Each op records a backward closure;
/// only the ops the generator needs are provided.
class Tape {
 public:
  Var leaf(Mat value, bool needs_grad = false);

  const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  /// Gradient accumulated by backward(); zero-sized for nodes that did not need one.
  const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 node and runs all closures in reverse.
  void backward(Var out);

  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // a + row broadcast over rows
  Var scale(Var a, double s);
  Var cmul(Var a, Var b);  // elementwise
  Var relu(Var a);
  Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // per row
  Var softmax_rows(Var a);
  Var gather_rows(Var table, const std::vector<int>& rows);  // embedding lookup
  Var repeat_rows(Var a, int times);  // each row repeated `times` times consecutively
  Var concat_cols(Var a, Var b);
  Var sum(Var a);                  // 1x1
  Var dot(Var a, const Mat& w);    // 1x1: sum(a .* w) with constant w
  /// Causal attention within blocks of L consecutive rows (row b*L+t sees b*L..b*L+t).
  Var causal_attention(Var q, Var k, Var v, int block);
  /// Log-softmax over entries where mask != 0; masked entries are exactly 0 in the output.
  Var masked_log_softmax(Var logits, const Mat& mask);
  /// Column vector: out(r) = a(r, cols[r]).
  Var pick(Var a, const std::vector<int>& cols);
  /// Column vector of categorical entropies from masked log-probabilities.
  Var masked_entropy(Var logp, const Mat& mask);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Mat value, bool needs_grad);
  bool ng(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  Mat& g(Var v);

  std::vector<Node> nodes_;
};

/// Plain (tape-free) kernels shared with the incremental sampler so both
/// paths run the same arithmetic.
Mat layer_norm_rows(const Mat& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                    double eps = 1e-5);
void softmax_rows_inplace(Mat& s);

}  // namespace dgsr::ad
