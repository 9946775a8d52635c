#include "dgsr/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dgsr::ad {

Mat layer_norm_rows(const Mat& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                    double eps) {
  Mat out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).sum() / n;
    const Eigen::RowVectorXd c = x.row(r).array() - mu;
    const double inv = 1.0 / std::sqrt(c.squaredNorm() / n + eps);
    out.row(r) = (c * inv).cwiseProduct(gamma) + beta;
  }
  return out;
}

void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

Var Tape::push(Mat value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Mat(), needs_grad, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::g(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::leaf(Mat value, bool needs_grad) { return push(std::move(value), needs_grad); }

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw std::invalid_argument("backward needs a scalar node");
  g(out)(0, 0) += 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

Var Tape::matmul(Var a, Var b) {
  const Var o = push(value(a) * value(b), ng(a) || ng(b));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, b, o] {
      const Mat& go = grad(o);
      if (ng(a)) g(a).noalias() += go * value(b).transpose();
      if (ng(b)) g(b).noalias() += value(a).transpose() * go;
    };
  return o;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Var o = push(value(a) * value(b).transpose(), ng(a) || ng(b));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, b, o] {
      const Mat& go = grad(o);
      if (ng(a)) g(a).noalias() += go * value(b);
      if (ng(b)) g(b).noalias() += go.transpose() * value(a);
    };
  return o;
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  const Var o = push(value(a) + value(b), ng(a) || ng(b));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, b, o] {
      if (ng(a)) g(a) += grad(o);
      if (ng(b)) g(b) += grad(o);
    };
  return o;
}

Var Tape::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw std::invalid_argument("add_row: shape mismatch");
  Mat v = value(a);
  v.rowwise() += value(row).row(0);
  const Var o = push(std::move(v), ng(a) || ng(row));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, row, o] {
      if (ng(a)) g(a) += grad(o);
      if (ng(row)) g(row) += grad(o).colwise().sum();
    };
  return o;
}

Var Tape::scale(Var a, double s) {
  const Var o = push(value(a) * s, ng(a));
  if (nodes_.back().needs_grad) nodes_.back().backward = [this, a, s, o] { g(a) += grad(o) * s; };
  return o;
}

Var Tape::cmul(Var a, Var b) {
  const Var o = push(value(a).cwiseProduct(value(b)), ng(a) || ng(b));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, b, o] {
      if (ng(a)) g(a) += grad(o).cwiseProduct(value(b));
      if (ng(b)) g(b) += grad(o).cwiseProduct(value(a));
    };
  return o;
}

Var Tape::relu(Var a) {
  const Var o = push(value(a).cwiseMax(0.0), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, o] {
      g(a) += (value(a).array() > 0.0).select(grad(o), 0.0);
    };
  return o;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Mat& xv = value(x);
  const Eigen::Index rows = xv.rows();
  const Eigen::Index cols = xv.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv(rows);
  const double n = static_cast<double>(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = xv.row(r).sum() / n;
    const Eigen::RowVectorXd c = xv.row(r).array() - mu;
    inv(r) = 1.0 / std::sqrt(c.squaredNorm() / n + eps);
    xhat.row(r) = c * inv(r);
  }
  Mat out = xhat.array().rowwise() * value(gamma).row(0).array();
  out.rowwise() += value(beta).row(0);
  const Var o = push(std::move(out), ng(x) || ng(gamma) || ng(beta));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, x, gamma, beta, o, xhat = std::move(xhat), inv = std::move(inv), n] {
      const Mat& go = grad(o);
      if (ng(gamma)) g(gamma) += go.cwiseProduct(xhat).colwise().sum();
      if (ng(beta)) g(beta) += go.colwise().sum();
      if (ng(x)) {
        const Mat dxhat = go.array().rowwise() * value(gamma).row(0).array();
        Mat& gx = g(x);
        for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
          const double m1 = dxhat.row(r).sum() / n;
          const double m2 = dxhat.row(r).dot(xhat.row(r)) / n;
          gx.row(r) += inv(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
        }
      }
    };
  return o;
}

Var Tape::softmax_rows(Var a) {
  Mat s = value(a);
  softmax_rows_inplace(s);
  const Var o = push(std::move(s), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, o] {
      const Mat& p = value(o);
      const Mat& go = grad(o);
      const Eigen::VectorXd dots = go.cwiseProduct(p).rowwise().sum();
      g(a) += p.cwiseProduct(go - dots.replicate(1, go.cols()));
    };
  return o;
}

Var Tape::gather_rows(Var table, const std::vector<int>& rows) {
  const Mat& t = value(table);
  Mat out(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  const Var o = push(std::move(out), ng(table));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, table, rows, o] {
      Mat& gt = g(table);
      const Mat& go = grad(o);
      for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
    };
  return o;
}

Var Tape::repeat_rows(Var a, int times) {
  const Mat& av = value(a);
  Mat out(av.rows() * times, av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r)
    for (int t = 0; t < times; ++t) out.row(r * times + t) = av.row(r);
  const Var o = push(std::move(out), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, times, o] {
      Mat& ga = g(a);
      const Mat& go = grad(o);
      for (Eigen::Index r = 0; r < ga.rows(); ++r)
        for (int t = 0; t < times; ++t) ga.row(r) += go.row(r * times + t);
    };
  return o;
}

Var Tape::concat_cols(Var a, Var b) {
  const Mat& av = value(a);
  const Mat& bv = value(b);
  if (av.rows() != bv.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Mat out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Var o = push(std::move(out), ng(a) || ng(b));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, b, o] {
      const Mat& go = grad(o);
      const Eigen::Index ca = value(a).cols();
      if (ng(a)) g(a) += go.leftCols(ca);
      if (ng(b)) g(b) += go.rightCols(go.cols() - ca);
    };
  return o;
}

Var Tape::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = value(a).sum();
  const Var o = push(std::move(out), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, o] { g(a).array() += grad(o)(0, 0); };
  return o;
}

Var Tape::dot(Var a, const Mat& w) {
  if (w.rows() != value(a).rows() || w.cols() != value(a).cols())
    throw std::invalid_argument("dot: shape mismatch");
  Mat out(1, 1);
  out(0, 0) = value(a).cwiseProduct(w).sum();
  const Var o = push(std::move(out), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, w, o] { g(a) += w * grad(o)(0, 0); };
  return o;
}

Var Tape::causal_attention(Var q, Var k, Var v, int block) {
  const Mat& Q = value(q);
  const Mat& K = value(k);
  const Mat& V = value(v);
  const Eigen::Index rows = Q.rows();
  if (block <= 0 || rows % block != 0) throw std::invalid_argument("causal_attention: bad block");
  const double sc = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
  const Eigen::Index nb = rows / block;
  // Attention weights per block, lower-triangular.
  std::vector<Mat> P(static_cast<std::size_t>(nb));
  Mat out = Mat::Zero(rows, V.cols());
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Eigen::Index o0 = b * block;
    Mat s = Q.middleRows(o0, block) * K.middleRows(o0, block).transpose() * sc;
    for (Eigen::Index i = 0; i < block; ++i)
      for (Eigen::Index j = i + 1; j < block; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
    softmax_rows_inplace(s);
    out.middleRows(o0, block) = s * V.middleRows(o0, block);
    P[static_cast<std::size_t>(b)] = std::move(s);
  }
  const Var o = push(std::move(out), ng(q) || ng(k) || ng(v));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, q, k, v, o, block, nb, sc, P = std::move(P)] {
      const Mat& go = grad(o);
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index o0 = b * block;
        const Mat& p = P[static_cast<std::size_t>(b)];
        const auto gob = go.middleRows(o0, block);
        if (ng(v)) g(v).middleRows(o0, block).noalias() += p.transpose() * gob;
        if (!ng(q) && !ng(k)) continue;
        const Mat dp = gob * value(v).middleRows(o0, block).transpose();
        const Eigen::VectorXd dots = dp.cwiseProduct(p).rowwise().sum();
        const Mat ds = p.cwiseProduct(dp - dots.replicate(1, dp.cols())) * sc;
        if (ng(q)) g(q).middleRows(o0, block).noalias() += ds * value(k).middleRows(o0, block);
        if (ng(k)) g(k).middleRows(o0, block).noalias() += ds.transpose() * value(q).middleRows(o0, block);
      }
    };
  return o;
}

Var Tape::masked_log_softmax(Var logits, const Mat& mask) {
  const Mat& z = value(logits);
  if (mask.rows() != z.rows() || mask.cols() != z.cols())
    throw std::invalid_argument("masked_log_softmax: shape mismatch");
  Mat out = Mat::Zero(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      if (mask(r, c) != 0.0) m = std::max(m, z(r, c));
    double s = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      if (mask(r, c) != 0.0) s += std::exp(z(r, c) - m);
    const double lse = m + std::log(s);
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      if (mask(r, c) != 0.0) out(r, c) = z(r, c) - lse;
  }
  const Var o = push(std::move(out), ng(logits));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, logits, mask, o] {
      const Mat& lp = value(o);
      const Mat& go = grad(o);
      Mat& gz = g(logits);
      for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        double tot = 0.0;
        for (Eigen::Index c = 0; c < lp.cols(); ++c)
          if (mask(r, c) != 0.0) tot += go(r, c);
        for (Eigen::Index c = 0; c < lp.cols(); ++c)
          if (mask(r, c) != 0.0) gz(r, c) += go(r, c) - std::exp(lp(r, c)) * tot;
      }
    };
  return o;
}

Var Tape::pick(Var a, const std::vector<int>& cols) {
  const Mat& av = value(a);
  if (static_cast<Eigen::Index>(cols.size()) != av.rows()) throw std::invalid_argument("pick: size mismatch");
  Mat out(av.rows(), 1);
  for (Eigen::Index r = 0; r < av.rows(); ++r) out(r, 0) = av(r, cols[static_cast<std::size_t>(r)]);
  const Var o = push(std::move(out), ng(a));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, a, cols, o] {
      Mat& ga = g(a);
      const Mat& go = grad(o);
      for (Eigen::Index r = 0; r < go.rows(); ++r) ga(r, cols[static_cast<std::size_t>(r)]) += go(r, 0);
    };
  return o;
}

Var Tape::masked_entropy(Var logp, const Mat& mask) {
  const Mat& lp = value(logp);
  Mat out = Mat::Zero(lp.rows(), 1);
  for (Eigen::Index r = 0; r < lp.rows(); ++r)
    for (Eigen::Index c = 0; c < lp.cols(); ++c)
      if (mask(r, c) != 0.0) out(r, 0) -= std::exp(lp(r, c)) * lp(r, c);
  const Var o = push(std::move(out), ng(logp));
  if (nodes_.back().needs_grad)
    nodes_.back().backward = [this, logp, mask, o] {
      const Mat& l = value(logp);
      const Mat& go = grad(o);
      Mat& gl = g(logp);
      for (Eigen::Index r = 0; r < l.rows(); ++r)
        for (Eigen::Index c = 0; c < l.cols(); ++c)
          if (mask(r, c) != 0.0) gl(r, c) -= go(r, 0) * std::exp(l(r, c)) * (l(r, c) + 1.0);
    };
  return o;
}

}  // namespace dgsr::ad
