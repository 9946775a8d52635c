#include "dgsr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <thread>

namespace dgsr {

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(Errc::InvalidArgument, what); };
  if (k < 1) bad("k must be >= 1");
  if (t < 1) bad("t must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) bad("alpha must be in (0, 1]");
  if (!(epsilon > 0.0 && epsilon < 1.0)) bad("epsilon must be in (0, 1)");
  if (q < 1) bad("q must be >= 1");
  if (budget < 0) bad("budget must be >= 0");
  if (lambda_h < 0 || lambda_len < 0) bad("regularizer weights must be >= 0");
  if (!(gamma_h > 0.0 && gamma_h <= 1.0)) bad("gamma_h must be in (0, 1]");
  if (!(lr > 0.0)) bad("lr must be > 0");
  if (patience < 1) bad("patience must be >= 1");
  if (min_len < 1 || max_len < min_len) bad("invalid length bounds");
}

std::optional<double> nmse_of_predictions(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, double sigma_y) {
  if (sigma_y == 0.0) throw Error(Errc::ZeroVariance, "target has zero variance");
  if (!yhat.allFinite()) return std::nullopt;
  const double mse = (y - yhat).squaredNorm() / static_cast<double>(y.size());
  const double v = mse / sigma_y;
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<double> nmse(const ExprTree& f, std::span<const double> consts, const Dataset& data) {
  if (data.sigma_y == 0.0) throw Error(Errc::ZeroVariance, "target has zero variance");
  const auto yhat = evaluate(f, data.X, consts);
  if (!yhat) return std::nullopt;
  return nmse_of_predictions(data.y, *yhat, data.sigma_y);
}

double reward(std::optional<double> n) { return n ? 1.0 / (1.0 + *n) : 0.0; }

MaxRewardQueue::MaxRewardQueue(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw Error(Errc::InvalidArgument, "queue capacity must be >= 1");
}

bool MaxRewardQueue::push(const std::string& key, double r, std::vector<int> seq) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
  if (it != entries_.end()) {
    if (r <= it->reward) return false;
    entries_.erase(it);
  } else if (static_cast<int>(entries_.size()) >= capacity_) {
    if (r <= entries_.back().reward) return false;
    entries_.pop_back();
  }
  const auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.reward < r; });
  entries_.insert(pos, Entry{key, r, std::move(seq)});
  return true;
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw Error(Errc::InvalidArgument, "quantile of empty set");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<int> risk_filter(const std::vector<double>& rewards, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error(Errc::InvalidArgument, "epsilon must be in (0, 1)");
  std::vector<int> out;
  if (rewards.empty()) return out;
  const double thr = quantile(rewards, 1.0 - eps);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    if (rewards[i] > thr) out.push_back(static_cast<int>(i));
  return out;
}

namespace {

// Per-position weights; position t of sequence b gets w(b, t) while t < len_b.
template <class F>
ad::Mat position_weights(const TeacherForced& tf, F w) {
  ad::Mat m = ad::Mat::Zero(static_cast<Eigen::Index>(tf.rows) * tf.L, 1);
  for (int b = 0; b < tf.rows; ++b)
    for (int t = 0; t < tf.lengths[static_cast<std::size_t>(b)]; ++t) m(b * tf.L + t, 0) = w(b, t);
  return m;
}

}  // namespace

ad::Var vpg_loss(ad::Tape& tape, const TeacherForced& tf, const std::vector<double>& rewards, double baseline) {
  if (static_cast<int>(rewards.size()) != tf.rows) throw Error(Errc::ShapeMismatch, "one reward per sequence");
  const double k = static_cast<double>(tf.rows);
  return tape.dot(tf.logp, position_weights(tf, [&](int b, int) {
                    return -(rewards[static_cast<std::size_t>(b)] - baseline) / k;
                  }));
}

double update_baseline(double baseline, const std::vector<double>& rewards, double alpha) {
  if (rewards.empty()) return baseline;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  return alpha * mean + (1.0 - alpha) * baseline;
}

ad::Var pqt_loss(ad::Tape& tape, const TeacherForced& tf) {
  if (tf.rows == 0) throw Error(Errc::EmptyQueue, "priority queue is empty");
  const double q = static_cast<double>(tf.rows);
  return tape.dot(tf.logp, position_weights(tf, [&](int, int) { return -1.0 / q; }));
}

ad::Var entropy_loss(ad::Tape& tape, const TeacherForced& tf, double lambda_h, double gamma_h) {
  const double k = static_cast<double>(std::max(tf.rows, 1));
  return tape.dot(tf.entropy, position_weights(tf, [&](int, int t) {
                    return -lambda_h * std::pow(gamma_h, t) / k;
                  }));
}

double length_penalty(int len, const TrainConfig& cfg) {
  const double d = static_cast<double>(len) - cfg.length_target();
  return cfg.lambda_len * d * d;
}

double entropy_term(const SampleBatch& batch, double lambda_h, double gamma_h) {
  double s = 0.0;
  for (const auto& h : batch.entropy)
    for (std::size_t t = 0; t < h.size(); ++t) s += std::pow(gamma_h, static_cast<double>(t)) * h[t];
  return -lambda_h * s / static_cast<double>(std::max<std::size_t>(batch.size(), 1));
}

void grad_step(GeneratorParams& params, const std::vector<Eigen::MatrixXd>& grads, AdamState& st,
               bool update_encoder, bool update_decoder) {
  if (grads.size() != params.size()) throw Error(Errc::ShapeMismatch, "gradient count differs from parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params.tensors[i].rows() || grads[i].cols() != params.tensors[i].cols())
      throw Error(Errc::ShapeMismatch, "gradient shape differs for " + params.names[i]);
    if (!grads[i].allFinite()) throw Error(Errc::NonFiniteGradient, "non-finite gradient in " + params.names[i]);
  }
  if (st.m.size() != params.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& t : params.tensors) {
      st.m.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
      st.v.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool enc = params.groups[i] == ParamGroup::Encoder;
    if ((enc && !update_encoder) || (!enc && !update_decoder)) continue;
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i].cwiseProduct(grads[i]);
    params.tensors[i].array() -=
        st.lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + st.eps);
  }
}

FitResult fit_constants(const ExprTree& skeleton, const Dataset& data, Budget* budget, int max_iter) {
  FitResult res;
  const std::size_t m = skeleton.const_slots().size();
  if (m == 0) {
    res.nmse = nmse(skeleton, {}, data);
    res.evaluations = 1;
    if (budget) budget->used += 1;
    return res;
  }
  const double inf = std::numeric_limits<double>::infinity();
  auto f = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    if (budget) budget->used += 1;
    const auto v = nmse(skeleton, std::span<const double>(x.data(), m), data);
    return v ? *v : inf;
  };
  auto grad = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g.resize(static_cast<Eigen::Index>(m));
    Eigen::VectorXd p = x;
    for (std::size_t i = 0; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double h = 1e-6 * std::max(1.0, std::fabs(x(ii)));
      p(ii) = x(ii) + h;
      const double fp = f(p);
      p(ii) = x(ii) - h;
      const double fm = f(p);
      p(ii) = x(ii);
      g(ii) = (fp - fm) / (2 * h);
    }
    return g.allFinite();
  };

  Eigen::VectorXd x = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m));
  double fx = f(x);
  Eigen::VectorXd best = x;
  double fbest = fx;
  Eigen::VectorXd g;
  if (std::isfinite(fx) && grad(x, g)) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (int it = 0; it < max_iter && g.norm() >= 1e-8; ++it) {
      Eigen::VectorXd p = -H * g;
      double slope = g.dot(p);
      if (slope >= 0) {
        H.setIdentity();
        p = -g;
        slope = g.dot(p);
      }
      double a = 1.0;
      double fn = inf;
      Eigen::VectorXd xn;
      bool ok = false;
      for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
        xn = x + a * p;
        fn = f(xn);
        if (std::isfinite(fn) && fn <= fx + 1e-4 * a * slope) {
          ok = true;
          break;
        }
      }
      if (!ok) break;
      Eigen::VectorXd gn;
      if (!grad(xn, gn)) {
        x = xn;
        fx = fn;
        break;
      }
      const Eigen::VectorXd s = xn - x;
      const Eigen::VectorXd yv = gn - g;
      const double sy = s.dot(yv);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const auto I = Eigen::MatrixXd::Identity(H.rows(), H.cols());
        H = (I - rho * s * yv.transpose()) * H * (I - rho * yv * s.transpose()) + rho * s * s.transpose();
      }
      x = xn;
      fx = fn;
      g = gn;
      if (fx < fbest) {
        fbest = fx;
        best = x;
      }
    }
  }
  if (fx < fbest) {
    fbest = fx;
    best = x;
  }
  res.consts.assign(best.data(), best.data() + best.size());
  if (std::isfinite(fbest)) res.nmse = fbest;
  return res;
}

RewardRecord score(const ExprTree& f, const Dataset& data, Budget* budget) {
  RewardRecord rec;
  if (!f.const_slots().empty()) {
    const FitResult fit = fit_constants(f, data, budget);
    rec.consts = fit.consts;
    rec.eval_count_delta = fit.evaluations;
  }
  rec.nmse = nmse(f, rec.consts, data);
  rec.eval_count_delta += 1;
  if (budget) budget->used += 1;
  rec.valid = rec.nmse.has_value();
  rec.reward = reward(rec.nmse);
  return rec;
}

int worker_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("DGSR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<int>(std::min<long>(n, v));
  }
  return n;
}

std::vector<RewardRecord> score_all(const std::vector<ExprTree>& fs, const Dataset& data, Budget* budget,
                                    int threads) {
  std::vector<RewardRecord> out(fs.size());
  if (threads <= 0) threads = worker_count();
  threads = std::max(1, std::min<int>(threads, static_cast<int>(fs.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < fs.size(); ++i) out[i] = score(fs[i], data, budget);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = next++; i < fs.size(); i = next++) out[i] = score(fs[i], data, budget);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
        next = fs.size();
      }
    });
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace dgsr
