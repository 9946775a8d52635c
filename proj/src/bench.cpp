#include "dgsr/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace dgsr {

using json = nlohmann::json;

namespace {

RecoveryRate rate_of(int recovered, int n) {
  const double p = static_cast<double>(recovered) / static_cast<double>(n);
  return {100.0 * p, 100.0 * 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(n))};
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

json opt(const std::optional<double>& v) {
  if (v && std::isfinite(*v)) return *v;
  return nullptr;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

RecoveryRate recovery_rate(const std::vector<RunTrace>& traces) {
  if (traces.empty()) throw Error(Errc::InvalidArgument, "recovery rate needs at least one trace");
  int rec = 0;
  for (const auto& t : traces) rec += t.status == RunStatus::Recovered ? 1 : 0;
  return rate_of(rec, static_cast<int>(traces.size()));
}

RecoveryRate recovery_rate(const std::vector<std::vector<RunTrace>>& per_problem) {
  if (per_problem.empty()) throw Error(Errc::InvalidArgument, "recovery rate needs at least one problem");
  RecoveryRate out;
  for (const auto& p : per_problem) {
    const auto r = recovery_rate(p);
    out.rate += r.rate;
    out.ci += r.ci;
  }
  out.rate /= static_cast<double>(per_problem.size());
  out.ci /= static_cast<double>(per_problem.size());
  return out;
}

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
  if (y.size() != yhat.size()) throw Error(Errc::ShapeMismatch, "y and yhat differ in length");
  if (y.size() < 2) throw Error(Errc::ZeroVariance, "R^2 needs at least two points");
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) throw Error(Errc::ZeroVariance, "target has zero variance");
  return 1.0 - (y - yhat).squaredNorm() / ss_tot;
}

int acc_tau(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, double tau) {
  if (y.size() != yhat.size()) throw Error(Errc::ShapeMismatch, "y and yhat differ in length");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) == 0.0) throw Error(Errc::DivisionByZeroTarget, "target value is zero at row " + std::to_string(i));
    const double e = std::abs((yhat(i) - y(i)) / y(i));
    worst = std::isnan(e) ? std::numeric_limits<double>::infinity() : std::max(worst, e);
  }
  return worst <= tau ? 1 : 0;
}

std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> c) {
  c.erase(std::remove_if(c.begin(), c.end(), [](const ParetoPoint& p) { return !std::isfinite(p.nmse); }),
          c.end());
  std::stable_sort(c.begin(), c.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.complexity != b.complexity ? a.complexity < b.complexity : a.nmse < b.nmse;
  });
  std::vector<ParetoPoint> out;
  for (auto& p : c)
    if (out.empty() || p.nmse < out.back().nmse) out.push_back(std::move(p));
  return out;
}

std::string RunResult::to_json() const {
  json cands = json::array();
  for (const auto& [p, cs] : candidates) cands.push_back({{"prefix", p}, {"consts", cs}});
  json j{{"problem", problem},
         {"seed", seed},
         {"prefix", prefix},
         {"consts", consts},
         {"infix", infix},
         {"best_reward", best_reward},
         {"status", status_name(status)},
         {"evaluations", evaluations},
         {"recovered_at", nullptr},
         {"candidates", cands}};
  if (recovered_at) j["recovered_at"] = *recovered_at;
  return j.dump(2);
}

RunResult RunResult::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunResult r;
    r.problem = j.at("problem").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.prefix = j.at("prefix").get<std::string>();
    r.consts = j.at("consts").get<std::vector<double>>();
    r.infix = j.at("infix").get<std::string>();
    r.best_reward = j.at("best_reward").get<double>();
    r.status = parse_status(j.at("status").get<std::string>());
    r.evaluations = j.at("evaluations").get<long>();
    if (!j.at("recovered_at").is_null()) r.recovered_at = j.at("recovered_at").get<long>();
    for (const auto& c : j.at("candidates"))
      r.candidates.emplace_back(c.at("prefix").get<std::string>(), c.at("consts").get<std::vector<double>>());
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::Io, std::string("bad run result: ") + e.what());
  }
}

BenchReport build_report(const std::vector<RunResult>& runs, double tau, std::uint64_t test_seed) {
  if (runs.empty()) throw Error(Errc::InvalidArgument, "no runs to report");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunResult*>> groups;
  for (const auto& r : runs) {
    if (!groups.count(r.problem)) order.push_back(r.problem);
    groups[r.problem].push_back(&r);
  }
  BenchReport rep;
  rep.tau = tau;
  rep.ci_method =
      "binomial normal approximation 1.96*sqrt(p(1-p)/n) per problem, averaged across problems; the reference "
      "method is unstated";
  for (const auto& name : order) {
    const ProblemSpec& spec = find_problem(name);
    if (!spec.truth) throw Error(Errc::InvalidArgument, "problem " + name + " has no ground truth");
    const Dataset test = sample_problem_dataset(spec, Split::Test, test_seed);
    const auto& rs = groups[name];
    ProblemReport p;
    p.name = name;
    p.runs = static_cast<int>(rs.size());
    std::vector<double> gammas, nmses, r2s;
    int acc = 0;
    std::vector<ParetoPoint> cands;
    auto test_nmse = [&](const std::string& prefix, const std::vector<double>& consts) -> std::optional<double> {
      if (prefix.empty()) return std::nullopt;
      return nmse(parse_prefix(parse_text(prefix)), consts, test);
    };
    for (const RunResult* r : rs) {
      if (r->status == RunStatus::Recovered) {
        ++p.recovered;
        gammas.push_back(static_cast<double>(r->recovered_at.value_or(r->evaluations)));
      }
      const auto n = test_nmse(r->prefix, r->consts);
      nmses.push_back(n ? *n : std::numeric_limits<double>::infinity());
      if (!r->prefix.empty()) {
        const ExprTree f = parse_prefix(parse_text(r->prefix));
        if (const auto yhat = evaluate(f, test.X, r->consts)) {
          try {
            r2s.push_back(r_squared(test.y, *yhat));
            acc += acc_tau(test.y, *yhat, tau);
          } catch (const Error&) {
            // zero targets or constant test output: metric undefined for this run
          }
        }
        cands.push_back({complexity(f), n ? *n : std::numeric_limits<double>::infinity(), to_infix(f, r->consts)});
      }
      for (const auto& [cp, cc] : r->candidates) {
        const ExprTree f = parse_prefix(parse_text(cp));
        const auto cn = test_nmse(cp, cc);
        cands.push_back({complexity(f), cn ? *cn : std::numeric_limits<double>::infinity(), to_infix(f, cc)});
      }
    }
    p.recovery = rate_of(p.recovered, p.runs);
    if (!gammas.empty()) {
      double s = 0;
      for (double g : gammas) s += g;
      p.gamma = s / static_cast<double>(gammas.size());
    }
    p.test_nmse = median(nmses);
    if (p.test_nmse && !std::isfinite(*p.test_nmse)) p.test_nmse.reset();
    p.r2 = median(r2s);
    p.acc_tau = static_cast<double>(acc) / static_cast<double>(p.runs);
    p.pareto = pareto_front(std::move(cands));
    rep.recovery.rate += p.recovery.rate;
    rep.recovery.ci += p.recovery.ci;
    rep.problems.push_back(std::move(p));
  }
  rep.recovery.rate /= static_cast<double>(rep.problems.size());
  rep.recovery.ci /= static_cast<double>(rep.problems.size());
  return rep;
}

void BenchReport::write_csv(std::ostream& out) const {
  out << "problem,runs,recovered,recovery_rate,recovery_ci,gamma,test_nmse,r2,acc_tau\n";
  for (const auto& p : problems) {
    out << csv_field(p.name) << ',' << p.runs << ',' << p.recovered << ',' << num(p.recovery.rate) << ','
        << num(p.recovery.ci) << ',' << (p.gamma ? num(*p.gamma) : "DNF") << ','
        << (p.test_nmse ? num(*p.test_nmse) : "") << ',' << (p.r2 ? num(*p.r2) : "") << ',' << num(p.acc_tau)
        << '\n';
  }
}

std::string BenchReport::to_json() const {
  json probs = json::array();
  for (const auto& p : problems) {
    json front = json::array();
    for (const auto& q : p.pareto) front.push_back({{"complexity", q.complexity}, {"nmse", q.nmse}, {"equation", q.equation}});
    probs.push_back({{"name", p.name},
                     {"runs", p.runs},
                     {"recovered", p.recovered},
                     {"recovery_rate", p.recovery.rate},
                     {"recovery_ci", p.recovery.ci},
                     {"gamma", p.gamma ? json(*p.gamma) : json("DNF")},
                     {"test_nmse", opt(p.test_nmse)},
                     {"r2", opt(p.r2)},
                     {"acc_tau", p.acc_tau},
                     {"pareto", front}});
  }
  const json j{{"recovery_rate", recovery.rate},
               {"recovery_ci", recovery.ci},
               {"tau", tau},
               {"ci_method", ci_method},
               {"problems", probs}};
  return j.dump(2);
}

void write_pareto_csv(const std::vector<ParetoPoint>& front, std::ostream& out) {
  out << "complexity,nmse,equation\n";
  for (const auto& p : front) out << p.complexity << ',' << num(p.nmse) << ',' << csv_field(p.equation) << '\n';
}

}  // namespace dgsr
