#include "dgsr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace dgsr {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::InvalidArgument, what); }

}  // namespace

Config Config::parse(std::string_view text) {
  Config c;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') bad(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) bad(where + "bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_name(key)) bad(where + "bad key '" + key + "'");
    if (section.empty()) bad(where + "key '" + key + "' outside any section");
    c.values_[section + "." + key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::Io, "cannot read config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos || !valid_name(key.substr(0, dot)) || !valid_name(key.substr(dot + 1)))
    bad("config key must look like section.key, got '" + key + "'");
  values_[key] = trim(value);
}

void Config::set_assignment(const std::string& a) {
  const auto eq = a.find('=');
  if (eq == std::string::npos) bad("expected section.key=value, got '" + a + "'");
  set(trim(a.substr(0, eq)), a.substr(eq + 1));
}

const std::string* Config::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  read_.insert(key);
  return &it->second;
}

std::string Config::str(const std::string& key, const std::string& def) const {
  const auto* v = find(key);
  return v ? *v : def;
}

long Config::integer(const std::string& key, long def) const {
  const auto* v = find(key);
  if (!v) return def;
  long out = 0;
  const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || p != v->data() + v->size()) bad(key + ": expected an integer, got '" + *v + "'");
  return out;
}

double Config::real(const std::string& key, double def) const {
  const auto* v = find(key);
  if (!v) return def;
  char* end = nullptr;
  const double out = std::strtod(v->c_str(), &end);
  if (v->empty() || end != v->c_str() + v->size()) bad(key + ": expected a number, got '" + *v + "'");
  return out;
}

bool Config::boolean(const std::string& key, bool def) const {
  const auto* v = find(key);
  if (!v) return def;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad(key + ": expected true or false, got '" + *v + "'");
}

std::vector<std::string> Config::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

std::string Config::dump() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

void apply(const Config& c, TrainConfig& t) {
  t.k = static_cast<int>(c.integer("train.k", t.k));
  t.t = static_cast<int>(c.integer("train.t", t.t));
  t.alpha = c.real("train.alpha", t.alpha);
  t.lambda_h = c.real("train.lambda_h", t.lambda_h);
  t.gamma_h = c.real("train.gamma_h", t.gamma_h);
  t.lr = c.real("train.lr", t.lr);
  t.epsilon = c.real("train.epsilon", t.epsilon);
  t.q = static_cast<int>(c.integer("train.q", t.q));
  t.patience = static_cast<int>(c.integer("train.patience", t.patience));
  t.min_len = static_cast<int>(c.integer("train.min_len", t.min_len));
  t.max_len = static_cast<int>(c.integer("train.max_len", t.max_len));
  t.lambda_len = c.real("train.lambda_len", t.lambda_len);
  t.len_target = c.real("train.len_target", t.len_target);
  t.budget = c.integer("train.budget", t.budget);
  t.validate();
}

void apply(const Config& c, GPConfig& g) {
  g.generations = static_cast<int>(c.integer("gp.generations", g.generations));
  g.crossover_prob = c.real("gp.crossover_prob", g.crossover_prob);
  g.mutation_prob = c.real("gp.mutation_prob", g.mutation_prob);
  g.tournament_size = static_cast<int>(c.integer("gp.tournament_size", g.tournament_size));
  g.mutate_tree_max = static_cast<int>(c.integer("gp.mutate_tree_max", g.mutate_tree_max));
  g.elites = static_cast<int>(c.integer("gp.elites", g.elites));
  g.validate();
}

void apply(const Config& c, SkeletonSampler& s) {
  s.l_min = static_cast<int>(c.integer("corpus.l_min", s.l_min));
  s.l_max = static_cast<int>(c.integer("corpus.l_max", s.l_max));
  s.d = static_cast<int>(c.integer("corpus.d", s.d));
  s.p_variable = c.real("corpus.p_variable", s.p_variable);
  s.int_lo = static_cast<int>(c.integer("corpus.int_lo", s.int_lo));
  s.int_hi = static_cast<int>(c.integer("corpus.int_hi", s.int_hi));
  s.has_const = c.boolean("corpus.has_const", s.has_const);
  s.p_promote = c.real("corpus.p_promote", s.p_promote);
  s.validate();
}

void apply(const Config& c, ArchConfig& a) {
  a.width = static_cast<int>(c.integer("model.width", a.width));
  a.state_width = static_cast<int>(c.integer("model.state_width", a.state_width));
  a.tree_emb = static_cast<int>(c.integer("model.tree_emb", a.tree_emb));
  a.inducing = static_cast<int>(c.integer("model.inducing", a.inducing));
  a.isab_blocks = static_cast<int>(c.integer("model.isab_blocks", a.isab_blocks));
  a.state_layers = static_cast<int>(c.integer("model.state_layers", a.state_layers));
  a.decoder_layers = static_cast<int>(c.integer("model.decoder_layers", a.decoder_layers));
  a.ff = static_cast<int>(c.integer("model.ff", a.ff));
  a.max_rows = static_cast<int>(c.integer("model.max_rows", a.max_rows));
  a.no_encoder = c.boolean("model.no_encoder", a.no_encoder);
  if (a.width < 1 || a.state_width < 1 || a.tree_emb < 1 || a.inducing < 1 || a.isab_blocks < 0 ||
      a.state_layers < 0 || a.decoder_layers < 0 || a.ff < 1 || a.max_rows < 1)
    bad("model sizes must be positive");
}

void apply(const Config& c, PretrainConfig& p) {
  apply(c, p.train);
  p.max_iterations = static_cast<int>(c.integer("pretrain.iterations", p.max_iterations));
  p.validation_size = static_cast<int>(c.integer("pretrain.validation_size", p.validation_size));
  p.validation_k = static_cast<int>(c.integer("pretrain.validation_k", p.validation_k));
  p.validation_every = static_cast<int>(c.integer("pretrain.validation_every", p.validation_every));
  p.ce = c.boolean("pretrain.ce", p.ce);
  p.seed = static_cast<std::uint64_t>(c.integer("pretrain.seed", static_cast<long>(p.seed)));
  p.validate();
}

void apply(const Config& c, InferConfig& i) {
  apply(c, i.train);
  apply(c, i.gp);
  i.no_gp = c.boolean("run.no_gp", i.no_gp);
  i.max_iterations = static_cast<int>(c.integer("run.max_iterations", i.max_iterations));
  i.recovery_reward = c.real("run.recovery_reward", i.recovery_reward);
  i.nll_every = static_cast<int>(c.integer("run.nll_every", i.nll_every));
  i.validate();
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto number = [&](const std::string& s) {
    std::uint64_t v = 0;
    const std::string t = trim(s);
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || p != t.data() + t.size()) bad("bad seed '" + t + "' in '" + text + "'");
    return v;
  };
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(number(part));
      continue;
    }
    const auto a = number(part.substr(0, dots));
    const auto b = number(part.substr(dots + 2));
    if (b < a) bad("descending seed range '" + part + "'");
    if (b - a > 1'000'000) bad("seed range too large '" + part + "'");
    for (auto s = a; s <= b; ++s) out.push_back(s);
  }
  if (out.empty()) bad("no seeds in '" + text + "'");
  auto sorted = out;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) bad("repeated seed in '" + text + "'");
  return out;
}

}  // namespace dgsr
