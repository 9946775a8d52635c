#include "dgsr/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

namespace dgsr {

namespace {

// ---------------------------------------------------------------------------
// Coefficients: exact int64 rationals, degrading to double on overflow.

using i128 = __int128;

struct Coeff {
  bool exact = true;
  std::int64_t n = 0;
  std::int64_t d = 1;
  double v = 0.0;

  static Coeff integer(std::int64_t k) {
    Coeff c;
    c.n = k;
    return c;
  }
  static Coeff real(double x) {
    Coeff c;
    c.exact = false;
    c.v = x;
    return c;
  }
  double value() const { return exact ? static_cast<double>(n) / static_cast<double>(d) : v; }
  bool zero() const { return exact ? n == 0 : v == 0.0; }
  bool one() const { return exact ? (n == 1 && d == 1) : v == 1.0; }
};

i128 gcd128(i128 a, i128 b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

Coeff make_rational(i128 n, i128 d) {
  if (d == 0) return Coeff::real(std::nan(""));
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const i128 g = gcd128(n, d);
  if (g > 1) {
    n /= g;
    d /= g;
  }
  constexpr i128 lim = static_cast<i128>(INT64_MAX);
  if (n > lim || n < -lim || d > lim)
    return Coeff::real(static_cast<double>(n) / static_cast<double>(d));
  Coeff c;
  c.n = static_cast<std::int64_t>(n);
  c.d = static_cast<std::int64_t>(d);
  if (c.n == 0) c.d = 1;
  return c;
}

// Recognises doubles that are (numerically) small-denominator rationals so
// decimal literals such as 1.5 or 3.39 stay exact.
Coeff from_double(double x) {
  if (!std::isfinite(x)) return Coeff::real(x);
  if (x == 0.0) return Coeff::integer(0);
  if (std::fabs(x) < 1e15 && std::nearbyint(x) == x) return Coeff::integer(static_cast<std::int64_t>(x));
  if (std::fabs(x) > 1e12 || std::fabs(x) < 1e-9) return Coeff::real(x);
  // Continued fraction convergents.
  double r = std::fabs(x);
  std::int64_t h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  for (int it = 0; it < 40; ++it) {
    const double a = std::floor(r);
    if (a > 1e12) break;
    const auto ai = static_cast<std::int64_t>(a);
    const std::int64_t h2 = ai * h1 + h0;
    const std::int64_t k2 = ai * k1 + k0;
    if (k2 > 1000000) break;
    h0 = h1;
    h1 = h2;
    k0 = k1;
    k1 = k2;
    const double approx = static_cast<double>(h1) / static_cast<double>(k1);
    if (std::fabs(approx - std::fabs(x)) <= 1e-12 * std::fabs(x))
      return make_rational(x < 0 ? -h1 : h1, k1);
    const double frac = r - a;
    if (frac < 1e-15) break;
    r = 1.0 / frac;
  }
  return Coeff::real(x);
}

Coeff real_result(double r, double a, double b) {
  if (std::fabs(r) <= 1e-10 * std::max(std::fabs(a), std::fabs(b))) return Coeff::integer(0);
  return Coeff::real(r);
}

Coeff operator+(const Coeff& a, const Coeff& b) {
  if (a.exact && b.exact)
    return make_rational(static_cast<i128>(a.n) * b.d + static_cast<i128>(b.n) * a.d,
                         static_cast<i128>(a.d) * b.d);
  return real_result(a.value() + b.value(), a.value(), b.value());
}
Coeff operator-(const Coeff& a) {
  Coeff c = a;
  if (c.exact) c.n = -c.n;
  else c.v = -c.v;
  return c;
}
Coeff operator-(const Coeff& a, const Coeff& b) { return a + (-b); }
Coeff operator*(const Coeff& a, const Coeff& b) {
  if (a.exact && b.exact)
    return make_rational(static_cast<i128>(a.n) * b.n, static_cast<i128>(a.d) * b.d);
  if (a.zero() || b.zero()) return Coeff::integer(0);
  return Coeff::real(a.value() * b.value());
}
Coeff operator/(const Coeff& a, const Coeff& b) {
  if (a.exact && b.exact)
    return make_rational(static_cast<i128>(a.n) * b.d, static_cast<i128>(a.d) * b.n);
  if (a.zero()) return Coeff::integer(0);
  return Coeff::real(a.value() / b.value());
}
bool same(const Coeff& a, const Coeff& b) {
  if (a.exact && b.exact) return a.n == b.n && a.d == b.d;
  const double x = a.value(), y = b.value();
  return std::fabs(x - y) <= 1e-9 * std::max(std::fabs(x), std::fabs(y));
}

std::string coeff_str(const Coeff& c) {
  if (c.exact) return c.d == 1 ? std::to_string(c.n) : std::to_string(c.n) + "/" + std::to_string(c.d);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", c.v);
  return buf;
}

// ---------------------------------------------------------------------------
// Polynomials over interned atoms.

using Mono = std::vector<std::pair<int, int>>;  // (atom id, exponent), sorted by id

struct Term {
  Mono m;
  Coeff c;
};
using Poly = std::vector<Term>;  // sorted by m, no zero coefficients

struct Rat {
  Poly p;
  Poly q;
};

struct TooLarge {};

constexpr std::size_t kMaxTerms = 400;
constexpr std::size_t kMaxProduct = 40000;

int degree(const Mono& m) {
  int s = 0;
  for (const auto& [a, e] : m) s += e;
  return s;
}

Mono mono_mul(const Mono& a, const Mono& b) {
  Mono out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) out.push_back(a[i++]);
    else if (i == a.size() || b[j].first < a[i].first) out.push_back(b[j++]);
    else {
      out.emplace_back(a[i].first, a[i].second + b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

bool mono_divides(const Mono& a, const Mono& b) {
  std::size_t j = 0;
  for (const auto& [id, e] : a) {
    while (j < b.size() && b[j].first < id) ++j;
    if (j == b.size() || b[j].first != id || b[j].second < e) return false;
  }
  return true;
}

Mono mono_div(const Mono& b, const Mono& a) {
  Mono out;
  std::size_t i = 0;
  for (const auto& [id, e] : b) {
    while (i < a.size() && a[i].first < id) ++i;
    const int sub = (i < a.size() && a[i].first == id) ? a[i].second : 0;
    if (e - sub > 0) out.emplace_back(id, e - sub);
  }
  return out;
}

// Graded lexicographic order; smallest atom id is most significant.
int grlex_cmp(const Mono& a, const Mono& b) {
  const int da = degree(a), db = degree(b);
  if (da != db) return da < db ? -1 : 1;
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    int ia = i < a.size() ? a[i].first : INT32_MAX;
    int jb = j < b.size() ? b[j].first : INT32_MAX;
    int id = std::min(ia, jb);
    int ea = (ia == id) ? a[i].second : 0;
    int eb = (jb == id) ? b[j].second : 0;
    if (ea != eb) return ea < eb ? -1 : 1;
    if (ia == id) ++i;
    if (jb == id) ++j;
  }
  return 0;
}

Poly poly_const(const Coeff& c) {
  if (c.zero()) return {};
  return {Term{{}, c}};
}

Poly poly_add(const Poly& a, const Poly& b) {
  Poly out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].m < b[j].m)) out.push_back(a[i++]);
    else if (i == a.size() || b[j].m < a[i].m) out.push_back(b[j++]);
    else {
      Coeff c = a[i].c + b[j].c;
      if (!c.zero()) out.push_back(Term{a[i].m, c});
      ++i;
      ++j;
    }
  }
  if (out.size() > kMaxTerms) throw TooLarge{};
  return out;
}

Poly poly_scale(const Poly& a, const Coeff& c) {
  if (c.zero()) return {};
  Poly out;
  out.reserve(a.size());
  for (const auto& t : a) {
    Coeff k = t.c * c;
    if (!k.zero()) out.push_back(Term{t.m, k});
  }
  return out;
}

Poly poly_neg(const Poly& a) { return poly_scale(a, Coeff::integer(-1)); }

Poly poly_mul(const Poly& a, const Poly& b) {
  if (a.empty() || b.empty()) return {};
  if (a.size() * b.size() > kMaxProduct) throw TooLarge{};
  std::map<Mono, Coeff> acc;
  for (const auto& x : a)
    for (const auto& y : b) {
      Mono m = mono_mul(x.m, y.m);
      auto it = acc.find(m);
      if (it == acc.end()) acc.emplace(std::move(m), x.c * y.c);
      else it->second = it->second + x.c * y.c;
    }
  Poly out;
  out.reserve(acc.size());
  for (auto& [m, c] : acc)
    if (!c.zero()) out.push_back(Term{m, c});
  if (out.size() > kMaxTerms) throw TooLarge{};
  return out;
}

bool is_one(const Poly& p) { return p.size() == 1 && p[0].m.empty() && p[0].c.one(); }
bool is_constant(const Poly& p) { return p.empty() || (p.size() == 1 && p[0].m.empty()); }
bool all_exact(const Poly& p) {
  return std::all_of(p.begin(), p.end(), [](const Term& t) { return t.c.exact; });
}

bool poly_equal(const Poly& a, const Poly& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].m != b[i].m || !same(a[i].c, b[i].c)) return false;
  return true;
}

std::size_t leading_index(const Poly& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (grlex_cmp(p[i].m, p[best].m) > 0) best = i;
  return best;
}

// Exact multivariate division; a single divisor is always a Groebner basis, so
// a non-divisible leading remainder term proves non-divisibility.
bool divide_exact(const Poly& num, const Poly& den, Poly& quot) {
  if (den.empty()) return false;
  quot.clear();
  Poly r = num;
  const Term lt_d = den[leading_index(den)];
  for (int guard = 0; guard < 4000 && !r.empty(); ++guard) {
    const std::size_t li = leading_index(r);
    const Term lt_r = r[li];
    if (!mono_divides(lt_d.m, lt_r.m)) return false;
    Term t{mono_div(lt_r.m, lt_d.m), lt_r.c / lt_d.c};
    quot = poly_add(quot, Poly{t});
    r = poly_add(r, poly_neg(poly_mul(den, Poly{t})));
    // Floating residue of the cancelled leading term.
    r.erase(std::remove_if(r.begin(), r.end(), [&](const Term& x) { return x.m == lt_r.m; }),
            r.end());
  }
  return r.empty();
}

// ---------------------------------------------------------------------------
// Kernels.

enum class Kind { Var, Symbol, Sin, Cos, Exp, Log, Sqrt, Pow, Opaque };

struct Atom {
  Kind kind;
  std::string key;
  int arg = -1;   // index into Ctx::args
  int arg2 = -1;  // exponent argument of Pow
};

class Ctx {
 public:
  Rat canon(const ExprTree& t, std::span<const double> consts) {
    consts_ = consts;
    slot_of_.assign(t.size(), -1);
    for (std::size_t k = 0; k < t.const_slots().size(); ++k)
      slot_of_[static_cast<std::size_t>(t.const_slots()[k])] = static_cast<int>(k);
    return node(t, 0);
  }

  std::string key(const Rat& r) const {
    if (is_one(r.q)) return poly_str(r.p);
    return "(" + poly_str(r.p) + ")/(" + poly_str(r.q) + ")";
  }
  std::string poly_str(const Poly& p) const {
    if (p.empty()) return "0";
    std::vector<std::pair<std::string, std::string>> terms;
    terms.reserve(p.size());
    for (const auto& t : p) terms.emplace_back(mono_str(t.m), coeff_str(t.c));
    std::sort(terms.begin(), terms.end());
    std::string out;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i) out += " + ";
      const auto& [mono, coeff] = terms[i];
      if (mono.empty()) out += coeff;
      else if (coeff == "1") out += mono;
      else if (coeff == "-1") out += "-" + mono;
      else out += coeff + "*" + mono;
    }
    return out;
  }

  Rat add(const Rat& a, const Rat& b) {
    if (poly_equal(a.q, b.q)) return normalize({poly_add(a.p, b.p), a.q});
    return normalize({poly_add(poly_mul(a.p, b.q), poly_mul(b.p, a.q)), poly_mul(a.q, b.q)});
  }
  Rat neg(const Rat& a) { return {poly_neg(a.p), a.q}; }
  Rat mul(const Rat& a, const Rat& b) {
    return reduce_sqrt(normalize({poly_mul(a.p, b.p), poly_mul(a.q, b.q)}));
  }
  Rat div(const Rat& a, const Rat& b) {
    if (b.p.empty()) return atom_rat(intern(Kind::Opaque, "undefined"));
    return reduce_sqrt(normalize({poly_mul(a.p, b.q), poly_mul(a.q, b.p)}));
  }
  Rat pow_int(const Rat& a, int k) {
    if (k == 0) return constant(Coeff::integer(1));
    Rat base = a;
    if (k < 0) {
      base = div(constant(Coeff::integer(1)), a);
      k = -k;
    }
    Rat out = base;
    for (int i = 1; i < k; ++i) out = mul(out, base);
    return out;
  }

  static Rat constant(const Coeff& c) { return {poly_const(c), poly_const(Coeff::integer(1))}; }

  Poly cross_difference(const Rat& a, const Rat& b) const {
    const Poly l = poly_mul(a.p, b.q);
    const Poly r = poly_mul(b.p, a.q);
    double scale = 0.0;
    for (const auto& t : l) scale = std::max(scale, std::fabs(t.c.value()));
    for (const auto& t : r) scale = std::max(scale, std::fabs(t.c.value()));
    Poly diff = poly_add(l, poly_neg(r));
    diff.erase(std::remove_if(diff.begin(), diff.end(),
                              [&](const Term& t) {
                                return !t.c.exact && std::fabs(t.c.value()) <= 1e-9 * scale;
                              }),
               diff.end());
    return diff;
  }

 private:
  int intern(Kind kind, const std::string& key, int arg = -1, int arg2 = -1) {
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(atoms_.size());
    atoms_.push_back(Atom{kind, key, arg, arg2});
    index_.emplace(key, id);
    return id;
  }

  int store_arg(const Rat& r) {
    args_.push_back(r);
    return static_cast<int>(args_.size()) - 1;
  }

  static Rat atom_rat(int id) {
    return {Poly{Term{Mono{{id, 1}}, Coeff::integer(1)}}, poly_const(Coeff::integer(1))};
  }

  int kernel(Kind kind, std::string_view name, const Rat& arg) {
    const std::string k = std::string(name) + "(" + key(arg) + ")";
    auto it = index_.find(k);
    if (it != index_.end()) return it->second;
    return intern(kind, k, store_arg(arg));
  }

  std::string mono_str(const Mono& m) const {
    std::vector<std::string> parts;
    parts.reserve(m.size());
    for (const auto& [id, e] : m) {
      const auto& a = atoms_[static_cast<std::size_t>(id)];
      parts.push_back(e == 1 ? a.key : a.key + "^" + std::to_string(e));
    }
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += "*";
      out += parts[i];
    }
    return out;
  }

  // Returns the atom id when r is exactly 1 * atom / 1 of the given kind.
  int single_atom(const Rat& r, Kind kind) const {
    if (!is_one(r.q) || r.p.size() != 1) return -1;
    const auto& t = r.p[0];
    if (!t.c.one() || t.m.size() != 1 || t.m[0].second != 1) return -1;
    const int id = t.m[0].first;
    return atoms_[static_cast<std::size_t>(id)].kind == kind ? id : -1;
  }

  static bool constant_value(const Rat& r, double& v) {
    if (!is_one(r.q) || !is_constant(r.p)) return false;
    v = r.p.empty() ? 0.0 : r.p[0].c.value();
    return true;
  }

  Rat numeric(double v) {
    if (!std::isfinite(v)) return atom_rat(intern(Kind::Opaque, "undefined"));
    return constant(from_double(v));
  }

  Rat normalize(Rat r) {
    if (r.q.empty()) return atom_rat(intern(Kind::Opaque, "undefined"));
    if (r.p.empty()) return {Poly{}, poly_const(Coeff::integer(1))};
    cancel_content(r);
    if (r.q.size() == 1) {
      if (!r.q[0].m.empty()) {
        // Monomial denominator; content already cancelled.
      } else {
        r.p = poly_scale(r.p, Coeff::integer(1) / r.q[0].c);
        r.q = poly_const(Coeff::integer(1));
        return r;
      }
    } else {
      Poly quot;
      if (r.p.size() >= r.q.size() && divide_exact(r.p, r.q, quot)) {
        r.p = std::move(quot);
        r.q = poly_const(Coeff::integer(1));
        return r;
      }
      if (r.p.size() > 1 && r.q.size() >= r.p.size() && divide_exact(r.q, r.p, quot)) {
        r.p = poly_const(Coeff::integer(1));
        r.q = std::move(quot);
      } else {
        univariate_gcd(r);
      }
    }
    // Leading coefficient of the denominator becomes +1.
    std::size_t lead = 0;
    std::string lead_str = mono_str(r.q[0].m);
    for (std::size_t i = 1; i < r.q.size(); ++i) {
      const int c = degree(r.q[i].m) - degree(r.q[lead].m);
      std::string s = mono_str(r.q[i].m);
      if (c > 0 || (c == 0 && s > lead_str)) {
        lead = i;
        lead_str = std::move(s);
      }
    }
    const Coeff inv = Coeff::integer(1) / r.q[lead].c;
    if (!inv.one()) {
      r.p = poly_scale(r.p, inv);
      r.q = poly_scale(r.q, inv);
    }
    return r;
  }

  static void cancel_content(Rat& r) {
    Mono content = r.p[0].m;
    auto intersect = [&](const Mono& m) {
      Mono out;
      std::size_t j = 0;
      for (const auto& [id, e] : content) {
        while (j < m.size() && m[j].first < id) ++j;
        if (j < m.size() && m[j].first == id) out.emplace_back(id, std::min(e, m[j].second));
      }
      content = std::move(out);
    };
    for (const auto& t : r.p) intersect(t.m);
    for (const auto& t : r.q) intersect(t.m);
    if (content.empty()) return;
    for (auto& t : r.p) t.m = mono_div(t.m, content);
    for (auto& t : r.q) t.m = mono_div(t.m, content);
    std::sort(r.p.begin(), r.p.end(), [](const Term& a, const Term& b) { return a.m < b.m; });
    std::sort(r.q.begin(), r.q.end(), [](const Term& a, const Term& b) { return a.m < b.m; });
  }

  // Euclid over exact rationals when both sides are polynomials in one atom.
  static void univariate_gcd(Rat& r) {
    int atom = -1;
    auto single = [&](const Poly& p) {
      for (const auto& t : p) {
        if (t.m.size() > 1) return false;
        if (t.m.size() == 1) {
          if (atom >= 0 && atom != t.m[0].first) return false;
          atom = t.m[0].first;
        }
      }
      return true;
    };
    if (!single(r.p) || !single(r.q) || atom < 0) return;
    if (!all_exact(r.p) || !all_exact(r.q)) return;
    if (is_constant(r.p) || is_constant(r.q)) return;

    auto to_dense = [&](const Poly& p) {
      std::vector<Coeff> c;
      for (const auto& t : p) {
        const int e = t.m.empty() ? 0 : t.m[0].second;
        if (static_cast<int>(c.size()) <= e) c.resize(static_cast<std::size_t>(e) + 1);
        c[static_cast<std::size_t>(e)] = t.c;
      }
      return c;
    };
    auto trim = [](std::vector<Coeff>& c) {
      while (!c.empty() && c.back().zero()) c.pop_back();
    };
    std::vector<Coeff> a = to_dense(r.p), b = to_dense(r.q);
    trim(a);
    trim(b);
    if (a.size() < b.size()) std::swap(a, b);
    for (int guard = 0; guard < 64 && !b.empty(); ++guard) {
      // a mod b
      while (a.size() >= b.size() && !a.empty()) {
        const Coeff f = a.back() / b.back();
        const std::size_t shift = a.size() - b.size();
        for (std::size_t i = 0; i < b.size(); ++i) a[i + shift] = a[i + shift] - f * b[i];
        if (!a.back().zero()) return;  // numerical trouble; give up
        a.pop_back();
        trim(a);
        for (const auto& c : a)
          if (!c.exact) return;
      }
      std::swap(a, b);
    }
    if (a.size() <= 1) return;  // gcd is a constant
    Poly g;
    for (std::size_t e = 0; e < a.size(); ++e)
      if (!a[e].zero()) g.push_back(Term{e == 0 ? Mono{} : Mono{{atom, static_cast<int>(e)}}, a[e]});
    std::sort(g.begin(), g.end(), [](const Term& x, const Term& y) { return x.m < y.m; });
    Poly qp, qq;
    if (divide_exact(r.p, g, qp) && divide_exact(r.q, g, qq)) {
      r.p = std::move(qp);
      r.q = std::move(qq);
    }
  }

  // sqrt(A)^k with k >= 2 becomes A^(k/2) * sqrt(A)^(k%2).
  Rat reduce_sqrt(const Rat& r) {
    auto needs = [&](const Poly& p) {
      for (const auto& t : p)
        for (const auto& [id, e] : t.m)
          if (e >= 2 && atoms_[static_cast<std::size_t>(id)].kind == Kind::Sqrt) return true;
      return false;
    };
    if (!needs(r.p) && !needs(r.q)) return r;
    auto expand = [&](const Poly& p) {
      Rat sum = constant(Coeff::integer(0));
      for (const auto& t : p) {
        Rat term = constant(t.c);
        for (const auto& [id, e] : t.m) {
          const Atom a = atoms_[static_cast<std::size_t>(id)];
          if (a.kind == Kind::Sqrt && e >= 2) {
            const Rat inner = args_[static_cast<std::size_t>(a.arg)];
            term = mul(term, pow_int(inner, e / 2));
            if (e % 2) term = mul(term, atom_rat(id));
          } else {
            term = mul(term, Rat{Poly{Term{Mono{{id, e}}, Coeff::integer(1)}},
                                 poly_const(Coeff::integer(1))});
          }
        }
        sum = add(sum, term);
      }
      return sum;
    };
    return div(expand(r.p), expand(r.q));
  }

  Rat fn_exp(const Rat& a) {
    double v;
    if (constant_value(a, v)) return numeric(std::exp(v));
    if (!is_one(a.q)) return atom_rat(kernel(Kind::Exp, "exp", a));
    // exp of a sum is the product of exps; integer multiples become powers so
    // exp(2*x1) and exp(x1)*exp(x1) share a form, and exp(k*log(A)) = A^k.
    Rat out = constant(Coeff::integer(1));
    for (const auto& t : a.p) {
      if (t.m.empty()) {
        out = mul(out, numeric(std::exp(t.c.value())));
        continue;
      }
      const bool small_int = t.c.exact && t.c.d == 1 && std::llabs(t.c.n) <= 8;
      if (small_int && t.m.size() == 1 && t.m[0].second == 1) {
        const Atom& at = atoms_[static_cast<std::size_t>(t.m[0].first)];
        if (at.kind == Kind::Log) {
          out = mul(out, pow_int(args_[static_cast<std::size_t>(at.arg)], static_cast<int>(t.c.n)));
          continue;
        }
      }
      if (small_int) {
        const Rat unit{Poly{Term{t.m, Coeff::integer(1)}}, poly_const(Coeff::integer(1))};
        out = mul(out, pow_int(atom_rat(kernel(Kind::Exp, "exp", unit)), static_cast<int>(t.c.n)));
      } else {
        const Rat part{Poly{t}, poly_const(Coeff::integer(1))};
        out = mul(out, atom_rat(kernel(Kind::Exp, "exp", part)));
      }
    }
    return out;
  }
  Rat fn_log(const Rat& a) {
    double v;
    if (constant_value(a, v)) return numeric(v > 0 ? std::log(v) : std::nan(""));
    // log of a product of exps (numerator only, unit coefficient).
    if (is_one(a.q) && a.p.size() == 1 && a.p[0].c.one() && !a.p[0].m.empty()) {
      bool all_exp = true;
      for (const auto& [id, e] : a.p[0].m)
        all_exp &= atoms_[static_cast<std::size_t>(id)].kind == Kind::Exp;
      if (all_exp) {
        Rat sum = constant(Coeff::integer(0));
        for (const auto& [id, e] : a.p[0].m) {
          const Rat& arg = args_[static_cast<std::size_t>(atoms_[static_cast<std::size_t>(id)].arg)];
          sum = add(sum, mul(constant(Coeff::integer(e)), arg));
        }
        return sum;
      }
    }
    return atom_rat(kernel(Kind::Log, "log", a));
  }
  Rat fn_trig(const Rat& a, bool is_sin) {
    double v;
    if (constant_value(a, v)) return numeric(is_sin ? std::sin(v) : std::cos(v));
    return atom_rat(kernel(is_sin ? Kind::Sin : Kind::Cos, is_sin ? "sin" : "cos", a));
  }
  Rat fn_sqrt(const Rat& a) {
    double v;
    if (constant_value(a, v)) return numeric(v >= 0 ? std::sqrt(v) : std::nan(""));
    return atom_rat(kernel(Kind::Sqrt, "sqrt", a));
  }
  Rat fn_pow(const Rat& a, const Rat& b) {
    double e;
    if (constant_value(b, e)) {
      const Coeff c = b.p.empty() ? Coeff::integer(0) : b.p[0].c;
      if (c.exact && c.d == 1 && std::llabs(c.n) <= 16) {
        double base;
        if (c.n < 0 && constant_value(a, base) && base == 0.0) return numeric(std::nan(""));
        return pow_int(a, static_cast<int>(c.n));
      }
      if (c.exact && c.n == 1 && c.d == 2) return fn_sqrt(a);
      double base;
      if (constant_value(a, base)) return numeric(std::pow(base, e));
    }
    const std::string k = "pow(" + key(a) + "," + key(b) + ")";
    auto it = index_.find(k);
    if (it != index_.end()) return atom_rat(it->second);
    const int ia = store_arg(a);
    const int ib = store_arg(b);
    return atom_rat(intern(Kind::Pow, k, ia, ib));
  }

  Rat node(const ExprTree& t, int i) {
    const auto& n = t.node(i);
    try {
      return node_inner(t, i, n);
    } catch (const TooLarge&) {
      // Too big to expand: keep the subtree as an opaque symbol.
      const int end = t.subtree_end(i);
      const auto toks = t.tokens();
      std::string k = "opaque(" +
                      to_text(std::span<const Token>(toks).subspan(static_cast<std::size_t>(i),
                                                                   static_cast<std::size_t>(end - i))) +
                      ")";
      return atom_rat(intern(Kind::Opaque, k));
    }
  }

  Rat node_inner(const ExprTree& t, int i, const ExprTree::Node& n) {
    auto c0 = [&] { return node(t, n.children[0]); };
    auto c1 = [&] { return node(t, n.children[1]); };
    switch (n.token.op) {
      case Op::Add: { Rat a = c0(); return add(a, c1()); }
      case Op::Sub: { Rat a = c0(); return add(a, neg(c1())); }
      case Op::Mul: { Rat a = c0(); return mul(a, c1()); }
      case Op::Div: { Rat a = c0(); return div(a, c1()); }
      case Op::Pow: { Rat a = c0(); return fn_pow(a, c1()); }
      case Op::Exp: return fn_exp(c0());
      case Op::Log: return fn_log(c0());
      case Op::Sin: return fn_trig(c0(), true);
      case Op::Cos: return fn_trig(c0(), false);
      case Op::Sqrt: return fn_sqrt(c0());
      case Op::Pow2: return pow_int(c0(), 2);
      case Op::Pow3: return pow_int(c0(), 3);
      case Op::Pow4: return pow_int(c0(), 4);
      case Op::Pow5: return pow_int(c0(), 5);
      case Op::Var: return atom_rat(intern(Kind::Var, n.token.name()));
      case Op::Int: return constant(Coeff::integer(n.token.value));
      case Op::Const: {
        const int slot = slot_of_[static_cast<std::size_t>(i)];
        if (consts_.empty()) return atom_rat(intern(Kind::Symbol, "c" + std::to_string(slot)));
        return constant(from_double(consts_[static_cast<std::size_t>(slot)]));
      }
    }
    return constant(Coeff::integer(0));
  }

  std::span<const double> consts_;
  std::vector<int> slot_of_;
  std::vector<Atom> atoms_;
  std::unordered_map<std::string, int> index_;
  std::vector<Rat> args_;
};

void check_consts(const ExprTree& t, std::span<const double> consts) {
  if (!consts.empty() && consts.size() != t.const_slots().size())
    throw Error(Errc::ConstArityMismatch, "expected " + std::to_string(t.const_slots().size()) +
                                              " constants, got " + std::to_string(consts.size()));
}

Equivalence falsify(const ExprTree& f, std::span<const double> fc, const ExprTree& g,
                    std::span<const double> gc, const FalsifierDomain& dom) {
  const int d = std::max({max_variable(f), max_variable(g), 1});
  std::vector<double> f_ones, g_ones;
  if (fc.empty() && !f.const_slots().empty()) {
    f_ones.assign(f.const_slots().size(), 1.0);
    fc = f_ones;
  }
  if (gc.empty() && !g.const_slots().empty()) {
    g_ones.assign(g.const_slots().size(), 1.0);
    gc = g_ones;
  }
  std::mt19937_64 rng(dom.seed);
  Eigen::MatrixXd X(1, d);
  int agreed = 0;
  for (int attempt = 0; attempt < dom.points * 10 && agreed < dom.points; ++attempt) {
    for (int k = 0; k < d; ++k) {
      auto [lo, hi] = static_cast<std::size_t>(k) < dom.bounds.size()
                          ? dom.bounds[static_cast<std::size_t>(k)]
                          : std::make_pair(dom.default_lo, dom.default_hi);
      X(0, k) = std::uniform_real_distribution<double>(lo, hi)(rng);
    }
    const auto yf = evaluate(f, X, fc);
    const auto yg = evaluate(g, X, gc);
    if (!yf && !yg) continue;
    if (!yf || !yg) return Equivalence::NotEqual;
    const double a = (*yf)(0), b = (*yg)(0);
    if (std::fabs(a - b) > dom.rel_tol * std::max(std::fabs(a), std::fabs(b)) + 1e-12)
      return Equivalence::NotEqual;
    ++agreed;
  }
  return Equivalence::Undecided;
}

}  // namespace

CanonicalForm canonicalize(const ExprTree& tree, std::span<const double> consts) {
  check_consts(tree, consts);
  Ctx ctx;
  const Rat r = ctx.canon(tree, consts);
  CanonicalForm out;
  out.key = ctx.key(r);
  out.numerator = ctx.poly_str(r.p);
  out.denominator = ctx.poly_str(r.q);
  out.exact = all_exact(r.p) && all_exact(r.q);
  return out;
}

std::string canonical_key(const ExprTree& tree, std::span<const double> consts) {
  return canonicalize(tree, consts).key;
}

std::string_view equivalence_name(Equivalence e) {
  switch (e) {
    case Equivalence::Equal: return "Equal";
    case Equivalence::NotEqual: return "NotEqual";
    case Equivalence::Undecided: return "Undecided";
  }
  return "?";
}

Equivalence symbolically_equal(const ExprTree& f, std::span<const double> f_consts,
                               const ExprTree& g, std::span<const double> g_consts,
                               const FalsifierDomain& domain) {
  check_consts(f, f_consts);
  check_consts(g, g_consts);
  // One context for both sides so equal kernels intern to the same atoms.
  Ctx ctx;
  const Rat rf = ctx.canon(f, f_consts);
  const Rat rg = ctx.canon(g, g_consts);
  if (ctx.key(rf) == ctx.key(rg)) return Equivalence::Equal;
  try {
    if (ctx.cross_difference(rf, rg).empty()) return Equivalence::Equal;
  } catch (const TooLarge&) {
  }
  return falsify(f, f_consts, g, g_consts, domain);
}

}  // namespace dgsr
