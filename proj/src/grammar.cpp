#include "dgsr/grammar.hpp"

#include <regex>

namespace dgsr {

int LibrarySpec::index_of(Token t) const {
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == t) return static_cast<int>(i);
  return -1;
}

void LibrarySpec::validate() const {
  bool terminal = false;
  for (const auto& t : tokens) terminal |= t.is_terminal();
  if (!terminal) throw Error(Errc::InvalidArgument, "library '" + name + "' has no terminal token");
  if (min_len < 1 || max_len < min_len)
    throw Error(Errc::InvalidArgument, "invalid length bounds [" + std::to_string(min_len) + ", " +
                                           std::to_string(max_len) + "]");
  if (max_const_slots < 0) throw Error(Errc::InvalidArgument, "negative max_const_slots");
}

std::uint64_t LibrarySpec::fingerprint() const {
  // FNV-1a over token names.
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens) {
    for (char c : t.name() + ";") {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

namespace {

LibrarySpec make_library(std::string name, std::initializer_list<Op> ops, int d, bool with_const) {
  LibrarySpec lib;
  lib.name = std::move(name);
  for (Op o : ops) lib.tokens.push_back(Token::op_token(o));
  for (int k = 1; k <= d; ++k) lib.tokens.push_back(Token::var(k));
  if (with_const) lib.tokens.push_back(Token::constant());
  lib.d = d;
  lib.has_const = with_const;
  return lib;
}

}  // namespace

LibrarySpec koza_library(int d, bool with_const) {
  return make_library((with_const ? "koza-const-d" : "koza-d") + std::to_string(d),
                      {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Exp, Op::Log, Op::Sin, Op::Cos}, d,
                      with_const);
}

LibrarySpec synth_library(int d) {
  return make_library("synth-d" + std::to_string(d), {Op::Add, Op::Sub, Op::Mul, Op::Div}, d, false);
}

LibrarySpec library_by_name(const std::string& name) {
  static const std::regex re(R"((koza|koza-const|synth)-d(\d+))");
  std::smatch m;
  if (!std::regex_match(name, m, re))
    throw Error(Errc::InvalidArgument, "unknown library '" + name + "'");
  const int d = std::stoi(m[2]);
  if (d < 1 || d > 64) throw Error(Errc::InvalidArgument, "library dimension out of range: " + name);
  if (m[1] == "synth") return synth_library(d);
  return koza_library(d, m[1] == "koza-const");
}

LibrarySpec extend_variables(const LibrarySpec& lib, int d) {
  LibrarySpec out = lib;
  for (int k = lib.d + 1; k <= d; ++k) out.tokens.push_back(Token::var(k));
  out.d = std::max(lib.d, d);
  if (out.d != lib.d) {
    const auto pos = out.name.rfind("-d");
    out.name = (pos == std::string::npos ? out.name : out.name.substr(0, pos)) + "-d" + std::to_string(out.d);
  }
  return out;
}

DecodeState::DecodeState(const LibrarySpec& lib) : lib_(&lib) {
  info_.reserve(lib.size());
  for (const auto& t : lib.tokens)
    info_.push_back(Info{t.arity(), t.is_constant(), t.op == Op::Const, t.is_trig(), t.op});
  stack_.reserve(static_cast<std::size_t>(lib.max_len));
}

void DecodeState::complete_child(bool child_is_constant) {
  // Walk up while frames fill; each completed operator subtree is a
  // non-constant child of its parent.
  bool is_const = child_is_constant;
  while (!stack_.empty()) {
    Frame& f = stack_.back();
    f.all_const = f.all_const && is_const;
    ++f.filled;
    if (f.filled < f.arity) return;
    if (info_[static_cast<std::size_t>(f.tok)].trig) --trig_ancestors_;
    stack_.pop_back();
    is_const = false;
  }
}

void DecodeState::push(int i) {
  if (open_ == 0) throw Error(Errc::AlreadyComplete, "sequence already complete");
  if (i < 0 || static_cast<std::size_t>(i) >= info_.size())
    throw Error(Errc::UnknownToken, "token index " + std::to_string(i) + " outside library");
  const Info& in = info_[static_cast<std::size_t>(i)];
  ++length_;
  open_ += in.arity - 1;
  if (in.placeholder) ++consts_;
  if (in.arity > 0) {
    // First child of the current frame is recorded as the sibling for slot 2.
    if (!stack_.empty() && stack_.back().filled == 0) stack_.back().first_child = i;
    stack_.push_back(Frame{i, in.arity, 0, -1, true});
    if (in.trig) ++trig_ancestors_;
  } else {
    if (!stack_.empty() && stack_.back().filled == 0) stack_.back().first_child = i;
    complete_child(in.constant);
  }
}

bool DecodeState::allowed_unchecked(int i) const {
  const Info& in = info_[static_cast<std::size_t>(i)];
  const int new_len = length_ + 1;
  const int new_open = open_ - 1 + in.arity;
  // (b) minimal completion must fit in max_len.
  if (new_len + new_open > lib_->max_len) return false;
  // (a) no completion below min_len.
  if (in.arity == 0 && new_open == 0 && new_len < lib_->min_len) return false;
  // (d) no trig below a trig ancestor.
  if (in.trig && trig_ancestors_ > 0) return false;
  // (f) placeholder cap.
  if (in.placeholder && consts_ >= lib_->max_const_slots) return false;
  if (!stack_.empty()) {
    const Frame& f = stack_.back();
    const Op parent = info_[static_cast<std::size_t>(f.tok)].op;
    // (c) inverse unary pairs.
    if ((parent == Op::Exp && in.op == Op::Log) || (parent == Op::Log && in.op == Op::Exp)) return false;
    // (e) last child may not be constant if all earlier children were.
    if (in.constant && f.filled == f.arity - 1 && f.all_const) return false;
  }
  return true;
}

bool DecodeState::allowed(int i) const {
  if (open_ == 0 || i < 0 || static_cast<std::size_t>(i) >= info_.size()) return false;
  if (allowed_unchecked(i)) return true;
  // Fallback path: when nothing passes, terminals are re-enabled.
  for (std::size_t k = 0; k < info_.size(); ++k)
    if (allowed_unchecked(static_cast<int>(k))) return false;
  return info_[static_cast<std::size_t>(i)].arity == 0;
}

void DecodeState::mask(std::vector<std::uint8_t>& out) const {
  if (open_ == 0) throw Error(Errc::AlreadyComplete, "sequence already complete");
  out.assign(info_.size(), 0);
  bool any = false;
  for (std::size_t k = 0; k < info_.size(); ++k) {
    out[k] = allowed_unchecked(static_cast<int>(k)) ? 1 : 0;
    any |= out[k] != 0;
  }
  if (!any)
    for (std::size_t k = 0; k < info_.size(); ++k) out[k] = info_[k].arity == 0 ? 1 : 0;
}

std::vector<std::uint8_t> DecodeState::mask() const {
  std::vector<std::uint8_t> m;
  mask(m);
  return m;
}

TreeStateEntry DecodeState::tree_state() const {
  if (open_ == 0) throw Error(Errc::AlreadyComplete, "sequence already complete");
  TreeStateEntry e;
  if (stack_.empty()) return e;
  const Frame& f = stack_.back();
  e.parent = f.tok;
  if (f.arity == 2 && f.filled == 1) e.sibling = f.first_child;
  return e;
}

std::vector<std::uint8_t> valid_next_mask(const std::vector<int>& partial, const LibrarySpec& lib) {
  DecodeState s(lib);
  for (int i : partial) s.push(i);
  return s.mask();
}

TreeStateEntry tree_state(const std::vector<int>& partial, const LibrarySpec& lib) {
  DecodeState s(lib);
  for (int i : partial) s.push(i);
  return s.tree_state();
}

std::vector<int> to_indices(std::span<const Token> tokens, const LibrarySpec& lib) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    const int i = lib.index_of(t);
    if (i < 0) throw Error(Errc::UnknownToken, "token '" + t.name() + "' not in library " + lib.name);
    out.push_back(i);
  }
  return out;
}

PrefixSequence to_tokens(const std::vector<int>& indices, const LibrarySpec& lib) {
  PrefixSequence out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(lib.tokens.at(static_cast<std::size_t>(i)));
  return out;
}

bool satisfies_constraints(const std::vector<int>& seq, const LibrarySpec& lib) {
  DecodeState s(lib);
  for (int i : seq) {
    if (s.complete() || !s.allowed(i)) return false;
    s.push(i);
  }
  return s.complete();
}

}  // namespace dgsr
