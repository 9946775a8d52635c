#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgsr/expr.hpp"

namespace dgsr {

/// Token library: the ordered token set defines the categorical output dimension.
struct LibrarySpec {
  std::string name;
  std::vector<Token> tokens;
  int d = 1;
  bool has_const = false;
  int min_len = 4;
  int max_len = 30;
  int max_const_slots = 3;

  std::size_t size() const noexcept { return tokens.size(); }
  int index_of(Token t) const;  // -1 when absent
  void validate() const;        // throws InvalidArgument
  /// Stable hash of the ordered token names (checkpoint compatibility).
  std::uint64_t fingerprint() const;
};

/// Koza operators {add, sub, mul, div, exp, log, sin, cos} plus x1..xd.
LibrarySpec koza_library(int d, bool with_const = false);
/// Arithmetic-only operators {add, sub, mul, div} plus x1..xd.
LibrarySpec synth_library(int d);
/// Resolves "koza-d2", "koza-const-d1", "synth-d12". Throws InvalidArgument.
LibrarySpec library_by_name(const std::string& name);
/// Copy of lib with variables extended to x1..xd (new tokens appended).
LibrarySpec extend_variables(const LibrarySpec& lib, int d);

/// Parent/sibling context of the next position; -1 means none.
struct TreeStateEntry {
  int parent = -1;
  int sibling = -1;
};

/// Incremental partial-tree state. Every frame on the stack is an ancestor of
/// the next position, so masking and tree state are O(1) amortised per token.
class DecodeState {
 public:
  explicit DecodeState(const LibrarySpec& lib);

  /// Appends a token by library index. Throws AlreadyComplete.
  void push(int token_index);

  bool complete() const noexcept { return open_ == 0; }
  int length() const noexcept { return length_; }
  int open_slots() const noexcept { return open_; }
  int const_count() const noexcept { return consts_; }

  /// mask[i] != 0 when token i may come next. Never all-zero.
  void mask(std::vector<std::uint8_t>& out) const;
  std::vector<std::uint8_t> mask() const;
  bool allowed(int token_index) const;

  TreeStateEntry tree_state() const;

 private:
  struct Frame {
    int tok;
    int arity;
    int filled;
    int first_child;
    bool all_const;
  };
  struct Info {
    int arity;
    bool constant;
    bool placeholder;
    bool trig;
    Op op;
  };

  bool allowed_unchecked(int i) const;
  void complete_child(bool child_is_constant);

  const LibrarySpec* lib_;
  std::vector<Info> info_;
  std::vector<Frame> stack_;
  int length_ = 0;
  int open_ = 1;
  int consts_ = 0;
  int trig_ancestors_ = 0;
};

/// Mask for the next token after `partial` (library indices). Throws AlreadyComplete.
std::vector<std::uint8_t> valid_next_mask(const std::vector<int>& partial, const LibrarySpec& lib);
TreeStateEntry tree_state(const std::vector<int>& partial, const LibrarySpec& lib);

/// Library-index sequence <-> tokens. to_indices throws UnknownToken for tokens outside lib.
std::vector<int> to_indices(std::span<const Token> tokens, const LibrarySpec& lib);
PrefixSequence to_tokens(const std::vector<int>& indices, const LibrarySpec& lib);

/// True when every prefix of seq passes the mask (generation constraints hold).
bool satisfies_constraints(const std::vector<int>& seq, const LibrarySpec& lib);

}  // namespace dgsr
