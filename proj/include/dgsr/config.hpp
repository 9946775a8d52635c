#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dgsr/pipeline.hpp"

namespace dgsr {

/// Sectioned key-value configuration:
///
///   # comment
///   [train]
///   k = 500
///
/// Keys are addressed as "section.key". Later assignments win, so flag
/// overrides are applied with set().
class Config {
 public:
  static Config parse(std::string_view text);  // throws InvalidArgument (with line number)
  static Config load(const std::string& path);  // throws Io, InvalidArgument

  void set(const std::string& key, const std::string& value);
  /// "section.key=value".
  void set_assignment(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const;
  long integer(const std::string& key, long def) const;
  double real(const std::string& key, double def) const;
  bool boolean(const std::string& key, bool def) const;

  /// Keys present but never read; used to reject typos.
  std::vector<std::string> unused() const;
  /// Canonical text form (sections and keys sorted); parse(dump()) round-trips.
  std::string dump() const;

 private:
  const std::string* find(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

void apply(const Config& c, TrainConfig& t);        // [train]
void apply(const Config& c, GPConfig& g);           // [gp]
void apply(const Config& c, SkeletonSampler& s);    // [corpus]
void apply(const Config& c, ArchConfig& a);         // [model]
void apply(const Config& c, PretrainConfig& p);     // [pretrain] plus [train]
void apply(const Config& c, InferConfig& i);        // [run] plus [train], [gp]

/// "0..9", "3", "1,4,7" or a mix ("0..2,9"). Throws InvalidArgument on
/// malformed or repeated seeds.
std::vector<std::uint64_t> parse_seeds(const std::string& text);

}  // namespace dgsr
