#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace langdrive {

struct ParamSpec {
  std::string name;
  double min = 0.0;
  double max = 0.0;
  double default_value = 0.0;
  std::string description;
};

/// The tunable parameter table the language model is allowed to edit.
class ParamSchema {
 public:
  explicit ParamSchema(std::vector<ParamSpec> entries);

  /// The eleven canonical MPC parameters with their ranges and defaults.
  static const ParamSchema& standard();

  const std::vector<ParamSpec>& entries() const { return entries_; }
  const ParamSpec* find(std::string_view name) const;
  double clamp(std::string_view name, double value) const;

 private:
  std::vector<ParamSpec> entries_;
};

/// Name/value pairs in insertion order; a later duplicate key replaces the earlier value.
using ParamMap = std::vector<std::pair<std::string, double>>;

void param_map_set(ParamMap& map, std::string_view key, double value);
const double* param_map_get(const ParamMap& map, std::string_view key);

struct MpcParams {
  double qv = 1.0;
  double qn = 20.0;
  double qalpha = 7.0;
  double qac = 0.01;
  double qddelta = 0.1;
  double alat_max = 10.0;
  double a_min = -5.0;
  double a_max = 5.0;
  double v_min = 1.0;
  double v_max = 5.0;
  double track_safety_margin = 0.45;

  static MpcParams defaults(const ParamSchema& schema = ParamSchema::standard());

  /// Value by canonical name; throws std::out_of_range for unknown names.
  double get(std::string_view name) const;
  void set(std::string_view name, double value);

  /// Every value finite and in range, v_min <= v_max, a_min <= a_max.
  /// On failure `why` (if given) names the first violation.
  bool valid(const ParamSchema& schema = ParamSchema::standard(), std::string* why = nullptr) const;

  ParamMap to_map() const;
  /// FNV-1a over the canonical values, hex encoded.
  std::string hash() const;

  bool operator==(const MpcParams&) const = default;
};

struct JournalEntry {
  double t = 0.0;
  std::string source;
  ParamMap update;
  MpcParams applied;
  std::vector<std::string> warnings;
};

/// One JSON object per line: {"t","source","update","applied","warnings"}.
std::string journal_line(const JournalEntry& entry);

/// Runtime-reconfigurable parameter set. Readers always see a complete set;
/// `apply` swaps in the merged result in one step and journals it.
class ParamStore {
 public:
  explicit ParamStore(MpcParams initial = MpcParams::defaults());

  MpcParams snapshot() const;
  std::uint64_t version() const;

  /// Merges `update` (canonical, schema-valid keys) over the current set.
  /// Throws std::invalid_argument if the merged set would break invariants,
  /// leaving the store untouched.
  MpcParams apply(const ParamMap& update, std::string source, double t,
                  std::vector<std::string> warnings = {});

  std::vector<JournalEntry> journal() const;
  /// Mirrors every journal entry to `sink` as JSON lines (nullptr disables).
  void set_journal_sink(std::ostream* sink);

 private:
  mutable std::mutex mutex_;
  MpcParams current_;
  std::uint64_t version_ = 0;
  std::vector<JournalEntry> journal_;
  std::ostream* sink_ = nullptr;
};

}  // namespace langdrive
