#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "langdrive/llm.hpp"
#include "langdrive/params.hpp"
#include "langdrive/rag.hpp"
#include "langdrive/text.hpp"

namespace langdrive {

struct ParsedParams {
  ParamMap values;                    ///< numeric entries in order, later duplicates win
  std::vector<std::string> warnings;  ///< non-numeric values that were skipped
};

/// Reads the last `new_mpc_params = {...}` assignment in `response`.
/// Keys may be bare or quoted; prose and markup around the map are ignored.
/// Throws ParseError when there is no assignment or the braces do not balance.
ParsedParams parse_params(const std::string& response);

/// `new_mpc_params = {k: v, ...}` with values through format_number's full precision.
std::string render_params(const ParamMap& map);

struct ParamUpdate {
  ParamMap raw;
  ParamMap accepted;  ///< canonical names, values inside the schema ranges
  std::vector<std::string> warnings;
  std::vector<std::string> rejected;
};

/// Alias translation, name check, clamping, then the v_min <= v_max repair
/// against `current` merged with the accepted values. Never throws.
ParamUpdate validate_and_clamp(const ParamMap& raw, const ParamSchema& schema,
                               const MpcParams& current = MpcParams::defaults());

/// The cost expression plus the tunable parameter table shown to the model.
class BaseMemory {
 public:
  explicit BaseMemory(std::string text);
  static BaseMemory load(const std::filesystem::path& path);
  static BaseMemory bundled(const std::filesystem::path& data_dir);

  const std::string& text() const { return text_; }

  /// Rows "name min, max, default # ..." parsed from the table.
  std::vector<ParamSpec> table() const;
  /// Empty when every schema row appears with matching range and default,
  /// otherwise a description of the first mismatch.
  std::string check_against(const ParamSchema& schema) const;

 private:
  std::string text_;
};

std::string build_adapter_prompt(const std::string& instruction, const BaseMemory& base,
                                 const std::vector<MemoryEntry>& memories);

struct AdapterConfig {
  int memory_k = 3;
  bool use_rag = true;
  int max_tokens = 512;
  double temperature = 0.0;
};

struct AdaptRecord {
  double t = 0.0;
  std::string instruction;
  std::vector<int> memories_used;
  std::string prompt;
  std::string response;
  std::optional<ParamUpdate> update;
  std::vector<std::string> parse_warnings;
  bool applied = false;
  std::string error;
  GenerationStats stats;
};

std::string adapt_log_line(const AdaptRecord& record);

class MpcAdapter {
 public:
  MpcAdapter(const LlmGateway& gateway, const RagStore* rag, BaseMemory base,
             const ParamSchema& schema = ParamSchema::standard(), AdapterConfig config = {});

  std::vector<MemoryEntry> memories_for(const std::string& instruction) const;
  std::string prompt_for(const std::string& instruction) const;

  /// Prompt, complete, parse and validate against `current`; nothing is applied.
  /// Failures are recorded in the result. Throws std::invalid_argument for an
  /// empty instruction.
  AdaptRecord propose(const std::string& instruction, const MpcParams& current, double t = 0.0) const;
  /// Applies a successful proposal, re-validating it against the store's
  /// present values. Sets `applied` or `error`.
  void commit(AdaptRecord& record, ParamStore& store) const;
  /// propose then commit.
  AdaptRecord adapt(const std::string& instruction, ParamStore& store, double t = 0.0) const;

  const BaseMemory& base() const { return base_; }

 private:
  const LlmGateway& gateway_;
  const RagStore* rag_;
  BaseMemory base_;
  const ParamSchema& schema_;
  AdapterConfig config_;
};

}  // namespace langdrive
