#pragma once

#include <optional>
#include <string>
#include <vector>

#include "langdrive/llm.hpp"
#include "langdrive/rag.hpp"
#include "langdrive/text.hpp"
#include "langdrive/vehicle.hpp"

namespace langdrive {

enum class DecisionAction { Continue, Change };

std::string to_string(DecisionAction action);

struct DecisionOutcome {
  DecisionAction action = DecisionAction::Continue;
  std::string instruction;  ///< non-empty iff action == Change
  std::string rationale;    ///< the raw response
};

/// The adherence prompt. Pure in its arguments; an empty hint list drops the guide block.
std::string build_decision_prompt(const std::string& human_prompt, const StateSnapshot& snapshot,
                                  const std::vector<MemoryEntry>& hints);

/// Finds "continue behavior" / "change behavior" (case-insensitive, markup and
/// "a)"/"b)" tolerant). With an "Action:" label the first marker after the last
/// label decides, otherwise the last marker. A change instruction is the text
/// after the change marker or after the last "Instruction:" label, whichever
/// is later and non-empty, up to the end of its paragraph.
/// Throws ParseError when no marker is found or a change carries no instruction.
DecisionOutcome parse_decision(const std::string& response);

struct DecisionConfig {
  double window = 2.0;   ///< sampled seconds
  int samples = 5;
  int hint_k = 10;
  bool use_rag = true;
  int max_tokens = 512;
  double temperature = 0.0;
};

/// One decision cycle, successful or not.
struct DecisionRecord {
  double t = 0.0;
  std::string human_prompt;
  StateSnapshot snapshot;
  std::vector<int> hints_used;
  std::string prompt;
  std::string response;
  std::optional<DecisionOutcome> outcome;
  std::string error;  ///< gateway or parse failure; the cycle is then a no-op
  GenerationStats stats;
};

/// {t, human_prompt, snapshot, hints_used, response, outcome, error}
std::string decision_log_line(const DecisionRecord& record);

class DecisionEngine {
 public:
  DecisionEngine(const LlmGateway& gateway, const RagStore* rag, DecisionConfig config = {});

  std::vector<MemoryEntry> hints_for(const std::string& human_prompt) const;
  std::string prompt_for(const std::string& human_prompt, const StateSnapshot& snapshot) const;

  /// Retrieve, prompt, complete, parse. Gateway and parse failures are
  /// recorded in the result, never thrown.
  DecisionRecord decide(const std::string& human_prompt, const StateSnapshot& snapshot,
                        double t = 0.0) const;
  /// Samples the simulator's window first; InsufficientHistoryError propagates.
  DecisionRecord decide(const std::string& human_prompt, const Simulator& sim) const;

  const DecisionConfig& config() const { return config_; }

 private:
  const LlmGateway& gateway_;
  const RagStore* rag_;
  DecisionConfig config_;
};

}  // namespace langdrive
