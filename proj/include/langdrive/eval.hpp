#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langdrive/adapter.hpp"
#include "langdrive/decision.hpp"
#include "langdrive/mpc.hpp"
#include "langdrive/vehicle.hpp"

namespace langdrive {

enum class Category { Centerline, CloseWall, Forward, Oscillating, Racingline, Reversed, Speed, Stop };

std::string to_string(Category category);

struct CommandSpec {
  std::string id;
  std::string prompt;
  Category category = Category::Centerline;
  double threshold = 0.0;  ///< Speed only: the m/s figure read from the prompt
};

/// The eight bundled commands, one per category, in category order.
const std::vector<CommandSpec>& standard_commands();

/// Thresholds behind the predicates; the defaults follow the bundled hints.
struct AdherenceThresholds {
  double racing_line = 0.3;     ///< max |d| on the racing line [m]
  double oscillation_pp = 0.6;  ///< peak-to-peak d for a weave [m]
  double close_wall = 0.4;      ///< wall distance counted as close [m]
  double stop_speed = 0.1;      ///< max |s-speed| when stopped [m/s]
};

/// Programmatic ground truth for "does this window satisfy the command".
bool label_adherence(const StateSnapshot& snapshot, const CommandSpec& command,
                     const AdherenceThresholds& th = {});

struct LabeledState {
  StateSnapshot snapshot;
  std::string behavior;     ///< the driving style that produced the window
  std::vector<bool> labels;  ///< one per standard command
};

struct StateDatasetConfig {
  double window = 2.0;
  int samples = 5;
};

/// Seeded rollouts of scripted driving styles on `track`, each ending in a
/// labelled window.
std::vector<LabeledState> gen_state_dataset(int n, std::uint64_t seed, std::shared_ptr<const TrackSpec> track,
                                            const StateDatasetConfig& config = {});
std::string dataset_line(const LabeledState& item);

/// Answers decision prompts from registered labels: Continue when adherent,
/// Change otherwise. Prompts it has not seen raise TransportError.
class OracleBackend : public LlmBackend {
 public:
  void add(const std::string& prompt, bool adherent);
  std::string tag() const override { return "oracle"; }
  Completion complete(const ChatRequest& request) override;

 private:
  std::map<std::string, bool> by_hash_;
};

/// Registers every (state, command) prompt of `dataset` as `engine` would build it.
std::shared_ptr<OracleBackend> make_oracle_backend(const std::vector<LabeledState>& dataset,
                                                   const DecisionEngine& engine);

struct AccuracyReport {
  std::string model;
  bool rag = false;
  std::map<Category, std::pair<int, int>> per_category;  ///< correct, total
  int correct = 0;
  int total = 0;
  int parse_failures = 0;

  double accuracy() const;  ///< percent
  double category_accuracy(Category c) const;
  std::string to_json() const;
  std::string to_table() const;
};

/// Runs every (state, command) pair through `engine`; Continue means
/// adherent, anything unparsed counts as wrong.
AccuracyReport eval_decision_accuracy(const std::vector<LabeledState>& dataset, const DecisionEngine& engine,
                                      const std::string& model_tag);

/// sqrt(mean((x - ref)^2)); throws std::invalid_argument on an empty series.
double rmse(std::span<const double> series, double ref);

/// (baseline - adapted) / baseline * 100; 0 when both are 0.
double improvement(double baseline, double adapted);

enum class Metric { E_C, E_V, E_R, E_S };
std::string to_string(Metric metric);

struct ControlScenario {
  std::string id;
  std::string instruction;
  Metric metric = Metric::E_C;
  double reference = 0.0;
  double duration = 60.0;
  double settle = 5.0;
};

const std::vector<ControlScenario>& standard_scenarios();
const ControlScenario& find_scenario(const std::string& id);

struct RunOutcome {
  double error = 0.0;
  bool completed = true;  ///< false: crashed at the end or diverged (N.C.)
  std::string note;
  double mean_v = 0.0;
  double max_abs_v_dev = 0.0;  ///< max |v - reference| over the measured window
};

struct ScenarioResult {
  ControlScenario scenario;
  RunOutcome baseline;
  RunOutcome adapted;
  MpcParams adapted_params;
  std::vector<std::string> warnings;
  std::string adapter_error;

  bool completed() const { return baseline.completed && adapted.completed; }
  double improvement_pct() const { return improvement(baseline.error, adapted.error); }
};

struct ControlReport {
  std::string model;
  bool rag = false;
  std::vector<ScenarioResult> results;

  /// Mean improvement over completed scenarios; nullopt when none completed.
  std::optional<double> average_improvement() const;
  std::string to_json() const;
  std::string to_table() const;
};

struct ControlRunConfig {
  std::shared_ptr<const TrackSpec> track;
  MpcConfig mpc;
  SimConfig sim;
  std::uint64_t seed = 0;
};

/// One closed-loop run with fixed parameters: settle, then measure.
RunOutcome run_closed_loop(const ControlScenario& scenario, const MpcParams& params,
                           const ControlRunConfig& config);

/// Baseline on defaults against the parameters `adapter` derives from the
/// scenario instruction.
ScenarioResult run_control_scenario(const ControlScenario& scenario, const MpcAdapter& adapter,
                                    const ControlRunConfig& config);

/// As above with the adapted parameters given directly.
ScenarioResult run_control_scenario(const ControlScenario& scenario, const MpcParams& adapted,
                                    const ControlRunConfig& config);

enum class DatasetKind { decision, mpc };

struct FinetuneStats {
  int written = 0;
  int skipped = 0;
};

int default_finetune_size(DatasetKind kind);

/// JSON lines {prompt, response}. Decision prompts use randomized states and
/// hint thresholds, mpc prompts randomized instructions; gateway failures are
/// skipped and counted.
FinetuneStats gen_finetune_dataset(DatasetKind kind, int n, std::uint64_t seed, const LlmGateway& gateway,
                                   std::shared_ptr<const TrackSpec> track, const BaseMemory& base,
                                   const RagStore* rag,
                                   std::ostream& out);

}  // namespace langdrive
