#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "langdrive/adapter.hpp"
#include "langdrive/decision.hpp"
#include "langdrive/llm.hpp"
#include "langdrive/mpc.hpp"
#include "langdrive/params.hpp"
#include "langdrive/rag.hpp"
#include "langdrive/vehicle.hpp"

namespace langdrive {

struct BackendConfig {
  std::string kind = "scripted";  ///< scripted | replay | remote
  std::string rules;              ///< scripted rules file
  std::string transcript;         ///< replay transcript file
  RemoteConfig remote;
};

struct PromptEvent {
  double t = 0.0;
  std::string text;
};

struct InitialState {
  std::optional<double> s;  ///< unset: drawn from the seed
  double n = 0.0;
  double delta_phi = 0.0;
  double v = 0.0;
  bool crashed = false;
};

/// Everything a run needs. JSON keys mirror the field names; relative paths
/// resolve against data_dir.
struct RunConfig {
  std::string data_dir = LANGDRIVE_DATA_DIR;
  std::string track = "tracks/oval.csv";
  double sim_dt = 0.02;
  double duration = 60.0;
  MpcConfig mpc;
  ParamMap params;  ///< overrides on top of the defaults, validated like UI input
  BackendConfig backend;
  bool use_rag = true;
  DecisionConfig decision;
  AdapterConfig adapter;
  double decision_cadence = 2.0;  ///< minimum spacing of decision cycles [s]
  double llm_latency = 0.5;       ///< modeled sim-time latency of one LLM call in headless runs [s]
  std::vector<PromptEvent> prompts;
  InitialState initial;
  std::string scenario;
  std::uint64_t seed = 0;
  std::string host = "127.0.0.1";
  int port = 8080;
  int telemetry_divisor = 5;  ///< one frame every this many ticks (10 Hz at dt 0.02)

  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  std::filesystem::path resolve(const std::string& p) const;
  /// Throws std::invalid_argument naming the first problem (missing files, bad numbers).
  void validate() const;
};

/// Loads the configured track after validate().
std::shared_ptr<const TrackSpec> load_config_track(const RunConfig& config);
SimConfig sim_config(const RunConfig& config);
/// The section settings with the top-level use_rag applied.
DecisionConfig decision_config(const RunConfig& config);
AdapterConfig adapter_config(const RunConfig& config);

/// Builds the configured backend; remote settings take environment overrides.
std::shared_ptr<LlmBackend> make_backend(const RunConfig& config);

struct TelemetryFrame {
  double t = 0.0;
  double s = 0.0;
  double n = 0.0;
  double delta_phi = 0.0;
  double v = 0.0;
  double delta = 0.0;
  double d_left = 0.0;
  double d_right = 0.0;
  bool crashed = false;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  std::string params_hash;
  std::string last_decision;  ///< JSON object or empty
  std::string last_update;    ///< JSON object or empty

  std::string to_json() const;
};

/// One car: simulator, MPC, parameter store and the LLM cycles around them.
/// Headless sessions run cycles inline and release their results after the
/// modeled latency in sim-time; async sessions run them on worker threads.
class Session {
 public:
  enum class Mode { headless, async };

  Session(RunConfig config, std::shared_ptr<LlmBackend> backend, Mode mode = Mode::headless);
  ~Session();

  /// One fixed step: prompt events, cycle bookkeeping, MPC solve, sim tick.
  void tick();
  /// Sets the human instruction and asks for a decision cycle as soon as possible.
  void submit_prompt(const std::string& text);
  /// Validates and clamps like adapter output, then applies with source `source`.
  ParamUpdate apply_params(const ParamMap& raw, const std::string& source);

  double time() const;
  MpcParams params() const { return store_.snapshot(); }
  ParamStore& store() { return store_; }
  const Simulator& sim() const { return sim_; }
  const RunConfig& config() const { return config_; }
  TelemetryFrame frame() const;
  bool cycle_in_flight() const;
  /// Quiesces async work (waits for an in-flight cycle).
  void drain();

  std::vector<DecisionRecord> decisions() const;
  std::vector<AdaptRecord> adaptations() const;
  std::vector<MpcStatus> solve_statuses() const;
  /// {"decisions": [...], "updates": [...]} with the newest `limit` of each.
  std::string journal_json(std::size_t limit = 50) const;

 private:
  struct Cycle {
    enum class Kind { decision, adapt } kind = Kind::decision;
    double ready_at = 0.0;
    std::future<DecisionRecord> decision;
    std::future<AdaptRecord> adapt;
  };

  void start_decision(double t);
  void start_adapt(const std::string& instruction, double t);
  bool cycle_ready(const Cycle& c, double t) const;
  void finish_cycle(double t);

  RunConfig config_;
  Mode mode_;
  std::shared_ptr<const TrackSpec> track_;
  LlmGateway gateway_;
  RagStore rag_;
  DecisionEngine decision_;
  MpcAdapter adapter_;
  ParamStore store_;
  Simulator sim_;
  MpcController mpc_;

  mutable std::mutex mutex_;  // guards the fields below plus the prompt queue
  std::string human_prompt_;
  bool prompt_pending_ = false;
  std::size_t next_event_ = 0;
  std::optional<Cycle> cycle_;
  double last_decision_start_ = -1e9;
  std::vector<DecisionRecord> decisions_;
  std::vector<AdaptRecord> adaptations_;
  std::vector<MpcStatus> statuses_;
};

struct RunResult {
  std::vector<LogRow> log;
  std::vector<DecisionRecord> decisions;
  std::vector<AdaptRecord> adaptations;
  std::vector<JournalEntry> journal;
  MpcParams final_params;
  int non_optimal_solves = 0;
};

/// Headless run for config.duration seconds of sim-time. With `out_dir` set,
/// writes state.csv, decisions.jsonl, adaptations.jsonl and journal.jsonl there.
RunResult run_loop(const RunConfig& config, std::shared_ptr<LlmBackend> backend,
                   const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace langdrive
