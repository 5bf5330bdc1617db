// langdrive: command-line entry points for the simulation, evaluation and serve modes.
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "langdrive/eval.hpp"
#include "langdrive/orchestrator.hpp"
#include "langdrive/service.hpp"
#include "CLI11.hpp"
#include "json.hpp"

using namespace langdrive;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string rules;
  std::string transcript;
  bool no_rag = false;
};

RunConfig build_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.backend.empty()) cfg.backend.kind = c.backend;
  if (!c.rules.empty()) cfg.backend.rules = std::filesystem::absolute(c.rules).string();
  if (!c.transcript.empty()) cfg.backend.transcript = std::filesystem::absolute(c.transcript).string();
  if (cfg.backend.kind == "scripted" && cfg.backend.rules.empty()) cfg.backend.rules = "scripted/default.json";
  if (c.no_rag) cfg.use_rag = false;
  cfg.validate();
  return cfg;
}

ParamMap parse_overrides(const std::vector<std::string>& items) {
  ParamMap m;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--param expects name=value, got " + it);
    std::size_t used = 0;
    const std::string value = it.substr(eq + 1);
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("--param value is not a number: " + it);
    param_map_set(m, it.substr(0, eq), v);
  }
  return m;
}

double mean_v_between(const std::vector<LogRow>& log, double t0, double t1) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : log)
    if (r.t >= t0 && r.t <= t1) {
      sum += r.v;
      ++n;
    }
  return n ? sum / n : 0.0;
}

int cmd_simulate(const Common& common, const std::vector<std::string>& prompts, std::optional<double> duration,
                 const std::vector<std::string>& overrides, const std::string& out) {
  RunConfig cfg = build_config(common);
  if (duration) cfg.duration = *duration;
  for (const auto& p : prompts) {
    // "T:text" schedules at sim-time T, plain text at 0
    PromptEvent e{0.0, p};
    const auto colon = p.find(':');
    if (colon != std::string::npos) {
      try {
        std::size_t used = 0;
        const double t = std::stod(p.substr(0, colon), &used);
        if (used == colon) e = {t, p.substr(colon + 1)};
      } catch (const std::exception&) {
      }
    }
    cfg.prompts.push_back(e);
  }
  for (const auto& [k, v] : parse_overrides(overrides)) param_map_set(cfg.params, k, v);
  cfg.validate();

  std::optional<std::filesystem::path> dir;
  if (!out.empty()) dir = out;
  const RunResult r = run_loop(cfg, make_backend(cfg), dir);

  const double t_end = r.log.empty() ? 0.0 : r.log.back().t;
  double last_change = 0.0;
  for (const auto& j : r.journal) last_change = std::max(last_change, j.t);
  int crashed_ticks = 0;
  for (const auto& row : r.log) crashed_ticks += row.crashed;
  double travelled = 0.0;
  for (std::size_t i = 1; i < r.log.size(); ++i)
    travelled += std::abs(r.log[i].v) * (r.log[i].t - r.log[i - 1].t);
  const auto track = load_config_track(cfg);

  ordered_json j;
  j["duration"] = t_end;
  j["backend"] = cfg.backend.kind;
  j["seed"] = cfg.seed;
  j["mean_v"] = mean_v_between(r.log, 0.0, t_end);
  j["mean_v_last_10s"] = mean_v_between(r.log, t_end - 10.0, t_end);
  j["mean_v_after_last_update"] = mean_v_between(r.log, last_change, t_end);
  j["laps"] = travelled / track->total_length();
  j["crashed_ticks"] = crashed_ticks;
  j["crashed_at_end"] = !r.log.empty() && r.log.back().crashed;
  j["decisions"] = r.decisions.size();
  j["adaptations"] = r.adaptations.size();
  j["param_updates"] = r.journal.size();
  j["non_optimal_solves"] = r.non_optimal_solves;
  ordered_json fp;
  for (const auto& [k, v] : r.final_params.to_map()) fp[k] = v;
  j["final_params"] = fp;
  if (dir) j["out_dir"] = dir->string();
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_eval_decision(const Common& common, int n, bool oracle, const std::string& format) {
  const RunConfig cfg = build_config(common);
  const auto track = load_config_track(cfg);
  StateDatasetConfig dcfg;
  dcfg.window = cfg.decision.window;
  dcfg.samples = cfg.decision.samples;
  const auto dataset = gen_state_dataset(n, cfg.seed, track, dcfg);
  const RagStore rag = RagStore::bundled(cfg.data_dir);

  AccuracyReport report;
  if (oracle) {
    // the engine only renders prompts here, the oracle needs them before answering
    const LlmGateway probe(std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, ""));
    const DecisionEngine renderer(probe, &rag, decision_config(cfg));
    const LlmGateway gw(make_oracle_backend(dataset, renderer));
    const DecisionEngine engine(gw, &rag, decision_config(cfg));
    report = eval_decision_accuracy(dataset, engine, "oracle");
  } else {
    const LlmGateway gw(make_backend(cfg));
    const DecisionEngine engine(gw, &rag, decision_config(cfg));
    report = eval_decision_accuracy(dataset, engine, gw.tag());
  }
  std::cout << (format == "table" ? report.to_table() : report.to_json()) << '\n';
  return 0;
}

int cmd_eval_control(const Common& common, const std::string& scenario, std::optional<double> duration,
                     const std::string& format) {
  const RunConfig cfg = build_config(common);
  const RagStore rag = RagStore::bundled(cfg.data_dir);
  const LlmGateway gw(make_backend(cfg));
  const MpcAdapter adapter(gw, &rag, BaseMemory::bundled(cfg.data_dir), ParamSchema::standard(),
                           adapter_config(cfg));
  ControlRunConfig run;
  run.track = load_config_track(cfg);
  run.mpc = cfg.mpc;
  run.sim = sim_config(cfg);
  run.seed = cfg.seed;

  ControlReport report;
  report.model = gw.tag();
  report.rag = cfg.use_rag;
  for (const auto& s : standard_scenarios()) {
    if (scenario != "all" && s.id != scenario) continue;
    ControlScenario sc = s;
    if (duration) sc.duration = *duration;
    report.results.push_back(run_control_scenario(sc, adapter, run));
  }
  if (report.results.empty()) throw std::invalid_argument("unknown scenario " + scenario);
  std::cout << (format == "table" ? report.to_table() : report.to_json()) << '\n';
  return 0;
}

int cmd_gen_dataset(const Common& common, const std::string& kind_name, std::optional<int> n,
                    const std::string& out) {
  const RunConfig cfg = build_config(common);
  const DatasetKind kind = kind_name == "decision" ? DatasetKind::decision : DatasetKind::mpc;
  const RagStore rag = RagStore::bundled(cfg.data_dir);
  const LlmGateway gw(make_backend(cfg));
  std::ofstream file;
  if (!out.empty()) {
    file.open(out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + out);
  }
  std::ostream& sink = out.empty() ? std::cout : file;
  const FinetuneStats st = gen_finetune_dataset(kind, n.value_or(default_finetune_size(kind)), cfg.seed, gw,
                                                load_config_track(cfg), BaseMemory::bundled(cfg.data_dir),
                                                cfg.use_rag ? &rag : nullptr, sink);
  std::cerr << "written " << st.written << ", skipped " << st.skipped << '\n';
  return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const Common& common, const std::string& host, std::optional<int> port,
              std::optional<double> duration, const std::string& prompt) {
  RunConfig cfg = build_config(common);
  if (!host.empty()) cfg.host = host;
  if (port) cfg.port = *port;
  Session session(cfg, make_backend(cfg), Session::Mode::async);
  if (!prompt.empty()) session.submit_prompt(prompt);
  Service service(session, cfg.host, cfg.port);
  service.start();
  std::cerr << "serving on http://" << cfg.host << ':' << service.port() << " (ws /telemetry)\n";
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (duration && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= *duration)
      break;
  }
  service.stop();
  std::cerr << "stopped at sim t=" << session.time() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-steered MPC driving: simulation, evaluation and serve modes"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Common common;
  app.add_option("--config", common.config, "Run config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "RNG seed (overrides the config)");
  app.add_option("--backend", common.backend, "LLM backend")
      ->check(CLI::IsMember({"scripted", "replay", "remote"}));
  app.add_option("--rules", common.rules, "Scripted rules file")->check(CLI::ExistingFile);
  app.add_option("--transcript", common.transcript, "Replay transcript")->check(CLI::ExistingFile);
  app.add_flag("--no-rag", common.no_rag, "Disable hint and memory retrieval");

  auto* sim = app.add_subcommand("simulate", "Headless closed-loop run in sim-time");
  std::vector<std::string> prompts, overrides;
  std::optional<double> sim_duration;
  std::string sim_out;
  sim->add_option("--prompt", prompts, "Human instruction; \"T:text\" schedules it at T seconds");
  sim->add_option("--duration", sim_duration, "Sim seconds")->check(CLI::PositiveNumber);
  sim->add_option("--param", overrides, "Parameter override name=value");
  sim->add_option("--out", sim_out, "Directory for state.csv and the jsonl logs");

  auto* ed = app.add_subcommand("eval-decision", "Decision accuracy over the generated state dataset");
  int ed_n = 200;
  bool ed_oracle = false;
  std::string ed_format = "json";
  ed->add_option("--n", ed_n, "Number of states")->check(CLI::PositiveNumber);
  ed->add_flag("--oracle", ed_oracle, "Answer from the ground-truth labels");
  ed->add_option("--format", ed_format)->check(CLI::IsMember({"json", "table"}));

  auto* ec = app.add_subcommand("eval-control", "Control scenarios, defaults vs adapted parameters");
  std::string ec_scenario = "all";
  std::optional<double> ec_duration;
  std::string ec_format = "json";
  ec->add_option("--scenario", ec_scenario, "centerline | ref_velocity | reversing | smooth | all");
  ec->add_option("--duration", ec_duration, "Measured sim seconds per run")->check(CLI::PositiveNumber);
  ec->add_option("--format", ec_format)->check(CLI::IsMember({"json", "table"}));

  auto* gd = app.add_subcommand("gen-dataset", "Fine-tuning pairs as JSON lines");
  std::string gd_kind = "decision";
  std::optional<int> gd_n;
  std::string gd_out;
  gd->add_option("--kind", gd_kind)->check(CLI::IsMember({"decision", "mpc"}));
  gd->add_option("--n", gd_n, "Pairs (default 626 decision, 150 mpc)")->check(CLI::PositiveNumber);
  gd->add_option("--out", gd_out, "Output file (default stdout)");

  auto* sv = app.add_subcommand("serve", "Wall-clock session with HTTP and WebSocket endpoints");
  std::string sv_host;
  std::optional<int> sv_port;
  std::optional<double> sv_duration;
  std::string sv_prompt;
  sv->add_option("--host", sv_host, "Bind address (default 127.0.0.1)");
  sv->add_option("--port", sv_port, "Port, 0 picks a free one")->check(CLI::Range(0, 65535));
  sv->add_option("--duration", sv_duration, "Stop after this many wall seconds");
  sv->add_option("--prompt", sv_prompt, "Initial human instruction");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return cmd_simulate(common, prompts, sim_duration, overrides, sim_out);
    if (*ed) return cmd_eval_decision(common, ed_n, ed_oracle, ed_format);
    if (*ec) return cmd_eval_control(common, ec_scenario, ec_duration, ec_format);
    if (*gd) return cmd_gen_dataset(common, gd_kind, gd_n, gd_out);
    if (*sv) return cmd_serve(common, sv_host, sv_port, sv_duration, sv_prompt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
