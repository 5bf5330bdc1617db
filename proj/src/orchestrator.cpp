#include "langdrive/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace langdrive {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument(where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  check_keys(j,
             {"data_dir", "track", "sim_dt", "duration", "mpc", "params", "backend", "use_rag", "decision",
              "adapter", "decision_cadence", "llm_latency", "prompt", "prompts", "initial", "scenario", "seed",
              "host", "port", "telemetry_divisor"},
             "config");
  RunConfig c;
  read(j, "data_dir", c.data_dir);
  read(j, "track", c.track);
  read(j, "sim_dt", c.sim_dt);
  read(j, "duration", c.duration);
  if (j.contains("mpc")) {
    const json& m = j["mpc"];
    check_keys(m, {"N", "dt", "v_ref", "profile_lat_accel", "w_slack", "w_rate", "max_sqp", "qp_max_iter"}, "mpc");
    read(m, "N", c.mpc.horizon.N);
    read(m, "dt", c.mpc.horizon.dt);
    read(m, "v_ref", c.mpc.horizon.v_ref);
    read(m, "profile_lat_accel", c.mpc.horizon.profile_lat_accel);
    read(m, "w_slack", c.mpc.w_slack);
    read(m, "w_rate", c.mpc.w_rate);
    read(m, "max_sqp", c.mpc.max_sqp);
    read(m, "qp_max_iter", c.mpc.qp.max_iter);
  }
  if (j.contains("params")) {
    for (auto it = j["params"].begin(); it != j["params"].end(); ++it)
      param_map_set(c.params, it.key(), it.value().get<double>());
  }
  if (j.contains("backend")) {
    const json& b = j["backend"];
    check_keys(b, {"kind", "rules", "transcript", "url", "model", "api_key", "timeout_s"}, "backend");
    read(b, "kind", c.backend.kind);
    read(b, "rules", c.backend.rules);
    read(b, "transcript", c.backend.transcript);
    read(b, "url", c.backend.remote.url);
    read(b, "model", c.backend.remote.model);
    read(b, "api_key", c.backend.remote.api_key);
    read(b, "timeout_s", c.backend.remote.timeout_s);
  }
  read(j, "use_rag", c.use_rag);
  if (j.contains("decision")) {
    const json& d = j["decision"];
    check_keys(d, {"window", "samples", "hint_k", "max_tokens", "temperature"}, "decision");
    read(d, "window", c.decision.window);
    read(d, "samples", c.decision.samples);
    read(d, "hint_k", c.decision.hint_k);
    read(d, "max_tokens", c.decision.max_tokens);
    read(d, "temperature", c.decision.temperature);
  }
  if (j.contains("adapter")) {
    const json& a = j["adapter"];
    check_keys(a, {"memory_k", "max_tokens", "temperature"}, "adapter");
    read(a, "memory_k", c.adapter.memory_k);
    read(a, "max_tokens", c.adapter.max_tokens);
    read(a, "temperature", c.adapter.temperature);
  }
  read(j, "decision_cadence", c.decision_cadence);
  read(j, "llm_latency", c.llm_latency);
  if (j.contains("prompt")) c.prompts.push_back({0.0, j["prompt"].get<std::string>()});
  if (j.contains("prompts"))
    for (const auto& p : j["prompts"]) c.prompts.push_back({p.value("t", 0.0), p.at("text").get<std::string>()});
  if (j.contains("initial")) {
    const json& i = j["initial"];
    check_keys(i, {"s", "n", "delta_phi", "v", "crashed"}, "initial");
    if (i.contains("s")) c.initial.s = i["s"].get<double>();
    read(i, "n", c.initial.n);
    read(i, "delta_phi", c.initial.delta_phi);
    read(i, "v", c.initial.v);
    read(i, "crashed", c.initial.crashed);
  }
  read(j, "scenario", c.scenario);
  read(j, "seed", c.seed);
  read(j, "host", c.host);
  read(j, "port", c.port);
  read(j, "telemetry_divisor", c.telemetry_divisor);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = from_json(ss.str());
  // A config's own relative data_dir is read next to the file.
  if (std::filesystem::path(c.data_dir).is_relative())
    c.data_dir = (path.parent_path() / c.data_dir).lexically_normal().string();
  return c;
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["data_dir"] = data_dir;
  j["track"] = track;
  j["sim_dt"] = sim_dt;
  j["duration"] = duration;
  j["mpc"] = {{"N", mpc.horizon.N}, {"dt", mpc.horizon.dt}, {"v_ref", mpc.horizon.v_ref},
              {"profile_lat_accel", mpc.horizon.profile_lat_accel}, {"w_slack", mpc.w_slack},
              {"w_rate", mpc.w_rate}, {"max_sqp", mpc.max_sqp}, {"qp_max_iter", mpc.qp.max_iter}};
  ordered_json p = ordered_json::object();
  for (const auto& [k, v] : params) p[k] = v;
  j["params"] = p;
  j["backend"] = {{"kind", backend.kind}, {"rules", backend.rules}, {"transcript", backend.transcript},
                  {"url", backend.remote.url}, {"model", backend.remote.model},
                  {"timeout_s", backend.remote.timeout_s}};
  j["use_rag"] = use_rag;
  j["decision"] = {{"window", decision.window}, {"samples", decision.samples}, {"hint_k", decision.hint_k},
                   {"max_tokens", decision.max_tokens}, {"temperature", decision.temperature}};
  j["adapter"] = {{"memory_k", adapter.memory_k}, {"max_tokens", adapter.max_tokens},
                  {"temperature", adapter.temperature}};
  j["decision_cadence"] = decision_cadence;
  j["llm_latency"] = llm_latency;
  j["prompts"] = ordered_json::array();
  for (const auto& e : prompts) j["prompts"].push_back({{"t", e.t}, {"text", e.text}});
  ordered_json init = {{"n", initial.n}, {"delta_phi", initial.delta_phi}, {"v", initial.v},
                       {"crashed", initial.crashed}};
  if (initial.s) init["s"] = *initial.s;
  j["initial"] = init;
  j["scenario"] = scenario;
  j["seed"] = seed;
  j["host"] = host;
  j["port"] = port;
  j["telemetry_divisor"] = telemetry_divisor;
  return j.dump(2);
}

std::filesystem::path RunConfig::resolve(const std::string& p) const {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : std::filesystem::path(data_dir) / path;
}

void RunConfig::validate() const {
  auto need_file = [&](const std::string& what, const std::string& p) {
    if (p.empty()) throw std::invalid_argument(what + " not set");
    if (!std::filesystem::exists(resolve(p)))
      throw std::invalid_argument(what + " not found: " + resolve(p).string());
  };
  need_file("track", track);
  need_file("base memory", "memory/base_memory.txt");
  if (!(sim_dt > 0.0)) throw std::invalid_argument("sim_dt must be positive");
  if (!(duration >= 0.0)) throw std::invalid_argument("duration must be >= 0");
  if (!(decision_cadence >= decision.window))
    throw std::invalid_argument("decision_cadence must be at least the snapshot window");
  if (!(llm_latency >= 0.0)) throw std::invalid_argument("llm_latency must be >= 0");
  if (decision.samples < 2) throw std::invalid_argument("decision.samples must be >= 2");
  if (telemetry_divisor < 1) throw std::invalid_argument("telemetry_divisor must be >= 1");
  if (mpc.horizon.N < 1 || !(mpc.horizon.dt > 0.0)) throw std::invalid_argument("bad MPC horizon");
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range");
  if (backend.kind == "scripted") {
    if (!backend.rules.empty()) need_file("scripted rules", backend.rules);
  } else if (backend.kind == "replay") {
    need_file("replay transcript", backend.transcript);
  } else if (backend.kind != "remote") {
    throw std::invalid_argument("unknown backend " + backend.kind + " (scripted|replay|remote)");
  }
  for (const auto& [k, v] : params)
    if (!ParamSchema::standard().find(k)) throw std::invalid_argument("unknown parameter " + k);
}

std::shared_ptr<LlmBackend> make_backend(const RunConfig& c) {
  if (c.backend.kind == "scripted") {
    if (c.backend.rules.empty())
      return std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, "a) Continue behavior");
    return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(c.resolve(c.backend.rules)));
  }
  if (c.backend.kind == "replay")
    return std::make_shared<ReplayBackend>(load_transcript(c.resolve(c.backend.transcript)));
  if (c.backend.kind == "remote") {
    RemoteConfig r = c.backend.remote;
    r.apply_environment();
    return std::make_shared<RemoteBackend>(r);
  }
  throw std::invalid_argument("unknown backend " + c.backend.kind);
}

std::string TelemetryFrame::to_json() const {
  ordered_json j;
  j["t"] = t;
  j["s"] = s;
  j["n"] = n;
  j["delta_phi"] = delta_phi;
  j["v"] = v;
  j["delta"] = delta;
  j["d_left"] = d_left;
  j["d_right"] = d_right;
  j["crashed"] = crashed;
  j["x"] = x;
  j["y"] = y;
  j["heading"] = heading;
  j["params_hash"] = params_hash;
  j["last_decision"] = last_decision.empty() ? ordered_json(nullptr) : ordered_json::parse(last_decision);
  j["last_update"] = last_update.empty() ? ordered_json(nullptr) : ordered_json::parse(last_update);
  return j.dump();
}

std::shared_ptr<const TrackSpec> load_config_track(const RunConfig& c) {
  c.validate();
  return std::make_shared<TrackSpec>(load_track(c.resolve(c.track)));
}

SimConfig sim_config(const RunConfig& c) {
  SimConfig s;
  s.dt = c.sim_dt;
  return s;
}

DecisionConfig decision_config(const RunConfig& c) {
  DecisionConfig d = c.decision;
  d.use_rag = c.use_rag;
  return d;
}

AdapterConfig adapter_config(const RunConfig& c) {
  AdapterConfig a = c.adapter;
  a.use_rag = c.use_rag;
  return a;
}

namespace {

VehicleState initial_state(const RunConfig& c, const TrackSpec& track) {
  VehicleState x;
  if (c.initial.s) {
    x.pose.s = *c.initial.s;
  } else {
    std::mt19937_64 rng(c.seed);
    x.pose.s = std::uniform_real_distribution<double>(0.0, track.total_length())(rng);
  }
  x.pose.n = c.initial.n;
  x.pose.delta_phi = c.initial.delta_phi;
  x.v = c.initial.v;
  return x;
}

std::optional<CrashStatus> initial_crash(const RunConfig& c) {
  if (!c.initial.crashed) return std::nullopt;
  CrashStatus s;
  s.crashed = true;
  return s;
}

template <typename T>
std::future<T> ready_future(T value) {
  std::promise<T> p;
  p.set_value(std::move(value));
  return p.get_future();
}

}  // namespace

Session::Session(RunConfig config, std::shared_ptr<LlmBackend> backend, Mode mode)
    : config_(std::move(config)),
      mode_(mode),
      track_(load_config_track(config_)),
      gateway_(std::move(backend)),
      rag_(RagStore::bundled(config_.data_dir)),
      decision_(gateway_, &rag_, decision_config(config_)),
      adapter_(gateway_, &rag_, BaseMemory::bundled(config_.data_dir), ParamSchema::standard(),
               adapter_config(config_)),
      sim_(track_, initial_state(config_, *track_), sim_config(config_), initial_crash(config_)),
      mpc_(track_, config_.mpc) {
  if (!config_.params.empty()) {
    const ParamUpdate u = validate_and_clamp(config_.params, ParamSchema::standard(), store_.snapshot());
    store_.apply(u.accepted, "cli", 0.0, u.warnings);
  }
}

Session::~Session() { drain(); }

double Session::time() const {
  std::lock_guard lock(mutex_);
  return sim_.state().t;
}

void Session::submit_prompt(const std::string& text) {
  if (trim(text).empty()) throw std::invalid_argument("empty prompt");
  std::lock_guard lock(mutex_);
  human_prompt_ = text;
  prompt_pending_ = true;
}

ParamUpdate Session::apply_params(const ParamMap& raw, const std::string& source) {
  std::lock_guard lock(mutex_);
  const ParamUpdate u = validate_and_clamp(raw, ParamSchema::standard(), store_.snapshot());
  store_.apply(u.accepted, source, sim_.state().t, u.warnings);
  return u;
}

bool Session::cycle_in_flight() const {
  std::lock_guard lock(mutex_);
  return cycle_.has_value();
}

void Session::drain() {
  std::lock_guard lock(mutex_);
  if (!cycle_) return;
  if (cycle_->decision.valid()) cycle_->decision.wait();
  if (cycle_->adapt.valid()) cycle_->adapt.wait();
}

void Session::start_decision(double t) {
  const StateSnapshot snap = sim_.sample_window(config_.decision.window, config_.decision.samples);
  const std::string prompt = human_prompt_;
  Cycle c;
  c.kind = Cycle::Kind::decision;
  if (mode_ == Mode::headless) {
    c.decision = ready_future(decision_.decide(prompt, snap, t));
    c.ready_at = t + config_.llm_latency;
  } else {
    c.decision = std::async(std::launch::async, [this, prompt, snap, t] { return decision_.decide(prompt, snap, t); });
    c.ready_at = t;
  }
  cycle_ = std::move(c);
  last_decision_start_ = t;
  prompt_pending_ = false;
}

void Session::start_adapt(const std::string& instruction, double t) {
  Cycle c;
  c.kind = Cycle::Kind::adapt;
  const MpcParams current = store_.snapshot();
  if (mode_ == Mode::headless) {
    c.adapt = ready_future(adapter_.propose(instruction, current, t));
    c.ready_at = t + config_.llm_latency;
  } else {
    c.adapt = std::async(std::launch::async,
                         [this, instruction, current, t] { return adapter_.propose(instruction, current, t); });
    c.ready_at = t;
  }
  cycle_ = std::move(c);
}

bool Session::cycle_ready(const Cycle& c, double t) const {
  if (t + 1e-9 < c.ready_at) return false;
  const auto now = std::chrono::seconds(0);
  if (c.kind == Cycle::Kind::decision) return c.decision.wait_for(now) == std::future_status::ready;
  return c.adapt.wait_for(now) == std::future_status::ready;
}

void Session::finish_cycle(double t) {
  Cycle c = std::move(*cycle_);
  cycle_.reset();
  if (c.kind == Cycle::Kind::decision) {
    DecisionRecord r = c.decision.get();
    decisions_.push_back(r);
    if (r.outcome && r.outcome->action == DecisionAction::Change) start_adapt(r.outcome->instruction, t);
  } else {
    AdaptRecord r = c.adapt.get();
    r.t = t;
    adapter_.commit(r, store_);
    adaptations_.push_back(std::move(r));
  }
}

void Session::tick() {
  std::lock_guard lock(mutex_);
  const double t = sim_.state().t;
  while (next_event_ < config_.prompts.size() && config_.prompts[next_event_].t <= t + 1e-9) {
    human_prompt_ = config_.prompts[next_event_].text;
    prompt_pending_ = true;
    ++next_event_;
  }
  if (cycle_ && cycle_ready(*cycle_, t)) finish_cycle(t);
  if (!cycle_ && !human_prompt_.empty() &&
      (prompt_pending_ || t - last_decision_start_ >= config_.decision_cadence - 1e-9)) {
    try {
      start_decision(t);
    } catch (const InsufficientHistoryError&) {
      // wait for a full window
    }
  }

  const MpcParams p = store_.snapshot();
  const MpcSolution sol = mpc_.solve(sim_.state(), p);
  statuses_.push_back(sol.status);
  sim_.tick(mpc_.to_sim_input(sol, config_.sim_dt));
}

TelemetryFrame Session::frame() const {
  std::lock_guard lock(mutex_);
  TelemetryFrame f;
  const VehicleState& x = sim_.state();
  f.t = x.t;
  f.s = x.pose.s;
  f.n = x.pose.n;
  f.delta_phi = x.pose.delta_phi;
  f.v = x.v;
  f.delta = x.delta;
  const WallDistances w = track_->wall_distances(x.pose.s, x.pose.n);
  f.d_left = w.left;
  f.d_right = w.right;
  f.crashed = sim_.crash().crashed;
  try {
    const CartesianPose c = track_->frenet_to_cartesian(x.pose);
    f.x = c.x;
    f.y = c.y;
    f.heading = c.heading;
  } catch (const std::exception&) {
  }
  f.params_hash = store_.snapshot().hash();
  if (!decisions_.empty()) {
    const DecisionRecord& d = decisions_.back();
    ordered_json j;
    j["t"] = d.t;
    j["human_prompt"] = d.human_prompt;
    j["action"] = d.outcome ? to_string(d.outcome->action) : "";
    j["instruction"] = d.outcome ? d.outcome->instruction : "";
    j["error"] = d.error;
    f.last_decision = j.dump();
  }
  const auto journal = store_.journal();
  if (!journal.empty()) f.last_update = journal_line(journal.back());
  return f;
}

std::vector<DecisionRecord> Session::decisions() const {
  std::lock_guard lock(mutex_);
  return decisions_;
}

std::vector<AdaptRecord> Session::adaptations() const {
  std::lock_guard lock(mutex_);
  return adaptations_;
}

std::vector<MpcStatus> Session::solve_statuses() const {
  std::lock_guard lock(mutex_);
  return statuses_;
}

std::string Session::journal_json(std::size_t limit) const {
  std::lock_guard lock(mutex_);
  ordered_json j;
  j["decisions"] = ordered_json::array();
  const std::size_t d0 = decisions_.size() > limit ? decisions_.size() - limit : 0;
  for (std::size_t i = d0; i < decisions_.size(); ++i)
    j["decisions"].push_back(ordered_json::parse(decision_log_line(decisions_[i])));
  j["updates"] = ordered_json::array();
  const auto journal = store_.journal();
  const std::size_t u0 = journal.size() > limit ? journal.size() - limit : 0;
  for (std::size_t i = u0; i < journal.size(); ++i)
    j["updates"].push_back(ordered_json::parse(journal_line(journal[i])));
  return j.dump();
}

RunResult run_loop(const RunConfig& config, std::shared_ptr<LlmBackend> backend,
                   const std::optional<std::filesystem::path>& out_dir) {
  Session session(config, std::move(backend), Session::Mode::headless);
  const int ticks = static_cast<int>(std::lround(config.duration / config.sim_dt));
  for (int i = 0; i < ticks; ++i) session.tick();

  RunResult r;
  r.log = session.sim().log();
  r.decisions = session.decisions();
  r.adaptations = session.adaptations();
  r.journal = session.store().journal();
  r.final_params = session.params();
  for (MpcStatus s : session.solve_statuses()) r.non_optimal_solves += s != MpcStatus::optimal;

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream journal(*out_dir / "journal.jsonl");
    for (const auto& e : r.journal) journal << journal_line(e) << '\n';
    std::ofstream state(*out_dir / "state.csv");
    write_log_csv(state, r.log);
    std::ofstream dec(*out_dir / "decisions.jsonl");
    for (const auto& d : r.decisions) dec << decision_log_line(d) << '\n';
    std::ofstream ad(*out_dir / "adaptations.jsonl");
    for (const auto& a : r.adaptations) ad << adapt_log_line(a) << '\n';
  }
  return r;
}

}  // namespace langdrive
