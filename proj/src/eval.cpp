#include "langdrive/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace langdrive {

using nlohmann::ordered_json;

std::string to_string(Category c) {
  switch (c) {
    case Category::Centerline: return "Centerline";
    case Category::CloseWall: return "CloseWall";
    case Category::Forward: return "Forward";
    case Category::Oscillating: return "Oscillating";
    case Category::Racingline: return "Racingline";
    case Category::Reversed: return "Reversed";
    case Category::Speed: return "Speed";
    case Category::Stop: return "Stop";
  }
  return "?";
}

namespace {

double speed_from_prompt(const std::string& prompt) {
  static const std::regex re(R"((-?[0-9]+(?:\.[0-9]+)?)\s*m/s)");
  std::smatch m;
  if (!std::regex_search(prompt, m, re)) throw std::invalid_argument("no speed in prompt: " + prompt);
  return std::stod(m[1]);
}

CommandSpec command(std::string id, std::string prompt, Category c) {
  CommandSpec s{std::move(id), std::move(prompt), c, 0.0};
  if (c == Category::Speed) s.threshold = speed_from_prompt(s.prompt);
  return s;
}

}  // namespace

const std::vector<CommandSpec>& standard_commands() {
  static const std::vector<CommandSpec> commands{
      command("centerline", "Drive on the centerline, away from the walls!", Category::Centerline),
      command("close_wall", "Drive close to a wall!", Category::CloseWall),
      command("forward", "Drive forward!", Category::Forward),
      command("oscillating", "Drive in a zig-zag, oscillating from side to side!", Category::Oscillating),
      command("racingline", "Normal driving on the racing line.", Category::Racingline),
      command("reversed", "Reverse the car!", Category::Reversed),
      command("speed", "Drive faster than 3 m/s!", Category::Speed),
      command("stop", "Stop the car!", Category::Stop),
  };
  return commands;
}

bool label_adherence(const StateSnapshot& snap, const CommandSpec& cmd, const AdherenceThresholds& th) {
  const auto& xs = snap.samples;
  if (xs.empty()) return false;
  double max_abs_d = 0.0, min_wall = INFINITY, max_abs_vs = 0.0, sum_vs = 0.0;
  double d_min = INFINITY, d_max = -INFINITY;
  bool all_pos = true, all_neg = true;
  for (const auto& x : xs) {
    max_abs_d = std::max(max_abs_d, std::abs(x.d));
    min_wall = std::min({min_wall, x.dist_left, x.dist_right});
    max_abs_vs = std::max(max_abs_vs, std::abs(x.s_speed));
    sum_vs += x.s_speed;
    d_min = std::min(d_min, x.d);
    d_max = std::max(d_max, x.d);
    all_pos = all_pos && x.s_speed > 0.0;
    all_neg = all_neg && x.s_speed < 0.0;
  }
  switch (cmd.category) {
    case Category::Reversed: return all_neg;
    case Category::Forward: return all_pos;
    case Category::Stop: return max_abs_vs < th.stop_speed;
    case Category::Speed: return sum_vs / static_cast<double>(xs.size()) > cmd.threshold;
    case Category::Racingline: return max_abs_d <= th.racing_line;
    case Category::Oscillating: return d_min < 0.0 && d_max > 0.0 && d_max - d_min > th.oscillation_pp;
    case Category::CloseWall: return min_wall < th.close_wall;
    case Category::Centerline: return min_wall >= th.close_wall && max_abs_d <= th.racing_line;
  }
  return false;
}

namespace {

// Scripted driving styles for the state dataset.
enum class Style { cruise, weave, reverse, stop, crash, wall };

const char* style_name(Style s) {
  switch (s) {
    case Style::cruise: return "cruise";
    case Style::weave: return "weave";
    case Style::reverse: return "reverse";
    case Style::stop: return "stop";
    case Style::crash: return "crash";
    case Style::wall: return "wall";
  }
  return "?";
}

struct Driver {
  double v_ref = 1.0;
  double n_ref = 0.0;
  double amp = 0.0;     // weave amplitude
  double period = 1.0;  // weave period
  double phase = 0.0;
  double dphi_ref = 0.0;  // fixed heading offset (crash runs)
  bool aim = false;       // hold dphi_ref instead of tracking n_ref

  ControlInput operator()(const VehicleState& x, const TrackSpec& track, const VehicleParams& vp) const {
    const double target_n = n_ref + amp * std::sin(2.0 * std::numbers::pi * x.t / period + phase);
    const double v = std::abs(x.v) < 0.3 ? std::copysign(0.3, v_ref == 0.0 ? 1.0 : v_ref) : x.v;
    const double sign = v > 0.0 ? 1.0 : -1.0;
    const double want_dphi =
        aim ? dphi_ref : std::clamp(-sign * 1.5 * (x.pose.n - target_n), -0.6, 0.6);
    const double kappa = track.curvature_at(x.pose.s);
    const double s_dot = v * std::cos(x.pose.delta_phi) / (1.0 - kappa * x.pose.n);
    const double phi_rate = 4.0 * (want_dphi - x.pose.delta_phi) + kappa * s_dot;
    const double delta = std::clamp(std::atan(vp.wheelbase * phi_rate / v), -vp.delta_max, vp.delta_max);
    ControlInput u;
    u.d_delta = delta - x.delta;
    u.a = std::clamp(2.5 * (v_ref - x.v), -4.0, 4.0);
    return u;
  }
};

LabeledState roll_style(std::mt19937_64& rng, const std::shared_ptr<const TrackSpec>& track_ptr,
                        const StateDatasetConfig& cfg) {
  const TrackSpec& track = *track_ptr;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  const double pick = U(rng);
  const Style style = pick < 0.28   ? Style::cruise
                      : pick < 0.52 ? Style::weave
                      : pick < 0.67 ? Style::reverse
                      : pick < 0.76 ? Style::stop
                      : pick < 0.86 ? Style::crash
                                    : Style::wall;

  VehicleState x0;
  x0.pose.s = uni(0.0, track.total_length());
  Driver drv;
  double half = std::min(track.width_left(x0.pose.s), track.width_right(x0.pose.s));
  switch (style) {
    case Style::cruise:
      drv.v_ref = uni(0.5, 5.5);
      drv.n_ref = uni(-0.6, 0.6) * half;
      x0.v = drv.v_ref;
      break;
    case Style::weave:
      drv.v_ref = uni(1.0, 4.0);
      drv.amp = uni(0.15, 1.0);
      drv.period = uni(1.6, 3.2);
      drv.phase = uni(0.0, 2.0 * std::numbers::pi);
      x0.v = drv.v_ref;
      break;
    case Style::reverse:
      drv.v_ref = uni(-2.0, -0.3);
      drv.n_ref = uni(-0.6, 0.6) * half;
      x0.v = drv.v_ref;
      break;
    case Style::stop:
      drv.v_ref = uni(-0.05, 0.05);
      drv.n_ref = uni(-0.7, 0.7) * half;
      x0.v = uni(0.0, 1.5);
      break;
    case Style::crash:
      drv.v_ref = uni(0.5, 2.0);
      drv.aim = true;
      drv.dphi_ref = (U(rng) < 0.5 ? 1.0 : -1.0) * uni(0.3, 0.6);
      x0.v = drv.v_ref;
      break;
    case Style::wall:
      drv.v_ref = uni(0.5, 4.0);
      drv.n_ref = (U(rng) < 0.5 ? 1.0 : -1.0) * (half - uni(0.1, 0.5));
      x0.v = drv.v_ref;
      break;
  }
  x0.pose.n = drv.n_ref;
  if (!track.in_tube(x0.pose.s, x0.pose.n)) x0.pose.n = 0.0;

  Simulator sim(track_ptr, x0);
  const double run = cfg.window + uni(1.0, 2.5);
  const int ticks = static_cast<int>(std::ceil(run / sim.config().dt));
  for (int i = 0; i < ticks; ++i) sim.tick(drv(sim.state(), track, sim.config().vehicle));

  LabeledState out;
  out.behavior = style_name(style);
  out.snapshot = sim.sample_window(cfg.window, cfg.samples);
  for (const auto& c : standard_commands()) out.labels.push_back(label_adherence(out.snapshot, c));
  return out;
}

}  // namespace

std::vector<LabeledState> gen_state_dataset(int n, std::uint64_t seed, std::shared_ptr<const TrackSpec> track,
                                            const StateDatasetConfig& config) {
  if (n < 1) throw std::invalid_argument("gen_state_dataset: n must be >= 1");
  if (!track) throw std::invalid_argument("gen_state_dataset: no track");
  std::vector<LabeledState> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Per-item streams keep items independent of each other's draws.
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    out.push_back(roll_style(rng, track, config));
  }
  return out;
}

std::string dataset_line(const LabeledState& item) {
  ordered_json j;
  j["behavior"] = item.behavior;
  j["duration"] = item.snapshot.duration;
  j["crashed"] = item.snapshot.crashed;
  ordered_json samples = ordered_json::array();
  for (const auto& s : item.snapshot.samples)
    samples.push_back({{"s", s.s}, {"d", s.d}, {"s_speed", s.s_speed}, {"d_speed", s.d_speed},
                       {"dist_left", s.dist_left}, {"dist_right", s.dist_right}});
  j["samples"] = samples;
  ordered_json labels;
  const auto& cmds = standard_commands();
  for (std::size_t i = 0; i < cmds.size() && i < item.labels.size(); ++i) labels[cmds[i].id] = item.labels[i];
  j["labels"] = labels;
  return j.dump();
}

namespace {
constexpr const char* kOracleContinue = "a) Continue behavior";
constexpr const char* kOracleChange = "b) Change behavior: Adjust the driving to follow the human's instruction.";
}  // namespace

void OracleBackend::add(const std::string& prompt, bool adherent) {
  ChatRequest r;
  r.user_text = prompt;
  const auto [it, fresh] = by_hash_.emplace(request_hash(r), adherent);
  if (!fresh && it->second != adherent)
    throw std::invalid_argument("oracle: one prompt registered with both labels");
}

Completion OracleBackend::complete(const ChatRequest& request) {
  request.validate();
  ChatRequest key;
  key.user_text = request.user_text;
  const auto it = by_hash_.find(request_hash(key));
  if (it == by_hash_.end()) throw TransportError(tag(), "prompt not in the labelled set");
  Completion c;
  c.text = it->second ? kOracleContinue : kOracleChange;
  c.stats.output_tokens = count_whitespace_tokens(c.text);
  c.stats.wall_latency = -1.0;
  return c;
}

std::shared_ptr<OracleBackend> make_oracle_backend(const std::vector<LabeledState>& dataset,
                                                   const DecisionEngine& engine) {
  auto oracle = std::make_shared<OracleBackend>();
  const auto& cmds = standard_commands();
  for (const auto& item : dataset)
    for (std::size_t c = 0; c < cmds.size(); ++c)
      oracle->add(engine.prompt_for(cmds[c].prompt, item.snapshot), item.labels.at(c));
  return oracle;
}

double AccuracyReport::accuracy() const { return total ? 100.0 * correct / total : 0.0; }

double AccuracyReport::category_accuracy(Category c) const {
  const auto it = per_category.find(c);
  if (it == per_category.end() || it->second.second == 0) return 0.0;
  return 100.0 * it->second.first / it->second.second;
}

std::string AccuracyReport::to_json() const {
  ordered_json j;
  j["model"] = model;
  j["rag"] = rag;
  ordered_json cats;
  for (const auto& [c, ct] : per_category) cats[to_string(c)] = {{"correct", ct.first}, {"total", ct.second},
                                                                  {"accuracy", category_accuracy(c)}};
  j["categories"] = cats;
  j["correct"] = correct;
  j["total"] = total;
  j["parse_failures"] = parse_failures;
  j["accuracy"] = accuracy();
  return j.dump(2);
}

std::string AccuracyReport::to_table() const {
  std::ostringstream o;
  o << "Model | RAG";
  for (const auto& [c, ct] : per_category) o << " | " << to_string(c);
  o << " | Avg. Accuracy\n";
  char buf[32];
  o << model << " | " << (rag ? "yes" : "no");
  for (const auto& [c, ct] : per_category) {
    std::snprintf(buf, sizeof buf, "%.2f", category_accuracy(c));
    o << " | " << buf;
  }
  std::snprintf(buf, sizeof buf, "%.2f", accuracy());
  o << " | " << buf << "\n";
  return o.str();
}

AccuracyReport eval_decision_accuracy(const std::vector<LabeledState>& dataset, const DecisionEngine& engine,
                                      const std::string& model_tag) {
  AccuracyReport r;
  r.model = model_tag;
  r.rag = !engine.hints_for("x").empty();
  const auto& cmds = standard_commands();
  for (const auto& item : dataset) {
    for (std::size_t c = 0; c < cmds.size(); ++c) {
      const DecisionRecord d = engine.decide(cmds[c].prompt, item.snapshot);
      if (!d.outcome) ++r.parse_failures;
      const bool predicted = d.outcome && d.outcome->action == DecisionAction::Continue;
      const bool ok = d.outcome && predicted == item.labels.at(c);
      auto& ct = r.per_category[cmds[c].category];
      ct.first += ok;
      ++ct.second;
      r.correct += ok;
      ++r.total;
    }
  }
  return r;
}

double rmse(std::span<const double> series, double ref) {
  if (series.empty()) throw std::invalid_argument("rmse: empty series");
  double ss = 0.0;
  for (double x : series) ss += (x - ref) * (x - ref);
  return std::sqrt(ss / static_cast<double>(series.size()));
}

double improvement(double baseline, double adapted) {
  if (baseline == 0.0) return adapted == 0.0 ? 0.0 : -INFINITY;
  return (baseline - adapted) / baseline * 100.0;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::E_C: return "E_C";
    case Metric::E_V: return "E_V";
    case Metric::E_R: return "E_R";
    case Metric::E_S: return "E_S";
  }
  return "?";
}

const std::vector<ControlScenario>& standard_scenarios() {
  static const std::vector<ControlScenario> s{
      {"centerline", "Drive as far away from the walls as possible!", Metric::E_C, 0.0},
      {"ref_velocity", "Follow the reference velocity of 1.25 m/s as closely as possible!", Metric::E_V, 1.25},
      {"reversing", "Drive the track in reverse at -1 m/s!", Metric::E_R, -1.0},
      {"smooth", "Reduce jerkyness!", Metric::E_S, 0.0},
  };
  return s;
}

const ControlScenario& find_scenario(const std::string& id) {
  for (const auto& s : standard_scenarios())
    if (s.id == id) return s;
  throw std::invalid_argument("unknown scenario " + id);
}

RunOutcome run_closed_loop(const ControlScenario& scenario, const MpcParams& params,
                           const ControlRunConfig& config) {
  if (!config.track) throw std::invalid_argument("run_closed_loop: no track");
  std::mt19937_64 rng(config.seed);
  VehicleState x0;
  x0.pose.s = std::uniform_real_distribution<double>(0.0, config.track->total_length())(rng);
  Simulator sim(config.track, x0, config.sim);
  MpcController mpc(config.track, config.mpc);
  const double dt = config.sim.dt;
  const int settle = static_cast<int>(std::lround(scenario.settle / dt));
  const int measure = static_cast<int>(std::lround(scenario.duration / dt));

  RunOutcome out;
  std::vector<double> series;
  series.reserve(static_cast<std::size_t>(measure));
  double sum_v = 0.0;
  try {
    for (int i = 0; i < settle + measure; ++i) {
      const double v_prev = sim.state().v;
      sim.tick(mpc.to_sim_input(mpc.solve(sim.state(), params), dt));
      const VehicleState& x = sim.state();
      if (!std::isfinite(x.v) || !std::isfinite(x.pose.n) || !std::isfinite(x.pose.s)) {
        out.completed = false;
        out.note = "diverged";
        break;
      }
      if (i < settle) continue;
      double sample = 0.0;
      switch (scenario.metric) {
        case Metric::E_C: sample = x.pose.n; break;
        case Metric::E_V:
        case Metric::E_R: sample = x.v; break;
        case Metric::E_S: sample = (x.v - v_prev) / dt; break;
      }
      series.push_back(sample);
      sum_v += x.v;
      out.max_abs_v_dev = std::max(out.max_abs_v_dev, std::abs(x.v - scenario.reference));
    }
  } catch (const std::exception& e) {
    out.completed = false;
    out.note = e.what();
  }
  if (out.completed && sim.crash().crashed) {
    out.completed = false;
    out.note = "crashed";
  }
  if (!series.empty()) {
    out.error = rmse(series, scenario.metric == Metric::E_S ? 0.0 : scenario.reference);
    out.mean_v = sum_v / static_cast<double>(series.size());
  }
  return out;
}

ScenarioResult run_control_scenario(const ControlScenario& scenario, const MpcParams& adapted,
                                    const ControlRunConfig& config) {
  ScenarioResult r;
  r.scenario = scenario;
  r.adapted_params = adapted;
  r.baseline = run_closed_loop(scenario, MpcParams::defaults(), config);
  r.adapted = run_closed_loop(scenario, adapted, config);
  return r;
}

ScenarioResult run_control_scenario(const ControlScenario& scenario, const MpcAdapter& adapter,
                                    const ControlRunConfig& config) {
  ParamStore store;
  const AdaptRecord rec = adapter.adapt(scenario.instruction, store, 0.0);
  ScenarioResult r = run_control_scenario(scenario, store.snapshot(), config);
  r.adapter_error = rec.error;
  if (rec.update) r.warnings = rec.update->warnings;
  return r;
}

std::optional<double> ControlReport::average_improvement() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : results) {
    if (!r.completed()) continue;
    sum += r.improvement_pct();
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

namespace {
ordered_json outcome_json(const RunOutcome& o) {
  ordered_json j;
  j["error"] = o.error;
  j["completed"] = o.completed;
  j["mean_v"] = o.mean_v;
  if (!o.note.empty()) j["note"] = o.note;
  return j;
}
}  // namespace

std::string ControlReport::to_json() const {
  ordered_json j;
  j["model"] = model;
  j["rag"] = rag;
  j["scenarios"] = ordered_json::array();
  for (const auto& r : results) {
    ordered_json s;
    s["id"] = r.scenario.id;
    s["metric"] = to_string(r.scenario.metric);
    s["instruction"] = r.scenario.instruction;
    s["baseline"] = outcome_json(r.baseline);
    s["adapted"] = outcome_json(r.adapted);
    if (r.completed()) s["improvement_pct"] = r.improvement_pct();
    else s["improvement_pct"] = "N.C.";
    ordered_json p;
    for (const auto& [k, v] : r.adapted_params.to_map()) p[k] = v;
    s["adapted_params"] = p;
    s["warnings"] = r.warnings;
    if (!r.adapter_error.empty()) s["adapter_error"] = r.adapter_error;
    j["scenarios"].push_back(s);
  }
  const auto avg = average_improvement();
  if (avg) j["average_improvement_pct"] = *avg;
  else j["average_improvement_pct"] = nullptr;
  return j.dump(2);
}

std::string ControlReport::to_table() const {
  std::ostringstream o;
  o << "Model | RAG";
  for (const auto& r : results) o << " | " << to_string(r.scenario.metric);
  o << " | Avg. Improvement\n" << model << " | " << (rag ? "yes" : "no");
  char buf[64];
  for (const auto& r : results) {
    if (r.completed())
      std::snprintf(buf, sizeof buf, "%.3g (%.1f%%)", r.adapted.error, r.improvement_pct());
    else
      std::snprintf(buf, sizeof buf, "N.C.");
    o << " | " << buf;
  }
  const auto avg = average_improvement();
  if (avg) std::snprintf(buf, sizeof buf, "%.1f%%", *avg);
  else std::snprintf(buf, sizeof buf, "N.C.");
  o << " | " << buf << "\n";
  return o.str();
}

int default_finetune_size(DatasetKind kind) { return kind == DatasetKind::decision ? 626 : 150; }

namespace {

// Hint texts with their numbers drawn around the bundled values.
std::vector<MemoryEntry> randomized_hints(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto around = [&](double x) { return format_number(std::round(x * (0.7 + 0.6 * U(rng)) * 100.0) / 100.0); };
  const double lo = std::round(3.0 + 3.0 * U(rng));
  return {
      {1, MemoryKind::decision_hint, "If the d-speed is above than " + around(0.5) + "m/s is high."},
      {2, MemoryKind::decision_hint,
       "Unless specified differently by the human, the car is usually driving at speeds between " +
           format_number(lo) + " and " + format_number(lo + 2.0) + "m/s."},
      {3, MemoryKind::decision_hint,
       "If the distance to a wall is smaller than " + around(0.4) + "m, the car is close to that wall."},
      {8, MemoryKind::decision_hint,
       "A d-coordinate above " + around(0.3) + "m is considered not to be on the racing line."},
      {9, MemoryKind::decision_hint,
       "The car is oscillating if the d-coordinate oscillates between positive and negative values exceeding a "
       "magnitude of " + around(0.3) + " metres."},
  };
}

std::string random_decision_command(std::mt19937_64& rng) {
  static const std::vector<std::string> extra{"Drive normally!", "Drive safely!", "Drive Safely",
                                              "Keep away from the walls!", "Drive slower than 2 m/s!"};
  const auto& cmds = standard_commands();
  const std::size_t k = rng() % (cmds.size() + extra.size());
  return k < cmds.size() ? cmds[k].prompt : extra[k - cmds.size()];
}

std::string random_mpc_instruction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto num = [&](double a, double b) { return format_number(std::round((a + (b - a) * U(rng)) * 100.0) / 100.0); };
  switch (rng() % 8) {
    case 0: return "Drive at " + num(0.5, 6.0) + " m/s!";
    case 1: return "Drive the track in reverse at -" + num(0.5, 2.0) + " m/s!";
    case 2: return "Follow the reference velocity of " + num(0.5, 5.0) + " m/s as closely as possible!";
    case 3: return "Stay at least " + num(0.2, 1.0) + " m away from the walls!";
    case 4: return "Drive at speeds between " + num(1.0, 2.0) + " and " + num(2.0, 4.0) + " m/s";
    case 5: return "Reduce jerkyness!";
    case 6: return "Drive more aggressively and keep lateral acceleration below " + num(2.0, 15.0) + " m/s^2!";
    default: return "Stop the car!";
  }
}

}  // namespace

FinetuneStats gen_finetune_dataset(DatasetKind kind, int n, std::uint64_t seed, const LlmGateway& gateway,
                                   std::shared_ptr<const TrackSpec> track, const BaseMemory& base,
                                   const RagStore* rag, std::ostream& out) {
  if (n < 1) throw std::invalid_argument("gen_finetune_dataset: n must be >= 1");
  FinetuneStats stats;
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0x7fu};
    std::mt19937_64 rng(seq);
    ChatRequest req;
    if (kind == DatasetKind::decision) {
      const LabeledState st = roll_style(rng, track, {});
      req.user_text = build_decision_prompt(random_decision_command(rng), st.snapshot, randomized_hints(rng));
    } else {
      const std::string instr = random_mpc_instruction(rng);
      std::vector<MemoryEntry> mems;
      if (rag && !rag->entries(MemoryKind::mpc_memory).empty())
        for (auto& s : rag->retrieve(instr, MemoryKind::mpc_memory, 3)) mems.push_back(s.entry);
      req.user_text = build_adapter_prompt(instr, base, mems);
    }
    try {
      const Completion c = gateway.complete(req);
      ordered_json j;
      j["prompt"] = req.user_text;
      j["response"] = c.text;
      out << j.dump() << '\n';
      ++stats.written;
    } catch (const std::exception&) {
      ++stats.skipped;
    }
  }
  return stats;
}

}  // namespace langdrive
