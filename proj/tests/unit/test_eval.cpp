#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "langdrive/eval.hpp"

using namespace langdrive;

namespace {

const std::filesystem::path kData = LANGDRIVE_DATA_DIR;

std::shared_ptr<const TrackSpec> oval() {
  return std::make_shared<TrackSpec>(load_track(kData / "tracks/oval.csv"));
}

std::shared_ptr<const TrackSpec> tight_circle() {
  std::vector<Point2> pts;
  for (int i = 0; i < 600; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 600;
    pts.push_back({std::cos(a), std::sin(a)});
  }
  return std::make_shared<TrackSpec>(pts, std::vector<double>(600, 0.3), std::vector<double>(600, 0.3));
}

StateSnapshot snapshot_1b() {
  StateSnapshot s;
  s.duration = 2.0;
  const double ss[] = {19, 20, 21, 22};
  const double d[] = {-0.6, 0.6, -0.65, 0.61};
  const double vs[] = {1.0, 1.0, 0.9, 1.1};
  const double vd[] = {1.2, -1.2, 1.21, -1.2};
  for (int i = 0; i < 4; ++i) s.samples.push_back({ss[i], d[i], vs[i], vd[i], 1.0, 0.1});
  return s;
}

const CommandSpec& command(Category c) {
  for (const auto& cmd : standard_commands())
    if (cmd.category == c) return cmd;
  throw std::logic_error("no command");
}

class FailingBackend : public LlmBackend {
 public:
  std::string tag() const override { return "remote"; }
  Completion complete(const ChatRequest&) override { throw TransportError("remote", "connection refused"); }
};

// Fails every third call.
class FlakyBackend : public LlmBackend {
 public:
  std::string tag() const override { return "flaky"; }
  Completion complete(const ChatRequest&) override {
    if (++calls_ % 3 == 0) throw TransportError("flaky", "timeout");
    return {"a) Continue behavior", {}};
  }

 private:
  int calls_ = 0;
};

MpcParams bubble_2c_params() {
  MpcParams p;
  p.qv = 0.1;
  p.qn = 40.0;
  p.qalpha = 50.0;
  p.a_min = -20.0;
  p.a_max = 0.0;
  p.v_min = -1.0;
  p.v_max = -1.0;
  p.track_safety_margin = 0.1;
  return p;
}

ControlRunConfig run_config() {
  ControlRunConfig c;
  c.track = oval();
  return c;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("rmse by hand") {
    const std::vector<double> flat(40, 1.25);
    CHECK(rmse(flat, 1.25) == 0.0);
    const std::vector<double> two{1.0, 3.0};
    CHECK(rmse(two, 0.0) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
    CHECK_THROWS_AS(rmse(std::vector<double>{}, 0.0), std::invalid_argument);
  }

  TEST_CASE("rmse agrees with an extended-precision recomputation") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd(0.3, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> xs(1 + trial * 37);
      for (auto& x : xs) x = nd(rng);
      const double ref = nd(rng);
      long double acc = 0.0L;
      for (double x : xs) acc += (static_cast<long double>(x) - ref) * (static_cast<long double>(x) - ref);
      const long double expect = std::sqrt(acc / static_cast<long double>(xs.size()));
      CHECK(std::abs(rmse(xs, ref) - static_cast<double>(expect)) <= 1e-12 * static_cast<double>(expect));
    }
  }

  TEST_CASE("improvement is antisymmetric about zero") {
    CHECK(improvement(4.0, 1.0) == 75.0);
    CHECK(improvement(1.0, 4.0) == -300.0);
    CHECK(improvement(0.0, 0.0) == 0.0);
    CHECK(improvement(2.0, 2.0) == 0.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(1e-3, 10.0);
    for (int i = 0; i < 1000; ++i) {
      const double a = u(rng), b = u(rng);
      const double ab = improvement(a, b), ba = improvement(b, a);
      CHECK((ab > 0.0) == (ba < 0.0));
      CHECK((ab == 0.0) == (ba == 0.0));
    }
  }

  TEST_CASE("bundled commands") {
    const auto& cmds = standard_commands();
    REQUIRE(cmds.size() == 8);
    for (std::size_t i = 0; i < cmds.size(); ++i) CHECK(static_cast<std::size_t>(cmds[i].category) == i);
    CHECK(command(Category::Speed).threshold == 3.0);
    CHECK(command(Category::Stop).prompt == "Stop the car!");
    CHECK(to_string(Category::CloseWall) == "CloseWall");
  }

  TEST_CASE("labels of the oscillating near-wall window") {
    const StateSnapshot s = snapshot_1b();
    CHECK(label_adherence(s, command(Category::Oscillating)));
    CHECK(label_adherence(s, command(Category::CloseWall)));
    CHECK(label_adherence(s, command(Category::Forward)));
    CHECK_FALSE(label_adherence(s, command(Category::Speed)));
    CHECK_FALSE(label_adherence(s, command(Category::Racingline)));
    CHECK_FALSE(label_adherence(s, command(Category::Centerline)));
    CHECK_FALSE(label_adherence(s, command(Category::Reversed)));
    CHECK_FALSE(label_adherence(s, command(Category::Stop)));
  }

  TEST_CASE("labels on edge windows") {
    StateSnapshot still;
    still.duration = 2.0;
    for (int i = 0; i < 5; ++i) still.samples.push_back({3.0, 0.0, 0.0, 0.0, 1.5, 1.5});
    CHECK(label_adherence(still, command(Category::Stop)));
    CHECK(label_adherence(still, command(Category::Centerline)));
    CHECK(label_adherence(still, command(Category::Racingline)));
    CHECK_FALSE(label_adherence(still, command(Category::Forward)));
    CHECK_FALSE(label_adherence(still, command(Category::Reversed)));
    CHECK_FALSE(label_adherence(still, command(Category::Oscillating)));

    StateSnapshot empty;
    for (const auto& c : standard_commands()) CHECK_FALSE(label_adherence(empty, c));

    StateSnapshot fast = still;
    for (auto& x : fast.samples) x.s_speed = 3.0;
    CHECK_FALSE(label_adherence(fast, command(Category::Speed)));  // strictly faster
    for (auto& x : fast.samples) x.s_speed = 3.01;
    CHECK(label_adherence(fast, command(Category::Speed)));
  }

  TEST_CASE("state dataset is seeded and covers both sides of every label") {
    const auto track = oval();
    const auto a = gen_state_dataset(200, 0, track);
    const auto b = gen_state_dataset(200, 0, track);
    REQUIRE(a.size() == 200);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(dataset_line(a[i]) == dataset_line(b[i]));
    const auto c = gen_state_dataset(5, 1, track);
    CHECK(dataset_line(c[0]) != dataset_line(a[0]));
    // item i depends only on (seed, i)
    const auto prefix = gen_state_dataset(7, 0, track);
    for (std::size_t i = 0; i < prefix.size(); ++i) CHECK(dataset_line(prefix[i]) == dataset_line(a[i]));

    std::vector<int> pos(8, 0);
    for (const auto& item : a) {
      REQUIRE(item.labels.size() == 8);
      REQUIRE(item.snapshot.samples.size() == 5);
      for (std::size_t k = 0; k < 8; ++k) {
        CHECK(item.labels[k] == label_adherence(item.snapshot, standard_commands()[k]));
        pos[k] += item.labels[k];
      }
    }
    for (std::size_t k = 0; k < 8; ++k) {
      INFO(standard_commands()[k].id);
      CHECK(pos[k] >= 10);
      CHECK(200 - pos[k] >= 10);
    }
    const auto line = nlohmann::json::parse(dataset_line(a[0]));
    CHECK(line["labels"].size() == 8);
    CHECK(line["samples"].size() == 5);
    CHECK_THROWS_AS(gen_state_dataset(0, 0, track), std::invalid_argument);
  }

  TEST_CASE("oracle gateway scores exactly 100 percent") {
    const auto dataset = gen_state_dataset(60, 4, oval());
    const RagStore rag = RagStore::bundled(kData);
    const LlmGateway probe(std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, ""));
    for (bool use_rag : {true, false}) {
      DecisionConfig cfg;
      cfg.use_rag = use_rag;
      const DecisionEngine renderer(probe, &rag, cfg);
      const LlmGateway gw(make_oracle_backend(dataset, renderer));
      const DecisionEngine engine(gw, &rag, cfg);
      const AccuracyReport r = eval_decision_accuracy(dataset, engine, "oracle");
      CHECK(r.total == 480);
      CHECK(r.correct == 480);
      CHECK(r.accuracy() == 100.0);
      CHECK(r.parse_failures == 0);
      for (const auto& [cat, ct] : r.per_category) CHECK(ct.first == ct.second);
    }
  }

  TEST_CASE("oracle refuses prompts it was not given") {
    OracleBackend o;
    o.add("known", true);
    ChatRequest r;
    r.user_text = "known";
    CHECK(o.complete(r).text == "a) Continue behavior");
    r.user_text = "unknown";
    CHECK_THROWS_AS(o.complete(r), TransportError);
  }

  TEST_CASE("always-Continue accuracy is the adherent base rate") {
    const auto dataset = gen_state_dataset(80, 9, oval());
    int adherent = 0;
    for (const auto& item : dataset)
      for (bool l : item.labels) adherent += l;
    const LlmGateway gw(std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, "a) Continue behavior"));
    const RagStore rag = RagStore::bundled(kData);
    const AccuracyReport r = eval_decision_accuracy(dataset, DecisionEngine(gw, &rag), "always-continue");
    CHECK(r.total == 640);
    CHECK(r.correct == adherent);
    CHECK(r.accuracy() == doctest::Approx(100.0 * adherent / 640.0));
  }

  TEST_CASE("unreachable backend counts every pair as wrong") {
    const auto dataset = gen_state_dataset(10, 2, oval());
    const LlmGateway gw(std::make_shared<FailingBackend>());
    const AccuracyReport r = eval_decision_accuracy(dataset, DecisionEngine(gw, nullptr), "remote");
    CHECK(r.total == 80);
    CHECK(r.correct == 0);
    CHECK(r.parse_failures == 80);
  }

  TEST_CASE("accuracy report renders") {
    AccuracyReport r;
    r.model = "m";
    r.rag = true;
    r.per_category[Category::Stop] = {3, 4};
    r.correct = 3;
    r.total = 4;
    CHECK(r.accuracy() == 75.0);
    CHECK(r.category_accuracy(Category::Stop) == 75.0);
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["model"] == "m");
    CHECK(r.to_table().find("75.00") != std::string::npos);
  }

  TEST_CASE("fine-tuning datasets have the default sizes and are reproducible") {
    const auto track = oval();
    const RagStore rag = RagStore::bundled(kData);
    const BaseMemory base = BaseMemory::bundled(kData);
    const LlmGateway gw(std::make_shared<ScriptedBackend>(
        std::vector<ScriptedRule>{{"Adapt the tuneable", false, "new_mpc_params = {qn: 30}"}},
        "a) Continue behavior"));
    CHECK(default_finetune_size(DatasetKind::decision) == 626);
    CHECK(default_finetune_size(DatasetKind::mpc) == 150);
    for (DatasetKind kind : {DatasetKind::decision, DatasetKind::mpc}) {
      std::ostringstream a, b;
      const int n = default_finetune_size(kind);
      const FinetuneStats sa = gen_finetune_dataset(kind, n, 17, gw, track, base, &rag, a);
      gen_finetune_dataset(kind, n, 17, gw, track, base, &rag, b);
      CHECK(sa.written == n);
      CHECK(sa.skipped == 0);
      CHECK(a.str() == b.str());
      std::istringstream in(a.str());
      int lines = 0;
      std::set<std::string> prompts;
      for (std::string line; std::getline(in, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.size() == 2);
        prompts.insert(j["prompt"].get<std::string>());
      }
      CHECK(lines == n);
      CHECK(prompts.size() > static_cast<std::size_t>(n / 2));  // randomized, not one prompt repeated
      std::ostringstream other;
      gen_finetune_dataset(kind, 20, 18, gw, track, base, &rag, other);
      CHECK(other.str().substr(0, 200) != a.str().substr(0, 200));
    }
  }

  TEST_CASE("gateway failures are skipped and counted") {
    const auto track = oval();
    const BaseMemory base = BaseMemory::bundled(kData);
    std::ostringstream out;
    const LlmGateway flaky(std::make_shared<FlakyBackend>());
    const FinetuneStats s = gen_finetune_dataset(DatasetKind::mpc, 30, 1, flaky, track, base, nullptr, out);
    CHECK(s.written == 20);
    CHECK(s.skipped == 10);
    const LlmGateway dead(std::make_shared<FailingBackend>());
    std::ostringstream none;
    const FinetuneStats d = gen_finetune_dataset(DatasetKind::decision, 5, 1, dead, track, base, nullptr, none);
    CHECK(d.written == 0);
    CHECK(d.skipped == 5);
    CHECK(none.str().empty());
  }

  TEST_CASE("scenario table") {
    const auto& s = standard_scenarios();
    REQUIRE(s.size() == 4);
    CHECK(find_scenario("ref_velocity").reference == 1.25);
    CHECK(find_scenario("reversing").reference == -1.0);
    CHECK(find_scenario("smooth").metric == Metric::E_S);
    CHECK(find_scenario("centerline").duration == 60.0);
    CHECK(find_scenario("centerline").settle == 5.0);
    CHECK_THROWS_AS(find_scenario("drift"), std::invalid_argument);
  }

  TEST_CASE("pinched reversing beats the defaults and respects the deviation bound") {
    const ScenarioResult r = run_control_scenario(find_scenario("reversing"), bubble_2c_params(), run_config());
    REQUIRE(r.completed());
    CHECK(r.adapted.mean_v >= -1.15);
    CHECK(r.adapted.mean_v <= -0.85);
    CHECK(r.improvement_pct() >= 50.0);
    CHECK(r.adapted.error <= r.adapted.max_abs_v_dev + 1e-12);
    CHECK(r.baseline.error <= r.baseline.max_abs_v_dev + 1e-12);
  }

  TEST_CASE("heavy input weights lower the acceleration error") {
    MpcParams p;
    p.qac = ParamSchema::standard().find("qac")->max;
    p.qddelta = ParamSchema::standard().find("qddelta")->max;
    const ScenarioResult r = run_control_scenario(find_scenario("smooth"), p, run_config());
    REQUIRE(r.completed());
    CHECK(r.adapted.error < r.baseline.error);
  }

  TEST_CASE("closed loop is reproducible for a seed") {
    ControlScenario sc = find_scenario("centerline");
    sc.duration = 10.0;
    ControlRunConfig c = run_config();
    c.seed = 5;
    const RunOutcome a = run_closed_loop(sc, MpcParams{}, c);
    const RunOutcome b = run_closed_loop(sc, MpcParams{}, c);
    CHECK(a.error == b.error);
    CHECK(a.mean_v == b.mean_v);
    c.seed = 6;
    CHECK(run_closed_loop(sc, MpcParams{}, c).error != a.error);
  }

  TEST_CASE("a crashing run is flagged not completed and left out of the average") {
    ControlScenario sc = find_scenario("ref_velocity");
    sc.duration = 5.0;
    sc.settle = 1.0;
    ControlRunConfig c;
    c.track = tight_circle();
    MpcParams fast;
    fast.v_min = 5.0;
    fast.v_max = 5.0;
    fast.alat_max = 20.0;
    fast.track_safety_margin = 0.0;
    const RunOutcome o = run_closed_loop(sc, fast, c);
    CHECK_FALSE(o.completed);
    CHECK_FALSE(o.note.empty());

    ControlReport report;
    ScenarioResult good;
    good.baseline.error = 2.0;
    good.adapted.error = 1.0;
    ScenarioResult bad = good;
    bad.adapted.completed = false;
    bad.adapted.error = 100.0;
    report.results = {good, bad};
    CHECK(*report.average_improvement() == 50.0);
    report.results = {bad};
    CHECK_FALSE(report.average_improvement().has_value());
    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j["scenarios"][0]["adapted"]["completed"] == false);
    CHECK(report.to_table().find("N.C.") != std::string::npos);
  }

  TEST_CASE("adapter-driven scenario records its warnings") {
    const std::string resp =
        "new_mpc_params = {qv: 0.1, 'qn': 40, qalpha: 50, ddelta_min: -5, ddelta_max: 0, dv_min: -50, "
        "dv_max: -1, v_min: -1, v_max: -1, boundary_inflation: 0.1}";
    const LlmGateway gw(std::make_shared<ScriptedBackend>(std::vector<ScriptedRule>{}, resp));
    const RagStore rag = RagStore::bundled(kData);
    const MpcAdapter adapter(gw, &rag, BaseMemory::bundled(kData), ParamSchema::standard());
    ControlScenario sc = find_scenario("reversing");
    sc.duration = 10.0;
    const ScenarioResult r = run_control_scenario(sc, adapter, run_config());
    CHECK(r.adapter_error.empty());
    CHECK(r.adapted_params == bubble_2c_params());
    CHECK_FALSE(r.warnings.empty());
    CHECK(r.adapted.mean_v == doctest::Approx(-1.0).epsilon(1e-9));
  }
}
