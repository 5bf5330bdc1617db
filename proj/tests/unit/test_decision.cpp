#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "langdrive/adapter.hpp"
#include "langdrive/decision.hpp"

using namespace langdrive;

namespace {

const std::filesystem::path kFixtures = std::filesystem::path(LANGDRIVE_TEST_DIR) / "fixtures";
const std::filesystem::path kData = LANGDRIVE_DATA_DIR;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string response(const std::string& name) { return slurp(kFixtures / "responses" / (name + ".txt")); }

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

StateSnapshot crashed_snapshot() {
  StateSnapshot s;
  s.duration = 2.0;
  s.crashed = true;
  const double vs[] = {-0.009, -0.026, -0.03, -0.03, -0.013};
  const double vd[] = {0.096, 0.091, 0.088, 0.09, 0.096};
  const double dl[] = {2.953, 2.954, 2.954, 2.955, 2.955};
  const double dr[] = {0.149, 0.148, 0.148, 0.147, 0.147};
  for (int i = 0; i < 5; ++i) s.samples.push_back({10.0 + 0.01 * i, -1.4, vs[i], vd[i], dl[i], dr[i]});
  return s;
}

LlmGateway scripted(std::vector<ScriptedRule> rules, std::string fallback) {
  return LlmGateway(std::make_shared<ScriptedBackend>(std::move(rules), std::move(fallback)));
}

class FailingBackend : public LlmBackend {
 public:
  std::string tag() const override { return "remote"; }
  Completion complete(const ChatRequest&) override { throw TransportError("remote", "connection refused"); }
};

}  // namespace

TEST_SUITE("decision") {
  TEST_CASE("golden adherence prompt") {
    const RagStore rag = RagStore::bundled(kData);
    const auto gw = scripted({}, "a) Continue behavior");
    DecisionEngine engine(gw, &rag);
    CHECK(engine.prompt_for("Drive normally!", snapshot_1b()) == slurp(kFixtures / "bubble_1b_prompt.txt"));
  }

  TEST_CASE("no hints drops the guide block") {
    const std::string p = build_decision_prompt("Drive normally!", snapshot_1b(), {});
    CHECK(p.find("guides") == std::string::npos);
    CHECK(p.find("# Hint") == std::string::npos);
    CHECK(p.find("- b) Change behavior: <instruction>\n") != std::string::npos);

    const RagStore rag = RagStore::bundled(kData);
    const auto gw = scripted({}, "x");
    DecisionConfig cfg;
    cfg.use_rag = false;
    CHECK(DecisionEngine(gw, &rag, cfg).prompt_for("Drive normally!", snapshot_1b()) == p);
    CHECK(DecisionEngine(gw, nullptr).prompt_for("Drive normally!", snapshot_1b()) == p);
  }

  TEST_CASE("five-sample header") {
    const std::string p = build_decision_prompt("Drive normally!", crashed_snapshot(), {});
    CHECK(p.find("The data has been sampled for 2.0 seconds in 5 samples.\n") != std::string::npos);
    CHECK(p.find("- s-speed: -0.009, -0.026, -0.03, -0.03, -0.013\n") != std::string::npos);
    CHECK(p.find("- crashed: True\n") != std::string::npos);
  }

  TEST_CASE("prompt is a pure function of its inputs") {
    const auto a = build_decision_prompt("Drive normally!", crashed_snapshot(), {});
    const auto b = build_decision_prompt("Drive normally!", crashed_snapshot(), {});
    CHECK(a == b);
    CHECK(build_decision_prompt("Reverse", crashed_snapshot(), {}).find("The human wants to: Reverse.\n") == 0);
  }

  TEST_CASE("change with a labelled instruction") {
    const DecisionOutcome o = parse_decision(response("1c"));
    CHECK(o.action == DecisionAction::Change);
    CHECK(o.instruction ==
          "The car should increase its s-speed to a normal range of 5-7 m/s, reduce the oscillation in "
          "d-coordinate, and move closer to the centerline to increase safety.");
    CHECK(o.rationale == response("1c"));
  }

  TEST_CASE("crash recovery responses") {
    const DecisionOutcome c = parse_decision(response("3c"));
    CHECK(c.action == DecisionAction::Change);
    CHECK(c.instruction == "Reverse the car to get back on the racing line.");
    const DecisionOutcome f = parse_decision(response("3f"));
    CHECK(f.action == DecisionAction::Continue);
    CHECK(f.instruction.empty());
    const DecisionOutcome h = parse_decision(response("3h"));
    CHECK(h.action == DecisionAction::Change);
    CHECK(h.instruction == "Stop reversing and resume normal driving.");
  }

  TEST_CASE("unparseable responses") {
    try {
      parse_decision("lorem ipsum");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.raw() == "lorem ipsum");
    }
    CHECK_THROWS_AS(parse_decision("Action: b) Change behavior\n\nInstruction:   \n"), ParseError);
    CHECK_THROWS_AS(parse_decision(""), ParseError);
  }

  TEST_CASE("marker precedence and spelling variants") {
    CHECK(parse_decision("a) Continue behavior").action == DecisionAction::Continue);
    CHECK(parse_decision("**A) CONTINUE BEHAVIOUR**").action == DecisionAction::Continue);
    const auto o = parse_decision("b) Change behaviour: slow down to 2 m/s");
    CHECK(o.action == DecisionAction::Change);
    CHECK(o.instruction == "slow down to 2 m/s");
    // The options are echoed before the label; the one after the label decides.
    CHECK(parse_decision("I could pick a) Continue behavior or b) Change behavior: x.\nAction: a) Continue behavior")
              .action == DecisionAction::Continue);
    // Without a label the last marker decides.
    CHECK(parse_decision("Not a) Continue behavior. b) Change behavior: stop now").instruction == "stop now");
    // A later Instruction: label wins over the text right after the marker.
    CHECK(parse_decision("Change behavior: faster\n\nInstruction: drive at 3 m/s").instruction == "drive at 3 m/s");
    // A change marker followed by its instruction on the next paragraph.
    CHECK(parse_decision("Action: b) Change behavior\n\n`Stop the car.`").instruction == "Stop the car.");
  }

  TEST_CASE("decide on the crashed window asks to reverse") {
    const RagStore rag = RagStore::bundled(kData);
    const auto gw = scripted({{"crashed: True", false, response("3c")}}, "a) Continue behavior");
    DecisionEngine engine(gw, &rag);
    const DecisionRecord r = engine.decide("Drive normally!", crashed_snapshot(), 3.0);
    REQUIRE(r.outcome);
    CHECK(r.error.empty());
    CHECK(r.outcome->action == DecisionAction::Change);
    CHECK(r.outcome->instruction == "Reverse the car to get back on the racing line.");
    CHECK(r.hints_used == std::vector<int>{1, 2, 3, 8, 9, 10});
    CHECK(r.t == 3.0);
  }

  TEST_CASE("continue never touches the parameters") {
    const auto gw = scripted({}, "a) Continue behavior");
    DecisionEngine engine(gw, nullptr);
    const MpcAdapter adapter(gw, nullptr, BaseMemory::bundled(kData));
    ParamStore store;
    const std::string before = store.snapshot().hash();
    for (int i = 0; i < 100; ++i) {
      const DecisionRecord r = engine.decide("Drive normally!", snapshot_1b(), 2.0 * i);
      REQUIRE(r.outcome);
      CHECK(r.outcome->action == DecisionAction::Continue);
      if (r.outcome->action == DecisionAction::Change) adapter.adapt(r.outcome->instruction, store, r.t);
    }
    CHECK(store.snapshot().hash() == before);
    CHECK(store.journal().empty());
  }

  TEST_CASE("gateway and parse failures become logged no-ops") {
    LlmGateway failing(std::make_shared<FailingBackend>());
    DecisionEngine engine(failing, nullptr);
    DecisionRecord r;
    CHECK_NOTHROW(r = engine.decide("Drive normally!", snapshot_1b()));
    CHECK_FALSE(r.outcome);
    CHECK(r.error.find("connection refused") != std::string::npos);

    const auto gw = scripted({}, "I am not sure.");
    const DecisionRecord p = DecisionEngine(gw, nullptr).decide("Drive normally!", snapshot_1b());
    CHECK_FALSE(p.outcome);
    CHECK(p.response == "I am not sure.");
    CHECK_FALSE(p.error.empty());
  }

  TEST_CASE("decide needs a full window of history") {
    auto track = std::make_shared<TrackSpec>(load_track(kData / "tracks" / "oval.csv"));
    VehicleState x0;
    x0.v = 1.0;
    Simulator sim(track, x0);
    const auto gw = scripted({}, "a) Continue behavior");
    DecisionEngine engine(gw, nullptr);
    CHECK_THROWS_AS(engine.decide("Drive normally!", sim), InsufficientHistoryError);
    for (int i = 0; i < 120; ++i) sim.tick({});
    const DecisionRecord r = engine.decide("Drive normally!", sim);
    REQUIRE(r.outcome);
    CHECK(r.snapshot.samples.size() == 5);
    CHECK(r.t == doctest::Approx(sim.state().t));
  }

  TEST_CASE("decision log line") {
    const auto gw = scripted({}, response("3c"));
    const DecisionRecord r = DecisionEngine(gw, nullptr).decide("Drive normally!", crashed_snapshot(), 1.5);
    const auto j = nlohmann::ordered_json::parse(decision_log_line(r));
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"t", "human_prompt", "snapshot", "hints_used", "response", "outcome",
                                           "error"});
    CHECK(j["outcome"]["action"] == "Change");
    CHECK(j["snapshot"]["samples"].size() == 5);
    CHECK(j["snapshot"]["crashed"] == true);
  }
}
