#include <atomic>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "langdrive/params.hpp"

using namespace langdrive;

TEST_SUITE("params") {
  TEST_CASE("standard schema table") {
    const ParamSchema& s = ParamSchema::standard();
    const std::vector<std::string> names{"qv",     "qn",    "qalpha", "qac",   "qddelta",
                                         "alat_max", "a_min", "a_max", "v_min", "v_max",
                                         "track_safety_margin"};
    REQUIRE(s.entries().size() == names.size());
    for (std::size_t i = 0; i < names.size(); ++i) {
      const ParamSpec& e = s.entries()[i];
      CHECK(e.name == names[i]);
      CHECK(e.min <= e.max);
      CHECK(e.default_value >= e.min);
      CHECK(e.default_value <= e.max);
      CHECK_FALSE(e.description.empty());
    }
    CHECK(s.find("qn")->max == 100.0);
    CHECK(s.find("v_max")->min == -1.0);
    CHECK(s.find("qv")->default_value == 1.0);
    CHECK(s.find("qv")->max == 2.0);
    CHECK(s.find("foo") == nullptr);
    CHECK(s.clamp("v_max", 15.0) == 10.0);
    CHECK_THROWS_AS(ParamSchema({{"a", 1.0, 0.0, 0.5, ""}}), std::invalid_argument);
    CHECK_THROWS_AS(ParamSchema({{"a", 0.0, 1.0, 0.5, ""}, {"a", 0.0, 1.0, 0.5, ""}}),
                    std::invalid_argument);
  }

  TEST_CASE("defaults are valid and match the struct") {
    const MpcParams d = MpcParams::defaults();
    CHECK(d == MpcParams{});
    CHECK(d.valid());
    CHECK(d.get("track_safety_margin") == 0.45);
    CHECK_THROWS_AS(d.get("nope"), std::out_of_range);
    MpcParams bad = d;
    bad.v_min = 3.0;
    bad.v_max = 2.0;
    std::string why;
    CHECK_FALSE(bad.valid(ParamSchema::standard(), &why));
    CHECK(why == "v_min > v_max");
    bad = d;
    bad.qn = 101.0;
    CHECK_FALSE(bad.valid());
    bad = d;
    bad.qac = std::nan("");
    CHECK_FALSE(bad.valid());
  }

  TEST_CASE("param map keeps order and replaces duplicates") {
    ParamMap m;
    param_map_set(m, "qn", 1.0);
    param_map_set(m, "qv", 2.0);
    param_map_set(m, "qn", 3.0);
    REQUIRE(m.size() == 2);
    CHECK(m[0].first == "qn");
    CHECK(m[0].second == 3.0);
    CHECK(*param_map_get(m, "qv") == 2.0);
    CHECK(param_map_get(m, "x") == nullptr);
  }

  TEST_CASE("empty update leaves the parameters unchanged") {
    ParamStore store;
    const MpcParams before = store.snapshot();
    store.apply({}, "cli", 0.0);
    CHECK(store.snapshot() == before);
    CHECK(store.journal().size() == 1);
  }

  TEST_CASE("pinched reverse speed band") {
    ParamStore store;
    store.apply({{"v_min", -1.0}, {"v_max", -1.0}}, "adapter", 1.5);
    const MpcParams p = store.snapshot();
    CHECK(p.v_min == -1.0);
    CHECK(p.v_max == -1.0);
    CHECK(store.version() == 1);
  }

  TEST_CASE("invalid merged set is refused without side effects") {
    ParamStore store;
    const MpcParams before = store.snapshot();
    CHECK_THROWS_AS(store.apply({{"v_min", 4.0}, {"v_max", 2.0}}, "ui", 0.0), std::invalid_argument);
    CHECK_THROWS_AS(store.apply({{"bogus", 1.0}}, "ui", 0.0), std::out_of_range);
    CHECK(store.snapshot() == before);
    CHECK(store.journal().empty());
    CHECK(store.version() == 0);
  }

  TEST_CASE("journal lines") {
    ParamStore store;
    std::ostringstream sink;
    store.set_journal_sink(&sink);
    store.apply({{"qn", 40.0}}, "adapter", 2.5, {"clamped qv"});
    const auto j = nlohmann::ordered_json::parse(sink.str());
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"t", "source", "update", "applied", "warnings"});
    CHECK(j["t"] == 2.5);
    CHECK(j["source"] == "adapter");
    CHECK(j["update"]["qn"] == 40.0);
    CHECK(j["applied"]["qn"] == 40.0);
    CHECK(j["applied"]["qv"] == 1.0);
    CHECK(j["applied"].size() == 11);
    CHECK(j["warnings"][0] == "clamped qv");
  }

  TEST_CASE("snapshots never observe a mixed set") {
    MpcParams a = MpcParams::defaults();
    MpcParams b = a;
    for (auto& [k, v] : b.to_map()) {
      const ParamSpec* e = ParamSchema::standard().find(k);
      b.set(k, e->min + 0.25 * (e->max - e->min));
    }
    b.v_min = -1.0;
    b.v_max = -1.0;
    REQUIRE(b.valid());
    ParamStore store(a);
    std::atomic<bool> done{false};
    std::atomic<long> mixed{0};
    std::atomic<long> reads{0};
    std::vector<std::thread> readers;
    for (int r = 0; r < 3; ++r) {
      readers.emplace_back([&] {
        while (!done.load()) {
          const MpcParams s = store.snapshot();
          if (!(s == a) && !(s == b)) ++mixed;
          ++reads;
        }
      });
    }
    for (int i = 0; i < 2000; ++i) store.apply((i % 2 ? a : b).to_map(), "ui", i * 0.01);
    done = true;
    for (auto& t : readers) t.join();
    CHECK(mixed.load() == 0);
    CHECK(reads.load() > 0);
    CHECK(store.journal().size() == 2000);
  }

  TEST_CASE("hash distinguishes parameter sets") {
    MpcParams a;
    MpcParams b;
    CHECK(a.hash() == b.hash());
    b.qn = 21.0;
    CHECK(a.hash() != b.hash());
    CHECK(a.hash().size() == 16);
  }
}
