#include <filesystem>

#include "doctest.h"
#include "langdrive/rag.hpp"

using namespace langdrive;

namespace {
const std::filesystem::path kData = LANGDRIVE_DATA_DIR;
}

TEST_SUITE("rag") {
  TEST_CASE("bundled corpora parse with their printed ids") {
    const RagStore store = RagStore::bundled(kData);
    std::vector<int> hint_ids, mem_ids;
    for (const auto& e : store.entries(MemoryKind::decision_hint)) hint_ids.push_back(e.id);
    for (const auto& e : store.entries(MemoryKind::mpc_memory)) mem_ids.push_back(e.id);
    CHECK(hint_ids == std::vector<int>{1, 2, 3, 8, 9, 10});
    CHECK(mem_ids == std::vector<int>{0, 1, 10});
    CHECK(store.entries(MemoryKind::decision_hint)[0].text == "If the d-speed is above than 0.5m/s is high.");
    CHECK(store.entries(MemoryKind::decision_hint)[0].render() ==
          "# Hint 1:\nIf the d-speed is above than 0.5m/s is high.");
  }

  TEST_CASE("corpus format errors") {
    CHECK_THROWS_AS(parse_memory_corpus("preamble\n# Hint 1:\nx\n", MemoryKind::decision_hint),
                    std::runtime_error);
    CHECK_THROWS_AS(parse_memory_corpus("# Hint 1:\nx\n# Hint 1:\ny\n", MemoryKind::decision_hint),
                    std::runtime_error);
    CHECK_THROWS_AS(parse_memory_corpus("# Hint 1:\n\n# Hint 2:\ny\n", MemoryKind::decision_hint),
                    std::runtime_error);
    CHECK(parse_memory_corpus("", MemoryKind::mpc_memory).empty());
  }

  TEST_CASE("terms and cosine") {
    CHECK(tokenize_terms("Reverse the car at -1 m/s!") ==
          std::vector<std::string>{"reverse", "the", "car", "at", "1", "m", "s"});
    CHECK(tf_cosine("alpha beta", "gamma delta") == 0.0);
    CHECK(tf_cosine("a b b", "b a b") == doctest::Approx(1.0));
    CHECK(tf_cosine("a b", "a c") == doctest::Approx(tf_cosine("a c", "a b")));
    CHECK(tf_cosine("", "a") == 0.0);
  }

  // Scores frozen from tests/oracles/tf_cosine_oracle.py over the bundled corpora.
  TEST_CASE("ranking matches the cosine oracle") {
    const RagStore store = RagStore::bundled(kData);
    const auto r = store.retrieve("reverse the car at -1 m/s", MemoryKind::mpc_memory, 3);
    REQUIRE(r.size() == 3);
    CHECK(r[0].entry.id == 0);
    CHECK(r[0].score == doctest::Approx(0.074848118857).epsilon(1e-9));
    CHECK(r[1].entry.id == 10);
    CHECK(r[1].score == doctest::Approx(0.033538923545).epsilon(1e-9));
    CHECK(r[2].entry.id == 1);
    CHECK(r[2].score == 0.0);

    const auto h = store.retrieve("the car is oscillating around the racing line",
                                  MemoryKind::decision_hint, 100);
    std::vector<int> ids;
    for (const auto& s : h) ids.push_back(s.entry.id);
    CHECK(ids == std::vector<int>{9, 3, 2, 8, 1, 10});
    CHECK(h[0].score == doctest::Approx(0.461566331377).epsilon(1e-9));
    CHECK(h[4].score == doctest::Approx(0.338061701891).epsilon(1e-9));
  }

  TEST_CASE("ties fall back to id order") {
    const RagStore store = RagStore::bundled(kData);
    const auto h = store.retrieve("Drive normally!", MemoryKind::decision_hint, 10);
    std::vector<int> ids;
    for (const auto& s : h) ids.push_back(s.entry.id);
    CHECK(ids == std::vector<int>{1, 2, 3, 8, 9, 10});
  }

  TEST_CASE("self query ranks first and k is capped") {
    const RagStore store = RagStore::bundled(kData);
    for (const auto& e : store.entries(MemoryKind::decision_hint)) {
      const auto r = store.retrieve(e.text, MemoryKind::decision_hint, 1);
      REQUIRE(r.size() == 1);
      CHECK(r[0].entry.id == e.id);
      CHECK(r[0].score == doctest::Approx(1.0));
    }
    RagStore ten;
    for (int i = 0; i < 10; ++i) ten.add({i, MemoryKind::mpc_memory, "entry number " + std::to_string(i)});
    CHECK(ten.retrieve("entry", MemoryKind::mpc_memory, 100).size() == 10);
  }

  TEST_CASE("retrieval errors") {
    RagStore empty;
    CHECK_THROWS_AS(empty.retrieve("x", MemoryKind::decision_hint, 3), std::runtime_error);
    const RagStore store = RagStore::bundled(kData);
    CHECK_THROWS_AS(store.retrieve("x", MemoryKind::decision_hint, 0), std::invalid_argument);
    RagStore dup;
    dup.add({1, MemoryKind::decision_hint, "a"});
    CHECK_THROWS(dup.add({1, MemoryKind::decision_hint, "b"}));
    CHECK_THROWS(dup.add({2, MemoryKind::decision_hint, "  "}));
  }

  TEST_CASE("retrieval is deterministic") {
    const RagStore store = RagStore::bundled(kData);
    const auto a = store.retrieve("close to the wall at high d-speed", MemoryKind::decision_hint, 4);
    const auto b = store.retrieve("close to the wall at high d-speed", MemoryKind::decision_hint, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].entry.id == b[i].entry.id);
      CHECK(a[i].score == b[i].score);
      CHECK(a[i].score >= 0.0);
      CHECK(a[i].score <= 1.0 + 1e-12);
    }
  }
}
