#include "langdrive/decision.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace langdrive {

std::string to_string(DecisionAction action) {
  return action == DecisionAction::Continue ? "Continue" : "Change";
}

namespace {

template <typename F>
std::string joined(const StateSnapshot& snap, F field) {
  std::string out;
  for (std::size_t i = 0; i < snap.samples.size(); ++i) {
    if (i) out += ", ";
    out += format_number(field(snap.samples[i]));
  }
  return out;
}

std::string format_duration(double d) {
  if (d == std::floor(d)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", d);
    return buf;
  }
  return format_number(d);
}

}  // namespace

std::string build_decision_prompt(const std::string& human_prompt, const StateSnapshot& snapshot,
                                  const std::vector<MemoryEntry>& hints) {
  std::ostringstream p;
  p << "The human wants to: " << as_sentence(human_prompt) << "\n";
  p << "The data has been sampled for " << format_duration(snapshot.duration) << " seconds in "
    << snapshot.samples.size() << " samples.\n";
  p << "- s-coordinate: " << joined(snapshot, [](auto& s) { return s.s; }) << "\n";
  p << "- d-coordinate: " << joined(snapshot, [](auto& s) { return s.d; }) << "\n";
  p << "- s-speed: " << joined(snapshot, [](auto& s) { return s.s_speed; }) << "\n";
  p << "- d-speed: " << joined(snapshot, [](auto& s) { return s.d_speed; }) << "\n";
  p << "- distance to left wall: " << joined(snapshot, [](auto& s) { return s.dist_left; }) << "\n";
  p << "- distance to right wall: " << joined(snapshot, [](auto& s) { return s.dist_right; }) << "\n";
  p << "- crashed: " << (snapshot.crashed ? "True" : "False") << "\n";
  if (!hints.empty()) {
    p << "Here are some guides to help you reason:\n";
    for (std::size_t i = 0; i < hints.size(); ++i) {
      if (i) p << "\n";
      p << hints[i].render() << "\n";
    }
  }
  p << "Check if the car is doing what the human wants. "
       "Choose one of the following actions to command the car:\n";
  p << "- a) Continue behavior\n";
  p << "- b) Change behavior: <instruction>\n";
  return p.str();
}

namespace {

struct Marker {
  std::size_t pos;
  std::size_t end;
  DecisionAction action;
};

std::vector<Marker> find_markers(const std::string& lower) {
  std::vector<Marker> out;
  const std::pair<const char*, DecisionAction> words[] = {
      {"continue behavior", DecisionAction::Continue},
      {"continue behaviour", DecisionAction::Continue},
      {"change behavior", DecisionAction::Change},
      {"change behaviour", DecisionAction::Change}};
  for (const auto& [w, a] : words) {
    const std::string word = w;
    for (auto p = lower.find(word); p != std::string::npos; p = lower.find(word, p + 1))
      out.push_back({p, p + word.size(), a});
  }
  std::sort(out.begin(), out.end(), [](const Marker& x, const Marker& y) { return x.pos < y.pos; });
  return out;
}

std::string clean_fragment(std::string_view raw) {
  std::string s = strip_markup(raw);
  while (!s.empty() && (s.front() == ':' || s.front() == ' ')) s.erase(s.begin());
  return trim(s);
}

// First non-empty paragraph at or after `from`, markup removed, leading ':' dropped.
std::string paragraph_after(const std::string& text, std::size_t from) {
  std::size_t start = from;
  while (start < text.size()) {
    std::size_t end = start;
    while (end < text.size()) {
      const std::size_t nl = text.find('\n', end);
      if (nl == std::string::npos) {
        end = text.size();
        break;
      }
      const std::size_t next = text.find('\n', nl + 1);
      const std::string_view between(text.data() + nl + 1,
                                     (next == std::string::npos ? text.size() : next) - nl - 1);
      if (between.find_first_not_of(" \t\r") == std::string_view::npos) {
        end = nl;
        break;
      }
      end = nl + 1;
    }
    std::string para = clean_fragment(std::string_view(text).substr(start, end - start));
    if (!para.empty()) return para;
    start = end + 1;
  }
  return {};
}

}  // namespace

DecisionOutcome parse_decision(const std::string& response) {
  const std::string lower = to_lower(response);
  const std::vector<Marker> markers = find_markers(lower);
  if (markers.empty()) throw ParseError("no action marker in decision response", response);

  const Marker* chosen = &markers.back();
  if (const auto label = lower.rfind("action:"); label != std::string::npos) {
    for (const auto& m : markers) {
      if (m.pos > label) {
        chosen = &m;
        break;
      }
    }
  }

  DecisionOutcome out;
  out.action = chosen->action;
  out.rationale = response;
  if (out.action == DecisionAction::Continue) return out;

  // Candidate 1: after the change marker, up to any later "Instruction:" label.
  // Candidate 2: after the last such label. The later non-empty one wins.
  const std::string label_word = "instruction:";
  const auto label = lower.rfind(label_word);
  const bool label_after = label != std::string::npos && label >= chosen->end;
  std::string best =
      paragraph_after(label_after ? response.substr(0, label) : response, chosen->end);
  if (label != std::string::npos && (label_after || best.empty())) {
    const std::string text = paragraph_after(response, label + label_word.size());
    if (!text.empty()) best = text;
  }
  if (best.empty()) throw ParseError("change behavior without an instruction", response);
  out.instruction = best;
  return out;
}

std::string decision_log_line(const DecisionRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["human_prompt"] = r.human_prompt;
  nlohmann::ordered_json snap;
  snap["duration"] = r.snapshot.duration;
  snap["crashed"] = r.snapshot.crashed;
  snap["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : r.snapshot.samples)
    snap["samples"].push_back({{"s", s.s}, {"d", s.d}, {"s_speed", s.s_speed}, {"d_speed", s.d_speed},
                               {"dist_left", s.dist_left}, {"dist_right", s.dist_right}});
  j["snapshot"] = snap;
  j["hints_used"] = r.hints_used;
  j["response"] = r.response;
  if (r.outcome) {
    j["outcome"] = {{"action", to_string(r.outcome->action)}, {"instruction", r.outcome->instruction}};
  } else {
    j["outcome"] = nullptr;
  }
  j["error"] = r.error;
  return j.dump();
}

DecisionEngine::DecisionEngine(const LlmGateway& gateway, const RagStore* rag, DecisionConfig config)
    : gateway_(gateway), rag_(rag), config_(config) {}

std::vector<MemoryEntry> DecisionEngine::hints_for(const std::string& human_prompt) const {
  std::vector<MemoryEntry> hints;
  if (!config_.use_rag || !rag_ || rag_->entries(MemoryKind::decision_hint).empty()) return hints;
  const auto& all = rag_->entries(MemoryKind::decision_hint);
  if (static_cast<int>(all.size()) <= config_.hint_k) return all;  // everything fits: keep corpus order
  for (auto& s : rag_->retrieve(human_prompt, MemoryKind::decision_hint, config_.hint_k))
    hints.push_back(s.entry);
  return hints;
}

std::string DecisionEngine::prompt_for(const std::string& human_prompt,
                                       const StateSnapshot& snapshot) const {
  return build_decision_prompt(human_prompt, snapshot, hints_for(human_prompt));
}

DecisionRecord DecisionEngine::decide(const std::string& human_prompt, const StateSnapshot& snapshot,
                                      double t) const {
  DecisionRecord r;
  r.t = t;
  r.human_prompt = human_prompt;
  r.snapshot = snapshot;
  const auto hints = hints_for(human_prompt);
  for (const auto& h : hints) r.hints_used.push_back(h.id);
  r.prompt = build_decision_prompt(human_prompt, snapshot, hints);
  ChatRequest req;
  req.user_text = r.prompt;
  req.max_tokens = config_.max_tokens;
  req.temperature = config_.temperature;
  req.backend = gateway_.tag();
  try {
    const Completion c = gateway_.complete(req);
    r.response = c.text;
    r.stats = c.stats;
    r.outcome = parse_decision(c.text);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

DecisionRecord DecisionEngine::decide(const std::string& human_prompt, const Simulator& sim) const {
  return decide(human_prompt, sim.sample_window(config_.window, config_.samples), sim.state().t);
}

}  // namespace langdrive
