#include "langdrive/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace langdrive {

namespace {

constexpr std::string_view kAssign = "new_mpc_params";

bool skippable(char c) { return c == ' ' || c == '\t' || c == '`' || c == '*' || c == '\r' || c == '\n'; }

// Position of '{' for an assignment starting at `pos`, or npos.
std::size_t open_brace_after(const std::string& text, std::size_t pos) {
  std::size_t i = pos + kAssign.size();
  while (i < text.size() && skippable(text[i])) ++i;
  if (i >= text.size() || text[i] != '=') return std::string::npos;
  ++i;
  while (i < text.size() && skippable(text[i])) ++i;
  if (i >= text.size() || text[i] != '{') return std::string::npos;
  return i;
}

std::string unquote_key(std::string_view raw) {
  std::string k = trim(strip_markup(raw));
  while (!k.empty() && (k.front() == '\'' || k.front() == '"')) k.erase(k.begin());
  while (!k.empty() && (k.back() == '\'' || k.back() == '"')) k.pop_back();
  return trim(k);
}

}  // namespace

ParsedParams parse_params(const std::string& response) {
  std::size_t brace = std::string::npos;
  for (std::size_t pos = response.rfind(kAssign); pos != std::string::npos;
       pos = pos == 0 ? std::string::npos : response.rfind(kAssign, pos - 1)) {
    brace = open_brace_after(response, pos);
    if (brace != std::string::npos) break;
  }
  if (brace == std::string::npos) throw ParseError("no new_mpc_params assignment", response);

  int depth = 0;
  std::size_t close = std::string::npos;
  for (std::size_t i = brace; i < response.size(); ++i) {
    if (response[i] == '{') ++depth;
    if (response[i] == '}' && --depth == 0) {
      close = i;
      break;
    }
  }
  if (close == std::string::npos) throw ParseError("unbalanced braces in new_mpc_params", response);

  ParsedParams out;
  const std::string body = response.substr(brace + 1, close - brace - 1);
  std::size_t start = 0;
  while (start <= body.size()) {
    std::size_t comma = body.find(',', start);
    if (comma == std::string::npos) comma = body.size();
    const std::string item = body.substr(start, comma - start);
    start = comma + 1;
    if (trim(strip_markup(item)).empty()) continue;
    const std::size_t colon = item.find(':');
    if (colon == std::string::npos) {
      out.warnings.push_back("ignored entry without a value: " + trim(item));
      continue;
    }
    const std::string key = unquote_key(item.substr(0, colon));
    const std::string value = trim(strip_markup(item.substr(colon + 1)));
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (key.empty() || value.empty() || end != value.c_str() + value.size()) {
      out.warnings.push_back("ignored non-numeric value for " + (key.empty() ? "<empty key>" : key) +
                             ": " + value);
      continue;
    }
    param_map_set(out.values, key, v);
  }
  return out;
}

std::string render_params(const ParamMap& map) {
  std::string out = "new_mpc_params = {";
  for (std::size_t i = 0; i < map.size(); ++i) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", map[i].second);
    if (i) out += ", ";
    out += map[i].first + ": " + buf;
  }
  return out + "}";
}

ParamUpdate validate_and_clamp(const ParamMap& raw, const ParamSchema& schema, const MpcParams& current) {
  static const std::vector<std::pair<std::string, std::string>> aliases{
      {"boundary_inflation", "track_safety_margin"}, {"dv_min", "a_min"}, {"dv_max", "a_max"}};
  ParamUpdate u;
  u.raw = raw;
  for (const auto& [key, value] : raw) {
    if (key == "ddelta_min" || key == "ddelta_max") {
      u.warnings.push_back(key + " dropped: the steering-rate bound is a fixed hardware limit");
      u.rejected.push_back(key);
      continue;
    }
    std::string name = key;
    for (const auto& [from, to] : aliases) {
      if (key == from) {
        name = to;
        u.warnings.push_back(key + " read as " + to);
      }
    }
    const ParamSpec* spec = schema.find(name);
    if (!spec) {
      u.warnings.push_back("unknown parameter " + key);
      u.rejected.push_back(key);
      continue;
    }
    if (!std::isfinite(value)) {
      u.warnings.push_back(key + " is not finite");
      u.rejected.push_back(key);
      continue;
    }
    const double clamped = schema.clamp(name, value);
    if (clamped != value)
      u.warnings.push_back(name + " clamped from " + format_number(value) + " to " + format_number(clamped));
    param_map_set(u.accepted, name, clamped);
  }

  MpcParams merged = current;
  for (const auto& [k, v] : u.accepted) merged.set(k, v);
  if (merged.v_min > merged.v_max) {
    u.warnings.push_back("v_min " + format_number(merged.v_min) + " above v_max, set to " +
                         format_number(merged.v_max));
    param_map_set(u.accepted, "v_min", merged.v_max);
  }
  if (merged.a_min > merged.a_max) {
    u.warnings.push_back("a_min above a_max, set to a_max");
    param_map_set(u.accepted, "a_min", merged.a_max);
  }
  return u;
}

BaseMemory::BaseMemory(std::string text) : text_(std::move(text)) {
  if (trim(text_).empty()) throw std::invalid_argument("base memory is empty");
}

BaseMemory BaseMemory::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open base memory " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return BaseMemory(text);
}

BaseMemory BaseMemory::bundled(const std::filesystem::path& data_dir) {
  return load(data_dir / "memory" / "base_memory.txt");
}

std::vector<ParamSpec> BaseMemory::table() const {
  static const std::regex row(
      R"(^(\w+) (-?[0-9.]+), (-?[0-9.]+), (-?[0-9.]+) # (.*)$)");
  std::vector<ParamSpec> out;
  std::istringstream in(text_);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!std::regex_match(line, m, row)) continue;
    out.push_back({m[1], std::stod(m[2]), std::stod(m[3]), std::stod(m[4]), m[5]});
  }
  return out;
}

std::string BaseMemory::check_against(const ParamSchema& schema) const {
  const auto rows = table();
  for (const ParamSpec& e : schema.entries()) {
    const auto it = std::find_if(rows.begin(), rows.end(), [&](const ParamSpec& r) { return r.name == e.name; });
    if (it == rows.end()) return "missing row " + e.name;
    if (it->min != e.min || it->max != e.max || it->default_value != e.default_value)
      return "row " + e.name + " disagrees with the schema";
  }
  if (rows.size() != schema.entries().size()) return "table has rows outside the schema";
  return {};
}

std::string build_adapter_prompt(const std::string& instruction, const BaseMemory& base,
                                 const std::vector<MemoryEntry>& memories) {
  std::string p = "Adapt the tuneable parameters of the MPC so that the car achieves the following: " +
                  as_sentence(trim(instruction)) + "\n";
  p += "This is the MPC formulation:\n" + base.text() + "\n";
  if (!memories.empty()) {
    p += "Make use of these memories:\n";
    for (std::size_t i = 0; i < memories.size(); ++i) {
      if (i) p += "\n";
      p += memories[i].render() + "\n";
    }
  }
  p += "Return format:\n";
  p += "new_mpc_params = {param1: new_value1, param2: new_value2, ...}\n";
  return p;
}

std::string adapt_log_line(const AdaptRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["instruction"] = r.instruction;
  j["memories_used"] = r.memories_used;
  j["response"] = r.response;
  if (r.update) {
    nlohmann::ordered_json raw = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.update->raw) raw[k] = v;
    nlohmann::ordered_json acc = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.update->accepted) acc[k] = v;
    j["raw"] = raw;
    j["accepted"] = acc;
    j["warnings"] = r.update->warnings;
    j["rejected"] = r.update->rejected;
  }
  j["applied"] = r.applied;
  j["error"] = r.error;
  return j.dump();
}

MpcAdapter::MpcAdapter(const LlmGateway& gateway, const RagStore* rag, BaseMemory base,
                       const ParamSchema& schema, AdapterConfig config)
    : gateway_(gateway), rag_(rag), base_(std::move(base)), schema_(schema), config_(config) {
  if (config_.memory_k < 1) throw std::invalid_argument("adapter: memory_k must be >= 1");
}

std::vector<MemoryEntry> MpcAdapter::memories_for(const std::string& instruction) const {
  std::vector<MemoryEntry> out;
  if (!config_.use_rag || !rag_ || rag_->entries(MemoryKind::mpc_memory).empty()) return out;
  const auto& all = rag_->entries(MemoryKind::mpc_memory);
  if (static_cast<int>(all.size()) <= config_.memory_k) return all;  // everything fits: keep corpus order
  for (auto& s : rag_->retrieve(instruction, MemoryKind::mpc_memory, config_.memory_k))
    out.push_back(s.entry);
  return out;
}

std::string MpcAdapter::prompt_for(const std::string& instruction) const {
  return build_adapter_prompt(instruction, base_, memories_for(instruction));
}

AdaptRecord MpcAdapter::propose(const std::string& instruction, const MpcParams& current, double t) const {
  if (trim(instruction).empty()) throw std::invalid_argument("adapter: empty instruction");
  AdaptRecord r;
  r.t = t;
  r.instruction = instruction;
  const auto memories = memories_for(instruction);
  for (const auto& m : memories) r.memories_used.push_back(m.id);
  r.prompt = build_adapter_prompt(instruction, base_, memories);
  ChatRequest req;
  req.user_text = r.prompt;
  req.max_tokens = config_.max_tokens;
  req.temperature = config_.temperature;
  req.backend = gateway_.tag();
  try {
    const Completion c = gateway_.complete(req);
    r.response = c.text;
    r.stats = c.stats;
    ParsedParams parsed = parse_params(c.text);
    r.parse_warnings = parsed.warnings;
    ParamUpdate update = validate_and_clamp(parsed.values, schema_, current);
    update.warnings.insert(update.warnings.begin(), parsed.warnings.begin(), parsed.warnings.end());
    r.update = update;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

void MpcAdapter::commit(AdaptRecord& r, ParamStore& store) const {
  if (!r.update || !r.error.empty()) return;
  try {
    // The store may have moved since the proposal; the cross-field repair runs again.
    ParamUpdate now = validate_and_clamp(r.update->raw, schema_, store.snapshot());
    now.warnings.insert(now.warnings.begin(), r.parse_warnings.begin(), r.parse_warnings.end());
    r.update = now;
    store.apply(now.accepted, "adapter", r.t, now.warnings);
    r.applied = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
}

AdaptRecord MpcAdapter::adapt(const std::string& instruction, ParamStore& store, double t) const {
  AdaptRecord r = propose(instruction, store.snapshot(), t);
  commit(r, store);
  return r;
}

}  // namespace langdrive
