#include "langdrive/llm.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

namespace langdrive {

using nlohmann::json;

void ChatRequest::validate() const {
  if (max_tokens < 1) throw std::invalid_argument("ChatRequest: max_tokens must be >= 1");
  if (user_text.empty()) throw std::invalid_argument("ChatRequest: empty user_text");
}

TransportError::TransportError(std::string backend, const std::string& what)
    : std::runtime_error(backend + ": " + what), backend_(std::move(backend)) {}

std::size_t count_whitespace_tokens(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

std::string request_hash(const ChatRequest& request) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  mix(request.system_text);
  mix("\x1f");
  mix(request.user_text);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ScriptedBackend::ScriptedBackend(std::vector<ScriptedRule> rules, std::string default_response,
                                 std::optional<double> synthetic_latency)
    : default_response_(std::move(default_response)), latency_(synthetic_latency) {
  for (auto& r : rules) {
    Compiled c{r, std::nullopt};
    if (r.regex) c.pattern.emplace(r.match, std::regex::ECMAScript | std::regex::icase);
    rules_.push_back(std::move(c));
  }
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scripted rules " + path.string());
  const json j = json::parse(in);
  std::vector<ScriptedRule> rules;
  for (const auto& r : j.value("rules", json::array()))
    rules.push_back({r.at("match").get<std::string>(), r.value("regex", false),
                     r.at("response").get<std::string>()});
  std::optional<double> latency;
  if (j.contains("latency")) latency = j["latency"].get<double>();
  return ScriptedBackend(std::move(rules), j.at("default").get<std::string>(), latency);
}

Completion ScriptedBackend::complete(const ChatRequest& request) {
  request.validate();
  Completion c;
  c.text = default_response_;
  for (const auto& r : rules_) {
    const bool hit = r.pattern ? std::regex_search(request.user_text, *r.pattern)
                               : request.user_text.find(r.rule.match) != std::string::npos;
    if (hit) {
      c.text = r.rule.response;
      break;
    }
  }
  c.stats.output_tokens = count_whitespace_tokens(c.text);
  c.stats.wall_latency = latency_ ? *latency_ : -1.0;
  return c;
}

std::vector<TranscriptTurn> load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open transcript " + path.string());
  std::vector<TranscriptTurn> turns;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    turns.push_back({j.value("request_hash", ""), j.value("prompt", ""),
                     j.at("response").get<std::string>()});
  }
  return turns;
}

void append_transcript(const std::filesystem::path& path, const TranscriptTurn& turn) {
  std::ofstream out(path, std::ios::app);
  json j = json::object();
  j["request_hash"] = turn.request_hash;
  j["prompt"] = turn.prompt;
  j["response"] = turn.response;
  out << j.dump() << '\n';
}

ReplayBackend::ReplayBackend(std::vector<TranscriptTurn> turns) : turns_(std::move(turns)) {}

ReplayBackend ReplayBackend::from_file(const std::filesystem::path& path) {
  return ReplayBackend(load_transcript(path));
}

std::size_t ReplayBackend::consumed() const {
  std::lock_guard lock(mutex_);
  return next_;
}

Completion ReplayBackend::complete(const ChatRequest& request) {
  request.validate();
  std::lock_guard lock(mutex_);
  if (next_ >= turns_.size())
    throw ReplayError("replay exhausted: no recorded turn " + std::to_string(next_ + 1) + " of " +
                      std::to_string(turns_.size()));
  const TranscriptTurn& turn = turns_[next_];
  const bool ok = turn.request_hash.empty()
                      ? request.user_text.compare(0, turn.prompt.size(), turn.prompt) == 0
                      : turn.request_hash == request_hash(request);
  if (!ok)
    throw ReplayError("replay diverged at turn " + std::to_string(next_ + 1) + ": expected prompt \"" +
                      turn.prompt.substr(0, 60) + "\"");
  ++next_;
  Completion c;
  c.text = turn.response;
  c.stats.output_tokens = count_whitespace_tokens(c.text);
  c.stats.wall_latency = -1.0;
  return c;
}

void RemoteConfig::apply_environment() {
  if (const char* v = std::getenv("LANGDRIVE_LLM_KEY")) api_key = v;
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.url, m, re))
    throw std::invalid_argument("remote backend: bad url " + config_.url);
  scheme_host_port_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : "/v1/chat/completions";
  if (!(config_.timeout_s > 0.0)) throw std::invalid_argument("remote backend: timeout must be positive");
}

Completion RemoteBackend::complete(const ChatRequest& request) {
  request.validate();
  json body = {{"model", config_.model},
               {"max_tokens", request.max_tokens},
               {"temperature", request.temperature},
               {"messages", json::array()}};
  if (!request.system_text.empty())
    body["messages"].push_back({{"role", "system"}, {"content", request.system_text}});
  body["messages"].push_back({{"role", "user"}, {"content", request.user_text}});
  if (!request.stop.empty()) body["stop"] = request.stop;

  httplib::Client client(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const std::string payload = body.dump();
  httplib::Result res;
  for (int attempt = 0; attempt < 2; ++attempt) {
    res = client.Post(path_, headers, payload, "application/json");
    if (res) break;
  }
  if (!res) throw TransportError(tag(), "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw TransportError(tag(), "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));

  Completion c;
  try {
    const json j = json::parse(res->body);
    c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage") && j["usage"].contains("completion_tokens"))
      c.stats.output_tokens = j["usage"]["completion_tokens"].get<std::size_t>();
    else
      c.stats.output_tokens = count_whitespace_tokens(c.text);
  } catch (const json::exception& e) {
    throw TransportError(tag(), std::string("malformed response: ") + e.what());
  }
  c.stats.wall_latency = -1.0;
  return c;
}

LlmGateway::LlmGateway(std::shared_ptr<LlmBackend> backend) : backend_(std::move(backend)) {
  if (!backend_) throw std::invalid_argument("LlmGateway: null backend");
}

Completion LlmGateway::complete(const ChatRequest& request) const {
  const auto t0 = std::chrono::steady_clock::now();
  Completion c = backend_->complete(request);
  if (c.stats.wall_latency < 0.0)
    c.stats.wall_latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.stats.tokens_per_second =
      c.stats.wall_latency > 0.0 ? static_cast<double>(c.stats.output_tokens) / c.stats.wall_latency : 0.0;
  return c;
}

StatsSummary stats_summary(const std::vector<GenerationStats>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("stats_summary: need at least 2 runs");
  StatsSummary s;
  s.runs = runs.size();
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    s.mean_latency += r.wall_latency;
    s.mean_tokens_per_second += r.tokens_per_second;
  }
  s.mean_latency /= n;
  s.mean_tokens_per_second /= n;
  double ss = 0.0;
  for (const auto& r : runs) ss += (r.wall_latency - s.mean_latency) * (r.wall_latency - s.mean_latency);
  s.std_latency = std::sqrt(ss / n);
  return s;
}

}  // namespace langdrive
