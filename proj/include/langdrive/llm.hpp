#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

namespace langdrive {

struct ChatRequest {
  std::string system_text;
  std::string user_text;
  int max_tokens = 512;
  double temperature = 0.0;
  std::vector<std::string> stop;
  std::string backend;  ///< tag of the backend the caller expects, informational

  /// Throws std::invalid_argument unless max_tokens >= 1 and user_text is non-empty.
  void validate() const;
};

struct GenerationStats {
  std::size_t output_tokens = 0;
  double wall_latency = 0.0;  ///< seconds
  double tokens_per_second = 0.0;
};

struct Completion {
  std::string text;
  GenerationStats stats;
};

/// Transport failure (unreachable endpoint, timeout, bad HTTP status or body).
class TransportError : public std::runtime_error {
 public:
  TransportError(std::string backend, const std::string& what);
  const std::string& backend() const { return backend_; }

 private:
  std::string backend_;
};

/// Replay transcript exhausted or diverging from the live request sequence.
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Whitespace-delimited token count, used for stats on the offline backends.
std::size_t count_whitespace_tokens(const std::string& text);

/// FNV-1a 64 over system_text, a unit separator and user_text, hex encoded.
std::string request_hash(const ChatRequest& request);

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  virtual std::string tag() const = 0;
  /// Text plus stats; wall_latency < 0 means "not measured", the gateway times the call.
  virtual Completion complete(const ChatRequest& request) = 0;
};

struct ScriptedRule {
  std::string match;       ///< substring of the prompt, or an ECMAScript regex if `regex`
  bool regex = false;
  std::string response;
};

/// Rule-based stand-in: the first rule matching the user text wins, otherwise
/// the default response. Pure, so safe for concurrent calls.
class ScriptedBackend : public LlmBackend {
 public:
  ScriptedBackend(std::vector<ScriptedRule> rules, std::string default_response,
                  std::optional<double> synthetic_latency = std::nullopt);

  /// {"default": "...", "latency": 0.1, "rules": [{"match", "regex", "response"}]}
  static ScriptedBackend from_file(const std::filesystem::path& path);

  std::string tag() const override { return "scripted"; }
  Completion complete(const ChatRequest& request) override;

 private:
  struct Compiled {
    ScriptedRule rule;
    std::optional<std::regex> pattern;
  };
  std::vector<Compiled> rules_;
  std::string default_response_;
  std::optional<double> latency_;
};

struct TranscriptTurn {
  std::string request_hash;  ///< empty: match on the prompt prefix instead
  std::string prompt;        ///< recorded prompt; with no hash, the live prompt must start with it
  std::string response;
};

std::vector<TranscriptTurn> load_transcript(const std::filesystem::path& path);
void append_transcript(const std::filesystem::path& path, const TranscriptTurn& turn);

/// Plays back recorded turns strictly in order.
class ReplayBackend : public LlmBackend {
 public:
  explicit ReplayBackend(std::vector<TranscriptTurn> turns);
  static ReplayBackend from_file(const std::filesystem::path& path);

  std::string tag() const override { return "replay"; }
  Completion complete(const ChatRequest& request) override;
  std::size_t consumed() const;
  std::size_t size() const { return turns_.size(); }

 private:
  std::vector<TranscriptTurn> turns_;
  mutable std::mutex mutex_;
  std::size_t next_ = 0;
};

struct RemoteConfig {
  std::string url = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "local";
  std::string api_key;
  double timeout_s = 30.0;

  /// LANGDRIVE_LLM_KEY overrides api_key. Endpoint and model come from the config only.
  void apply_environment();
};

/// Chat-completions client: POST {model, messages, max_tokens, temperature[, stop]},
/// reads choices[0].message.content. One retry after a transport failure.
class RemoteBackend : public LlmBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);

  std::string tag() const override { return "remote"; }
  Completion complete(const ChatRequest& request) override;
  const RemoteConfig& config() const { return config_; }

 private:
  RemoteConfig config_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Uniform entry point; times each call and fills tokens/s.
class LlmGateway {
 public:
  explicit LlmGateway(std::shared_ptr<LlmBackend> backend);

  Completion complete(const ChatRequest& request) const;
  std::string tag() const { return backend_->tag(); }
  LlmBackend& backend() const { return *backend_; }

 private:
  std::shared_ptr<LlmBackend> backend_;
};

struct StatsSummary {
  std::size_t runs = 0;
  double mean_tokens_per_second = 0.0;
  double mean_latency = 0.0;  ///< mu_t
  double std_latency = 0.0;   ///< sigma_t, population
};

/// Throws std::invalid_argument for fewer than two runs.
StatsSummary stats_summary(const std::vector<GenerationStats>& runs);

}  // namespace langdrive
