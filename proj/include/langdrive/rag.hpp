#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace langdrive {

enum class MemoryKind { decision_hint, mpc_memory };

std::string to_string(MemoryKind kind);

struct MemoryEntry {
  int id = 0;
  MemoryKind kind = MemoryKind::decision_hint;
  std::string text;  ///< body without the "# Hint N:" header line

  /// The entry as it appears in a corpus file, header included.
  std::string render() const;
};

/// Splits a corpus in the "# Hint N:" / "# Memory Entry N:" format.
/// Throws std::runtime_error on text before the first header, empty bodies
/// or duplicate ids.
std::vector<MemoryEntry> parse_memory_corpus(std::string_view content, MemoryKind kind);

/// Lowercased alphanumeric runs; everything else separates terms.
std::vector<std::string> tokenize_terms(std::string_view text);

/// Cosine similarity of term-frequency vectors, in [0, 1].
double tf_cosine(std::string_view a, std::string_view b);

struct ScoredEntry {
  MemoryEntry entry;
  double score = 0.0;
};

/// Immutable after loading; retrieval is read-only and thread-safe.
class RagStore {
 public:
  void add(const MemoryEntry& entry);
  void load(const std::filesystem::path& path, MemoryKind kind);

  const std::vector<MemoryEntry>& entries(MemoryKind kind) const;

  /// Top min(k, count) entries by tf_cosine(query, text); ties broken by id.
  /// Throws std::invalid_argument for k < 1, std::runtime_error if the kind is empty.
  std::vector<ScoredEntry> retrieve(std::string_view query, MemoryKind kind, int k) const;

  /// The bundled corpora from `data_dir`/memory.
  static RagStore bundled(const std::filesystem::path& data_dir);

 private:
  std::map<MemoryKind, std::vector<MemoryEntry>> entries_;
};

}  // namespace langdrive
