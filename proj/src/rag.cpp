#include "langdrive/rag.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "langdrive/text.hpp"

namespace langdrive {

std::string to_string(MemoryKind kind) {
  return kind == MemoryKind::decision_hint ? "decision_hint" : "mpc_memory";
}

std::string MemoryEntry::render() const {
  const char* label = kind == MemoryKind::decision_hint ? "# Hint " : "# Memory Entry ";
  return label + std::to_string(id) + ":\n" + text;
}

std::vector<MemoryEntry> parse_memory_corpus(std::string_view content, MemoryKind kind) {
  const std::regex header(kind == MemoryKind::decision_hint ? R"(^# Hint (\d+):\s*$)"
                                                            : R"(^# Memory Entry (\d+):\s*$)");
  std::vector<MemoryEntry> out;
  std::set<int> ids;
  std::string body;
  bool open = false;
  auto close = [&] {
    if (!open) return;
    out.back().text = trim(body);
    if (out.back().text.empty())
      throw std::runtime_error("memory entry " + std::to_string(out.back().id) + " is empty");
    body.clear();
  };

  std::istringstream in{std::string(content)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (std::regex_match(line, m, header)) {
      close();
      const int id = std::stoi(m[1]);
      if (!ids.insert(id).second) throw std::runtime_error("duplicate memory id " + std::to_string(id));
      out.push_back({id, kind, {}});
      open = true;
      continue;
    }
    if (!open) {
      if (!trim(line).empty()) throw std::runtime_error("text before the first memory header: " + line);
      continue;
    }
    body += line;
    body += '\n';
  }
  close();
  return out;
}

std::vector<std::string> tokenize_terms(std::string_view text) {
  std::vector<std::string> terms;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

double tf_cosine(std::string_view a, std::string_view b) {
  std::unordered_map<std::string, double> ta, tb;
  for (auto& t : tokenize_terms(a)) ta[t] += 1.0;
  for (auto& t : tokenize_terms(b)) tb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, c] : ta) {
    na += c * c;
    if (auto it = tb.find(t); it != tb.end()) dot += c * it->second;
  }
  for (const auto& [t, c] : tb) nb += c * c;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

void RagStore::add(const MemoryEntry& entry) {
  if (trim(entry.text).empty()) throw std::invalid_argument("RagStore: empty memory text");
  auto& list = entries_[entry.kind];
  for (const auto& e : list)
    if (e.id == entry.id) throw std::invalid_argument("RagStore: duplicate id " + std::to_string(entry.id));
  list.push_back(entry);
}

void RagStore::load(const std::filesystem::path& path, MemoryKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open memory corpus " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& e : parse_memory_corpus(ss.str(), kind)) add(e);
}

const std::vector<MemoryEntry>& RagStore::entries(MemoryKind kind) const {
  static const std::vector<MemoryEntry> none;
  auto it = entries_.find(kind);
  return it == entries_.end() ? none : it->second;
}

std::vector<ScoredEntry> RagStore::retrieve(std::string_view query, MemoryKind kind, int k) const {
  if (k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
  const auto& list = entries(kind);
  if (list.empty()) throw std::runtime_error("retrieve: no " + to_string(kind) + " entries loaded");
  std::vector<ScoredEntry> scored;
  for (const auto& e : list) scored.push_back({e, tf_cosine(query, e.text)});
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry.id < b.entry.id;
  });
  scored.resize(std::min(scored.size(), static_cast<std::size_t>(k)));
  return scored;
}

RagStore RagStore::bundled(const std::filesystem::path& data_dir) {
  RagStore s;
  s.load(data_dir / "memory" / "decision_hints.txt", MemoryKind::decision_hint);
  s.load(data_dir / "memory" / "mpc_memories.txt", MemoryKind::mpc_memory);
  return s;
}

}  // namespace langdrive
