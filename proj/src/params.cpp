#include "langdrive/params.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace langdrive {

ParamSchema::ParamSchema(std::vector<ParamSpec> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const ParamSpec& e = entries_[i];
    if (!(e.min <= e.max)) throw std::invalid_argument("schema entry '" + e.name + "' has min > max");
    for (std::size_t j = 0; j < i; ++j) {
      if (entries_[j].name == e.name)
        throw std::invalid_argument("duplicate schema entry '" + e.name + "'");
    }
  }
}

const ParamSchema& ParamSchema::standard() {
  static const ParamSchema schema({
      {"qv", 0.0, 2.0, 1.0, "Velocity weight: minimizes speed tracking error"},
      {"qn", 0.0, 100.0, 20.0, "Lateral weight: minimizes deviation from the track"},
      {"qalpha", 0.0, 100.0, 7.0, "Heading weight: minimizes orientation error"},
      {"qac", 0.0, 1.0, 0.01, "Acceleration weight: penalizes high acceleration"},
      {"qddelta", 0.0, 100.0, 0.1, "Steering weight: penalizes fast steering changes"},
      {"alat_max", 0.0, 20.0, 10.0, "Max lateral acceleration: limits side force"},
      {"a_min", -20.0, 0.0, -5.0, "Min acceleration: lower acceleration bound"},
      {"a_max", 0.0, 20.0, 5.0, "Max acceleration: upper acceleration bound"},
      {"v_min", -2.0, 5.0, 1.0, "Min velocity: lower speed bound"},
      {"v_max", -1.0, 10.0, 5.0, "Max velocity: upper speed bound"},
      {"track_safety_margin", 0.0, 1.0, 0.45, "Safety margin: increases track boundary margin"},
  });
  return schema;
}

const ParamSpec* ParamSchema::find(std::string_view name) const {
  for (const ParamSpec& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

double ParamSchema::clamp(std::string_view name, double value) const {
  const ParamSpec* e = find(name);
  if (!e) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return std::clamp(value, e->min, e->max);
}

void param_map_set(ParamMap& map, std::string_view key, double value) {
  for (auto& [k, v] : map) {
    if (k == key) {
      v = value;
      return;
    }
  }
  map.emplace_back(std::string(key), value);
}

const double* param_map_get(const ParamMap& map, std::string_view key) {
  for (const auto& [k, v] : map) {
    if (k == key) return &v;
  }
  return nullptr;
}

namespace {

template <typename P>
auto field(P& p, std::string_view name) -> decltype(&p.qv) {
  if (name == "qv") return &p.qv;
  if (name == "qn") return &p.qn;
  if (name == "qalpha") return &p.qalpha;
  if (name == "qac") return &p.qac;
  if (name == "qddelta") return &p.qddelta;
  if (name == "alat_max") return &p.alat_max;
  if (name == "a_min") return &p.a_min;
  if (name == "a_max") return &p.a_max;
  if (name == "v_min") return &p.v_min;
  if (name == "v_max") return &p.v_max;
  if (name == "track_safety_margin") return &p.track_safety_margin;
  return nullptr;
}

}  // namespace

MpcParams MpcParams::defaults(const ParamSchema& schema) {
  MpcParams p;
  for (const ParamSpec& e : schema.entries()) {
    if (field(p, e.name)) p.set(e.name, e.default_value);
  }
  return p;
}

double MpcParams::get(std::string_view name) const {
  const double* f = field(*this, name);
  if (!f) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return *f;
}

void MpcParams::set(std::string_view name, double value) {
  double* f = field(*this, name);
  if (!f) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  *f = value;
}

bool MpcParams::valid(const ParamSchema& schema, std::string* why) const {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  for (const ParamSpec& e : schema.entries()) {
    const double* f = field(*this, e.name);
    if (!f) continue;
    if (!std::isfinite(*f)) return fail(e.name + " is not finite");
    if (*f < e.min || *f > e.max) return fail(e.name + " outside [min, max]");
  }
  if (v_min > v_max) return fail("v_min > v_max");
  if (a_min > a_max) return fail("a_min > a_max");
  return true;
}

ParamMap MpcParams::to_map() const {
  ParamMap m;
  for (const ParamSpec& e : ParamSchema::standard().entries()) m.emplace_back(e.name, get(e.name));
  return m;
}

std::string MpcParams::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, value] : to_map()) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &value, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string journal_line(const JournalEntry& entry) {
  nlohmann::ordered_json j;
  j["t"] = entry.t;
  j["source"] = entry.source;
  nlohmann::ordered_json update = nlohmann::ordered_json::object();
  for (const auto& [k, v] : entry.update) update[k] = v;
  j["update"] = std::move(update);
  nlohmann::ordered_json applied = nlohmann::ordered_json::object();
  for (const auto& [k, v] : entry.applied.to_map()) applied[k] = v;
  j["applied"] = std::move(applied);
  j["warnings"] = entry.warnings;
  return j.dump();
}

ParamStore::ParamStore(MpcParams initial) : current_(initial) {
  std::string why;
  if (!current_.valid(ParamSchema::standard(), &why))
    throw std::invalid_argument("initial parameters invalid: " + why);
}

MpcParams ParamStore::snapshot() const {
  std::lock_guard lock(mutex_);
  return current_;
}

std::uint64_t ParamStore::version() const {
  std::lock_guard lock(mutex_);
  return version_;
}

MpcParams ParamStore::apply(const ParamMap& update, std::string source, double t,
                            std::vector<std::string> warnings) {
  std::lock_guard lock(mutex_);
  MpcParams merged = current_;
  for (const auto& [k, v] : update) merged.set(k, v);
  std::string why;
  if (!merged.valid(ParamSchema::standard(), &why))
    throw std::invalid_argument("rejected parameter update: " + why);
  current_ = merged;
  ++version_;
  journal_.push_back({t, std::move(source), update, merged, std::move(warnings)});
  if (sink_) *sink_ << journal_line(journal_.back()) << '\n' << std::flush;
  return merged;
}

std::vector<JournalEntry> ParamStore::journal() const {
  std::lock_guard lock(mutex_);
  return journal_;
}

void ParamStore::set_journal_sink(std::ostream* sink) {
  std::lock_guard lock(mutex_);
  sink_ = sink;
}

}  // namespace langdrive
