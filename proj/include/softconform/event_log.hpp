#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "softconform/errors.hpp"

namespace softconform {

/// One observed event: a flat key-value attribute map. A key that is absent
/// means the event does not carry that attribute; values are never empty
/// (absent != empty). Attribute text is opaque UTF-8 compared byte-wise.
struct Event {
  std::map<std::string, std::string> attributes;

  auto operator<=>(const Event&) const = default;

  bool has(std::string_view name) const {
    return attributes.find(std::string(name)) != attributes.end();
  }

  /// Returns nullptr when the attribute is absent.
  const std::string* get(std::string_view name) const {
    auto it = attributes.find(std::string(name));
    return it == attributes.end() ? nullptr : &it->second;
  }

  /// Inserts or overwrites one attribute. Empty names or values are invalid.
  void set(std::string name, std::string value) {
    if (name.empty()) throw ValidationError("event attribute name is empty");
    if (value.empty())
      throw ValidationError("event attribute '" + name + "' has empty value");
    attributes.insert_or_assign(std::move(name), std::move(value));
  }
};

/// An ordered sequence of events belonging to one process instance. Order is
/// exactly the ingestion order; positions are 1-based in documentation and
/// error messages.
struct Trace {
  std::vector<Event> events;

  auto operator<=>(const Trace&) const = default;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
};

/// A log is a multiset of traces: identical traces (full attribute maps, not
/// just one projection) merge into one entry with a multiplicity.
class EventLog {
 public:
  using Multiset = std::map<Trace, long long>;

  void add_trace(Trace trace, long long multiplicity = 1) {
    if (trace.empty()) throw ValidationError("trace must contain at least one event");
    if (multiplicity <= 0)
      throw ValidationError("trace multiplicity must be strictly positive");
    traces_[std::move(trace)] += multiplicity;
  }

  const Multiset& traces() const { return traces_; }
  bool empty() const { return traces_.empty(); }

  /// Number of distinct trace variants.
  std::size_t variant_count() const { return traces_.size(); }

  /// Sum of multiplicities.
  long long trace_count() const {
    long long n = 0;
    for (const auto& [t, mult] : traces_) n += mult;
    return n;
  }

  /// Sum over traces of multiplicity * length.
  long long event_count() const {
    long long n = 0;
    for (const auto& [t, mult] : traces_) n += mult * static_cast<long long>(t.size());
    return n;
  }

  bool operator==(const EventLog&) const = default;

 private:
  Multiset traces_;
};

/// A single observation on an event stream: which case advanced, by which
/// accomplishment, and its 1-based position in the total stream order.
struct StreamEvent {
  std::string case_id;
  std::string accomplishment;
  std::uint64_t arrival_index = 0;

  bool operator==(const StreamEvent&) const = default;
};

/// What to do when an event lacks the projected attribute. `fail` aborts with
/// the offending 1-based event position; `skip` drops the event from the
/// projection. Default is `fail`: silent skips corrupt directly-follows counts.
enum class MissingPolicy { fail, skip };

/// Extracts the value of `attribute` from every event of the trace, in order.
/// With `skipped` given, the number of dropped events is reported there
/// (always 0 under the fail policy).
inline std::vector<std::string> project(const Trace& trace, std::string_view attribute,
                                        MissingPolicy policy = MissingPolicy::fail,
                                        std::size_t* skipped = nullptr) {
  if (attribute.empty()) throw ValidationError("projection attribute name is empty");
  std::vector<std::string> values;
  values.reserve(trace.size());
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    if (const std::string* v = trace.events[i].get(attribute)) {
      values.push_back(*v);
    } else if (policy == MissingPolicy::fail) {
      throw FormatError("event " + std::to_string(i + 1) + " has no attribute '" +
                        std::string(attribute) + "'");
    } else {
      ++dropped;
    }
  }
  if (skipped) *skipped = dropped;
  return values;
}

/// A projected log: multiset of accomplishment sequences. Distinct traces that
/// project to the same sequence merge; their multiplicities add up.
using ProjectedLog = std::map<std::vector<std::string>, long long>;

inline ProjectedLog project_log(const EventLog& log, std::string_view attribute,
                                MissingPolicy policy = MissingPolicy::fail) {
  ProjectedLog projected;
  std::size_t trace_no = 0;
  for (const auto& [trace, mult] : log.traces()) {
    ++trace_no;
    try {
      projected[project(trace, attribute, policy)] += mult;
    } catch (const FormatError& e) {
      throw FormatError("trace " + std::to_string(trace_no) + " (multiplicity " +
                        std::to_string(mult) + "): " + e.what());
    }
  }
  return projected;
}

/// One expanded process instance: a synthetic case id plus a view of the trace
/// it replays. The pointee lives in the EventLog, which must outlive the
/// expansion.
struct CaseInstance {
  std::string case_id;
  const Trace* trace = nullptr;
};

/// Canonical serialization of a trace, used only as an ordering key: events
/// joined by 0x1e, each event's `name=value` pairs joined by 0x1f.
inline std::string canonical_trace_key(const Trace& trace) {
  std::string key;
  for (const Event& e : trace.events) {
    if (!key.empty()) key.push_back('\x1e');
    bool first = true;
    for (const auto& [name, value] : e.attributes) {
      if (!first) key.push_back('\x1f');
      first = false;
      key += name;
      key.push_back('=');
      key += value;
    }
  }
  return key;
}

/// Expands the multiset into individual instances with synthetic case ids
/// c1..cN. Order is canonical: lexicographic by serialized trace content, so
/// every consumer (CSV writer, offline checker, replayer) agrees on ids.
inline std::vector<CaseInstance> expand_cases(const EventLog& log) {
  std::vector<std::pair<std::string, const Trace*>> keyed;
  keyed.reserve(log.variant_count());
  for (const auto& [trace, mult] : log.traces()) {
    const std::string key = canonical_trace_key(trace);
    for (long long i = 0; i < mult; ++i) keyed.emplace_back(key, &trace);
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<CaseInstance> instances;
  instances.reserve(keyed.size());
  for (std::size_t i = 0; i < keyed.size(); ++i)
    instances.push_back({"c" + std::to_string(i + 1), keyed[i].second});
  return instances;
}

}  // namespace softconform
