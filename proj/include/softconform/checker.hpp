#pragma once

#include <algorithm>
#include <cstdint>
#include <list>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "softconform/csv.hpp"
#include "softconform/errors.hpp"
#include "softconform/event_log.hpp"
#include "softconform/model.hpp"

namespace softconform {

/// What a transition involving a label the model has never seen is worth.
/// `zero` treats it as impossible, `uniform_floor` gives it the uniform
/// component (1 - alpha) / |labels| that every known transition also carries.
enum class UnknownPolicy { zero, uniform_floor };

struct CheckerConfig {
  std::size_t capacity = 1000;  // most cases tracked at once
  UnknownPolicy policy = UnknownPolicy::zero;
};

/// Merged-matrix value for the transition from -> to under the given policy.
inline double lookup(const PreparedModel& model, std::optional<std::size_t> from,
                     std::optional<std::size_t> to, UnknownPolicy policy) {
  if (from && to) return model.at(*from, *to);
  if (policy == UnknownPolicy::uniform_floor)
    return (1.0 - model.alpha) / static_cast<double>(model.index.size());
  return 0.0;
}

/// Emitted once per processed event. `score` is empty while the case has a
/// single event and no transition yet.
struct ConformanceNotification {
  std::string case_id;
  std::optional<double> score;
  std::uint64_t observations = 0;
  std::uint64_t event_index = 0;
};

struct FinalScore {
  std::optional<double> score;
  std::uint64_t observations = 0;

  bool operator==(const FinalScore&) const = default;
};

/// Online soft conformance over an unbounded stream of (case, accomplishment)
/// events. Keeps a running mean of merged-matrix transition values per case,
/// normalized by the largest value an entry can take, so scores live in
/// [0,1]. At most `capacity` cases are tracked; when a new case would exceed
/// that, the case whose last update is oldest is dropped. Updates are ticked
/// on a logical clock (one tick per event), so last-update times are unique
/// and the least recently updated case is unambiguous; were two ever to tie,
/// the lexicographically smaller case id would go first. A dropped case that
/// shows up again starts over as new.
///
/// Every operation is constant time in the stream length: one hash lookup,
/// one list splice, one arithmetic update per event.
class SoftConformanceChecker {
 public:
  SoftConformanceChecker(PreparedModel model, CheckerConfig config = {})
      : model_(std::move(model)), config_(config) {
    if (config_.capacity == 0) throw ValidationError("capacity must be at least 1");
  }

  ConformanceNotification process(std::string_view case_id, std::string_view accomplishment) {
    ++events_;
    const std::optional<std::size_t> current = model_.index.find(accomplishment);

    auto it = cases_.find(case_id);
    if (it == cases_.end()) {
      entries_.push_front(Entry{std::string(case_id), current, 0.0, 0, events_});
      cases_.emplace(entries_.front().case_id, entries_.begin());
      while (entries_.size() > config_.capacity) {
        cases_.erase(entries_.back().case_id);
        entries_.pop_back();
      }
      if (entries_.size() > peak_) peak_ = entries_.size();
      return {std::string(case_id), std::nullopt, 0, events_};
    }

    Entry& entry = *it->second;
    const double value = lookup(model_, entry.last, current, config_.policy);
    entry.observations += 1;
    entry.mean += (value - entry.mean) / static_cast<double>(entry.observations);
    entry.last = current;
    entry.last_update = events_;
    entries_.splice(entries_.begin(), entries_, it->second);
    return {std::string(case_id), score_of(entry), entry.observations, events_};
  }

  /// Final state of every case still tracked, keyed by case id.
  std::map<std::string, FinalScore> final_scores() const {
    std::map<std::string, FinalScore> result;
    for (const auto& entry : entries_)
      result.emplace(entry.case_id, FinalScore{score_of(entry), entry.observations});
    return result;
  }

  const PreparedModel& model() const { return model_; }
  std::uint64_t events_processed() const { return events_; }
  std::size_t case_count() const { return entries_.size(); }
  std::size_t peak_case_count() const { return peak_; }

 private:
  struct Entry {
    std::string case_id;
    std::optional<std::size_t> last;  // index of the previous accomplishment
    double mean = 0.0;
    std::uint64_t observations = 0;
    std::uint64_t last_update = 0;
  };

  std::optional<double> score_of(const Entry& entry) const {
    if (entry.observations == 0) return std::nullopt;
    const double raw = entry.mean / model_.denominator;
    return raw < 0.0 ? 0.0 : raw > 1.0 ? 1.0 : raw;
  }

  PreparedModel model_;
  CheckerConfig config_;
  std::list<Entry> entries_;  // front = most recently updated
  // keys view the case_id strings owned by the list entries
  std::unordered_map<std::string_view, std::list<Entry>::iterator> cases_;
  std::uint64_t events_ = 0;
  std::size_t peak_ = 0;
};

/// Renders notifications as tab separated lines:
///   <event_index>\t<case_id>\t<score|pending>\t<observations>
/// Lines are flushed in batches so per-event cost stays flat.
class NotificationWriter {
 public:
  explicit NotificationWriter(std::ostream& out, std::size_t flush_every = 100)
      : out_(out), flush_every_(flush_every == 0 ? 1 : flush_every) {}

  ~NotificationWriter() { flush(); }

  NotificationWriter(const NotificationWriter&) = delete;
  NotificationWriter& operator=(const NotificationWriter&) = delete;

  void write(const ConformanceNotification& n) {
    buffer_ += std::to_string(n.event_index);
    buffer_ += '\t';
    buffer_ += n.case_id;
    buffer_ += '\t';
    buffer_ += n.score ? detail::format_double(*n.score) : "pending";
    buffer_ += '\t';
    buffer_ += std::to_string(n.observations);
    buffer_ += '\n';
    if (++pending_ >= flush_every_) flush();
  }

  void flush() {
    if (buffer_.empty()) return;
    out_ << buffer_;
    out_.flush();
    buffer_.clear();
    pending_ = 0;
  }

 private:
  std::ostream& out_;
  std::size_t flush_every_;
  std::string buffer_;
  std::size_t pending_ = 0;
};

/// Offline score of every case in a log: expands multiplicities into
/// concrete cases (c1, c2, ...), runs them through the online checker with
/// room for all of them, and returns the final score per case. A case whose
/// trace has a single event scores "pending" (empty optional).
inline std::map<std::string, FinalScore> check_log(const PreparedModel& model,
                                                   const EventLog& log,
                                                   std::string_view attribute,
                                                   UnknownPolicy policy = UnknownPolicy::zero) {
  const std::vector<CaseInstance> instances = expand_cases(log);
  SoftConformanceChecker checker(
      model, CheckerConfig{std::max<std::size_t>(1, instances.size()), policy});
  for (const auto& instance : instances) {
    for (const Event& event : instance.trace->events) {
      const std::string* label = event.get(attribute);
      if (!label)
        throw FormatError("case '" + instance.case_id + "' has an event without attribute '" +
                          std::string(attribute) + "'");
      checker.process(instance.case_id, *label);
    }
  }
  return checker.final_scores();
}

/// Scores as CSV: header case_id,soft_conformance,observations, one row per
/// case, scores rendered shortest round trip, pending cases spelled out.
inline void write_scores_csv(const std::map<std::string, FinalScore>& scores,
                             std::ostream& out) {
  out << "case_id,soft_conformance,observations\n";
  for (const auto& [case_id, final_score] : scores) {
    const std::string rendered =
        final_score.score ? detail::format_double(*final_score.score) : "pending";
    const std::string fields[] = {case_id, rendered, std::to_string(final_score.observations)};
    csv::write_record(out, fields);
  }
}

}  // namespace softconform
