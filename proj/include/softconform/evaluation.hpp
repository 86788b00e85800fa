#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "softconform/checker.hpp"
#include "softconform/csv.hpp"
#include "softconform/errors.hpp"
#include "softconform/event_log.hpp"
#include "softconform/model.hpp"
#include "softconform/rng.hpp"
#include "softconform/stream.hpp"

namespace softconform {

struct ScorePair {
  double conformance = 0.0;
  double reference = 0.0;
};

struct PearsonResult {
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// Pearson correlation with a two sided p-value from the t distribution with
/// n - 2 degrees of freedom. Needs at least 3 pairs and variance on both
/// sides.
inline PearsonResult pearson(std::span<const ScorePair> pairs) {
  const std::size_t n = pairs.size();
  if (n < 3) throw ValidationError("correlation needs at least 3 pairs, got " +
                                   std::to_string(n));
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : pairs) {
    sx += p.conformance;
    sy += p.reference;
    sxx += p.conformance * p.conformance;
    syy += p.reference * p.reference;
    sxy += p.conformance * p.reference;
  }
  const double nd = static_cast<double>(n);
  const double cov = sxy - sx * sy / nd;
  const double vx = sxx - sx * sx / nd;
  const double vy = syy - sy * sy / nd;
  if (vx <= 0.0 || vy <= 0.0)
    throw ValidationError("correlation undefined: a side has zero variance");
  double r = cov / std::sqrt(vx * vy);
  if (r > 1.0) r = 1.0;
  if (r < -1.0) r = -1.0;

  PearsonResult result{r, 0.0, n};
  const double r2 = r * r;
  if (r2 >= 1.0) return result;  // perfectly correlated, p = 0
  const double t = std::abs(r) * std::sqrt((nd - 2.0) / (1.0 - r2));
  boost::math::students_t dist(nd - 2.0);
  result.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, t));
  return result;
}

struct JoinStats {
  std::size_t matched = 0;
  std::size_t pending_excluded = 0;
  std::size_t unmatched_scores = 0;
  std::size_t unmatched_reference = 0;
};

namespace detail {

inline std::size_t column_of(const std::vector<std::string>& header, std::string_view name,
                             const std::string& where) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw FormatError(where + ": header has no column '" + std::string(name) + "'");
}

}  // namespace detail

/// Joins a scores file (case_id,soft_conformance,observations) with an
/// external per-case metric file (case_id,<metric_column>) on case id.
/// Pending scores and case ids present on only one side are excluded and
/// counted. Pairs come back sorted by case id.
inline std::vector<ScorePair> join_scores(const std::filesystem::path& scores_csv,
                                          const std::filesystem::path& reference_csv,
                                          std::string_view metric_column = "metric",
                                          JoinStats* stats_out = nullptr,
                                          std::ostream* diagnostics = nullptr) {
  auto parse_value = [](const std::string& text, const std::string& where, std::size_t line) {
    auto v = detail::parse_double(text);
    if (!v)
      throw FormatError(where + ":" + std::to_string(line) + ": '" + text +
                        "' is not a decimal");
    return *v;
  };

  std::map<std::string, std::optional<double>> scores;
  {
    const std::string where = scores_csv.string();
    std::ifstream in(scores_csv, std::ios::binary);
    if (!in) throw IoError("cannot open '" + where + "' for reading");
    csv::Reader reader(in);
    auto header = reader.next_record();
    if (!header) throw FormatError(where + ": missing header row");
    const std::size_t id_col = detail::column_of(*header, "case_id", where);
    const std::size_t score_col = detail::column_of(*header, "soft_conformance", where);
    while (auto record = reader.next_record()) {
      const std::size_t line = reader.record_line();
      if (record->size() <= std::max(id_col, score_col))
        throw FormatError(where + ":" + std::to_string(line) + ": too few fields");
      const std::string& id = (*record)[id_col];
      if (id.empty()) throw FormatError(where + ":" + std::to_string(line) + ": empty case_id");
      const std::string& text = (*record)[score_col];
      std::optional<double> score;
      if (text != "pending") score = parse_value(text, where, line);
      if (!scores.emplace(id, score).second)
        throw FormatError(where + ":" + std::to_string(line) + ": duplicate case_id '" + id +
                          "'");
    }
  }

  std::map<std::string, double> reference;
  {
    const std::string where = reference_csv.string();
    std::ifstream in(reference_csv, std::ios::binary);
    if (!in) throw IoError("cannot open '" + where + "' for reading");
    csv::Reader reader(in);
    auto header = reader.next_record();
    if (!header) throw FormatError(where + ": missing header row");
    const std::size_t id_col = detail::column_of(*header, "case_id", where);
    const std::size_t metric_col = detail::column_of(*header, metric_column, where);
    while (auto record = reader.next_record()) {
      const std::size_t line = reader.record_line();
      if (record->size() <= std::max(id_col, metric_col))
        throw FormatError(where + ":" + std::to_string(line) + ": too few fields");
      const std::string& id = (*record)[id_col];
      if (id.empty()) throw FormatError(where + ":" + std::to_string(line) + ": empty case_id");
      if (!reference.emplace(id, parse_value((*record)[metric_col], where, line)).second)
        throw FormatError(where + ":" + std::to_string(line) + ": duplicate case_id '" + id +
                          "'");
    }
  }

  JoinStats stats;
  std::vector<ScorePair> pairs;
  for (const auto& [id, score] : scores) {
    auto it = reference.find(id);
    if (it == reference.end()) {
      ++stats.unmatched_scores;
      if (diagnostics) *diagnostics << "case '" << id << "' has no reference metric\n";
      continue;
    }
    if (!score) {
      ++stats.pending_excluded;
      if (diagnostics) *diagnostics << "case '" << id << "' is pending, excluded\n";
      continue;
    }
    ++stats.matched;
    pairs.push_back(ScorePair{*score, it->second});
  }
  for (const auto& [id, metric] : reference) {
    if (!scores.count(id)) {
      ++stats.unmatched_reference;
      if (diagnostics) *diagnostics << "reference case '" << id << "' has no score\n";
    }
  }
  if (stats_out) *stats_out = stats;
  return pairs;
}

enum class NoiseKind { substitute, insert, swap_adjacent };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::substitute;
  double intensity = 0.0;  // probability per site, in [0,1]
  std::uint64_t seed = 0;
};

/// Perturbs a log for robustness experiments. Every case instance is noised
/// independently (multiplicities are expanded first):
///   substitute    each event's label is replaced with a uniformly random
///                 one from the log's alphabet with probability `intensity`
///   insert        a random-label event is inserted after each event with
///                 probability `intensity`
///   swap_adjacent each adjacent pair, left to right, is swapped with
///                 probability `intensity`
inline EventLog inject_noise(const EventLog& log, std::string_view attribute,
                             const NoiseSpec& spec) {
  if (!(spec.intensity >= 0.0 && spec.intensity <= 1.0))
    throw ValidationError("noise intensity must be within [0,1]");
  EventLog noised;
  if (log.empty()) return noised;

  std::set<std::string> alphabet_set;
  for (const auto& [sequence, mult] : project_log(log, attribute, MissingPolicy::fail))
    for (const auto& label : sequence) alphabet_set.insert(label);
  const std::vector<std::string> alphabet(alphabet_set.begin(), alphabet_set.end());

  SeededRng rng(spec.seed);
  auto random_label = [&]() { return alphabet[rng.below(alphabet.size())]; };

  for (const CaseInstance& instance : expand_cases(log)) {
    std::vector<Event> events = instance.trace->events;
    switch (spec.kind) {
      case NoiseKind::substitute:
        for (Event& event : events)
          if (rng.unit() < spec.intensity) event.set(std::string(attribute), random_label());
        break;
      case NoiseKind::insert: {
        std::vector<Event> with_inserts;
        with_inserts.reserve(events.size() * 2);
        for (Event& event : events) {
          with_inserts.push_back(std::move(event));
          if (rng.unit() < spec.intensity) {
            Event filler;
            filler.set(std::string(attribute), random_label());
            with_inserts.push_back(std::move(filler));
          }
        }
        events = std::move(with_inserts);
        break;
      }
      case NoiseKind::swap_adjacent:
        for (std::size_t i = 0; i + 1 < events.size(); ++i)
          if (rng.unit() < spec.intensity) std::swap(events[i], events[i + 1]);
        break;
    }
    noised.add_trace(Trace{std::move(events)});
  }
  return noised;
}

namespace detail {

/// Draws the next step from a row of the merged matrix. Returns the chosen
/// column, or nothing for termination (the row's missing mass). With `force`
/// the draw is rescaled into the row mass so the walk must continue; an all
/// zero row then falls back to a uniform label.
inline std::optional<std::size_t> draw_step(const PreparedModel& model, std::size_t row,
                                            SeededRng& rng, bool force) {
  const std::size_t n = model.index.size();
  double mass = 0.0;
  for (std::size_t j = 0; j < n; ++j) mass += model.at(row, j);
  double u = rng.unit();
  if (force) {
    if (mass <= 0.0) return rng.below(n);
    u *= mass;
  }
  double cum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    cum += model.at(row, j);
    if (u < cum) return j;
  }
  return std::nullopt;
}

}  // namespace detail

/// Samples traces by walking the merged matrix: uniform start, each step
/// drawn from the current row, termination with the row's missing mass.
/// Walks shorter than `min_len` are forced to continue; walks reaching
/// `max_len` stop there.
inline EventLog sample_random_walk_log(const PreparedModel& model, std::size_t trace_count,
                                       std::string_view attribute, std::uint64_t seed,
                                       std::size_t max_len = 64, std::size_t min_len = 2) {
  if (trace_count == 0) throw ValidationError("trace_count must be at least 1");
  if (min_len < 1 || max_len < min_len)
    throw ValidationError("need 1 <= min_len <= max_len");
  SeededRng rng(seed);
  const std::size_t n = model.index.size();
  EventLog log;
  for (std::size_t t = 0; t < trace_count; ++t) {
    std::vector<std::size_t> walk{static_cast<std::size_t>(rng.below(n))};
    while (walk.size() < max_len) {
      const auto next = detail::draw_step(model, walk.back(), rng, walk.size() < min_len);
      if (!next) break;
      walk.push_back(*next);
    }
    Trace trace;
    trace.events.reserve(walk.size());
    for (const std::size_t idx : walk) {
      Event event;
      event.set(std::string(attribute), model.index.label(idx));
      trace.events.push_back(std::move(event));
    }
    log.add_trace(std::move(trace));
  }
  return log;
}

/// A synthetic directly-follows count matrix shaped like a real process:
/// labels a01..aNN, a heavy linear backbone, occasional skips, a few loops
/// back, and a terminal last activity.
inline CountMatrix synthetic_process_counts(std::size_t activity_count, std::uint64_t seed) {
  if (activity_count < 2) throw ValidationError("need at least 2 activities");
  std::size_t width = 1;
  for (std::size_t v = activity_count; v >= 10; v /= 10) ++width;
  std::vector<std::string> labels;
  labels.reserve(activity_count);
  for (std::size_t i = 1; i <= activity_count; ++i) {
    std::string number = std::to_string(i);
    labels.push_back("a" + std::string(width - number.size(), '0') + number);
  }
  AccomplishmentIndex index(std::move(labels));

  SeededRng rng(seed);
  const std::size_t n = activity_count;
  CountMatrix counts{index, std::vector<std::uint64_t>(n * n, 0)};
  for (std::size_t i = 0; i + 1 < n; ++i) {
    counts.at(i, i + 1) = 80 + rng.below(40);
    if (i + 2 < n && rng.below(100) < 35) counts.at(i, i + 2) = 8 + rng.below(10);
    if (i >= 3 && rng.below(100) < 20) counts.at(i, rng.below(i - 1)) = 3 + rng.below(5);
  }
  return counts;
}

/// Endless intertwined stream drawn from a model: a fixed size pool of
/// synthetic cases (ids s1, s2, ...) advances one randomly chosen case per
/// call; finished cases are replaced by fresh ones, so case ids keep growing
/// and old ones never come back.
class SyntheticStreamSource {
 public:
  SyntheticStreamSource(PreparedModel model, std::size_t case_pool, std::uint64_t seed,
                        std::size_t max_case_len = 200)
      : model_(std::move(model)), rng_(seed), max_case_len_(max_case_len) {
    if (case_pool == 0) throw ValidationError("case pool must be at least 1");
    slots_.resize(case_pool);
  }

  StreamEvent next() {
    Slot& slot = slots_[rng_.below(slots_.size())];
    if (!slot.active) start_case(slot);
    ++arrivals_;
    const std::size_t emitted = slot.position;
    StreamEvent event{slot.case_id, model_.index.label(emitted), arrivals_};
    ++slot.length;
    const auto next_step =
        slot.length >= max_case_len_
            ? std::nullopt
            : detail::draw_step(model_, slot.position, rng_, slot.length < 2);
    if (next_step)
      slot.position = *next_step;
    else
      slot.active = false;
    return event;
  }

 private:
  struct Slot {
    std::string case_id;
    std::size_t position = 0;
    std::size_t length = 0;
    bool active = false;
  };

  void start_case(Slot& slot) {
    ++case_counter_;
    slot.case_id = "s" + std::to_string(case_counter_);
    slot.position = static_cast<std::size_t>(rng_.below(model_.index.size()));
    slot.length = 0;
    slot.active = true;
  }

  PreparedModel model_;
  SeededRng rng_;
  std::size_t max_case_len_;
  std::vector<Slot> slots_;
  std::uint64_t case_counter_ = 0;
  std::uint64_t arrivals_ = 0;
};

struct ThroughputReport {
  std::uint64_t events_processed = 0;
  std::vector<std::uint64_t> events_per_second;  // one bucket per elapsed second
  std::size_t peak_case_map_size = 0;
  double duration_seconds = 0.0;
};

/// Runs the checker flat out against an in-process synthetic source for
/// `duration` seconds and tallies events into one second buckets.
inline ThroughputReport stress(const PreparedModel& model, SyntheticStreamSource& source,
                               double duration_seconds, std::size_t capacity,
                               UnknownPolicy policy = UnknownPolicy::zero) {
  if (duration_seconds <= 0.0) throw ValidationError("duration must be positive");
  SoftConformanceChecker checker(model, CheckerConfig{capacity, policy});
  ThroughputReport report;
  report.events_per_second.resize(
      static_cast<std::size_t>(std::ceil(duration_seconds)), 0);

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto deadline = start + std::chrono::duration<double>(duration_seconds);
  while (true) {
    const auto now = clock::now();
    if (now >= deadline) break;
    const StreamEvent event = source.next();
    checker.process(event.case_id, event.accomplishment);
    const auto bucket =
        static_cast<std::size_t>(std::chrono::duration<double>(now - start).count());
    if (bucket >= report.events_per_second.size())
      report.events_per_second.resize(bucket + 1, 0);
    ++report.events_per_second[bucket];
  }
  report.events_processed = checker.events_processed();
  report.peak_case_map_size = checker.peak_case_count();
  report.duration_seconds =
      std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

/// Same measurement, but over a real socket: a listener on 127.0.0.1 feeds
/// the checker while a thread in this process emits synthetic events flat
/// out until the duration elapses. Backpressure on the socket keeps the two
/// in step.
inline ThroughputReport run_loopback_bench(const PreparedModel& model, double duration_seconds,
                                           std::size_t capacity, std::uint64_t seed,
                                           std::size_t case_pool = 500,
                                           UnknownPolicy policy = UnknownPolicy::zero) {
  if (duration_seconds <= 0.0) throw ValidationError("duration must be positive");
  TcpListener listener("127.0.0.1:0");
  const std::string address = "127.0.0.1:" + std::to_string(listener.port());

  std::exception_ptr emitter_error;
  std::thread emitter([&]() {
    try {
      SyntheticStreamSource source(model, case_pool, seed);
      detail::Socket sock = detail::connect_tcp(address);
      using clock = std::chrono::steady_clock;
      const auto deadline = clock::now() + std::chrono::duration<double>(duration_seconds);
      std::string buffer;
      buffer.reserve(96 * 1024);
      while (clock::now() < deadline) {
        buffer.clear();
        for (int i = 0; i < 4096; ++i) {
          const StreamEvent event = source.next();
          buffer += event.case_id;
          buffer += ',';
          buffer += event.accomplishment;
          buffer += '\n';
        }
        detail::send_all(sock.get(), buffer.data(), buffer.size());
      }
      ::shutdown(sock.get(), SHUT_WR);
    } catch (...) {
      emitter_error = std::current_exception();
      listener.request_stop();
    }
  });

  SoftConformanceChecker checker(model, CheckerConfig{capacity, policy});
  ThroughputReport report;
  report.events_per_second.resize(
      static_cast<std::size_t>(std::ceil(duration_seconds)), 0);

  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  listener.run([&](const WireEvent& event) {
    checker.process(event.case_id, event.accomplishment);
    const auto bucket = static_cast<std::size_t>(
        std::chrono::duration<double>(clock::now() - start).count());
    if (bucket >= report.events_per_second.size())
      report.events_per_second.resize(bucket + 1, 0);
    ++report.events_per_second[bucket];
  });
  emitter.join();
  if (emitter_error) std::rethrow_exception(emitter_error);

  report.events_processed = checker.events_processed();
  report.peak_case_map_size = checker.peak_case_count();
  report.duration_seconds = std::chrono::duration<double>(clock::now() - start).count();
  return report;
}

/// Bucket series as CSV plus one trailing summary comment:
///   bucket_start_s,events
///   0,103214
///   ...
///   # events=... duration_s=... rate_per_s=... peak_cases=...
inline void write_throughput_csv(const ThroughputReport& report, std::ostream& out) {
  out << "bucket_start_s,events\n";
  for (std::size_t i = 0; i < report.events_per_second.size(); ++i)
    out << i << ',' << report.events_per_second[i] << '\n';
  const double rate = report.duration_seconds > 0
                          ? static_cast<double>(report.events_processed) /
                                report.duration_seconds
                          : 0.0;
  out << "# events=" << report.events_processed << " duration_s="
      << detail::format_double(report.duration_seconds) << " rate_per_s="
      << detail::format_double(rate) << " peak_cases=" << report.peak_case_map_size << '\n';
}

}  // namespace softconform
