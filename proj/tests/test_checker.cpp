#include <sstream>

#include "catch2/catch_amalgamated.hpp"
#include "softconform/checker.hpp"
#include "softconform/rng.hpp"

using namespace softconform;

namespace {

Trace make_trace(const std::vector<std::string>& labels) {
  Trace trace;
  for (const auto& label : labels) {
    Event event;
    event.set("name", label);
    trace.events.push_back(event);
  }
  return trace;
}

// Oracle: one case's score as a plain batch mean over its transitions,
// computed in one go instead of incrementally.
std::optional<double> oracle_score(const PreparedModel& model,
                                   const std::vector<std::string>& labels,
                                   UnknownPolicy policy) {
  if (labels.size() < 2) return std::nullopt;
  const double floor_value = policy == UnknownPolicy::uniform_floor
                                 ? (1.0 - model.alpha) / static_cast<double>(model.index.size())
                                 : 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < labels.size(); ++i) {
    const auto from = model.index.find(labels[i]);
    const auto to = model.index.find(labels[i + 1]);
    sum += (from && to) ? model.at(*from, *to) : floor_value;
  }
  const double mean = sum / static_cast<double>(labels.size() - 1);
  return mean / model.denominator;
}

PreparedModel random_model(SeededRng& rng, std::size_t alphabet) {
  EventLog log;
  const std::size_t traces = 3 + rng.below(10);
  for (std::size_t t = 0; t < traces; ++t) {
    std::vector<std::string> labels;
    const std::size_t len = 1 + rng.below(9);
    for (std::size_t i = 0; i < len; ++i)
      labels.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
    log.add_trace(make_trace(labels));
  }
  const double alpha = rng.unit();
  return prepare_for_conformance(normalize_counts(count_directly_follows(log, "name")), alpha);
}

std::vector<std::string> random_labels(SeededRng& rng, std::size_t alphabet, std::size_t len) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < len; ++i)
    labels.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
  return labels;
}

PreparedModel worked_example(double alpha) {
  EventLog log;
  log.add_trace(make_trace({"A", "B", "C"}), 3);
  log.add_trace(make_trace({"A", "A", "B", "C"}));
  return prepare_for_conformance(normalize_counts(count_directly_follows(log, "name")), alpha);
}

}  // namespace

TEST_CASE("incremental scores match the batch oracle on random cases") {
  SeededRng rng(1001);
  for (int round = 0; round < 300; ++round) {
    const std::size_t alphabet = 2 + rng.below(7);  // up to 8 labels
    const PreparedModel model = random_model(rng, alphabet);
    const auto policy =
        rng.below(2) == 0 ? UnknownPolicy::zero : UnknownPolicy::uniform_floor;
    // labels drawn over a slightly larger alphabet so unknowns occur
    const auto labels = random_labels(rng, alphabet + 1, 1 + rng.below(20));

    SoftConformanceChecker checker(model, CheckerConfig{4, policy});
    std::optional<double> last;
    for (const auto& label : labels) last = checker.process("case", label).score;

    const auto expected = oracle_score(model, labels, policy);
    REQUIRE(last.has_value() == expected.has_value());
    if (expected)
      REQUIRE_THAT(*last, Catch::Matchers::WithinAbs(*expected, 1e-9));
  }
}

TEST_CASE("the worked example scores fall out exactly") {
  SoftConformanceChecker checker(worked_example(0.5), CheckerConfig{10, {}});

  const auto first = checker.process("c1", "A");
  REQUIRE_FALSE(first.score.has_value());
  REQUIRE(first.observations == 0);

  const auto second = checker.process("c1", "B");
  REQUIRE(second.observations == 1);
  REQUIRE(*second.score == 0.85);  // (17/30) / (2/3), exact in binary

  const auto third = checker.process("c1", "C");
  REQUIRE(third.observations == 2);
  REQUIRE(*third.score == 0.925);  // (37/60) / (2/3), exact in binary
}

TEST_CASE("cases interleave without affecting each other") {
  const PreparedModel model = worked_example(0.5);

  SoftConformanceChecker apart(model, CheckerConfig{10, {}});
  apart.process("x", "A");
  apart.process("x", "B");
  apart.process("x", "C");
  apart.process("y", "A");
  apart.process("y", "A");
  const auto apart_scores = apart.final_scores();

  SoftConformanceChecker mixed(model, CheckerConfig{10, {}});
  mixed.process("y", "A");
  mixed.process("x", "A");
  mixed.process("x", "B");
  mixed.process("y", "A");
  mixed.process("x", "C");
  const auto mixed_scores = mixed.final_scores();

  REQUIRE(apart_scores == mixed_scores);
}

TEST_CASE("eviction drops the least recently updated case first") {
  const PreparedModel model = worked_example(0.5);
  SoftConformanceChecker checker(model, CheckerConfig{2, {}});

  checker.process("x", "A");
  checker.process("y", "A");
  checker.process("x", "B");  // y is now oldest
  checker.process("z", "A");  // y evicted
  REQUIRE(checker.case_count() == 2);

  const auto scores = checker.final_scores();
  REQUIRE(scores.count("x") == 1);
  REQUIRE(scores.count("z") == 1);
  REQUIRE(scores.count("y") == 0);

  // y starts over: its history is gone
  const auto back = checker.process("y", "B");
  REQUIRE_FALSE(back.score.has_value());
  REQUIRE(back.observations == 0);
}

TEST_CASE("an evicted case restarting is scored like a fresh one") {
  const PreparedModel model = worked_example(0.5);

  SoftConformanceChecker small(model, CheckerConfig{1, {}});
  small.process("a", "A");
  small.process("b", "A");  // evicts a
  small.process("a", "B");  // a restarts
  const auto restarted = small.process("a", "C");

  SoftConformanceChecker fresh(model, CheckerConfig{1, {}});
  fresh.process("a", "B");
  const auto clean = fresh.process("a", "C");

  REQUIRE(restarted.score == clean.score);
  REQUIRE(restarted.observations == clean.observations);
}

TEST_CASE("the tracked case set never exceeds its capacity") {
  SeededRng rng(77);
  const PreparedModel model = worked_example(0.8);
  SoftConformanceChecker checker(model, CheckerConfig{16, {}});
  for (int i = 0; i < 20000; ++i) {
    const std::string case_id = "c" + std::to_string(rng.below(400));
    const std::string label(1, static_cast<char>('A' + rng.below(3)));
    checker.process(case_id, label);
    REQUIRE(checker.case_count() <= 16);
  }
  REQUIRE(checker.peak_case_count() <= 16);
  REQUIRE(checker.events_processed() == 20000);
}

TEST_CASE("scores stay within [0,1] whatever the stream does") {
  SeededRng rng(31);
  for (int round = 0; round < 30; ++round) {
    const PreparedModel model = random_model(rng, 2 + rng.below(6));
    SoftConformanceChecker checker(model, CheckerConfig{8, {}});
    for (int i = 0; i < 500; ++i) {
      const std::string case_id = "c" + std::to_string(rng.below(20));
      const std::string label(1, static_cast<char>('a' + rng.below(9)));
      const auto note = checker.process(case_id, label);
      if (note.score) {
        REQUIRE(*note.score >= 0.0);
        REQUIRE(*note.score <= 1.0);
      }
    }
  }
}

TEST_CASE("with zero weight on the learned matrix every known transition is perfect") {
  const PreparedModel model = worked_example(0.0);
  SoftConformanceChecker checker(model, CheckerConfig{10, {}});
  checker.process("c", "C");
  checker.process("c", "A");  // C->A never happens in the log, still uniform
  const auto note = checker.process("c", "B");
  REQUIRE(*note.score == 1.0);
}

TEST_CASE("with full weight a trace the model predicts with certainty scores 1") {
  EventLog log;
  log.add_trace(make_trace({"A", "B", "C", "D"}), 7);
  const PreparedModel model =
      prepare_for_conformance(normalize_counts(count_directly_follows(log, "name")), 1.0);
  SoftConformanceChecker checker(model, CheckerConfig{10, {}});
  checker.process("c", "A");
  checker.process("c", "B");
  checker.process("c", "C");
  const auto note = checker.process("c", "D");
  REQUIRE(*note.score == 1.0);
  REQUIRE(note.observations == 3);
}

TEST_CASE("unknown labels fall back per policy") {
  const PreparedModel model = worked_example(0.5);

  SoftConformanceChecker zero(model, CheckerConfig{10, UnknownPolicy::zero});
  zero.process("c", "A");
  const auto dead = zero.process("c", "Q");
  REQUIRE(*dead.score == 0.0);

  SoftConformanceChecker floor(model, CheckerConfig{10, UnknownPolicy::uniform_floor});
  floor.process("c", "A");
  const auto soft = floor.process("c", "Q");
  // (1-alpha)/n = 1/6 against denominator 2/3
  REQUIRE_THAT(*soft.score, Catch::Matchers::WithinAbs(0.25, 1e-12));
}

TEST_CASE("capacity zero is rejected") {
  REQUIRE_THROWS_AS(SoftConformanceChecker(worked_example(0.5), CheckerConfig{0, {}}),
                    ValidationError);
}

TEST_CASE("offline log checking equals streaming the same cases") {
  SeededRng rng(555);
  for (int round = 0; round < 40; ++round) {
    const std::size_t alphabet = 2 + rng.below(6);
    const PreparedModel model = random_model(rng, alphabet);
    EventLog log;
    const std::size_t traces = 1 + rng.below(8);
    for (std::size_t t = 0; t < traces; ++t)
      log.add_trace(make_trace(random_labels(rng, alphabet, 1 + rng.below(10))),
                    1 + static_cast<long long>(rng.below(2)));

    const auto offline = check_log(model, log, "name");

    // stream the same instances round robin; capacity fits them all
    const auto instances = expand_cases(log);
    SoftConformanceChecker checker(model, CheckerConfig{instances.size(), {}});
    std::vector<std::size_t> cursor(instances.size(), 0);
    bool progressed = true;
    while (progressed) {
      progressed = false;
      for (std::size_t i = 0; i < instances.size(); ++i) {
        if (cursor[i] >= instances[i].trace->events.size()) continue;
        checker.process(instances[i].case_id,
                        *instances[i].trace->events[cursor[i]].get("name"));
        ++cursor[i];
        progressed = true;
      }
    }
    const auto streamed = checker.final_scores();

    REQUIRE(offline.size() == streamed.size());
    for (const auto& [case_id, final_score] : offline) {
      const auto& other = streamed.at(case_id);
      REQUIRE(final_score.observations == other.observations);
      REQUIRE(final_score.score.has_value() == other.score.has_value());
      if (final_score.score) REQUIRE(*final_score.score == *other.score);  // bitwise
    }
  }
}

TEST_CASE("checking an empty log yields no scores") {
  REQUIRE(check_log(worked_example(0.5), EventLog{}, "name").empty());
}

TEST_CASE("single event cases stay pending in offline results") {
  EventLog log;
  log.add_trace(make_trace({"A"}));
  log.add_trace(make_trace({"A", "B"}));
  const auto scores = check_log(worked_example(0.5), log, "name");
  REQUIRE(scores.size() == 2);
  // the 1-event trace is a prefix of the other, so it sorts first as c1
  REQUIRE_FALSE(scores.at("c1").score.has_value());
  REQUIRE(scores.at("c1").observations == 0);
  REQUIRE(scores.at("c2").score.has_value());
  REQUIRE(scores.at("c2").observations == 1);
}

TEST_CASE("notification lines carry index, case, score and count") {
  std::ostringstream out;
  {
    NotificationWriter writer(out, 2);
    writer.write(ConformanceNotification{"x", std::nullopt, 0, 1});
    REQUIRE(out.str().empty());  // below the batch size, still buffered
    writer.write(ConformanceNotification{"x", 0.85, 1, 2});
    REQUIRE(out.str() == "1\tx\tpending\t0\n2\tx\t0.85\t1\n");
    writer.write(ConformanceNotification{"y", 0.5, 3, 3});
  }  // destructor flushes the tail
  REQUIRE(out.str() == "1\tx\tpending\t0\n2\tx\t0.85\t1\n3\ty\t0.5\t3\n");
}

TEST_CASE("scores render as csv with pending spelled out") {
  std::map<std::string, FinalScore> scores;
  scores["a"] = FinalScore{0.925, 2};
  scores["b"] = FinalScore{std::nullopt, 0};
  std::ostringstream out;
  write_scores_csv(scores, out);
  REQUIRE(out.str() ==
          "case_id,soft_conformance,observations\n"
          "a,0.925,2\n"
          "b,pending,0\n");
}
