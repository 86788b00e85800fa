#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "catch2/catch_amalgamated.hpp"
#include "softconform/model.hpp"
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

// Oracle: directly-follows counts by brute force, straight off the stored
// traces, no shared code with the implementation under test.
std::map<std::pair<std::string, std::string>, long long> oracle_df(const EventLog& log) {
  std::map<std::pair<std::string, std::string>, long long> counts;
  for (const auto& [trace, mult] : log.traces())
    for (std::size_t i = 0; i + 1 < trace.events.size(); ++i)
      counts[{*trace.events[i].get("name"), *trace.events[i + 1].get("name")}] += mult;
  return counts;
}

EventLog random_log(SeededRng& rng, std::size_t alphabet, std::size_t traces) {
  EventLog log;
  for (std::size_t t = 0; t < traces; ++t) {
    std::vector<std::string> labels;
    const std::size_t len = 1 + rng.below(8);
    for (std::size_t i = 0; i < len; ++i)
      labels.push_back(std::string(1, static_cast<char>('a' + rng.below(alphabet))));
    log.add_trace(make_trace(labels), 1 + static_cast<long long>(rng.below(3)));
  }
  return log;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

}  // namespace

TEST_CASE("directly-follows counts match the brute force oracle on random logs") {
  SeededRng rng(42);
  for (int round = 0; round < 50; ++round) {
    const EventLog log = random_log(rng, 2 + rng.below(5), 1 + rng.below(12));
    const CountMatrix counts = count_directly_follows(log, "name");
    const auto expected = oracle_df(log);

    std::uint64_t expected_total = 0;
    for (const auto& [pair, count] : expected) {
      const auto i = counts.index.find(pair.first);
      const auto j = counts.index.find(pair.second);
      REQUIRE(i.has_value());
      REQUIRE(j.has_value());
      REQUIRE(counts.at(*i, *j) == static_cast<std::uint64_t>(count));
      expected_total += static_cast<std::uint64_t>(count);
    }
    REQUIRE(counts.total() == expected_total);  // nothing counted beyond the oracle pairs
  }
}

TEST_CASE("the worked example counts come out exactly") {
  EventLog log;
  log.add_trace(make_trace({"A", "B", "C"}), 3);
  log.add_trace(make_trace({"A", "A", "B", "C"}));
  const CountMatrix counts = count_directly_follows(log, "name");

  REQUIRE(counts.index.labels() == std::vector<std::string>{"A", "B", "C"});
  const auto a = *counts.index.find("A");
  const auto b = *counts.index.find("B");
  const auto c = *counts.index.find("C");
  REQUIRE(counts.at(a, a) == 1);
  REQUIRE(counts.at(a, b) == 4);
  REQUIRE(counts.at(b, c) == 4);
  REQUIRE(counts.total() == 9);
}

TEST_CASE("normalizing the worked example gives the expected probabilities") {
  EventLog log;
  log.add_trace(make_trace({"A", "B", "C"}), 3);
  log.add_trace(make_trace({"A", "A", "B", "C"}));
  const DescriptiveModel model = normalize_counts(count_directly_follows(log, "name"));

  const auto a = *model.index.find("A");
  const auto b = *model.index.find("B");
  const auto c = *model.index.find("C");
  REQUIRE_THAT(model.at(a, a), Catch::Matchers::WithinAbs(0.2, 1e-9));
  REQUIRE_THAT(model.at(a, b), Catch::Matchers::WithinAbs(0.8, 1e-9));
  REQUIRE_THAT(model.at(b, c), Catch::Matchers::WithinAbs(1.0, 1e-9));
  REQUIRE(model.at(a, c) == 0.0);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(model.at(c, j) == 0.0);  // terminal row
}

TEST_CASE("row sums after normalizing are 1 or 0") {
  SeededRng rng(7);
  for (int round = 0; round < 20; ++round) {
    const EventLog log = random_log(rng, 2 + rng.below(6), 1 + rng.below(10));
    const DescriptiveModel model = normalize_counts(count_directly_follows(log, "name"));
    const std::size_t n = model.index.size();
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) sum += model.at(i, j);
      REQUIRE((std::abs(sum - 1.0) < 1e-9 || sum == 0.0));
    }
  }
}

TEST_CASE("an empty log cannot be learned from") {
  REQUIRE_THROWS_AS(count_directly_follows(EventLog{}, "name"), ValidationError);
}

TEST_CASE("merging the worked example at half weight gives the known matrix") {
  EventLog log;
  log.add_trace(make_trace({"A", "B", "C"}), 3);
  log.add_trace(make_trace({"A", "A", "B", "C"}));
  const PreparedModel merged =
      prepare_for_conformance(normalize_counts(count_directly_follows(log, "name")), 0.5);

  const auto a = *merged.index.find("A");
  const auto b = *merged.index.find("B");
  const auto c = *merged.index.find("C");

  // exact values
  REQUIRE_THAT(merged.at(a, a), Catch::Matchers::WithinAbs(4.0 / 15.0, 1e-9));
  REQUIRE_THAT(merged.at(a, b), Catch::Matchers::WithinAbs(17.0 / 30.0, 1e-9));
  REQUIRE_THAT(merged.at(a, c), Catch::Matchers::WithinAbs(1.0 / 6.0, 1e-9));
  REQUIRE_THAT(merged.at(b, c), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-9));
  for (std::size_t j = 0; j < 3; ++j)
    REQUIRE_THAT(merged.at(c, j), Catch::Matchers::WithinAbs(1.0 / 6.0, 1e-9));

  // the two-decimal renderings people quote for this example
  REQUIRE_THAT(merged.at(a, a), Catch::Matchers::WithinAbs(0.26, 0.01));
  REQUIRE_THAT(merged.at(a, b), Catch::Matchers::WithinAbs(0.57, 0.01));
  REQUIRE_THAT(merged.at(a, c), Catch::Matchers::WithinAbs(0.17, 0.01));
  REQUIRE_THAT(merged.at(b, c), Catch::Matchers::WithinAbs(0.66, 0.01));

  REQUIRE_THAT(merged.denominator, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  REQUIRE(merged.alpha == 0.5);
}

TEST_CASE("merging is linear: entry = alpha * p + (1 - alpha) / n") {
  SeededRng rng(11);
  const EventLog log = random_log(rng, 5, 20);
  const DescriptiveModel model = normalize_counts(count_directly_follows(log, "name"));
  const std::size_t n = model.index.size();
  for (const double alpha : {0.0, 0.25, 0.7, 1.0}) {
    const PreparedModel merged = prepare_for_conformance(model, alpha);
    for (std::size_t k = 0; k < n * n; ++k)
      REQUIRE_THAT(merged.probs[k],
                   Catch::Matchers::WithinAbs(alpha * model.probs[k] + (1 - alpha) / n, 1e-12));
    REQUIRE_THAT(merged.denominator,
                 Catch::Matchers::WithinAbs(alpha + (1 - alpha) / n, 1e-12));
  }
}

TEST_CASE("merge weights outside [0,1] are rejected") {
  EventLog log;
  log.add_trace(make_trace({"A", "B"}));
  const DescriptiveModel model = normalize_counts(count_directly_follows(log, "name"));
  REQUIRE_THROWS_AS(prepare_for_conformance(model, -0.01), ValidationError);
  REQUIRE_THROWS_AS(prepare_for_conformance(model, 1.2), ValidationError);
}

TEST_CASE("the label index is sorted, distinct and searchable") {
  AccomplishmentIndex index({"b", "a", "c"});
  REQUIRE(index.labels() == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(*index.find("b") == 1);
  REQUIRE_FALSE(index.find("zz").has_value());
  REQUIRE_THROWS_AS(AccomplishmentIndex({"a", "a"}), ValidationError);
  REQUIRE_THROWS_AS(AccomplishmentIndex({}), ValidationError);
  REQUIRE_THROWS_AS(AccomplishmentIndex({""}), ValidationError);
}

TEST_CASE("model files round-trip bit for bit") {
  SeededRng rng(123);
  for (int round = 0; round < 10; ++round) {
    const EventLog log = random_log(rng, 2 + rng.below(6), 1 + rng.below(15));
    const DescriptiveModel model = normalize_counts(count_directly_follows(log, "name"));
    const auto path = temp_file("sc_model_rt.txt");

    write_model(model, path);
    const LoadedModel loaded = read_model(path);
    const auto& back = std::get<DescriptiveModel>(loaded);
    REQUIRE(back.index == model.index);
    REQUIRE(back.probs.size() == model.probs.size());
    REQUIRE(std::memcmp(back.probs.data(), model.probs.data(),
                        model.probs.size() * sizeof(double)) == 0);

    const PreparedModel merged = prepare_for_conformance(model, rng.unit());
    write_model(merged, path);
    const PreparedModel merged_back = std::get<PreparedModel>(read_model(path));
    REQUIRE(merged_back.alpha == merged.alpha);
    REQUIRE(merged_back.denominator == merged.denominator);
    REQUIRE(std::memcmp(merged_back.probs.data(), merged.probs.data(),
                        merged.probs.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("model read failures are told apart") {
  const auto path = temp_file("sc_model_bad.txt");

  write_text(path, "something-else v9\nalpha=none\nlabels=a\n0\n");
  REQUIRE_THROWS_WITH(read_model(path), Catch::Matchers::ContainsSubstring("version"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n0 1\n");
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n0 1\n1 0 0\n");
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n0 1\n1 0\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n0.9 0.9\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("invariant violation"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n-0.1 0.5\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("invariant violation"));

  write_text(path, "softconform-model v1\nalpha=0.5\nlabels=a,b\n0.9 0.1\n0 0\n");
  // 0.9 > alpha + (1-alpha)/n = 0.75, impossible for a merged matrix
  REQUIRE_THROWS_WITH(read_model(path),
                      Catch::Matchers::ContainsSubstring("invariant violation"));

  write_text(path, "softconform-model v1\nalpha=2\nlabels=a,b\n0 1\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path), Catch::Matchers::ContainsSubstring("alpha"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=b,a\n0 1\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path), Catch::Matchers::ContainsSubstring("sorted"));

  write_text(path, "softconform-model v1\nalpha=none\nlabels=a,b\n0 x\n0 0\n");
  REQUIRE_THROWS_WITH(read_model(path), Catch::Matchers::ContainsSubstring("decimal"));

  write_text(path, "softconform-model v1\nalpha=none\n");
  REQUIRE_THROWS_WITH(read_model(path), Catch::Matchers::ContainsSubstring("truncated"));

  REQUIRE_THROWS_AS(read_model("/nonexistent/model.txt"), IoError);
}

TEST_CASE("labels a model file cannot carry are rejected at write time") {
  DescriptiveModel model{AccomplishmentIndex({"a,b"}), {0.0}};
  REQUIRE_THROWS_AS(write_model(model, temp_file("sc_model_comma.txt")), ValidationError);
}

TEST_CASE("the seeded generator is stable across runs and platforms") {
  SeededRng rng(0);
  REQUIRE(rng.next() == 0xe220a8397b1dcdafull);  // splitmix64 reference output

  SeededRng a(99), b(99);
  std::vector<int> va{1, 2, 3, 4, 5, 6, 7, 8}, vb{1, 2, 3, 4, 5, 6, 7, 8};
  a.shuffle(va);
  b.shuffle(vb);
  REQUIRE(va == vb);

  SeededRng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.unit();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(c.below(7) < 7);
  }
}
