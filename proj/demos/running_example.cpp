// End-to-end tour on the bundled running example: learn a model from a CSV
// log, blend it for checking, score the log offline, then feed the same
// events through the online checker one at a time.

#include <iostream>

#include "softconform/softconform.hpp"

using namespace softconform;

int main(int argc, char** argv) {
  const std::string path = argc > 1 ? argv[1] : "data/running_example.csv";

  EventLog log = read_csv_log(path, CsvLogSchema{});
  std::cout << "log: " << log.trace_count() << " cases, " << log.event_count()
            << " events\n\n";

  CountMatrix counts = count_directly_follows(log, "name");
  std::cout << "directly-follows counts:\n";
  for (std::size_t i = 0; i < counts.index.size(); ++i)
    for (std::size_t j = 0; j < counts.index.size(); ++j)
      if (counts.at(i, j) > 0)
        std::cout << "  " << counts.index.label(i) << " > " << counts.index.label(j)
                  << "  " << counts.at(i, j) << "\n";

  DescriptiveModel learned = normalize_counts(counts);
  PreparedModel model = prepare_for_conformance(learned, 0.5);
  std::cout << "\nblended matrix (alpha=0.5, denominator "
            << detail::format_double(model.denominator) << "):\n";
  for (std::size_t i = 0; i < model.index.size(); ++i) {
    std::cout << " ";
    for (std::size_t j = 0; j < model.index.size(); ++j)
      std::cout << " " << detail::format_double(model.at(i, j));
    std::cout << "\n";
  }

  std::cout << "\noffline scores:\n";
  for (const auto& [case_id, fs] : check_log(model, log, "name"))
    std::cout << "  " << case_id << "  "
              << (fs.score ? detail::format_double(*fs.score) : "pending") << "  ("
              << fs.observations << " transitions)\n";

  // same thing, event by event, as a monitor would see it
  std::cout << "\nonline replay (round-robin):\n";
  SoftConformanceChecker checker(model, CheckerConfig{4, {}});
  for (const auto& event :
       replay_log(log, "name", ReplaySchedule{ReplayMode::round_robin, 0, 0})) {
    const auto note = checker.process(event.case_id, event.accomplishment);
    std::cout << "  " << event.case_id << " did " << event.accomplishment << "  -> "
              << (note.score ? detail::format_double(*note.score) : "pending") << "\n";
  }
  return 0;
}
