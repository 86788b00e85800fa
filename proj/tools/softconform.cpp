// Command line front end: learn models from logs, prepare them for
// conformance checking, score logs offline, monitor TCP streams online,
// replay logs as streams, benchmark throughput, and correlate scores with
// external per-case metrics.
//
// Data goes to stdout (or --out); diagnostics go to stderr. Exit codes:
// 0 success, 2 bad arguments or invalid inputs, 1 runtime failures.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "softconform/softconform.hpp"

namespace sc = softconform;

namespace {

struct LogOptions {
  std::string path;
  std::string format = "auto";  // auto, csv, xes
  std::string attribute = "name";
  std::string case_column = "case";
  std::string timestamp_column;
  std::string delimiter = ",";
  bool no_header = false;
};

void add_log_options(CLI::App* cmd, LogOptions& opt) {
  cmd->add_option("log", opt.path, "event log file")->required();
  cmd->add_option("--format", opt.format, "log format: auto, csv or xes (auto goes by extension)")
      ->check(CLI::IsMember({"auto", "csv", "xes"}));
  cmd->add_option("--attribute", opt.attribute,
                  "event attribute holding the accomplishment (default: name)");
  cmd->add_option("--case-column", opt.case_column,
                  "CSV column holding the case id (default: case)");
  cmd->add_option("--timestamp-column", opt.timestamp_column,
                  "CSV column to sort events by; omit to keep file order");
  cmd->add_option("--delimiter", opt.delimiter, "CSV field delimiter (default: ,)");
  cmd->add_flag("--no-header", opt.no_header,
                "CSV file has no header row; columns are named col1..colN");
}

sc::EventLog load_log(const LogOptions& opt) {
  const bool xes = opt.format == "xes" ||
                   (opt.format == "auto" && opt.path.size() > 4 &&
                    opt.path.substr(opt.path.size() - 4) == ".xes");
  if (xes) return sc::read_xes_log(opt.path);
  if (opt.delimiter.size() != 1)
    throw sc::ValidationError("delimiter must be a single character");
  sc::CsvLogSchema schema;
  schema.case_column = opt.case_column;
  schema.delimiter = opt.delimiter[0];
  schema.has_header = !opt.no_header;
  if (!opt.timestamp_column.empty()) {
    schema.ordering = sc::CsvOrdering::timestamp_column;
    schema.timestamp_column = opt.timestamp_column;
  }
  return sc::read_csv_log(opt.path, schema);
}

/// stdout unless --out names a file.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw sc::IoError("cannot open '" + path + "' for writing");
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

sc::ReplaySchedule parse_schedule(const std::string& text) {
  sc::ReplaySchedule schedule;
  if (text == "sequential") {
    schedule.mode = sc::ReplayMode::sequential;
  } else if (text == "round-robin") {
    schedule.mode = sc::ReplayMode::round_robin;
  } else if (text == "shuffle" || text.rfind("shuffle:", 0) == 0) {
    schedule.mode = sc::ReplayMode::shuffle;
    if (text.size() > 8) {
      try {
        schedule.seed = std::stoull(text.substr(8));
      } catch (const std::exception&) {
        throw sc::ValidationError("bad shuffle seed in '" + text + "'");
      }
    }
  } else {
    throw sc::ValidationError(
        "schedule must be sequential, round-robin, shuffle or shuffle:SEED, got '" + text +
        "'");
  }
  return schedule;
}

sc::UnknownPolicy parse_policy(const std::string& text) {
  if (text == "zero") return sc::UnknownPolicy::zero;
  if (text == "uniform-floor") return sc::UnknownPolicy::uniform_floor;
  throw sc::ValidationError("unknown-label policy must be zero or uniform-floor, got '" + text +
                            "'");
}

sc::PreparedModel require_prepared(sc::LoadedModel&& loaded, std::optional<double> alpha,
                                   const std::string& model_path) {
  if (auto* prepared = std::get_if<sc::PreparedModel>(&loaded)) {
    if (alpha)
      throw sc::ValidationError("'" + model_path + "' is already prepared (alpha=" +
                                sc::detail::format_double(prepared->alpha) +
                                "); --alpha does not apply");
    return std::move(*prepared);
  }
  if (!alpha)
    throw sc::ValidationError("'" + model_path +
                              "' holds learned probabilities only; pass --alpha or run "
                              "'prepare' first");
  return sc::prepare_for_conformance(std::get<sc::DescriptiveModel>(loaded), *alpha);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"soft conformance over event logs and streams"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("--quiet,-q", quiet, "suppress diagnostics on stderr");

  // learn
  LogOptions learn_log;
  std::string learn_out;
  std::optional<double> learn_alpha;
  CLI::App* learn = app.add_subcommand(
      "learn", "learn a transition model from a log's directly-follows counts");
  add_log_options(learn, learn_log);
  learn->add_option("--alpha", learn_alpha,
                    "also merge with the uniform matrix at this weight, writing a "
                    "conformance-ready model");
  learn->add_option("--out", learn_out, "write the model here instead of stdout");

  // prepare
  std::string prepare_model_path, prepare_out;
  double prepare_alpha = 0.0;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "merge a learned model with the uniform matrix for conformance checking");
  prepare->add_option("model", prepare_model_path, "learned model file")->required();
  prepare->add_option("--alpha", prepare_alpha, "weight of the learned matrix, in [0,1]")
      ->required();
  prepare->add_option("--out", prepare_out, "write the model here instead of stdout");

  // check
  std::string check_model_path, check_out, check_policy = "zero";
  std::optional<double> check_alpha;
  LogOptions check_log_opt;
  CLI::App* check = app.add_subcommand("check", "score every case of a log offline");
  check->add_option("model", check_model_path, "conformance-ready model file")->required();
  add_log_options(check, check_log_opt);
  check->add_option("--alpha", check_alpha, "prepare a learned model on the fly");
  check->add_option("--unknown", check_policy,
                    "value of transitions with labels the model lacks: zero or uniform-floor");
  check->add_option("--out", check_out, "write scores here instead of stdout");

  // monitor
  std::string mon_model_path, mon_listen, mon_replay, mon_out, mon_final;
  std::string mon_schedule = "sequential", mon_policy = "zero";
  std::optional<double> mon_alpha;
  std::size_t mon_capacity = 1000, mon_flush = 100;
  bool mon_forever = false;
  LogOptions mon_log;  // used by --replay
  CLI::App* monitor = app.add_subcommand(
      "monitor", "score an event stream online, one notification line per event");
  monitor->add_option("model", mon_model_path, "conformance-ready model file")->required();
  CLI::Option* listen_opt =
      monitor->add_option("--listen", mon_listen, "ingest from TCP on host:port");
  CLI::Option* replay_opt =
      monitor->add_option("--replay", mon_replay, "ingest by replaying this log file");
  listen_opt->excludes(replay_opt);
  monitor->add_option("--schedule", mon_schedule,
                      "replay interleaving: sequential, round-robin or shuffle:SEED");
  monitor->add_option("--m,--capacity", mon_capacity,
                      "most cases tracked at once (default: 1000)");
  monitor->add_option("--unknown", mon_policy,
                      "value of transitions with labels the model lacks: zero or uniform-floor");
  monitor->add_option("--flush-every", mon_flush,
                      "notification lines per flush (default: 100)");
  monitor->add_flag("--forever", mon_forever,
                    "keep listening after clients disconnect (stop with SIGINT)");
  monitor->add_option("--alpha", mon_alpha, "prepare a learned model on the fly");
  monitor->add_option("--attribute", mon_log.attribute,
                      "event attribute holding the accomplishment (default: name)");
  monitor->add_option("--format", mon_log.format, "replay log format: auto, csv or xes")
      ->check(CLI::IsMember({"auto", "csv", "xes"}));
  monitor->add_option("--case-column", mon_log.case_column, "replay CSV case id column");
  monitor->add_option("--timestamp-column", mon_log.timestamp_column,
                      "replay CSV column to sort events by");
  monitor->add_option("--delimiter", mon_log.delimiter, "replay CSV delimiter");
  monitor->add_flag("--no-header", mon_log.no_header, "replay CSV has no header row");
  monitor->add_option("--out", mon_out, "write notifications here instead of stdout");
  monitor->add_option("--final-scores", mon_final,
                      "when done, also write final per-case scores to this CSV file");

  // emit
  std::string emit_to, emit_schedule = "sequential";
  double emit_rate = 0.0;
  LogOptions emit_log;
  CLI::App* emit = app.add_subcommand("emit", "stream a log to a TCP listener");
  add_log_options(emit, emit_log);
  emit->add_option("--to", emit_to, "listener address host:port")->required();
  emit->add_option("--schedule", emit_schedule,
                   "interleaving: sequential, round-robin or shuffle:SEED");
  emit->add_option("--rate", emit_rate, "events per second; 0 streams flat out");

  // bench
  std::string bench_source = "synthetic", bench_out, bench_model_path;
  double bench_duration = 10.0, bench_alpha = 0.8;
  std::size_t bench_capacity = 1000, bench_activities = 20, bench_pool = 500;
  std::uint64_t bench_seed = 1;
  LogOptions bench_log;
  CLI::App* bench = app.add_subcommand("bench", "measure checker throughput");
  bench->add_option("--source", bench_source,
                    "synthetic (in process), loopback (through TCP) or replay:PATH");
  bench->add_option("--duration", bench_duration, "seconds to run (default: 10)");
  bench->add_option("--m,--capacity", bench_capacity,
                    "most cases tracked at once (default: 1000)");
  bench->add_option("--seed", bench_seed, "generator seed (default: 1)");
  bench->add_option("--activities", bench_activities,
                    "synthetic model size (default: 20)");
  bench->add_option("--alpha", bench_alpha, "synthetic model merge weight (default: 0.8)");
  bench->add_option("--case-pool", bench_pool,
                    "synthetic cases in flight at once (default: 500)");
  bench->add_option("--model", bench_model_path, "model file for replay:PATH");
  bench->add_option("--attribute", bench_log.attribute, "replay accomplishment attribute");
  bench->add_option("--case-column", bench_log.case_column, "replay CSV case id column");
  bench->add_option("--out", bench_out, "write the bucket report here instead of stdout");

  // correlate
  std::string corr_scores, corr_reference, corr_metric = "metric", corr_out;
  CLI::App* correlate = app.add_subcommand(
      "correlate", "Pearson correlation between scores and an external per-case metric");
  correlate->add_option("scores", corr_scores, "scores CSV from 'check' or --final-scores")
      ->required();
  correlate->add_option("reference", corr_reference, "CSV with case_id and a metric column")
      ->required();
  correlate->add_option("--metric-column", corr_metric,
                        "metric column name (default: metric)");
  correlate->add_option("--out", corr_out, "write the result here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::ostream* diag = quiet ? nullptr : &std::cerr;
  try {
    if (app.got_subcommand(learn)) {
      const sc::EventLog log = load_log(learn_log);
      const sc::DescriptiveModel model =
          sc::normalize_counts(sc::count_directly_follows(log, learn_log.attribute));
      Output out(learn_out);
      if (learn_alpha)
        sc::write_model(sc::prepare_for_conformance(model, *learn_alpha), out.stream());
      else
        sc::write_model(model, out.stream());
      if (diag)
        *diag << "learned " << model.index.size() << " accomplishments from "
              << log.trace_count() << " cases\n";

    } else if (app.got_subcommand(prepare)) {
      sc::LoadedModel loaded = sc::read_model(prepare_model_path);
      if (std::holds_alternative<sc::PreparedModel>(loaded))
        throw sc::ValidationError("'" + prepare_model_path +
                                  "' is already prepared; learn a fresh model to change alpha");
      const sc::PreparedModel prepared =
          sc::prepare_for_conformance(std::get<sc::DescriptiveModel>(loaded), prepare_alpha);
      Output out(prepare_out);
      sc::write_model(prepared, out.stream());

    } else if (app.got_subcommand(check)) {
      const sc::PreparedModel model =
          require_prepared(sc::read_model(check_model_path), check_alpha, check_model_path);
      const sc::EventLog log = load_log(check_log_opt);
      const auto scores =
          sc::check_log(model, log, check_log_opt.attribute, parse_policy(check_policy));
      Output out(check_out);
      sc::write_scores_csv(scores, out.stream());

    } else if (app.got_subcommand(monitor)) {
      const sc::PreparedModel model =
          require_prepared(sc::read_model(mon_model_path), mon_alpha, mon_model_path);
      sc::SoftConformanceChecker checker(
          model, sc::CheckerConfig{mon_capacity, parse_policy(mon_policy)});
      Output out(mon_out);
      sc::NotificationWriter writer(out.stream(), mon_flush);

      if (!mon_listen.empty()) {
        sc::TcpListener listener(mon_listen);
        if (diag) *diag << "listening on port " << listener.port() << "\n";
        sc::ListenOptions options;
        options.keep_listening = mon_forever;
        options.diagnostics = diag;
        const sc::ListenStats stats = listener.run(
            [&](const sc::WireEvent& event) {
              writer.write(checker.process(event.case_id, event.accomplishment));
            },
            options);
        writer.flush();
        if (diag)
          *diag << "ingested " << stats.events << " events (" << stats.malformed
                << " malformed) over " << stats.connections << " connections\n";
      } else if (!mon_replay.empty()) {
        const sc::ReplaySchedule schedule = parse_schedule(mon_schedule);
        mon_log.path = mon_replay;
        const sc::EventLog log = load_log(mon_log);
        const auto events = sc::replay_log(log, mon_log.attribute, schedule);
        if (diag && schedule.mode == sc::ReplayMode::shuffle)
          *diag << "shuffle seed " << schedule.seed << "\n";
        for (const auto& event : events)
          writer.write(checker.process(event.case_id, event.accomplishment));
        writer.flush();
      } else {
        throw sc::ValidationError("monitor needs --listen or --replay");
      }

      if (!mon_final.empty()) {
        std::ofstream final_out(mon_final, std::ios::binary | std::ios::trunc);
        if (!final_out)
          throw sc::IoError("cannot open '" + mon_final + "' for writing");
        sc::write_scores_csv(checker.final_scores(), final_out);
      }

    } else if (app.got_subcommand(emit)) {
      const sc::ReplaySchedule schedule = parse_schedule(emit_schedule);
      const sc::EventLog log = load_log(emit_log);
      const auto events = sc::replay_log(log, emit_log.attribute, schedule);
      const sc::EmitReport report = sc::emit_tcp(events, emit_to, emit_rate);
      if (diag)
        *diag << "sent " << report.events_sent << " events in "
              << sc::detail::format_double(report.seconds) << "s ("
              << sc::detail::format_double(report.achieved_rate) << "/s)\n";

    } else if (app.got_subcommand(bench)) {
      sc::ThroughputReport report;
      if (bench_source == "synthetic" || bench_source == "loopback") {
        const sc::PreparedModel model = sc::prepare_for_conformance(
            sc::normalize_counts(sc::synthetic_process_counts(bench_activities, bench_seed)),
            bench_alpha);
        if (bench_source == "synthetic") {
          sc::SyntheticStreamSource source(model, bench_pool, bench_seed);
          report = sc::stress(model, source, bench_duration, bench_capacity);
        } else {
          report = sc::run_loopback_bench(model, bench_duration, bench_capacity, bench_seed,
                                          bench_pool);
        }
      } else if (bench_source.rfind("replay:", 0) == 0) {
        if (bench_model_path.empty())
          throw sc::ValidationError("--source replay:PATH needs --model");
        const sc::PreparedModel model = require_prepared(sc::read_model(bench_model_path),
                                                         std::nullopt, bench_model_path);
        bench_log.path = bench_source.substr(7);
        const sc::EventLog log = load_log(bench_log);
        const auto events = sc::replay_log(log, bench_log.attribute, sc::ReplaySchedule{});
        sc::SoftConformanceChecker checker(model, sc::CheckerConfig{bench_capacity, {}});
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        for (const auto& event : events) {
          checker.process(event.case_id, event.accomplishment);
          const auto bucket = static_cast<std::size_t>(
              std::chrono::duration<double>(clock::now() - start).count());
          if (bucket >= report.events_per_second.size())
            report.events_per_second.resize(bucket + 1, 0);
          ++report.events_per_second[bucket];
        }
        report.events_processed = checker.events_processed();
        report.peak_case_map_size = checker.peak_case_count();
        report.duration_seconds =
            std::chrono::duration<double>(clock::now() - start).count();
      } else {
        throw sc::ValidationError("source must be synthetic, loopback or replay:PATH, got '" +
                                  bench_source + "'");
      }
      Output out(bench_out);
      sc::write_throughput_csv(report, out.stream());
      if (diag) {
        const double rate = report.duration_seconds > 0
                                ? static_cast<double>(report.events_processed) /
                                      report.duration_seconds
                                : 0.0;
        *diag << "processed " << report.events_processed << " events at "
              << sc::detail::format_double(rate) << "/s, peak cases "
              << report.peak_case_map_size << "\n";
      }

    } else if (app.got_subcommand(correlate)) {
      sc::JoinStats stats;
      const auto pairs = sc::join_scores(corr_scores, corr_reference, corr_metric, &stats, diag);
      const sc::PearsonResult result = sc::pearson(pairs);
      Output out(corr_out);
      out.stream() << "r,p_value,n\n"
                   << sc::detail::format_double(result.r) << ','
                   << sc::detail::format_double(result.p_value) << ',' << result.n << '\n';
      if (diag)
        *diag << "matched " << stats.matched << " cases (" << stats.pending_excluded
              << " pending, " << stats.unmatched_scores << "+" << stats.unmatched_reference
              << " unmatched)\n";
    }
  } catch (const sc::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
