#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "softconform/csv.hpp"
#include "softconform/errors.hpp"
#include "softconform/event_log.hpp"

namespace softconform {

enum class CsvOrdering { file_order, timestamp_column };

/// How a CSV file maps onto an event log. One row is one event; rows sharing
/// the case column value form one trace. Every other column becomes an event
/// attribute (empty cells mean the attribute is absent). When has_header is
/// false, columns get the synthetic names col1..colN and case_column must
/// name one of those.
struct CsvLogSchema {
  std::string case_column = "case";
  CsvOrdering ordering = CsvOrdering::file_order;
  std::string timestamp_column;  // consulted when ordering == timestamp_column
  char delimiter = ',';
  bool has_header = true;
};

namespace detail {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
inline long long days_from_civil(long long y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long long>(doe) - 719468;
}

/// A sortable instant: (UTC seconds, nanoseconds).
using TimeKey = std::pair<long long, long>;

/// Parses integer epoch seconds or an ISO-8601 subset:
/// YYYY-MM-DD[( |T)hh:mm:ss[.frac]][Z|±hh:mm|±hhmm]. Returns nullopt when the
/// text matches neither form.
inline std::optional<TimeKey> parse_timestamp(std::string_view s) {
  // bare integer epoch (optionally negative)
  {
    long long epoch = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), epoch);
    if (ec == std::errc() && p == s.data() + s.size()) return TimeKey{epoch, 0};
  }
  auto digits = [&](std::size_t pos, std::size_t n, long long& out) {
    if (pos + n > s.size()) return false;
    out = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (s[i] < '0' || s[i] > '9') return false;
      out = out * 10 + (s[i] - '0');
    }
    return true;
  };
  long long year, month, day;
  if (!digits(0, 4, year) || s.size() < 10 || s[4] != '-' || !digits(5, 2, month) ||
      s[7] != '-' || !digits(8, 2, day))
    return std::nullopt;
  if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;
  long long hh = 0, mm = 0, ss = 0;
  long nanos = 0;
  std::size_t pos = 10;
  if (pos < s.size() && (s[pos] == 'T' || s[pos] == ' ')) {
    ++pos;
    if (!digits(pos, 2, hh) || pos + 8 > s.size() || s[pos + 2] != ':' ||
        !digits(pos + 3, 2, mm) || s[pos + 5] != ':' || !digits(pos + 6, 2, ss))
      return std::nullopt;
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    pos += 8;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      long long scale = 100000000;
      std::size_t start = pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
        if (scale > 0) nanos += (s[pos] - '0') * scale;
        scale /= 10;
        ++pos;
      }
      if (pos == start) return std::nullopt;
    }
  }
  long long offset_sec = 0;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      pos = s.size();
    } else if (s[pos] == '+' || s[pos] == '-') {
      const int sign = s[pos] == '+' ? 1 : -1;
      ++pos;
      long long oh, om;
      if (!digits(pos, 2, oh)) return std::nullopt;
      pos += 2;
      if (pos < s.size() && s[pos] == ':') ++pos;
      if (!digits(pos, 2, om)) return std::nullopt;
      pos += 2;
      if (pos != s.size() || oh > 23 || om > 59) return std::nullopt;
      offset_sec = sign * (oh * 3600 + om * 60);
    } else {
      return std::nullopt;
    }
  }
  const long long secs =
      days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
      hh * 3600 + mm * 60 + ss - offset_sec;
  return TimeKey{secs, nanos};
}

inline std::string render_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

inline EventLog read_csv_log(const std::filesystem::path& path, const CsvLogSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  csv::Reader reader(in, schema.delimiter);

  std::vector<std::string> columns;
  if (schema.has_header) {
    auto header = reader.next_record();
    if (!header) throw FormatError(path.string() + ": missing header row");
    columns = std::move(*header);
    std::set<std::string> seen;
    for (const auto& name : columns)
      if (!seen.insert(name).second)
        throw FormatError(path.string() + ": duplicate header name '" + name + "'");
  }

  auto column_index = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
  };

  std::optional<std::size_t> case_idx, ts_idx;
  if (schema.has_header) {
    case_idx = column_index(schema.case_column);
    if (!case_idx)
      throw FormatError(path.string() + ": unknown case column '" + schema.case_column + "'");
    if (schema.ordering == CsvOrdering::timestamp_column) {
      ts_idx = column_index(schema.timestamp_column);
      if (!ts_idx)
        throw FormatError(path.string() + ": unknown timestamp column '" +
                          schema.timestamp_column + "'");
    }
  }

  struct Row {
    detail::TimeKey time{};
    std::size_t file_pos = 0;
    Event event;
  };
  std::unordered_map<std::string, std::vector<Row>> groups;
  std::vector<std::string> group_order;
  std::size_t file_pos = 0;

  while (auto record = reader.next_record()) {
    const std::size_t line = reader.record_line();
    if (columns.empty()) {
      // header-less file: first record fixes the width, columns are col1..colN
      columns.reserve(record->size());
      for (std::size_t i = 0; i < record->size(); ++i)
        columns.push_back("col" + std::to_string(i + 1));
      case_idx = column_index(schema.case_column);
      if (!case_idx)
        throw FormatError(path.string() + ": unknown case column '" + schema.case_column +
                          "' (header-less files use col1..colN)");
      if (schema.ordering == CsvOrdering::timestamp_column) {
        ts_idx = column_index(schema.timestamp_column);
        if (!ts_idx)
          throw FormatError(path.string() + ": unknown timestamp column '" +
                            schema.timestamp_column + "'");
      }
    }
    if (record->size() != columns.size())
      throw FormatError(path.string() + ":" + std::to_string(line) + ": expected " +
                        std::to_string(columns.size()) + " fields, found " +
                        std::to_string(record->size()));
    const std::string& case_id = (*record)[*case_idx];
    if (case_id.empty())
      throw FormatError(path.string() + ":" + std::to_string(line) + ": empty case id");

    Row row;
    row.file_pos = file_pos++;
    if (ts_idx) {
      const std::string& raw = (*record)[*ts_idx];
      auto key = detail::parse_timestamp(raw);
      if (!key)
        throw FormatError(path.string() + ":" + std::to_string(line) +
                          ": timestamp column '" + schema.timestamp_column +
                          "' does not parse as ISO-8601 or epoch: '" + raw + "'");
      row.time = *key;
    }
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i == *case_idx || (*record)[i].empty()) continue;
      row.event.set(columns[i], (*record)[i]);
    }
    auto [it, inserted] = groups.try_emplace(case_id);
    if (inserted) group_order.push_back(case_id);
    it->second.push_back(std::move(row));
  }

  EventLog log;
  for (const std::string& case_id : group_order) {
    auto& rows = groups[case_id];
    if (ts_idx)
      std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.time != b.time ? a.time < b.time : a.file_pos < b.file_pos;
      });
    Trace trace;
    trace.events.reserve(rows.size());
    for (auto& row : rows) trace.events.push_back(std::move(row.event));
    log.add_trace(std::move(trace));
  }
  return log;
}

/// Writes the log deterministically: expanded instances in canonical order
/// with synthetic case ids c1..cN, columns sorted lexicographically with the
/// case column first, RFC-4180 quoting, \n line endings. Events lacking an
/// attribute emit an empty cell.
inline void write_csv_log(const EventLog& log, const std::filesystem::path& path,
                          const CsvLogSchema& schema) {
  std::set<std::string> names;
  for (const auto& [trace, mult] : log.traces())
    for (const Event& e : trace.events)
      for (const auto& [name, value] : e.attributes) names.insert(name);
  if (names.count(schema.case_column))
    throw ValidationError("attribute '" + schema.case_column +
                          "' collides with the case column name");

  std::vector<std::string> columns;
  columns.push_back(schema.case_column);
  columns.insert(columns.end(), names.begin(), names.end());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (schema.has_header) csv::write_record(out, columns, schema.delimiter);

  std::vector<std::string> fields(columns.size());
  for (const CaseInstance& instance : expand_cases(log)) {
    for (const Event& e : instance.trace->events) {
      fields[0] = instance.case_id;
      for (std::size_t i = 1; i < columns.size(); ++i) {
        const std::string* v = e.get(columns[i]);
        fields[i] = v ? *v : std::string();
      }
      csv::write_record(out, fields, schema.delimiter);
    }
  }
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

/// Reads a minimal XES subset: <log>/<trace>/<event> with string/date/int/
/// float attributes. Event `concept:name` maps to attribute `name` and
/// `org:resource` to `originator`; other keys are carried through. Ints and
/// floats are re-rendered as decimals, dates keep their ISO-8601 text.
/// Extensions, globals, classifiers and other attribute types are ignored,
/// as are empty traces.
inline EventLog read_xes_log(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree doc;
  try {
    pt::read_xml(path.string(), doc);
  } catch (const pt::xml_parser_error& e) {
    throw FormatError(path.string() + ":" + std::to_string(e.line()) +
                      ": not well-formed XML: " + e.message());
  }

  const pt::ptree* root = nullptr;
  for (const auto& [key, child] : doc)
    if (key == "log") {
      root = &child;
      break;
    }
  if (!root) throw FormatError(path.string() + ": no <log> root element");

  auto parse_event = [&](const pt::ptree& node, const std::string& where) {
    Event event;
    for (const auto& [key, attr] : node) {
      if (key != "string" && key != "date" && key != "int" && key != "float") continue;
      auto k = attr.get_optional<std::string>("<xmlattr>.key");
      auto v = attr.get_optional<std::string>("<xmlattr>.value");
      if (!k || !v || v->empty()) continue;
      std::string value = *v;
      if (key == "int") {
        long long n = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), n);
        if (ec != std::errc() || p != value.data() + value.size())
          throw FormatError(path.string() + ": " + where + ": int attribute '" + *k +
                            "' has non-integer value '" + value + "'");
        value = std::to_string(n);
      } else if (key == "float") {
        double d = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), d);
        if (ec != std::errc() || p != value.data() + value.size())
          throw FormatError(path.string() + ": " + where + ": float attribute '" + *k +
                            "' has non-numeric value '" + value + "'");
        value = detail::render_double(d);
      }
      std::string name = *k;
      if (name == "concept:name") name = "name";
      else if (name == "org:resource") name = "originator";
      event.attributes.emplace(std::move(name), std::move(value));  // first wins
    }
    return event;
  };

  EventLog log;
  std::size_t child_no = 0, trace_no = 0;
  for (const auto& [key, child] : *root) {
    ++child_no;
    if (key == "event")
      throw FormatError(path.string() + ": event outside a trace (log child " +
                        std::to_string(child_no) + ")");
    if (key != "trace") continue;
    ++trace_no;
    Trace trace;
    std::size_t event_no = 0;
    for (const auto& [tkey, tchild] : child) {
      if (tkey != "event") continue;  // trace-level attributes are grouping metadata
      ++event_no;
      trace.events.push_back(parse_event(
          tchild, "trace " + std::to_string(trace_no) + " event " + std::to_string(event_no)));
    }
    if (!trace.empty()) log.add_trace(std::move(trace));
  }
  return log;
}

}  // namespace softconform
