#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "softconform/errors.hpp"

namespace softconform::csv {

/// RFC-4180 record reader with a configurable delimiter. Quoted fields may
/// contain delimiters, quotes ("" escapes) and line breaks. Accepts both \n
/// and \r\n line endings.
class Reader {
 public:
  explicit Reader(std::istream& in, char delimiter = ',')
      : in_(in), delimiter_(delimiter) {}

  /// Line number (1-based) at which the last returned record started.
  std::size_t record_line() const { return record_line_; }

  /// Reads one record; std::nullopt at end of input. A lone trailing newline
  /// does not produce an empty record.
  std::optional<std::vector<std::string>> next_record() {
    int c = in_.get();
    if (c == std::char_traits<char>::eof()) return std::nullopt;
    record_line_ = line_;

    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;

    auto end_field = [&] {
      fields.push_back(std::move(field));
      field.clear();
    };

    while (true) {
      if (c == std::char_traits<char>::eof()) {
        if (quoted)
          throw FormatError("unterminated quoted field starting at line " +
                            std::to_string(record_line_));
        end_field();
        return fields;
      }
      const char ch = static_cast<char>(c);
      if (quoted) {
        if (ch == '"') {
          const int peek = in_.peek();
          if (peek == '"') {
            in_.get();
            field.push_back('"');
          } else {
            quoted = false;
          }
        } else {
          if (ch == '\n') ++line_;
          field.push_back(ch);
        }
      } else if (ch == '"' && field.empty()) {
        quoted = true;
      } else if (ch == delimiter_) {
        end_field();
      } else if (ch == '\n') {
        ++line_;
        if (!field.empty() && field.back() == '\r') field.pop_back();
        end_field();
        return fields;
      } else {
        field.push_back(ch);
      }
      c = in_.get();
    }
  }

 private:
  std::istream& in_;
  char delimiter_;
  std::size_t line_ = 1;
  std::size_t record_line_ = 1;
};

inline bool needs_quoting(std::string_view field, char delimiter) {
  for (char c : field)
    if (c == delimiter || c == '"' || c == '\n' || c == '\r') return true;
  return false;
}

inline std::string escape_field(std::string_view field, char delimiter) {
  if (!needs_quoting(field, delimiter)) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_record(std::ostream& out, std::span<const std::string> fields,
                         char delimiter = ',') {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.put(delimiter);
    out << escape_field(fields[i], delimiter);
  }
  out.put('\n');
}

}  // namespace softconform::csv
