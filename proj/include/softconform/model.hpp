#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "softconform/errors.hpp"
#include "softconform/event_log.hpp"

namespace softconform {

/// Row sums may drift from 0/1 by at most this much.
inline constexpr double kRowSumEpsilon = 1e-9;

namespace detail {

struct StringHash {
  using is_transparent = void;
  std::size_t operator()(std::string_view s) const noexcept {
    return std::hash<std::string_view>{}(s);
  }
};

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// The ordered label set indexing model rows and columns. Labels are distinct
/// and kept sorted (byte-wise), so the same accomplishments always yield the
/// same matrix layout.
class AccomplishmentIndex {
 public:
  explicit AccomplishmentIndex(std::vector<std::string> labels) : labels_(std::move(labels)) {
    std::sort(labels_.begin(), labels_.end());
    for (std::size_t i = 1; i < labels_.size(); ++i)
      if (labels_[i] == labels_[i - 1])
        throw ValidationError("duplicate accomplishment label '" + labels_[i] + "'");
    if (labels_.empty()) throw ValidationError("accomplishment set must not be empty");
    for (const auto& l : labels_)
      if (l.empty()) throw ValidationError("empty accomplishment label");
    for (std::size_t i = 0; i < labels_.size(); ++i) positions_.emplace(labels_[i], i);
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t i) const { return labels_[i]; }

  std::optional<std::size_t> find(std::string_view label) const {
    auto it = positions_.find(label);
    if (it == positions_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const AccomplishmentIndex& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t, detail::StringHash, std::equal_to<>> positions_;
};

/// Directly-follows frequencies: counts(i, j) is how often label j was
/// observed immediately after label i, weighted by trace multiplicity.
struct CountMatrix {
  AccomplishmentIndex index;
  std::vector<std::uint64_t> counts;  // row-major, size() * size()

  std::uint64_t at(std::size_t i, std::size_t j) const { return counts[i * index.size() + j]; }
  std::uint64_t& at(std::size_t i, std::size_t j) { return counts[i * index.size() + j]; }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (auto c : counts) sum += c;
    return sum;
  }
};

/// A sub-stochastic transition matrix learned from observations: each row
/// sums to 1 (observed successors) or 0 (terminal accomplishment). Row
/// deficit encodes termination.
struct DescriptiveModel {
  AccomplishmentIndex index;
  std::vector<double> probs;  // row-major

  double at(std::size_t i, std::size_t j) const { return probs[i * index.size() + j]; }
};

/// A descriptive model merged with the uniform matrix under weight alpha,
/// ready for conformance checking. `denominator` is the maximum value
/// a merged entry can take, used to normalize scores into [0,1].
struct PreparedModel {
  AccomplishmentIndex index;
  std::vector<double> probs;  // row-major
  double alpha = 1.0;
  double denominator = 1.0;   // alpha + (1 - alpha) / |labels|

  double at(std::size_t i, std::size_t j) const { return probs[i * index.size() + j]; }
};

/// Builds the directly-follows count matrix of the log projected on
/// `attribute`. The index is the sorted set of labels observed anywhere in
/// the projection; pairs are weighted by trace multiplicity.
inline CountMatrix count_directly_follows(const EventLog& log, std::string_view attribute) {
  if (log.empty())
    throw ValidationError("cannot learn from an empty log: no accomplishments to index");
  const ProjectedLog projected = project_log(log, attribute, MissingPolicy::fail);

  std::set<std::string> labels;
  for (const auto& [sequence, mult] : projected)
    for (const auto& label : sequence) labels.insert(label);
  AccomplishmentIndex index(std::vector<std::string>(labels.begin(), labels.end()));

  CountMatrix matrix{index, std::vector<std::uint64_t>(index.size() * index.size(), 0)};
  for (const auto& [sequence, mult] : projected) {
    for (std::size_t k = 0; k + 1 < sequence.size(); ++k) {
      const std::size_t i = *index.find(sequence[k]);
      const std::size_t j = *index.find(sequence[k + 1]);
      matrix.at(i, j) += static_cast<std::uint64_t>(mult);
    }
  }
  return matrix;
}

/// Row-normalizes counts into [0,1]. Rows with no outgoing observations stay
/// all-zero: the accomplishment is terminal and the missing mass is the
/// termination probability.
inline DescriptiveModel normalize_counts(const CountMatrix& counts) {
  const std::size_t n = counts.index.size();
  DescriptiveModel model{counts.index, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t row_total = 0;
    for (std::size_t j = 0; j < n; ++j) row_total += counts.at(i, j);
    if (row_total == 0) continue;
    for (std::size_t j = 0; j < n; ++j)
      model.probs[i * n + j] =
          static_cast<double>(counts.at(i, j)) / static_cast<double>(row_total);
  }
  return model;
}

/// Merges the learned matrix with the uniform matrix (every entry 1/|labels|)
/// under weight alpha. alpha = 1 keeps only the learned behavior, alpha = 0
/// keeps only the uniform one.
inline PreparedModel prepare_for_conformance(const DescriptiveModel& model, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ValidationError("alpha must be within [0,1], got " + detail::format_double(alpha));
  const std::size_t n = model.index.size();
  const double uniform = 1.0 / static_cast<double>(n);
  PreparedModel prepared{model.index, std::vector<double>(n * n), alpha,
                         alpha + (1.0 - alpha) * uniform};
  for (std::size_t k = 0; k < n * n; ++k)
    prepared.probs[k] = alpha * model.probs[k] + (1.0 - alpha) * uniform;
  return prepared;
}

using LoadedModel = std::variant<DescriptiveModel, PreparedModel>;

namespace detail {

inline void check_model_labels(const std::vector<std::string>& labels) {
  for (const auto& label : labels) {
    if (label.empty()) throw ValidationError("model labels must be non-empty");
    if (label.find(',') != std::string::npos || label.find('\n') != std::string::npos ||
        label.find('\r') != std::string::npos)
      throw ValidationError("model label '" + label +
                            "' contains a comma or line break; the model file format "
                            "cannot represent it");
  }
}

inline void write_model_stream(std::ostream& out, const AccomplishmentIndex& index,
                               const std::vector<double>& probs, std::optional<double> alpha) {
  check_model_labels(index.labels());
  out << "softconform-model v1\n";
  out << "alpha=" << (alpha ? format_double(*alpha) : "none") << '\n';
  out << "labels=";
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (i) out << ',';
    out << index.label(i);
  }
  out << '\n';
  const std::size_t n = index.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) out << ' ';
      out << format_double(probs[i * n + j]);
    }
    out << '\n';
  }
  out.flush();
}

inline void write_model_file(const std::filesystem::path& path,
                             const AccomplishmentIndex& index, const std::vector<double>& probs,
                             std::optional<double> alpha) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_model_stream(out, index, probs, alpha);
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace detail

inline void write_model(const DescriptiveModel& model, const std::filesystem::path& path) {
  detail::write_model_file(path, model.index, model.probs, std::nullopt);
}

inline void write_model(const PreparedModel& model, const std::filesystem::path& path) {
  detail::write_model_file(path, model.index, model.probs, model.alpha);
}

inline void write_model(const DescriptiveModel& model, std::ostream& out) {
  detail::write_model_stream(out, model.index, model.probs, std::nullopt);
}

inline void write_model(const PreparedModel& model, std::ostream& out) {
  detail::write_model_stream(out, model.index, model.probs, model.alpha);
}

/// Reads a model file back. Distinct failures: unknown version line, label/
/// dimension mismatch, and row-sum or entry-range invariant violations.
inline LoadedModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  const std::string where = path.string();

  auto next_line = [&](const char* what) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(where + ": truncated file: missing " + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  const std::string version = next_line("version line");
  if (version != "softconform-model v1")
    throw FormatError(where + ": version mismatch: expected 'softconform-model v1', found '" +
                      version + "'");

  const std::string alpha_line = next_line("alpha line");
  if (alpha_line.rfind("alpha=", 0) != 0)
    throw FormatError(where + ": expected 'alpha=' line, found '" + alpha_line + "'");
  std::optional<double> alpha;
  if (const std::string value = alpha_line.substr(6); value != "none") {
    alpha = detail::parse_double(value);
    if (!alpha || !(*alpha >= 0.0 && *alpha <= 1.0))
      throw FormatError(where + ": alpha must be a decimal in [0,1] or 'none', found '" +
                        value + "'");
  }

  const std::string labels_line = next_line("labels line");
  if (labels_line.rfind("labels=", 0) != 0)
    throw FormatError(where + ": expected 'labels=' line, found '" + labels_line + "'");
  std::vector<std::string> labels;
  {
    std::string_view rest = std::string_view(labels_line).substr(7);
    while (true) {
      const std::size_t comma = rest.find(',');
      labels.emplace_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  if (labels.size() == 1 && labels[0].empty())
    throw FormatError(where + ": empty label list");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw FormatError(where + ": empty label at position " +
                                             std::to_string(i + 1));
    if (i > 0 && !(labels[i - 1] < labels[i]))
      throw FormatError(where + ": labels must be distinct and lexicographically sorted");
  }

  const std::size_t n = labels.size();
  std::vector<double> probs;
  probs.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string line;
    if (!std::getline(in, line))
      throw FormatError(where + ": dimension mismatch: " + std::to_string(n) +
                        " labels but only " + std::to_string(i) + " matrix rows");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::string token;
    std::size_t j = 0;
    while (row >> token) {
      auto v = detail::parse_double(token);
      if (!v)
        throw FormatError(where + ": row " + std::to_string(i + 1) + ": '" + token +
                          "' is not a decimal");
      probs.push_back(*v);
      ++j;
    }
    if (j != n)
      throw FormatError(where + ": dimension mismatch: row " + std::to_string(i + 1) + " has " +
                        std::to_string(j) + " values, expected " + std::to_string(n));
  }
  {
    std::string trailing;
    while (std::getline(in, trailing)) {
      if (!trailing.empty() && trailing.back() == '\r') trailing.pop_back();
      if (!trailing.empty())
        throw FormatError(where + ": dimension mismatch: trailing content after " +
                          std::to_string(n) + " matrix rows");
    }
  }

  AccomplishmentIndex index(labels);
  const double entry_cap = alpha ? *alpha + (1.0 - *alpha) / static_cast<double>(n) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = probs[i * n + j];
      if (v < 0.0 || v > entry_cap + kRowSumEpsilon)
        throw FormatError(where + ": invariant violation: entry (" + std::to_string(i + 1) +
                          "," + std::to_string(j + 1) + ") = " + detail::format_double(v) +
                          " outside [0," + detail::format_double(entry_cap) + "]");
      row_sum += v;
    }
    if (row_sum > 1.0 + kRowSumEpsilon)
      throw FormatError(where + ": invariant violation: row " + std::to_string(i + 1) +
                        " sums to " + detail::format_double(row_sum) + " > 1");
  }

  if (alpha)
    return PreparedModel{std::move(index), std::move(probs), *alpha, entry_cap};
  return DescriptiveModel{std::move(index), std::move(probs)};
}

}  // namespace softconform
