#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "obm/error.hpp"
#include "obm/linalg.hpp"
#include "obm/markov_data.hpp"
#include "obm/random.hpp"

namespace obm {

/// Header plus string cells, as read from an RFC-4180 file.
struct csv_table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw config_error("csv: missing column '" + std::string(name) + "'");
  }
};

/// Parses RFC-4180 text: comma separated, optional double-quoted fields with
/// "" escapes, CRLF or LF line endings, first record is the header.
inline csv_table parse_csv(std::string_view text) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF)
    text.remove_prefix(3);

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started || !field.empty())
          throw io_error("csv: stray quote on line " + std::to_string(line));
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        ++line;
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(c);
    }
  }
  if (in_quotes) throw io_error("csv: unterminated quoted field");
  if (!field.empty() || field_started || !record.empty()) end_record();
  if (records.empty()) throw io_error("csv: no header row");

  csv_table t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw io_error("csv: record " + std::to_string(r) + " has " +
                     std::to_string(records[r].size()) + " fields, header has " +
                     std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

inline csv_table read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

namespace detail {
inline bool is_missing(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" ||
         s == "NULL" || s == "null";
}

/// Parses one numeric cell. Returns NaN for missing markers; throws on junk.
inline double parse_cell(std::string_view s, std::size_t row, std::string_view col) {
  if (is_missing(s)) return std::nan("");
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw io_error("csv: row " + std::to_string(row) + ", column '" + std::string(col) +
                   "': cannot parse '" + std::string(s) + "'");
  return v;
}

// Linear interpolation between order statistics (type 7).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}
}  // namespace detail

/// What to pull out of a feature table and how to turn it into agents.
struct csv_schema {
  std::string label_column;
  std::vector<std::string> feature_columns;  // empty: every named non-label column
  std::vector<std::string> modifiable_columns;
  std::size_t n_agents = 0;                  // 0: keep every clean row
  double clip_quantile = 0.01;               // clip to [q, 1-q]; 0 disables
  bool standardize = true;
  double alpha = 0.005;
  double lambda = 0.01;
  std::size_t n1 = 1;
  std::uint64_t seed = 0;
};

/// Cleaned numeric view of a feature table.
struct feature_table {
  std::vector<std::string> columns;
  matrix features;
  std::vector<double> labels;  // +/-1
};

inline feature_table clean_features(const csv_table& t, const csv_schema& s) {
  const std::size_t label_idx = t.column(s.label_column);
  std::vector<std::string> names = s.feature_columns;
  if (names.empty()) {
    for (const auto& h : t.header)
      if (h != s.label_column && !h.empty()) names.push_back(h);
  }
  if (names.empty()) throw config_error("csv: no feature columns");
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(t.column(n));
  for (const auto& n : s.modifiable_columns)
    if (std::find(names.begin(), names.end(), n) == names.end())
      throw config_error("csv: modifiable column '" + n + "' is not a feature column");

  std::vector<std::vector<double>> kept;
  std::vector<double> labels;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t line = r + 2;  // 1-based, header is line 1
    const double y = detail::parse_cell(t.rows[r][label_idx], line, s.label_column);
    std::vector<double> row(idx.size());
    bool finite = std::isfinite(y);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      row[j] = detail::parse_cell(t.rows[r][idx[j]], line, names[j]);
      finite = finite && std::isfinite(row[j]);
    }
    if (!finite) continue;
    double label;
    if (y == 1.0) label = 1.0;
    else if (y == 0.0 || y == -1.0) label = -1.0;
    else
      throw io_error("csv: row " + std::to_string(line) + ", column '" + s.label_column +
                     "': label must be 0/1 or -1/+1");
    kept.push_back(std::move(row));
    labels.push_back(label);
  }
  if (kept.empty()) throw io_error("csv: no complete rows after removing missing values");

  feature_table out;
  out.columns = names;
  out.labels = std::move(labels);
  out.features.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j)
      out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kept[i][j];

  for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
    auto col = out.features.col(j);
    if (s.clip_quantile > 0.0) {
      std::vector<double> sorted(col.data(), col.data() + col.size());
      std::sort(sorted.begin(), sorted.end());
      const double lo = detail::quantile_sorted(sorted, s.clip_quantile);
      const double hi = detail::quantile_sorted(sorted, 1.0 - s.clip_quantile);
      col = col.cwiseMax(lo).cwiseMin(hi);
    }
    if (s.standardize) {
      const double mean = col.mean();
      col.array() -= mean;
      const double sd = col.size() > 1 ? std::sqrt(col.squaredNorm() / static_cast<double>(col.size() - 1)) : 0.0;
      if (sd > 0.0) col /= sd;
    }
  }
  return out;
}

/// Reads and cleans a feature table: drops incomplete rows, clips and
/// standardizes each feature, then subsamples n_agents rows with the schema
/// seed.
inline feature_table load_features(const std::string& path, const csv_schema& s) {
  if (!(s.clip_quantile >= 0.0 && s.clip_quantile < 0.5))
    throw config_error("csv: clip_quantile must lie in [0, 0.5)");
  feature_table ft = clean_features(read_csv_file(path), s);
  const auto total = static_cast<std::size_t>(ft.features.rows());
  const std::size_t m = s.n_agents == 0 ? total : s.n_agents;
  if (m > total)
    throw config_error("csv: requested " + std::to_string(m) + " agents but only " +
                       std::to_string(total) + " clean rows");
  if (m == total) return ft;

  std::vector<std::size_t> pick(total);
  for (std::size_t i = 0; i < total; ++i) pick[i] = i;
  rng g(derive_seed(s.seed, 0x637376, 0));
  for (std::size_t i = 0; i < m; ++i)
    std::swap(pick[i], pick[i + static_cast<std::size_t>(g.uniform_index(total - i))]);
  pick.resize(m);
  std::sort(pick.begin(), pick.end());

  feature_table sub;
  sub.columns = ft.columns;
  sub.features.resize(static_cast<Eigen::Index>(m), ft.features.cols());
  sub.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    sub.features.row(static_cast<Eigen::Index>(i)) = ft.features.row(static_cast<Eigen::Index>(pick[i]));
    sub.labels[i] = ft.labels[pick[i]];
  }
  return sub;
}

/// Agents over a cleaned table; stream_seed drives agent selection.
inline agent_population make_population(const feature_table& ft, const csv_schema& s,
                                        std::uint64_t stream_seed) {
  std::vector<bool> mask(ft.columns.size(), false);
  for (std::size_t j = 0; j < ft.columns.size(); ++j)
    mask[j] = std::find(s.modifiable_columns.begin(), s.modifiable_columns.end(),
                        ft.columns[j]) != s.modifiable_columns.end();
  const std::size_t n1 = s.n1 == 0 ? ft.labels.size() : s.n1;
  return agent_population(ft.features, std::move(mask), ft.labels, s.alpha, s.lambda, n1,
                          stream_seed);
}

inline agent_population load_csv(const std::string& path, const csv_schema& s) {
  return make_population(load_features(path, s), s, derive_seed(s.seed, 0x6167656e74, 0));
}

}  // namespace obm
