#ifndef NDIFF_IO_HPP
#define NDIFF_IO_HPP

// CSV ingestion and emission for the command-line tool.
//
// Input is `t,y` with one measurement per row; rows sharing a t value become
// simultaneous measurements at one abscissa.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ndiff/errors.hpp"
#include "ndiff/kalman.hpp"
#include "ndiff/linalg.hpp"

namespace ndiff::io {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline bool parse_number(std::string_view field, double& out) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

/// Reads the next line, stripping a UTF-8 BOM on the first one and any CR.
inline bool next_line(std::istream& in, std::string& line, std::size_t& lineno) {
  if (!std::getline(in, line)) return false;
  ++lineno;
  if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return in;
}

}  // namespace detail

inline TimeSeries parse_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (detail::next_line(in, line, lineno)) {
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    std::string header;
    for (char c : text)
      if (c != ' ' && c != '\t') header.push_back(c);
    if (header != "t,y") throw ParseError("expected header \"t,y\"", lineno);
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError("empty input", 0);

  std::vector<double> abscissas;
  std::vector<std::vector<double>> measurements;
  while (detail::next_line(in, line, lineno)) {
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto comma = text.find(',');
    if (comma == std::string_view::npos || text.find(',', comma + 1) != std::string_view::npos)
      throw ParseError("expected two fields", lineno);
    double t = 0.0, y = 0.0;
    if (!detail::parse_number(text.substr(0, comma), t) || !detail::parse_number(text.substr(comma + 1), y))
      throw ParseError("non-numeric field", lineno);
    if (!abscissas.empty() && t < abscissas.back()) throw ParseError("abscissas must be nondecreasing", lineno);
    if (abscissas.empty() || t != abscissas.back()) {
      abscissas.push_back(t);
      measurements.emplace_back();
    }
    measurements.back().push_back(y);
  }
  if (abscissas.empty()) throw ParseError("no data rows", 0);
  return TimeSeries(std::move(abscissas), std::move(measurements));
}

inline TimeSeries parse_input(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_csv(in);
}

/// Query times, one per line, with an optional `t` header. Returned sorted.
inline std::vector<double> parse_times(std::istream& in) {
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (detail::next_line(in, line, lineno)) {
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    if (out.empty() && text == "t") continue;
    double t = 0.0;
    if (!detail::parse_number(text, t)) throw ParseError("non-numeric time", lineno);
    out.push_back(t);
  }
  if (out.empty()) throw ParseError("no query times", 0);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<double> parse_times(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_times(in);
}

/// 17 significant digits: every double survives a write/read cycle.
inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

struct OutputRow {
  double t;
  Vector mean;  // x_0..x_{d-1}
  Vector sd;    // posterior standard deviations
};

inline OutputRow make_row(double t, const Vector& mean, const Matrix& cov) {
  return {t, mean, cov.diagonal().cwiseMax(0.0).cwiseSqrt()};
}

inline void write_rows(std::ostream& out, const std::vector<OutputRow>& rows, int d) {
  out << "t";
  for (int j = 0; j < d; ++j) out << ",x" << j;
  for (int j = 0; j < d; ++j) out << ",sd" << j;
  out << '\n';
  for (const auto& row : rows) {
    out << format_double(row.t);
    for (int j = 0; j < d; ++j) out << ',' << format_double(row.mean(j));
    for (int j = 0; j < d; ++j) out << ',' << format_double(row.sd(j));
    out << '\n';
  }
}

}  // namespace ndiff::io

#endif  // NDIFF_IO_HPP
