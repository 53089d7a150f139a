#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "divtol/core.hpp"
#include "divtol/error.hpp"

namespace divtol {

/// Fixed-interval timing: bins of bin_width_s tile each interval.
struct StudyLayout {
  double interval_length_s = 60.0;
  double bin_width_s = 5.0;
  std::optional<std::size_t> sessions_expected;

  std::size_t bins() const {
    require(interval_length_s > 0.0 && bin_width_s > 0.0 && std::isfinite(interval_length_s) &&
                std::isfinite(bin_width_s),
            ErrorClass::configuration, "layout: interval length and bin width must be positive");
    const double ratio = interval_length_s / bin_width_s;
    const double rounded = std::round(ratio);
    require(rounded >= 1.0 && std::abs(ratio - rounded) <= 1e-9 * rounded,
            ErrorClass::configuration, "layout: bin width must divide the interval length");
    return static_cast<std::size_t>(rounded);
  }

  std::vector<double> midpoints() const {
    const auto d = bins();
    std::vector<double> m(d);
    for (std::size_t j = 0; j < d; ++j) m[j] = (static_cast<double>(j) + 0.5) * bin_width_s;
    return m;
  }

  /// interval_length - midpoint per bin: (57.5, 52.5, ..., 2.5) for 60 s / 5 s.
  std::vector<double> remaining_time_weights() const {
    auto w = midpoints();
    for (double& x : w) x = interval_length_s - x;
    return w;
  }
};

struct BinnedSession {
  std::string mouse_id;
  std::int64_t session = 1;
  std::vector<std::int64_t> counts;
};

struct PressEvent {
  std::string mouse_id;
  std::int64_t session = 1;
  double press_time_s = 0.0;
};

namespace csv {

/// Splits one line on commas; no quoting.
inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

/// Non-empty lines with their 1-based line numbers; strips a UTF-8 BOM and
/// trailing CR.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (number == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out.emplace_back(number, std::move(line));
  }
  return out;
}

inline std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

inline std::int64_t to_int(std::string_view field, std::size_t line, std::string_view what) {
  std::int64_t v = 0;
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || field.empty())
    throw Error(ErrorClass::parse,
                where(line) + std::string(what) + " '" + std::string(field) + "' is not an integer");
  return v;
}

inline double to_double(std::string_view field, std::size_t line, std::string_view what) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto res = std::from_chars(field.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || field.empty() || !std::isfinite(v))
    throw Error(ErrorClass::parse,
                where(line) + std::string(what) + " '" + std::string(field) + "' is not a number");
  return v;
}

inline void expect_header(const std::vector<std::pair<std::size_t, std::string>>& lines,
                          const std::vector<std::string>& expected, std::string_view file) {
  if (lines.empty()) throw Error(ErrorClass::schema, std::string(file) + ": missing header");
  const auto fields = split(lines.front().second);
  bool ok = fields.size() == expected.size();
  for (std::size_t k = 0; ok && k < fields.size(); ++k) ok = fields[k] == expected[k];
  if (!ok) {
    std::string want;
    for (std::size_t k = 0; k < expected.size(); ++k) want += (k ? "," : "") + expected[k];
    throw Error(ErrorClass::schema, std::string(file) + ": " + where(lines.front().first) +
                                        "expected header '" + want + "'");
  }
}

inline std::ifstream open(const std::string& path, ErrorClass cls = ErrorClass::io) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(cls, "cannot open '" + path + "'");
  return in;
}

}  // namespace csv

using ExposureMap = std::map<std::string, Exposure>;

/// Reads "mouse_id,exposed" rows. Consistent duplicates are tolerated;
/// conflicting ones are a data error.
inline ExposureMap parse_exposures(std::istream& in) {
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, {"mouse_id", "exposed"}, "exposures");
  ExposureMap out;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [line, text] = lines[k];
    const auto f = csv::split(text);
    if (f.size() != 2)
      throw Error(ErrorClass::parse, csv::where(line) + "expected 2 fields, found " +
                                         std::to_string(f.size()));
    if (f[0].empty()) throw Error(ErrorClass::parse, csv::where(line) + "empty mouse_id");
    if (f[1] != "0" && f[1] != "1")
      throw Error(ErrorClass::parse, csv::where(line) + "exposed must be 0 or 1, found '" +
                                         std::string(f[1]) + "'");
    const auto state = f[1] == "1" ? Exposure::exposed : Exposure::control;
    const std::string id(f[0]);
    const auto [it, inserted] = out.emplace(id, state);
    if (!inserted && it->second != state)
      throw Error(ErrorClass::data,
                  csv::where(line) + "conflicting exposure states for mouse '" + id + "'");
  }
  return out;
}

inline ExposureMap parse_exposures(const std::string& path) {
  auto in = csv::open(path, ErrorClass::linkage);
  return parse_exposures(in);
}

inline std::vector<std::string> binned_header(std::size_t bins) {
  std::vector<std::string> h{"mouse_id", "session"};
  for (std::size_t j = 0; j < bins; ++j) h.push_back("b" + std::to_string(j));
  return h;
}

/// Reads "mouse_id,session,b0,...,b{d-1}" rows, bins in ascending time.
inline std::vector<BinnedSession> parse_binned_counts(std::istream& in, const StudyLayout& layout) {
  const auto d = layout.bins();
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, binned_header(d), "binned counts");
  std::vector<BinnedSession> out;
  out.reserve(lines.size() - 1);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [line, text] = lines[k];
    const auto f = csv::split(text);
    if (f.size() != d + 2)
      throw Error(ErrorClass::schema, csv::where(line) + "expected " + std::to_string(d + 2) +
                                          " columns, found " + std::to_string(f.size()));
    if (f[0].empty()) throw Error(ErrorClass::parse, csv::where(line) + "empty mouse_id");
    BinnedSession s;
    s.mouse_id = std::string(f[0]);
    s.session = csv::to_int(f[1], line, "session");
    if (s.session < 1)
      throw Error(ErrorClass::data, csv::where(line) + "session must be at least 1");
    s.counts.reserve(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto c = csv::to_int(f[j + 2], line, "count");
      if (c < 0) throw Error(ErrorClass::data, csv::where(line) + "negative count");
      s.counts.push_back(c);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<BinnedSession> parse_binned_counts(const std::string& path,
                                                      const StudyLayout& layout) {
  auto in = csv::open(path);
  return parse_binned_counts(in, layout);
}

/// Reads "mouse_id,session,press_time_s" rows.
inline std::vector<PressEvent> parse_events(std::istream& in) {
  const auto lines = csv::read_lines(in);
  csv::expect_header(lines, {"mouse_id", "session", "press_time_s"}, "events");
  std::vector<PressEvent> out;
  out.reserve(lines.size() - 1);
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& [line, text] = lines[k];
    const auto f = csv::split(text);
    if (f.size() != 3)
      throw Error(ErrorClass::schema,
                  csv::where(line) + "expected 3 columns, found " + std::to_string(f.size()));
    if (f[0].empty()) throw Error(ErrorClass::parse, csv::where(line) + "empty mouse_id");
    PressEvent e;
    e.mouse_id = std::string(f[0]);
    e.session = csv::to_int(f[1], line, "session");
    if (e.session < 1)
      throw Error(ErrorClass::data, csv::where(line) + "session must be at least 1");
    e.press_time_s = csv::to_double(f[2], line, "press_time_s");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<PressEvent> parse_events(const std::string& path) {
  auto in = csv::open(path);
  return parse_events(in);
}

/// Counts presses per (mouse, session) in interval-relative bins: a press at
/// time t lands in bin floor((t mod interval) / bin_width). Output is ordered
/// by mouse id, then session.
inline std::vector<BinnedSession> bin_events(const std::vector<PressEvent>& events,
                                             const StudyLayout& layout) {
  const auto d = layout.bins();
  std::map<std::pair<std::string, std::int64_t>, std::vector<std::int64_t>> acc;
  for (const auto& e : events) {
    require(std::isfinite(e.press_time_s) && e.press_time_s >= 0.0, ErrorClass::data,
            "bin_events: negative or non-finite press time for mouse '" + e.mouse_id + "'");
    const double within = std::fmod(e.press_time_s, layout.interval_length_s);
    auto bin = static_cast<std::size_t>(std::floor(within / layout.bin_width_s));
    if (bin >= d) bin = d - 1;
    auto& counts = acc[{e.mouse_id, e.session}];
    if (counts.empty()) counts.assign(d, 0);
    ++counts[bin];
  }
  std::vector<BinnedSession> out;
  out.reserve(acc.size());
  for (auto& [key, counts] : acc) out.push_back({key.first, key.second, std::move(counts)});
  return out;
}

using ActionMap = std::map<std::string, std::vector<double>>;

/// Per-mouse componentwise mean over that mouse's observed sessions.
inline ActionMap average_sessions(const std::vector<BinnedSession>& sessions,
                                  const StudyLayout& layout) {
  const auto d = layout.bins();
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::int64_t>> acc;
  for (const auto& s : sessions) {
    require(s.counts.size() == d, ErrorClass::schema,
            "average_sessions: mouse '" + s.mouse_id + "' session " + std::to_string(s.session) +
                " has " + std::to_string(s.counts.size()) + " bins, layout has " +
                std::to_string(d));
    auto& [sum, k] = acc[s.mouse_id];
    if (sum.empty()) sum.assign(d, 0);
    for (std::size_t j = 0; j < d; ++j) sum[j] += s.counts[j];
    ++k;
  }
  ActionMap out;
  for (const auto& [id, entry] : acc) {
    const auto& [sum, k] = entry;
    std::vector<double> mean(d);
    for (std::size_t j = 0; j < d; ++j)
      mean[j] = static_cast<double>(sum[j]) / static_cast<double>(k);
    out.emplace(id, std::move(mean));
  }
  return out;
}

struct Assembly {
  Dataset dataset;
  /// Mice with an exposure record but no action.
  std::vector<std::string> without_actions;
};

/// Joins actions with exposures. Every action needs an exposure record.
inline Assembly assemble_dataset(const ExposureMap& exposures, const ActionMap& actions,
                                 const StudyLayout& layout) {
  const auto d = layout.bins();
  std::vector<std::string> unknown;
  for (const auto& [id, _] : actions)
    if (!exposures.contains(id)) unknown.push_back(id);
  if (!unknown.empty()) {
    std::string ids;
    for (std::size_t k = 0; k < unknown.size(); ++k) ids += (k ? ", " : "") + unknown[k];
    throw Error(ErrorClass::linkage, "actions without exposure records: " + ids);
  }
  Assembly out;
  out.dataset.dimension = d;
  for (const auto& [id, state] : exposures) {
    const auto it = actions.find(id);
    if (it == actions.end()) {
      out.without_actions.push_back(id);
      continue;
    }
    require(it->second.size() == d, ErrorClass::schema,
            "assemble_dataset: action for '" + id + "' has length " +
                std::to_string(it->second.size()) + ", layout has " + std::to_string(d) + " bins");
    out.dataset.observations.push_back({id, state, it->second});
  }
  return out;
}

inline void write_exposures(std::ostream& out, const ExposureMap& exposures) {
  out << "mouse_id,exposed\n";
  for (const auto& [id, s] : exposures) out << id << ',' << (s == Exposure::exposed ? 1 : 0) << '\n';
}

inline void write_binned_counts(std::ostream& out, const std::vector<BinnedSession>& sessions,
                                const StudyLayout& layout) {
  const auto header = binned_header(layout.bins());
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
  out << '\n';
  for (const auto& s : sessions) {
    out << s.mouse_id << ',' << s.session;
    for (auto c : s.counts) out << ',' << c;
    out << '\n';
  }
}

inline void write_events(std::ostream& out, const std::vector<PressEvent>& events) {
  out << "mouse_id,session,press_time_s\n";
  char buf[64];
  for (const auto& e : events) {
    const auto res = std::to_chars(buf, buf + sizeof buf, e.press_time_s);
    out << e.mouse_id << ',' << e.session << ',' << std::string_view(buf, res.ptr - buf) << '\n';
  }
}

}  // namespace divtol
