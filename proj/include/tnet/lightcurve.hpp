#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "tnet/error.hpp"
#include "tnet/io_util.hpp"
#include "tnet/model.hpp"
#include "tnet/spline.hpp"

namespace tnet {

struct LightCurve {
  std::vector<double> time;  // days
  std::vector<double> flux;
};

inline void validate_light_curve(const LightCurve& lc) {
  if (lc.time.size() != lc.flux.size())
    fail(ErrorCategory::argument, "light curve time/flux lengths differ");
  if (lc.time.size() < 2)
    fail(ErrorCategory::argument, "light curve needs at least 2 points");
  for (std::size_t i = 0; i < lc.time.size(); ++i) {
    if (!std::isfinite(lc.time[i]) || !std::isfinite(lc.flux[i]))
      fail(ErrorCategory::argument, "light curve has non-finite values at row " + std::to_string(i));
    if (i > 0 && !(lc.time[i] > lc.time[i - 1]))
      fail(ErrorCategory::argument,
           "light curve time must be strictly increasing at row " + std::to_string(i));
  }
}

enum class LabelRaw { PC, AFP, NTP, UNK };

inline const char* to_string(LabelRaw l) {
  switch (l) {
    case LabelRaw::PC: return "PC";
    case LabelRaw::AFP: return "AFP";
    case LabelRaw::NTP: return "NTP";
    case LabelRaw::UNK: return "UNK";
  }
  return "UNK";
}

inline LabelRaw label_from_string(const std::string& s) {
  if (s == "PC") return LabelRaw::PC;
  if (s == "AFP") return LabelRaw::AFP;
  if (s == "NTP") return LabelRaw::NTP;
  if (s == "UNK") return LabelRaw::UNK;
  fail(ErrorCategory::argument, "unknown label '" + s + "'");
}

struct TceMeta {
  double period_days = 0.0;
  double epoch_days = 0.0;
  double duration_hours = 0.0;
  LabelRaw label_raw = LabelRaw::UNK;

  double duration_days() const { return duration_hours / 24.0; }
};

inline void validate_tce_meta(const TceMeta& m) {
  if (!(m.period_days > 0.0))
    fail(ErrorCategory::argument, "tce period must be > 0 days");
  if (!(m.duration_hours > 0.0))
    fail(ErrorCategory::argument, "tce duration must be > 0 hours");
  if (!(m.duration_days() < m.period_days))
    fail(ErrorCategory::argument, "tce duration must be shorter than its period");
}

// Phase in [-period/2, period/2) with the transit center at 0.
inline std::vector<double> fold(const std::vector<double>& time, double period, double t0) {
  if (!(period > 0.0))
    fail(ErrorCategory::argument, "fold needs period > 0");
  std::vector<double> phases(time.size());
  double half = period / 2.0;
  for (std::size_t i = 0; i < time.size(); ++i) {
    double ph = std::fmod(time[i] - t0 + half, period);
    if (ph < 0.0) ph += period;
    if (ph >= period) ph = 0.0;
    phases[i] = ph - half;
  }
  return phases;
}

inline double median_of(std::vector<double> v) {
  std::size_t n = v.size();
  std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (n % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + mid);
  return (lo + hi) / 2.0;
}

// Median binning over [lo, hi); empty bins are filled by linear
// interpolation between their nearest non-empty neighbours (copied at
// the edges).
inline std::vector<double> bin_view(const std::vector<double>& phases,
                                    const std::vector<double>& flux, int n_bins, double lo,
                                    double hi) {
  if (phases.size() != flux.size())
    fail(ErrorCategory::dimension, "bin_view needs equal-length phases and flux");
  if (n_bins < 1)
    fail(ErrorCategory::argument, "bin_view needs n_bins >= 1");
  if (!(lo < hi))
    fail(ErrorCategory::argument, "bin_view needs lo < hi");
  double width = (hi - lo) / n_bins;
  std::vector<std::vector<double>> members(n_bins);
  for (std::size_t i = 0; i < phases.size(); ++i) {
    double ph = phases[i];
    if (ph < lo || ph >= hi) continue;
    int idx = int((ph - lo) / width);
    if (idx < 0) idx = 0;
    if (idx > n_bins - 1) idx = n_bins - 1;
    members[idx].push_back(flux[i]);
  }
  std::vector<double> out(n_bins, 0.0);
  std::vector<char> filled(n_bins, 0);
  int n_filled = 0;
  for (int i = 0; i < n_bins; ++i) {
    if (members[i].empty()) continue;
    out[i] = median_of(std::move(members[i]));
    filled[i] = 1;
    ++n_filled;
  }
  if (n_filled == 0)
    fail(ErrorCategory::preprocessing, "bin_view: all bins empty");
  int prev = -1;
  int next = 0;
  for (int i = 0; i < n_bins; ++i) {
    if (filled[i]) {
      prev = i;
      continue;
    }
    if (next <= i) {
      next = i + 1;
      while (next < n_bins && !filled[next]) ++next;
    }
    if (prev < 0) {
      out[i] = out[next];
    } else if (next >= n_bins) {
      out[i] = out[prev];
    } else {
      double t = double(i - prev) / double(next - prev);
      out[i] = out[prev] + (out[next] - out[prev]) * t;
    }
  }
  return out;
}

// Shifts to median 0 then scales so the minimum is exactly -1.
inline std::vector<double> normalize_view(const std::vector<double>& v) {
  if (v.empty())
    fail(ErrorCategory::argument, "normalize_view needs a nonempty vector");
  double med = median_of(v);
  std::vector<double> out(v.size());
  double lowest = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] - med;
    lowest = std::min(lowest, out[i]);
  }
  if (!(lowest < 0.0))
    fail(ErrorCategory::preprocessing, "cannot normalize: centered minimum is 0 (constant view)");
  double scale = -lowest;
  for (double& x : out) x /= scale;
  return out;
}

// One Burt-Adelson reduce step: binomial smoothing with [1,4,6,4,1]/16
// under reflected edges, then decimation to the even indices.
inline std::vector<double> pyramid_reduce(const std::vector<double>& v) {
  int n = int(v.size());
  if (n < 5)
    fail(ErrorCategory::argument, "pyramid_reduce needs length >= 5, got " + std::to_string(n));
  static constexpr double kKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  std::vector<double> out((std::size_t(n) + 1) / 2);
  for (int p = 0, o = 0; p < n; p += 2, ++o) {
    double acc = 0.0;
    for (int t = 0; t < 5; ++t) {
      int q = p + t - 2;
      if (q < 0) q = -q - 1;
      if (q >= n) q = 2 * n - 1 - q;
      acc += kKernel[t] * v[q];
    }
    out[o] = acc;
  }
  return out;
}

struct FlattenConfig {
  SplineConfig spline;
  double mask_durations = 1.0;  // half-width of the transit mask, in durations
  int min_points = 20;
};

// Detrends by dividing out a BIC-selected B-spline fit of the
// out-of-transit flux, leaving the quiescent level near 1.
inline LightCurve flatten(const LightCurve& lc, const TceMeta& meta,
                          const FlattenConfig& cfg = {}) {
  validate_light_curve(lc);
  validate_tce_meta(meta);
  if (int(lc.time.size()) < cfg.min_points)
    fail(ErrorCategory::preprocessing,
         "flatten needs at least " + std::to_string(cfg.min_points) + " points, got " +
             std::to_string(lc.time.size()));
  double mask_half = cfg.mask_durations * meta.duration_days();
  std::vector<double> phases = fold(lc.time, meta.period_days, meta.epoch_days);
  std::vector<char> exclude(lc.time.size());
  for (std::size_t i = 0; i < phases.size(); ++i)
    exclude[i] = std::abs(phases[i]) <= mask_half ? 1 : 0;
  TrendFit fit = fit_trend(lc.time, lc.flux, exclude, cfg.spline);
  LightCurve out;
  out.time = lc.time;
  out.flux.resize(lc.flux.size());
  for (std::size_t i = 0; i < lc.flux.size(); ++i) {
    if (!(fit.trend[i] > 0.0))
      fail(ErrorCategory::preprocessing, "flatten: fitted trend is not positive at row " +
                                             std::to_string(i));
    out.flux[i] = lc.flux[i] / fit.trend[i];
  }
  return out;
}

struct ViewConfig {
  int global_bins = 2001;
  int local_bins = 201;
  int pyramid_bins = 8004;
  int pyramid_levels = 5;
  double local_span_durations = 2.0;  // half-span of the local view
};

// Builds the three normalized model inputs from a flattened curve.
inline ViewSet make_views(const LightCurve& lc, const TceMeta& meta,
                          const ViewConfig& cfg = {}) {
  validate_light_curve(lc);
  validate_tce_meta(meta);
  std::vector<double> phases = fold(lc.time, meta.period_days, meta.epoch_days);
  double half = meta.period_days / 2.0;
  double local_half = cfg.local_span_durations * meta.duration_days();
  ViewSet views;
  views.global = normalize_view(bin_view(phases, lc.flux, cfg.global_bins, -half, half));
  views.local = normalize_view(bin_view(phases, lc.flux, cfg.local_bins, -local_half, local_half));
  std::vector<double> wide = bin_view(phases, lc.flux, cfg.pyramid_bins, -half, half);
  for (int level = 0; level < cfg.pyramid_levels; ++level) wide = pyramid_reduce(wide);
  views.gaussian = normalize_view(wide);
  return views;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    std::string field = line.substr(start, comma == std::string::npos ? comma : comma - start);
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ' || field.back() == '\t'))
      field.pop_back();
    std::size_t lead = 0;
    while (lead < field.size() && (field[lead] == ' ' || field[lead] == '\t')) ++lead;
    fields.push_back(field.substr(lead));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorCategory::format, where + ": bad number '" + s + "'");
  return v;
}

// Maps required column names to their indices; missing names are an
// error so reordered or extended tables still load.
inline std::vector<std::size_t> header_indices(const std::vector<std::string>& header,
                                               const std::vector<std::string>& required,
                                               const std::string& path) {
  std::vector<std::size_t> idx;
  for (const std::string& name : required) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      fail(ErrorCategory::format, "missing column '" + name + "' in " + path);
    idx.push_back(std::size_t(it - header.begin()));
  }
  return idx;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::string bytes = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= bytes.size()) {
    std::size_t nl = bytes.find('\n', start);
    if (nl == std::string::npos) {
      if (start < bytes.size()) lines.push_back(bytes.substr(start));
      break;
    }
    lines.push_back(bytes.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace detail

inline LightCurve read_lightcurve_csv(const std::filesystem::path& path) {
  std::vector<std::string> lines = detail::read_lines(path);
  if (lines.empty())
    fail(ErrorCategory::format, "empty light curve file " + path.string());
  auto header = detail::split_csv(lines[0]);
  auto idx = detail::header_indices(header, {"time", "flux"}, path.string());
  LightCurve lc;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i] == "\r") continue;
    auto fields = detail::split_csv(lines[i]);
    std::string where = path.string() + ":" + std::to_string(i + 1);
    if (fields.size() < header.size())
      fail(ErrorCategory::format, where + ": expected " + std::to_string(header.size()) +
                                      " fields, got " + std::to_string(fields.size()));
    lc.time.push_back(detail::parse_double(fields[idx[0]], where));
    lc.flux.push_back(detail::parse_double(fields[idx[1]], where));
  }
  try {
    validate_light_curve(lc);
  } catch (const Error& e) {
    fail(ErrorCategory::format, path.string() + ": " + e.what());
  }
  return lc;
}

struct TceTableRow {
  std::string id;
  TceMeta meta;
};

inline std::vector<TceTableRow> read_tce_table(const std::filesystem::path& path) {
  std::vector<std::string> lines = detail::read_lines(path);
  if (lines.empty())
    fail(ErrorCategory::format, "empty TCE table " + path.string());
  auto header = detail::split_csv(lines[0]);
  auto idx = detail::header_indices(
      header, {"id", "period_days", "epoch_days", "duration_hours", "label"}, path.string());
  std::vector<TceTableRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty() || lines[i] == "\r") continue;
    auto fields = detail::split_csv(lines[i]);
    std::string where = path.string() + ":" + std::to_string(i + 1);
    if (fields.size() < header.size())
      fail(ErrorCategory::format, where + ": expected " + std::to_string(header.size()) +
                                      " fields, got " + std::to_string(fields.size()));
    TceTableRow row;
    row.id = fields[idx[0]];
    if (row.id.empty())
      fail(ErrorCategory::format, where + ": empty id");
    row.meta.period_days = detail::parse_double(fields[idx[1]], where);
    row.meta.epoch_days = detail::parse_double(fields[idx[2]], where);
    row.meta.duration_hours = detail::parse_double(fields[idx[3]], where);
    try {
      row.meta.label_raw = label_from_string(fields[idx[4]]);
    } catch (const Error& e) {
      fail(ErrorCategory::format, where + ": " + e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tnet
