#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tnet/error.hpp"
#include "tnet/io_util.hpp"
#include "tnet/lightcurve.hpp"
#include "tnet/model.hpp"
#include "tnet/rng.hpp"

namespace tnet {

struct TceRecord {
  std::string id;
  int label = 0;  // 1 iff label_raw == PC
  LabelRaw label_raw = LabelRaw::NTP;
  ViewSet views;
};

inline int label_for(LabelRaw raw) { return raw == LabelRaw::PC ? 1 : 0; }

struct ShardSet {
  static constexpr int kShards = 10;
  static constexpr int kValidationShard = 8;
  static constexpr int kTestShard = 9;

  std::array<std::vector<TceRecord>, kShards> shards;
  std::uint64_t seed = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.size();
    return n;
  }

  std::vector<const TceRecord*> train() const {
    std::vector<const TceRecord*> out;
    for (int s = 0; s < kValidationShard; ++s)
      for (const TceRecord& r : shards[s]) out.push_back(&r);
    return out;
  }

  const std::vector<TceRecord>& validation() const { return shards[kValidationShard]; }
  const std::vector<TceRecord>& test() const { return shards[kTestShard]; }

  std::vector<const TceRecord*> split_view(const std::string& name) const {
    if (name == "train") return train();
    if (name == "val") {
      std::vector<const TceRecord*> out;
      for (const TceRecord& r : validation()) out.push_back(&r);
      return out;
    }
    if (name == "test") {
      std::vector<const TceRecord*> out;
      for (const TceRecord& r : test()) out.push_back(&r);
      return out;
    }
    fail(ErrorCategory::argument, "unknown split '" + name + "' (expected train, val or test)");
  }
};

// Seeded uniform shuffle then round-robin deal, so shard sizes differ by
// at most one and assignment is a pure function of (records, seed).
inline ShardSet split_shards(std::vector<TceRecord> records, std::uint64_t seed) {
  if (records.size() < std::size_t(ShardSet::kShards))
    fail(ErrorCategory::argument, "split_shards needs at least 10 records, got " +
                                      std::to_string(records.size()));
  std::unordered_set<std::string> ids;
  for (const TceRecord& r : records)
    if (!ids.insert(r.id).second)
      fail(ErrorCategory::argument, "duplicate record id '" + r.id + "'");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  ShardSet set;
  set.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i)
    set.shards[i % ShardSet::kShards].push_back(std::move(records[order[i]]));
  return set;
}

namespace detail {

inline void append_g17(std::string& out, double v) {
  char buf[40];
  int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, std::size_t(len));
}

inline void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (static_cast<unsigned char>(c) < 0x20) {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\u%04x", c);
      out += buf;
    } else {
      out += c;
    }
  }
  out += '"';
}

inline void append_view(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_g17(out, v[i]);
  }
  out += ']';
}

inline std::string record_line(const TceRecord& r) {
  std::string out;
  out.reserve(64 + 24 * (r.views.global.size() + r.views.local.size() + r.views.gaussian.size()));
  out += "{\"id\":";
  append_json_string(out, r.id);
  out += ",\"label\":";
  out += std::to_string(r.label);
  out += ",\"label_raw\":\"";
  out += to_string(r.label_raw);
  out += "\",\"global\":";
  append_view(out, r.views.global);
  out += ",\"local\":";
  append_view(out, r.views.local);
  out += ",\"gaussian\":";
  append_view(out, r.views.gaussian);
  out += "}\n";
  return out;
}

inline std::string shard_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%02d.jsonl", index);
  return buf;
}

inline const char* shard_role(int index) {
  if (index == ShardSet::kValidationShard) return "validation";
  if (index == ShardSet::kTestShard) return "test";
  return "train";
}

inline TceRecord parse_record(const nlohmann::json& j, const std::string& where) {
  for (const char* field : {"id", "label", "label_raw", "global", "local", "gaussian"})
    if (!j.contains(field))
      fail(ErrorCategory::format, where + ": missing field '" + field + "'");
  TceRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.label_raw = label_from_string(j.at("label_raw").get<std::string>());
    r.views.global = j.at("global").get<std::vector<double>>();
    r.views.local = j.at("local").get<std::vector<double>>();
    r.views.gaussian = j.at("gaussian").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, where + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCategory::format, where + ": " + e.what());
  }
  if (r.label_raw == LabelRaw::UNK)
    fail(ErrorCategory::format, where + ": UNK label not allowed in shards");
  if (r.label != label_for(r.label_raw))
    fail(ErrorCategory::format, where + ": label inconsistent with label_raw");
  return r;
}

}  // namespace detail

inline void write_shards(const ShardSet& set, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    fail(ErrorCategory::io, "cannot create directory " + dir.string() + ": " + ec.message());
  for (int s = 0; s < ShardSet::kShards; ++s) {
    std::string content;
    for (const TceRecord& r : set.shards[s]) content += detail::record_line(r);
    atomic_write(dir / detail::shard_name(s), content);
  }
  nlohmann::json manifest;
  manifest["seed"] = set.seed;
  manifest["total"] = set.total();
  nlohmann::json shard_list = nlohmann::json::array();
  for (int s = 0; s < ShardSet::kShards; ++s)
    shard_list.push_back({{"file", detail::shard_name(s)},
                          {"count", set.shards[s].size()},
                          {"role", detail::shard_role(s)}});
  manifest["shards"] = shard_list;
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline ShardSet read_shards(const std::filesystem::path& dir) {
  ShardSet set;
  std::filesystem::path manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, manifest_path.string() + ": " + e.what());
  }
  if (manifest.contains("seed")) set.seed = manifest["seed"].get<std::uint64_t>();
  for (int s = 0; s < ShardSet::kShards; ++s) {
    std::filesystem::path path = dir / detail::shard_name(s);
    std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty() || lines[i] == "\r") continue;
      std::string where = path.string() + ":" + std::to_string(i + 1);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(lines[i]);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCategory::format, where + ": " + e.what());
      }
      set.shards[s].push_back(detail::parse_record(j, where));
    }
  }
  return set;
}

inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t seed,
                                                           std::uint64_t epoch) {
  if (batch_size < 1)
    fail(ErrorCategory::argument, "batch size must be >= 1");
  if (n == 0)
    fail(ErrorCategory::argument, "empty training set");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(Rng::mix(seed, epoch));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size)
    out.emplace_back(order.begin() + start, order.begin() + start + batch_size);
  return out;
}

// Per-epoch shuffled batches over the eight training shards; the
// trailing partial batch is dropped.
inline std::vector<std::vector<const TceRecord*>> batches(const ShardSet& set,
                                                          std::size_t batch_size,
                                                          std::uint64_t seed,
                                                          std::uint64_t epoch) {
  std::vector<const TceRecord*> train = set.train();
  std::vector<std::vector<const TceRecord*>> out;
  for (const auto& idx : batch_indices(train.size(), batch_size, seed, epoch)) {
    std::vector<const TceRecord*> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(train[i]);
    out.push_back(std::move(batch));
  }
  return out;
}

struct SynthConfig {
  std::size_t n = 0;
  double positive_frac = 0.229;
  double noise_sigma = 0.001;  // relative flux
  std::uint64_t seed = 0;
};

// Ground truth for one synthetic TCE, drawn deterministically from
// (config seed, record index).
struct SynthParams {
  std::size_t index = 0;
  std::string id;
  bool positive = false;
  bool eb = false;  // eclipsing-binary mimic negative
  double period = 0.0;
  double epoch = 0.0;
  double duration_hours = 0.0;
  double depth = 0.0;
  double trend_amp = 0.0;
  double trend_period = 0.0;
  double trend_phase = 0.0;
  double span_days = 0.0;
  double cadence_days = 0.0;
  std::uint64_t noise_seed = 0;
  LabelRaw label_raw = LabelRaw::NTP;
};

inline void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n < 10)
    fail(ErrorCategory::argument, "synth needs n >= 10, got " + std::to_string(cfg.n));
  if (!(cfg.positive_frac > 0.0 && cfg.positive_frac < 1.0))
    fail(ErrorCategory::argument, "positive_frac must be in (0, 1)");
  if (!(cfg.noise_sigma >= 0.0))
    fail(ErrorCategory::argument, "noise_sigma must be >= 0");
}

inline std::size_t synth_positive_count(const SynthConfig& cfg) {
  return std::size_t(std::llround(double(cfg.n) * cfg.positive_frac));
}

inline SynthParams synth_params(const SynthConfig& cfg, std::size_t i) {
  validate_synth_config(cfg);
  if (i >= cfg.n)
    fail(ErrorCategory::argument, "synth index out of range");
  SynthParams sp;
  sp.index = i;
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%06zu", i);
  sp.id = buf;
  std::size_t n_pos = synth_positive_count(cfg);
  sp.positive = i < n_pos;
  sp.eb = !sp.positive && ((i - n_pos) % 2 == 0);
  Rng rng(Rng::mix(cfg.seed, 0x10000 + i));
  sp.period = rng.uniform(1.0, 50.0);
  sp.duration_hours = rng.uniform(1.0, 8.0);
  sp.epoch = rng.uniform(0.0, sp.period);
  if (sp.positive)
    sp.depth = rng.uniform(0.005, 0.03);
  else if (sp.eb)
    sp.depth = rng.uniform(0.001, 0.003);
  sp.trend_amp = rng.uniform(0.0005, 0.003);
  sp.trend_period = rng.uniform(5.0, 15.0);
  sp.trend_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  sp.span_days = std::clamp(2.5 * sp.period, 6.0, 80.0);
  sp.cadence_days = 1.0 / 48.0;
  sp.noise_seed = Rng::mix(cfg.seed, 0x20000000 + i);
  sp.label_raw = sp.positive ? LabelRaw::PC : (sp.eb ? LabelRaw::AFP : LabelRaw::NTP);
  return sp;
}

// Fractional brightness lost at a given orbital phase. Positives get a
// flat-bottomed trapezoid; EB mimics get a V-shaped primary plus a 0.3x
// secondary half a period away.
inline double synth_dip(const SynthParams& sp, double phase) {
  double h = sp.duration_hours / 24.0 / 2.0;
  if (sp.positive) {
    double a = std::abs(phase);
    if (a >= h) return 0.0;
    double core = 0.6 * h;
    if (a <= core) return sp.depth;
    return sp.depth * (h - a) / (h - core);
  }
  if (sp.eb) {
    double dip = 0.0;
    double a = std::abs(phase);
    if (a < h) dip += sp.depth * (1.0 - a / h);
    double ph2 = phase - sp.period / 2.0;
    if (ph2 < -sp.period / 2.0) ph2 += sp.period;
    double a2 = std::abs(ph2);
    if (a2 < h) dip += 0.3 * sp.depth * (1.0 - a2 / h);
    return dip;
  }
  return 0.0;
}

inline std::pair<LightCurve, TceMeta> synth_curve(const SynthParams& sp, double noise_sigma) {
  std::size_t n_pts = std::size_t(sp.span_days / sp.cadence_days);
  LightCurve lc;
  lc.time.resize(n_pts);
  lc.flux.resize(n_pts);
  for (std::size_t i = 0; i < n_pts; ++i) lc.time[i] = (double(i) + 0.5) * sp.cadence_days;
  std::vector<double> phases = fold(lc.time, sp.period, sp.epoch);
  Rng noise(sp.noise_seed);
  for (std::size_t i = 0; i < n_pts; ++i) {
    double trend =
        1.0 + sp.trend_amp *
                  std::sin(2.0 * std::numbers::pi * lc.time[i] / sp.trend_period + sp.trend_phase);
    lc.flux[i] = trend * (1.0 - synth_dip(sp, phases[i])) + noise_sigma * noise.normal();
  }
  TceMeta meta;
  meta.period_days = sp.period;
  meta.epoch_days = sp.epoch;
  meta.duration_hours = sp.duration_hours;
  meta.label_raw = sp.label_raw;
  return {std::move(lc), meta};
}

// Full generator: raw curve, spline flattening, view construction. A
// pure function of (config, seed).
inline std::vector<TceRecord> synth_generate(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  std::vector<TceRecord> records;
  records.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    SynthParams sp = synth_params(cfg, i);
    auto [lc, meta] = synth_curve(sp, cfg.noise_sigma);
    LightCurve flat = flatten(lc, meta);
    TceRecord r;
    r.id = sp.id;
    r.label_raw = sp.label_raw;
    r.label = label_for(sp.label_raw);
    r.views = make_views(flat, meta);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace tnet
