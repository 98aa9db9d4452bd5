#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tnet/dataio.hpp"
#include "tnet/error.hpp"
#include "tnet/io_util.hpp"
#include "tnet/model.hpp"

namespace tnet {

// Returns (loss, dL/dp); the probability is clamped to
// [1e-7, 1 - 1e-7] and the gradient refers to the clamped value.
inline std::pair<double, double> bce_loss(double p, int y) {
  if (y != 0 && y != 1)
    fail(ErrorCategory::argument, "label must be 0 or 1, got " + std::to_string(y));
  double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  if (y == 1) return {-std::log(q), -1.0 / q};
  return {-std::log(1.0 - q), 1.0 / (1.0 - q)};
}

struct AdamConfig {
  double alpha = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void validate_adam_config(const AdamConfig& cfg) {
  if (!(cfg.alpha > 0.0))
    fail(ErrorCategory::argument, "adam alpha must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    fail(ErrorCategory::argument, "adam betas must be in [0, 1)");
  if (!(cfg.epsilon > 0.0))
    fail(ErrorCategory::argument, "adam epsilon must be > 0");
}

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t t = 0;

  static AdamState init(std::size_t n) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    return s;
  }
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      const AdamConfig& cfg) {
  validate_adam_config(cfg);
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size())
    fail(ErrorCategory::dimension, "adam_step needs params, grads and moments of equal length");
  state.t += 1;
  double c1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  double c2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    double mhat = state.m[i] / c1;
    double vhat = state.v[i] / c2;
    params[i] -= cfg.alpha * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double loss = 0.0;
  std::size_t n_examples = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Metrics evaluate(const Model& model, std::span<const TceRecord* const> split) {
  if (split.empty())
    fail(ErrorCategory::argument, "empty split");
  Rng rng(0);  // Eval mode never draws from it
  Model::Workspace ws;
  Metrics m;
  double loss_sum = 0.0;
  for (const TceRecord* r : split) {
    double p = model.forward(r->views, Mode::Eval, rng, ws);
    loss_sum += bce_loss(p, r->label).first;
    bool predicted = p > 0.5;
    if (r->label == 1) {
      predicted ? ++m.tp : ++m.fn;
    } else {
      predicted ? ++m.fp : ++m.tn;
    }
  }
  m.n_examples = split.size();
  m.loss = loss_sum / double(split.size());
  m.accuracy = double(m.tp + m.tn) / double(split.size());
  m.precision = (m.tp + m.fp) ? double(m.tp) / double(m.tp + m.fp) : 0.0;
  m.recall = (m.tp + m.fn) ? double(m.tp) / double(m.tp + m.fn) : 0.0;
  return m;
}

inline Metrics evaluate(const Model& model, const std::vector<TceRecord>& split) {
  std::vector<const TceRecord*> ptrs;
  ptrs.reserve(split.size());
  for (const TceRecord& r : split) ptrs.push_back(&r);
  return evaluate(model, ptrs);
}

struct TrainConfig {
  std::uint64_t steps = 10000;
  std::size_t batch_size = 64;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;
  AdamConfig adam;
  std::uint64_t val_interval = 500;
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.steps < 1)
    fail(ErrorCategory::argument, "steps must be >= 1");
  if (cfg.batch_size < 1)
    fail(ErrorCategory::argument, "batch size must be >= 1");
  if (cfg.val_interval < 1)
    fail(ErrorCategory::argument, "validation interval must be >= 1");
  bool rate_ok = false;
  for (double allowed : {0.0, 0.1, 0.2, 0.3})
    if (std::abs(cfg.dropout_rate - allowed) < 1e-9) rate_ok = true;
  if (!rate_ok)
    fail(ErrorCategory::argument, "dropout rate must be one of 0.0, 0.1, 0.2, 0.3");
  validate_adam_config(cfg.adam);
}

struct TrainHistory {
  struct Entry {
    std::uint64_t step = 0;
    double loss = 0.0;
    bool has_val = false;
    double val_accuracy = 0.0;
    double seconds = 0.0;  // optimizer step wall time, excluding validation
  };
  std::vector<Entry> entries;
  double train_seconds = 0.0;  // sum of per-step times

  double final_val_accuracy() const {
    for (auto it = entries.rbegin(); it != entries.rend(); ++it)
      if (it->has_val) return it->val_accuracy;
    return 0.0;
  }
};

inline double epochs_for(std::uint64_t steps, std::size_t batch_size, std::size_t n_train) {
  if (n_train == 0)
    fail(ErrorCategory::argument, "epochs_for needs a nonempty training set");
  return double(steps) * double(batch_size) / double(n_train);
}

// One-decimal rendering used anywhere an epoch count is reported.
inline std::string format_epochs(double epochs) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", epochs);
  return buf;
}

inline void write_metrics_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::string out = "step,loss,val_accuracy\n";
  char buf[64];
  for (const auto& e : history.entries) {
    out += std::to_string(e.step);
    std::snprintf(buf, sizeof buf, ",%.10g,", e.loss);
    out += buf;
    if (e.has_val) {
      std::snprintf(buf, sizeof buf, "%.10g", e.val_accuracy);
      out += buf;
    }
    out += '\n';
  }
  atomic_write(path, out);
}

namespace detail {

inline void check_views_match(const Model& model, const TceRecord& r) {
  for (const Model::Branch& br : model.branches) {
    std::size_t have = r.views.view(br.spec.view).size();
    if (have != std::size_t(br.spec.input_length))
      fail(ErrorCategory::dimension,
           "record '" + r.id + "': view '" + to_string(br.spec.view) + "' has length " +
               std::to_string(have) + ", expected " + std::to_string(br.spec.input_length));
  }
}

}  // namespace detail

// Runs exactly config.steps Adam updates on shuffled batches drawn from
// the training shards. Both the convolutional branches and the fully
// connected stack process the whole batch per layer, so weights are
// streamed through memory once per step and per-layer reduction
// overhead is amortized across examples. All accumulation orders are
// fixed, keeping the run bitwise reproducible.
inline TrainHistory train(Model& model, const ShardSet& data, const TrainConfig& cfg) {
  validate_train_config(cfg);
  model.arch.dropout_rate = cfg.dropout_rate;
  model.dropout = Dropout(cfg.dropout_rate);

  std::vector<const TceRecord*> train_split = data.train();
  if (train_split.empty())
    fail(ErrorCategory::argument, "empty training split");
  if (train_split.size() < cfg.batch_size)
    fail(ErrorCategory::argument,
         "batch size " + std::to_string(cfg.batch_size) + " exceeds training split size " +
             std::to_string(train_split.size()));
  for (const TceRecord* r : train_split) detail::check_views_match(model, *r);
  bool has_val = !data.validation().empty();
  for (const TceRecord& r : data.validation()) detail::check_views_match(model, r);

  Model::Offsets off = model.offsets();
  std::vector<double> params = model.flatten_params();
  std::vector<double> grads(off.total);
  AdamState state = AdamState::init(off.total);
  Rng dropout_rng(Rng::mix(cfg.seed, 0xd20));

  std::size_t B = cfg.batch_size;
  std::size_t n_branches = model.branches.size();
  std::size_t nfc = model.fc.size();
  std::vector<std::vector<Model::Workspace::BranchWork>> branch_ws(n_branches);
  for (auto& w : branch_ws) w.resize(B);
  std::vector<const ViewSet*> batch_views(B);
  Conv1D::BatchScratch conv_scratch;
  Tensor X = Tensor::zeros({B, std::size_t(model.concat_len)});
  std::vector<Tensor> fc_pre(nfc), fc_out(nfc);
  std::vector<Dropout::Cache> drop(nfc);
  Tensor head_out, g_head = Tensor::zeros({B, 1});
  Tensor g_a, g_b, g_x;

  TrainHistory history;
  history.entries.reserve(cfg.steps);
  std::uint64_t step = 0;
  for (std::uint64_t epoch = 0; step < cfg.steps; ++epoch) {
    auto epoch_batches = batch_indices(train_split.size(), B, cfg.seed, epoch);
    for (const auto& batch : epoch_batches) {
      if (step >= cfg.steps) break;
      ++step;
      auto t_start = std::chrono::steady_clock::now();

      std::fill(grads.begin(), grads.end(), 0.0);
      for (std::size_t b = 0; b < B; ++b) batch_views[b] = &train_split[batch[b]]->views;
      std::size_t pos = 0;
      for (std::size_t bi = 0; bi < n_branches; ++bi) {
        model.branch_forward_batch(bi, batch_views, branch_ws[bi], conv_scratch);
        for (std::size_t b = 0; b < B; ++b) {
          const Tensor& flat = branch_ws[bi][b].pool_out.back();
          std::copy(flat.data.begin(), flat.data.end(), X.data.begin() + b * X.shape[1] + pos);
        }
        pos += std::size_t(model.branches[bi].flat_len);
      }
      const Tensor* cur = &X;
      for (std::size_t j = 0; j < nfc; ++j) {
        model.fc[j].forward_into(*cur, fc_pre[j]);
        relu_inplace(fc_pre[j]);
        fc_out[j] = fc_pre[j];
        model.dropout.apply_inplace(fc_out[j], Mode::Train, dropout_rng, drop[j]);
        cur = &fc_out[j];
      }
      model.head.forward_into(*cur, head_out);

      double loss_sum = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const TceRecord& r = *train_split[batch[b]];
        double p = sigmoid(head_out.data[b]);
        auto [loss, dldp] = bce_loss(p, r.label);
        loss_sum += loss;
        g_head.data[b] = dldp / double(B) * p * (1.0 - p);
      }

      g_a.shape = {B, std::size_t(model.arch.fc_size)};
      g_a.data.assign(B * std::size_t(model.arch.fc_size), 0.0);
      model.head.backward_into(g_head, fc_out.back(), &g_a, grads.data() + off.head.w_off,
                               grads.data() + off.head.b_off);
      for (std::size_t j = nfc; j-- > 0;) {
        if (!drop[j].identity)
          for (std::size_t i = 0; i < g_a.data.size(); ++i) g_a.data[i] *= drop[j].mask.data[i];
        const Tensor& act = fc_pre[j];
        for (std::size_t i = 0; i < g_a.data.size(); ++i)
          if (!(act.data[i] > 0.0)) g_a.data[i] = 0.0;
        const Tensor& input = j == 0 ? X : fc_out[j - 1];
        Tensor& target = j == 0 ? g_x : g_b;
        target.shape = input.shape;
        target.data.assign(input.numel(), 0.0);
        model.fc[j].backward_into(g_a, input, &target, grads.data() + off.fc[j].w_off,
                                  grads.data() + off.fc[j].b_off);
        if (j > 0) std::swap(g_a, g_b);
      }
      pos = 0;
      for (std::size_t bi = 0; bi < n_branches; ++bi) {
        model.branch_backward_batch(bi, g_x.data.data() + pos, std::size_t(model.concat_len),
                                    branch_ws[bi], off.branch_convs[bi], grads, conv_scratch);
        pos += std::size_t(model.branches[bi].flat_len);
      }

      adam_step(params, grads, state, cfg.adam);
      model.set_params(params);

      auto t_end = std::chrono::steady_clock::now();
      TrainHistory::Entry entry;
      entry.step = step;
      entry.loss = loss_sum / double(B);
      entry.seconds = std::chrono::duration<double>(t_end - t_start).count();
      if (has_val && (step % cfg.val_interval == 0 || step == cfg.steps)) {
        entry.has_val = true;
        entry.val_accuracy = evaluate(model, data.validation()).accuracy;
      }
      history.train_seconds += entry.seconds;
      history.entries.push_back(entry);
    }
    if (epoch_batches.empty()) break;
  }
  return history;
}

}  // namespace tnet
