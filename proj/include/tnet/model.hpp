#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tnet/error.hpp"
#include "tnet/io_util.hpp"
#include "tnet/layers.hpp"
#include "tnet/rng.hpp"
#include "tnet/tensor.hpp"

namespace tnet {

enum class View { Global, Local, Gaussian };

inline const char* to_string(View v) {
  switch (v) {
    case View::Global: return "global";
    case View::Local: return "local";
    case View::Gaussian: return "gaussian";
  }
  return "unknown";
}

inline View view_from_string(const std::string& s) {
  if (s == "global") return View::Global;
  if (s == "local") return View::Local;
  if (s == "gaussian") return View::Gaussian;
  fail(ErrorCategory::argument, "unknown view '" + s + "'");
}

// One binned input curve per view; empty vectors mean the view is absent.
struct ViewSet {
  std::vector<double> global, local, gaussian;

  const std::vector<double>& view(View v) const {
    switch (v) {
      case View::Global: return global;
      case View::Local: return local;
      case View::Gaussian: return gaussian;
    }
    fail(ErrorCategory::argument, "unknown view");
  }

  std::vector<double>& view(View v) {
    return const_cast<std::vector<double>&>(std::as_const(*this).view(v));
  }
};

struct BranchSpec {
  View view = View::Global;
  int input_length = 0;
  int num_blocks = 0;
  int convs_per_block = 0;
  int initial_filters = 16;
  int filter_growth = 2;
  int kernel_size = 5;
  int pool_window = 0;
  int pool_stride = 2;
};

struct ArchitectureSpec {
  std::string name;
  std::vector<BranchSpec> branches;
  int fc_layers = 0;
  int fc_size = 0;
  double dropout_rate = 0.0;
};

inline ArchitectureSpec preset_baseline() {
  ArchitectureSpec s;
  s.name = "baseline";
  s.branches = {
      {View::Global, 2001, 5, 2, 16, 2, 5, 5, 2},
      {View::Local, 201, 2, 2, 16, 2, 5, 7, 2},
  };
  s.fc_layers = 4;
  s.fc_size = 512;
  return s;
}

inline ArchitectureSpec preset_ddn() {
  ArchitectureSpec s;
  s.name = "ddn";
  s.branches = {
      {View::Global, 2001, 3, 1, 16, 2, 5, 5, 2},
      {View::Local, 201, 2, 1, 16, 2, 5, 7, 2},
  };
  s.fc_layers = 2;
  s.fc_size = 128;
  return s;
}

inline ArchitectureSpec preset_ddmsn() {
  ArchitectureSpec s;
  s.name = "ddmsn";
  s.branches = {
      {View::Gaussian, 251, 2, 2, 16, 2, 5, 7, 2},
  };
  s.fc_layers = 4;
  s.fc_size = 512;
  return s;
}

inline ArchitectureSpec preset(const std::string& name) {
  if (name == "baseline") return preset_baseline();
  if (name == "ddn") return preset_ddn();
  if (name == "ddmsn") return preset_ddmsn();
  fail(ErrorCategory::argument,
       "unknown architecture '" + name + "' (expected baseline, ddn or ddmsn)");
}

struct Model {
  struct Branch {
    BranchSpec spec;
    std::vector<Conv1D> convs;     // block-major: block b holds convs [b*cpb, (b+1)*cpb)
    std::vector<MaxPool1D> pools;  // one per block
    std::vector<int> block_filters;
    std::vector<int> block_out_len;  // length after each block's pool
    int flat_len = 0;
  };

  ArchitectureSpec arch;
  std::vector<Branch> branches;
  std::vector<Dense> fc;
  Dense head;
  Dropout dropout;
  int concat_len = 0;

  struct ParamRef {
    std::size_t w_off = 0, w_len = 0, b_off = 0, b_len = 0;
  };

  struct Offsets {
    std::vector<std::vector<ParamRef>> branch_convs;
    std::vector<ParamRef> fc;
    ParamRef head;
    std::size_t total = 0;
  };

  static void validate_spec(const ArchitectureSpec& spec) {
    if (spec.branches.empty() || spec.branches.size() > 2)
      fail(ErrorCategory::config, "architecture needs 1 or 2 branches");
    if (spec.fc_layers < 1 || spec.fc_size < 1)
      fail(ErrorCategory::config, "architecture needs fc_layers >= 1 and fc_size >= 1");
    if (!(spec.dropout_rate >= 0.0 && spec.dropout_rate < 1.0))
      fail(ErrorCategory::config, "dropout rate must be in [0, 1)");
    for (const BranchSpec& b : spec.branches) {
      std::string where = std::string("branch '") + to_string(b.view) + "'";
      if (b.input_length < 1 || b.num_blocks < 1 || b.convs_per_block < 1 ||
          b.initial_filters < 1 || b.filter_growth < 1)
        fail(ErrorCategory::config, where + ": sizes must be positive");
      if (b.kernel_size < 1 || b.kernel_size % 2 == 0)
        fail(ErrorCategory::config, where + ": kernel size must be odd");
      if (b.pool_stride < 1 || b.pool_window < b.pool_stride)
        fail(ErrorCategory::config, where + ": needs pool window >= stride >= 1");
      int len = b.input_length;
      for (int k = 0; k < b.num_blocks; ++k) {
        if (len < b.pool_window)
          fail(ErrorCategory::config,
               where + " block " + std::to_string(k) + ": pool window " +
                   std::to_string(b.pool_window) + " collapses length " + std::to_string(len));
        len = (len - b.pool_window) / b.pool_stride + 1;
      }
    }
  }

  static Model build(const ArchitectureSpec& spec, Rng& rng) { return build_impl(spec, &rng); }

  // Same structure as build() but with zero weights; checkpoint loading
  // fills them from the payload.
  static Model build_uninitialized(const ArchitectureSpec& spec) {
    return build_impl(spec, nullptr);
  }

  std::size_t count_params(bool with_optimizer_slots = false) const {
    std::size_t n = 0;
    for (const Branch& b : branches)
      for (const Conv1D& c : b.convs) n += c.weights.numel() + c.bias.numel();
    for (const Dense& d : fc) n += d.weights.numel() + d.bias.numel();
    n += head.weights.numel() + head.bias.numel();
    return with_optimizer_slots ? n * 3 : n;
  }

  Offsets offsets() const {
    Offsets off;
    std::size_t pos = 0;
    auto take = [&pos](const Tensor& w, const Tensor& b) {
      ParamRef r;
      r.w_off = pos;
      r.w_len = w.numel();
      pos += r.w_len;
      r.b_off = pos;
      r.b_len = b.numel();
      pos += r.b_len;
      return r;
    };
    off.branch_convs.resize(branches.size());
    for (std::size_t bi = 0; bi < branches.size(); ++bi)
      for (const Conv1D& c : branches[bi].convs)
        off.branch_convs[bi].push_back(take(c.weights, c.bias));
    for (const Dense& d : fc) off.fc.push_back(take(d.weights, d.bias));
    off.head = take(head.weights, head.bias);
    off.total = pos;
    return off;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (Branch& b : branches)
      for (Conv1D& c : b.convs) {
        out.push_back(&c.weights);
        out.push_back(&c.bias);
      }
    for (Dense& d : fc) {
      out.push_back(&d.weights);
      out.push_back(&d.bias);
    }
    out.push_back(&head.weights);
    out.push_back(&head.bias);
    return out;
  }

  std::vector<const Tensor*> tensors() const {
    auto v = const_cast<Model*>(this)->tensors();
    return {v.begin(), v.end()};
  }

  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out;
    for (const Branch& b : branches) {
      std::string prefix = to_string(b.spec.view);
      for (std::size_t i = 0; i < b.convs.size(); ++i) {
        out.push_back(prefix + "/conv" + std::to_string(i) + "/weights");
        out.push_back(prefix + "/conv" + std::to_string(i) + "/bias");
      }
    }
    for (std::size_t i = 0; i < fc.size(); ++i) {
      out.push_back("fc" + std::to_string(i) + "/weights");
      out.push_back("fc" + std::to_string(i) + "/bias");
    }
    out.push_back("head/weights");
    out.push_back("head/bias");
    return out;
  }

  std::vector<double> flatten_params() const {
    std::vector<double> flat;
    flat.reserve(count_params());
    for (const Tensor* t : tensors())
      flat.insert(flat.end(), t->data.begin(), t->data.end());
    return flat;
  }

  void set_params(std::span<const double> flat) {
    if (flat.size() != count_params())
      fail(ErrorCategory::dimension,
           "parameter vector has " + std::to_string(flat.size()) + " values, model needs " +
               std::to_string(count_params()));
    std::size_t pos = 0;
    for (Tensor* t : tensors()) {
      std::copy(flat.begin() + pos, flat.begin() + pos + t->numel(), t->data.begin());
      pos += t->numel();
    }
  }

  struct Workspace {
    struct BranchWork {
      Tensor input;
      std::vector<Tensor> conv_out;  // post-activation
      std::vector<MaxPool1D::Cache> pool_cache;
      std::vector<Tensor> pool_out;
    };
    std::vector<BranchWork> branches;
    Tensor concat;
    std::vector<Tensor> fc_pre;  // post-activation, pre-dropout
    std::vector<Tensor> fc_out;  // post-dropout
    std::vector<Dropout::Cache> drop;
    Tensor head_out;
    double prob = 0.0;
    bool ready = false;

    // backward scratch
    Tensor g_a, g_b, g_concat;
  };

  double forward(const ViewSet& views, Mode mode, Rng& rng, Workspace& ws) const {
    ws.branches.resize(branches.size());
    for (std::size_t bi = 0; bi < branches.size(); ++bi)
      branch_forward(bi, views, ws.branches[bi]);
    ws.concat.shape = {1, std::size_t(concat_len)};
    ws.concat.data.resize(std::size_t(concat_len));
    std::size_t pos = 0;
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      const Tensor& flat = ws.branches[bi].pool_out.back();
      std::copy(flat.data.begin(), flat.data.end(), ws.concat.data.begin() + pos);
      pos += flat.numel();
    }
    std::size_t nfc = fc.size();
    ws.fc_pre.resize(nfc);
    ws.fc_out.resize(nfc);
    ws.drop.resize(nfc);
    const Tensor* cur = &ws.concat;
    for (std::size_t j = 0; j < nfc; ++j) {
      fc[j].forward_into(*cur, ws.fc_pre[j]);
      relu_inplace(ws.fc_pre[j]);
      ws.fc_out[j] = ws.fc_pre[j];
      dropout.apply_inplace(ws.fc_out[j], mode, rng, ws.drop[j]);
      cur = &ws.fc_out[j];
    }
    head.forward_into(*cur, ws.head_out);
    ws.prob = sigmoid(ws.head_out.data[0]);
    ws.ready = true;
    return ws.prob;
  }

  double forward(const ViewSet& views, Mode mode, Rng& rng) const {
    Workspace ws;
    return forward(views, mode, rng, ws);
  }

  // Accumulates parameter gradients into grad (layout per offsets()).
  void backward(double dloss_dprob, Workspace& ws, const Offsets& off,
                std::span<double> grad) const {
    if (!ws.ready)
      fail(ErrorCategory::state, "model backward called before forward");
    if (grad.size() != off.total)
      fail(ErrorCategory::dimension, "gradient buffer has wrong size");
    double p = ws.prob;
    double dz = dloss_dprob * p * (1.0 - p);
    Tensor g({1, 1}, {dz});
    std::size_t nfc = fc.size();
    zero_like(ws.g_a, {1, std::size_t(arch.fc_size)});
    head.backward_into(g, ws.fc_out.back(), &ws.g_a, grad.data() + off.head.w_off,
                       grad.data() + off.head.b_off);
    for (std::size_t j = nfc; j-- > 0;) {
      if (!ws.drop[j].identity)
        for (std::size_t i = 0; i < ws.g_a.data.size(); ++i)
          ws.g_a.data[i] *= ws.drop[j].mask.data[i];
      const Tensor& act = ws.fc_pre[j];
      for (std::size_t i = 0; i < ws.g_a.data.size(); ++i)
        if (!(act.data[i] > 0.0)) ws.g_a.data[i] = 0.0;
      const Tensor& input = j == 0 ? ws.concat : ws.fc_out[j - 1];
      Tensor& target = j == 0 ? ws.g_concat : ws.g_b;
      zero_like(target, input.shape);
      fc[j].backward_into(ws.g_a, input, &target, grad.data() + off.fc[j].w_off,
                          grad.data() + off.fc[j].b_off);
      if (j > 0) std::swap(ws.g_a, ws.g_b);
    }
    std::size_t pos = 0;
    for (std::size_t bi = 0; bi < branches.size(); ++bi) {
      std::size_t n = std::size_t(branches[bi].flat_len);
      branch_backward(bi, std::span<const double>(ws.g_concat.data).subspan(pos, n),
                      ws.branches[bi], off.branch_convs[bi], grad);
      pos += n;
    }
    ws.ready = false;
  }

  void branch_forward(std::size_t bi, const ViewSet& views, Workspace::BranchWork& bw) const {
    const Branch& br = branches[bi];
    const std::vector<double>& v = views.view(br.spec.view);
    if (int(v.size()) != br.spec.input_length)
      fail(ErrorCategory::dimension,
           std::string("view '") + to_string(br.spec.view) + "': expected length " +
               std::to_string(br.spec.input_length) + ", got " + std::to_string(v.size()));
    bw.input.shape = {1, v.size()};
    bw.input.data = v;
    bw.conv_out.resize(br.convs.size());
    bw.pool_cache.resize(br.pools.size());
    bw.pool_out.resize(br.pools.size());
    const Tensor* cur = &bw.input;
    int cpb = br.spec.convs_per_block;
    for (int k = 0; k < br.spec.num_blocks; ++k) {
      for (int c = 0; c < cpb; ++c) {
        std::size_t idx = std::size_t(k) * cpb + c;
        br.convs[idx].forward_into(*cur, bw.conv_out[idx]);
        relu_inplace(bw.conv_out[idx]);
        cur = &bw.conv_out[idx];
      }
      bw.pool_out[k] = br.pools[k].forward(*cur, bw.pool_cache[k]);
      cur = &bw.pool_out[k];
    }
  }

  void branch_backward(std::size_t bi, std::span<const double> g_flat,
                       Workspace::BranchWork& bw, const std::vector<ParamRef>& off,
                       std::span<double> grad) const {
    const Branch& br = branches[bi];
    int cpb = br.spec.convs_per_block;
    Tensor g_cur;
    g_cur.shape = bw.pool_out.back().shape;
    g_cur.data.assign(g_flat.begin(), g_flat.end());
    for (int k = br.spec.num_blocks; k-- > 0;) {
      Tensor g_in = br.pools[k].backward(g_cur, bw.pool_cache[k]);
      for (int c = cpb; c-- > 0;) {
        std::size_t idx = std::size_t(k) * cpb + c;
        const Tensor& act = bw.conv_out[idx];
        for (std::size_t i = 0; i < g_in.data.size(); ++i)
          if (!(act.data[i] > 0.0)) g_in.data[i] = 0.0;
        const Tensor& input = c == 0 ? (k == 0 ? bw.input : bw.pool_out[k - 1])
                                     : bw.conv_out[idx - 1];
        bool need_gx = idx > 0;
        Tensor g_next;
        if (need_gx) g_next = Tensor::zeros(input.shape);
        br.convs[idx].backward_into(g_in, input, need_gx ? &g_next : nullptr,
                                    grad.data() + off[idx].w_off, grad.data() + off[idx].b_off);
        g_in = std::move(g_next);
      }
      g_cur = std::move(g_in);
    }
  }

  // Layer-major variant of branch_forward: each conv layer runs once
  // over the whole batch through Conv1D::forward_batch, so per-call
  // reduction overhead is amortized across examples. Pooling and
  // activations stay per-example. Fills the same per-example BranchWork
  // state as branch_forward.
  void branch_forward_batch(std::size_t bi, std::span<const ViewSet* const> views,
                            std::span<Workspace::BranchWork> bws,
                            Conv1D::BatchScratch& scratch) const {
    const Branch& br = branches[bi];
    std::size_t B = views.size();
    for (std::size_t b = 0; b < B; ++b) {
      const std::vector<double>& v = views[b]->view(br.spec.view);
      if (int(v.size()) != br.spec.input_length)
        fail(ErrorCategory::dimension,
             std::string("view '") + to_string(br.spec.view) + "': expected length " +
                 std::to_string(br.spec.input_length) + ", got " + std::to_string(v.size()));
      Workspace::BranchWork& bw = bws[b];
      bw.input.shape = {1, v.size()};
      bw.input.data = v;
      bw.conv_out.resize(br.convs.size());
      bw.pool_cache.resize(br.pools.size());
      bw.pool_out.resize(br.pools.size());
    }
    int cpb = br.spec.convs_per_block;
    std::vector<const Tensor*> xs(B);
    std::vector<Tensor*> outs(B);
    for (int k = 0; k < br.spec.num_blocks; ++k) {
      for (int c = 0; c < cpb; ++c) {
        std::size_t idx = std::size_t(k) * cpb + c;
        for (std::size_t b = 0; b < B; ++b) {
          Workspace::BranchWork& bw = bws[b];
          xs[b] = c == 0 ? (k == 0 ? &bw.input : &bw.pool_out[k - 1]) : &bw.conv_out[idx - 1];
          outs[b] = &bw.conv_out[idx];
        }
        br.convs[idx].forward_batch(B, xs.data(), outs.data(), scratch);
        for (std::size_t b = 0; b < B; ++b) relu_inplace(bws[b].conv_out[idx]);
      }
      std::size_t last = std::size_t(k) * cpb + cpb - 1;
      for (std::size_t b = 0; b < B; ++b)
        bws[b].pool_out[k] = br.pools[k].forward(bws[b].conv_out[last], bws[b].pool_cache[k]);
    }
  }

  // Layer-major variant of branch_backward over a batch. Example b's
  // incoming flat gradient starts at g_base + b * g_stride. Parameter
  // gradients accumulate batch-summed per layer, so the summation order
  // differs from repeated branch_backward calls by floating-point
  // reassociation only; each order is itself fixed and reproducible.
  void branch_backward_batch(std::size_t bi, const double* g_base, std::size_t g_stride,
                             std::span<Workspace::BranchWork> bws,
                             const std::vector<ParamRef>& off, std::span<double> grad,
                             Conv1D::BatchScratch& scratch) const {
    const Branch& br = branches[bi];
    std::size_t B = bws.size();
    int cpb = br.spec.convs_per_block;
    std::size_t n = std::size_t(br.flat_len);
    std::vector<Tensor> g_in(B), g_next(B);
    std::vector<const Tensor*> gp(B), xp(B);
    std::vector<Tensor*> gxp(B);
    for (std::size_t b = 0; b < B; ++b) {
      g_in[b].shape = bws[b].pool_out.back().shape;
      g_in[b].data.assign(g_base + b * g_stride, g_base + b * g_stride + n);
    }
    for (int k = br.spec.num_blocks; k-- > 0;) {
      for (std::size_t b = 0; b < B; ++b)
        g_in[b] = br.pools[k].backward(g_in[b], bws[b].pool_cache[k]);
      for (int c = cpb; c-- > 0;) {
        std::size_t idx = std::size_t(k) * cpb + c;
        bool need_gx = idx > 0;
        for (std::size_t b = 0; b < B; ++b) {
          Workspace::BranchWork& bw = bws[b];
          const Tensor& act = bw.conv_out[idx];
          for (std::size_t i = 0; i < g_in[b].data.size(); ++i)
            if (!(act.data[i] > 0.0)) g_in[b].data[i] = 0.0;
          const Tensor& input =
              c == 0 ? (k == 0 ? bw.input : bw.pool_out[k - 1]) : bw.conv_out[idx - 1];
          xp[b] = &input;
          gp[b] = &g_in[b];
          if (need_gx) {
            g_next[b].shape = input.shape;
            g_next[b].data.assign(input.numel(), 0.0);
            gxp[b] = &g_next[b];
          }
        }
        br.convs[idx].backward_batch(B, gp.data(), xp.data(), need_gx ? gxp.data() : nullptr,
                                     grad.data() + off[idx].w_off, grad.data() + off[idx].b_off,
                                     scratch);
        if (need_gx)
          for (std::size_t b = 0; b < B; ++b) g_in[b] = std::move(g_next[b]);
      }
    }
  }

 private:
  static void zero_like(Tensor& t, const std::vector<std::size_t>& shape) {
    t.shape = shape;
    t.data.assign(Tensor::shape_numel(shape), 0.0);
  }

  static Model build_impl(const ArchitectureSpec& spec, Rng* rng) {
    validate_spec(spec);
    Model m;
    m.arch = spec;
    m.dropout = Dropout(spec.dropout_rate);
    m.concat_len = 0;
    for (const BranchSpec& bs : spec.branches) {
      Branch br;
      br.spec = bs;
      int ch = 1;
      int len = bs.input_length;
      int filters = bs.initial_filters;
      for (int k = 0; k < bs.num_blocks; ++k) {
        for (int c = 0; c < bs.convs_per_block; ++c) {
          if (rng)
            br.convs.push_back(Conv1D::glorot(ch, filters, bs.kernel_size, Padding::Same, *rng));
          else
            br.convs.push_back(Conv1D(ch, filters, bs.kernel_size, Padding::Same));
          ch = filters;
        }
        br.pools.push_back(MaxPool1D(bs.pool_window, bs.pool_stride));
        len = (len - bs.pool_window) / bs.pool_stride + 1;
        br.block_filters.push_back(filters);
        br.block_out_len.push_back(len);
        filters *= bs.filter_growth;
      }
      br.flat_len = ch * len;
      m.concat_len += br.flat_len;
      m.branches.push_back(std::move(br));
    }
    int in = m.concat_len;
    for (int j = 0; j < spec.fc_layers; ++j) {
      if (rng)
        m.fc.push_back(Dense::glorot(in, spec.fc_size, *rng));
      else
        m.fc.push_back(Dense(in, spec.fc_size));
      in = spec.fc_size;
    }
    if (rng)
      m.head = Dense::glorot(spec.fc_size, 1, *rng);
    else
      m.head = Dense(spec.fc_size, 1);
    return m;
  }
};

inline void to_json(nlohmann::json& j, const BranchSpec& b) {
  j = nlohmann::json{{"view", to_string(b.view)},
                     {"input_length", b.input_length},
                     {"num_blocks", b.num_blocks},
                     {"convs_per_block", b.convs_per_block},
                     {"initial_filters", b.initial_filters},
                     {"filter_growth", b.filter_growth},
                     {"kernel_size", b.kernel_size},
                     {"pool_window", b.pool_window},
                     {"pool_stride", b.pool_stride}};
}

inline void from_json(const nlohmann::json& j, BranchSpec& b) {
  b.view = view_from_string(j.at("view").get<std::string>());
  j.at("input_length").get_to(b.input_length);
  j.at("num_blocks").get_to(b.num_blocks);
  j.at("convs_per_block").get_to(b.convs_per_block);
  j.at("initial_filters").get_to(b.initial_filters);
  j.at("filter_growth").get_to(b.filter_growth);
  j.at("kernel_size").get_to(b.kernel_size);
  j.at("pool_window").get_to(b.pool_window);
  j.at("pool_stride").get_to(b.pool_stride);
}

inline void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"branches", s.branches},
                     {"fc_layers", s.fc_layers},
                     {"fc_size", s.fc_size},
                     {"dropout_rate", s.dropout_rate}};
}

inline void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
  j.at("name").get_to(s.name);
  s.branches = j.at("branches").get<std::vector<BranchSpec>>();
  j.at("fc_layers").get_to(s.fc_layers);
  j.at("fc_size").get_to(s.fc_size);
  j.at("dropout_rate").get_to(s.dropout_rate);
}

inline constexpr char kCheckpointMagic[5] = {'T', 'N', 'E', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: 5-byte magic, u32 version, u64 header length, JSON header,
// then all parameters as little-endian f64 in canonical tensor order.
inline void save_checkpoint(const Model& m, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  nlohmann::json header;
  header["spec"] = m.arch;
  nlohmann::json params = nlohmann::json::array();
  auto names = m.tensor_names();
  auto tens = m.tensors();
  std::size_t pos = 0;
  for (std::size_t i = 0; i < tens.size(); ++i) {
    params.push_back({{"name", names[i]},
                      {"shape", tens[i]->shape},
                      {"offset", pos},
                      {"size", tens[i]->numel()}});
    pos += tens[i]->numel();
  }
  header["params"] = params;
  header["total"] = pos;
  std::string header_str = header.dump();

  std::string out;
  out.reserve(5 + 4 + 8 + header_str.size() + pos * 8);
  out.append(kCheckpointMagic, 5);
  put_u32le(out, kCheckpointVersion);
  put_u64le(out, header_str.size());
  out += header_str;
  for (const Tensor* t : tens) {
    std::size_t byte_len = t->numel() * sizeof(double);
    std::size_t cur = out.size();
    out.resize(cur + byte_len);
    std::memcpy(out.data() + cur, t->data.data(), byte_len);
  }
  atomic_write(path, out);
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little);
  std::string bytes = read_file(path);
  if (bytes.size() < 17 || std::memcmp(bytes.data(), kCheckpointMagic, 5) != 0)
    fail(ErrorCategory::format, "not a checkpoint file: " + path.string());
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint32_t version = get_u32le(p + 5);
  if (version != kCheckpointVersion)
    fail(ErrorCategory::format,
         "unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len = get_u64le(p + 9);
  if (17 + header_len > bytes.size())
    fail(ErrorCategory::format, "checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(17, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("bad checkpoint header: ") + e.what());
  }
  ArchitectureSpec spec;
  std::uint64_t total = 0;
  try {
    spec = header.at("spec").get<ArchitectureSpec>();
    total = header.at("total").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::format, std::string("bad checkpoint header: ") + e.what());
  }
  Model m = Model::build_uninitialized(spec);
  if (total != m.count_params())
    fail(ErrorCategory::format, "checkpoint parameter count does not match its spec");
  std::size_t payload_off = 17 + header_len;
  if (bytes.size() - payload_off != total * sizeof(double))
    fail(ErrorCategory::format, "checkpoint payload truncated");
  std::vector<double> flat(total);
  std::memcpy(flat.data(), bytes.data() + payload_off, total * sizeof(double));
  m.set_params(flat);
  return m;
}

}  // namespace tnet
