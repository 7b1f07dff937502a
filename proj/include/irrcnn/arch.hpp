/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "irrcnn/layers.hpp"

namespace irrcnn {

enum class Variant { Irrcnn, Ircnn, Ein, Eirn };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Irrcnn: return "irrcnn";
    case Variant::Ircnn: return "ircnn";
    case Variant::Ein: return "ein";
    case Variant::Eirn: return "eirn";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "irrcnn") return Variant::Irrcnn;
  if (s == "ircnn") return Variant::Ircnn;
  if (s == "ein") return Variant::Ein;
  if (s == "eirn") return Variant::Eirn;
  throw std::invalid_argument("unknown architecture variant: " + s);
}

inline bool variant_recurrent(Variant v) {
  return v == Variant::Irrcnn || v == Variant::Ircnn;
}
inline bool variant_residual(Variant v) {
  return v == Variant::Irrcnn || v == Variant::Eirn;
}

inline std::string activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "elu";
}
inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "elu") return Activation::Elu;
  throw std::invalid_argument("unknown activation: " + s);
}

/// Declarative model description. Width values are the unscaled design
/// widths; width_mult rescales them (EIN/EIRN use this for parameter parity
/// with the recurrent reference; <= 0 asks the builder to calibrate it).
struct ArchSpec {
  Variant variant = Variant::Irrcnn;
  Index in_c = 3, in_h = 32, in_w = 32;
  std::vector<Index> stem = {64, 64};
  std::vector<Index> stages = {64, 144, 320};
  Index final_width = 672;  // output channels of the last transition
  int k = 2;
  Index classes = 10;
  double width_mult = 1.0;
  Activation activation = Activation::Relu;
};

/// Round to nearest, ties toward zero.
inline Index round_half_down(double x) {
  return static_cast<Index>(std::ceil(x - 0.5));
}

inline Index scaled_width(Index w, double mult) {
  return std::max<Index>(4, round_half_down(static_cast<double>(w) * mult));
}

/// Branch output channels of an inception unit at width c. The residual add
/// requires the three branches to concatenate back to exactly c; the 3x3
/// branch carries the largest share.
struct BranchAlloc {
  Index c1x1 = 0, c3x3 = 0, cpool = 0;
  Index total() const { return c1x1 + c3x3 + cpool; }
};

inline BranchAlloc branch_alloc(Index c) {
  BranchAlloc a;
  a.c1x1 = c / 4;
  a.cpool = c / 4;
  a.c3x3 = c - a.c1x1 - a.cpool;
  return a;
}

struct InceptionUnitSpec {
  Index c_in = 0;
  BranchAlloc alloc;
  int k = 0;
  Activation activation = Activation::Relu;

  void validate() const {
    check_shape(alloc.total() == c_in,
                "inception unit: branch allocation must sum to the input channels (" +
                    std::to_string(alloc.total()) + " vs " + std::to_string(c_in) + ")");
    check_shape(alloc.c1x1 > 0 && alloc.c3x3 > 0 && alloc.cpool > 0,
                "inception unit: every branch needs at least one channel");
  }
};

struct TransitionSpec {
  Index c_in = 0, c_out = 0;
  bool pool = false;
  double dropout_rate = 0.5;
  Activation activation = Activation::Relu;

  void validate() const {
    check_shape(c_out >= c_in, "transition: output width must not shrink (" +
                                   std::to_string(c_in) + " -> " +
                                   std::to_string(c_out) + ")");
  }
};

// ---------------------------------------------------------------------------
// Plan: the deterministic topological layer list shared by the recorded
// (training) and eager (inference / initialization) executors.

enum class StepKind {
  Conv,
  Rcl,
  BatchNorm,
  Act,
  MaxPool,
  AvgPool,
  GlobalAvgPool,
  Dropout,
  Concat,
  Add,
  Softmax,
};

inline const char* step_kind_name(StepKind k) {
  switch (k) {
    case StepKind::Conv: return "conv";
    case StepKind::Rcl: return "rcl";
    case StepKind::BatchNorm: return "batch_norm";
    case StepKind::Act: return "act";
    case StepKind::MaxPool: return "max_pool";
    case StepKind::AvgPool: return "avg_pool";
    case StepKind::GlobalAvgPool: return "global_avg_pool";
    case StepKind::Dropout: return "dropout";
    case StepKind::Concat: return "concat";
    case StepKind::Add: return "add";
    case StepKind::Softmax: return "softmax";
  }
  return "?";
}

struct PlanStep {
  StepKind kind;
  std::string name;
  std::vector<int> in;
  int out = -1;
  // Parameter-table indices; meaning depends on kind:
  //   Conv: p0 = weights, p1 = bias
  //   Rcl:  p0 = wf, p1 = wr, p2 = bias
  //   BatchNorm: p0 = gamma, p1 = beta, p2 = running mean, p3 = running var
  int p0 = -1, p1 = -1, p2 = -1, p3 = -1;
  int rcl_k = 0;
  Stride2 stride{1, 1};
  Window2 win{3, 3};
  Padding pad = Padding::Same;
  Activation act = Activation::Relu;
  double rate = 0.0;

  bool has_weights() const { return kind == StepKind::Conv || kind == StepKind::Rcl; }
};

struct Plan {
  std::vector<PlanStep> steps;
  int input_slot = 0;
  int output_slot = -1;
  int slot_count = 0;
};

enum class ParamKind { Weight, Bias, BnGamma, BnBeta, BnMean, BnVar };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::Weight;
  bool trainable = true;
  bool in_block = false;  // belongs to an inception block (default L2 scope)
};

struct PlanBundle {
  Plan plan;
  std::vector<ParamSpec> params;
  ArchSpec resolved;  // width_mult made explicit

  Index trainable_count() const {
    Index n = 0;
    for (const ParamSpec& p : params) {
      if (p.trainable) n += p.shape.size();
    }
    return n;
  }
};

namespace detail {

class Planner {
 public:
  explicit Planner(const ArchSpec& arch) : arch_(arch) {}

  PlanBundle run() {
    check_shape(!arch_.stem.empty() && !arch_.stages.empty(),
                "arch: stem and stages must be non-empty");
    check_shape(arch_.stem.back() == arch_.stages.front(),
                "arch: last stem width must equal the first stage width");
    check_shape(arch_.classes >= 2, "arch: need at least two classes");
    check_shape(arch_.k >= 0, "arch: time steps must be non-negative");
    check_shape(arch_.width_mult > 0, "arch: width multiplier must be resolved");

    cur_ = new_slot();  // input
    bundle_.plan.input_slot = cur_;

    Index c = arch_.in_c;
    for (std::size_t i = 0; i < arch_.stem.size(); ++i) {
      const Index out = scaled_width(arch_.stem[i], arch_.width_mult);
      const std::string base = "stem" + std::to_string(i + 1);
      add_conv(base, c, out, 3, false);
      add_batch_norm(base + ".bn", out, false);
      add_act(base + ".act");
      c = out;
    }

    for (std::size_t s = 0; s < arch_.stages.size(); ++s) {
      const Index width = scaled_width(arch_.stages[s], arch_.width_mult);
      check_shape(width == c, "arch: inconsistent stage width");
      add_block("stage" + std::to_string(s + 1) + ".block", width);
      const bool last = s + 1 == arch_.stages.size();
      const Index t_out = scaled_width(
          last ? arch_.final_width : arch_.stages[s + 1], arch_.width_mult);
      TransitionSpec tr{width, t_out, s < 2, 0.5, arch_.activation};
      tr.validate();
      add_transition("trans" + std::to_string(s + 1), tr);
      c = t_out;
    }

    add_step(StepKind::GlobalAvgPool, "gap", {cur_});
    add_conv("classifier", c, arch_.classes, 1, false, Padding::Valid);
    add_step(StepKind::Softmax, "softmax", {cur_});

    bundle_.plan.output_slot = cur_;
    bundle_.resolved = arch_;
    return std::move(bundle_);
  }

 private:
  int new_slot() { return bundle_.plan.slot_count++; }

  PlanStep& add_step(StepKind kind, std::string name, std::vector<int> in) {
    PlanStep st;
    st.kind = kind;
    st.name = std::move(name);
    st.in = std::move(in);
    st.out = new_slot();
    st.act = arch_.activation;
    bundle_.plan.steps.push_back(std::move(st));
    cur_ = bundle_.plan.steps.back().out;
    return bundle_.plan.steps.back();
  }

  int add_param(std::string name, Shape shape, ParamKind kind, bool in_block) {
    const bool trainable = kind != ParamKind::BnMean && kind != ParamKind::BnVar;
    bundle_.params.push_back(ParamSpec{std::move(name), shape, kind, trainable, in_block});
    return static_cast<int>(bundle_.params.size()) - 1;
  }

  void add_conv(const std::string& name, Index c_in, Index c_out, Index ksize,
                bool in_block, Padding pad = Padding::Same) {
    const int w = add_param(name + ".w", {c_out, c_in, ksize, ksize}, ParamKind::Weight,
                            in_block);
    const int b = add_param(name + ".b", {1, c_out, 1, 1}, ParamKind::Bias, in_block);
    PlanStep& st = add_step(StepKind::Conv, name, {cur_});
    st.p0 = w;
    st.p1 = b;
    st.pad = pad;
  }

  void add_act(const std::string& name) { add_step(StepKind::Act, name, {cur_}); }

  void add_batch_norm(const std::string& name, Index c, bool in_block) {
    const int g = add_param(name + ".gamma", {1, c, 1, 1}, ParamKind::BnGamma, in_block);
    const int b = add_param(name + ".beta", {1, c, 1, 1}, ParamKind::BnBeta, in_block);
    const int m = add_param(name + ".mean", {1, c, 1, 1}, ParamKind::BnMean, in_block);
    const int v = add_param(name + ".var", {1, c, 1, 1}, ParamKind::BnVar, in_block);
    PlanStep& st = add_step(StepKind::BatchNorm, name, {cur_});
    st.p0 = g;
    st.p1 = b;
    st.p2 = m;
    st.p3 = v;
  }

  /// Recurrent branch (tied weights) for IRRCNN/IRCNN.
  void add_rcl(const std::string& name, Index c_in, Index c_out, Index ksize) {
    const int wf =
        add_param(name + ".wf", {c_out, c_in, ksize, ksize}, ParamKind::Weight, true);
    const int wr =
        add_param(name + ".wr", {c_out, c_out, ksize, ksize}, ParamKind::Weight, true);
    const int b = add_param(name + ".b", {1, c_out, 1, 1}, ParamKind::Bias, true);
    PlanStep& st = add_step(StepKind::Rcl, name, {cur_});
    st.p0 = wf;
    st.p1 = wr;
    st.p2 = b;
    st.rcl_k = arch_.k;
  }

  /// Untied chain of k+1 same-shape convolutions for EIN/EIRN, an activation
  /// after each.
  void add_chain(const std::string& name, Index c_in, Index c_out, Index ksize) {
    Index c = c_in;
    for (int j = 0; j <= arch_.k; ++j) {
      const std::string conv = name + ".conv" + std::to_string(j + 1);
      add_conv(conv, c, c_out, ksize, true);
      add_act(conv + ".act");
      c = c_out;
    }
  }

  void add_block(const std::string& name, Index width) {
    InceptionUnitSpec unit{width, branch_alloc(width), arch_.k, arch_.activation};
    unit.validate();
    const int block_in = cur_;
    const bool recurrent = variant_recurrent(arch_.variant);

    cur_ = block_in;
    if (recurrent) {
      add_rcl(name + ".b1x1", width, unit.alloc.c1x1, 1);
    } else {
      add_chain(name + ".b1x1", width, unit.alloc.c1x1, 1);
    }
    const int b1 = cur_;

    cur_ = block_in;
    if (recurrent) {
      add_rcl(name + ".b3x3", width, unit.alloc.c3x3, 3);
    } else {
      add_chain(name + ".b3x3", width, unit.alloc.c3x3, 3);
    }
    const int b3 = cur_;

    cur_ = block_in;
    add_step(StepKind::AvgPool, name + ".pool.avg", {cur_});
    add_conv(name + ".pool", width, unit.alloc.cpool, 1, true);
    add_act(name + ".pool.act");
    const int bp = cur_;

    add_step(StepKind::Concat, name + ".concat", {b1, b3, bp});
    if (variant_residual(arch_.variant)) {
      add_step(StepKind::Add, name + ".add", {block_in, cur_});
    }
    add_batch_norm(name + ".bn", width, true);
  }

  void add_transition(const std::string& name, const TransitionSpec& tr) {
    add_conv(name, tr.c_in, tr.c_out, 3, false);
    add_act(name + ".act");
    if (tr.pool) {
      PlanStep& st = add_step(StepKind::MaxPool, name + ".maxpool", {cur_});
      st.win = {3, 3};
      st.stride = {2, 2};
    }
    PlanStep& st = add_step(StepKind::Dropout, name + ".dropout", {cur_});
    st.rate = tr.dropout_rate;
  }

  const ArchSpec& arch_;
  PlanBundle bundle_;
  int cur_ = 0;
};

}  // namespace detail

/// Lay out the plan and parameter table for an already-resolved ArchSpec
/// (width_mult > 0).
inline PlanBundle plan_model(const ArchSpec& arch) {
  return detail::Planner(arch).run();
}

/// Pick the width multiplier whose parameter count lands closest to target.
/// The count is monotone non-decreasing in the multiplier; the search works
/// on a 1/1024 grid and rounds ties down.
inline double calibrate_width_multiplier(ArchSpec arch, Index target) {
  const double grid = 1.0 / 1024.0;
  auto count_at = [&](long step) {
    arch.width_mult = static_cast<double>(step) * grid;
    return plan_model(arch).trainable_count();
  };
  long lo = static_cast<long>(0.25 / grid), hi = static_cast<long>(2.0 / grid);
  while (lo < hi) {
    const long mid = (lo + hi) / 2;
    if (count_at(mid) < target) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  // lo is the first grid point at or above target; its neighbour below may be
  // closer.
  long best = lo;
  if (lo > 1) {
    const Index above = count_at(lo);
    const Index below = count_at(lo - 1);
    const Index d_above = above > target ? above - target : target - above;
    const Index d_below = below > target ? below - target : target - below;
    if (d_below <= d_above) best = lo - 1;
  }
  return static_cast<double>(best) * grid;
}

/// Resolve width_mult: explicit values pass through; <= 0 means 1 for the
/// recurrent variants and parity calibration against the IRRCNN reference
/// for EIN/EIRN.
inline ArchSpec resolve_arch(ArchSpec arch) {
  if (arch.width_mult > 0) return arch;
  if (variant_recurrent(arch.variant)) {
    arch.width_mult = 1.0;
    return arch;
  }
  ArchSpec ref = arch;
  ref.variant = Variant::Irrcnn;
  ref.width_mult = 1.0;
  const Index target = plan_model(ref).trainable_count();
  arch.width_mult = calibrate_width_multiplier(arch, target);
  return arch;
}

// ---------------------------------------------------------------------------
// Model: plan + materialized parameters.

template <typename S>
struct Param {
  std::string name;
  Tensor<S> value;
  ParamKind kind = ParamKind::Weight;
  bool trainable = true;
  bool in_block = false;
};

template <typename S>
struct Model {
  ArchSpec arch;
  Plan plan;
  std::vector<Param<S>> params;
  std::map<std::string, int> index;

  Param<S>& param(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) {
      throw std::invalid_argument("model: no parameter named " + name);
    }
    return params[it->second];
  }
  const Param<S>& param(const std::string& name) const {
    return const_cast<Model*>(this)->param(name);
  }
  bool has_param(const std::string& name) const { return index.count(name) != 0; }
};

/// Materialize a model from its spec. Weights start at zero (see init.hpp
/// for the actual schemes); BN gamma and running variance start at one.
template <typename S>
Model<S> build_model(const ArchSpec& arch) {
  PlanBundle bundle = plan_model(resolve_arch(arch));
  Model<S> m;
  m.arch = bundle.resolved;
  m.plan = std::move(bundle.plan);
  m.params.reserve(bundle.params.size());
  for (std::size_t i = 0; i < bundle.params.size(); ++i) {
    const ParamSpec& ps = bundle.params[i];
    Param<S> p;
    p.name = ps.name;
    p.kind = ps.kind;
    p.trainable = ps.trainable;
    p.in_block = ps.in_block;
    p.value = (ps.kind == ParamKind::BnGamma || ps.kind == ParamKind::BnVar)
                  ? Tensor<S>::full(ps.shape, S(1))
                  : Tensor<S>(ps.shape);
    m.index[p.name] = static_cast<int>(i);
    m.params.push_back(std::move(p));
  }
  return m;
}

/// The paper's control variants share everything but the variant tag.
template <typename S>
Model<S> build_equivalent(ArchSpec arch, Variant variant) {
  arch.variant = variant;
  return build_model<S>(arch);
}

template <typename S>
Index param_count(const Model<S>& m) {
  Index n = 0;
  for (const Param<S>& p : m.params) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// Executors.

struct ForwardOptions {
  bool batch_stats = false;     // batch norm uses batch statistics
  bool dropout_active = false;
  bool update_running = false;  // fold batch moments into running stats
  std::uint64_t dropout_seed = 0;

  static ForwardOptions train(std::uint64_t seed) { return {true, true, true, seed}; }
  static ForwardOptions infer() { return {false, false, false, 0}; }
  /// Initialization probes: batch statistics, no dropout, no side effects.
  static ForwardOptions probe() { return {true, false, false, 0}; }
};

template <typename S>
struct TapeRun {
  ValueId output;  // softmax probabilities
  std::vector<std::pair<std::string, ValueId>> layer_outputs;
  std::map<std::string, ValueId> param_ids;
};

/// Record the full model forward on a tape. Parameters become named leaves
/// (trainable ones marked so backward() yields the GradMap).
template <typename S>
TapeRun<S> run_on_tape(Tape<S>& tape, Model<S>& model, const Tensor<S>& input,
                       const ForwardOptions& opt) {
  TapeRun<S> run;
  std::vector<ValueId> pid(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Param<S>& p = model.params[i];
    if (p.kind == ParamKind::BnMean || p.kind == ParamKind::BnVar) continue;
    pid[i] = tape.leaf(p.value, p.name, p.trainable);
    run.param_ids[p.name] = pid[i];
  }
  std::vector<ValueId> slot(model.plan.slot_count);
  slot[model.plan.input_slot] = tape.leaf(input);

  const Mode bn_mode = opt.batch_stats ? Mode::Train : Mode::Infer;
  const Mode drop_mode = opt.dropout_active ? Mode::Train : Mode::Infer;
  Rng drop_rng(opt.dropout_seed);

  for (const PlanStep& st : model.plan.steps) {
    const ValueId x = slot[st.in[0]];
    ValueId out;
    switch (st.kind) {
      case StepKind::Conv:
        out = tape.conv2d(x, pid[st.p0], pid[st.p1], st.stride, st.pad);
        break;
      case StepKind::Rcl:
        out = rcl_forward(tape, x, pid[st.p0], pid[st.p1], pid[st.p2], st.rcl_k, st.act);
        break;
      case StepKind::BatchNorm:
        out = batch_norm(tape, x, pid[st.p0], pid[st.p1],
                         model.params[st.p2].value, model.params[st.p3].value,
                         bn_mode, opt.update_running);
        break;
      case StepKind::Act:
        out = activate(tape, x, st.act);
        break;
      case StepKind::MaxPool:
        out = tape.max_pool(x, st.win, st.stride);
        break;
      case StepKind::AvgPool:
        out = tape.avg_pool(x, st.win, st.stride, Padding::Same);
        break;
      case StepKind::GlobalAvgPool:
        out = tape.global_avg_pool(x);
        break;
      case StepKind::Dropout:
        out = dropout(tape, x, st.rate, drop_mode, drop_rng);
        break;
      case StepKind::Concat:
        out = tape.concat_channels({slot[st.in[0]], slot[st.in[1]], slot[st.in[2]]});
        break;
      case StepKind::Add:
        out = tape.add(slot[st.in[0]], slot[st.in[1]]);
        break;
      case StepKind::Softmax:
        out = tape.softmax(x);
        break;
    }
    slot[st.out] = out;
    run.layer_outputs.emplace_back(st.name, out);
  }
  run.output = slot[model.plan.output_slot];
  return run;
}

/// Evaluate a single plan step eagerly. `preact` (when requested and
/// meaningful) receives the pre-activation output: the conv result itself,
/// or the step-k pre-activation of an RCL.
template <typename S>
Tensor<S> eval_step_eager(Model<S>& model, const PlanStep& st,
                          const std::vector<const Tensor<S>*>& in,
                          const ForwardOptions& opt, Rng& drop_rng,
                          Tensor<S>* preact = nullptr) {
  auto pv = [&](int i) -> Tensor<S>& { return model.params[i].value; };
  switch (st.kind) {
    case StepKind::Conv: {
      Tensor<S> out = conv2d(*in[0], pv(st.p0), &pv(st.p1), st.stride, st.pad);
      if (preact != nullptr) *preact = out;
      return out;
    }
    case StepKind::Rcl: {
      RclParams<S> p;  // shallow copies of the parameter tensors
      p.wf = pv(st.p0);
      p.wr = pv(st.p1);
      p.bias = pv(st.p2);
      p.k = st.rcl_k;
      return rcl_forward(*in[0], p, st.act, preact);
    }
    case StepKind::BatchNorm: {
      BatchNormParams<S> bn;
      bn.gamma = pv(st.p0);
      bn.beta = pv(st.p1);
      bn.running_mean = pv(st.p2);
      bn.running_var = pv(st.p3);
      Tensor<S> out = batch_norm(*in[0], bn, opt.batch_stats ? Mode::Train : Mode::Infer,
                                 opt.update_running);
      if (opt.update_running && opt.batch_stats) {
        pv(st.p2) = bn.running_mean;
        pv(st.p3) = bn.running_var;
      }
      return out;
    }
    case StepKind::Act:
      return activate(*in[0], st.act);
    case StepKind::MaxPool:
      return max_pool(*in[0], st.win, st.stride);
    case StepKind::AvgPool:
      return avg_pool(*in[0], st.win, st.stride, Padding::Same);
    case StepKind::GlobalAvgPool:
      return global_avg_pool(*in[0]);
    case StepKind::Dropout:
      return dropout(*in[0], st.rate, opt.dropout_active ? Mode::Train : Mode::Infer,
                     drop_rng);
    case StepKind::Concat:
      return concat_channels<S>({in[0], in[1], in[2]});
    case StepKind::Add:
      return add(*in[0], *in[1]);
    case StepKind::Softmax:
      return softmax(*in[0]);
  }
  throw std::logic_error("eval_step_eager: unhandled step kind");
}

/// Eager forward over the plan. Slots are freed after their last reader so
/// peak memory stays at a few live activations.
template <typename S>
Tensor<S> run_eager(Model<S>& model, const Tensor<S>& input, const ForwardOptions& opt,
                    std::vector<std::pair<std::string, Shape>>* shape_trace = nullptr) {
  std::vector<int> last_use(model.plan.slot_count, -1);
  for (int i = 0; i < static_cast<int>(model.plan.steps.size()); ++i) {
    for (int s : model.plan.steps[i].in) last_use[s] = i;
  }
  std::vector<Tensor<S>> slot(model.plan.slot_count);
  slot[model.plan.input_slot] = input;
  Rng drop_rng(opt.dropout_seed);

  for (int i = 0; i < static_cast<int>(model.plan.steps.size()); ++i) {
    const PlanStep& st = model.plan.steps[i];
    std::vector<const Tensor<S>*> in;
    in.reserve(st.in.size());
    for (int s : st.in) in.push_back(&slot[s]);
    slot[st.out] = eval_step_eager(model, st, in, opt, drop_rng);
    if (shape_trace != nullptr) {
      shape_trace->emplace_back(st.name, slot[st.out].shape);
    }
    for (int s : st.in) {
      if (last_use[s] == i && s != model.plan.output_slot) slot[s] = Tensor<S>{};
    }
  }
  return slot[model.plan.output_slot];
}

// ---------------------------------------------------------------------------
// Standalone block-level forwards. These mirror the plan layout at the scale
// of one unit and are the reference the plan-based executors are tested
// against.

template <typename S>
struct IrcnnUnitParams {
  bool recurrent = true;
  RclParams<S> b1x1, b3x3;                       // recurrent branches
  std::vector<ConvKernel<S>> chain1x1, chain3x3;  // untied-chain branches
  ConvKernel<S> pool_proj;
  int k = 0;
  Activation activation = Activation::Relu;
};

template <typename S>
Tensor<S> chain_forward(const Tensor<S>& x, const std::vector<ConvKernel<S>>& chain,
                        Activation act) {
  Tensor<S> y = x;
  for (const ConvKernel<S>& c : chain) {
    y = activate(conv2d(y, c, {1, 1}, Padding::Same), act);
  }
  return y;
}

/// Inception unit: 1x1 branch, 3x3 branch, and a same-padded 3x3 average
/// pool followed by a 1x1 projection, concatenated along channels.
template <typename S>
Tensor<S> ircnn_unit_forward(const Tensor<S>& x, const IrcnnUnitParams<S>& u) {
  Tensor<S> b1, b3;
  if (u.recurrent) {
    b1 = rcl_forward(x, u.b1x1, u.activation);
    b3 = rcl_forward(x, u.b3x3, u.activation);
  } else {
    b1 = chain_forward(x, u.chain1x1, u.activation);
    b3 = chain_forward(x, u.chain3x3, u.activation);
  }
  Tensor<S> bp = activate(
      conv2d(avg_pool(x, {3, 3}, {1, 1}, Padding::Same), u.pool_proj, {1, 1}, Padding::Same),
      u.activation);
  return concat_channels<S>({&b1, &b3, &bp});
}

template <typename S>
struct IrrcnnBlockParams {
  IrcnnUnitParams<S> unit;
  BatchNormParams<S> bn;
  bool residual = true;
};

/// pre_bn = x + unit(x) (or unit(x) alone without the residual), then batch
/// norm. Shape is preserved whenever the branch allocation sums to the input
/// channels.
template <typename S>
Tensor<S> irrcnn_block_forward(const Tensor<S>& x, IrrcnnBlockParams<S>& p, Mode mode,
                               Tensor<S>* pre_bn_out = nullptr) {
  Tensor<S> unit = ircnn_unit_forward(x, p.unit);
  Tensor<S> pre = p.residual ? add(x, unit) : std::move(unit);
  if (pre_bn_out != nullptr) *pre_bn_out = pre;
  return batch_norm(pre, p.bn, mode);
}

template <typename S>
struct TransitionParams {
  ConvKernel<S> conv;
  bool pool = true;
  double dropout_rate = 0.5;
  Activation activation = Activation::Relu;
};

/// 3x3 same conv, activation, optional overlapped 3x3/2 max pool, dropout.
template <typename S>
Tensor<S> transition_forward(const Tensor<S>& x, const TransitionParams<S>& p,
                             Mode mode, Rng& rng) {
  Tensor<S> y = activate(conv2d(x, p.conv, {1, 1}, Padding::Same), p.activation);
  if (p.pool) y = max_pool(y, {3, 3}, {2, 2});
  return dropout(y, p.dropout_rate, mode, rng);
}

}  // namespace irrcnn
