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

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "irrcnn/ops.hpp"

namespace irrcnn {

struct ValueId {
  Index idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Gradients keyed by parameter name; std::map keeps iteration order
/// deterministic for optimizers and reports.
template <typename S>
using GradMap = std::map<std::string, Tensor<S>>;

/// Define-by-run tape. Forward calls append nodes (one output each, written
/// once, inputs always earlier in the list); backward walks the list in
/// reverse, each node reading its own output gradient and accumulating into
/// its inputs' buffers.
template <typename S>
class Tape {
 public:
  /// Backward rule of one node; `self` is the node's own id.
  using BackFn = std::function<void(Tape&, ValueId self)>;

  ValueId leaf(Tensor<S> value, std::string name = {}, bool trainable = false) {
    nodes_.push_back(Node{std::move(value), std::move(name), trainable, true, nullptr});
    return ValueId{static_cast<Index>(nodes_.size()) - 1};
  }

  /// Generic recorded operation. Layer code builds on this.
  ValueId node(Tensor<S> value, BackFn back) {
    nodes_.push_back(Node{std::move(value), {}, false, false, std::move(back)});
    return ValueId{static_cast<Index>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(ValueId id) const { return at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first touch. Only
  /// meaningful during backward().
  Tensor<S>& grad(ValueId id) {
    at(id);
    Tensor<S>& g = grads_.at(id.idx);
    if (g.empty()) g = Tensor<S>(nodes_[id.idx].value.shape);
    return g;
  }

  // -- tensor-core ops ------------------------------------------------------

  ValueId conv2d(ValueId x, ValueId w, ValueId bias, Stride2 st, Padding pad) {
    const Tensor<S>* b = bias.valid() ? &value(bias) : nullptr;
    Tensor<S> out = irrcnn::conv2d(value(x), value(w), b, st, pad);
    return node(std::move(out), [=](Tape& t, ValueId self) {
      const Tensor<S>& dy = t.grad(self);
      t.grad(x).data += conv2d_grad_input(dy, t.value(w), t.value(x).shape, st, pad).data;
      t.grad(w).data += conv2d_grad_weights(dy, t.value(x), t.value(w).shape, st, pad).data;
      if (bias.valid()) t.grad(bias).data += conv2d_grad_bias(dy).data;
    });
  }

  ValueId max_pool(ValueId x, Window2 win, Stride2 st) {
    auto argmax = std::make_shared<std::vector<std::int64_t>>();
    Tensor<S> out = irrcnn::max_pool(value(x), win, st, argmax.get());
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(x).data += max_pool_grad(t.grad(self), *argmax, t.value(x).shape).data;
    });
  }

  ValueId avg_pool(ValueId x, Window2 win, Stride2 st, Padding pad = Padding::Same) {
    Tensor<S> out = irrcnn::avg_pool(value(x), win, st, pad);
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(x).data +=
          avg_pool_grad(t.grad(self), t.value(x).shape, win, st, pad).data;
    });
  }

  ValueId global_avg_pool(ValueId x) {
    Tensor<S> out = irrcnn::global_avg_pool(value(x));
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(x).data += global_avg_pool_grad(t.grad(self), t.value(x).shape).data;
    });
  }

  ValueId concat_channels(std::vector<ValueId> parts) {
    std::vector<const Tensor<S>*> ptrs;
    ptrs.reserve(parts.size());
    for (ValueId p : parts) ptrs.push_back(&value(p));
    Tensor<S> out = irrcnn::concat_channels(ptrs);
    return node(std::move(out), [parts = std::move(parts)](Tape& t, ValueId self) {
      const Tensor<S>& dy = t.grad(self);
      Index c0 = 0;
      for (ValueId p : parts) {
        const Index c = t.value(p).shape.c;
        t.grad(p).data += slice_channels(dy, c0, c).data;
        c0 += c;
      }
    });
  }

  ValueId add(ValueId a, ValueId b) {
    Tensor<S> out = irrcnn::add(value(a), value(b));
    return node(std::move(out), [=](Tape& t, ValueId self) {
      const Tensor<S>& dy = t.grad(self);
      t.grad(a).data += dy.data;
      t.grad(b).data += dy.data;
    });
  }

  ValueId relu(ValueId x) {
    Tensor<S> out = irrcnn::relu(value(x));
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(x).data += relu_grad(t.grad(self), t.value(x)).data;
    });
  }

  ValueId elu(ValueId x, S alpha = S(1)) {
    Tensor<S> out = irrcnn::elu(value(x), alpha);
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(x).data += elu_grad(t.grad(self), t.value(x), alpha).data;
    });
  }

  ValueId softmax(ValueId logits) {
    Tensor<S> out = irrcnn::softmax(value(logits));
    return node(std::move(out), [=](Tape& t, ValueId self) {
      t.grad(logits).data += softmax_grad(t.grad(self), t.value(self)).data;
    });
  }

  /// Mean negative log likelihood of the labelled class over the batch, with
  /// the log argument clamped at 1e-12, plus a constant regularization term
  /// (whose gradient is applied separately; see apply_l2).
  ValueId cross_entropy(ValueId probs, std::vector<int> labels, S l2_term = S(0)) {
    const Tensor<S>& p = value(probs);
    check_shape(p.shape.h == 1 && p.shape.w == 1,
                "cross_entropy: expects (n,K,1,1) probabilities");
    check_shape(static_cast<Index>(labels.size()) == p.shape.n,
                "cross_entropy: one label per batch row");
    const Index k = p.shape.c;
    const S clamp = S(1e-12);
    S acc = 0;
    for (Index n = 0; n < p.shape.n; ++n) {
      const int label = labels[n];
      if (label < 0 || label >= k) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range [0," + std::to_string(k) + ")");
      }
      acc -= std::log(std::max(p.data[n * k + label], clamp));
    }
    Tensor<S> out({1, 1, 1, 1});
    out.data[0] = acc / static_cast<S>(p.shape.n) + l2_term;
    return node(std::move(out),
                [probs, k, clamp, labels = std::move(labels)](Tape& t, ValueId self) {
      const S dloss = t.grad(self).data[0];
      const Tensor<S>& pv = t.value(probs);
      Tensor<S>& dp = t.grad(probs);
      const S inv_n = S(1) / static_cast<S>(pv.shape.n);
      for (Index n = 0; n < pv.shape.n; ++n) {
        const S pl = pv.data[n * k + labels[n]];
        if (pl > clamp) dp.data[n * k + labels[n]] -= dloss * inv_n / pl;
      }
    });
  }

  // -- reverse pass ---------------------------------------------------------

  /// Gradients of a scalar loss with respect to every trainable leaf.
  GradMap<S> backward(ValueId loss) {
    if (!loss.valid() || loss.idx >= static_cast<Index>(nodes_.size())) {
      throw std::invalid_argument("backward: loss value is not on this tape");
    }
    if (nodes_[loss.idx].value.size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  nodes_[loss.idx].value.shape.str());
    }
    grads_.assign(nodes_.size(), Tensor<S>{});
    grad(loss).data[0] = S(1);
    for (Index i = loss.idx; i >= 0; --i) {
      if (nodes_[i].back == nullptr || grads_[i].empty()) continue;
      nodes_[i].back(*this, ValueId{i});
    }
    GradMap<S> out;
    for (Index i = 0; i < static_cast<Index>(nodes_.size()); ++i) {
      if (!nodes_[i].is_leaf || !nodes_[i].trainable) continue;
      out[nodes_[i].name] =
          grads_[i].empty() ? Tensor<S>(nodes_[i].value.shape) : grads_[i];
    }
    return out;
  }

 private:
  struct Node {
    Tensor<S> value;
    std::string name;
    bool trainable = false;
    bool is_leaf = false;
    BackFn back;
  };

  const Node& at(ValueId id) const {
    if (!id.valid() || id.idx >= static_cast<Index>(nodes_.size())) {
      throw std::invalid_argument("tape: value id out of range");
    }
    return nodes_[id.idx];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
};

/// Central-difference gradient estimate of a scalar function. The step for
/// element i is eps * max(1, |x_i|), keeping the probe scale-aware.
template <typename S>
Tensor<S> finite_diff(const std::function<double(const Tensor<S>&)>& f,
                      const Tensor<S>& x, double eps) {
  Tensor<S> g(x.shape);
  Tensor<S> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double step = eps * std::max(1.0, std::abs(static_cast<double>(x.data[i])));
    const S saved = probe.data[i];
    probe.data[i] = saved + static_cast<S>(step);
    const double hi = f(probe);
    probe.data[i] = saved - static_cast<S>(step);
    const double lo = f(probe);
    probe.data[i] = saved;
    g.data[i] = static_cast<S>((hi - lo) / (2.0 * step));
  }
  return g;
}

}  // namespace irrcnn
