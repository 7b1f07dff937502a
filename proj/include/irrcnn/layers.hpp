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

#include "irrcnn/autograd.hpp"
#include "irrcnn/ops.hpp"
#include "irrcnn/rng.hpp"

namespace irrcnn {

enum class Activation { Relu, Elu };
enum class Mode { Train, Infer };

inline constexpr double kEluAlpha = 1.0;
inline constexpr double kBnMomentum = 0.99;
inline constexpr double kBnEpsilon = 1e-5;

template <typename S>
Tensor<S> activate(const Tensor<S>& x, Activation act) {
  return act == Activation::Relu ? relu(x) : elu(x, static_cast<S>(kEluAlpha));
}

template <typename S>
ValueId activate(Tape<S>& tape, ValueId x, Activation act) {
  return act == Activation::Relu ? tape.relu(x) : tape.elu(x, static_cast<S>(kEluAlpha));
}

/// One recurrent convolutional layer: a feed-forward kernel, a recurrent
/// kernel over the layer's own output channels, one shared per-feature bias,
/// and a time-step count. Weights are tied across steps, so the parameter
/// count does not depend on k.
template <typename S>
struct RclParams {
  Tensor<S> wf;    // (f, c_in, kh, kw)
  Tensor<S> wr;    // (f, f, kh, kw)
  Tensor<S> bias;  // (1, f, 1, 1)
  int k = 0;

  static RclParams make(Index f, Index c_in, Index ksize, int k) {
    RclParams p;
    p.wf = Tensor<S>({f, c_in, ksize, ksize});
    p.wr = Tensor<S>({f, f, ksize, ksize});
    p.bias = Tensor<S>({1, f, 1, 1});
    p.k = k;
    return p;
  }

  void validate() const {
    check_shape(wr.shape.c == wf.shape.n && wr.shape.n == wf.shape.n,
                "rcl: recurrent kernel must map the layer's own output channels");
    check_shape(wr.shape.h == wf.shape.h && wr.shape.w == wf.shape.w,
                "rcl: recurrent kernel size must match the feed-forward kernel");
    check_shape(k >= 0, "rcl: time-step count must be non-negative");
  }
};

/// y(0) = act(conv(x, wf) + b); y(t) = act(conv(x, wf) + conv(y(t-1), wr) + b)
/// for t = 1..k. The feed-forward term is identical at every step and is
/// computed once. Same padding, stride 1, so spatial dims are preserved.
/// When preact_out is given it receives the step-k pre-activation.
template <typename S>
Tensor<S> rcl_forward(const Tensor<S>& x, const RclParams<S>& p, Activation act,
                      Tensor<S>* preact_out = nullptr) {
  p.validate();
  const Tensor<S> ff = conv2d(x, p.wf, &p.bias, {1, 1}, Padding::Same);
  Tensor<S> pre = ff;
  Tensor<S> y = activate(pre, act);
  for (int t = 1; t <= p.k; ++t) {
    pre = add(ff, conv2d(y, p.wr, static_cast<const Tensor<S>*>(nullptr), {1, 1},
                         Padding::Same));
    y = activate(pre, act);
  }
  if (preact_out != nullptr) *preact_out = pre;
  return y;
}

/// Tape-recorded RCL: k+1 convolution nodes sharing the wf/wr leaves, so
/// gradients from every step accumulate into the tied weights.
template <typename S>
ValueId rcl_forward(Tape<S>& tape, ValueId x, ValueId wf, ValueId wr, ValueId bias,
                    int k, Activation act) {
  check_shape(k >= 0, "rcl: time-step count must be non-negative");
  const ValueId ff = tape.conv2d(x, wf, bias, {1, 1}, Padding::Same);
  ValueId y = activate(tape, ff, act);
  for (int t = 1; t <= k; ++t) {
    const ValueId rec = tape.conv2d(y, wr, ValueId{}, {1, 1}, Padding::Same);
    y = activate(tape, tape.add(ff, rec), act);
  }
  return y;
}

template <typename S>
struct BatchNormParams {
  Tensor<S> gamma, beta;                // per-channel affine, (1, c, 1, 1)
  Tensor<S> running_mean, running_var;  // inference statistics
  S momentum = static_cast<S>(kBnMomentum);
  S epsilon = static_cast<S>(kBnEpsilon);

  static BatchNormParams make(Index c) {
    BatchNormParams p;
    p.gamma = Tensor<S>::full({1, c, 1, 1}, S(1));
    p.beta = Tensor<S>({1, c, 1, 1});
    p.running_mean = Tensor<S>({1, c, 1, 1});
    p.running_var = Tensor<S>::full({1, c, 1, 1}, S(1));
    return p;
  }
};

namespace detail {

/// Per-channel mean and population variance over (n, h, w).
template <typename S>
void batch_moments(const Tensor<S>& x, VecX<S>& mean, VecX<S>& var) {
  const Index c = x.shape.c;
  const S inv_m = S(1) / static_cast<S>(x.shape.n * x.shape.h * x.shape.w);
  mean.setZero(c);
  var.setZero(c);
  for (Index n = 0; n < x.shape.n; ++n) mean += x.item(n).rowwise().sum();
  mean *= inv_m;
  for (Index n = 0; n < x.shape.n; ++n) {
    var += (x.item(n).colwise() - mean).array().square().matrix().rowwise().sum();
  }
  var *= inv_m;
}

template <typename S>
Tensor<S> bn_normalize(const Tensor<S>& x, const VecX<S>& mean, const VecX<S>& var,
                       const Tensor<S>& gamma, const Tensor<S>& beta, S epsilon) {
  Tensor<S> out(x.shape);
  const ArrayX<S> inv_std = (var.array() + epsilon).rsqrt();
  const ArrayX<S> scale = gamma.data * inv_std;
  const ArrayX<S> shift = beta.data - mean.array() * scale;
  for (Index n = 0; n < x.shape.n; ++n) {
    out.item(n) = ((x.item(n).array().colwise() * scale).colwise() + shift).matrix();
  }
  return out;
}

template <typename S>
void update_running_stats(BatchNormParams<S>& p, const VecX<S>& mean,
                          const VecX<S>& var) {
  p.running_mean.data =
      p.momentum * p.running_mean.data + (S(1) - p.momentum) * mean.array();
  p.running_var.data =
      p.momentum * p.running_var.data + (S(1) - p.momentum) * var.array();
}

}  // namespace detail

/// Train mode normalizes with batch statistics over (n, h, w) per channel
/// (and optionally folds them into the running estimates); infer mode uses
/// the running statistics. Both apply the per-channel affine gamma/beta.
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, BatchNormParams<S>& p, Mode mode,
                     bool update_running = true) {
  check_shape(x.shape.c == p.gamma.shape.c,
              "batch_norm: channel mismatch " + std::to_string(x.shape.c) + " vs " +
                  std::to_string(p.gamma.shape.c));
  if (mode == Mode::Infer) {
    return detail::bn_normalize(x, VecX<S>(p.running_mean.data.matrix()),
                                VecX<S>(p.running_var.data.matrix()), p.gamma, p.beta,
                                p.epsilon);
  }
  VecX<S> mean, var;
  detail::batch_moments(x, mean, var);
  if (update_running) detail::update_running_stats(p, mean, var);
  return detail::bn_normalize(x, mean, var, p.gamma, p.beta, p.epsilon);
}

/// Tape-recorded batch norm. The running-statistics update is a forward-pass
/// side effect on the stat tensors and is not differentiated; in train mode
/// the backward rule differentiates through the batch moments.
template <typename S>
ValueId batch_norm(Tape<S>& tape, ValueId x, ValueId gamma, ValueId beta,
                   Tensor<S>& running_mean, Tensor<S>& running_var, Mode mode,
                   bool update_running, S momentum = static_cast<S>(kBnMomentum),
                   S eps = static_cast<S>(kBnEpsilon)) {
  const Tensor<S>& xv = tape.value(x);
  check_shape(xv.shape.c == tape.value(gamma).shape.c, "batch_norm: channel mismatch");
  const bool batch_stats = mode == Mode::Train;

  VecX<S> mean, var;
  if (batch_stats) {
    detail::batch_moments(xv, mean, var);
    if (update_running) {
      running_mean.data = momentum * running_mean.data + (S(1) - momentum) * mean.array();
      running_var.data = momentum * running_var.data + (S(1) - momentum) * var.array();
    }
  } else {
    mean = running_mean.data.matrix();
    var = running_var.data.matrix();
  }
  Tensor<S> out =
      detail::bn_normalize(xv, mean, var, tape.value(gamma), tape.value(beta), eps);

  return tape.node(
      std::move(out),
      [x, gamma, beta, eps, batch_stats, mean = std::move(mean),
       var = std::move(var)](Tape<S>& t, ValueId self) {
        const Tensor<S>& dy = t.grad(self);
        const Tensor<S>& xv = t.value(x);
        const Index m = xv.shape.n * xv.shape.h * xv.shape.w;
        const ArrayX<S> inv_std = (var.array() + eps).rsqrt();

        // First pass: dgamma = sum dy*xhat, dbeta = sum dy (per channel).
        VecX<S> dgamma = VecX<S>::Zero(xv.shape.c);
        VecX<S> dbeta = VecX<S>::Zero(xv.shape.c);
        for (Index n = 0; n < xv.shape.n; ++n) {
          auto xhat = (xv.item(n).colwise() - mean).array().colwise() * inv_std;
          dgamma += (dy.item(n).array() * xhat).rowwise().sum().matrix();
          dbeta += dy.item(n).rowwise().sum();
        }
        t.grad(gamma).data += dgamma.array();
        t.grad(beta).data += dbeta.array();

        const ArrayX<S> g_scale = t.value(gamma).data * inv_std;
        Tensor<S>& dx = t.grad(x);
        if (batch_stats) {
          const ArrayX<S> mean_dy = dbeta.array() / static_cast<S>(m);
          const ArrayX<S> mean_dy_xhat = dgamma.array() / static_cast<S>(m);
          for (Index n = 0; n < xv.shape.n; ++n) {
            auto xhat = (xv.item(n).colwise() - mean).array().colwise() * inv_std;
            dx.item(n).array() +=
                ((dy.item(n).array().colwise() - mean_dy) -
                 xhat.colwise() * mean_dy_xhat)
                    .colwise() *
                g_scale;
          }
        } else {
          for (Index n = 0; n < xv.shape.n; ++n) {
            dx.item(n).array() += dy.item(n).array().colwise() * g_scale;
          }
        }
      });
}

/// Inverted-dropout mask: zero with probability rate, 1/(1-rate) otherwise.
template <typename S>
Tensor<S> make_dropout_mask(Shape shape, double rate, Rng& rng) {
  check_shape(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  Tensor<S> mask(shape);
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data[i] = rng.uniform() < rate ? S(0) : keep_scale;
  }
  return mask;
}

/// Inference is an exact identity; training zeroes each element with
/// probability rate and rescales survivors by 1/(1-rate).
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Mode mode, Rng& rng) {
  check_shape(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  const Tensor<S> mask = make_dropout_mask<S>(x.shape, rate, rng);
  Tensor<S> out;
  out.shape = x.shape;
  out.data = x.data * mask.data;
  return out;
}

/// Tape-recorded dropout. The mask is recorded so backward reuses it; in
/// inference mode no node is added at all and the input id is returned.
template <typename S>
ValueId dropout(Tape<S>& tape, ValueId x, double rate, Mode mode, Rng& rng) {
  check_shape(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (mode == Mode::Infer || rate == 0.0) return x;
  auto mask = std::make_shared<Tensor<S>>(
      make_dropout_mask<S>(tape.value(x).shape, rate, rng));
  Tensor<S> out;
  out.shape = tape.value(x).shape;
  out.data = tape.value(x).data * mask->data;
  return tape.node(std::move(out), [x, mask](Tape<S>& t, ValueId self) {
    t.grad(x).data += t.grad(self).data * mask->data;
  });
}

/// Softmax classifier head. Weights are stored as a (K, features, 1, 1)
/// tensor so the affine map is an ordinary 1x1 convolution over pooled
/// (n, features, 1, 1) inputs.
template <typename S>
struct ClassifierParams {
  Tensor<S> weights;  // (K, features, 1, 1)
  Tensor<S> bias;     // (1, K, 1, 1)

  static ClassifierParams make(Index features, Index classes) {
    check_shape(classes >= 2, "classifier: need at least two classes");
    ClassifierParams p;
    p.weights = Tensor<S>({classes, features, 1, 1});
    p.bias = Tensor<S>({1, classes, 1, 1});
    return p;
  }
};

/// Per-row softmax of the affine logits; rows sum to 1.
template <typename S>
Tensor<S> classifier_forward(const Tensor<S>& features, const ClassifierParams<S>& p) {
  check_shape(features.shape.h == 1 && features.shape.w == 1,
              "classifier: expects pooled (n,c,1,1) features");
  return softmax(conv2d(features, p.weights, &p.bias, {1, 1}, Padding::Valid));
}

}  // namespace irrcnn
