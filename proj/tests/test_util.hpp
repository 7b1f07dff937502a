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

#include <algorithm>
#include <cmath>

#include "irrcnn/rng.hpp"
#include "irrcnn/tensor.hpp"

namespace irrcnn::test {

template <typename S>
Tensor<S> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(shape);
  for (Index i = 0; i < t.size(); ++i) {
    t.data[i] = static_cast<S>(rng.uniform(lo, hi));
  }
  return t;
}

/// 0, 1, 2, ... laid out in row-major order.
template <typename S>
Tensor<S> ramp(Shape shape) {
  Tensor<S> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<S>(i);
  return t;
}

template <typename S>
double max_rel_err(const Tensor<S>& a, const Tensor<S>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a.data[i]);
    const double y = static_cast<double>(b.data[i]);
    const double denom = std::max({floor, std::abs(x), std::abs(y)});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  return (a.data - b.data).abs().maxCoeff();
}

template <typename S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape == b.shape && (a.data == b.data).all();
}

}  // namespace irrcnn::test

#include "irrcnn/autograd.hpp"

namespace irrcnn::test {

/// Test-only tape nodes for building scalar objectives.
template <typename S>
ValueId tape_sum(Tape<S>& t, ValueId x) {
  Tensor<S> out({1, 1, 1, 1});
  out.data[0] = t.value(x).data.sum();
  return t.node(std::move(out), [x](Tape<S>& t2, ValueId self) {
    t2.grad(x).data += t2.grad(self).data[0];
  });
}

template <typename S>
ValueId tape_square(Tape<S>& t, ValueId x) {
  Tensor<S> out = t.value(x);
  out.data = out.data.square();
  return t.node(std::move(out), [x](Tape<S>& t2, ValueId self) {
    t2.grad(x).data += S(2) * t2.value(x).data * t2.grad(self).data;
  });
}

/// Worst relative error between the tape gradient of a scalar-graph builder
/// and its central-difference estimate. build(tape, x_id) must return the
/// scalar loss id and be deterministic.
template <typename S, typename BuildFn>
double fd_check(const Tensor<S>& x0, BuildFn build, double eps = 1e-5) {
  Tape<S> tape;
  const ValueId x = tape.leaf(x0, "x", true);
  const ValueId loss = build(tape, x);
  GradMap<S> grads = tape.backward(loss);
  Tensor<S> fd = finite_diff<S>(
      [&](const Tensor<S>& xv) {
        Tape<S> t2;
        const ValueId xid = t2.leaf(xv, "x", true);
        return static_cast<double>(t2.value(build(t2, xid)).data[0]);
      },
      x0, eps);
  return max_rel_err(grads.at("x"), fd);
}

}  // namespace irrcnn::test
