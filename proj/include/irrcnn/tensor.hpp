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

#include <Eigen/Core>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>

namespace irrcnn {

using Index = Eigen::Index;

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowMatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstRowMatMap = Eigen::Map<const RowMat<S>>;

/// (batch, channels, rows, cols). All tensors in the engine are rank 4;
/// per-channel vectors are carried as (1, c, 1, 1).
struct Shape {
  Index n = 0, c = 0, h = 0, w = 0;

  Index size() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense rank-4 array in row-major (n,c,h,w) order. Scalar is float for the
/// standard precision mode and double for the wide mode.
template <typename S>
struct Tensor {
  Shape shape;
  ArrayX<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(ArrayX<S>::Zero(s.size())) {}
  Tensor(Shape s, ArrayX<S> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape.str());
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s); }

  static Tensor full(Shape s, S v) {
    Tensor t(s);
    t.data.setConstant(v);
    return t;
  }

  static Tensor from(Shape s, std::initializer_list<S> values) {
    Tensor t(s);
    if (static_cast<Index>(values.size()) != s.size()) {
      throw std::invalid_argument("tensor: initializer length mismatch");
    }
    Index i = 0;
    for (S v : values) t.data[i++] = v;
    return t;
  }

  /// Per-channel vector (1, c, 1, 1), e.g. a conv bias or a BN parameter.
  static Tensor vec(std::initializer_list<S> values) {
    Tensor t({1, static_cast<Index>(values.size()), 1, 1});
    Index i = 0;
    for (S v : values) t.data[i++] = v;
    return t;
  }

  Index size() const { return shape.size(); }
  bool empty() const { return data.size() == 0; }

  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape.c + c) * shape.h + h) * shape.w + w;
  }

  S& at(Index n, Index c, Index h, Index w) { return data[offset(n, c, h, w)]; }
  S at(Index n, Index c, Index h, Index w) const { return data[offset(n, c, h, w)]; }

  /// Channels-by-pixels view of one batch item: (c, h*w), row-major.
  RowMatMap<S> item(Index n) {
    return RowMatMap<S>(data.data() + n * shape.c * shape.h * shape.w, shape.c,
                        shape.h * shape.w);
  }
  ConstRowMatMap<S> item(Index n) const {
    return ConstRowMatMap<S>(data.data() + n * shape.c * shape.h * shape.w, shape.c,
                             shape.h * shape.w);
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data = data.template cast<T>();
    return out;
  }
};

inline void check_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

/// Feed-forward convolution parameters: weights (f, c, kh, kw) and a
/// length-f bias stored as a (1, f, 1, 1) tensor.
template <typename S>
struct ConvKernel {
  Tensor<S> weights;
  Tensor<S> bias;

  ConvKernel() = default;
  ConvKernel(Tensor<S> w, Tensor<S> b) : weights(std::move(w)), bias(std::move(b)) {
    check_shape(bias.shape == Shape{1, weights.shape.n, 1, 1},
                "conv kernel: bias must be (1,f,1,1) with f = out channels");
  }

  static ConvKernel make(Shape wshape) {
    ConvKernel k;
    k.weights = Tensor<S>(wshape);
    k.bias = Tensor<S>({1, wshape.n, 1, 1});
    return k;
  }

  Index out_channels() const { return weights.shape.n; }
  Index in_channels() const { return weights.shape.c; }
};

}  // namespace irrcnn
