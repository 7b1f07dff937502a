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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "irrcnn/rng.hpp"
#include "irrcnn/tensor.hpp"

namespace irrcnn {

/// One training example: (3, h, w) pixels scaled to [0,1] plus the class
/// label. CIFAR-100 records also carry the coarse label (stored, unused).
struct LabeledImage {
  Index h = 0, w = 0;
  std::vector<float> pixels;  // row-major (c, h, w), c = 3
  int label = 0;
  int coarse_label = -1;

  float at(Index c, Index y, Index x) const { return pixels[(c * h + y) * w + x]; }
  float& at(Index c, Index y, Index x) { return pixels[(c * h + y) * w + x]; }
};

/// CIFAR-10 binary: 3073-byte records, one label byte (0-9) followed by
/// 1024 R + 1024 G + 1024 B bytes, each plane row-major 32x32.
std::vector<LabeledImage> parse_cifar10(const std::vector<std::uint8_t>& bytes);

/// CIFAR-100 binary: 3074-byte records, coarse label byte, fine label byte
/// (0-99, the training label), then the 3072 pixel bytes.
std::vector<LabeledImage> parse_cifar100(const std::vector<std::uint8_t>& bytes);

/// Inverse of parse_cifar10 (values quantized back to bytes).
std::vector<std::uint8_t> serialize_cifar10(const std::vector<LabeledImage>& images);

/// Column order reversed per channel; the label is untouched.
LabeledImage hflip(const LabeledImage& img);

struct BatchPlan {
  Index n = 0;
  Index batch_size = 128;
  std::uint64_t seed = 0;
  Index epoch = 0;
};

/// Index set of one batch plus its per-image flip decisions.
struct BatchSpec {
  std::vector<Index> indices;
  std::vector<std::uint8_t> flip;
};

/// Seeded permutation of [0, n) cut into ceil(n/b) batches; the final
/// partial batch is kept. With augment each image is independently flipped
/// with probability 0.5.
std::vector<BatchSpec> plan_epoch(const BatchPlan& plan, bool augment);

/// Deterministic class-separable corpus: each class places a colored blob at
/// a class-specific position; labels are balanced round-robin.
std::vector<LabeledImage> synthetic_blobs(Index n, int classes, Index size,
                                          std::uint64_t seed);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

struct Dataset {
  std::vector<LabeledImage> train, test;
  Index classes = 0;
};

/// data_batch_1..5.bin + test_batch.bin under dir.
Dataset load_cifar10_dir(const std::filesystem::path& dir);
/// train.bin + test.bin under dir.
Dataset load_cifar100_dir(const std::filesystem::path& dir);

/// Images of one batch stacked into an (n, 3, h, w) tensor.
template <typename S>
std::pair<Tensor<S>, std::vector<int>> assemble_batch(
    const std::vector<LabeledImage>& images, const BatchSpec& spec) {
  check_shape(!spec.indices.empty(), "assemble_batch: empty batch");
  const LabeledImage& first = images.at(spec.indices[0]);
  Tensor<S> x({static_cast<Index>(spec.indices.size()), 3, first.h, first.w});
  std::vector<int> labels(spec.indices.size());
  for (std::size_t i = 0; i < spec.indices.size(); ++i) {
    const LabeledImage& img = images.at(spec.indices[i]);
    labels[i] = img.label;
    const bool flip = !spec.flip.empty() && spec.flip[i] != 0;
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < img.h; ++y) {
        for (Index xx = 0; xx < img.w; ++xx) {
          const Index sx = flip ? img.w - 1 - xx : xx;
          x.at(static_cast<Index>(i), c, y, xx) = static_cast<S>(img.at(c, y, sx));
        }
      }
    }
  }
  return {std::move(x), std::move(labels)};
}

/// Whole epoch materialized; convenient for small sets and tests.
template <typename S>
std::vector<std::pair<Tensor<S>, std::vector<int>>> batches(
    const std::vector<LabeledImage>& images, const BatchPlan& plan, bool augment) {
  std::vector<std::pair<Tensor<S>, std::vector<int>>> out;
  for (const BatchSpec& spec : plan_epoch(plan, augment)) {
    out.push_back(assemble_batch<S>(images, spec));
  }
  return out;
}

}  // namespace irrcnn
