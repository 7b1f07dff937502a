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
#include "irrcnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace irrcnn {

namespace {

constexpr Index kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

LabeledImage decode_cifar_pixels(const std::uint8_t* px) {
  LabeledImage img;
  img.h = img.w = kCifarSide;
  img.pixels.resize(kCifarPixels);
  for (std::size_t i = 0; i < kCifarPixels; ++i) {
    img.pixels[i] = static_cast<float>(px[i]) / 255.0f;
  }
  return img;
}

}  // namespace

std::vector<LabeledImage> parse_cifar10(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t record = 1 + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error("cifar10: byte length " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(record));
  }
  std::vector<LabeledImage> out;
  out.reserve(bytes.size() / record);
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    const int label = bytes[off];
    if (label > 9) {
      throw std::runtime_error("cifar10: label byte " + std::to_string(label) +
                               " out of range at record " + std::to_string(out.size()));
    }
    LabeledImage img = decode_cifar_pixels(bytes.data() + off + 1);
    img.label = label;
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<LabeledImage> parse_cifar100(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t record = 2 + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error("cifar100: byte length " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(record));
  }
  std::vector<LabeledImage> out;
  out.reserve(bytes.size() / record);
  for (std::size_t off = 0; off < bytes.size(); off += record) {
    const int coarse = bytes[off];
    const int fine = bytes[off + 1];
    if (fine > 99) {
      throw std::runtime_error("cifar100: fine label byte " + std::to_string(fine) +
                               " out of range at record " + std::to_string(out.size()));
    }
    LabeledImage img = decode_cifar_pixels(bytes.data() + off + 2);
    img.label = fine;
    img.coarse_label = coarse;
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::uint8_t> serialize_cifar10(const std::vector<LabeledImage>& images) {
  std::vector<std::uint8_t> out;
  out.reserve(images.size() * (1 + kCifarPixels));
  for (const LabeledImage& img : images) {
    check_shape(img.h == kCifarSide && img.w == kCifarSide,
                "serialize_cifar10: images must be 32x32");
    out.push_back(static_cast<std::uint8_t>(img.label));
    for (float v : img.pixels) {
      const float scaled = std::clamp(v, 0.0f, 1.0f) * 255.0f;
      out.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
    }
  }
  return out;
}

LabeledImage hflip(const LabeledImage& img) {
  LabeledImage out = img;
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < img.h; ++y) {
      for (Index x = 0; x < img.w; ++x) {
        out.at(c, y, x) = img.at(c, y, img.w - 1 - x);
      }
    }
  }
  return out;
}

std::vector<BatchSpec> plan_epoch(const BatchPlan& plan, bool augment) {
  check_shape(plan.n >= 1 && plan.batch_size >= 1, "plan_epoch: need n, batch >= 1");
  std::vector<Index> perm(plan.n);
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(mix_seed(plan.seed, static_cast<std::uint64_t>(plan.epoch), 0xBA7C4u));
  rng.shuffle(perm);

  std::vector<BatchSpec> out;
  for (Index start = 0; start < plan.n; start += plan.batch_size) {
    const Index count = std::min(plan.batch_size, plan.n - start);
    BatchSpec spec;
    spec.indices.assign(perm.begin() + start, perm.begin() + start + count);
    if (augment) {
      spec.flip.resize(count);
      for (Index i = 0; i < count; ++i) spec.flip[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<LabeledImage> synthetic_blobs(Index n, int classes, Index size,
                                          std::uint64_t seed) {
  check_shape(classes >= 2, "synthetic_blobs: need at least two classes");
  check_shape(size >= 4, "synthetic_blobs: size too small");
  std::vector<LabeledImage> out;
  out.reserve(n);
  const double mid = (static_cast<double>(size) - 1.0) / 2.0;
  const double ring = static_cast<double>(size) / 4.0;
  const double sigma = static_cast<double>(size) / 6.0;

  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i), 0x510B5u));
    const double angle = 2.0 * M_PI * label / classes;
    const double cy = mid + ring * std::sin(angle) + rng.uniform(-1.0, 1.0);
    const double cx = mid + ring * std::cos(angle) + rng.uniform(-1.0, 1.0);
    // Class-specific color: channel weights on a hue wheel.
    double chw[3];
    for (int c = 0; c < 3; ++c) {
      chw[c] = 0.5 + 0.5 * std::cos(2.0 * M_PI * (static_cast<double>(label) / classes -
                                                  static_cast<double>(c) / 3.0));
    }
    LabeledImage img;
    img.h = img.w = size;
    img.label = label;
    img.pixels.resize(3 * size * size);
    for (Index c = 0; c < 3; ++c) {
      for (Index y = 0; y < size; ++y) {
        for (Index x = 0; x < size; ++x) {
          const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double blob = std::exp(-d2 / (2.0 * sigma * sigma));
          const double v = 0.1 + 0.8 * chw[c] * blob + rng.uniform(-0.05, 0.05);
          img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path,
                const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Dataset load_cifar10_dir(const std::filesystem::path& dir) {
  Dataset ds;
  ds.classes = 10;
  for (int i = 1; i <= 5; ++i) {
    const auto path = dir / ("data_batch_" + std::to_string(i) + ".bin");
    auto part = parse_cifar10(read_file(path));
    ds.train.insert(ds.train.end(), std::make_move_iterator(part.begin()),
                    std::make_move_iterator(part.end()));
  }
  ds.test = parse_cifar10(read_file(dir / "test_batch.bin"));
  return ds;
}

Dataset load_cifar100_dir(const std::filesystem::path& dir) {
  Dataset ds;
  ds.classes = 100;
  ds.train = parse_cifar100(read_file(dir / "train.bin"));
  ds.test = parse_cifar100(read_file(dir / "test.bin"));
  return ds;
}

}  // namespace irrcnn
