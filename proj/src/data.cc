/*
 * Copyright 2026 The llsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "llsim/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>

#include "llsim/error.h"
#include "llsim/rng.h"

namespace llsim {
namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<unsigned char> ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t ReadBigEndian32(const std::vector<unsigned char>& bytes,
                              std::size_t offset,
                              const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw Error(ErrorCode::kTruncatedFile,
                path.string() + ": header ends at byte " +
                    std::to_string(bytes.size()));
  }
  return (std::uint32_t{bytes[offset]} << 24) |
         (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) |
         std::uint32_t{bytes[offset + 3]};
}

void ExpectMagic(std::uint32_t got, std::uint32_t want,
                 const std::filesystem::path& path) {
  if (got != want) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), ": magic 0x%08x, expected 0x%08x", got,
                  want);
    throw Error(ErrorCode::kBadMagic, path.string() + buf);
  }
}

// Bilinear upsampling of a uniform random grid with one node per `stride`
// pixels, added onto out with the given weight.
void AddNoiseOctave(Rng& rng, int height, int width, int stride, double weight,
                    std::span<double> out) {
  const int grid_h = std::max(2, height / stride + 1);
  const int grid_w = std::max(2, width / stride + 1);
  std::vector<double> grid(static_cast<std::size_t>(grid_h) * grid_w);
  for (double& g : grid) g = rng.Uniform(-1.0, 1.0);
  for (int y = 0; y < height; ++y) {
    const double gy = (height == 1) ? 0.0
                                    : static_cast<double>(y) * (grid_h - 1) /
                                          (height - 1);
    const int y0 = std::min(static_cast<int>(gy), grid_h - 2);
    const double fy = gy - y0;
    for (int x = 0; x < width; ++x) {
      const double gx = (width == 1) ? 0.0
                                     : static_cast<double>(x) * (grid_w - 1) /
                                           (width - 1);
      const int x0 = std::min(static_cast<int>(gx), grid_w - 2);
      const double fx = gx - x0;
      const auto g = [&](int r, int c) { return grid[r * grid_w + c]; };
      out[y * width + x] +=
          weight * ((1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x0 + 1)) +
                    fy * ((1 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1)));
    }
  }
}

void NoiseField(Rng& rng, int height, int width, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  AddNoiseOctave(rng, height, width, 8, 1.0, out);
  AddNoiseOctave(rng, height, width, 4, 0.5, out);
  AddNoiseOctave(rng, height, width, 2, 0.25, out);
}

}  // namespace

ImageBatch::ImageBatch(ImageShape shape, std::vector<double> pixels,
                       std::vector<int> labels)
    : shape_(shape), pixels_(std::move(pixels)), labels_(std::move(labels)) {
  if (shape_.channels != 1 && shape_.channels != 3) {
    throw Error(ErrorCode::kShapeMismatch,
                "channels must be 1 or 3, got " +
                    std::to_string(shape_.channels));
  }
  if (shape_.height < 1 || shape_.width < 1 || labels_.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "empty image batch");
  }
  if (pixels_.size() != labels_.size() * shape_.Dim()) {
    throw Error(ErrorCode::kShapeMismatch,
                "pixel count does not match batch size x image dim");
  }
  for (double p : pixels_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::kShapeMismatch, "pixel outside [0, 1]");
    }
  }
}

ImageBatch ImageBatch::Subset(std::span<const std::size_t> indices) const {
  std::vector<double> pixels;
  std::vector<int> labels;
  pixels.reserve(indices.size() * dim());
  for (std::size_t i : indices) {
    auto img = image(i);
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(labels_[i]);
  }
  return ImageBatch(shape_, std::move(pixels), std::move(labels));
}

ImageBatch ImageBatch::Concat(const ImageBatch& a, const ImageBatch& b) {
  if (!(a.shape_ == b.shape_)) {
    throw Error(ErrorCode::kShapeMismatch, "concat of differently shaped batches");
  }
  std::vector<double> pixels(a.pixels_);
  pixels.insert(pixels.end(), b.pixels_.begin(), b.pixels_.end());
  std::vector<int> labels(a.labels_);
  labels.insert(labels.end(), b.labels_.begin(), b.labels_.end());
  return ImageBatch(a.shape_, std::move(pixels), std::move(labels));
}

ImageBatch LoadIdx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path) {
  const auto img = ReadFile(images_path);
  ExpectMagic(ReadBigEndian32(img, 0, images_path), kIdxImageMagic,
              images_path);
  const std::uint32_t count = ReadBigEndian32(img, 4, images_path);
  const std::uint32_t rows = ReadBigEndian32(img, 8, images_path);
  const std::uint32_t cols = ReadBigEndian32(img, 12, images_path);
  const std::size_t pixel_bytes = std::size_t{count} * rows * cols;
  if (img.size() < 16 + pixel_bytes) {
    throw Error(ErrorCode::kTruncatedFile,
                images_path.string() + ": expected " +
                    std::to_string(16 + pixel_bytes) + " bytes, found " +
                    std::to_string(img.size()));
  }

  const auto lab = ReadFile(labels_path);
  ExpectMagic(ReadBigEndian32(lab, 0, labels_path), kIdxLabelMagic,
              labels_path);
  const std::uint32_t label_count = ReadBigEndian32(lab, 4, labels_path);
  if (lab.size() < 8 + std::size_t{label_count}) {
    throw Error(ErrorCode::kTruncatedFile,
                labels_path.string() + ": expected " +
                    std::to_string(8 + std::size_t{label_count}) +
                    " bytes, found " + std::to_string(lab.size()));
  }
  if (label_count != count) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::to_string(count) + " images but " +
                    std::to_string(label_count) + " labels");
  }

  std::vector<double> pixels(pixel_bytes);
  for (std::size_t i = 0; i < pixel_bytes; ++i) {
    pixels[i] = img[16 + i] / 255.0;
  }
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = lab[8 + i];
  return ImageBatch({1, static_cast<int>(rows), static_cast<int>(cols)},
                    std::move(pixels), std::move(labels));
}

ImageBatch LoadCifarBinary(const std::filesystem::path& path,
                           const CifarLayout& layout) {
  if (layout.label_bytes != 1 && layout.label_bytes != 2) {
    throw Error(ErrorCode::kConfigError, "CIFAR label_bytes must be 1 or 2");
  }
  const auto bytes = ReadFile(path);
  const std::size_t record = layout.RecordBytes();
  if (bytes.empty() || bytes.size() % record != 0) {
    throw Error(ErrorCode::kTruncatedFile,
                path.string() + ": length " + std::to_string(bytes.size()) +
                    " is not a positive multiple of the " +
                    std::to_string(record) + "-byte record");
  }
  const std::size_t count = bytes.size() / record;
  const std::size_t dim = record - layout.label_bytes;
  std::vector<double> pixels(count * dim);
  std::vector<int> labels(count);
  for (std::size_t r = 0; r < count; ++r) {
    const unsigned char* rec = bytes.data() + r * record;
    labels[r] = rec[layout.label_bytes - 1];
    for (std::size_t k = 0; k < dim; ++k) {
      pixels[r * dim + k] = rec[layout.label_bytes + k] / 255.0;
    }
  }
  return ImageBatch({layout.channels, layout.height, layout.width},
                    std::move(pixels), std::move(labels));
}

ImageBatch SynthBatch(const SynthOptions& options) {
  if (!(options.brightness_spread > 0.0 && options.brightness_spread <= 0.5)) {
    throw Error(ErrorCode::kConfigError,
                "brightness_spread must lie in (0, 0.5]");
  }
  if (options.batch_size < 1 || options.num_classes < 1) {
    throw Error(ErrorCode::kConfigError, "batch_size and num_classes must be >= 1");
  }
  const ImageShape shape = options.shape;
  const std::size_t dim = shape.Dim();
  const std::size_t plane =
      static_cast<std::size_t>(shape.height) * shape.width;
  Rng rng(options.seed);

  std::vector<double> pixels(options.batch_size * dim);
  std::vector<int> labels(options.batch_size);
  std::vector<double> shared(plane);
  std::vector<double> own(plane);
  for (int b = 0; b < options.batch_size; ++b) {
    const double target = rng.Uniform(0.5 - options.brightness_spread,
                                      0.5 + options.brightness_spread);
    labels[b] = static_cast<int>(rng.Below(options.num_classes));
    std::span<double> img(pixels.data() + b * dim, dim);

    // Channels share a common structure plus their own variation.
    NoiseField(rng, shape.height, shape.width, shared);
    for (int c = 0; c < shape.channels; ++c) {
      NoiseField(rng, shape.height, shape.width, own);
      for (std::size_t k = 0; k < plane; ++k) {
        img[c * plane + k] = 0.6 * shared[k] + 0.4 * own[k];
      }
    }
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(dim);
    double peak = 0.0;
    for (double& v : img) {
      v -= mean;
      peak = std::max(peak, std::abs(v));
    }
    const double amplitude =
        0.95 * std::min(target, 1.0 - target) / (peak > 0.0 ? peak : 1.0);
    for (double& v : img) v = std::clamp(target + amplitude * v, 0.0, 1.0);

    if (options.force_max_pixel) {
      *std::max_element(img.begin(), img.end()) = 1.0;
    }
  }
  return ImageBatch(shape, std::move(pixels), std::move(labels));
}

double Brightness(std::span<const double> image) {
  double sum = 0.0;
  for (double v : image) sum += v;
  return sum / static_cast<double>(image.size());
}

CalibrationSample Calibrate(const ImageBatch& images) {
  std::vector<double> values(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    values[i] = Brightness(images.image(i));
  }
  return Calibrate(std::move(values));
}

CalibrationSample Calibrate(std::vector<double> brightness_values) {
  std::sort(brightness_values.begin(), brightness_values.end());
  return {std::move(brightness_values)};
}

}  // namespace llsim
