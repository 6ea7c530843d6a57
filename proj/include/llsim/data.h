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

#ifndef LLSIM_DATA_H_
#define LLSIM_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace llsim {

struct ImageShape {
  int channels = 3;
  int height = 32;
  int width = 32;

  std::size_t Dim() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  bool operator==(const ImageShape&) const = default;
};

// B images stored contiguously, each channel-planar (C x H x W), with one
// integer label per image.
class ImageBatch {
 public:
  ImageBatch() = default;
  // Throws kShapeMismatch unless C is 1 or 3, B >= 1, and every pixel lies
  // in [0, 1].
  ImageBatch(ImageShape shape, std::vector<double> pixels,
             std::vector<int> labels);

  const ImageShape& shape() const { return shape_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return shape_.Dim(); }

  std::span<const double> image(std::size_t i) const {
    return {pixels_.data() + i * dim(), dim()};
  }
  std::span<const double> pixels() const { return pixels_; }
  std::span<const int> labels() const { return labels_; }

  ImageBatch Subset(std::span<const std::size_t> indices) const;
  static ImageBatch Concat(const ImageBatch& a, const ImageBatch& b);

  bool operator==(const ImageBatch&) const = default;

 private:
  ImageShape shape_;
  std::vector<double> pixels_;
  std::vector<int> labels_;
};

// IDX image file (magic 0x00000803) plus its companion label file (magic
// 0x00000801). Pixels are scaled by 1/255.
ImageBatch LoadIdx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path);

struct CifarLayout {
  // 1 for CIFAR-10; 2 for CIFAR-100 (coarse, fine), in which case the fine
  // label is kept.
  int label_bytes = 1;
  int channels = 3;
  int height = 32;
  int width = 32;

  std::size_t RecordBytes() const {
    return static_cast<std::size_t>(label_bytes) + channels * height * width;
  }
};

ImageBatch LoadCifarBinary(const std::filesystem::path& path,
                           const CifarLayout& layout = {});

struct SynthOptions {
  std::uint64_t seed = 0;
  int batch_size = 16;
  ImageShape shape;
  // Per-image mean brightness is drawn uniformly from
  // [0.5 - spread, 0.5 + spread].
  double brightness_spread = 0.4;
  bool force_max_pixel = false;
  int num_classes = 10;
};

// Multi-octave random noise fields; each image's mean equals its drawn
// brightness target (before force_max_pixel lifts one pixel to 1.0).
ImageBatch SynthBatch(const SynthOptions& options);

// Mean over all C*H*W pixels.
double Brightness(std::span<const double> image);

struct CalibrationSample {
  std::vector<double> brightness_values;  // sorted ascending
};

CalibrationSample Calibrate(const ImageBatch& images);
CalibrationSample Calibrate(std::vector<double> brightness_values);

}  // namespace llsim

#endif  // LLSIM_DATA_H_
