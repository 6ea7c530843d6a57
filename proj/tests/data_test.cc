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

#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>

#include "llsim/error.h"
#include "oracles.h"

namespace llsim {
namespace {

std::vector<unsigned char> IdxImages(std::uint32_t count, std::uint32_t rows,
                                     std::uint32_t cols, std::uint64_t seed) {
  std::vector<unsigned char> out;
  oracle::PutBigEndian32(out, 0x00000803);
  oracle::PutBigEndian32(out, count);
  oracle::PutBigEndian32(out, rows);
  oracle::PutBigEndian32(out, cols);
  Rng rng(seed);
  for (std::uint32_t i = 0; i < count * rows * cols; ++i) {
    out.push_back(static_cast<unsigned char>(rng.Below(256)));
  }
  return out;
}

std::vector<unsigned char> IdxLabels(std::uint32_t count) {
  std::vector<unsigned char> out;
  oracle::PutBigEndian32(out, 0x00000801);
  oracle::PutBigEndian32(out, count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(i % 10);
  return out;
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no llsim::Error thrown";
  return ErrorCode::kIoError;
}

TEST(LoadIdx, RoundTrip) {
  const auto dir = oracle::TempDir("idx_round_trip");
  const auto img = IdxImages(4, 28, 28, 1);
  oracle::WriteBytes(dir / "images", img);
  oracle::WriteBytes(dir / "labels", IdxLabels(4));
  const ImageBatch b = LoadIdx(dir / "images", dir / "labels");
  EXPECT_EQ(b.size(), 4u);
  EXPECT_EQ(b.shape(), (ImageShape{1, 28, 28}));
  for (std::size_t i = 0; i < b.pixels().size(); ++i) {
    ASSERT_EQ(b.pixels()[i], img[16 + i] / 255.0);
  }
  EXPECT_EQ(b.labels()[3], 3);
}

TEST(LoadIdx, ByteTwoFiftyFiveIsOne) {
  const auto dir = oracle::TempDir("idx_endpoint");
  std::vector<unsigned char> img;
  oracle::PutBigEndian32(img, 0x00000803);
  for (int i = 0; i < 3; ++i) oracle::PutBigEndian32(img, 1);
  img.push_back(255);
  oracle::WriteBytes(dir / "images", img);
  oracle::WriteBytes(dir / "labels", IdxLabels(1));
  EXPECT_EQ(LoadIdx(dir / "images", dir / "labels").pixels()[0], 1.0);
}

TEST(LoadIdx, BadMagic) {
  const auto dir = oracle::TempDir("idx_magic");
  auto img = IdxImages(2, 4, 4, 2);
  std::fill(img.begin(), img.begin() + 4, 0);
  oracle::WriteBytes(dir / "images", img);
  oracle::WriteBytes(dir / "labels", IdxLabels(2));
  EXPECT_EQ(CodeOf([&] { LoadIdx(dir / "images", dir / "labels"); }),
            ErrorCode::kBadMagic);
  // Swapped files: the label magic is not an image magic.
  oracle::WriteBytes(dir / "images", IdxImages(2, 4, 4, 2));
  EXPECT_EQ(CodeOf([&] { LoadIdx(dir / "labels", dir / "images"); }),
            ErrorCode::kBadMagic);
}

TEST(LoadIdx, CountMismatch) {
  const auto dir = oracle::TempDir("idx_count");
  oracle::WriteBytes(dir / "images", IdxImages(3, 4, 4, 3));
  oracle::WriteBytes(dir / "labels", IdxLabels(2));
  EXPECT_EQ(CodeOf([&] { LoadIdx(dir / "images", dir / "labels"); }),
            ErrorCode::kDimensionMismatch);
}

TEST(LoadIdx, EveryTruncationIsRejected) {
  const auto dir = oracle::TempDir("idx_truncate");
  const auto img = IdxImages(2, 3, 3, 4);
  const auto lab = IdxLabels(2);
  oracle::WriteBytes(dir / "labels", lab);
  for (std::size_t n = 0; n < img.size(); ++n) {
    oracle::WriteBytes(dir / "images",
                       std::vector<unsigned char>(img.begin(), img.begin() + n));
    EXPECT_EQ(CodeOf([&] { LoadIdx(dir / "images", dir / "labels"); }),
              ErrorCode::kTruncatedFile)
        << "image file cut at " << n;
  }
  oracle::WriteBytes(dir / "images", img);
  for (std::size_t n = 0; n < lab.size(); ++n) {
    oracle::WriteBytes(dir / "labels",
                       std::vector<unsigned char>(lab.begin(), lab.begin() + n));
    EXPECT_EQ(CodeOf([&] { LoadIdx(dir / "images", dir / "labels"); }),
              ErrorCode::kTruncatedFile)
        << "label file cut at " << n;
  }
}

TEST(LoadIdx, MissingFileIsIoError) {
  EXPECT_EQ(CodeOf([] { LoadIdx("/nonexistent/images", "/nonexistent/l"); }),
            ErrorCode::kIoError);
}

TEST(LoadCifar, AllBlackRecord) {
  const auto dir = oracle::TempDir("cifar_black");
  std::vector<unsigned char> rec(3073, 0);
  rec[0] = 7;
  oracle::WriteBytes(dir / "data.bin", rec);
  const ImageBatch b = LoadCifarBinary(dir / "data.bin");
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.labels()[0], 7);
  EXPECT_TRUE(std::all_of(b.pixels().begin(), b.pixels().end(),
                          [](double p) { return p == 0.0; }));
}

TEST(LoadCifar, RoundTripAndRecordCount) {
  const auto dir = oracle::TempDir("cifar_round_trip");
  Rng rng(5);
  std::vector<unsigned char> bytes(3 * 3073);
  for (auto& v : bytes) v = static_cast<unsigned char>(rng.Below(256));
  for (int r = 0; r < 3; ++r) bytes[r * 3073] = static_cast<unsigned char>(r);
  oracle::WriteBytes(dir / "data.bin", bytes);
  const ImageBatch b = LoadCifarBinary(dir / "data.bin");
  ASSERT_EQ(b.size(), bytes.size() / 3073);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(b.labels()[r], static_cast<int>(r));
    for (std::size_t k = 0; k < 3072; ++k) {
      ASSERT_EQ(b.image(r)[k], bytes[r * 3073 + 1 + k] / 255.0);
    }
  }
}

TEST(LoadCifar, HundredLayoutKeepsFineLabel) {
  const auto dir = oracle::TempDir("cifar100");
  std::vector<unsigned char> rec(3074, 10);
  rec[0] = 3;   // coarse
  rec[1] = 42;  // fine
  oracle::WriteBytes(dir / "train.bin", rec);
  const ImageBatch b = LoadCifarBinary(dir / "train.bin", {.label_bytes = 2});
  EXPECT_EQ(b.labels()[0], 42);
  EXPECT_EQ(b.pixels()[0], 10 / 255.0);
}

TEST(LoadCifar, TruncationIsRejected) {
  const auto dir = oracle::TempDir("cifar_truncate");
  const CifarLayout small{.label_bytes = 1, .channels = 1, .height = 2,
                          .width = 2};
  std::vector<unsigned char> bytes(2 * small.RecordBytes(), 1);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    oracle::WriteBytes(dir / "d.bin", std::vector<unsigned char>(
                                          bytes.begin(), bytes.begin() + n));
    if (n != 0 && n % small.RecordBytes() == 0) {
      EXPECT_EQ(LoadCifarBinary(dir / "d.bin", small).size(), 1u);
    } else {
      EXPECT_EQ(CodeOf([&] { LoadCifarBinary(dir / "d.bin", small); }),
                ErrorCode::kTruncatedFile)
          << "cut at " << n;
    }
  }
}

TEST(ImageBatch, RejectsBadShapesAndPixels) {
  EXPECT_THROW(ImageBatch({2, 1, 1}, {0.5, 0.5}, {0}), Error);
  EXPECT_THROW(ImageBatch({1, 1, 1}, {}, {}), Error);
  EXPECT_THROW(ImageBatch({1, 1, 1}, {1.5}, {0}), Error);
  EXPECT_THROW(ImageBatch({1, 1, 2}, {0.5}, {0}), Error);
}

TEST(SynthBatch, Deterministic) {
  const SynthOptions o{.seed = 9, .batch_size = 8};
  EXPECT_EQ(SynthBatch(o), SynthBatch(o));
  SynthOptions other = o;
  other.seed = 10;
  EXPECT_NE(SynthBatch(o), SynthBatch(other));
}

TEST(SynthBatch, ForceMaxPixel) {
  const ImageBatch b =
      SynthBatch({.seed = 3, .batch_size = 32, .force_max_pixel = true});
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto img = b.image(i);
    EXPECT_EQ(*std::max_element(img.begin(), img.end()), 1.0);
  }
}

TEST(SynthBatch, BrightnessQuantilesAreUniform) {
  const ImageBatch b = SynthBatch({.seed = 11, .batch_size = 320});
  std::vector<double> v;
  for (std::size_t i = 0; i < b.size(); ++i) v.push_back(Brightness(b.image(i)));
  std::sort(v.begin(), v.end());
  for (int q = 1; q < 10; ++q) {
    const double got = v[static_cast<std::size_t>(q * 0.1 * (v.size() - 1))];
    EXPECT_NEAR(got, 0.1 + 0.8 * q / 10.0, 0.05) << "decile " << q;
  }
}

TEST(SynthBatch, LabelsWithinRangeAndImagesNotFlat) {
  const ImageBatch b = SynthBatch({.seed = 1, .batch_size = 50,
                                   .num_classes = 3});
  for (int l : b.labels()) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 3);
  }
  const auto img = b.image(0);
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  EXPECT_GT(*hi - *lo, 0.1);
}

TEST(SynthBatch, RejectsNonPositiveSpread) {
  EXPECT_THROW(SynthBatch({.brightness_spread = 0.0}), Error);
}

TEST(Brightness, Examples) {
  EXPECT_EQ(Brightness(std::vector<double>(12, 0.5)), 0.5);
  std::vector<double> half(10, 0.0);
  std::fill(half.begin() + 5, half.end(), 1.0);
  EXPECT_EQ(Brightness(half), 0.5);
}

TEST(Brightness, MatchesNaiveLoopAndIsPermutationInvariant) {
  const ImageBatch b = SynthBatch({.seed = 2, .batch_size = 4});
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto img = b.image(i);
    EXPECT_NEAR(Brightness(img), oracle::Mean(img), 1e-12);
    std::vector<double> shuffled(img.begin(), img.end());
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 17, shuffled.end());
    EXPECT_NEAR(Brightness(shuffled), Brightness(img), 1e-12);
  }
}

TEST(Calibrate, SortsBrightness) {
  const CalibrationSample c = Calibrate(std::vector<double>{0.4, 0.1, 0.3});
  EXPECT_EQ(c.brightness_values, (std::vector<double>{0.1, 0.3, 0.4}));
  const ImageBatch b = SynthBatch({.seed = 4, .batch_size = 20});
  const auto s = Calibrate(b).brightness_values;
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(s.size(), 20u);
}

}  // namespace
}  // namespace llsim
