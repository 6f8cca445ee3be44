// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dife/errors.hpp"
#include "dife/synth_data.hpp"

namespace dife::data {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dife_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Five-step pipeline written out per pixel, with the hue step as a Rodrigues
// rotation about the unit gray axis.
Tensor photometric_ref(const Tensor& img, const PhotometricParams& p) {
  const int h = img.shape().h;
  const int w = img.shape().w;
  const int n = h * w;
  std::vector<double> v(img.data().begin(), img.data().end());
  auto clamp = [](double x) { return std::min(1.0, std::max(0.0, x)); };
  for (double& x : v) x = clamp(x + p.brightness);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  for (double& x : v) x = clamp((x - mean) * (1.0 + p.contrast) + mean);
  const double a = p.hue_degrees * M_PI / 180.0;
  const double k = 1.0 / std::sqrt(3.0);
  for (int i = 0; i < n; ++i) {
    const double r = v[i], g = v[n + i], b = v[2 * n + i];
    const double dot = k * (r + g + b);
    const double cx = k * (b - g), cy = k * (r - b), cz = k * (g - r);  // k x v
    v[i] = clamp(r * std::cos(a) + cx * std::sin(a) + k * dot * (1 - std::cos(a)));
    v[n + i] = clamp(g * std::cos(a) + cy * std::sin(a) + k * dot * (1 - std::cos(a)));
    v[2 * n + i] = clamp(b * std::cos(a) + cz * std::sin(a) + k * dot * (1 - std::cos(a)));
  }
  for (double& x : v) x = clamp(std::pow(x, 1.0 + p.gamma));
  if (p.blur_sigma > 0) {
    const int rad = static_cast<int>(std::ceil(3 * p.blur_sigma));
    std::vector<double> kern;
    double sum = 0;
    for (int i = -rad; i <= rad; ++i) {
      kern.push_back(std::exp(-(i * i) / (2 * p.blur_sigma * p.blur_sigma)));
      sum += kern.back();
    }
    std::vector<double> tmp(v.size());
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0;
          for (int i = -rad; i <= rad; ++i) {
            const int xx = std::min(w - 1, std::max(0, x + i));
            acc += kern[i + rad] / sum * v[c * n + y * w + xx];
          }
          tmp[c * n + y * w + x] = acc;
        }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0;
          for (int i = -rad; i <= rad; ++i) {
            const int yy = std::min(h - 1, std::max(0, y + i));
            acc += kern[i + rad] / sum * tmp[c * n + yy * w + x];
          }
          v[c * n + y * w + x] = clamp(acc);
        }
    }
  }
  return Tensor(img.shape(), v);
}

TEST(GenerateTest, DeterministicPerSeed) {
  const auto a = generate_domain(5, Domain::kSource, 42, 32, 32);
  const auto b = generate_domain(5, Domain::kSource, 42, 32, 32);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
}

TEST(GenerateTest, TargetSharesMasksNotImages) {
  const auto s = generate_domain(5, Domain::kSource, 3, 32, 32);
  const auto t = generate_domain(5, Domain::kTarget, 3, 32, 32);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(s[i].mask, t[i].mask);
    EXPECT_GT(max_abs_diff(s[i].image, t[i].image), 0.05);
  }
}

TEST(GenerateTest, ChannelMeansShiftAcrossDomains) {
  const auto s = generate_domain(100, Domain::kSource, 9, 32, 32);
  const auto t = generate_domain(100, Domain::kTarget, 9, 32, 32);
  for (int c = 0; c < 3; ++c) {
    double diff = 0.0;
    for (int i = 0; i < 100; ++i) {
      double ms = 0, mt = 0;
      const std::size_t plane = 32 * 32;
      for (std::size_t p = 0; p < plane; ++p) {
        ms += s[i].image[c * plane + p];
        mt += t[i].image[c * plane + p];
      }
      diff += std::abs(ms - mt) / plane;
    }
    EXPECT_GT(diff / 100, 0.05) << "channel " << c;
  }
}

TEST(GenerateTest, ValuesClampedAndClassesValid) {
  for (const auto& s : generate_domain(20, Domain::kTarget, 5, 32, 48)) {
    EXPECT_EQ(s.image.shape(), (Shape{1, 3, 32, 48}));
    for (double v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (auto l : s.mask.labels) EXPECT_LT(l, kNumClasses);
  }
}

TEST(GenerateTest, TooSmallIsDataError) {
  EXPECT_THROW(render_sample(1, Domain::kSource, 16, 16), DataError);
}

TEST(PhotometricTest, ZeroParamsIsIdentity) {
  const auto s = render_sample(7, Domain::kSource, 32, 32);
  EXPECT_EQ(apply_photometric(s.image, PhotometricParams{}), s.image);
  std::mt19937_64 rng(1);
  PhotometricTransform none{0, 0, 0, 0, 0};
  EXPECT_EQ(apply_photometric(s.image, none.sample(rng)), s.image);
}

TEST(PhotometricTest, Brightness) {
  Tensor img(Shape{1, 3, 4, 4}, 0.5);
  PhotometricParams p;
  p.brightness = 0.1;
  const Tensor out = apply_photometric(img, p);
  for (double v : out.data()) EXPECT_NEAR(v, 0.6, 1e-15);
}

TEST(PhotometricTest, MatchesScalarPipeline) {
  std::mt19937_64 rng(12);
  PhotometricTransform t;
  for (int i = 0; i < 10; ++i) {
    const auto s = render_sample(100 + i, Domain::kSource, 32, 32);
    const PhotometricParams p = t.sample(rng);
    EXPECT_LT(max_abs_diff(apply_photometric(s.image, p), photometric_ref(s.image, p)), 1e-9);
  }
}

TEST(PhotometricTest, NonPositiveGammaExponentThrows) {
  PhotometricParams p;
  p.gamma = -1.0;
  EXPECT_THROW(apply_photometric(Tensor(Shape{1, 3, 2, 2}, 0.5), p), ContractError);
}

TEST(AugmentTest, ImageAndMaskStayAligned) {
  std::mt19937_64 rng(3);
  const auto s = render_sample(5, Domain::kSource, 32, 32);
  for (int i = 0; i < 10; ++i) {
    const DomainSample a = augment_geometric(s, rng);
    EXPECT_EQ(a.image.shape(), s.image.shape());
    EXPECT_EQ(a.mask.labels.size(), s.mask.labels.size());
    for (auto l : a.mask.labels) EXPECT_LT(l, kNumClasses);
  }
}

TEST(NetpbmTest, MaskRoundTripExact) {
  const fs::path dir = scratch("mask");
  const auto s = render_sample(11, Domain::kSource, 32, 40);
  write_pgm(s.mask, (dir / "m.pgm").string());
  EXPECT_EQ(read_pgm((dir / "m.pgm").string()), s.mask);
  fs::remove_all(dir);
}

TEST(NetpbmTest, ImageRoundTripWithinQuantization) {
  const fs::path dir = scratch("img");
  const auto s = render_sample(12, Domain::kTarget, 32, 32);
  write_ppm(s.image, (dir / "i.ppm").string());
  EXPECT_LE(max_abs_diff(read_ppm((dir / "i.ppm").string()), s.image), 1.0 / 255.0);
  fs::remove_all(dir);
}

TEST(NetpbmTest, HandWrittenP6) {
  const fs::path dir = scratch("p6");
  std::string bytes = "P6\n# two by two\n2 2\n255\n";
  const unsigned char px[] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153};
  bytes.append(reinterpret_cast<const char*>(px), sizeof(px));
  write_bytes(dir / "h.ppm", bytes);
  const Tensor t = read_ppm((dir / "h.ppm").string());
  ASSERT_EQ(t.shape(), (Shape{1, 3, 2, 2}));
  EXPECT_EQ(t.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(t.at(0, 1, 0, 1), 1.0);
  EXPECT_EQ(t.at(0, 2, 1, 0), 1.0);
  EXPECT_DOUBLE_EQ(t.at(0, 0, 1, 1), 0.2);
  EXPECT_DOUBLE_EQ(t.at(0, 1, 1, 1), 0.4);
  EXPECT_DOUBLE_EQ(t.at(0, 2, 1, 1), 0.6);
  EXPECT_EQ(t.at(0, 1, 0, 0), 0.0);
  fs::remove_all(dir);
}

TEST(NetpbmTest, MalformedFilesReportOffsets) {
  const fs::path dir = scratch("bad");
  write_bytes(dir / "magic.ppm", "P3\n2 2\n255\n");
  EXPECT_THROW(read_ppm((dir / "magic.ppm").string()), FormatError);
  write_bytes(dir / "short.ppm", std::string("P6\n2 2\n255\n") + std::string(5, 'x'));
  try {
    read_ppm((dir / "short.ppm").string());
    FAIL() << "truncated payload accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16);  // end of the five payload bytes present
  }
  write_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n65535\n") + std::string(2, 'x'));
  EXPECT_THROW(read_pgm((dir / "maxval.pgm").string()), FormatError);
  EXPECT_THROW(read_ppm((dir / "missing.ppm").string()), IoError);
  fs::remove_all(dir);
}

TEST(DatasetTest, ManifestCountsMatchFiles) {
  const fs::path dir = scratch("dataset");
  const auto rows = write_dataset(dir.string(), 20, 7, 32, 32);
  const SplitSizes sizes = split_sizes(20);
  EXPECT_EQ(sizes.train + sizes.val + sizes.test, 20);
  EXPECT_EQ(rows.size(), 40u);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() == ".ppm") ++files;
  }
  EXPECT_EQ(files, 40u);
  EXPECT_EQ(read_manifest(dir.string()).size(), rows.size());
  const auto val = load_split(dir.string(), Domain::kTarget, Split::kVal);
  EXPECT_EQ(static_cast<int>(val.size()), sizes.val);
  fs::remove_all(dir);
}

TEST(DatasetTest, SplitSizes) {
  const SplitSizes s = split_sizes(10);
  EXPECT_EQ(s.train, 8);
  EXPECT_EQ(s.val, 1);
  EXPECT_EQ(s.test, 1);
  EXPECT_THROW(parse_domain("other"), ConfigError);
}

}  // namespace
}  // namespace dife::data
