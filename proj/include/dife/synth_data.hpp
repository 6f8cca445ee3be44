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

// Two-domain synthetic segmentation benchmark.
//
// A sample is a background with up to three shapes (disc, bar, ring) drawn
// in colors from a fixed palette. The target domain re-renders the exact
// same scene and then applies a fixed style shift (hue rotation, contrast
// stretch, gamma, vignette), so labels are identical across domains and only
// appearance differs.

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dife/tensor.hpp"

namespace dife::data {

enum class Domain { kSource, kTarget };
enum class Split { kTrain, kVal, kTest };

const char* to_string(Domain d);
const char* to_string(Split s);
Domain parse_domain(const std::string& text);
Split parse_split(const std::string& text);

inline constexpr int kNumClasses = 4;  // background, disc, bar, ring
inline constexpr int kMinSide = 32;

struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> labels;  // row-major class indices

  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct DomainSample {
  Tensor image;  // (1, 3, H, W), values in [0, 1]
  LabelMap mask;
  Domain domain = Domain::kSource;
  std::uint64_t seed = 0;
};

/// Concrete photometric change. Exponent of the gamma step is 1 + gamma, so
/// an all-zero value is the identity.
struct PhotometricParams {
  double brightness = 0.0;   // additive
  double contrast = 0.0;     // (x - mean) * (1 + contrast) + mean
  double hue_degrees = 0.0;  // rotation about the gray axis
  double gamma = 0.0;        // x^(1 + gamma)
  double blur_sigma = 0.0;   // Gaussian, pixels; <= 0 disables
};

/// Ranges the twin transform samples from, uniformly and per call.
struct PhotometricTransform {
  double brightness_jitter = 0.15;  // +- range
  double contrast_jitter = 0.3;     // +- range
  double hue_rotation = 90.0;       // +- degrees
  double gamma_jitter = 0.5;        // +- range on the exponent offset
  double blur_sigma_max = 1.0;      // sigma in [0, max]

  PhotometricParams sample(std::mt19937_64& rng) const;
};

/// Brightness, contrast, hue, gamma, blur in that order. Each step clamps to
/// [0, 1]. Masks are never touched.
Tensor apply_photometric(const Tensor& image, const PhotometricParams& p);

/// The fixed style shift that defines the target domain.
Tensor apply_target_style(const Tensor& image);

/// Per-sample seed derived from the dataset seed and the sample index.
std::uint64_t sample_seed(std::uint64_t dataset_seed, int index);

/// Renders one scene. Throws DataError below kMinSide.
DomainSample render_sample(std::uint64_t seed, Domain domain, int h, int w);

/// `count` samples with seeds sample_seed(seed, 0..count-1).
std::vector<DomainSample> generate_domain(int count, Domain domain,
                                          std::uint64_t seed, int h, int w);

/// Random horizontal flip and scale-then-crop applied identically to image
/// and mask (bilinear for the image, nearest for the mask).
DomainSample augment_geometric(const DomainSample& s, std::mt19937_64& rng);

// --- Netpbm I/O -----------------------------------------------------------

void write_ppm(const Tensor& image, const std::string& path);
Tensor read_ppm(const std::string& path);
void write_pgm(const LabelMap& mask, const std::string& path);
LabelMap read_pgm(const std::string& path);

void write_sample(const DomainSample& s, const std::string& image_path,
                  const std::string& mask_path);
DomainSample read_sample(const std::string& image_path, const std::string& mask_path);

// --- Dataset directory ----------------------------------------------------

struct SplitSizes {
  int train = 0;
  int val = 0;
  int test = 0;
};
/// 80/10/10 with the remainder going to test.
SplitSizes split_sizes(int count);

struct ManifestRow {
  int index = 0;
  Domain domain = Domain::kSource;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
};

/// Writes `<root>/<domain>/<split>/img_%05d.ppm`, `msk_%05d.pgm` for both
/// domains and `<root>/manifest.csv`. Returns the manifest rows.
std::vector<ManifestRow> write_dataset(const std::string& root, int count,
                                       std::uint64_t seed, int h, int w);

std::vector<ManifestRow> read_manifest(const std::string& root);

std::vector<DomainSample> load_split(const std::string& root, Domain domain,
                                     Split split);

}  // namespace dife::data
