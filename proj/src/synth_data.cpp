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

#include "dife/synth_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "dife/errors.hpp"

namespace dife::data {
namespace fs = std::filesystem;

const char* to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Domain parse_domain(const std::string& text) {
  if (text == "source") return Domain::kSource;
  if (text == "target") return Domain::kTarget;
  throw ConfigError("unknown domain '" + text + "' (expected source|target)");
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + text + "' (expected train|val|test)");
}

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 6> kShapePalette{{
    {0.85, 0.30, 0.25},
    {0.30, 0.70, 0.35},
    {0.25, 0.40, 0.85},
    {0.90, 0.80, 0.30},
    {0.70, 0.35, 0.75},
    {0.35, 0.75, 0.80},
}};

constexpr std::array<Rgb, 3> kBackgroundPalette{{
    {0.45, 0.38, 0.33},
    {0.30, 0.33, 0.42},
    {0.40, 0.45, 0.36},
}};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::size_t pix(const Shape& s, int c, int y, int x) {
  return (static_cast<std::size_t>(c) * s.h + y) * s.w + x;
}

void hue_rotate(Tensor& img, double degrees) {
  if (degrees == 0.0) return;
  const double a = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(a);
  const double sn = std::sin(a);
  const double k = (1.0 - cs) / 3.0;
  const double r = std::sqrt(1.0 / 3.0) * sn;
  const double m[3][3] = {{cs + k, k - r, k + r}, {k + r, cs + k, k - r}, {k - r, k + r, cs + k}};
  const Shape s = img.shape();
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    const double in[3] = {img[p], img[plane + p], img[2 * plane + p]};
    for (int c = 0; c < 3; ++c) {
      img[c * plane + p] = clamp01(m[c][0] * in[0] + m[c][1] * in[1] + m[c][2] * in[2]);
    }
  }
}

void gaussian_blur(Tensor& img, double sigma) {
  if (!(sigma > 0.0)) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& v : kernel) v /= total;
  const Shape s = img.shape();
  Tensor tmp(s);
  for (int c = 0; c < s.c; ++c) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, s.w - 1);
          acc += kernel[i + radius] * img[pix(s, c, y, xx)];
        }
        tmp[pix(s, c, y, x)] = acc;
      }
    }
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, s.h - 1);
          acc += kernel[i + radius] * tmp[pix(s, c, yy, x)];
        }
        img[pix(s, c, y, x)] = clamp01(acc);
      }
    }
  }
}

void contrast_about(Tensor& img, double factor, double center) {
  for (double& v : img.data()) v = clamp01((v - center) * factor + center);
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

void check_image(const Tensor& image) {
  if (image.shape().n != 1 || image.shape().c != 3) {
    throw DimensionError("expected a (1,3,H,W) image, got " + image.shape().str());
  }
}

}  // namespace

PhotometricParams PhotometricTransform::sample(std::mt19937_64& rng) const {
  auto sym = [&](double range) {
    if (range == 0.0) return 0.0;
    return std::uniform_real_distribution<double>(-range, range)(rng);
  };
  PhotometricParams p;
  p.brightness = sym(brightness_jitter);
  p.contrast = sym(contrast_jitter);
  p.hue_degrees = sym(hue_rotation);
  p.gamma = sym(gamma_jitter);
  p.blur_sigma = blur_sigma_max > 0.0
                     ? std::uniform_real_distribution<double>(0.0, blur_sigma_max)(rng)
                     : 0.0;
  return p;
}

Tensor apply_photometric(const Tensor& image, const PhotometricParams& p) {
  check_image(image);
  Tensor out = image;
  if (p.brightness != 0.0) {
    for (double& v : out.data()) v = clamp01(v + p.brightness);
  }
  if (p.contrast != 0.0) contrast_about(out, 1.0 + p.contrast, mean_of(out));
  hue_rotate(out, p.hue_degrees);
  if (p.gamma != 0.0) {
    const double e = 1.0 + p.gamma;
    if (!(e > 0.0)) throw ContractError("gamma exponent must stay positive");
    for (double& v : out.data()) v = clamp01(std::pow(v, e));
  }
  gaussian_blur(out, p.blur_sigma);
  for (double& v : out.data()) v = clamp01(v);
  return out;
}

Tensor apply_target_style(const Tensor& image) {
  check_image(image);
  Tensor out = image;
  hue_rotate(out, 60.0);
  contrast_about(out, 1.25, 0.5);
  for (double& v : out.data()) v = clamp01(std::pow(v, 1.6));
  const Shape s = out.shape();
  const double cy = 0.5 * s.h;
  const double cx = 0.5 * s.w;
  const double r_max2 = cy * cy + cx * cx;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const double dy = y + 0.5 - cy;
      const double dx = x + 0.5 - cx;
      const double gain = 1.0 - 0.45 * (dy * dy + dx * dx) / r_max2;
      for (int c = 0; c < 3; ++c) out[pix(s, c, y, x)] = clamp01(out[pix(s, c, y, x)] * gain);
    }
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, int index) {
  // splitmix64 over (seed, index)
  std::uint64_t z = dataset_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

DomainSample render_sample(std::uint64_t seed, Domain domain, int h, int w) {
  if (h < kMinSide || w < kMinSide) {
    throw DataError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                    " too small to place shapes (minimum " + std::to_string(kMinSide) + ")");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  auto pick = [&](std::size_t n) {
    return std::min<std::size_t>(n - 1, static_cast<std::size_t>(unit(rng) * n));
  };

  DomainSample out;
  out.domain = domain;
  out.seed = seed;
  out.image = Tensor(Shape{1, 3, h, w});
  out.mask = LabelMap{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0)};
  const Shape s = out.image.shape();
  const double side = std::min(h, w);

  const Rgb bg = kBackgroundPalette[pick(kBackgroundPalette.size())];
  const double gy = (unit(rng) - 0.5) * 0.2;
  const double gx = (unit(rng) - 0.5) * 0.2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ramp = gy * (y + 0.5) / h + gx * (x + 0.5) / w;
      for (int c = 0; c < 3; ++c) out.image[pix(s, c, y, x)] = bg[c] + ramp;
    }
  }

  // Ring first, disc last: later shapes occlude earlier ones.
  for (int cls : {3, 2, 1}) {
    const bool present = unit(rng) < 0.7;
    const Rgb color = kShapePalette[pick(kShapePalette.size())];
    const double cy = (0.2 + 0.6 * unit(rng)) * h;
    const double cx = (0.2 + 0.6 * unit(rng)) * w;
    const double a = (0.12 + 0.08 * unit(rng)) * side;  // radius or half length
    const double b = unit(rng);
    const double angle = unit(rng) * std::numbers::pi;
    if (!present) continue;
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        bool inside = false;
        if (cls == 1) {
          inside = dy * dy + dx * dx <= a * a;
        } else if (cls == 2) {
          const double along = dx * ca + dy * sa;
          const double across = -dx * sa + dy * ca;
          const double half_len = a * 1.6;
          const double half_thick = (0.04 + 0.03 * b) * side;
          inside = std::abs(along) <= half_len && std::abs(across) <= half_thick;
        } else {
          const double outer = a * 1.25;
          const double inner = outer * (0.5 + 0.15 * b);
          const double r2 = dy * dy + dx * dx;
          inside = r2 <= outer * outer && r2 >= inner * inner;
        }
        if (!inside) continue;
        out.mask.labels[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(cls);
        for (int c = 0; c < 3; ++c) out.image[pix(s, c, y, x)] = color[c];
      }
    }
  }

  for (double& v : out.image.data()) v = clamp01(v + noise(rng));
  if (domain == Domain::kTarget) out.image = apply_target_style(out.image);
  return out;
}

std::vector<DomainSample> generate_domain(int count, Domain domain, std::uint64_t seed,
                                          int h, int w) {
  if (count < 1) throw ConfigError("sample count must be >= 1");
  std::vector<DomainSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(render_sample(sample_seed(seed, i), domain, h, w));
  return out;
}

DomainSample augment_geometric(const DomainSample& in, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool flip = unit(rng) < 0.5;
  const double scale = 1.0 + 0.25 * unit(rng);
  const Shape s = in.image.shape();
  const double max_oy = s.h * scale - s.h;
  const double max_ox = s.w * scale - s.w;
  const double oy = max_oy * unit(rng);
  const double ox = max_ox * unit(rng);

  DomainSample out = in;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const int xd = flip ? s.w - 1 - x : x;
      const double sy = std::clamp((y + oy + 0.5) / scale - 0.5, 0.0, s.h - 1.0);
      const double sx = std::clamp((xd + ox + 0.5) / scale - 0.5, 0.0, s.w - 1.0);
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const int y1 = std::min(y0 + 1, s.h - 1);
      const int x1 = std::min(x0 + 1, s.w - 1);
      const double fy = sy - y0;
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = in.image[pix(s, c, y0, x0)] * (1 - fx) + in.image[pix(s, c, y0, x1)] * fx;
        const double bot = in.image[pix(s, c, y1, x0)] * (1 - fx) + in.image[pix(s, c, y1, x1)] * fx;
        out.image[pix(s, c, y, x)] = top * (1 - fy) + bot * fy;
      }
      const int my = std::clamp(static_cast<int>(std::floor((y + oy + 0.5) / scale)), 0, s.h - 1);
      const int mx = std::clamp(static_cast<int>(std::floor((xd + ox + 0.5) / scale)), 0, s.w - 1);
      out.mask.labels[static_cast<std::size_t>(y) * s.w + x] = in.mask.at(my, mx);
    }
  }
  return out;
}

// --- Netpbm ---------------------------------------------------------------

namespace {

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t payload_offset = 0;
};

// Parses "P5"/"P6" headers: magic, then width, height, maxval separated by
// whitespace and '#' comments, then exactly one whitespace byte.
PnmHeader parse_header(const std::vector<unsigned char>& buf, const char* magic) {
  if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1]) {
    throw FormatError(std::string("expected magic ") + magic, 0);
  }
  std::size_t pos = 2;
  auto next_int = [&](const char* what) {
    for (;;) {
      if (pos >= buf.size()) {
        throw FormatError(std::string("header ends before ") + what,
                          static_cast<long long>(pos));
      }
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (!std::isdigit(buf[pos])) {
      throw FormatError(std::string("expected digits for ") + what,
                        static_cast<long long>(pos));
    }
    long long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 20) throw FormatError(std::string(what) + " too large", static_cast<long long>(pos));
      ++pos;
    }
    return static_cast<int>(v);
  };
  PnmHeader h;
  h.width = next_int("width");
  h.height = next_int("height");
  h.maxval = next_int("maxval");
  if (pos >= buf.size() || !std::isspace(buf[pos])) {
    throw FormatError("missing whitespace after maxval", static_cast<long long>(pos));
  }
  ++pos;
  if (h.width < 1 || h.height < 1) throw FormatError("zero image extent", 3);
  if (h.maxval != 255) {
    throw FormatError("unsupported maxval " + std::to_string(h.maxval),
                      static_cast<long long>(pos - 1));
  }
  h.payload_offset = pos;
  return h;
}

void write_bytes(const std::string& path, const std::string& header,
                 const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace

void write_ppm(const Tensor& image, const std::string& path) {
  check_image(image);
  const Shape s = image.shape();
  std::vector<unsigned char> payload(static_cast<std::size_t>(s.h) * s.w * 3);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        payload[(static_cast<std::size_t>(y) * s.w + x) * 3 + c] = static_cast<unsigned char>(
            std::lround(clamp01(image[pix(s, c, y, x)]) * 255.0));
      }
    }
  }
  write_bytes(path, "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n",
              payload);
}

Tensor read_ppm(const std::string& path) {
  const auto buf = slurp(path);
  const PnmHeader h = parse_header(buf, "P6");
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
  if (buf.size() - h.payload_offset < need) {
    throw FormatError("truncated payload: need " + std::to_string(need) + " bytes",
                      static_cast<long long>(buf.size()));
  }
  Tensor out(Shape{1, 3, h.height, h.width});
  const Shape s = out.shape();
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[pix(s, c, y, x)] =
            buf[h.payload_offset + (static_cast<std::size_t>(y) * h.width + x) * 3 + c] / 255.0;
      }
    }
  }
  return out;
}

void write_pgm(const LabelMap& mask, const std::string& path) {
  write_bytes(path, "P5\n" + std::to_string(mask.w) + " " + std::to_string(mask.h) + "\n255\n",
              std::vector<unsigned char>(mask.labels.begin(), mask.labels.end()));
}

LabelMap read_pgm(const std::string& path) {
  const auto buf = slurp(path);
  const PnmHeader h = parse_header(buf, "P5");
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
  if (buf.size() - h.payload_offset < need) {
    throw FormatError("truncated payload: need " + std::to_string(need) + " bytes",
                      static_cast<long long>(buf.size()));
  }
  LabelMap m{h.height, h.width, {}};
  m.labels.assign(buf.begin() + static_cast<std::ptrdiff_t>(h.payload_offset),
                  buf.begin() + static_cast<std::ptrdiff_t>(h.payload_offset + need));
  return m;
}

void write_sample(const DomainSample& s, const std::string& image_path,
                  const std::string& mask_path) {
  write_ppm(s.image, image_path);
  write_pgm(s.mask, mask_path);
}

DomainSample read_sample(const std::string& image_path, const std::string& mask_path) {
  DomainSample s;
  s.image = read_ppm(image_path);
  s.mask = read_pgm(mask_path);
  if (s.mask.h != s.image.shape().h || s.mask.w != s.image.shape().w) {
    throw DataError("mask " + mask_path + " does not match image size of " + image_path);
  }
  return s;
}

// --- Dataset directory ----------------------------------------------------

SplitSizes split_sizes(int count) {
  SplitSizes s;
  s.train = count * 8 / 10;
  s.val = count / 10;
  s.test = count - s.train - s.val;
  return s;
}

namespace {

Split split_of(int index, const SplitSizes& sizes) {
  if (index < sizes.train) return Split::kTrain;
  if (index < sizes.train + sizes.val) return Split::kVal;
  return Split::kTest;
}

std::string sample_stem(const char* prefix, int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", prefix, index, ext);
  return buf;
}

}  // namespace

std::vector<ManifestRow> write_dataset(const std::string& root, int count,
                                       std::uint64_t seed, int h, int w) {
  if (count < 1) throw ConfigError("sample count must be >= 1");
  const SplitSizes sizes = split_sizes(count);
  std::vector<ManifestRow> rows;
  for (Domain d : {Domain::kSource, Domain::kTarget}) {
    for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
      fs::create_directories(fs::path(root) / to_string(d) / to_string(sp));
    }
    for (int i = 0; i < count; ++i) {
      const std::uint64_t sseed = sample_seed(seed, i);
      const Split sp = split_of(i, sizes);
      const DomainSample s = render_sample(sseed, d, h, w);
      const fs::path dir = fs::path(root) / to_string(d) / to_string(sp);
      write_sample(s, (dir / sample_stem("img", i, "ppm")).string(),
                   (dir / sample_stem("msk", i, "pgm")).string());
      rows.push_back(ManifestRow{i, d, sp, sseed});
    }
  }
  std::ofstream out(fs::path(root) / "manifest.csv");
  if (!out) throw IoError("cannot write manifest in " + root);
  out << "index,domain,split,seed\n";
  for (const ManifestRow& r : rows) {
    out << r.index << ',' << to_string(r.domain) << ',' << to_string(r.split) << ','
        << r.seed << '\n';
  }
  return rows;
}

std::vector<ManifestRow> read_manifest(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "index,domain,split,seed") {
    throw DataError("unexpected manifest header in " + path.string());
  }
  std::vector<ManifestRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string idx, dom, sp, sd;
    if (!std::getline(ss, idx, ',') || !std::getline(ss, dom, ',') ||
        !std::getline(ss, sp, ',') || !std::getline(ss, sd)) {
      throw DataError("malformed manifest line " + std::to_string(line_no));
    }
    try {
      rows.push_back(ManifestRow{std::stoi(idx), parse_domain(dom), parse_split(sp),
                                 std::stoull(sd)});
    } catch (const std::logic_error&) {
      throw DataError("malformed manifest line " + std::to_string(line_no));
    }
  }
  return rows;
}

std::vector<DomainSample> load_split(const std::string& root, Domain domain, Split split) {
  std::vector<DomainSample> out;
  for (const ManifestRow& r : read_manifest(root)) {
    if (r.domain != domain || r.split != split) continue;
    const fs::path dir = fs::path(root) / to_string(domain) / to_string(split);
    DomainSample s = read_sample((dir / sample_stem("img", r.index, "ppm")).string(),
                                 (dir / sample_stem("msk", r.index, "pgm")).string());
    s.domain = domain;
    s.seed = r.seed;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace dife::data
