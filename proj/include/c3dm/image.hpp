/*
 * c3dm - canonical 3D deformer maps on synthetic deformable categories.
 *
 * Copyright 2026 The c3dm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Dense multi-channel images, bilinear sampling and distance transforms.
//
// Pixel (row r, col c) has its center at continuous pixel coordinates
// (u, v) = (c, r).

#include "c3dm/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace c3dm {

struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // row-major, channels interleaved

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  [[nodiscard]] std::size_t offset(int r, int c) const noexcept {
    return (static_cast<std::size_t>(r) * width + c) * channels;
  }
  double& at(int r, int c, int ch = 0) { return data[offset(r, c) + ch]; }
  [[nodiscard]] double at(int r, int c, int ch = 0) const { return data[offset(r, c) + ch]; }
  [[nodiscard]] Eigen::VectorXd pixel(int r, int c) const {
    return Eigen::Map<const Eigen::VectorXd>(data.data() + offset(r, c), channels);
  }
  void set_pixel(int r, int c, const Eigen::VectorXd& v) {
    Eigen::Map<Eigen::VectorXd>(data.data() + offset(r, c), channels) = v;
  }
  [[nodiscard]] bool empty() const noexcept { return data.empty(); }
};

/// Boolean pixel mask, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, bool fill = false)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}
  [[nodiscard]] bool at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
};

template <typename Scalar>
struct BilinearSample {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> value;
  bool clamped = false;
};

/// Bilinear interpolation at continuous pixel coordinates (u = col, v = row).
/// Coordinates outside [0, W-1] x [0, H-1] are clamped to the border, which
/// removes their derivative, and the sample is flagged.
template <typename Scalar>
BilinearSample<Scalar> sample_bilinear(const Image& img, const Scalar& u, const Scalar& v) {
  BilinearSample<Scalar> s;
  const double uv = nn::value_of(u);
  const double vv = nn::value_of(v);
  const double umax = img.width - 1;
  const double vmax = img.height - 1;
  Scalar uc = u;
  Scalar vc = v;
  if (!(uv >= 0.0 && uv <= umax)) {
    uc = Scalar(std::clamp(std::isfinite(uv) ? uv : 0.0, 0.0, umax));
    s.clamped = true;
  }
  if (!(vv >= 0.0 && vv <= vmax)) {
    vc = Scalar(std::clamp(std::isfinite(vv) ? vv : 0.0, 0.0, vmax));
    s.clamped = true;
  }
  const int c0 = std::min(static_cast<int>(std::floor(nn::value_of(uc))), std::max(img.width - 2, 0));
  const int r0 = std::min(static_cast<int>(std::floor(nn::value_of(vc))), std::max(img.height - 2, 0));
  const int c1 = std::min(c0 + 1, img.width - 1);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const Scalar fu = uc - static_cast<double>(c0);
  const Scalar fv = vc - static_cast<double>(r0);
  const Scalar w00 = (1.0 - fu) * (1.0 - fv);
  const Scalar w01 = fu * (1.0 - fv);
  const Scalar w10 = (1.0 - fu) * fv;
  const Scalar w11 = fu * fv;
  s.value.resize(img.channels);
  for (int ch = 0; ch < img.channels; ++ch) {
    s.value(ch) = w00 * img.at(r0, c0, ch) + w01 * img.at(r0, c1, ch) + w10 * img.at(r1, c0, ch) +
                  w11 * img.at(r1, c1, ch);
  }
  return s;
}

/// Separable Gaussian blur with border replication; sigma <= 0 copies.
[[nodiscard]] Image gaussian_blur(const Image& img, double sigma);

/// Euclidean distance from every pixel center to the nearest pixel set in
/// `mask` (zero on the mask). Single-channel result.
[[nodiscard]] Image distance_transform(const Mask& mask);

/// Binary PPM (P6, maxval 255) of a 3-channel image with values in [0, 1];
/// values are clamped and rounded.
void write_ppm(const std::string& path, const Image& img);
/// Reads a binary PPM into [0, 1] values.
[[nodiscard]] Image read_ppm(const std::string& path);

}  // namespace c3dm
