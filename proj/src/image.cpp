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
#include "c3dm/image.hpp"

#include "c3dm/error.hpp"

#include <fstream>
#include <limits>

namespace c3dm {

namespace {

// Squared-distance transform of a sampled 1D function (Felzenszwalb and
// Huttenlocher). Unset samples carry kFar.
constexpr double kFar = 1e20;

std::vector<double> edt_1d(const std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  std::vector<double> d(f.size());
  std::vector<int> v(f.size());
  std::vector<double> z(f.size() + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + 1.0 * q * q) - (f[v[k]] + 1.0 * v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + 1.0 * q * q) - (f[v[k]] + 1.0 * v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
  return d;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  Image tmp(img.height, img.width, img.channels);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * img.at(r, std::clamp(c + i, 0, img.width - 1), ch);
        }
        tmp.at(r, c, ch) = acc;
      }
    }
  }
  Image out(img.height, img.width, img.channels);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * tmp.at(std::clamp(r + i, 0, img.height - 1), c, ch);
        }
        out.at(r, c, ch) = acc;
      }
    }
  }
  return out;
}

Image distance_transform(const Mask& mask) {
  const int h = mask.height;
  const int w = mask.width;
  Image out(h, w, 1, std::numeric_limits<double>::infinity());
  if (mask.count() == 0) return out;
  std::vector<double> col(static_cast<std::size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) col[r] = mask.at(r, c) ? 0.0 : kFar;
    const std::vector<double> d = edt_1d(col);
    for (int r = 0; r < h; ++r) out.at(r, c) = d[r];
  }
  std::vector<double> row(static_cast<std::size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) row[c] = out.at(r, c);
    const std::vector<double> d = edt_1d(row);
    for (int c = 0; c < w; ++c) out.at(r, c) = std::sqrt(d[c]);
  }
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw Error(ErrorCode::DimMismatch, "write_ppm: need 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "write_ppm: cannot open " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::IoError, "write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "read_ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorCode::IoError, "read_ppm: unsupported header in " + path);
  is.get();
  Image img(h, w, 3);
  std::vector<char> bytes(img.data.size());
  is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!is) throw Error(ErrorCode::IoError, "read_ppm: truncated " + path);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  return img;
}

}  // namespace c3dm
