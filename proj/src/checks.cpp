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
#include "c3dm/checks.hpp"

#include "c3dm/error.hpp"
#include "c3dm/geom.hpp"
#include "c3dm/grad_check.hpp"
#include "c3dm/image.hpp"
#include "c3dm/losses.hpp"
#include "c3dm/mlp.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace c3dm::checks {

namespace {

using namespace c3dm::losses;
using nn::GradCheckResult;

Eigen::MatrixXd randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  const geom::Vec6<double> v = randn(rng, 6, 1);
  return geom::rotation_from_6d<double>(v);
}

Eigen::Matrix3Xd random_rays(std::mt19937_64& rng, int n) {
  Eigen::Matrix3Xd r = randn(rng, 3, n);
  r.row(2) = r.row(2).cwiseAbs().array() + 2.0;
  r.colwise().normalize();
  return r;
}

Image smooth_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, 3);
  for (double& v : img.data) v = u(rng);
  return gaussian_blur(img, 1.0);
}

template <typename T>
using Vx = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Each check draws one random instance and compares tape and numeric
// gradients there.
using Check = std::function<GradCheckResult(std::mt19937_64&)>;

GradCheckResult check_pseudo_huber(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(-3.0, 1.0);
  const Eigen::VectorXd z = randn(rng, 3, 1) * std::pow(10.0, scale(rng));
  return nn::check_gradient([](const auto& v) { return pseudo_huber(v, 0.05); }, z, 1e-7);
}

GradCheckResult check_rotation_from_6d(std::mt19937_64& rng) {
  const Eigen::Matrix3d w = randn(rng, 3, 3);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return geom::rotation_from_6d<T>(v).cwiseProduct(w.cast<T>()).sum();
      },
      Eigen::VectorXd(randn(rng, 6, 1)));
}

GradCheckResult check_rotation_distance(std::mt19937_64& rng) {
  return nn::check_gradient(
      [](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return geom::rotation_distance<T>(geom::rotation_from_6d<T>(v.head(6)), geom::rotation_from_6d<T>(v.tail(6)));
      },
      Eigen::VectorXd(randn(rng, 12, 1)));
}

GradCheckResult check_prior(std::mt19937_64& rng) {
  const int d = 3, k = 6;
  NrsfmLabels labels;
  labels.basis_star = randn(rng, 3 * d, k);
  labels.alpha_star = randn(rng, d, 1);
  labels.rotation_star = random_rotation(rng);
  labels.visible = {0, 2, 3, 5};
  const Eigen::Index nb = labels.basis_star.size();
  Eigen::VectorXd x(nb + d + 6);
  x << flat(labels.basis_star) + randn(rng, nb, 1, 0.02), labels.alpha_star + randn(rng, d, 1, 0.02), randn(rng, 6, 1);
  LossWeights w;
  w.w_R = 10.0;
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const MatrixX<T> b = Eigen::Map<const MatrixX<T>>(v.data(), 3 * d, k);
        const VectorX<T> a = v.segment(nb, d);
        return prior_loss<T>(b, a, geom::rotation_from_6d<T>(v.tail(6)), labels, LossConfig{}, w);
      },
      x);
}

GradCheckResult check_translation(std::mt19937_64& rng) {
  const int n = std::uniform_int_distribution<int>(3, 20)(rng);
  const Eigen::Matrix3Xd rays = random_rays(rng, n);
  const Eigen::Vector3d w = randn(rng, 3, 1);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const Matrix3X<T> x = Eigen::Map<const Matrix3X<T>>(v.data(), 3, n);
        const Vec3<T> t = closed_form_translation<T>(x, rays);
        return w(0) * t(0) + w(1) * t(1) + w(2) * t(2);
      },
      flat(randn(rng, 3, n)));
}

GradCheckResult check_ray_projection(std::mt19937_64& rng) {
  const int n = 8;
  const Eigen::Matrix3Xd rays = random_rays(rng, n);
  Eigen::Matrix3Xd x = rays * 4.0 + randn(rng, 3, n, 0.1);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return ray_projection_loss<T>(Eigen::Map<const Matrix3X<T>>(v.data(), 3, n), rays, 0.05);
      },
      flat(x));
}

GradCheckResult check_perspective_pixel(std::mt19937_64& rng) {
  const int n = 8;
  const geom::CameraIntrinsics cam = geom::CameraIntrinsics::perspective(20.0, 1.0, -2.0);
  Eigen::Matrix3Xd x = randn(rng, 3, n);
  x.row(2) = x.row(2).cwiseAbs().array() + 3.0;
  const Eigen::Matrix2Xd y = randn(rng, 2, n, 5.0);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return perspective_pixel_loss<T>(Eigen::Map<const Matrix3X<T>>(v.data(), 3, n), y, cam, 0.5);
      },
      flat(x));
}

// Object points near the rays of known pixels, viewed from distance ~5.
GradCheckResult check_reprojection(std::mt19937_64& rng, geom::CameraKind kind, bool ray) {
  const int n = 6;
  const geom::CameraIntrinsics cam =
      kind == geom::CameraKind::Perspective ? geom::CameraIntrinsics::perspective(10.0) : geom::CameraIntrinsics::orthographic();
  const Eigen::Matrix3d rot = random_rotation(rng);
  const Eigen::Vector3d t(0.3, -0.2, 5.0);
  Eigen::Matrix3Xd obj = randn(rng, 3, n);
  Eigen::Matrix2Xd y(2, n);
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector3d xc = rot * obj.col(k) + (cam.is_perspective() ? t : Eigen::Vector3d::Zero());
    y.col(k) = geom::project<double>(cam, xc) + randn(rng, 2, 1, 0.2);
  }
  LossConfig cfg;
  cfg.epsilon_geometry = 0.1;
  cfg.ray_reprojection = ray;
  Eigen::VectorXd x(3 * n + 6);
  x << flat(obj), geom::Rotation6D::from_rotation(rot).stacked() + randn(rng, 6, 1, 0.01);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const Matrix3X<T> pts = Eigen::Map<const Matrix3X<T>>(v.data(), 3, n);
        return reprojection_loss<T>(pts, geom::rotation_from_6d<T>(v.tail(6)), cam, y, cfg).value;
      },
      x);
}

GradCheckResult check_cross_project(std::mt19937_64& rng) {
  const int d = 3;
  const geom::CameraIntrinsics cam = geom::CameraIntrinsics::perspective(10.0, 2.0, 3.0);
  const Eigen::Vector2d w = randn(rng, 2, 1);
  Eigen::VectorXd x(3 * d + d + 6 + 3);
  x << randn(rng, 3 * d, 1, 0.3), randn(rng, d, 1), randn(rng, 6, 1), randn(rng, 2, 1, 0.2), 5.0;
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const VectorX<T> b = v.head(3 * d);
        const VectorX<T> a = v.segment(3 * d, d);
        const Vec3<T> t = v.tail(3);
        const Vec2<T> y = cross_project<T>(b, a, geom::rotation_from_6d<T>(v.segment(4 * d, 6)), t, cam);
        return w(0) * y(0) + w(1) * y(1);
      },
      x);
}

GradCheckResult check_photometric(std::mt19937_64& rng) {
  const Image img = smooth_image(rng, 9, 11);
  const int n = 8;
  const Eigen::MatrixXd colors = randn(rng, 3, n, 0.3).array() + 0.5;
  std::uniform_real_distribution<double> u(-1.0, 11.0);
  Eigen::Matrix2Xd uv(2, n);
  for (Eigen::Index i = 0; i < uv.size(); ++i) uv(i) = u(rng);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const Eigen::Matrix<T, 2, Eigen::Dynamic> c = Eigen::Map<const Eigen::Matrix<T, 2, Eigen::Dynamic>>(v.data(), 2, n);
        return photometric_loss<T>(colors, img, c, 0.1).value;
      },
      flat(uv), 1e-6);
}

GradCheckResult check_min_k(std::mt19937_64& rng) {
  const Eigen::MatrixXd l = randn(rng, 6, 5).cwiseAbs();
  return nn::check_gradient(
      [](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return min_k_loss<T>(Eigen::Map<const MatrixX<T>>(v.data(), 6, 5), 3);
      },
      flat(l), 1e-7);
}

GradCheckResult check_embedding_alignment(std::mt19937_64& rng) {
  return nn::check_gradient(
      [](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        return embedding_alignment_loss<T>(Eigen::Map<const Matrix3X<T>>(v.data(), 3, 5),
                                           geom::rotation_from_6d<T>(v.tail(6)));
      },
      Eigen::VectorXd(randn(rng, 3 * 5 + 6, 1)));
}

// Sphere of radius ~2 seen from distance 8 against a smaller disc silhouette.
GradCheckResult check_mask(std::mt19937_64& rng) {
  static const struct Scene {
    Mask mask{41, 41};
    Image dist;
    Scene() {
      for (int r = 0; r < 41; ++r) {
        for (int c = 0; c < 41; ++c) mask.set(r, c, (r - 20) * (r - 20) + (c - 24) * (c - 24) <= 9);
      }
      dist = distance_transform(mask);
    }
  } scene;
  const int n = 30;
  Eigen::Matrix3Xd k = randn(rng, 3, n);
  k.colwise().normalize();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(9, n);
  for (int s = 0; s < n; ++s) {
    for (int i = 0; i < 3; ++i) basis(3 * i + i, s) = k(i, s);
  }
  const geom::CameraIntrinsics cam = geom::CameraIntrinsics::perspective(20.0);
  const MaskField field{&scene.dist, Eigen::Vector2d(20.0, 20.0)};
  Eigen::VectorXd x(3 + 6 + 3);
  x << Eigen::Vector3d::Constant(2.0) + randn(rng, 3, 1, 0.5), geom::Rotation6D{}.stacked() + randn(rng, 6, 1, 0.3),
      Eigen::Vector3d(0.5, 0.0, 8.0) + randn(rng, 3, 1, 0.2);
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const MatrixX<T> b = basis.cast<T>();
        const VectorX<T> a = v.head(3);
        const Vec3<T> t = v.tail(3);
        return mask_reprojection_loss<T>(b, a, geom::rotation_from_6d<T>(v.segment(3, 6)), t, cam, field, 0.5).soft;
      },
      x, 1e-6);
}

GradCheckResult check_texture(std::mt19937_64& rng) {
  const Image img = smooth_image(rng, 12, 12);
  Mask mask(12, 12);
  std::bernoulli_distribution coin(0.7);
  for (int r = 0; r < 12; ++r) {
    for (int c = 0; c < 12; ++c) mask.set(r, c, coin(rng));
  }
  const TextureCrop crop{2, 3, 8};
  const Eigen::MatrixXd pred = randn(rng, 3, 64, 0.2).array() + 0.5;
  return nn::check_gradient(
      [&](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::Scalar;
        const auto r = texture_loss<T>(Eigen::Map<const Matrix3X<T>>(v.data(), 3, 64), crop, img, mask, 0.1);
        return r.photometric + 0.1 * r.multiscale;
      },
      flat(pred));
}

// A three-frame batch whose shapes roughly explain their pixels.
struct Batch {
  static constexpr int frames = 3, d = 3, kp = 5, n = 10, crop = 4;
  std::vector<std::vector<Image>> pyramids;
  std::vector<Mask> masks;
  std::vector<Image> dists;
  std::vector<NrsfmLabels> labels;
  std::vector<FrameObservation> obs;
  Eigen::VectorXd point;
  LossConfig cfg;

  static constexpr Eigen::Index per_frame() { return 3 * n + 3 * d * n + 3 * d * kp + d + 6 + 3 * crop * crop; }

  Batch(std::mt19937_64& rng, bool perspective)
      : pyramids(frames), masks(frames, Mask(16, 16)), dists(frames), labels(frames), obs(frames) {
    cfg.k = 2;
    cfg.epsilon_geometry = 0.05;
    std::uniform_int_distribution<int> px(4, 11);
    point.resize(per_frame() * frames);
    for (int f = 0; f < frames; ++f) {
      const Image img = smooth_image(rng, 16, 16);
      pyramids[f] = {img};
      for (double s : cfg.blur_sigmas) pyramids[f].push_back(gaussian_blur(img, s));
      for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) masks[f].set(r, c, (r - 7.5) * (r - 7.5) + (c - 7.5) * (c - 7.5) < 30.0);
      }
      dists[f] = distance_transform(masks[f]);
      labels[f].basis_star = randn(rng, 3 * d, kp, 0.5);
      labels[f].alpha_star = randn(rng, d, 1);
      labels[f].rotation_star = random_rotation(rng);
      labels[f].visible = {0, 1, 3};
      FrameObservation& o = obs[f];
      o.frame_id = f;
      o.camera = perspective ? geom::CameraIntrinsics::perspective(16.0) : geom::CameraIntrinsics::orthographic();
      o.origin = Eigen::Vector2d(7.5, 7.5);
      o.pixels.resize(2, n);
      for (int p = 0; p < n; ++p) o.pixels.col(p) = Eigen::Vector2i(px(rng), px(rng));
      o.pyramid = &pyramids[f];
      o.mask = &masks[f];
      o.mask_distance = &dists[f];
      o.labels = &labels[f];
      o.crop = TextureCrop{5, 6, crop};

      const Eigen::Matrix3d rot = random_rotation(rng);
      const Eigen::Vector3d alpha(1.0, 0.3, -0.2);
      Eigen::MatrixXd basis = randn(rng, 3 * d, n, 0.05);
      const Eigen::Matrix2Xd y = o.image_points();
      for (int p = 0; p < n; ++p) {
        Eigen::Vector3d target = perspective ? Eigen::Vector3d(5.0 * geom::ray_direction(o.camera, y.col(p)) -
                                                               Eigen::Vector3d(0, 0, 5.0))
                                             : Eigen::Vector3d(y(0, p), y(1, p), 0.0);
        target = rot.transpose() * target + randn(rng, 3, 1, 0.1);
        Eigen::Vector3d rest = Eigen::Vector3d::Zero();
        for (int j = 1; j < d; ++j) rest += basis.col(p).segment<3>(3 * j) * alpha(j);
        basis.col(p).head<3>() = (target - rest) / alpha(0);
      }
      Eigen::Matrix3Xd kappa = randn(rng, 3, n);
      kappa.colwise().normalize();
      const Eigen::MatrixXd kb = labels[f].basis_star + randn(rng, 3 * d, kp, 0.05);
      const Eigen::MatrixXd tex = randn(rng, 3, crop * crop, 0.2).array() + 0.5;
      point.segment(f * per_frame(), per_frame()) << flat(kappa), flat(basis), flat(kb), alpha,
          geom::Rotation6D::from_rotation(rot).stacked(), flat(tex);
    }
  }

  template <typename T>
  T eval(const Vx<T>& v, const LossWeights& w) const {
    std::vector<FrameOutputs<T>> out(frames);
    for (int f = 0; f < frames; ++f) {
      Eigen::Index o = f * per_frame();
      FrameOutputs<T>& fo = out[static_cast<std::size_t>(f)];
      fo.pixel_kappa = Eigen::Map<const Matrix3X<T>>(v.data() + o, 3, n);
      o += 3 * n;
      fo.pixel_basis = Eigen::Map<const MatrixX<T>>(v.data() + o, 3 * d, n);
      o += 3 * d * n;
      fo.keypoint_basis = Eigen::Map<const MatrixX<T>>(v.data() + o, 3 * d, kp);
      o += 3 * d * kp;
      fo.alpha = v.segment(o, d);
      o += d;
      fo.rotation = geom::rotation_from_6d<T>(v.segment(o, 6));
      o += 6;
      fo.texture = Eigen::Map<const Matrix3X<T>>(v.data() + o, 3, crop * crop);
    }
    // Frame 0's pixel bases double as the shared mask samples.
    const MatrixX<T> mask_basis = out[0].pixel_basis;
    return total_loss<T>(obs, std::span<const FrameOutputs<T>>(out), mask_basis, cfg, w).total;
  }
};

GradCheckResult check_total(std::mt19937_64& rng, bool perspective) {
  const Batch b(rng, perspective);
  const LossWeights w =
      LossWeights::for_camera(perspective ? geom::CameraKind::Perspective : geom::CameraKind::Orthographic);
  return nn::check_gradient([&](const auto& v) { return b.eval(v, w); }, b.point, 1e-6);
}

// Hand-written MLP backward versus differences, for parameters and inputs.
GradCheckResult check_mlp(std::mt19937_64& rng) {
  nn::MlpConfig cfg;
  cfg.in_dim = 4;
  cfg.hidden_dim = 6;
  cfg.out_dim = 3;
  cfg.n_res_blocks = 2;
  nn::Mlp net = nn::Mlp::initialized(cfg, rng);
  const Eigen::MatrixXd x = randn(rng, 4, 3);
  const Eigen::MatrixXd w = randn(rng, 3, 3);
  nn::Mlp::Cache cache;
  (void)net.forward(x, &cache);
  Eigen::VectorXd g_params = Eigen::VectorXd::Zero(net.param_count());
  const Eigen::MatrixXd g_input = net.backward(cache, w, g_params);
  const Eigen::VectorXd theta = net.params();
  Eigen::VectorXd point(theta.size() + x.size());
  point << theta, flat(x);
  GradCheckResult r;
  r.analytic.resize(point.size());
  r.analytic << g_params, flat(g_input);
  r.numeric = nn::numeric_gradient(
      [&](const Eigen::VectorXd& p) {
        nn::Mlp m = net;
        m.set_params(p.head(theta.size()));
        return m.forward(Eigen::Map<const Eigen::MatrixXd>(p.data() + theta.size(), 4, 3)).cwiseProduct(w).sum();
      },
      point, 1e-6);
  r.max_rel_error = nn::max_relative_error(r.analytic, r.numeric);
  return r;
}

struct Entry {
  const char* name;
  const char* group;
  Check check;
};

const std::vector<Entry>& registry() {
  using K = geom::CameraKind;
  static const std::vector<Entry> entries = {
      {"pseudo_huber", "losses", check_pseudo_huber},
      {"prior_loss", "losses", check_prior},
      {"closed_form_translation", "losses", check_translation},
      {"ray_projection_loss", "losses", check_ray_projection},
      {"perspective_pixel_loss", "losses", check_perspective_pixel},
      {"reprojection_loss_ray", "losses", [](auto& r) { return check_reprojection(r, K::Perspective, true); }},
      {"reprojection_loss_pixel", "losses", [](auto& r) { return check_reprojection(r, K::Perspective, false); }},
      {"reprojection_loss_orthographic", "losses",
       [](auto& r) { return check_reprojection(r, K::Orthographic, true); }},
      {"cross_project", "losses", check_cross_project},
      {"photometric_loss", "losses", check_photometric},
      {"min_k_loss", "losses", check_min_k},
      {"embedding_alignment_loss", "losses", check_embedding_alignment},
      {"mask_reprojection_loss", "losses", check_mask},
      {"texture_loss", "losses", check_texture},
      {"total_loss_orthographic", "losses", [](auto& r) { return check_total(r, false); }},
      {"total_loss_perspective", "losses", [](auto& r) { return check_total(r, true); }},
      {"rotation_from_6d", "geom", check_rotation_from_6d},
      {"rotation_distance", "geom", check_rotation_distance},
      {"mlp", "nn", check_mlp},
  };
  return entries;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> out;
  for (const Entry& e : registry()) out.emplace_back(e.name);
  return out;
}

std::vector<GradCheckRow> run_gradcheck(const GradCheckOptions& opt) {
  std::vector<GradCheckRow> rows;
  bool corrupt = opt.corrupt_one;
  for (const Entry& e : registry()) {
    if (!opt.scope.empty() && opt.scope != e.name && opt.scope != e.group) continue;
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(rows.size()),
                      static_cast<std::uint32_t>(std::hash<std::string>{}(e.name))};
    std::mt19937_64 rng(seq);
    GradCheckRow row;
    row.name = e.name;
    row.group = e.group;
    row.tolerance = opt.tolerance;
    for (int i = 0; i < opt.points; ++i) {
      GradCheckResult r = e.check(rng);
      if (corrupt && i == 0) {
        r.analytic(0) += 1e-2 * std::max(1.0, std::abs(r.analytic(0)));
        r.max_rel_error = nn::max_relative_error(r.analytic, r.numeric);
      }
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      ++row.points;
    }
    corrupt = false;
    row.pass = row.max_rel_error < row.tolerance;
    rows.push_back(row);
  }
  if (rows.empty()) throw Error(ErrorCode::InvalidSpec, "gradcheck: no check named " + opt.scope);
  return rows;
}

}  // namespace c3dm::checks
