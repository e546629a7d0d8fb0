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
#include "c3dm/synth.hpp"

#include "c3dm/error.hpp"
#include "c3dm/mlp.hpp"
#include "c3dm/sph_harm.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/QR>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace c3dm::synth {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// Seeds derived from the category seed, one stream per purpose.
enum class Stream : std::uint32_t { GroundTruth = 1, Poses = 2, FrameNoise = 3, Labels = 4 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s, std::uint32_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), index};
  return std::mt19937_64(seq);
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sigma * n(rng);
  }
  return m;
}

Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
  const Eigen::MatrixXd g = gaussian(rng, n, n, 1.0);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  // Fix column signs so the factorization is unique.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return q;
}

Eigen::Matrix3Xd fibonacci_sphere(int n) {
  Eigen::Matrix3Xd p(3, n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    p.col(i) << r * std::cos(golden * i), r * std::sin(golden * i), z;
  }
  return p;
}

Eigen::MatrixXd sh_matrix(const Eigen::Matrix3Xd& pts, int degree) {
  Eigen::MatrixXd h(geom::sh_count(degree), pts.cols());
  for (Eigen::Index j = 0; j < pts.cols(); ++j) h.col(j) = geom::real_sh<double>(Eigen::Vector3d(pts.col(j)), degree);
  return h;
}

int sh_degree_of(int index) { return static_cast<int>(std::sqrt(static_cast<double>(index))); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::Matrix<double, 3, 2> tangent_basis(const Eigen::Vector3d& k) {
  const Eigen::Vector3d a = std::abs(k.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d e1 = (a - a.dot(k) * k).normalized();
  Eigen::Matrix<double, 3, 2> e;
  e.col(0) = e1;
  e.col(1) = k.cross(e1);
  return e;
}

/// Pixel coordinates of a camera-frame point and their derivative.
struct Projection {
  Eigen::Vector2d y;
  Eigen::Matrix<double, 2, 3> jacobian;
};

Projection project_with_jacobian(const geom::CameraIntrinsics& cam, const Eigen::Vector3d& x,
                                 const Eigen::Vector2d& origin) {
  Projection p;
  if (!cam.is_perspective()) {
    p.y = x.head<2>() + origin;
    p.jacobian << 1, 0, 0, 0, 1, 0;
    return p;
  }
  const Eigen::Vector3d kx = cam.K * x;
  p.y = kx.head<2>() / x.z() + origin;
  p.jacobian = (cam.K.topRows<2>() - kx.head<2>() / x.z() * Eigen::RowVector3d::UnitZ()) / x.z();
  return p;
}

/// Latitude-longitude triangulation of the unit sphere.
struct SphereMesh {
  Eigen::Matrix3Xd vertices;
  std::vector<Eigen::Vector3i> triangles;
};

const SphereMesh& sphere_mesh() {
  static const SphereMesh mesh = [] {
    constexpr int n_lat = 72, n_lon = 144;
    SphereMesh m;
    m.vertices.resize(3, 2 + (n_lat - 1) * n_lon);
    m.vertices.col(0) << 0, 0, 1;
    m.vertices.col(1) << 0, 0, -1;
    auto vid = [](int ring, int j) { return 2 + (ring - 1) * n_lon + (j % n_lon); };
    for (int i = 1; i < n_lat; ++i) {
      const double th = kPi * i / n_lat;
      for (int j = 0; j < n_lon; ++j) {
        const double ph = 2.0 * kPi * j / n_lon;
        m.vertices.col(vid(i, j)) << std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th);
      }
    }
    for (int j = 0; j < n_lon; ++j) {
      m.triangles.emplace_back(0, vid(1, j), vid(1, j + 1));
      m.triangles.emplace_back(1, vid(n_lat - 1, j + 1), vid(n_lat - 1, j));
      for (int i = 1; i < n_lat - 1; ++i) {
        m.triangles.emplace_back(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1));
        m.triangles.emplace_back(vid(i, j), vid(i + 1, j + 1), vid(i, j + 1));
      }
    }
    return m;
  }();
  return mesh;
}

}  // namespace

// ---------------------------------------------------------------------------
// Spec

void CategorySpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidSpec, "category spec: " + field + " " + why);
  };
  if (D < 1) fail("D", "must be >= 1");
  if (K_kp < 4) fail("K_kp", "must be >= 4");
  if (n_instances < 1) fail("n_instances", "must be >= 1");
  if (views_per_instance < 1) fail("views_per_instance", "must be >= 1");
  if (height < 8) fail("height", "must be >= 8");
  if (width < 8) fail("width", "must be >= 8");
  if (descriptor_dim < 4) fail("descriptor_dim", "must be >= 4");
  if (texture_dim < 0) fail("texture_dim", "must be >= 0");
  if (!(sigma_d >= 0.0) || !std::isfinite(sigma_d)) fail("sigma_d", "must be finite and >= 0");
  if (!(sigma_l >= 0.0) || !std::isfinite(sigma_l)) fail("sigma_l", "must be finite and >= 0");
  if (sh_degree < 1 || sh_degree > 8) fail("sh_degree", "must be in [1, 8]");
  if (!(azimuth_skew > 0.0) || !std::isfinite(azimuth_skew)) fail("azimuth_skew", "must be positive");
  if (!(max_elevation_deg >= 0.0 && max_elevation_deg < 90.0)) fail("max_elevation_deg", "must be in [0, 90)");
}

std::string to_json(const CategorySpec& s) {
  const json j = {{"seed", s.seed},
                  {"D", s.D},
                  {"K_kp", s.K_kp},
                  {"n_instances", s.n_instances},
                  {"views_per_instance", s.views_per_instance},
                  {"height", s.height},
                  {"width", s.width},
                  {"camera", s.camera == geom::CameraKind::Perspective ? "perspective" : "orthographic"},
                  {"descriptor_dim", s.descriptor_dim},
                  {"texture_dim", s.texture_dim},
                  {"sigma_d", s.sigma_d},
                  {"sigma_l", s.sigma_l},
                  {"sh_degree", s.sh_degree},
                  {"azimuth_skew", s.azimuth_skew},
                  {"max_elevation_deg", s.max_elevation_deg}};
  return j.dump();
}

CategorySpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("category spec: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, "category spec: expected a JSON object");
  CategorySpec s;
  static const std::set<std::string> known = {"seed",   "D",          "K_kp",           "n_instances",
                                              "views_per_instance", "height", "width", "camera",
                                              "descriptor_dim", "texture_dim", "sigma_d", "sigma_l",
                                              "sh_degree", "azimuth_skew", "max_elevation_deg"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::InvalidSpec, "category spec: unknown field " + key);
  }
  try {
    s.seed = j.value("seed", s.seed);
    s.D = j.value("D", s.D);
    s.K_kp = j.value("K_kp", s.K_kp);
    s.n_instances = j.value("n_instances", s.n_instances);
    s.views_per_instance = j.value("views_per_instance", s.views_per_instance);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    const std::string cam = j.value("camera", std::string("perspective"));
    if (cam == "perspective") {
      s.camera = geom::CameraKind::Perspective;
    } else if (cam == "orthographic") {
      s.camera = geom::CameraKind::Orthographic;
    } else {
      throw Error(ErrorCode::InvalidSpec, "category spec: camera must be perspective or orthographic");
    }
    s.descriptor_dim = j.value("descriptor_dim", s.descriptor_dim);
    s.texture_dim = j.value("texture_dim", s.texture_dim);
    s.sigma_d = j.value("sigma_d", s.sigma_d);
    s.sigma_l = j.value("sigma_l", s.sigma_l);
    s.sh_degree = j.value("sh_degree", s.sh_degree);
    s.azimuth_skew = j.value("azimuth_skew", s.azimuth_skew);
    s.max_elevation_deg = j.value("max_elevation_deg", s.max_elevation_deg);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("category spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Ground truth

Eigen::MatrixXd GroundTruthCategory::basis_at(const Eigen::Vector3d& kappa) const {
  const Eigen::VectorXd b = basis_flat(kappa);
  return Eigen::Map<const Eigen::MatrixXd>(b.data(), 3, D);
}

Eigen::VectorXd GroundTruthCategory::basis_flat(const Eigen::Vector3d& kappa) const {
  return shape_scale * (basis_coeffs * geom::real_sh<double>(kappa, sh_degree));
}

Eigen::Vector3d GroundTruthCategory::point(const Eigen::Vector3d& kappa, const Eigen::VectorXd& alpha) const {
  return basis_at(kappa) * alpha;
}

Eigen::Matrix3d GroundTruthCategory::point_jacobian(const Eigen::Vector3d& kappa, const Eigen::VectorXd& alpha) const {
  const Eigen::MatrixXd db = basis_coeffs * geom::real_sh_jacobian(kappa, sh_degree);  // (3 D) x 3
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  for (int d = 0; d < D; ++d) j += alpha(d) * db.middleRows(3 * d, 3);
  return shape_scale * j;
}

Eigen::Vector3d GroundTruthCategory::color(const Eigen::Vector3d& kappa, const Eigen::VectorXd& beta) const {
  const Eigen::VectorXd h = geom::real_sh<double>(kappa, sh_degree);
  Eigen::MatrixXd t = texture_coeffs.topRows(3);
  for (Eigen::Index j = 0; j < beta.size(); ++j) t += beta(j) * texture_coeffs.middleRows(3 * (j + 1), 3);
  const Eigen::Vector3d logits = t * h;
  return logits.unaryExpr([](double x) { return sigmoid(x); });
}

Eigen::VectorXd GroundTruthCategory::descriptor(const Eigen::Vector3d& kappa) const {
  Eigen::VectorXd z(scramble_q.cols());
  z.head<3>() = kappa;
  z.tail(scramble_w.rows()) = (scramble_w * kappa + scramble_b).array().tanh().matrix();
  return scramble_q * z;
}

Eigen::VectorXd GroundTruthCategory::instance_descriptor(const Instance& inst, const Eigen::Matrix3d& rotation) const {
  const Eigen::Index d = inst.alpha.size(), t = inst.beta.size();
  Eigen::VectorXd z(d + t + 6);
  z << inst.alpha, inst.beta, rotation.col(0), rotation.col(1);
  return instance_mix * z;
}

GroundTruthCategory make_ground_truth(const CategorySpec& spec) {
  spec.validate();
  std::mt19937_64 rng = stream_rng(spec.seed, Stream::GroundTruth);
  GroundTruthCategory gt;
  gt.D = spec.D;
  gt.sh_degree = spec.sh_degree;
  gt.shape_scale = spec.camera == geom::CameraKind::Perspective ? 1.0 : 0.25 * std::min(spec.height, spec.width);
  const int nsh = geom::sh_count(spec.sh_degree);

  // Mean shape: an ellipsoid elongated along x, expressed in harmonics by
  // least squares (exact, the coordinates are degree-1 harmonics).
  const Eigen::Matrix3Xd fit_pts = fibonacci_sphere(4 * nsh + 64);
  const Eigen::MatrixXd h = sh_matrix(fit_pts, spec.sh_degree);
  const Eigen::Vector3d radii(1.3, 0.7, 0.8);
  const Eigen::Matrix3Xd target = radii.asDiagonal() * fit_pts;
  const Eigen::MatrixXd ellipsoid =
      h.transpose().colPivHouseholderQr().solve(target.transpose()).transpose();  // 3 x nsh

  std::normal_distribution<double> n01(0.0, 1.0);
  gt.basis_coeffs = Eigen::MatrixXd::Zero(3 * spec.D, nsh);
  for (int d = 0; d < spec.D; ++d) {
    for (int c = 1; c < nsh; ++c) {
      const int l = sh_degree_of(c);
      const double amp = d == 0 ? (l >= 2 ? 0.06 / l : 0.0) : 0.22 / l;
      for (int i = 0; i < 3; ++i) gt.basis_coeffs(3 * d + i, c) = amp * n01(rng);
    }
  }
  gt.basis_coeffs.topRows(3) += ellipsoid;

  gt.texture_coeffs = Eigen::MatrixXd::Zero(3 * (1 + spec.texture_dim), nsh);
  for (int blk = 0; blk <= spec.texture_dim; ++blk) {
    for (int c = 0; c < nsh; ++c) {
      const int l = sh_degree_of(c);
      const double amp = (blk == 0 ? 2.0 : 1.0) / (l + 1);
      for (int i = 0; i < 3; ++i) gt.texture_coeffs(3 * blk + i, c) = amp * n01(rng);
    }
  }

  // Keypoint anchors: a Fibonacci set under a random rotation.
  Eigen::Vector4d qv(n01(rng), n01(rng), n01(rng), n01(rng));
  const Eigen::Quaterniond q(qv(0), qv(1), qv(2), qv(3));
  gt.anchors = q.normalized().toRotationMatrix() * fibonacci_sphere(spec.K_kp);

  const int f = spec.descriptor_dim;
  gt.scramble_q = random_orthogonal(rng, f);
  gt.scramble_w = gaussian(rng, f - 3, 3, 1.0);
  gt.scramble_b = gaussian(rng, f - 3, 1, 0.5);
  gt.instance_mix = random_orthogonal(rng, spec.instance_dim());

  gt.instances.resize(static_cast<std::size_t>(spec.n_instances));
  for (Instance& inst : gt.instances) {
    inst.alpha = gaussian(rng, spec.D, 1, 1.0);
    inst.alpha(0) = 1.0 + 0.1 * inst.alpha(0);
    inst.beta = gaussian(rng, spec.texture_dim, 1, 1.0);
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Rendering

geom::CameraIntrinsics make_camera(const CategorySpec& spec) {
  if (spec.camera == geom::CameraKind::Orthographic) return geom::CameraIntrinsics::orthographic();
  return geom::CameraIntrinsics::perspective(1.5 * spec.width, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1));
}

Eigen::Vector2d make_origin(const CategorySpec& spec) {
  if (spec.camera == geom::CameraKind::Perspective) return Eigen::Vector2d::Zero();
  return Eigen::Vector2d(0.5 * (spec.width - 1), 0.5 * (spec.height - 1));
}

namespace {

struct NewtonResult {
  bool ok = false;
  Eigen::Vector3d kappa;
  Eigen::Vector3d camera_point;
};

// Solves project(R X(kappa) + t) = pixel on the sphere, starting at kappa0.
NewtonResult refine_kappa(const GroundTruthCategory& gt, const Eigen::VectorXd& alpha, const geom::RigidPose& pose,
                          const geom::CameraIntrinsics& cam, const Eigen::Vector2d& origin,
                          const Eigen::Vector2d& pixel, Eigen::Vector3d kappa) {
  NewtonResult res;
  const Eigen::Vector3d start = kappa;
  for (int it = 0; it < 30; ++it) {
    const Eigen::Vector3d xc = pose.rotation * gt.point(kappa, alpha) + pose.translation;
    if (cam.is_perspective() && !(xc.z() > geom::kMinDepth)) return res;
    const Projection p = project_with_jacobian(cam, xc, origin);
    const Eigen::Vector2d f = p.y - pixel;
    if (f.norm() < 1e-12) {
      res.ok = std::acos(std::clamp(start.dot(kappa), -1.0, 1.0)) < 0.15;
      res.kappa = kappa;
      res.camera_point = xc;
      return res;
    }
    const Eigen::Matrix<double, 3, 2> e = tangent_basis(kappa);
    const Eigen::Matrix2d j = p.jacobian * pose.rotation * gt.point_jacobian(kappa, alpha) * e;
    if (!(std::abs(j.determinant()) > 1e-12)) return res;
    Eigen::Vector2d step = -j.partialPivLu().solve(f);
    if (step.norm() > 0.05) step *= 0.05 / step.norm();
    kappa = (kappa + e * step).normalized();
  }
  return res;
}

}  // namespace

Frame render_frame(const CategorySpec& spec, const GroundTruthCategory& gt, int instance,
                   const geom::RigidPose& pose, std::mt19937_64& rng) {
  const Instance& inst = gt.instances.at(static_cast<std::size_t>(instance));
  Frame fr;
  fr.instance = instance;
  fr.height = spec.height;
  fr.width = spec.width;
  fr.camera = make_camera(spec);
  fr.origin = make_origin(spec);
  fr.pose = pose;
  fr.alpha = inst.alpha;
  fr.beta = inst.beta;
  const int h = spec.height, w = spec.width;
  const Eigen::Index npx = static_cast<Eigen::Index>(h) * w;
  const int f = spec.descriptor_dim;

  // Z-buffer rasterization of the triangulated surface.
  const SphereMesh& mesh = sphere_mesh();
  const Eigen::Index nv = mesh.vertices.cols();
  Eigen::Matrix3Xd cam_pts(3, nv);
  Eigen::Matrix2Xd screen(2, nv);
  std::vector<std::uint8_t> front(static_cast<std::size_t>(nv), 1);
  for (Eigen::Index v = 0; v < nv; ++v) {
    cam_pts.col(v) = pose.rotation * gt.point(mesh.vertices.col(v), inst.alpha) + pose.translation;
    if (fr.camera.is_perspective() && !(cam_pts(2, v) > geom::kMinDepth)) {
      front[static_cast<std::size_t>(v)] = 0;
      continue;
    }
    screen.col(v) = project_with_jacobian(fr.camera, cam_pts.col(v), fr.origin).y;
  }
  std::vector<double> zbuf(static_cast<std::size_t>(npx), std::numeric_limits<double>::infinity());
  std::vector<Eigen::Vector3d> kappa0(static_cast<std::size_t>(npx), Eigen::Vector3d::Zero());
  for (const Eigen::Vector3i& tri : mesh.triangles) {
    if (!front[tri(0)] || !front[tri(1)] || !front[tri(2)]) continue;
    const Eigen::Vector2d a = screen.col(tri(0)), b = screen.col(tri(1)), c = screen.col(tri(2));
    const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(area) < 1e-14) continue;
    const int c0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
    const int c1 = std::min(w - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
    const int r0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
    const int r1 = std::min(h - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
    for (int r = r0; r <= r1; ++r) {
      for (int col = c0; col <= c1; ++col) {
        const Eigen::Vector2d p(col, r);
        const double l0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
        const double l1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
        const double l2 = 1.0 - l0 - l1;
        if (l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9) continue;
        const double z = l0 * cam_pts(2, tri(0)) + l1 * cam_pts(2, tri(1)) + l2 * cam_pts(2, tri(2));
        const std::size_t idx = static_cast<std::size_t>(fr.pixel_index(r, col));
        if (z < zbuf[idx]) {
          zbuf[idx] = z;
          kappa0[idx] = (l0 * mesh.vertices.col(tri(0)) + l1 * mesh.vertices.col(tri(1)) +
                         l2 * mesh.vertices.col(tri(2)))
                            .normalized();
        }
      }
    }
  }

  // Exact per-pixel embeddings, then everything derived from them.
  fr.color = Image(h, w, 3, 0.0);
  fr.mask = Mask(h, w);
  fr.depth = Eigen::VectorXd::Zero(npx);
  fr.kappa = Eigen::Matrix3Xd::Zero(3, npx);
  fr.descriptors = Eigen::MatrixXd::Zero(f, npx);
  const double depth_tol = 0.1 * gt.shape_scale;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Eigen::Index idx = fr.pixel_index(r, c);
      if (!std::isfinite(zbuf[static_cast<std::size_t>(idx)])) continue;
      const NewtonResult nr = refine_kappa(gt, inst.alpha, pose, fr.camera, fr.origin, Eigen::Vector2d(c, r),
                                           kappa0[static_cast<std::size_t>(idx)]);
      if (!nr.ok || std::abs(nr.camera_point.z() - zbuf[static_cast<std::size_t>(idx)]) > depth_tol) continue;
      fr.mask.set(r, c, true);
      fr.kappa.col(idx) = nr.kappa;
      fr.depth(idx) = nr.camera_point.z();
      fr.color.set_pixel(r, c, gt.color(nr.kappa, inst.beta));
    }
  }
  // Noise is drawn in a fixed pixel order after rendering.
  for (Eigen::Index idx = 0; idx < npx; ++idx) {
    if (!fr.mask.data[static_cast<std::size_t>(idx)]) continue;
    fr.descriptors.col(idx) = gt.descriptor(fr.kappa.col(idx));
    if (spec.sigma_d > 0.0) {
      for (int i = 0; i < f; ++i) fr.descriptors(i, idx) += spec.sigma_d * n01(rng);
    }
  }

  fr.instance_descriptor = gt.instance_descriptor(inst, pose.rotation);
  if (spec.sigma_d > 0.0) {
    for (Eigen::Index i = 0; i < fr.instance_descriptor.size(); ++i) fr.instance_descriptor(i) += spec.sigma_d * n01(rng);
  }

  // Keypoints: visible when inside the image, front-facing and unoccluded.
  const int k = spec.K_kp;
  fr.keypoints.resize(2, k);
  fr.keypoint_visible.assign(static_cast<std::size_t>(k), 0);
  fr.keypoint_descriptors.resize(f, k);
  for (int j = 0; j < k; ++j) {
    const Eigen::Vector3d kap = gt.anchors.col(j);
    const Eigen::Vector3d xc = pose.rotation * (gt.basis_at(kap) * inst.alpha) + pose.translation;
    fr.keypoint_descriptors.col(j) = gt.descriptor(kap);
    if (spec.sigma_d > 0.0) {
      for (int i = 0; i < f; ++i) fr.keypoint_descriptors(i, j) += spec.sigma_d * n01(rng);
    }
    if (fr.camera.is_perspective() && !(xc.z() > geom::kMinDepth)) {
      fr.keypoints.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const Eigen::Vector2d y = geom::project<double>(fr.camera, xc) + fr.origin;
    fr.keypoints.col(j) = y;
    if (!(y.x() >= 0.0 && y.y() >= 0.0 && y.x() <= w - 1.0 && y.y() <= h - 1.0)) continue;
    const Eigen::Matrix<double, 3, 2> e = tangent_basis(kap);
    const Eigen::Matrix3d jac = pose.rotation * gt.point_jacobian(kap, inst.alpha);
    const Eigen::Vector3d normal = (jac * e.col(0)).cross(jac * e.col(1));
    const Eigen::Vector3d view = fr.camera.is_perspective() ? xc : Eigen::Vector3d::UnitZ();
    if (!(normal.dot(view) < 0.0)) continue;
    const int r = static_cast<int>(std::lround(y.y())), c = static_cast<int>(std::lround(y.x()));
    if (!fr.mask.at(r, c) || fr.depth(fr.pixel_index(r, c)) < xc.z() - depth_tol) continue;
    fr.keypoint_visible[static_cast<std::size_t>(j)] = 1;
  }
  return fr;
}

losses::NrsfmLabels make_labels(const GroundTruthCategory& gt, const Frame& frame, double sigma_l,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  losses::NrsfmLabels lab;
  const Eigen::Index k = gt.anchors.cols();
  lab.basis_star.resize(3 * gt.D, k);
  for (Eigen::Index j = 0; j < k; ++j) lab.basis_star.col(j) = gt.basis_flat(gt.anchors.col(j));
  for (Eigen::Index j = 0; j < k; ++j) {
    if (frame.keypoint_visible[static_cast<std::size_t>(j)]) lab.visible.push_back(static_cast<int>(j));
  }
  lab.alpha_star = frame.alpha;
  lab.rotation_star = frame.pose.rotation;
  if (sigma_l > 0.0) {
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < lab.basis_star.rows(); ++i) lab.basis_star(i, j) += sigma_l * n01(rng);
    }
    for (Eigen::Index i = 0; i < lab.alpha_star.size(); ++i) lab.alpha_star(i) += sigma_l * n01(rng);
    const Eigen::Vector3d axis(n01(rng), n01(rng), n01(rng));
    const double angle = std::abs(sigma_l * n01(rng));
    lab.rotation_star = frame.pose.rotation * geom::axis_angle(axis.normalized(), angle);
  }
  return lab;
}

namespace {

geom::RigidPose draw_pose(const CategorySpec& spec, std::mt19937_64& rng) {
  std::bernoulli_distribution major(spec.azimuth_skew / (1.0 + spec.azimuth_skew));
  std::normal_distribution<double> spread(0.0, 50.0 * kPi / 180.0);
  const double el_max = spec.max_elevation_deg * kPi / 180.0;
  std::uniform_real_distribution<double> elevation(-el_max, el_max);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  double az = (major(rng) ? 0.25 * kPi : 1.25 * kPi) + spread(rng);
  az = std::fmod(az, 2.0 * kPi);
  if (az < 0.0) az += 2.0 * kPi;
  const double el = elevation(rng);
  geom::RigidPose pose;
  pose.rotation = geom::axis_angle(Eigen::Vector3d::UnitX(), el) * geom::axis_angle(Eigen::Vector3d::UnitY(), az);
  if (spec.camera == geom::CameraKind::Perspective) {
    pose.translation = Eigen::Vector3d(0.1 * n01(rng), 0.1 * n01(rng), 5.0 + 0.3 * u(rng));
  }
  return pose;
}

}  // namespace

namespace {

// True when a silhouette pixel lies in the outer two-pixel ring, i.e. the
// object may be cut off by the image border.
bool touches_border(const Mask& m) {
  for (int r = 0; r < m.height; ++r) {
    for (int c = 0; c < m.width; ++c) {
      const bool ring = r < 2 || c < 2 || r >= m.height - 2 || c >= m.width - 2;
      if (ring && m.at(r, c)) return true;
    }
  }
  return false;
}

}  // namespace

Dataset generate_category(const CategorySpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.gt = make_ground_truth(spec);
  std::mt19937_64 pose_rng = stream_rng(spec.seed, Stream::Poses);
  const int n_frames = spec.n_instances * spec.views_per_instance;
  const std::size_t min_mask = 20;
  for (int id = 0; id < n_frames; ++id) {
    const int inst = id / spec.views_per_instance;
    Frame fr;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) throw Error(ErrorCode::InvalidSpec, "category spec: cannot render a usable view");
      const geom::RigidPose pose = draw_pose(spec, pose_rng);
      std::mt19937_64 noise = stream_rng(spec.seed, Stream::FrameNoise, static_cast<std::uint32_t>(id));
      fr = render_frame(spec, ds.gt, inst, pose, noise);
      const auto visible = std::count(fr.keypoint_visible.begin(), fr.keypoint_visible.end(), std::uint8_t{1});
      if (visible >= 3 && fr.mask.count() >= min_mask && !touches_border(fr.mask)) break;
    }
    fr.frame_id = id;
    std::mt19937_64 label_rng = stream_rng(spec.seed, Stream::Labels, static_cast<std::uint32_t>(id));
    ds.labels.push_back(make_labels(ds.gt, fr, spec.sigma_l, label_rng));
    ds.frames.push_back(std::move(fr));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Rebalancing and batching

Eigen::Vector3d upward_axis(const std::vector<Eigen::Matrix3d>& rotations) {
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  int used = 0;
  for (const Eigen::Matrix3d& r : rotations) {
    const Eigen::AngleAxisd aa(r);
    if (!(std::abs(aa.angle()) > 1e-6)) continue;
    Eigen::Vector3d a = aa.axis();
    Eigen::Index big = 0;
    a.cwiseAbs().maxCoeff(&big);
    if (a(big) < 0.0) a = -a;
    scatter += a * a.transpose();
    ++used;
  }
  if (used < 2) throw Error(ErrorCode::DegenerateRotations, "upward_axis: need two rotations with nonzero angle");
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  Eigen::Vector3d up = eig.eigenvectors().col(2).normalized();
  Eigen::Index big = 0;
  up.cwiseAbs().maxCoeff(&big);
  if (up(big) < 0.0) up = -up;
  return up;
}

Azimuth azimuth(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& up) {
  const Eigen::Quaterniond q(rotation);
  const double along = q.vec().dot(up.normalized());
  if (std::abs(q.w()) < 1e-9 && std::abs(along) < 1e-9) return {0.0, true};
  double a = 2.0 * std::atan2(along, q.w());
  a = std::fmod(a, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  if (a >= 2.0 * kPi) a = 0.0;
  return {a, false};
}

std::vector<double> rebalance_weights(const std::vector<double>& azimuths, int bins) {
  if (bins < 1) throw Error(ErrorCode::InvalidSpec, "rebalance_weights: bins must be positive");
  auto bin_of = [bins](double a) {
    double x = std::fmod(a, 2.0 * kPi);
    if (x < 0.0) x += 2.0 * kPi;
    return std::min(bins - 1, static_cast<int>(x / (2.0 * kPi) * bins));
  };
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double a : azimuths) ++counts[static_cast<std::size_t>(bin_of(a))];
  std::vector<double> w;
  w.reserve(azimuths.size());
  const double n = static_cast<double>(azimuths.size());
  for (double a : azimuths) w.push_back(n / counts[static_cast<std::size_t>(bin_of(a))]);
  return w;
}

BatchSampler::BatchSampler(std::vector<int> instance_of_frame, std::vector<double> weights, int batch_size,
                           bool distinct_instances)
    : instance_(std::move(instance_of_frame)), weights_(std::move(weights)), batch_size_(batch_size),
      distinct_(distinct_instances) {
  if (instance_.size() != weights_.size()) throw Error(ErrorCode::DimMismatch, "batch sampler: size mismatch");
  if (batch_size_ < 1) throw Error(ErrorCode::InvalidSpec, "batch sampler: batch_size must be positive");
  std::set<int> instances;
  int eligible = 0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] >= 0.0) || !std::isfinite(weights_[i])) {
      throw Error(ErrorCode::InvalidSpec, "batch sampler: weights must be finite and nonnegative");
    }
    if (weights_[i] > 0.0) {
      ++eligible;
      instances.insert(instance_[i]);
    }
  }
  const int available = distinct_ ? static_cast<int>(instances.size()) : eligible;
  if (batch_size_ > available) {
    throw Error(ErrorCode::InfeasibleConstraint,
                "batch sampler: batch of " + std::to_string(batch_size_) + " needs more " +
                    (distinct_ ? "distinct instances" : "frames") + " than the " + std::to_string(available) +
                    " available");
  }
}

std::vector<int> BatchSampler::next(std::mt19937_64& rng) const {
  std::vector<double> w = weights_;
  std::vector<int> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(batch.size()) < batch_size_) {
    double total = 0.0;
    for (double x : w) total += x;
    double pick = u(rng) * total;
    std::size_t chosen = w.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      chosen = i;
      if (pick < w[i]) break;
      pick -= w[i];
    }
    batch.push_back(static_cast<int>(chosen));
    w[chosen] = 0.0;
    if (distinct_) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (instance_[i] == instance_[chosen]) w[i] = 0.0;
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Dataset IO

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error(ErrorCode::IoError, "dataset: bad matrix");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from(const json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

std::string frame_file(int id) {
  std::ostringstream os;
  os << "frames/frame_" << std::setw(5) << std::setfill('0') << id << ".bin";
  return os.str();
}

void write_block(std::ostream& os, const Eigen::MatrixXd& m) {
  nn::write_doubles(os, m.data(), static_cast<std::size_t>(m.size()));
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  os << text;
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + p.string());
}

json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, "malformed " + p.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "frames", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + (root / "frames").string() + ": " + ec.message());

  const GroundTruthCategory& gt = ds.gt;
  json instances = json::array();
  for (const Instance& inst : gt.instances) {
    instances.push_back({{"alpha", vector_json(inst.alpha)}, {"beta", vector_json(inst.beta)}});
  }
  json frames = json::array();
  for (const Frame& fr : ds.frames) {
    frames.push_back({{"id", fr.frame_id}, {"instance", fr.instance}, {"file", frame_file(fr.frame_id)}});
  }
  const json category = {
      {"format", "c3dm-dataset"},
      {"version", 1},
      {"spec", json::parse(to_json(ds.spec))},
      {"ground_truth",
       {{"D", gt.D},
        {"sh_degree", gt.sh_degree},
        {"shape_scale", gt.shape_scale},
        {"basis_coeffs", matrix_json(gt.basis_coeffs)},
        {"texture_coeffs", matrix_json(gt.texture_coeffs)},
        {"anchors", matrix_json(gt.anchors)},
        {"scramble_q", matrix_json(gt.scramble_q)},
        {"scramble_w", matrix_json(gt.scramble_w)},
        {"scramble_b", vector_json(gt.scramble_b)},
        {"instance_mix", matrix_json(gt.instance_mix)},
        {"instances", instances}}},
      {"frames", frames}};
  write_text(root / "category.json", category.dump(1) + "\n");

  json labels = json::array();
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const losses::NrsfmLabels& l = ds.labels[i];
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = l.rotation_star;
    labels.push_back({{"frame", ds.frames[i].frame_id},
                      {"basis_star", matrix_json(l.basis_star)},
                      {"visible", l.visible},
                      {"alpha_star", vector_json(l.alpha_star)},
                      {"rotation_star", std::vector<double>(r.data(), r.data() + 9)}});
  }
  write_text(root / "labels.json", json({{"version", 1}, {"labels", labels}}).dump(1) + "\n");

  std::ostringstream kp;
  kp << "frame,keypoint,u,v,visible\n" << std::setprecision(17);
  for (const Frame& fr : ds.frames) {
    for (Eigen::Index j = 0; j < fr.keypoints.cols(); ++j) {
      kp << fr.frame_id << ',' << j << ',' << fr.keypoints(0, j) << ',' << fr.keypoints(1, j) << ','
         << int(fr.keypoint_visible[static_cast<std::size_t>(j)]) << '\n';
    }
  }
  write_text(root / "keypoints.csv", kp.str());

  for (const Frame& fr : ds.frames) {
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = fr.pose.rotation;
    const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> k = fr.camera.K;
    const json meta = {{"frame_id", fr.frame_id},
                       {"instance", fr.instance},
                       {"height", fr.height},
                       {"width", fr.width},
                       {"camera", fr.camera.is_perspective() ? "perspective" : "orthographic"},
                       {"K", std::vector<double>(k.data(), k.data() + 9)},
                       {"origin", {fr.origin.x(), fr.origin.y()}},
                       {"rotation", std::vector<double>(r.data(), r.data() + 9)},
                       {"translation", vector_json(fr.pose.translation)},
                       {"alpha", vector_json(fr.alpha)},
                       {"beta", vector_json(fr.beta)},
                       {"descriptor_dim", fr.descriptors.rows()},
                       {"instance_dim", fr.instance_descriptor.size()},
                       {"n_keypoints", fr.keypoints.cols()}};
    const fs::path p = root / frame_file(fr.frame_id);
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    os << "c3dm-frame 1\n" << meta.dump() << '\n';
    os.write(reinterpret_cast<const char*>(fr.mask.data.data()), static_cast<std::streamsize>(fr.mask.data.size()));
    nn::write_doubles(os, fr.color.data.data(), fr.color.data.size());
    write_block(os, fr.depth);
    write_block(os, fr.kappa);
    write_block(os, fr.descriptors);
    write_block(os, fr.instance_descriptor);
    write_block(os, fr.keypoint_descriptors);
    if (!os) throw Error(ErrorCode::IoError, "write failed: " + p.string());
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw Error(ErrorCode::IoError, "dataset directory not found: " + dir);
  Dataset ds;
  const json cat = read_json(root / "category.json");
  try {
    if (cat.at("format") != "c3dm-dataset" || cat.at("version") != 1) {
      throw Error(ErrorCode::IoError, "category.json: unsupported format");
    }
    ds.spec = spec_from_json(cat.at("spec").dump());
    const json& g = cat.at("ground_truth");
    GroundTruthCategory& gt = ds.gt;
    gt.D = g.at("D").get<int>();
    gt.sh_degree = g.at("sh_degree").get<int>();
    gt.shape_scale = g.at("shape_scale").get<double>();
    gt.basis_coeffs = matrix_from(g.at("basis_coeffs"));
    gt.texture_coeffs = matrix_from(g.at("texture_coeffs"));
    gt.anchors = matrix_from(g.at("anchors"));
    gt.scramble_q = matrix_from(g.at("scramble_q"));
    gt.scramble_w = matrix_from(g.at("scramble_w"));
    gt.scramble_b = vector_from(g.at("scramble_b"));
    gt.instance_mix = matrix_from(g.at("instance_mix"));
    for (const json& inst : g.at("instances")) {
      gt.instances.push_back({vector_from(inst.at("alpha")), vector_from(inst.at("beta"))});
    }

    for (const json& entry : cat.at("frames")) {
      const fs::path p = root / entry.at("file").get<std::string>();
      std::ifstream is(p, std::ios::binary);
      if (!is) throw Error(ErrorCode::IoError, "cannot read " + p.string());
      std::string magic, meta_line;
      if (!std::getline(is, magic) || magic != "c3dm-frame 1" || !std::getline(is, meta_line)) {
        throw Error(ErrorCode::IoError, "bad frame header in " + p.string());
      }
      const json m = json::parse(meta_line);
      Frame fr;
      fr.frame_id = m.at("frame_id").get<int>();
      fr.instance = m.at("instance").get<int>();
      fr.height = m.at("height").get<int>();
      fr.width = m.at("width").get<int>();
      const auto kv = m.at("K").get<std::vector<double>>();
      const Eigen::Matrix3d k = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(kv.data());
      fr.camera = m.at("camera") == "perspective" ? geom::CameraIntrinsics::perspective(k)
                                                  : geom::CameraIntrinsics::orthographic();
      fr.origin = Eigen::Vector2d(m.at("origin")[0].get<double>(), m.at("origin")[1].get<double>());
      const auto rv = m.at("rotation").get<std::vector<double>>();
      fr.pose.rotation = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(rv.data());
      fr.pose.translation = vector_from(m.at("translation"));
      fr.alpha = vector_from(m.at("alpha"));
      fr.beta = vector_from(m.at("beta"));
      const auto f = m.at("descriptor_dim").get<Eigen::Index>();
      const auto g_dim = m.at("instance_dim").get<Eigen::Index>();
      const auto nk = m.at("n_keypoints").get<Eigen::Index>();
      const Eigen::Index npx = static_cast<Eigen::Index>(fr.height) * fr.width;

      fr.mask = Mask(fr.height, fr.width);
      is.read(reinterpret_cast<char*>(fr.mask.data.data()), static_cast<std::streamsize>(fr.mask.data.size()));
      if (!is) throw Error(ErrorCode::IoError, "truncated frame " + p.string());
      fr.color = Image(fr.height, fr.width, 3);
      nn::read_doubles(is, fr.color.data.data(), fr.color.data.size());
      fr.depth.resize(npx);
      nn::read_doubles(is, fr.depth.data(), static_cast<std::size_t>(npx));
      fr.kappa.resize(3, npx);
      nn::read_doubles(is, fr.kappa.data(), static_cast<std::size_t>(3 * npx));
      fr.descriptors.resize(f, npx);
      nn::read_doubles(is, fr.descriptors.data(), static_cast<std::size_t>(f * npx));
      fr.instance_descriptor.resize(g_dim);
      nn::read_doubles(is, fr.instance_descriptor.data(), static_cast<std::size_t>(g_dim));
      fr.keypoint_descriptors.resize(f, nk);
      nn::read_doubles(is, fr.keypoint_descriptors.data(), static_cast<std::size_t>(f * nk));
      fr.keypoints = Eigen::Matrix2Xd::Constant(2, nk, std::numeric_limits<double>::quiet_NaN());
      fr.keypoint_visible.assign(static_cast<std::size_t>(nk), 0);
      ds.frames.push_back(std::move(fr));
    }

    std::ifstream kp(root / "keypoints.csv");
    if (!kp) throw Error(ErrorCode::IoError, "cannot read keypoints.csv");
    std::string line;
    std::getline(kp, line);
    while (std::getline(kp, line)) {
      if (line.empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      std::string u, v;
      int frame = 0, j = 0, vis = 0;
      ls >> frame >> j >> u >> v >> vis;
      if (!ls || frame < 0 || frame >= static_cast<int>(ds.frames.size())) {
        throw Error(ErrorCode::IoError, "keypoints.csv: bad row: " + line);
      }
      Frame& fr = ds.frames[static_cast<std::size_t>(frame)];
      if (j < 0 || j >= fr.keypoints.cols()) throw Error(ErrorCode::IoError, "keypoints.csv: bad keypoint index");
      fr.keypoints(0, j) = std::strtod(u.c_str(), nullptr);
      fr.keypoints(1, j) = std::strtod(v.c_str(), nullptr);
      fr.keypoint_visible[static_cast<std::size_t>(j)] = vis ? 1 : 0;
    }

    const json labels = read_json(root / "labels.json");
    for (const json& l : labels.at("labels")) {
      losses::NrsfmLabels lab;
      lab.basis_star = matrix_from(l.at("basis_star"));
      lab.visible = l.at("visible").get<std::vector<int>>();
      lab.alpha_star = vector_from(l.at("alpha_star"));
      const auto rv = l.at("rotation_star").get<std::vector<double>>();
      lab.rotation_star = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(rv.data());
      ds.labels.push_back(std::move(lab));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("malformed dataset: ") + e.what());
  }
  if (ds.labels.size() != ds.frames.size()) throw Error(ErrorCode::IoError, "labels.json: frame count mismatch");
  return ds;
}

}  // namespace c3dm::synth
