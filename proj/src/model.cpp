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
#include "c3dm/model.hpp"

#include "c3dm/error.hpp"
#include "c3dm/sph_harm.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <ostream>

namespace c3dm::model {

namespace {

nn::MlpConfig net_config(const ModelConfig& c, int in, int out) {
  nn::MlpConfig m;
  m.in_dim = in;
  m.hidden_dim = c.hidden_dim;
  m.out_dim = out;
  m.n_res_blocks = c.n_res_blocks;
  m.activation = c.activation;
  return m;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

geom::Vec6<double> identity_6d() {
  geom::Vec6<double> v;
  v << 1, 0, 0, 0, 1, 0;
  return v;
}

}  // namespace

const char* to_string(PredictorMode m) noexcept {
  return m == PredictorMode::Amortized ? "amortized" : "direct_latent";
}

PredictorMode predictor_mode_from_string(const std::string& s) {
  if (s == "amortized") return PredictorMode::Amortized;
  if (s == "direct_latent") return PredictorMode::DirectLatent;
  throw Error(ErrorCode::InvalidSpec, "unknown predictor mode '" + s + "'");
}

const char* to_string(BasisKind k) noexcept {
  return k == BasisKind::Network ? "network" : "spherical_harmonic";
}

BasisKind basis_kind_from_string(const std::string& s) {
  if (s == "network") return BasisKind::Network;
  if (s == "spherical_harmonic") return BasisKind::SphericalHarmonic;
  throw Error(ErrorCode::InvalidSpec, "unknown basis kind '" + s + "'");
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw Error(ErrorCode::InvalidSpec, std::string("model config: invalid ") + field);
  };
  need(descriptor_dim >= 1, "descriptor_dim");
  need(instance_dim >= 1, "instance_dim");
  need(shape_dim >= 1, "shape_dim");
  need(texture_dim >= 1, "texture_dim");
  need(hidden_dim >= 1, "hidden_dim");
  need(n_res_blocks >= 0, "n_res_blocks");
  need(sh_degree >= 0, "sh_degree");
  need(n_frames >= 0, "n_frames");
  need(mode != PredictorMode::DirectLatent || n_frames >= 1, "n_frames (DirectLatent needs latents)");
}

C3dmModel::C3dmModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d3 = 3 * cfg_.shape_dim;
  phi_ = nn::Mlp(net_config(cfg_, cfg_.descriptor_dim, 3));
  basis_net_ = nn::Mlp(net_config(cfg_, 3, d3));
  texture_net_ = nn::Mlp(net_config(cfg_, 3 + cfg_.texture_dim, 3));
  shape_head_ = nn::Mlp(net_config(cfg_, cfg_.instance_dim, cfg_.shape_dim));
  texture_head_ = nn::Mlp(net_config(cfg_, cfg_.instance_dim, cfg_.texture_dim));
  viewpoint_head_ = nn::Mlp(net_config(cfg_, cfg_.instance_dim, 6));
  viewpoint_head_.b_out() = identity_6d();
  sh_coeffs_ = Eigen::MatrixXd::Zero(cfg_.basis_kind == BasisKind::SphericalHarmonic ? d3 : 0,
                                     geom::sh_count(cfg_.sh_degree));
  const int n = cfg_.mode == PredictorMode::DirectLatent ? cfg_.n_frames : 0;
  latent_alpha_ = Eigen::MatrixXd::Zero(cfg_.shape_dim, n);
  latent_beta_ = Eigen::MatrixXd::Zero(cfg_.texture_dim, n);
  latent_rotation_ = identity_6d().replicate(1, n);
}

C3dmModel C3dmModel::initialized(const ModelConfig& cfg, std::mt19937_64& rng) {
  C3dmModel m(cfg);
  const int d3 = 3 * cfg.shape_dim;
  m.phi_ = nn::Mlp::initialized(net_config(cfg, cfg.descriptor_dim, 3), rng, 1.0);
  m.basis_net_ = nn::Mlp::initialized(net_config(cfg, 3, d3), rng, cfg.basis_init_scale);
  m.texture_net_ = nn::Mlp::initialized(net_config(cfg, 3 + cfg.texture_dim, 3), rng, 1.0);
  m.shape_head_ = nn::Mlp::initialized(net_config(cfg, cfg.instance_dim, cfg.shape_dim), rng, 1.0);
  m.texture_head_ = nn::Mlp::initialized(net_config(cfg, cfg.instance_dim, cfg.texture_dim), rng, 1.0);
  m.viewpoint_head_ = nn::Mlp::initialized(net_config(cfg, cfg.instance_dim, 6), rng, 0.1);
  m.viewpoint_head_.b_out() = identity_6d();
  if (cfg.basis_kind == BasisKind::SphericalHarmonic) {
    std::normal_distribution<double> n(0.0, cfg.basis_init_scale);
    for (Eigen::Index i = 0; i < m.sh_coeffs_.size(); ++i) m.sh_coeffs_(i) = n(rng);
  }
  return m;
}

void C3dmModel::check_frame(int frame_index) const {
  if (frame_index < 0 || frame_index >= latent_alpha_.cols()) {
    throw Error(ErrorCode::DimMismatch, "model: no latents for frame " + std::to_string(frame_index));
  }
}

Eigen::Vector3d C3dmModel::embed(const Eigen::VectorXd& descriptor) const {
  return embed_batch(descriptor);
}

Eigen::Matrix3Xd C3dmModel::embed_batch(const Eigen::MatrixXd& descriptors) const {
  return nn::normalize_columns(phi_.forward(descriptors));
}

Eigen::MatrixXd C3dmModel::basis_at(const Eigen::Vector3d& kappa) const {
  const Eigen::VectorXd b = basis_batch(kappa);
  return Eigen::Map<const Eigen::MatrixXd>(b.data(), 3, cfg_.shape_dim);
}

Eigen::MatrixXd C3dmModel::basis_batch(const Eigen::Matrix3Xd& kappa) const {
  if (cfg_.basis_kind == BasisKind::Network) return basis_net_.forward(kappa);
  Eigen::MatrixXd h(geom::sh_count(cfg_.sh_degree), kappa.cols());
  for (Eigen::Index j = 0; j < kappa.cols(); ++j) {
    h.col(j) = geom::real_sh<double>(Eigen::Vector3d(kappa.col(j)), cfg_.sh_degree);
  }
  return sh_coeffs_ * h;
}

Eigen::Vector3d C3dmModel::texture_at(const Eigen::Vector3d& kappa, const Eigen::VectorXd& beta) const {
  return texture_batch(kappa, beta);
}

Eigen::Matrix3Xd C3dmModel::texture_batch(const Eigen::Matrix3Xd& kappa, const Eigen::VectorXd& beta) const {
  return texture_forward(kappa, beta).colors;
}

FramePrediction C3dmModel::predict_frame(int frame_index, const Eigen::VectorXd& instance_descriptor,
                                         const Eigen::MatrixXd& pixel_descriptors) const {
  const HeadPass h = heads_forward(frame_index, instance_descriptor);
  FramePrediction p;
  p.alpha = h.alpha;
  p.beta = h.beta;
  p.rotation_6d = h.rotation_6d;
  p.rotation = geom::rotation_from_6d<double>(h.rotation_6d);
  if (pixel_descriptors.cols() > 0) p.kappa = embed_batch(pixel_descriptors);
  return p;
}

Eigen::Matrix3Xd C3dmModel::surface_sample(const Eigen::Matrix3Xd& kappa_set, const Eigen::VectorXd& alpha) const {
  if (kappa_set.cols() == 0) throw Error(ErrorCode::DegenerateInput, "surface_sample: empty kappa set");
  if (alpha.size() != cfg_.shape_dim) throw Error(ErrorCode::DimMismatch, "surface_sample: alpha dimension");
  const Eigen::MatrixXd b = basis_batch(kappa_set);
  Eigen::Matrix3Xd pts = Eigen::Matrix3Xd::Zero(3, kappa_set.cols());
  for (int j = 0; j < cfg_.shape_dim; ++j) pts += b.middleRows(3 * j, 3) * alpha(j);
  return pts;
}

ParamLayout C3dmModel::layout() const {
  ParamLayout l;
  Eigen::Index off = 0;
  l.phi = off;
  off += phi_.param_count();
  l.basis = off;
  off += cfg_.basis_kind == BasisKind::Network ? basis_net_.param_count() : sh_coeffs_.size();
  l.texture = off;
  off += texture_net_.param_count();
  l.shape_head = off;
  off += shape_head_.param_count();
  l.texture_head = off;
  off += texture_head_.param_count();
  l.viewpoint_head = off;
  off += viewpoint_head_.param_count();
  l.latent_alpha = off;
  off += latent_alpha_.size();
  l.latent_beta = off;
  off += latent_beta_.size();
  l.latent_rotation = off;
  off += latent_rotation_.size();
  l.total = off;
  return l;
}

Eigen::VectorXd C3dmModel::parameters() const {
  const ParamLayout l = layout();
  Eigen::VectorXd p(l.total);
  p.segment(l.phi, phi_.param_count()) = phi_.params();
  if (cfg_.basis_kind == BasisKind::Network) {
    p.segment(l.basis, basis_net_.param_count()) = basis_net_.params();
  } else {
    p.segment(l.basis, sh_coeffs_.size()) = Eigen::Map<const Eigen::VectorXd>(sh_coeffs_.data(), sh_coeffs_.size());
  }
  p.segment(l.texture, texture_net_.param_count()) = texture_net_.params();
  p.segment(l.shape_head, shape_head_.param_count()) = shape_head_.params();
  p.segment(l.texture_head, texture_head_.param_count()) = texture_head_.params();
  p.segment(l.viewpoint_head, viewpoint_head_.param_count()) = viewpoint_head_.params();
  p.segment(l.latent_alpha, latent_alpha_.size()) =
      Eigen::Map<const Eigen::VectorXd>(latent_alpha_.data(), latent_alpha_.size());
  p.segment(l.latent_beta, latent_beta_.size()) =
      Eigen::Map<const Eigen::VectorXd>(latent_beta_.data(), latent_beta_.size());
  p.segment(l.latent_rotation, latent_rotation_.size()) =
      Eigen::Map<const Eigen::VectorXd>(latent_rotation_.data(), latent_rotation_.size());
  return p;
}

void C3dmModel::set_parameters(const Eigen::VectorXd& p) {
  const ParamLayout l = layout();
  if (p.size() != l.total) throw Error(ErrorCode::DimMismatch, "model: parameter vector has the wrong length");
  phi_.params() = p.segment(l.phi, phi_.param_count());
  if (cfg_.basis_kind == BasisKind::Network) {
    basis_net_.params() = p.segment(l.basis, basis_net_.param_count());
  } else {
    Eigen::Map<Eigen::VectorXd>(sh_coeffs_.data(), sh_coeffs_.size()) = p.segment(l.basis, sh_coeffs_.size());
  }
  texture_net_.params() = p.segment(l.texture, texture_net_.param_count());
  shape_head_.params() = p.segment(l.shape_head, shape_head_.param_count());
  texture_head_.params() = p.segment(l.texture_head, texture_head_.param_count());
  viewpoint_head_.params() = p.segment(l.viewpoint_head, viewpoint_head_.param_count());
  Eigen::Map<Eigen::VectorXd>(latent_alpha_.data(), latent_alpha_.size()) =
      p.segment(l.latent_alpha, latent_alpha_.size());
  Eigen::Map<Eigen::VectorXd>(latent_beta_.data(), latent_beta_.size()) = p.segment(l.latent_beta, latent_beta_.size());
  Eigen::Map<Eigen::VectorXd>(latent_rotation_.data(), latent_rotation_.size()) =
      p.segment(l.latent_rotation, latent_rotation_.size());
}

Eigen::VectorXd C3dmModel::learning_rate_scales(double latent_multiplier) const {
  const ParamLayout l = layout();
  Eigen::VectorXd s = Eigen::VectorXd::Ones(l.total);
  s.segment(l.latent_alpha, l.total - l.latent_alpha).setConstant(latent_multiplier);
  return s;
}

C3dmModel::EmbedPass C3dmModel::embed_forward(const Eigen::MatrixXd& descriptors) const {
  EmbedPass p;
  p.raw = phi_.forward(descriptors, &p.cache);
  p.kappa = nn::normalize_columns(p.raw);
  return p;
}

void C3dmModel::embed_backward(const EmbedPass& pass, const Eigen::Matrix3Xd& d_kappa,
                               Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::MatrixXd d_raw = nn::normalize_columns_backward(pass.raw, d_kappa);
  (void)phi_.backward(pass.cache, d_raw, grad.segment(layout().phi, phi_.param_count()));
}

C3dmModel::BasisPass C3dmModel::basis_forward(const Eigen::Matrix3Xd& kappa) const {
  BasisPass p;
  p.kappa = kappa;
  if (cfg_.basis_kind == BasisKind::Network) {
    p.basis = basis_net_.forward(kappa, &p.cache);
  } else {
    p.harmonics.resize(geom::sh_count(cfg_.sh_degree), kappa.cols());
    for (Eigen::Index j = 0; j < kappa.cols(); ++j) {
      p.harmonics.col(j) = geom::real_sh<double>(Eigen::Vector3d(kappa.col(j)), cfg_.sh_degree);
    }
    p.basis = sh_coeffs_ * p.harmonics;
  }
  return p;
}

Eigen::Matrix3Xd C3dmModel::basis_backward(const BasisPass& pass, const Eigen::MatrixXd& d_basis,
                                           Eigen::Ref<Eigen::VectorXd> grad) const {
  const ParamLayout l = layout();
  if (cfg_.basis_kind == BasisKind::Network) {
    return basis_net_.backward(pass.cache, d_basis, grad.segment(l.basis, basis_net_.param_count()));
  }
  Eigen::Map<Eigen::MatrixXd>(grad.data() + l.basis, sh_coeffs_.rows(), sh_coeffs_.cols()) +=
      d_basis * pass.harmonics.transpose();
  const Eigen::MatrixXd d_h = sh_coeffs_.transpose() * d_basis;
  Eigen::Matrix3Xd d_kappa(3, pass.kappa.cols());
  for (Eigen::Index j = 0; j < pass.kappa.cols(); ++j) {
    d_kappa.col(j) = geom::real_sh_jacobian(pass.kappa.col(j), cfg_.sh_degree).transpose() * d_h.col(j);
  }
  return d_kappa;
}

C3dmModel::TexturePass C3dmModel::texture_forward(const Eigen::Matrix3Xd& kappa, const Eigen::VectorXd& beta) const {
  if (beta.size() != cfg_.texture_dim) throw Error(ErrorCode::DimMismatch, "texture: beta dimension");
  Eigen::MatrixXd in(3 + cfg_.texture_dim, kappa.cols());
  in.topRows(3) = kappa;
  in.bottomRows(cfg_.texture_dim) = beta.replicate(1, kappa.cols());
  TexturePass p;
  p.colors = sigmoid(texture_net_.forward(in, &p.cache));
  return p;
}

Eigen::VectorXd C3dmModel::texture_backward(const TexturePass& pass, const Eigen::Matrix3Xd& d_colors,
                                            Eigen::Ref<Eigen::VectorXd> grad) const {
  const Eigen::MatrixXd d_logits =
      d_colors.cwiseProduct(pass.colors.cwiseProduct((1.0 - pass.colors.array()).matrix()));
  const Eigen::MatrixXd d_in =
      texture_net_.backward(pass.cache, d_logits, grad.segment(layout().texture, texture_net_.param_count()));
  return d_in.bottomRows(cfg_.texture_dim).rowwise().sum();
}

C3dmModel::HeadPass C3dmModel::heads_forward(int frame_index, const Eigen::VectorXd& instance_descriptor) const {
  HeadPass p;
  p.frame = frame_index;
  if (cfg_.mode == PredictorMode::DirectLatent) {
    check_frame(frame_index);
    p.alpha = latent_alpha_.col(frame_index);
    p.beta = latent_beta_.col(frame_index);
    p.rotation_6d = latent_rotation_.col(frame_index);
    return p;
  }
  p.alpha = shape_head_.forward(instance_descriptor, &p.shape);
  p.beta = texture_head_.forward(instance_descriptor, &p.texture);
  p.rotation_6d = viewpoint_head_.forward(instance_descriptor, &p.viewpoint);
  return p;
}

void C3dmModel::heads_backward(const HeadPass& pass, const Eigen::VectorXd& d_alpha, const Eigen::VectorXd& d_beta,
                               const geom::Vec6<double>& d_rotation_6d, Eigen::Ref<Eigen::VectorXd> grad) const {
  const ParamLayout l = layout();
  if (cfg_.mode == PredictorMode::DirectLatent) {
    const Eigen::Index f = pass.frame;
    grad.segment(l.latent_alpha + f * cfg_.shape_dim, cfg_.shape_dim) += d_alpha;
    grad.segment(l.latent_beta + f * cfg_.texture_dim, cfg_.texture_dim) += d_beta;
    grad.segment(l.latent_rotation + f * 6, 6) += d_rotation_6d;
    return;
  }
  (void)shape_head_.backward(pass.shape, d_alpha, grad.segment(l.shape_head, shape_head_.param_count()));
  (void)texture_head_.backward(pass.texture, d_beta, grad.segment(l.texture_head, texture_head_.param_count()));
  (void)viewpoint_head_.backward(pass.viewpoint, d_rotation_6d,
                                 grad.segment(l.viewpoint_head, viewpoint_head_.param_count()));
}

void write_model(std::ostream& os, const C3dmModel& model) {
  const ModelConfig& c = model.config();
  const nlohmann::json header = {{"descriptor_dim", c.descriptor_dim}, {"instance_dim", c.instance_dim},
                                 {"shape_dim", c.shape_dim},           {"texture_dim", c.texture_dim},
                                 {"hidden_dim", c.hidden_dim},         {"n_res_blocks", c.n_res_blocks},
                                 {"activation", nn::to_string(c.activation)},
                                 {"mode", to_string(c.mode)},          {"basis_kind", to_string(c.basis_kind)},
                                 {"sh_degree", c.sh_degree},           {"n_frames", c.n_frames},
                                 {"basis_init_scale", c.basis_init_scale}};
  os << "c3dm-model 1\n" << header.dump() << '\n';
  const Eigen::VectorXd p = model.parameters();
  os << p.size() << '\n';
  nn::write_doubles(os, p.data(), static_cast<std::size_t>(p.size()));
}

C3dmModel read_model(std::istream& is) {
  std::string magic, json_line, count_line;
  if (!std::getline(is, magic) || magic != "c3dm-model 1") throw Error(ErrorCode::IoError, "model: bad header");
  if (!std::getline(is, json_line) || !std::getline(is, count_line)) {
    throw Error(ErrorCode::IoError, "model: truncated header");
  }
  ModelConfig c;
  try {
    const nlohmann::json h = nlohmann::json::parse(json_line);
    c.descriptor_dim = h.at("descriptor_dim");
    c.instance_dim = h.at("instance_dim");
    c.shape_dim = h.at("shape_dim");
    c.texture_dim = h.at("texture_dim");
    c.hidden_dim = h.at("hidden_dim");
    c.n_res_blocks = h.at("n_res_blocks");
    c.activation = nn::activation_from_string(h.at("activation"));
    c.mode = predictor_mode_from_string(h.at("mode"));
    c.basis_kind = basis_kind_from_string(h.at("basis_kind"));
    c.sh_degree = h.at("sh_degree");
    c.n_frames = h.at("n_frames");
    c.basis_init_scale = h.at("basis_init_scale");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("model: bad config header: ") + e.what());
  }
  C3dmModel m(c);
  Eigen::VectorXd p(m.layout().total);
  if (std::stoll(count_line) != p.size()) throw Error(ErrorCode::IoError, "model: parameter count mismatch");
  nn::read_doubles(is, p.data(), static_cast<std::size_t>(p.size()));
  m.set_parameters(p);
  return m;
}

void save_model(const std::string& path, const C3dmModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_model(os, model);
}

C3dmModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return read_model(is);
}

}  // namespace c3dm::model
