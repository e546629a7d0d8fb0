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

// Canonical map, deformation basis, texture model and the per-frame
// predictors of shape, appearance and viewpoint.

#include "c3dm/geom.hpp"
#include "c3dm/mlp.hpp"

#include <Eigen/Core>

#include <iosfwd>
#include <random>
#include <string>

namespace c3dm::model {

enum class PredictorMode { Amortized, DirectLatent };
/// Network: an MLP on kappa. SphericalHarmonic: a linear map of the real
/// spherical harmonics of kappa up to `sh_degree` (exact for generator bases).
enum class BasisKind { Network, SphericalHarmonic };

[[nodiscard]] const char* to_string(PredictorMode m) noexcept;
[[nodiscard]] PredictorMode predictor_mode_from_string(const std::string& s);
[[nodiscard]] const char* to_string(BasisKind k) noexcept;
[[nodiscard]] BasisKind basis_kind_from_string(const std::string& s);

struct ModelConfig {
  int descriptor_dim = 16;  // F, per-pixel descriptor
  int instance_dim = 16;    // G, per-frame descriptor
  int shape_dim = 10;       // D
  int texture_dim = 128;    // D'
  int hidden_dim = 64;
  int n_res_blocks = 3;
  nn::Activation activation = nn::Activation::Silu;
  PredictorMode mode = PredictorMode::Amortized;
  BasisKind basis_kind = BasisKind::Network;
  int sh_degree = 3;
  /// Number of per-frame latents (DirectLatent mode).
  int n_frames = 0;
  /// Scale of the initial basis output layer; small values start near zero.
  double basis_init_scale = 0.05;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FramePrediction {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  geom::Vec6<double> rotation_6d;
  Eigen::Matrix3d rotation;
  Eigen::Matrix3Xd kappa;
};

/// Offsets of the parameter groups in the flat parameter vector.
struct ParamLayout {
  Eigen::Index phi = 0, basis = 0, texture = 0, shape_head = 0, texture_head = 0, viewpoint_head = 0;
  Eigen::Index latent_alpha = 0, latent_beta = 0, latent_rotation = 0;
  Eigen::Index total = 0;
};

class C3dmModel {
 public:
  C3dmModel() : C3dmModel(ModelConfig{}) {}
  /// Zero parameters, identity-rotation latents and viewpoint bias.
  explicit C3dmModel(const ModelConfig& cfg);
  static C3dmModel initialized(const ModelConfig& cfg, std::mt19937_64& rng);

  [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }

  nn::Mlp& phi() noexcept { return phi_; }
  nn::Mlp& basis_net() noexcept { return basis_net_; }
  nn::Mlp& texture_net() noexcept { return texture_net_; }
  nn::Mlp& shape_head() noexcept { return shape_head_; }
  nn::Mlp& texture_head() noexcept { return texture_head_; }
  nn::Mlp& viewpoint_head() noexcept { return viewpoint_head_; }
  [[nodiscard]] const nn::Mlp& phi() const noexcept { return phi_; }
  [[nodiscard]] const nn::Mlp& basis_net() const noexcept { return basis_net_; }
  [[nodiscard]] const nn::Mlp& texture_net() const noexcept { return texture_net_; }
  /// (3 D) x sh_count coefficients of the spherical-harmonic basis.
  Eigen::MatrixXd& sh_coefficients() noexcept { return sh_coeffs_; }
  [[nodiscard]] const Eigen::MatrixXd& sh_coefficients() const noexcept { return sh_coeffs_; }
  /// DirectLatent variables, one column per frame.
  Eigen::MatrixXd& latent_alpha() noexcept { return latent_alpha_; }
  Eigen::MatrixXd& latent_beta() noexcept { return latent_beta_; }
  Eigen::MatrixXd& latent_rotation() noexcept { return latent_rotation_; }

  /// kappa = phi(d) / |phi(d)|.
  [[nodiscard]] Eigen::Vector3d embed(const Eigen::VectorXd& descriptor) const;
  [[nodiscard]] Eigen::Matrix3Xd embed_batch(const Eigen::MatrixXd& descriptors) const;
  /// B(kappa) as a 3 x D matrix.
  [[nodiscard]] Eigen::MatrixXd basis_at(const Eigen::Vector3d& kappa) const;
  /// Flattened bases, one (3 D)-column per kappa.
  [[nodiscard]] Eigen::MatrixXd basis_batch(const Eigen::Matrix3Xd& kappa) const;
  /// RGB in [0, 1]^3.
  [[nodiscard]] Eigen::Vector3d texture_at(const Eigen::Vector3d& kappa, const Eigen::VectorXd& beta) const;
  [[nodiscard]] Eigen::Matrix3Xd texture_batch(const Eigen::Matrix3Xd& kappa, const Eigen::VectorXd& beta) const;

  /// Shape, texture and viewpoint of a frame plus the embedding of its pixels.
  /// Amortized mode reads the instance descriptor, DirectLatent the latents
  /// of `frame_index`.
  [[nodiscard]] FramePrediction predict_frame(int frame_index, const Eigen::VectorXd& instance_descriptor,
                                              const Eigen::MatrixXd& pixel_descriptors) const;

  /// {B(kappa) alpha : kappa in kappa_set}.
  [[nodiscard]] Eigen::Matrix3Xd surface_sample(const Eigen::Matrix3Xd& kappa_set, const Eigen::VectorXd& alpha) const;

  [[nodiscard]] ParamLayout layout() const;
  [[nodiscard]] Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& p);
  /// Per-parameter learning-rate multipliers: `latent_multiplier` on the
  /// DirectLatent variables, 1 elsewhere.
  [[nodiscard]] Eigen::VectorXd learning_rate_scales(double latent_multiplier) const;

  // Forward passes that keep what the matching backward pass needs. Every
  // backward accumulates into `grad`, laid out like parameters().

  struct EmbedPass {
    nn::Mlp::Cache cache;
    Eigen::MatrixXd raw;
    Eigen::Matrix3Xd kappa;
  };
  [[nodiscard]] EmbedPass embed_forward(const Eigen::MatrixXd& descriptors) const;
  void embed_backward(const EmbedPass& pass, const Eigen::Matrix3Xd& d_kappa, Eigen::Ref<Eigen::VectorXd> grad) const;

  struct BasisPass {
    nn::Mlp::Cache cache;
    Eigen::Matrix3Xd kappa;
    Eigen::MatrixXd harmonics;
    Eigen::MatrixXd basis;
  };
  [[nodiscard]] BasisPass basis_forward(const Eigen::Matrix3Xd& kappa) const;
  /// Returns d loss / d kappa.
  Eigen::Matrix3Xd basis_backward(const BasisPass& pass, const Eigen::MatrixXd& d_basis,
                                  Eigen::Ref<Eigen::VectorXd> grad) const;

  struct TexturePass {
    nn::Mlp::Cache cache;
    Eigen::Matrix3Xd colors;
  };
  /// kappa enters as a constant: the texture loss never reaches phi or the basis.
  [[nodiscard]] TexturePass texture_forward(const Eigen::Matrix3Xd& kappa, const Eigen::VectorXd& beta) const;
  /// Returns d loss / d beta.
  Eigen::VectorXd texture_backward(const TexturePass& pass, const Eigen::Matrix3Xd& d_colors,
                                   Eigen::Ref<Eigen::VectorXd> grad) const;

  struct HeadPass {
    int frame = 0;
    nn::Mlp::Cache shape, texture, viewpoint;
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
    geom::Vec6<double> rotation_6d;
  };
  [[nodiscard]] HeadPass heads_forward(int frame_index, const Eigen::VectorXd& instance_descriptor) const;
  void heads_backward(const HeadPass& pass, const Eigen::VectorXd& d_alpha, const Eigen::VectorXd& d_beta,
                      const geom::Vec6<double>& d_rotation_6d, Eigen::Ref<Eigen::VectorXd> grad) const;

 private:
  void check_frame(int frame_index) const;

  ModelConfig cfg_;
  nn::Mlp phi_, basis_net_, texture_net_, shape_head_, texture_head_, viewpoint_head_;
  Eigen::MatrixXd sh_coeffs_;
  Eigen::MatrixXd latent_alpha_, latent_beta_, latent_rotation_;
};

/// Versioned text header (config as JSON) followed by the network
/// checkpoints and raw little-endian doubles of the remaining groups.
void write_model(std::ostream& os, const C3dmModel& model);
[[nodiscard]] C3dmModel read_model(std::istream& is);
void save_model(const std::string& path, const C3dmModel& model);
[[nodiscard]] C3dmModel load_model(const std::string& path);

}  // namespace c3dm::model
