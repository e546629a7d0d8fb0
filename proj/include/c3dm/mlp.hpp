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

// Fully connected networks with residual blocks.
//
//   h0 = W_in x + b_in
//   h_{k+1} = h_k + W2_k act(W1_k norm(h_k) + b1_k) + b2_k     (k < n_res_blocks)
//   y = W_out h_n + b_out
//
// norm() is a parameter-free channel-wise l2 normalization, x / max(|x|, eps).
// Inputs and outputs are batched column-wise: one sample per column.

#include <Eigen/Core>

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace c3dm::nn {

enum class Activation { Silu, Relu, Tanh };

[[nodiscard]] const char* to_string(Activation a) noexcept;
[[nodiscard]] Activation activation_from_string(const std::string& name);

inline constexpr double kNormEpsilon = 1e-8;

struct MlpConfig {
  int in_dim = 1;
  int hidden_dim = 32;
  int out_dim = 1;
  int n_res_blocks = 3;
  Activation activation = Activation::Silu;

  /// Throws InvalidSpec when a dimension is below one.
  void validate() const;
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Offsets of every weight and bias in the flat parameter vector. Weight
/// matrices are stored column-major.
struct MlpLayout {
  struct Block {
    Eigen::Index w1, b1, w2, b2;
  };
  Eigen::Index w_in = 0, b_in = 0;
  std::vector<Block> blocks;
  Eigen::Index w_out = 0, b_out = 0;
  Eigen::Index total = 0;

  static MlpLayout of(const MlpConfig& cfg);
};

class Mlp {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  Mlp() : Mlp(MlpConfig{}) {}
  /// All parameters zero.
  explicit Mlp(const MlpConfig& cfg);

  /// Variance-scaled uniform initialization. The output layer is scaled by
  /// `output_scale`; zero gives an exactly zero output layer.
  static Mlp initialized(const MlpConfig& cfg, std::mt19937_64& rng, double output_scale = 1.0);

  [[nodiscard]] const MlpConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const MlpLayout& layout() const noexcept { return layout_; }
  [[nodiscard]] Eigen::Index param_count() const noexcept { return layout_.total; }
  [[nodiscard]] const Eigen::VectorXd& params() const noexcept { return params_; }
  [[nodiscard]] Eigen::VectorXd& params() noexcept { return params_; }
  void set_params(const Eigen::VectorXd& p);

  MatrixMap w_in() { return {params_.data() + layout_.w_in, cfg_.hidden_dim, cfg_.in_dim}; }
  VectorMap b_in() { return {params_.data() + layout_.b_in, cfg_.hidden_dim}; }
  MatrixMap w1(int k) { return {params_.data() + layout_.blocks[k].w1, cfg_.hidden_dim, cfg_.hidden_dim}; }
  VectorMap b1(int k) { return {params_.data() + layout_.blocks[k].b1, cfg_.hidden_dim}; }
  MatrixMap w2(int k) { return {params_.data() + layout_.blocks[k].w2, cfg_.hidden_dim, cfg_.hidden_dim}; }
  VectorMap b2(int k) { return {params_.data() + layout_.blocks[k].b2, cfg_.hidden_dim}; }
  MatrixMap w_out() { return {params_.data() + layout_.w_out, cfg_.out_dim, cfg_.hidden_dim}; }
  VectorMap b_out() { return {params_.data() + layout_.b_out, cfg_.out_dim}; }

  /// Intermediate values kept for the backward pass.
  struct Cache {
    std::vector<Eigen::MatrixXd> h;       // n_res_blocks + 1 entries
    std::vector<Eigen::MatrixXd> z;       // normalized block inputs
    std::vector<Eigen::RowVectorXd> norm; // clamped column norms
    std::vector<Eigen::MatrixXd> a;       // pre-activations
    std::vector<Eigen::MatrixXd> u;       // activations
    Eigen::MatrixXd input;
  };

  /// Batched forward pass; throws DimMismatch when x.rows() != in_dim.
  [[nodiscard]] Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

  /// Accumulates d loss / d params into `grad` (length param_count()) and
  /// returns d loss / d input.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_out,
                           Eigen::Ref<Eigen::VectorXd> grad) const;

 private:
  [[nodiscard]] ConstMatrixMap cw(Eigen::Index off, int rows, int cols) const {
    return {params_.data() + off, rows, cols};
  }
  [[nodiscard]] ConstVectorMap cb(Eigen::Index off, int rows) const { return {params_.data() + off, rows}; }

  MlpConfig cfg_;
  MlpLayout layout_;
  Eigen::VectorXd params_;
};

/// Single-sample forward pass.
[[nodiscard]] Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x);

/// Channel-wise l2 normalization of each column, x / max(|x|, kNormEpsilon).
[[nodiscard]] Eigen::MatrixXd normalize_columns(const Eigen::MatrixXd& x);

/// Backward of normalize_columns for input x and upstream gradient d.
[[nodiscard]] Eigen::MatrixXd normalize_columns_backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d);

// Checkpoint layout: one text line
//   "c3dm-mlp 1 <in> <hidden> <out> <blocks> <activation> <count>\n"
// followed by <count> IEEE-754 doubles in little-endian byte order.
void write_checkpoint(std::ostream& os, const Mlp& net);
[[nodiscard]] Mlp read_checkpoint(std::istream& is);

/// Raw little-endian double block, used by every binary format in the project.
void write_doubles(std::ostream& os, const double* data, std::size_t n);
void read_doubles(std::istream& is, double* data, std::size_t n);

}  // namespace c3dm::nn
