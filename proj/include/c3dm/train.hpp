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

// Fitting loop: batch sampling, the differentiable objective, SGD with
// momentum, plateau learning-rate decay, resumable state and the held-out
// evaluation protocol.

#include "c3dm/image.hpp"
#include "c3dm/losses.hpp"
#include "c3dm/metrics.hpp"
#include "c3dm/model.hpp"
#include "c3dm/synth.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace c3dm::train {

/// Terms switched off for an ablation run. Each flag zeroes one weight.
struct Ablation {
  bool repro = false;
  bool prior = false;
  bool min_k = false;
  bool emb_align = false;
  bool mask = false;
  bool texture = false;
  /// Only the dense-basis part of the prior.
  bool prior_basis = false;

  /// Sets the flag named `name` (repro, prior, min_k, emb_align, mask,
  /// texture, prior_basis); throws InvalidSpec on unknown names.
  void enable(const std::string& name);
  [[nodiscard]] std::vector<std::string> names() const;
  [[nodiscard]] losses::LossWeights apply(losses::LossWeights w) const;
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  int epochs = 5;
  int batches_per_epoch = 200;
  int batch_size = 10;
  bool distinct_instances = true;
  bool rebalance = true;
  int plateau_patience = 2;
  double plateau_factor = 0.1;
  double plateau_threshold = 1e-3;  // relative improvement
  int max_decays = 3;
  double clip_norm = 10.0;          // <= 0 disables clipping
  double latent_lr_multiplier = 10.0;
  int pixels_per_frame = 200;
  int texture_crop = 8;
  double holdout_fraction = 0.2;
  int val_points = 1000;            // kappa samples per evaluated cloud
  int val_restart_points = 250;
  int checkpoint_every = 1;         // epochs, 0 disables
  std::uint64_t seed = 0;
  losses::LossConfig loss;
  /// Unset: LossWeights::for_camera of the dataset camera.
  std::optional<losses::LossWeights> weights;
  Ablation ablation;
  model::ModelConfig model;

  void validate() const;
  /// Weights after defaults and ablations.
  [[nodiscard]] losses::LossWeights effective_weights(geom::CameraKind kind) const;
  /// The model config with the dataset-dependent dimensions filled in.
  [[nodiscard]] model::ModelConfig model_config(const synth::Dataset& ds) const;
};

[[nodiscard]] std::string to_json(const TrainConfig& cfg);
/// Unknown fields throw InvalidSpec; missing fields keep their defaults.
[[nodiscard]] TrainConfig train_config_from_json(const std::string& text);

struct StepStats {
  bool skipped = false;  // non-finite gradient
  bool clipped = false;
  double grad_norm = 0.0;
};

/// v <- mu v + g, theta <- theta - lr (scale * v). The gradient is rescaled
/// to `clip_norm` first when its norm exceeds it. A non-finite gradient
/// leaves params and velocity untouched and reports skipped.
StepStats sgd_momentum_step(Eigen::Ref<Eigen::VectorXd> params, Eigen::Ref<Eigen::VectorXd> velocity,
                            const Eigen::VectorXd& grad, double lr, double momentum,
                            const Eigen::VectorXd* lr_scales = nullptr, double clip_norm = 0.0);

/// Multiplies the learning rate by `factor` when the best loss has not
/// improved by a relative `threshold` for `patience` consecutive epochs.
/// The patience counter restarts after each decay, and at most `max_decays`
/// decays happen.
class PlateauScheduler {
 public:
  PlateauScheduler() = default;
  PlateauScheduler(int patience, double factor, double threshold, int max_decays);

  /// Feeds one epoch loss and returns the new learning rate.
  double observe(double loss, double lr);

  [[nodiscard]] int decays() const noexcept { return decays_; }
  [[nodiscard]] double best() const noexcept { return best_; }

  void write(std::ostream& os) const;
  void read(std::istream& is);

 private:
  int patience_ = 2;
  double factor_ = 0.1;
  double threshold_ = 1e-3;
  int max_decays_ = 3;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  int decays_ = 0;
};

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  model::C3dmModel model;
  Eigen::VectorXd velocity;
  long step = 0;
  double lr = 0.0;
  double best_metric = std::numeric_limits<double>::infinity();
  PlateauScheduler scheduler;
  std::mt19937_64 rng;
  double epoch_loss_sum = 0.0;
  long nonfinite_steps = 0;
};

/// Fresh optimizer state around `model`: zero velocity, the configured
/// learning rate and scheduler, and the batch stream of the config seed.
[[nodiscard]] TrainState initial_state(model::C3dmModel model, const TrainConfig& cfg);

void write_state(std::ostream& os, const TrainState& s);
[[nodiscard]] TrainState read_state(std::istream& is);
void save_state(const std::string& path, const TrainState& s);
[[nodiscard]] TrainState load_state(const std::string& path);

/// Frames of a dataset with the derived images the objective needs.
class TrainingData {
 public:
  TrainingData(const synth::Dataset& ds, const losses::LossConfig& cfg);

  [[nodiscard]] const synth::Dataset& dataset() const noexcept { return *ds_; }
  [[nodiscard]] int size() const noexcept { return static_cast<int>(ds_->frames.size()); }
  [[nodiscard]] const std::vector<Image>& pyramid(int f) const { return pyramids_[f]; }
  [[nodiscard]] const Image& mask_distance(int f) const { return distances_[f]; }
  /// Silhouette pixels of frame f as (col, row).
  [[nodiscard]] const Eigen::Matrix2Xi& mask_pixels(int f) const { return pixels_[f]; }

 private:
  const synth::Dataset* ds_;
  std::vector<std::vector<Image>> pyramids_;
  std::vector<Image> distances_;
  std::vector<Eigen::Matrix2Xi> pixels_;
};

/// Random content of one optimization step.
struct BatchSample {
  std::vector<int> frames;                  // frames[0] is the min-k target
  std::vector<Eigen::Matrix2Xi> pixels;     // per frame, (col, row)
  std::vector<losses::TextureCrop> crops;
  Eigen::Matrix3Xd mask_kappa;              // shared sphere samples
};

/// Draws pixels (without replacement, at most `pixels_per_frame`), a texture
/// crop around a random silhouette pixel and the mask sphere samples.
[[nodiscard]] BatchSample sample_batch(const TrainingData& data, const std::vector<int>& frames,
                                       const TrainConfig& cfg, std::mt19937_64& rng);

struct Objective {
  losses::LossBreakdown breakdown;
  Eigen::VectorXd gradient;  // laid out like model.parameters(); empty without gradient
};

/// Loss of the model on a batch and, optionally, its gradient with respect to
/// every model parameter.
[[nodiscard]] Objective objective(const model::C3dmModel& model, const TrainingData& data, const BatchSample& batch,
                                  const losses::LossConfig& cfg, const losses::LossWeights& w,
                                  bool with_gradient = true);

/// The same loss computed in plain doubles from the model's inference API.
[[nodiscard]] losses::LossBreakdown evaluate_batch(const model::C3dmModel& model, const TrainingData& data,
                                                   const BatchSample& batch, const losses::LossConfig& cfg,
                                                   const losses::LossWeights& w);

// Evaluation.

struct Split {
  std::vector<int> train;
  std::vector<int> holdout;
};
/// Random split of the frames; every instance keeps at least one training
/// frame.
[[nodiscard]] Split split_frames(const synth::Dataset& ds, double holdout_fraction, std::uint64_t seed);

/// Embeddings to evaluate shapes on: silhouette pixels of training frames,
/// with their descriptors and ground-truth kappa.
struct KappaPool {
  Eigen::MatrixXd descriptors;
  Eigen::Matrix3Xd kappa;
};
[[nodiscard]] KappaPool sample_kappa_pool(const synth::Dataset& ds, const std::vector<int>& frames, int n,
                                          std::uint64_t seed);

struct FrameMetrics {
  int frame = 0;
  double d_pcl = 0.0;
  double d_depth = 0.0;
  metrics::PointCloud predicted;
  metrics::PointCloud ground_truth;  // unit total variance
};

/// d_pcl between B(phi(d)) alpha and the generator shape at the same pool,
/// and d_depth of the frame's silhouette under the predicted viewpoint.
[[nodiscard]] FrameMetrics evaluate_frame(const model::C3dmModel& model, const synth::Dataset& ds, int frame,
                                          const KappaPool& pool, const metrics::IcpOptions& icp = {});

/// A model that reproduces the generator exactly: spherical-harmonic basis
/// equal to the ground truth, linear phi inverting the descriptor scrambler
/// and either linear heads (Amortized) or ground-truth latents.
[[nodiscard]] model::C3dmModel oracle_model(const synth::Dataset& ds, model::PredictorMode mode);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double d_pcl = 0.0;
  double d_depth = 0.0;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  losses::LossBreakdown breakdown;
  StepStats stats;
};

struct FitOptions {
  /// Run directory for config.json, log.csv, metrics.csv and checkpoints;
  /// empty writes nothing.
  std::string run_dir;
  /// Continue from this state instead of a fresh initialization.
  const TrainState* resume = nullptr;
  /// Stop once this many steps have run in total (-1: full schedule).
  long stop_at_step = -1;
  /// Called after the loss of a step is evaluated, before the update.
  std::function<void(const StepRecord&, const BatchSample&, const model::C3dmModel&)> on_step;
  bool evaluate = true;
};

struct FitResult {
  TrainState state;
  std::vector<EpochRecord> epochs;
  Split split;
};

[[nodiscard]] FitResult fit(const synth::Dataset& ds, const TrainConfig& cfg, const FitOptions& opt = {});

/// The split fit() uses: split_frames() for Amortized, all frames as
/// training frames for DirectLatent.
[[nodiscard]] Split run_split(const synth::Dataset& ds, const TrainConfig& cfg);

/// Mean metrics over the holdout frames (the training frames when the
/// holdout is empty), with the kappa pool drawn from the training frames.
[[nodiscard]] EpochRecord evaluate_holdout(const model::C3dmModel& model, const synth::Dataset& ds,
                                           const TrainConfig& cfg, const Split& split);

}  // namespace c3dm::train
