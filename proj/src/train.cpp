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
#include "c3dm/train.hpp"

#include "c3dm/error.hpp"
#include "c3dm/geom.hpp"
#include "c3dm/sph_harm.hpp"
#include "c3dm/tape.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace c3dm::train {

using nlohmann::json;
using nn::Var;

namespace {

const std::vector<std::pair<const char*, bool Ablation::*>>& ablation_fields() {
  static const std::vector<std::pair<const char*, bool Ablation::*>> f = {
      {"repro", &Ablation::repro},         {"prior", &Ablation::prior}, {"min_k", &Ablation::min_k},
      {"emb_align", &Ablation::emb_align}, {"mask", &Ablation::mask},   {"texture", &Ablation::texture},
      {"prior_basis", &Ablation::prior_basis}};
  return f;
}

// Independent random streams derived from the run seed.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), 0x7c3dU};
  return std::mt19937_64(seq);
}

enum StreamTag : std::uint64_t { kInit = 1, kBatches = 2, kSplit = 3, kPool = 4 };

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void Ablation::enable(const std::string& name) {
  for (const auto& [key, member] : ablation_fields()) {
    if (name == key) {
      this->*member = true;
      return;
    }
  }
  throw Error(ErrorCode::InvalidSpec, "unknown ablation term: " + name);
}

std::vector<std::string> Ablation::names() const {
  std::vector<std::string> out;
  for (const auto& [key, member] : ablation_fields()) {
    if (this->*member) out.emplace_back(key);
  }
  return out;
}

losses::LossWeights Ablation::apply(losses::LossWeights w) const {
  if (repro) w.w_repro = 0.0;
  if (prior) w.w_pr = 0.0;
  if (min_k) w.w_min_k = 0.0;
  if (emb_align) w.w_emb_align = 0.0;
  if (mask) w.w_mask = 0.0;
  if (texture) w.w_tex_photo = w.w_tex_percep = 0.0;
  if (prior_basis) w.w_pr_basis = 0.0;
  return w;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw Error(ErrorCode::InvalidSpec, std::string("train config: invalid ") + field);
  };
  need(lr > 0.0 && std::isfinite(lr), "lr");
  need(momentum >= 0.0 && momentum < 1.0, "momentum");
  need(epochs >= 1, "epochs");
  need(batches_per_epoch >= 1, "batches_per_epoch");
  need(batch_size >= 1, "batch_size");
  need(plateau_patience >= 1, "plateau_patience");
  need(plateau_factor > 0.0 && plateau_factor < 1.0, "plateau_factor");
  need(plateau_threshold >= 0.0, "plateau_threshold");
  need(max_decays >= 0, "max_decays");
  need(latent_lr_multiplier > 0.0, "latent_lr_multiplier");
  need(pixels_per_frame >= 2, "pixels_per_frame");
  need(texture_crop >= 4 && texture_crop % 4 == 0, "texture_crop");
  need(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "holdout_fraction");
  need(val_points >= 4, "val_points");
  need(val_restart_points >= 0, "val_restart_points");
  need(checkpoint_every >= 0, "checkpoint_every");
  loss.validate();
  if (weights) weights->validate();
}

losses::LossWeights TrainConfig::effective_weights(geom::CameraKind kind) const {
  return ablation.apply(weights ? *weights : losses::LossWeights::for_camera(kind));
}

model::ModelConfig TrainConfig::model_config(const synth::Dataset& ds) const {
  model::ModelConfig m = model;
  m.descriptor_dim = ds.spec.descriptor_dim;
  m.instance_dim = ds.spec.instance_dim();
  // The prior compares alpha with the labels, so D follows the labels.
  m.shape_dim = ds.labels.empty() ? ds.spec.D : static_cast<int>(ds.labels.front().alpha_star.size());
  m.n_frames = static_cast<int>(ds.frames.size());
  m.validate();
  return m;
}

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error(ErrorCode::InvalidSpec, where + ": unknown field " + key);
  }
}

json loss_json(const losses::LossConfig& c) {
  return {{"epsilon_geometry", c.epsilon_geometry}, {"epsilon_color", c.epsilon_color},
          {"k", c.k},
          {"n_mask_samples", c.n_mask_samples},     {"mask_tolerance_px", c.mask_tolerance_px},
          {"max_clamped_fraction", c.max_clamped_fraction},
          {"blur_sigmas", c.blur_sigmas},           {"ray_reprojection", c.ray_reprojection}};
}

losses::LossConfig loss_from(const json& j) {
  check_keys(j, {"epsilon_geometry", "epsilon_color", "k", "n_mask_samples", "mask_tolerance_px",
                 "max_clamped_fraction", "blur_sigmas", "ray_reprojection"},
             "train config loss");
  losses::LossConfig c;
  c.epsilon_geometry = j.value("epsilon_geometry", c.epsilon_geometry);
  c.epsilon_color = j.value("epsilon_color", c.epsilon_color);
  c.k = j.value("k", c.k);
  c.n_mask_samples = j.value("n_mask_samples", c.n_mask_samples);
  c.mask_tolerance_px = j.value("mask_tolerance_px", c.mask_tolerance_px);
  c.max_clamped_fraction = j.value("max_clamped_fraction", c.max_clamped_fraction);
  c.blur_sigmas = j.value("blur_sigmas", c.blur_sigmas);
  c.ray_reprojection = j.value("ray_reprojection", c.ray_reprojection);
  return c;
}

json weights_json(const losses::LossWeights& w) {
  return {{"w_pr", w.w_pr},           {"w_alpha", w.w_alpha},         {"w_R", w.w_R},
          {"w_repro", w.w_repro},     {"w_min_k", w.w_min_k},         {"w_emb_align", w.w_emb_align},
          {"w_mask", w.w_mask},       {"w_tex_photo", w.w_tex_photo}, {"w_tex_percep", w.w_tex_percep},
          {"w_pr_basis", w.w_pr_basis}};
}

losses::LossWeights weights_from(const json& j) {
  check_keys(j, {"w_pr", "w_alpha", "w_R", "w_repro", "w_min_k", "w_emb_align", "w_mask", "w_tex_photo",
                 "w_tex_percep", "w_pr_basis"},
             "train config weights");
  losses::LossWeights w;
  w.w_pr = j.value("w_pr", w.w_pr);
  w.w_alpha = j.value("w_alpha", w.w_alpha);
  w.w_R = j.value("w_R", w.w_R);
  w.w_repro = j.value("w_repro", w.w_repro);
  w.w_min_k = j.value("w_min_k", w.w_min_k);
  w.w_emb_align = j.value("w_emb_align", w.w_emb_align);
  w.w_mask = j.value("w_mask", w.w_mask);
  w.w_tex_photo = j.value("w_tex_photo", w.w_tex_photo);
  w.w_tex_percep = j.value("w_tex_percep", w.w_tex_percep);
  w.w_pr_basis = j.value("w_pr_basis", w.w_pr_basis);
  return w;
}

json model_json(const model::ModelConfig& m) {
  return {{"texture_dim", m.texture_dim},
          {"hidden_dim", m.hidden_dim},
          {"n_res_blocks", m.n_res_blocks},
          {"activation", nn::to_string(m.activation)},
          {"mode", model::to_string(m.mode)},
          {"basis_kind", model::to_string(m.basis_kind)},
          {"sh_degree", m.sh_degree},
          {"basis_init_scale", m.basis_init_scale}};
}

model::ModelConfig model_from(const json& j) {
  check_keys(j, {"texture_dim", "hidden_dim", "n_res_blocks", "activation", "mode", "basis_kind", "sh_degree",
                 "basis_init_scale"},
             "train config model");
  model::ModelConfig m;
  m.texture_dim = j.value("texture_dim", m.texture_dim);
  m.hidden_dim = j.value("hidden_dim", m.hidden_dim);
  m.n_res_blocks = j.value("n_res_blocks", m.n_res_blocks);
  if (j.contains("activation")) m.activation = nn::activation_from_string(j.at("activation"));
  if (j.contains("mode")) m.mode = model::predictor_mode_from_string(j.at("mode"));
  if (j.contains("basis_kind")) m.basis_kind = model::basis_kind_from_string(j.at("basis_kind"));
  m.sh_degree = j.value("sh_degree", m.sh_degree);
  m.basis_init_scale = j.value("basis_init_scale", m.basis_init_scale);
  return m;
}

}  // namespace

std::string to_json(const TrainConfig& c) {
  json j = {{"lr", c.lr},
            {"momentum", c.momentum},
            {"epochs", c.epochs},
            {"batches_per_epoch", c.batches_per_epoch},
            {"batch_size", c.batch_size},
            {"distinct_instances", c.distinct_instances},
            {"rebalance", c.rebalance},
            {"plateau_patience", c.plateau_patience},
            {"plateau_factor", c.plateau_factor},
            {"plateau_threshold", c.plateau_threshold},
            {"max_decays", c.max_decays},
            {"clip_norm", c.clip_norm},
            {"latent_lr_multiplier", c.latent_lr_multiplier},
            {"pixels_per_frame", c.pixels_per_frame},
            {"texture_crop", c.texture_crop},
            {"holdout_fraction", c.holdout_fraction},
            {"val_points", c.val_points},
            {"val_restart_points", c.val_restart_points},
            {"checkpoint_every", c.checkpoint_every},
            {"seed", c.seed},
            {"loss", loss_json(c.loss)},
            {"ablation", c.ablation.names()},
            {"model", model_json(c.model)}};
  if (c.weights) j["weights"] = weights_json(*c.weights);
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("train config: not valid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    check_keys(j,
               {"lr", "momentum", "epochs", "batches_per_epoch", "batch_size", "distinct_instances", "rebalance",
                "plateau_patience", "plateau_factor", "plateau_threshold", "max_decays", "clip_norm",
                "latent_lr_multiplier", "pixels_per_frame", "texture_crop", "holdout_fraction", "val_points",
                "val_restart_points", "checkpoint_every", "seed", "loss", "weights", "ablation", "model"},
               "train config");
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.epochs = j.value("epochs", c.epochs);
    c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.distinct_instances = j.value("distinct_instances", c.distinct_instances);
    c.rebalance = j.value("rebalance", c.rebalance);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_threshold = j.value("plateau_threshold", c.plateau_threshold);
    c.max_decays = j.value("max_decays", c.max_decays);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.latent_lr_multiplier = j.value("latent_lr_multiplier", c.latent_lr_multiplier);
    c.pixels_per_frame = j.value("pixels_per_frame", c.pixels_per_frame);
    c.texture_crop = j.value("texture_crop", c.texture_crop);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.val_points = j.value("val_points", c.val_points);
    c.val_restart_points = j.value("val_restart_points", c.val_restart_points);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = loss_from(j.at("loss"));
    if (j.contains("weights")) c.weights = weights_from(j.at("weights"));
    if (j.contains("ablation")) {
      for (const auto& name : j.at("ablation")) c.ablation.enable(name.get<std::string>());
    }
    if (j.contains("model")) c.model = model_from(j.at("model"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

StepStats sgd_momentum_step(Eigen::Ref<Eigen::VectorXd> params, Eigen::Ref<Eigen::VectorXd> velocity,
                            const Eigen::VectorXd& grad, double lr, double momentum, const Eigen::VectorXd* lr_scales,
                            double clip_norm) {
  if (params.size() != grad.size() || velocity.size() != grad.size() ||
      (lr_scales && lr_scales->size() != grad.size())) {
    throw Error(ErrorCode::DimMismatch, "sgd_momentum_step: size mismatch");
  }
  StepStats s;
  if (!grad.allFinite()) {
    s.skipped = true;
    s.grad_norm = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.grad_norm = grad.norm();
  if (clip_norm > 0.0 && s.grad_norm > clip_norm) {
    s.clipped = true;
    velocity = momentum * velocity + grad * (clip_norm / s.grad_norm);
  } else {
    velocity = momentum * velocity + grad;
  }
  if (lr_scales) {
    params -= lr * lr_scales->cwiseProduct(velocity);
  } else {
    params -= lr * velocity;
  }
  return s;
}

PlateauScheduler::PlateauScheduler(int patience, double factor, double threshold, int max_decays)
    : patience_(patience), factor_(factor), threshold_(threshold), max_decays_(max_decays) {}

double PlateauScheduler::observe(double loss, double lr) {
  if (loss < best_ - threshold_ * std::abs(best_) || !std::isfinite(best_)) {
    best_ = loss;
    bad_epochs_ = 0;
    return lr;
  }
  // After a decay the episode lasts until the next improvement.
  if (bad_epochs_ < 0) return lr;
  if (++bad_epochs_ >= patience_ && decays_ < max_decays_) {
    ++decays_;
    bad_epochs_ = -1;
    return lr * factor_;
  }
  return lr;
}

void PlateauScheduler::write(std::ostream& os) const {
  os << patience_ << ' ' << max_decays_ << ' ' << bad_epochs_ << ' ' << decays_ << '\n';
  const double d[3] = {factor_, threshold_, best_};
  nn::write_doubles(os, d, 3);
}

void PlateauScheduler::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "train state: truncated scheduler");
  std::istringstream ls(line);
  if (!(ls >> patience_ >> max_decays_ >> bad_epochs_ >> decays_)) {
    throw Error(ErrorCode::IoError, "train state: bad scheduler line");
  }
  double d[3];
  nn::read_doubles(is, d, 3);
  factor_ = d[0];
  threshold_ = d[1];
  best_ = d[2];
}

// ---------------------------------------------------------------------------
// State

TrainState initial_state(model::C3dmModel model, const TrainConfig& cfg) {
  TrainState st;
  st.model = std::move(model);
  st.velocity = Eigen::VectorXd::Zero(st.model.layout().total);
  st.lr = cfg.lr;
  st.scheduler = PlateauScheduler(cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_threshold, cfg.max_decays);
  st.rng = stream_rng(cfg.seed, kBatches);
  return st;
}

void write_state(std::ostream& os, const TrainState& s) {
  os << "c3dm-train-state 1\n" << s.step << ' ' << s.nonfinite_steps << '\n' << s.rng << '\n';
  const double d[3] = {s.lr, s.best_metric, s.epoch_loss_sum};
  nn::write_doubles(os, d, 3);
  s.scheduler.write(os);
  model::write_model(os, s.model);
  os << s.velocity.size() << '\n';
  nn::write_doubles(os, s.velocity.data(), static_cast<std::size_t>(s.velocity.size()));
}

TrainState read_state(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "c3dm-train-state 1") throw Error(ErrorCode::IoError, "train state: bad header");
  TrainState s;
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "train state: truncated");
  std::istringstream counters(line);
  if (!(counters >> s.step >> s.nonfinite_steps)) throw Error(ErrorCode::IoError, "train state: bad counters");
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "train state: truncated");
  std::istringstream rng_line(line);
  if (!(rng_line >> s.rng)) throw Error(ErrorCode::IoError, "train state: bad rng state");
  double d[3];
  nn::read_doubles(is, d, 3);
  s.lr = d[0];
  s.best_metric = d[1];
  s.epoch_loss_sum = d[2];
  s.scheduler.read(is);
  s.model = model::read_model(is);
  if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "train state: truncated velocity");
  const long long n = std::stoll(line);
  if (n != s.model.layout().total) throw Error(ErrorCode::IoError, "train state: velocity size mismatch");
  s.velocity.resize(n);
  nn::read_doubles(is, s.velocity.data(), static_cast<std::size_t>(n));
  return s;
}

void save_state(const std::string& path, const TrainState& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_state(os, s);
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path);
}

TrainState load_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return read_state(is);
}

// ---------------------------------------------------------------------------
// Data

TrainingData::TrainingData(const synth::Dataset& ds, const losses::LossConfig& cfg) : ds_(&ds) {
  if (ds.labels.size() != ds.frames.size()) {
    throw Error(ErrorCode::DimMismatch, "training data: one label set per frame required");
  }
  for (const synth::Frame& f : ds.frames) {
    std::vector<Image> pyr{f.color};
    for (double s : cfg.blur_sigmas) pyr.push_back(gaussian_blur(f.color, s));
    pyramids_.push_back(std::move(pyr));
    distances_.push_back(distance_transform(f.mask));
    Eigen::Matrix2Xi px(2, f.mask.count());
    Eigen::Index n = 0;
    for (int r = 0; r < f.height; ++r) {
      for (int c = 0; c < f.width; ++c) {
        if (f.mask.at(r, c)) px.col(n++) = Eigen::Vector2i(c, r);
      }
    }
    pixels_.push_back(std::move(px));
  }
}

BatchSample sample_batch(const TrainingData& data, const std::vector<int>& frames, const TrainConfig& cfg,
                         std::mt19937_64& rng) {
  BatchSample b;
  b.frames = frames;
  for (int f : frames) {
    const Eigen::Matrix2Xi& all = data.mask_pixels(f);
    const int m = static_cast<int>(all.cols());
    const int n = std::min(m, cfg.pixels_per_frame);
    std::vector<int> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> pick(i, m - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    std::sort(idx.begin(), idx.begin() + n);
    Eigen::Matrix2Xi px(2, n);
    for (int i = 0; i < n; ++i) px.col(i) = all.col(idx[static_cast<std::size_t>(i)]);
    b.pixels.push_back(std::move(px));

    const synth::Frame& fr = data.dataset().frames[static_cast<std::size_t>(f)];
    const Eigen::Vector2i center = all.col(std::uniform_int_distribution<int>(0, m - 1)(rng));
    const int sz = cfg.texture_crop;
    losses::TextureCrop crop;
    crop.size = sz;
    crop.row0 = std::clamp(center(1) - sz / 2, 0, std::max(0, fr.height - sz));
    crop.col0 = std::clamp(center(0) - sz / 2, 0, std::max(0, fr.width - sz));
    b.crops.push_back(crop);
  }
  std::normal_distribution<double> g(0.0, 1.0);
  b.mask_kappa.resize(3, cfg.loss.n_mask_samples);
  for (Eigen::Index s = 0; s < b.mask_kappa.cols(); ++s) {
    Eigen::Vector3d v;
    do {
      v = Eigen::Vector3d(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-9);
    b.mask_kappa.col(s) = v.normalized();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Objective

namespace {

// Descriptor columns of one frame: sampled pixels, keypoints, texture crop.
struct FrameColumns {
  Eigen::Index pixels = 0, keypoints = 0, crop = 0;
  Eigen::Index n_pixels = 0, n_keypoints = 0, n_crop = 0;
};

struct Gathered {
  Eigen::MatrixXd descriptors;
  std::vector<FrameColumns> cols;
};

Eigen::Index crop_pixel(const synth::Frame& f, const losses::TextureCrop& crop, int i) {
  const int r = std::min(crop.row0 + i / crop.size, f.height - 1);
  const int c = std::min(crop.col0 + i % crop.size, f.width - 1);
  return f.pixel_index(r, c);
}

Gathered gather(const TrainingData& data, const BatchSample& b, bool texture) {
  const synth::Dataset& ds = data.dataset();
  Gathered g;
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < b.frames.size(); ++i) {
    const synth::Frame& f = ds.frames[static_cast<std::size_t>(b.frames[i])];
    FrameColumns c;
    c.n_pixels = b.pixels[i].cols();
    c.n_keypoints = f.keypoint_descriptors.cols();
    c.n_crop = texture ? static_cast<Eigen::Index>(b.crops[i].size) * b.crops[i].size : 0;
    c.pixels = total;
    c.keypoints = c.pixels + c.n_pixels;
    c.crop = c.keypoints + c.n_keypoints;
    total = c.crop + c.n_crop;
    g.cols.push_back(c);
  }
  g.descriptors.resize(ds.spec.descriptor_dim, total);
  for (std::size_t i = 0; i < b.frames.size(); ++i) {
    const synth::Frame& f = ds.frames[static_cast<std::size_t>(b.frames[i])];
    const FrameColumns& c = g.cols[i];
    for (Eigen::Index p = 0; p < c.n_pixels; ++p) {
      g.descriptors.col(c.pixels + p) = f.descriptors.col(f.pixel_index(b.pixels[i](1, p), b.pixels[i](0, p)));
    }
    g.descriptors.middleCols(c.keypoints, c.n_keypoints) = f.keypoint_descriptors;
    for (Eigen::Index p = 0; p < c.n_crop; ++p) {
      g.descriptors.col(c.crop + p) = f.descriptors.col(crop_pixel(f, b.crops[i], static_cast<int>(p)));
    }
  }
  return g;
}

std::vector<losses::FrameObservation> observations(const TrainingData& data, const BatchSample& b) {
  const synth::Dataset& ds = data.dataset();
  std::vector<losses::FrameObservation> obs;
  for (std::size_t i = 0; i < b.frames.size(); ++i) {
    const int fi = b.frames[i];
    const synth::Frame& f = ds.frames[static_cast<std::size_t>(fi)];
    losses::FrameObservation o;
    o.frame_id = f.frame_id;
    o.camera = f.camera;
    o.origin = f.origin;
    o.pixels = b.pixels[i];
    o.pyramid = &data.pyramid(fi);
    o.mask = &f.mask;
    o.mask_distance = &data.mask_distance(fi);
    o.labels = &ds.labels[static_cast<std::size_t>(fi)];
    o.crop = b.crops[i];
    obs.push_back(std::move(o));
  }
  return obs;
}

bool uses_texture(const losses::LossWeights& w) { return w.w_tex_photo != 0.0 || w.w_tex_percep != 0.0; }

// Basis columns: pixels and keypoints of every frame, then the mask samples.
Eigen::Matrix3Xd basis_inputs(const Gathered& g, const Eigen::Matrix3Xd& kappa, const Eigen::Matrix3Xd& mask_kappa,
                              bool mask, std::vector<Eigen::Index>& offsets) {
  Eigen::Index n = mask ? mask_kappa.cols() : 0;
  for (const FrameColumns& c : g.cols) n += c.n_pixels + c.n_keypoints;
  Eigen::Matrix3Xd out(3, n);
  Eigen::Index at = 0;
  offsets.clear();
  for (const FrameColumns& c : g.cols) {
    offsets.push_back(at);
    out.middleCols(at, c.n_pixels + c.n_keypoints) = kappa.middleCols(c.pixels, c.n_pixels + c.n_keypoints);
    at += c.n_pixels + c.n_keypoints;
  }
  offsets.push_back(at);
  if (mask) out.middleCols(at, mask_kappa.cols()) = mask_kappa;
  return out;
}

template <typename Derived>
Eigen::Map<const Eigen::VectorXd> flat(const Eigen::MatrixBase<Derived>& m) {
  return {m.derived().data(), m.size()};
}

}  // namespace

Objective objective(const model::C3dmModel& model, const TrainingData& data, const BatchSample& batch,
                    const losses::LossConfig& cfg, const losses::LossWeights& w, bool with_gradient) {
  using model::C3dmModel;
  const synth::Dataset& ds = data.dataset();
  const bool texture = uses_texture(w);
  const bool mask = w.w_mask != 0.0;
  const std::size_t nb = batch.frames.size();
  const int d3 = 3 * model.config().shape_dim;

  const Gathered g = gather(data, batch, texture);
  const C3dmModel::EmbedPass ep = model.embed_forward(g.descriptors);
  std::vector<Eigen::Index> boff;
  const C3dmModel::BasisPass bp = model.basis_forward(basis_inputs(g, ep.kappa, batch.mask_kappa, mask, boff));
  std::vector<C3dmModel::HeadPass> heads;
  std::vector<C3dmModel::TexturePass> tex;
  for (std::size_t i = 0; i < nb; ++i) {
    const synth::Frame& f = ds.frames[static_cast<std::size_t>(batch.frames[i])];
    heads.push_back(model.heads_forward(batch.frames[i], f.instance_descriptor));
    if (texture) tex.push_back(model.texture_forward(ep.kappa.middleCols(g.cols[i].crop, g.cols[i].n_crop), heads[i].beta));
  }

  nn::TapeScope scope;
  std::vector<Var> leaves;
  auto register_leaves = [&](const auto& values) {
    for (Eigen::Index k = 0; k < values.size(); ++k) leaves.push_back(Var::leaf(values(k)));
  };
  // Leaf layout per frame: kappa, pixel basis, keypoint basis, alpha, 6D, texture.
  std::vector<losses::FrameOutputs<Var>> outs(nb);
  std::vector<std::size_t> start(nb + 1);
  const std::size_t expected = [&] {
    std::size_t n = 0;
    for (std::size_t i = 0; i < nb; ++i) {
      const FrameColumns& c = g.cols[i];
      n += static_cast<std::size_t>(3 * c.n_pixels + d3 * (c.n_pixels + c.n_keypoints) + heads[i].alpha.size() + 6 +
                                    3 * c.n_crop);
    }
    return n + static_cast<std::size_t>(mask ? d3 * batch.mask_kappa.cols() : 0);
  }();
  leaves.reserve(expected);
  for (std::size_t i = 0; i < nb; ++i) {
    const FrameColumns& c = g.cols[i];
    start[i] = leaves.size();
    losses::FrameOutputs<Var>& o = outs[i];
    const auto take = [&](Eigen::Index rows, Eigen::Index cols, const auto& values) {
      const std::size_t at = leaves.size();
      register_leaves(values);
      return Eigen::Map<const losses::MatrixX<Var>>(leaves.data() + at, rows, cols);
    };
    const Eigen::Matrix3Xd kap = ep.kappa.middleCols(c.pixels, c.n_pixels);
    o.pixel_kappa = take(3, c.n_pixels, flat(kap));
    const Eigen::MatrixXd pb = bp.basis.middleCols(boff[i], c.n_pixels);
    o.pixel_basis = take(d3, c.n_pixels, flat(pb));
    const Eigen::MatrixXd kb = bp.basis.middleCols(boff[i] + c.n_pixels, c.n_keypoints);
    o.keypoint_basis = take(d3, c.n_keypoints, flat(kb));
    o.alpha = take(heads[i].alpha.size(), 1, heads[i].alpha);
    const geom::Vec6<Var> r6 = take(6, 1, heads[i].rotation_6d);
    o.rotation = geom::rotation_from_6d<Var>(r6);
    if (texture) o.texture = take(3, c.n_crop, flat(tex[i].colors));
  }
  start[nb] = leaves.size();
  losses::MatrixX<Var> mask_basis;
  if (mask) {
    const Eigen::MatrixXd mb = bp.basis.middleCols(boff[nb], batch.mask_kappa.cols());
    const std::size_t at = leaves.size();
    register_leaves(flat(mb));
    mask_basis = Eigen::Map<const losses::MatrixX<Var>>(leaves.data() + at, d3, batch.mask_kappa.cols());
  }

  const std::vector<losses::FrameObservation> obs = observations(data, batch);
  const losses::TotalLoss<Var> tl =
      losses::total_loss<Var>(obs, std::span<const losses::FrameOutputs<Var>>(outs), mask_basis, cfg, w);
  Objective res;
  res.breakdown = tl.breakdown;
  if (!with_gradient) return res;

  const nn::GradientBundle gb = nn::backward(tl.total, leaves);
  const Eigen::VectorXd& adj = gb.gradient;
  res.gradient = Eigen::VectorXd::Zero(model.layout().total);
  Eigen::Matrix3Xd d_kappa = Eigen::Matrix3Xd::Zero(3, ep.kappa.cols());
  Eigen::MatrixXd d_basis = Eigen::MatrixXd::Zero(d3, bp.basis.cols());
  for (std::size_t i = 0; i < nb; ++i) {
    const FrameColumns& c = g.cols[i];
    Eigen::Index at = static_cast<Eigen::Index>(start[i]);
    auto next = [&](Eigen::Index rows, Eigen::Index cols) {
      Eigen::Map<const Eigen::MatrixXd> m(adj.data() + at, rows, cols);
      at += rows * cols;
      return m;
    };
    d_kappa.middleCols(c.pixels, c.n_pixels) += next(3, c.n_pixels);
    d_basis.middleCols(boff[i], c.n_pixels) = next(d3, c.n_pixels);
    d_basis.middleCols(boff[i] + c.n_pixels, c.n_keypoints) = next(d3, c.n_keypoints);
    const Eigen::VectorXd d_alpha = next(heads[i].alpha.size(), 1);
    const geom::Vec6<double> d_r6 = next(6, 1);
    Eigen::VectorXd d_beta = Eigen::VectorXd::Zero(heads[i].beta.size());
    if (texture) d_beta = model.texture_backward(tex[i], next(3, c.n_crop), res.gradient);
    model.heads_backward(heads[i], d_alpha, d_beta, d_r6, res.gradient);
  }
  if (mask) {
    d_basis.middleCols(boff[nb], batch.mask_kappa.cols()) =
        Eigen::Map<const Eigen::MatrixXd>(adj.data() + start[nb], d3, batch.mask_kappa.cols());
  }
  const Eigen::Matrix3Xd dk_basis = model.basis_backward(bp, d_basis, res.gradient);
  for (std::size_t i = 0; i < nb; ++i) {
    const FrameColumns& c = g.cols[i];
    d_kappa.middleCols(c.pixels, c.n_pixels + c.n_keypoints) += dk_basis.middleCols(boff[i], c.n_pixels + c.n_keypoints);
  }
  model.embed_backward(ep, d_kappa, res.gradient);
  return res;
}

losses::LossBreakdown evaluate_batch(const model::C3dmModel& model, const TrainingData& data, const BatchSample& batch,
                                     const losses::LossConfig& cfg, const losses::LossWeights& w) {
  const synth::Dataset& ds = data.dataset();
  const bool texture = uses_texture(w);
  const Gathered g = gather(data, batch, texture);
  std::vector<losses::FrameOutputs<double>> outs;
  for (std::size_t i = 0; i < batch.frames.size(); ++i) {
    const synth::Frame& f = ds.frames[static_cast<std::size_t>(batch.frames[i])];
    const FrameColumns& c = g.cols[i];
    const model::FramePrediction p =
        model.predict_frame(batch.frames[i], f.instance_descriptor, g.descriptors.middleCols(c.pixels, c.n_pixels));
    losses::FrameOutputs<double> o;
    o.pixel_kappa = p.kappa;
    o.pixel_basis = model.basis_batch(p.kappa);
    o.keypoint_basis = model.basis_batch(model.embed_batch(g.descriptors.middleCols(c.keypoints, c.n_keypoints)));
    o.alpha = p.alpha;
    o.rotation = p.rotation;
    if (texture) o.texture = model.texture_batch(model.embed_batch(g.descriptors.middleCols(c.crop, c.n_crop)), p.beta);
    outs.push_back(std::move(o));
  }
  const Eigen::MatrixXd mask_basis =
      w.w_mask != 0.0 ? model.basis_batch(batch.mask_kappa) : Eigen::MatrixXd(3 * model.config().shape_dim, 0);
  const std::vector<losses::FrameObservation> obs = observations(data, batch);
  return losses::total_loss<double>(obs, std::span<const losses::FrameOutputs<double>>(outs), mask_basis, cfg, w)
      .breakdown;
}

// ---------------------------------------------------------------------------
// Evaluation

Split split_frames(const synth::Dataset& ds, double holdout_fraction, std::uint64_t seed) {
  const int n = static_cast<int>(ds.frames.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng = stream_rng(seed, kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const int target = static_cast<int>(std::floor(holdout_fraction * n));
  std::vector<int> remaining(static_cast<std::size_t>(ds.spec.n_instances), 0);
  for (const synth::Frame& f : ds.frames) ++remaining[static_cast<std::size_t>(f.instance)];
  Split s;
  for (int f : order) {
    int& left = remaining[static_cast<std::size_t>(ds.frames[static_cast<std::size_t>(f)].instance)];
    if (static_cast<int>(s.holdout.size()) < target && left > 1) {
      s.holdout.push_back(f);
      --left;
    } else {
      s.train.push_back(f);
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  return s;
}

KappaPool sample_kappa_pool(const synth::Dataset& ds, const std::vector<int>& frames, int n, std::uint64_t seed) {
  if (frames.empty() || n < 1) throw Error(ErrorCode::DegenerateInput, "kappa pool: no frames to sample");
  std::mt19937_64 rng = stream_rng(seed, kPool);
  std::vector<std::vector<Eigen::Index>> pixels;
  for (int f : frames) {
    const synth::Frame& fr = ds.frames[static_cast<std::size_t>(f)];
    std::vector<Eigen::Index> px;
    for (int r = 0; r < fr.height; ++r) {
      for (int c = 0; c < fr.width; ++c) {
        if (fr.mask.at(r, c)) px.push_back(fr.pixel_index(r, c));
      }
    }
    pixels.push_back(std::move(px));
  }
  KappaPool pool;
  pool.descriptors.resize(ds.spec.descriptor_dim, n);
  pool.kappa.resize(3, n);
  std::uniform_int_distribution<std::size_t> pick_frame(0, frames.size() - 1);
  for (int s = 0; s < n; ++s) {
    const std::size_t fi = pick_frame(rng);
    const synth::Frame& fr = ds.frames[static_cast<std::size_t>(frames[fi])];
    const Eigen::Index p = pixels[fi][std::uniform_int_distribution<std::size_t>(0, pixels[fi].size() - 1)(rng)];
    pool.descriptors.col(s) = fr.descriptors.col(p);
    pool.kappa.col(s) = fr.kappa.col(p);
  }
  return pool;
}

FrameMetrics evaluate_frame(const model::C3dmModel& model, const synth::Dataset& ds, int frame, const KappaPool& pool,
                            const metrics::IcpOptions& icp) {
  const synth::Frame& f = ds.frames.at(static_cast<std::size_t>(frame));
  FrameMetrics m;
  m.frame = frame;

  Eigen::MatrixXd omega_desc(ds.spec.descriptor_dim, f.mask.count());
  std::vector<Eigen::Index> omega;
  for (int r = 0; r < f.height; ++r) {
    for (int c = 0; c < f.width; ++c) {
      if (!f.mask.at(r, c)) continue;
      omega_desc.col(static_cast<Eigen::Index>(omega.size())) = f.descriptors.col(f.pixel_index(r, c));
      omega.push_back(f.pixel_index(r, c));
    }
  }
  const model::FramePrediction p = model.predict_frame(frame, f.instance_descriptor, omega_desc);

  m.predicted.points = model.surface_sample(model.embed_batch(pool.descriptors), p.alpha);
  Eigen::Matrix3Xd gt(3, pool.kappa.cols());
  for (Eigen::Index s = 0; s < gt.cols(); ++s) gt.col(s) = ds.gt.point(pool.kappa.col(s), f.alpha);
  gt.colwise() -= gt.rowwise().mean();
  const double scale = std::sqrt(metrics::total_variance(gt));
  if (!(scale > 0.0)) throw Error(ErrorCode::DegenerateCloud, "evaluate_frame: ground-truth cloud is a point");
  m.ground_truth.points = gt / scale;
  try {
    m.d_pcl = metrics::d_pcl(m.predicted, m.ground_truth, icp);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateCloud) throw;
    // A collapsed prediction is scored as a single point at the centroid.
    m.d_pcl = metrics::chamfer_symmetric(metrics::PointCloud{Eigen::Matrix3Xd::Zero(3, 1)}, m.ground_truth);
  }

  const Eigen::Matrix3Xd x = p.rotation * model.surface_sample(p.kappa, p.alpha);
  metrics::DepthMap pred(f.height, f.width), truth(f.height, f.width);
  for (std::size_t i = 0; i < omega.size(); ++i) {
    pred.values(omega[i]) = x(2, static_cast<Eigen::Index>(i));
    truth.values(omega[i]) = f.depth(omega[i]) / scale;
  }
  pred.valid = truth.valid = f.mask;
  try {
    m.d_depth = metrics::depth_error(pred, truth, f.mask);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateDepth) throw;
    m.d_depth = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

model::C3dmModel oracle_model(const synth::Dataset& ds, model::PredictorMode mode) {
  TrainConfig tc;
  tc.model.mode = mode;
  tc.model.basis_kind = model::BasisKind::SphericalHarmonic;
  tc.model.sh_degree = ds.gt.sh_degree;
  tc.model.texture_dim = ds.spec.texture_dim;
  const model::ModelConfig mc = tc.model_config(ds);
  const int d = mc.shape_dim;
  const int dt = ds.spec.texture_dim;
  if (mc.hidden_dim < std::max(6, d)) throw Error(ErrorCode::DimMismatch, "oracle_model: hidden layer too narrow");
  model::C3dmModel m(mc);
  m.sh_coefficients() = ds.gt.basis_coeffs;

  // kappa is the head of Q^T d.
  const Eigen::MatrixXd qt = ds.gt.scramble_q.transpose();
  m.phi().w_in().topRows(3) = qt.topRows(3);
  m.phi().w_out().leftCols(3).setIdentity();

  // Instance descriptors are M [alpha; beta; R e1; R e2].
  const Eigen::MatrixXd mt = ds.gt.instance_mix.transpose();
  m.shape_head().w_in().topRows(d) = mt.topRows(d);
  m.shape_head().w_out().leftCols(d).setIdentity();
  m.viewpoint_head().w_in().topRows(6) = mt.middleRows(d + dt, 6);
  m.viewpoint_head().w_out().leftCols(6).setIdentity();
  m.viewpoint_head().b_out().setZero();
  m.texture_head().w_in().topRows(dt) = mt.middleRows(d, dt);
  m.texture_head().w_out().leftCols(dt).setIdentity();

  if (mode == model::PredictorMode::DirectLatent) {
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
      const synth::Frame& f = ds.frames[i];
      const auto col = static_cast<Eigen::Index>(i);
      m.latent_alpha().col(col) = f.alpha;
      m.latent_beta().col(col) = f.beta;
      m.latent_rotation().col(col) << f.pose.rotation.col(0), f.pose.rotation.col(1);
    }
  }
  return m;
}

Split run_split(const synth::Dataset& ds, const TrainConfig& cfg) {
  // Per-frame latents have nothing to generalize from, so DirectLatent runs
  // fit and evaluate every frame.
  if (cfg.model.mode == model::PredictorMode::DirectLatent) {
    Split s;
    s.train.resize(ds.frames.size());
    std::iota(s.train.begin(), s.train.end(), 0);
    return s;
  }
  return split_frames(ds, cfg.holdout_fraction, cfg.seed);
}

EpochRecord evaluate_holdout(const model::C3dmModel& model, const synth::Dataset& ds, const TrainConfig& cfg,
                             const Split& split) {
  const std::vector<int>& frames = split.holdout.empty() ? split.train : split.holdout;
  const KappaPool pool = sample_kappa_pool(ds, split.train, cfg.val_points, cfg.seed);
  metrics::IcpOptions icp;
  icp.restart_points = cfg.val_restart_points;
  EpochRecord r;
  for (int f : frames) {
    const FrameMetrics m = evaluate_frame(model, ds, f, pool, icp);
    r.d_pcl += m.d_pcl;
    r.d_depth += m.d_depth;
  }
  r.d_pcl /= static_cast<double>(frames.size());
  r.d_depth /= static_cast<double>(frames.size());
  return r;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<double> frame_weights(const synth::Dataset& ds, const std::vector<int>& frames, bool rebalance) {
  if (!rebalance) return std::vector<double>(frames.size(), 1.0);
  std::vector<Eigen::Matrix3d> rotations;
  for (int f : frames) rotations.push_back(ds.labels[static_cast<std::size_t>(f)].rotation_star);
  const Eigen::Vector3d up = synth::upward_axis(rotations);
  std::vector<double> az;
  for (const Eigen::Matrix3d& r : rotations) az.push_back(synth::azimuth(r, up).angle);
  return synth::rebalance_weights(az);
}

}  // namespace

FitResult fit(const synth::Dataset& ds, const TrainConfig& cfg, const FitOptions& opt) {
  cfg.validate();
  if (ds.frames.empty()) throw Error(ErrorCode::DegenerateInput, "fit: empty dataset");
  const model::ModelConfig mc = cfg.model_config(ds);
  const losses::LossWeights w = cfg.effective_weights(ds.spec.camera);
  const TrainingData data(ds, cfg.loss);

  FitResult res;
  res.split = run_split(ds, cfg);
  const Split& split = res.split;

  TrainState& st = res.state;
  if (opt.resume) {
    st = *opt.resume;
    if (st.model.config() != mc) throw Error(ErrorCode::DimMismatch, "fit: resumed model does not match the config");
  } else {
    std::mt19937_64 init = stream_rng(cfg.seed, kInit);
    st = initial_state(model::C3dmModel::initialized(mc, init), cfg);
  }

  std::vector<int> instance_of;
  for (int f : split.train) instance_of.push_back(ds.frames[static_cast<std::size_t>(f)].instance);
  const synth::BatchSampler sampler(instance_of, frame_weights(ds, split.train, cfg.rebalance), cfg.batch_size,
                                    cfg.distinct_instances);
  const Eigen::VectorXd lr_scales = st.model.learning_rate_scales(cfg.latent_lr_multiplier);

  const long total = static_cast<long>(cfg.epochs) * cfg.batches_per_epoch;
  const long stop = opt.stop_at_step >= 0 ? std::min(total, opt.stop_at_step) : total;

  std::ofstream log, metrics_csv;
  std::filesystem::path dir;
  if (!opt.run_dir.empty()) {
    dir = opt.run_dir;
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "config.json") << to_json(cfg) << '\n';
    const bool fresh = st.step == 0;
    const auto mode = fresh ? std::ios::trunc : std::ios::app;
    log.open(dir / "log.csv", std::ios::out | mode);
    metrics_csv.open(dir / "metrics.csv", std::ios::out | mode);
    if (!log || !metrics_csv) throw Error(ErrorCode::IoError, "fit: cannot write to " + opt.run_dir);
    if (fresh) {
      log << "step,epoch,lr";
      for (const std::string& c : losses::LossBreakdown::columns()) log << ',' << c;
      log << ",grad_norm,clipped,skipped\n";
      metrics_csv << "epoch,lr,train_loss,d_pcl,d_depth\n";
    }
  }

  while (st.step < stop) {
    const int epoch = static_cast<int>(st.step / cfg.batches_per_epoch);
    std::vector<int> frames;
    for (int pos : sampler.next(st.rng)) frames.push_back(split.train[static_cast<std::size_t>(pos)]);
    const BatchSample batch = sample_batch(data, frames, cfg, st.rng);
    const Objective obj = objective(st.model, data, batch, cfg.loss, w);

    StepRecord rec;
    rec.step = st.step;
    rec.epoch = epoch;
    rec.lr = st.lr;
    rec.breakdown = obj.breakdown;
    if (opt.on_step) opt.on_step(rec, batch, st.model);

    Eigen::VectorXd params = st.model.parameters();
    rec.stats = sgd_momentum_step(params, st.velocity, obj.gradient, st.lr, cfg.momentum, &lr_scales, cfg.clip_norm);
    if (rec.stats.skipped) {
      ++st.nonfinite_steps;
    } else {
      st.model.set_parameters(params);
    }
    if (log.is_open()) {
      log << rec.step << ',' << rec.epoch << ',' << csv_number(rec.lr);
      for (double v : rec.breakdown.values()) log << ',' << csv_number(v);
      log << ',' << csv_number(rec.stats.grad_norm) << ',' << int(rec.stats.clipped) << ','
          << int(rec.stats.skipped) << '\n';
    }
    st.epoch_loss_sum += obj.breakdown.total;
    ++st.step;

    if (st.step % cfg.batches_per_epoch == 0) {
      EpochRecord er;
      if (opt.evaluate) er = evaluate_holdout(st.model, ds, cfg, split);
      er.epoch = epoch;
      er.lr = st.lr;
      er.train_loss = st.epoch_loss_sum / cfg.batches_per_epoch;
      st.epoch_loss_sum = 0.0;
      st.lr = st.scheduler.observe(er.train_loss, st.lr);
      if (opt.evaluate) st.best_metric = std::min(st.best_metric, er.d_pcl);
      res.epochs.push_back(er);
      if (metrics_csv.is_open()) {
        metrics_csv << er.epoch << ',' << csv_number(er.lr) << ',' << csv_number(er.train_loss) << ','
                    << csv_number(er.d_pcl) << ',' << csv_number(er.d_depth) << '\n';
        metrics_csv.flush();
      }
      if (!dir.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
        std::ostringstream name;
        name << "checkpoint_epoch_" << std::setw(3) << std::setfill('0') << epoch + 1 << ".state";
        save_state((dir / name.str()).string(), st);
      }
    }
  }
  if (!dir.empty()) {
    log.flush();
    save_state((dir / "state.bin").string(), st);
    model::save_model((dir / "model.bin").string(), st.model);
  }
  return res;
}

}  // namespace c3dm::train
