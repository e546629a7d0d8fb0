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
#include "cli.hpp"

#include "c3dm/error.hpp"
#include "c3dm/metrics.hpp"
#include "c3dm/train.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace c3dm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace {

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
  os << text;
  if (!os) throw Error(ErrorCode::IoError, "write failed: " + path);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir + ": " + ec.message());
}

json weights_json(const losses::LossWeights& w) {
  return {{"w_pr", w.w_pr},           {"w_alpha", w.w_alpha},         {"w_R", w.w_R},
          {"w_repro", w.w_repro},     {"w_min_k", w.w_min_k},         {"w_emb_align", w.w_emb_align},
          {"w_mask", w.w_mask},       {"w_tex_photo", w.w_tex_photo}, {"w_tex_percep", w.w_tex_percep},
          {"w_pr_basis", w.w_pr_basis}};
}

synth::Dataset load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "no dataset directory " + dir);
  return synth::load_dataset(dir);
}

/// Accepts a bare model file or a training-state checkpoint.
model::C3dmModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoError, "cannot read checkpoint " + path);
  std::string head(16, '\0');
  is.read(head.data(), static_cast<std::streamsize>(head.size()));
  if (head.rfind("c3dm-train-state", 0) == 0) return train::load_state(path).model;
  return model::load_model(path);
}

train::TrainConfig eval_config(const EvalArgs& a, std::string& used) {
  used = a.config_path;
  if (used.empty()) {
    const fs::path beside = fs::path(a.checkpoint).parent_path() / "config.json";
    if (fs::exists(beside)) used = beside.string();
  }
  return used.empty() ? train::TrainConfig{} : train::train_config_from_json(read_text(used));
}

std::string frame_name(int f, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%04d_%s", f, suffix);
  return buf;
}

}  // namespace

std::string hash_file(const std::string& path) { return hex64(fnv1a(read_text(path))); }

std::string hash_directory(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "no directory " + dir);
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a("");
  for (const std::string& rel : files) {
    h = fnv1a(rel, h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(read_text((fs::path(dir) / rel).string()), h);
  }
  return hex64(h);
}

std::string resolve_output(const std::string& path) {
  const char* root = std::getenv(kOutputRootEnv);
  if (root == nullptr || *root == '\0' || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

std::string RunManifest::config_hash() const {
  return hex64(fnv1a(json{{"command", command}, {"inputs", inputs}}.dump()));
}

json RunManifest::to_json() const {
  return {{"command", command},   {"config_hash", config_hash()}, {"seed", seed},
          {"inputs", inputs},     {"artifacts", artifacts},       {"versions", versions()},
          {"started", started},   {"finished", finished}};
}

void write_manifest(const std::string& path, const RunManifest& m) { write_text(path, m.to_json().dump(2) + "\n"); }

json versions() {
  std::ostringstream eigen;
  eigen << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION;
  std::ostringstream nl;
  nl << NLOHMANN_JSON_VERSION_MAJOR << '.' << NLOHMANN_JSON_VERSION_MINOR << '.' << NLOHMANN_JSON_VERSION_PATCH;
  return {{"c3dm", kVersion}, {"eigen", eigen.str()}, {"nlohmann_json", nl.str()}, {"cli11", CLI11_VERSION},
          {"compiler", __VERSION__}};
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

RunManifest synth_gen(const SynthGenArgs& a) {
  RunManifest m;
  m.command = "synth-gen";
  m.started = utc_now();
  synth::CategorySpec spec = a.spec_path.empty() ? synth::CategorySpec{} : synth::spec_from_json(read_text(a.spec_path));
  if (a.seed >= 0) spec.seed = static_cast<std::uint64_t>(a.seed);
  spec.validate();
  const std::string out = resolve_output(a.out);
  const synth::Dataset ds = synth::generate_category(spec);
  make_dir(out);
  synth::save_dataset(out, ds);
  m.inputs = {{"spec", json::parse(synth::to_json(spec))}};
  m.seed = spec.seed;
  m.artifacts = {out};
  m.inputs["dataset_hash"] = hash_directory(out);
  m.finished = utc_now();
  write_manifest((fs::path(out) / "manifest.json").string(), m);
  return m;
}

RunManifest fit(const FitArgs& a) {
  RunManifest m;
  m.command = "fit";
  m.started = utc_now();
  train::TrainConfig cfg =
      a.config_path.empty() ? train::TrainConfig{} : train::train_config_from_json(read_text(a.config_path));
  if (a.smoke) {
    cfg.epochs = 1;
    cfg.batches_per_epoch = 10;
    cfg.val_points = 200;
    cfg.val_restart_points = 100;
  }
  for (const std::string& name : a.ablate) cfg.ablation.enable(name);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.validate();

  const synth::Dataset ds = load_data(a.data);
  const std::string out = resolve_output(a.out);
  make_dir(out);

  m.seed = cfg.seed;
  m.inputs = {{"dataset_hash", hash_directory(a.data)},
              {"config", json::parse(train::to_json(cfg))},
              {"effective_weights", weights_json(cfg.effective_weights(ds.spec.camera))}};
  train::FitOptions opt;
  opt.run_dir = out;
  train::TrainState resume;
  if (!a.resume.empty()) {
    resume = train::load_state(a.resume);
    opt.resume = &resume;
    m.inputs["resume_hash"] = hash_file(a.resume);
  }
  const train::FitResult r = train::fit(ds, cfg, opt);
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") m.artifacts.push_back(e.path().string());
  }
  std::sort(m.artifacts.begin(), m.artifacts.end());
  m.finished = utc_now();
  write_manifest((fs::path(out) / "manifest.json").string(), m);
  for (const train::EpochRecord& e : r.epochs) {
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " train_loss " << e.train_loss << " d_pcl " << e.d_pcl
              << " d_depth " << e.d_depth << "\n";
  }
  return m;
}

RunManifest eval(const EvalArgs& a, std::vector<EvalRow>* rows_out) {
  RunManifest m;
  m.command = "eval";
  m.started = utc_now();
  if (a.points < 1) throw Error(ErrorCode::InvalidSpec, "eval: points must be >= 1");
  std::string config_used;
  const train::TrainConfig cfg = eval_config(a, config_used);
  const model::C3dmModel net = load_checkpoint(a.checkpoint);
  const synth::Dataset ds = load_data(a.data);
  const std::string out = resolve_output(a.out);
  make_dir(out);

  // The split follows the checkpoint's predictor mode.
  train::TrainConfig split_cfg = cfg;
  split_cfg.model.mode = net.config().mode;
  const train::Split split = train::run_split(ds, split_cfg);
  std::vector<int> frames;
  if (a.all_frames || split.holdout.empty()) {
    frames.resize(ds.frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = static_cast<int>(i);
  } else {
    frames = split.holdout;
  }
  const train::KappaPool pool = train::sample_kappa_pool(ds, split.train, a.points, cfg.seed);
  metrics::IcpOptions icp;
  icp.restart_points = a.restart_points;

  std::ostringstream csv;
  csv << std::setprecision(17) << "frame,instance,d_pcl,d_depth\n";
  std::vector<EvalRow> rows;
  double sum_pcl = 0.0, sum_depth = 0.0;
  int n_depth = 0;
  for (int f : frames) {
    const train::FrameMetrics fm = train::evaluate_frame(net, ds, f, pool, icp);
    const EvalRow row{f, ds.frames[static_cast<std::size_t>(f)].instance, fm.d_pcl, fm.d_depth};
    rows.push_back(row);
    csv << row.frame << ',' << row.instance << ',' << row.d_pcl << ',' << row.d_depth << '\n';
    sum_pcl += fm.d_pcl;
    if (std::isfinite(fm.d_depth)) {
      sum_depth += fm.d_depth;
      ++n_depth;
    }
    if (a.ply) {
      metrics::write_ply((fs::path(out) / frame_name(f, "pred.ply")).string(), fm.predicted);
      metrics::write_ply((fs::path(out) / frame_name(f, "gt.ply")).string(), fm.ground_truth);
    }
  }
  const double mean_pcl = frames.empty() ? 0.0 : sum_pcl / static_cast<double>(frames.size());
  const double mean_depth = n_depth == 0 ? std::numeric_limits<double>::quiet_NaN() : sum_depth / n_depth;
  csv << "mean,," << mean_pcl << ',' << mean_depth << '\n';
  const std::string csv_path = (fs::path(out) / "eval.csv").string();
  write_text(csv_path, csv.str());

  m.seed = cfg.seed;
  m.inputs = {{"checkpoint_hash", hash_file(a.checkpoint)},
              {"dataset_hash", hash_directory(a.data)},
              {"config", json::parse(train::to_json(cfg))},
              {"config_path", config_used},
              {"points", a.points},
              {"restart_points", a.restart_points},
              {"frames", a.all_frames ? "all" : "holdout"},
              {"ply", a.ply}};
  m.artifacts = {csv_path};
  if (a.ply) m.artifacts.push_back(out);
  m.finished = utc_now();
  write_manifest((fs::path(out) / "manifest.json").string(), m);
  std::cout << std::setprecision(6) << "frames " << frames.size() << " d_pcl " << mean_pcl << " d_depth "
            << mean_depth << "\n";
  if (rows_out) *rows_out = std::move(rows);
  return m;
}

RunManifest gradcheck(const GradcheckArgs& a, std::vector<checks::GradCheckRow>& rows) {
  RunManifest m;
  m.command = "gradcheck";
  m.started = utc_now();
  rows = checks::run_gradcheck(a.options);
  const std::string out = resolve_output(a.out);
  make_dir(out);
  std::ostringstream csv;
  csv << std::setprecision(6) << "name,group,points,max_rel_error,tolerance,pass\n";
  for (const auto& r : rows) {
    csv << r.name << ',' << r.group << ',' << r.points << ',' << r.max_rel_error << ',' << r.tolerance << ','
        << (r.pass ? 1 : 0) << '\n';
  }
  const std::string csv_path = (fs::path(out) / "gradcheck.csv").string();
  write_text(csv_path, csv.str());
  m.seed = a.options.seed;
  m.inputs = {{"scope", a.options.scope},
              {"points", a.options.points},
              {"corrupt_one", a.options.corrupt_one},
              {"tolerance", a.options.tolerance}};
  m.artifacts = {csv_path};
  m.finished = utc_now();
  write_manifest((fs::path(out) / "manifest.json").string(), m);
  return m;
}

Image transfer_texture(const model::C3dmModel& net, const synth::Dataset& ds, int target, int texture) {
  const auto n = static_cast<int>(ds.frames.size());
  if (target < 0 || target >= n || texture < 0 || texture >= n) {
    throw Error(ErrorCode::InvalidSpec, "texture-transfer: frame index out of range");
  }
  const synth::Frame& tf = ds.frames[static_cast<std::size_t>(texture)];
  const Eigen::VectorXd beta =
      net.predict_frame(texture, tf.instance_descriptor, Eigen::MatrixXd(ds.spec.descriptor_dim, 0)).beta;

  const synth::Frame& g = ds.frames[static_cast<std::size_t>(target)];
  std::vector<std::pair<int, int>> omega;
  Eigen::MatrixXd desc(ds.spec.descriptor_dim, static_cast<Eigen::Index>(g.mask.count()));
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (!g.mask.at(r, c)) continue;
      desc.col(static_cast<Eigen::Index>(omega.size())) = g.descriptors.col(g.pixel_index(r, c));
      omega.emplace_back(r, c);
    }
  }
  const Eigen::Matrix3Xd colors = net.texture_batch(net.embed_batch(desc), beta);
  Image out = g.color;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    out.set_pixel(omega[i].first, omega[i].second, colors.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

RunManifest texture_transfer(const TextureTransferArgs& a) {
  RunManifest m;
  m.command = "texture-transfer";
  m.started = utc_now();
  const model::C3dmModel net = load_checkpoint(a.checkpoint);
  const synth::Dataset ds = load_data(a.data);
  const Image img = transfer_texture(net, ds, a.target, a.texture);
  const std::string out = resolve_output(a.out);
  if (const fs::path parent = fs::path(out).parent_path(); !parent.empty()) make_dir(parent.string());
  write_ppm(out, img);
  m.inputs = {{"checkpoint_hash", hash_file(a.checkpoint)},
              {"dataset_hash", hash_directory(a.data)},
              {"target", a.target},
              {"texture", a.texture}};
  m.artifacts = {out};
  m.finished = utc_now();
  write_manifest(out + ".manifest.json", m);
  return m;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"c3dm: canonical 3D deformer maps on synthetic categories"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SynthGenArgs sg;
  CLI::App* sg_cmd = app.add_subcommand("synth-gen", "Generate a synthetic category dataset");
  sg_cmd->add_option("--spec", sg.spec_path, "Category spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  sg_cmd->add_option("--out", sg.out, "Output dataset directory")->required();
  sg_cmd->add_option("--seed", sg.seed, "Override the spec seed");

  FitArgs ft;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Train a model on a dataset");
  fit_cmd->add_option("--data", ft.data, "Dataset directory")->required();
  fit_cmd->add_option("--config", ft.config_path, "Training config JSON (defaults when omitted)")
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", ft.out, "Run directory")->required();
  fit_cmd->add_option("--ablate", ft.ablate,
                      "Disable a loss term: repro, prior, min_k, emb_align, mask, texture, prior_basis (repeatable)");
  fit_cmd->add_flag("--smoke", ft.smoke, "One epoch of ten batches");
  fit_cmd->add_option("--resume", ft.resume, "Resume from a training-state checkpoint")->check(CLI::ExistingFile);
  fit_cmd->add_option("--seed", ft.seed, "Override the config seed");

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Compute d_pcl and d_depth of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "model.bin or a .state checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();
  eval_cmd->add_option("--config", ev.config_path, "Training config (default: config.json beside the checkpoint)");
  eval_cmd->add_option("--points", ev.points, "Sampled embeddings per shape")->capture_default_str();
  eval_cmd->add_option("--restart-points", ev.restart_points, "ICP restart ranking subset (0 = all points)")
      ->capture_default_str();
  eval_cmd->add_flag("--all-frames", ev.all_frames, "Evaluate every frame instead of the holdout");
  eval_cmd->add_flag("--ply", ev.ply, "Write predicted and ground-truth clouds as PLY");

  GradcheckArgs gc;
  gc.out = "gradcheck";
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc_cmd->add_option("--scope", gc.options.scope, "Check name or group (losses, geom, nn)");
  gc_cmd->add_option("--points", gc.options.points, "Random points per check")->capture_default_str();
  gc_cmd->add_option("--seed", gc.options.seed, "Random seed")->capture_default_str();
  gc_cmd->add_option("--out", gc.out, "Report directory")->capture_default_str();
  gc_cmd->add_flag("--corrupt-one", gc.options.corrupt_one, "Perturb the first analytic gradient (negative control)");
  gc_cmd->add_flag_callback("--list", [] {
    for (const std::string& n : checks::gradcheck_names()) std::cout << n << "\n";
    std::exit(0);
  }, "List check names");

  TextureTransferArgs tt;
  CLI::App* tt_cmd = app.add_subcommand("texture-transfer", "Render one frame's texture onto another's geometry");
  tt_cmd->add_option("--checkpoint", tt.checkpoint, "model.bin or a .state checkpoint")->required();
  tt_cmd->add_option("--data", tt.data, "Dataset directory")->required();
  tt_cmd->add_option("--target", tt.target, "Frame supplying geometry and background")->required();
  tt_cmd->add_option("--texture", tt.texture, "Frame supplying the texture code")->required();
  tt_cmd->add_option("--out", tt.out, "Output PPM image")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sg_cmd) {
      const RunManifest m = synth_gen(sg);
      std::cout << "dataset " << m.artifacts.front() << " hash " << m.inputs.at("dataset_hash").get<std::string>()
                << "\n";
    } else if (*fit_cmd) {
      (void)fit(ft);
    } else if (*eval_cmd) {
      (void)eval(ev);
    } else if (*gc_cmd) {
      std::vector<checks::GradCheckRow> rows;
      (void)gradcheck(gc, rows);
      bool ok = true;
      for (const auto& r : rows) {
        std::printf("%-32s %-7s %4d  %.3e  %s\n", r.name.c_str(), r.group.c_str(), r.points, r.max_rel_error,
                    r.pass ? "PASS" : "FAIL");
        ok = ok && r.pass;
      }
      return ok ? 0 : 1;
    } else if (*tt_cmd) {
      const RunManifest m = texture_transfer(tt);
      std::cout << "wrote " << m.artifacts.front() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace c3dm::cli
