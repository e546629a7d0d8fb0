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

// Command implementations behind the c3dm executable. Each command writes
// exactly one manifest.json describing its inputs, outputs and versions.

#include "c3dm/checks.hpp"
#include "c3dm/image.hpp"
#include "c3dm/model.hpp"
#include "c3dm/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace c3dm::cli {

inline constexpr const char* kVersion = "0.1.0";
/// Relative output paths are resolved under this directory when it is set.
inline constexpr const char* kOutputRootEnv = "C3DM_OUTPUT_ROOT";

[[nodiscard]] std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
[[nodiscard]] std::string hex64(std::uint64_t h);

/// FNV-1a over the relative names and contents of every regular file below
/// dir, in sorted order, skipping manifest.json.
[[nodiscard]] std::string hash_directory(const std::string& dir);
[[nodiscard]] std::string hash_file(const std::string& path);

[[nodiscard]] std::string resolve_output(const std::string& path);

struct RunManifest {
  std::string command;
  nlohmann::json inputs;  // everything the result depends on
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  std::string started;
  std::string finished;

  /// FNV-1a of the canonical dump of command and inputs.
  [[nodiscard]] std::string config_hash() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

void write_manifest(const std::string& path, const RunManifest& m);
[[nodiscard]] nlohmann::json versions();
[[nodiscard]] std::string utc_now();

struct SynthGenArgs {
  std::string spec_path;  // empty uses the default spec
  std::string out;
  std::int64_t seed = -1;  // overrides the spec seed when >= 0
};
RunManifest synth_gen(const SynthGenArgs& a);

struct FitArgs {
  std::string data;
  std::string config_path;
  std::string out;
  std::vector<std::string> ablate;
  bool smoke = false;
  std::string resume;  // state file
  std::int64_t seed = -1;
};
RunManifest fit(const FitArgs& a);

struct EvalRow {
  int frame = 0;
  int instance = 0;
  double d_pcl = 0.0;
  double d_depth = 0.0;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  /// Training config for the split and kappa pool seed; empty looks for
  /// config.json next to the checkpoint and falls back to defaults.
  std::string config_path;
  int points = 30000;
  int restart_points = 500;
  bool all_frames = false;
  bool ply = false;
};
RunManifest eval(const EvalArgs& a, std::vector<EvalRow>* rows = nullptr);

struct GradcheckArgs {
  checks::GradCheckOptions options;
  std::string out;
};
RunManifest gradcheck(const GradcheckArgs& a, std::vector<checks::GradCheckRow>& rows);

/// Target frame colors with every silhouette pixel replaced by the texture
/// model evaluated at the target's embeddings and the texture frame's
/// predicted beta.
[[nodiscard]] Image transfer_texture(const model::C3dmModel& model, const synth::Dataset& ds, int target,
                                     int texture);

struct TextureTransferArgs {
  std::string checkpoint;
  std::string data;
  int target = 0;
  int texture = 0;
  std::string out;  // .ppm; the manifest goes to out + ".manifest.json"
};
RunManifest texture_transfer(const TextureTransferArgs& a);

/// Parses argv and runs one command; returns the process exit code.
int run(int argc, char** argv);

}  // namespace c3dm::cli
