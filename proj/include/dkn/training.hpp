#pragma once

#include <string>
#include <vector>

#include "dkn/model.hpp"
#include "dkn/tensor.hpp"

namespace dkn::train {

struct TrainConfig {
  std::int64_t iterations = 40000;
  int batch_size = 1;  // scenes per iteration
  double base_lr = 1e-3;
  std::int64_t decay_interval = 10000;
  double decay_factor = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int scale = 4;
  int crop = 96;                  // FDKN training crop (multiple of 4)
  int pixels_per_iteration = 16;  // supervised patch centers per scene (DKN)
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: no periodic checkpoints
  std::string checkpoint_path;
  bool freeze_offsets = false;  // ablation: sampling stays on the regular grid

  void validate() const;
};

// base / decay_factor^floor(iteration / decay_interval); piecewise constant,
// non-increasing.
double lr_at(std::int64_t iteration, const TrainConfig& config);

// An aligned HR color / HR depth pair, values in [0, 1].
struct ScenePair {
  Tensor hr_color;  // 1 x 3 x H x W
  Tensor hr_depth;  // 1 x 1 x H x W
  std::string provenance;
};

// Deterministic procedural scene: piecewise-constant depth from seeded
// ellipses and rotated rectangles over a smooth gradient background, with a
// color image sharing the same region boundaries (per-region albedo plus
// texture).
ScenePair generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width);

struct SynthesizedPair {
  Tensor lr_depth;   // bicubic-downsampled depth
  Tensor target_gt;  // the HR depth
  Tensor guidance;   // the HR color
};

SynthesizedPair synthesize_pair(const ScenePair& scene, int scale);

// Per-parameter first/second moment estimates, aligned with the model's
// parameter order.
struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::vector<Moments> moments;
  std::int64_t step = 0;

  void init(const std::vector<Parameter*>& params);
  bool initialized() const { return !moments.empty(); }
};

// One bias-corrected Adam update from the gradients accumulated in params.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

struct TrainResult {
  // Mean absolute error per supervised pixel, one entry per iteration.
  std::vector<double> loss_history;
};

// End-to-end training: per iteration sample a scene, synthesize the LR/HR
// pair, run the variant-appropriate forward (receptive-field patch batch for
// DKN, full crop for FDKN), L1 loss, backward, Adam. Deterministic for a
// fixed (seed, config, dataset); a NaN loss aborts with the iteration and
// last finite loss.
TrainResult train(model::Model& m, AdamState& adam, const std::vector<ScenePair>& dataset,
                  const TrainConfig& config);

struct CheckpointMeta {
  std::int64_t iteration = 0;
  std::uint64_t seed = 0;
  std::int64_t loss_count = 0;
  float loss_first = 0.0f;
  float loss_last = 0.0f;
  float loss_min = 0.0f;
  float loss_mean = 0.0f;
};

CheckpointMeta summarize_losses(const std::vector<double>& history, std::int64_t iteration,
                                std::uint64_t seed);

// Versioned binary bundle: magic "DKNC", config, named parameter tensors
// (raw little-endian f32), batch-norm running stats, optional Adam state,
// and training metadata. Round-trips bit-exactly.
void save_checkpoint(model::Model& m, const AdamState* adam, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  model::Model model;
  AdamState adam;
  bool has_adam = false;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Same, but rejects checkpoints whose stored config differs from `expected`.
LoadedCheckpoint load_checkpoint(const std::string& path, const model::ModelConfig& expected);

// Scans a directory for `<name>.color.<ext>` / `<name>.depth.<ext>` pairs.
std::vector<ScenePair> load_scene_directory(const std::string& dir);

}  // namespace dkn::train
