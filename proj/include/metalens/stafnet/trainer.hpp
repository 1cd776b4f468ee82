#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "metalens/stafnet/checkpoint.hpp"

namespace metalens::stafnet {

struct TrainingPair {
  std::string id;
  Tensor clean;     // [C,H,W]
  Tensor observed;  // [C,H,W]
};

/// A clean target with its observation's deconvolution bank, computed once.
struct TrainingSample {
  std::string id;
  Tensor clean;
  wiener::DeconvStack stack;
};

std::vector<TrainingSample> prepare_samples(const std::vector<TrainingPair>& pairs, const optics::PsfGrid& psf,
                                            const wiener::FilterBankConfig& bank);

struct TrainOptions {
  std::size_t steps = 2000;
  double lr = 2e-3;
  /// Cosine decay from lr to lr * final_lr_ratio over the run; constant otherwise.
  bool cosine = true;
  double final_lr_ratio = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Called after every step with (1-based step, loss).
  std::function<void(std::size_t, double)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per step
};

/// Adam on the mean absolute error between the restored image and its
/// clean target, one sample per step drawn by a seeded generator. The model
/// is initialised from options.seed. A non-finite loss raises TrainingError.
TrainResult train_toy(const std::vector<TrainingSample>& samples, const NetworkConfig& config,
                      const TrainOptions& options);

/// Continues from `start` (its params are updated in place).
TrainResult train_toy(const std::vector<TrainingSample>& samples, Checkpoint start, const TrainOptions& options);

/// "step,loss" CSV.
void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses);

}  // namespace metalens::stafnet
