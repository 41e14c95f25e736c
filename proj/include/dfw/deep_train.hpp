#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dfw/deep_filter.hpp"
#include "dfw/diagnostics.hpp"
#include "dfw/normalize.hpp"

namespace dfw {

/// Hyperparameters of one deep filter training run.
struct DeepTrainConfig {
  DeepMethod method = DeepMethod::kLogBsdef;
  NetworkSpec net;
  int batch = 512;
  LrSchedule lr = LrSchedule::constant(1e-4);
  bool early_stopping = true;

  // BSDE methods: iterations per observation step, batches drawn on the fly.
  int max_iterations = 20000;

  // Splitting methods: a dataset of pre-generated batches per observation
  // step, iterated for a number of epochs per network.
  int dataset_batches = 20000;
  int update_epochs = 100;
  int prediction_epochs = 10;

  // Normalization of the Bayes-updated targets. norm_count sequences share
  // each batch; their log Z come from a pool of norm_pool sequences per step.
  // norm_count = 0 disables it.
  int norm_count = 64;
  int norm_pool = 2048;
  Normalizer::Options norm{NormMethod::kQuad, 256};

  int steps = -1;       // observation steps to train, -1 = all K
  int log_every = 0;    // progress lines on stderr every this many iterations

  static DeepTrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct StepReport {
  int k = 0;
  int n = -1;
  long iterations = 0;
  double final_loss = 0.0;  // last completed window mean, or last loss
  bool stopped_early = false;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<StepReport> steps;
  double seconds = 0.0;
  bool diverged = false;
  std::string divergence;

  nlohmann::json to_json() const;
};

/// Deep splitting (plain or log) training, one network per substep.
/// Throws TrainingDivergence naming (k, n) on a non-finite loss.
DensityFilter train_dsf(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg,
                        std::uint64_t seed, EventLog* log = nullptr, TrainReport* report = nullptr);

/// Deep BSDE (plain or log) training, one optimization per observation step.
/// Throws TrainingDivergence naming k on a non-finite loss.
DensityFilter train_bsdef(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg,
                          std::uint64_t seed, EventLog* log = nullptr, TrainReport* report = nullptr);

DensityFilter train_deep(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg,
                         std::uint64_t seed, EventLog* log = nullptr, TrainReport* report = nullptr);

}  // namespace dfw
