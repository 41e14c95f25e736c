#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dfw/models.hpp"
#include "dfw/rng.hpp"

namespace dfw {

/// Uniform grid: K observation times t_k = T k / K, each interval split into
/// N substeps of length tau = T / (K N).
struct TimeGrid {
  double horizon = 1.0;
  int observations = 10;
  int substeps = 1;

  double tau() const { return horizon / (double(observations) * substeps); }
  double interval() const { return horizon / observations; }
  double t(int k) const { return horizon * k / observations; }
  double t(int k, int n) const {
    return horizon * double(k * substeps + n) / (double(observations) * substeps);
  }
  int total_steps() const { return observations * substeps; }
  TimeGrid with_substeps(int n) const { return {horizon, observations, n}; }

  nlohmann::json to_json() const { return {{"T", horizon}, {"K", observations}, {"N", substeps}}; }
  static TimeGrid from_json(const nlohmann::json& j);
};

/// States at every grid point, d x (K N + 1).
struct Trajectory {
  Mat states;
  TimeGrid grid;

  Vec at_observation(int k) const { return states.col(k * grid.substeps); }
};

/// O_1..O_K stored as columns 0..K-1 (d' x K).
struct ObservationSequence {
  Mat obs;

  int size() const { return static_cast<int>(obs.cols()); }
  /// O_k, 1-based as in the filtering recursion.
  Vec at(int k) const { return obs.col(k - 1); }
};

/// x + mu(x) dt + sigma(x) dw, column-wise.
Mat em_step(const SdeModel& model, const Mat& x, double dt, const Mat& dw);

/// Advances every column by `steps` Euler-Maruyama steps with fresh
/// increments. Non-finite values are left in place for the caller to handle.
Mat em_propagate(const SdeModel& model, Mat x, double dt, int steps, Rng& rng);

/// One signal path S from pi_0 and its observations O_k = h(S_{t_k}) + V_k.
/// Throws NumericalDivergence naming the model and step on a non-finite state.
std::pair<Trajectory, ObservationSequence> simulate_pair(const Example& ex, const TimeGrid& grid,
                                                         Rng& rng);

/// Many signal paths, recorded only at observation times.
struct TruthBatch {
  std::vector<Mat> states;  // K + 1 entries, d x M
  std::vector<Mat> obs;     // K entries (entry k-1 holds O_k), d' x M

  Vec state(int k, int m) const { return states[k].col(m); }
  ObservationSequence sequence(int m) const;
};
TruthBatch simulate_truth(const Example& ex, const TimeGrid& grid, int count, Rng& rng);

/// Auxiliary path X ~ q_0 paired with an observation sequence generated from
/// an independent signal path.
struct TrainingPair {
  Trajectory aux;
  ObservationSequence obs;
};
std::vector<TrainingPair> simulate_training_batch(const Example& ex, const TimeGrid& grid,
                                                  int batch, Rng& rng);

/// What a trainer needs for observation interval k: the auxiliary states on
/// [t_k, t_{k+1}], the Brownian increments driving them, and `sequences`
/// observation histories o_{1:k} from independent signal paths, stacked
/// column-wise as (d' k) x sequences.
struct IntervalBatch {
  std::vector<Mat> x;   // N + 1 entries, d x B
  std::vector<Mat> dw;  // N entries, m x B
  Mat obs;
};
IntervalBatch simulate_interval_batch(const Example& ex, const TimeGrid& grid, int k, int batch,
                                      int sequences, Rng& rng);

/// Observation histories o_{1:k} of `count` independent signal paths,
/// (d' k) x count. Signal paths use the grid's substeps.
Mat simulate_observation_histories(const Example& ex, const TimeGrid& grid, int k, int count,
                                   Rng& rng);

/// Dataset dump (see blob_io.hpp for the container): the payload holds, per
/// pair, the d x (KN+1) state matrix followed by the d' x K observations,
/// both column-major.
void write_dataset(const std::filesystem::path& path, const Example& ex, const TimeGrid& grid,
                   std::uint64_t seed, const std::vector<std::pair<Trajectory, ObservationSequence>>& data);
std::vector<std::pair<Trajectory, ObservationSequence>> read_dataset(const std::filesystem::path& path,
                                                                     nlohmann::json* header = nullptr);

}  // namespace dfw
