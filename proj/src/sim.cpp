#include "dfw/sim.hpp"

#include <string>

#include "dfw/blob_io.hpp"

namespace dfw {
namespace {

void check_finite(const Mat& x, const SdeModel& model, int step) {
  if (!x.allFinite()) {
    throw NumericalDivergence("non-finite state in model '" + model.name() + "' at step " +
                              std::to_string(step));
  }
}

}  // namespace

TimeGrid TimeGrid::from_json(const nlohmann::json& j) {
  TimeGrid g{j.value("T", 1.0), j.value("K", 10), j.value("N", 1)};
  if (!(g.horizon > 0.0) || g.observations < 1 || g.substeps < 1) {
    throw std::invalid_argument("grid: need T > 0, K >= 1, N >= 1");
  }
  return g;
}

Mat em_step(const SdeModel& model, const Mat& x, double dt, const Mat& dw) {
  return x + model.drift(x) * dt + model.diffuse(x, dw);
}

Mat em_propagate(const SdeModel& model, Mat x, double dt, int steps, Rng& rng) {
  const double sq = std::sqrt(dt);
  for (int s = 0; s < steps; ++s) {
    const Mat dw = rng.normal_matrix(model.noise_dim(), x.cols(), sq);
    x = em_step(model, x, dt, dw);
  }
  return x;
}

std::pair<Trajectory, ObservationSequence> simulate_pair(const Example& ex, const TimeGrid& grid,
                                                         Rng& rng) {
  const SdeModel& model = *ex.model;
  Rng state_rng = rng.substream(Stream::kTruth);
  Rng noise_rng = rng.substream(Stream::kObservationNoise);
  Trajectory traj{Mat(ex.state_dim(), grid.total_steps() + 1), grid};
  ObservationSequence obs{Mat(ex.obs_dim(), grid.observations)};
  Mat x = ex.prior.sample(state_rng, 1);
  traj.states.col(0) = x;
  const double dt = grid.tau();
  const double sq = std::sqrt(dt);
  for (int s = 1; s <= grid.total_steps(); ++s) {
    const Mat dw = state_rng.normal_matrix(model.noise_dim(), 1, sq);
    x = em_step(model, x, dt, dw);
    check_finite(x, model, s);
    traj.states.col(s) = x;
    if (s % grid.substeps == 0) {
      const int k = s / grid.substeps;
      obs.obs.col(k - 1) = ex.observation->h(x) + ex.observation->sample_noise(noise_rng, 1);
    }
  }
  rng = rng.substream(Stream::kTruth, 1);
  return {std::move(traj), std::move(obs)};
}

ObservationSequence TruthBatch::sequence(int m) const {
  ObservationSequence seq{Mat(obs.front().rows(), static_cast<Eigen::Index>(obs.size()))};
  for (std::size_t k = 0; k < obs.size(); ++k) seq.obs.col(k) = obs[k].col(m);
  return seq;
}

TruthBatch simulate_truth(const Example& ex, const TimeGrid& grid, int count, Rng& rng) {
  Rng state_rng = rng.substream(Stream::kTruth);
  Rng noise_rng = rng.substream(Stream::kObservationNoise);
  TruthBatch out;
  Mat x = ex.prior.sample(state_rng, count);
  out.states.push_back(x);
  const double dt = grid.tau();
  for (int k = 1; k <= grid.observations; ++k) {
    x = em_propagate(*ex.model, std::move(x), dt, grid.substeps, state_rng);
    check_finite(x, *ex.model, k * grid.substeps);
    out.states.push_back(x);
    out.obs.push_back(ex.observation->h(x) + ex.observation->sample_noise(noise_rng, count));
  }
  return out;
}

std::vector<TrainingPair> simulate_training_batch(const Example& ex, const TimeGrid& grid,
                                                  int batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("simulate_training_batch: batch >= 1");
  Rng aux_rng = rng.substream(Stream::kAuxiliary);
  Rng sig_rng = rng.substream(Stream::kTruth);
  std::vector<TrainingPair> out;
  out.reserve(batch);
  const double dt = grid.tau();
  const double sq = std::sqrt(dt);
  for (int b = 0; b < batch; ++b) {
    Trajectory aux{Mat(ex.state_dim(), grid.total_steps() + 1), grid};
    Mat x = ex.aux_init.sample(aux_rng, 1);
    aux.states.col(0) = x;
    for (int s = 1; s <= grid.total_steps(); ++s) {
      x = em_step(*ex.model, x, dt, aux_rng.normal_matrix(ex.model->noise_dim(), 1, sq));
      check_finite(x, *ex.model, s);
      aux.states.col(s) = x;
    }
    auto [signal, obs] = simulate_pair(ex, grid, sig_rng);
    out.push_back({std::move(aux), std::move(obs)});
  }
  rng = rng.substream(Stream::kAuxiliary, 1);
  return out;
}

Mat simulate_observation_histories(const Example& ex, const TimeGrid& grid, int k, int count,
                                   Rng& rng) {
  const int dp = ex.obs_dim();
  Mat out(dp * k, count);
  if (k == 0) return out;
  Rng state_rng = rng.substream(Stream::kTruth);
  Rng noise_rng = rng.substream(Stream::kObservationNoise);
  Mat s = ex.prior.sample(state_rng, count);
  for (int j = 1; j <= k; ++j) {
    s = em_propagate(*ex.model, std::move(s), grid.tau(), grid.substeps, state_rng);
    check_finite(s, *ex.model, j * grid.substeps);
    out.middleRows((j - 1) * dp, dp) = ex.observation->h(s) + ex.observation->sample_noise(noise_rng, count);
  }
  return out;
}

IntervalBatch simulate_interval_batch(const Example& ex, const TimeGrid& grid, int k, int batch,
                                      int sequences, Rng& rng) {
  IntervalBatch out;
  Rng aux_rng = rng.substream(Stream::kAuxiliary);
  Rng obs_rng = rng.substream(Stream::kObservationNoise);
  const SdeModel& model = *ex.model;
  const double dt = grid.tau();
  const double sq = std::sqrt(dt);
  Mat x = ex.aux_init.sample(aux_rng, batch);
  x = em_propagate(model, std::move(x), dt, k * grid.substeps, aux_rng);
  check_finite(x, model, k * grid.substeps);
  out.x.reserve(grid.substeps + 1);
  out.dw.reserve(grid.substeps);
  out.x.push_back(x);
  for (int n = 0; n < grid.substeps; ++n) {
    Mat dw = aux_rng.normal_matrix(model.noise_dim(), batch, sq);
    x = em_step(model, x, dt, dw);
    check_finite(x, model, k * grid.substeps + n + 1);
    out.x.push_back(x);
    out.dw.push_back(std::move(dw));
  }
  out.obs = simulate_observation_histories(ex, grid, k, sequences, obs_rng);
  return out;
}

void write_dataset(const std::filesystem::path& path, const Example& ex, const TimeGrid& grid,
                   std::uint64_t seed,
                   const std::vector<std::pair<Trajectory, ObservationSequence>>& data) {
  nlohmann::json header = {{"model", ex.spec},
                           {"grid", grid.to_json()},
                           {"seed", seed},
                           {"batch_count", data.size()},
                           {"state_dim", ex.state_dim()},
                           {"obs_dim", ex.obs_dim()},
                           {"layout", "per pair: states d x (K*N+1), then observations d' x K; column-major"}};
  std::vector<double> payload;
  for (const auto& [traj, obs] : data) {
    payload.insert(payload.end(), traj.states.data(), traj.states.data() + traj.states.size());
    payload.insert(payload.end(), obs.obs.data(), obs.obs.data() + obs.obs.size());
  }
  write_blob(path, header, payload);
}

std::vector<std::pair<Trajectory, ObservationSequence>> read_dataset(const std::filesystem::path& path,
                                                                     nlohmann::json* header) {
  Blob blob = read_blob(path);
  const TimeGrid grid = TimeGrid::from_json(blob.header.at("grid"));
  const int d = blob.header.at("state_dim");
  const int dp = blob.header.at("obs_dim");
  const std::size_t count = blob.header.at("batch_count");
  const std::size_t ns = std::size_t(d) * (grid.total_steps() + 1);
  const std::size_t no = std::size_t(dp) * grid.observations;
  if (blob.payload.size() != count * (ns + no)) throw std::runtime_error("dataset size mismatch");
  std::vector<std::pair<Trajectory, ObservationSequence>> out;
  const double* p = blob.payload.data();
  for (std::size_t i = 0; i < count; ++i) {
    Trajectory traj{Eigen::Map<const Mat>(p, d, grid.total_steps() + 1), grid};
    p += ns;
    ObservationSequence obs{Eigen::Map<const Mat>(p, dp, grid.observations)};
    p += no;
    out.emplace_back(std::move(traj), std::move(obs));
  }
  if (header) *header = blob.header;
  return out;
}

}  // namespace dfw
