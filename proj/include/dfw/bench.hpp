#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dfw/classical.hpp"
#include "dfw/deep_train.hpp"
#include "dfw/metrics.hpp"
#include "dfw/models.hpp"
#include "dfw/normalize.hpp"
#include "dfw/sim.hpp"

namespace dfw {

/// Reference filter specification: exact KF, a particle filter with KDE
/// densities, or none (only MAE and NLL are then reported).
struct ReferenceSpec {
  enum class Kind { kKf, kPf, kNone };
  Kind kind = Kind::kKf;
  int particles = 100000;

  static ReferenceSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct MethodConfig {
  std::string name;      // kf, ekf, enkf, pf, dsf, logdsf, bsdef, logbsdef
  std::string label;     // column in the CSV, defaults to name
  int members = 1000;    // EnKF ensemble / PF particles
  int substeps = 0;      // EM substeps per interval for EnKF/PF, 0 = evaluation substeps
  Resampling resampling = Resampling::kSystematic;
  std::optional<DeepTrainConfig> train;
  std::string checkpoint;  // load instead of training when set
  bool force = false;      // run plain deep filters at d >= 10

  static MethodConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  bool deep() const;
};

/// Experiment definition mirroring the training and evaluation tables.
struct ExperimentConfig {
  nlohmann::json example = {{"name", "ou"}, {"d", 1}};
  double horizon = 1.0;
  int observations = 10;
  int deep_substeps = 64;  // N used by the deep filters' training grid
  std::uint64_t seed = 1;
  int sequences = 1000;    // M
  int eval_substeps = 128; // N_ref for signal, reference and moment ODEs
  int kld_samples = 100;   // J
  Normalizer::Options normalization;
  ReferenceSpec reference;
  std::vector<MethodConfig> methods;
  int threads = 1;
  std::filesystem::path checkpoint_dir;  // where trained filters are saved (optional)

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  TimeGrid eval_grid() const { return {horizon, observations, eval_substeps}; }
};

struct PhaseTiming {
  std::string method;
  std::string phase;  // train, estimate, density
  double seconds = 0.0;
  double count = 0.0;  // trajectories or points covered by `seconds`
};

struct RunManifest {
  std::string config_hash;
  std::string version;
  int state_dim = 0;
  std::vector<PhaseTiming> timings;
  std::vector<Event> events;
  std::map<std::string, std::size_t> event_counts;
  std::map<std::string, std::string> failed_methods;
  std::map<std::string, nlohmann::json> training;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct ExperimentResult {
  std::vector<MetricRecord> records;
  RunManifest manifest;
};

/// FNV-1a 64-bit hash of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

/// Simulates M evaluation sequences, runs the reference and every method,
/// and emits fme/mae/rmae/kld/nll per t_k (only mae/nll without a
/// reference). Method failures are recorded in the manifest; a reference
/// failure throws.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Per-sequence reference filter output at t_1..t_K.
class Reference {
 public:
  virtual ~Reference() = default;
  virtual Vec mean(int k) const = 0;
  virtual Vec log_pdf(int k, const Mat& x) const = 0;
  virtual Mat sample(int k, int n, Rng& rng) const = 0;
};

/// Runs the reference filter on one observation sequence. KF requires a
/// linear-Gaussian example (std::invalid_argument otherwise).
std::unique_ptr<Reference> make_reference(const Example& ex, const ReferenceSpec& spec, const TimeGrid& grid,
                                          const ObservationSequence& obs, Rng rng, EventLog* log = nullptr);

/// CSV `method,d,phase,seconds`: training seconds, estimation seconds per
/// trajectory and density seconds per 1000 points, averaged over manifests.
std::string timing_report(const std::vector<RunManifest>& manifests);

/// Time-averaged metric table (per method and metric) from CSV records.
std::string summary_report(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace dfw
