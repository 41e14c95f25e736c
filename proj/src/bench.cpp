#include "dfw/bench.hpp"

#include <array>
#include <atomic>
#include <map>
#include <mutex>
#include <tuple>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#ifndef DFW_VERSION
#define DFW_VERSION "unknown"
#endif

namespace dfw {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Per-step filter output: a mean and a normalized log-density.

struct StepOutput {
  Vec mean;
  std::function<Vec(const Mat&)> log_pdf;
  bool failed = false;
};

StepOutput gaussian_output(const GaussianBelief& b) {
  auto g = std::make_shared<Gaussian>(b.mean, b.cov);
  return {b.mean, [g](const Mat& x) { return g->log_pdf(x); }};
}

StepOutput kde_output(const Vec& mean, Mat points, Vec weights, EventLog* log) {
  auto kde = std::make_shared<Kde>(std::move(points), std::move(weights), log);
  return {mean, [kde](const Mat& x) { return kde->log_pdf(x); }};
}

/// Fills steps[k-1..K-1] as failed, keeping the last finite mean.
void mark_failed(std::vector<StepOutput>& steps, int from_k, const Vec& last_mean) {
  for (int k = from_k; k <= static_cast<int>(steps.size()); ++k) {
    steps[k - 1].failed = true;
    steps[k - 1].mean = last_mean;
    steps[k - 1].log_pdf = [](const Mat& x) { return Vec::Constant(x.cols(), -INFINITY); };
  }
}

class GaussianReference : public Reference {
 public:
  explicit GaussianReference(std::vector<GaussianBelief> b) {
    for (auto& x : b) g_.emplace_back(x.mean, x.cov);
  }
  Vec mean(int k) const override { return g_.at(k - 1).mean(); }
  Vec log_pdf(int k, const Mat& x) const override { return g_.at(k - 1).log_pdf(x); }
  Mat sample(int k, int n, Rng& rng) const override { return g_.at(k - 1).sample(rng, n); }

 private:
  std::vector<Gaussian> g_;
};

class ParticleReference : public Reference {
 public:
  ParticleReference(std::vector<Kde> kde, std::vector<Vec> means) : kde_(std::move(kde)), means_(std::move(means)) {}
  Vec mean(int k) const override { return means_.at(k - 1); }
  Vec log_pdf(int k, const Mat& x) const override { return kde_.at(k - 1).log_pdf(x); }
  Mat sample(int k, int n, Rng& rng) const override { return kde_.at(k - 1).resample_points(rng, n); }

 private:
  std::vector<Kde> kde_;
  std::vector<Vec> means_;
};

// ---------------------------------------------------------------------------
// Method runners.

struct PreparedMethod {
  MethodConfig cfg;
  std::shared_ptr<const DensityFilter> filter;  // deep methods
};

struct MethodTimes {
  double estimate = 0.0;
  double density = 0.0;
  double points = 0.0;
};

std::vector<StepOutput> run_classical(const PreparedMethod& pm, const Example& ex, const TimeGrid& grid,
                                      const ObservationSequence& obs, Rng rng, EventLog* log) {
  const int K = grid.observations;
  const double dt = grid.interval();
  const int sub = pm.cfg.substeps > 0 ? pm.cfg.substeps : grid.substeps;
  std::vector<StepOutput> out(K);
  Vec last = ex.prior.mean();
  int k = 1;
  try {
    if (pm.cfg.name == "kf" || pm.cfg.name == "ekf") {
      GaussianBelief b = GaussianBelief::from(ex.prior);
      for (; k <= K; ++k) {
        b = pm.cfg.name == "kf" ? kf_step(b, ex, dt, grid.substeps, obs.at(k), log)
                                : ekf_step(b, ex, dt, grid.substeps, obs.at(k), log);
        if (!b.mean.allFinite()) throw NumericalDivergence("non-finite filter mean");
        out[k - 1] = gaussian_output(b);
        last = b.mean;
      }
    } else if (pm.cfg.name == "enkf") {
      Mat ens = ex.prior.sample(rng, pm.cfg.members);
      for (; k <= K; ++k) {
        ens = enkf_step(ens, ex, dt, sub, obs.at(k), rng, log);
        const Moments m = ensemble_moments(ens);
        if (!m.mean.allFinite()) throw NumericalDivergence("non-finite filter mean");
        out[k - 1] = kde_output(m.mean, ens, Vec(), log);
        last = m.mean;
      }
    } else {
      ParticleCloud cloud = ParticleCloud::from(ex.prior, pm.cfg.members, rng);
      for (; k <= K; ++k) {
        ParticleCloud weighted;
        cloud = pf_step(cloud, ex, dt, sub, obs.at(k), rng, &weighted, pm.cfg.resampling);
        // Zero-weight (possibly non-finite) particles do not enter the KDE.
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i < weighted.size(); ++i)
          if (std::isfinite(weighted.log_weights[i])) keep.push_back(i);
        const Moments m = cloud_moments(weighted);
        if (!m.mean.allFinite()) throw NumericalDivergence("non-finite filter mean");
        out[k - 1] = kde_output(m.mean, weighted.particles(Eigen::all, keep),
                                weighted.log_weights(keep).array().exp().matrix(), log);
        last = m.mean;
      }
    }
  } catch (const NumericalDivergence& e) {
    record_event(log, "divergence", pm.cfg.label + " at k=" + std::to_string(k) + ": " + e.what());
    mark_failed(out, k, last);
  }
  return out;
}

std::vector<StepOutput> run_deep(const PreparedMethod& pm, const Normalizer& norm, const ObservationSequence& obs,
                                 Rng rng, EventLog* log) {
  const DensityFilter& f = *pm.filter;
  const int K = f.grid().observations;
  std::vector<StepOutput> out(K);
  Vec last = f.example().prior.mean();
  for (int k = 1; k <= K; ++k) {
    try {
      const Mat seq = obs.obs;
      const auto est = norm.estimate([&f, k, &seq](const Mat& x) { return f.log_density(k, x, seq); }, k, seq, rng);
      const double lz = est.log_z;
      auto fp = pm.filter;
      out[k - 1] = {est.mean, [fp, k, seq, lz](const Mat& x) { return Vec(fp->log_density(k, x, seq).array() - lz); }};
      if (!est.mean.allFinite()) throw NumericalDivergence("non-finite filter mean");
      last = est.mean;
    } catch (const NumericalDivergence& e) {
      record_event(log, "divergence", pm.cfg.label + " at k=" + std::to_string(k) + ": " + e.what());
      mark_failed(out, k, last);
      break;
    }
  }
  return out;
}

enum MetricIndex { kFme = 0, kAe = 1, kKld = 2, kNll = 3 };
using SeqValues = std::array<double, 4>;

struct SequenceResult {
  std::vector<std::vector<SeqValues>> method;  // [method][k-1]
  std::vector<double> ref_ae;                  // [k-1]
  std::vector<MethodTimes> times;
};

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex emu;
  for (int t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(emu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::unique_ptr<Reference> make_reference(const Example& ex, const ReferenceSpec& spec, const TimeGrid& grid,
                                          const ObservationSequence& obs, Rng rng, EventLog* log) {
  const int K = grid.observations;
  if (spec.kind == ReferenceSpec::Kind::kKf) {
    if (!ex.linear()) throw std::invalid_argument("kf reference requested for non-linear example '" + ex.name + "'");
    std::vector<GaussianBelief> b;
    GaussianBelief cur = GaussianBelief::from(ex.prior);
    for (int k = 1; k <= K; ++k) {
      cur = kf_step(cur, ex, grid.interval(), grid.substeps, obs.at(k), log);
      b.push_back(cur);
    }
    return std::make_unique<GaussianReference>(std::move(b));
  }
  if (spec.kind == ReferenceSpec::Kind::kPf) {
    std::vector<Kde> kde;
    std::vector<Vec> means;
    ParticleCloud cloud = ParticleCloud::from(ex.prior, spec.particles, rng);
    for (int k = 1; k <= K; ++k) {
      ParticleCloud weighted;
      cloud = pf_step(cloud, ex, grid.interval(), grid.substeps, obs.at(k), rng, &weighted);
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < weighted.size(); ++i)
        if (std::isfinite(weighted.log_weights[i])) keep.push_back(i);
      means.push_back(cloud_moments(weighted).mean);
      kde.emplace_back(weighted.particles(Eigen::all, keep), weighted.log_weights(keep).array().exp().matrix(), log);
    }
    return std::make_unique<ParticleReference>(std::move(kde), std::move(means));
  }
  return nullptr;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  EventLog events;
  ExperimentResult result;
  RunManifest& man = result.manifest;
  man.config_hash = config_hash(cfg.to_json());
  man.version = DFW_VERSION;
  const Example ex = make_example(cfg.example);
  man.state_dim = ex.state_dim();
  const TimeGrid grid = cfg.eval_grid();
  const TimeGrid deep_grid{cfg.horizon, cfg.observations, cfg.deep_substeps};
  const int K = cfg.observations;
  const Rng root(cfg.seed);

  // Methods: train or load deep filters up front.
  std::vector<PreparedMethod> methods;
  bool any_deep = false;
  for (const auto& mc : cfg.methods) {
    PreparedMethod pm{mc, nullptr};
    if (mc.deep()) {
      const DeepMethod dm = deep_method_from_string(mc.name);
      if (!is_log(dm) && ex.state_dim() >= 10 && !mc.force) {
        man.failed_methods[mc.label] = "skipped: plain deep filters at d >= 10 run only when forced";
        events.record("skipped", mc.label + ": plain mode at d >= 10 not forced");
        continue;
      }
      const auto t0 = Clock::now();
      try {
        if (!mc.checkpoint.empty()) {
          pm.filter = std::make_shared<DensityFilter>(DensityFilter::load(mc.checkpoint));
        } else {
          TrainReport rep;
          DensityFilter f = train_deep(ex, deep_grid, *mc.train, cfg.seed, &events, &rep);
          man.training[mc.label] = rep.to_json();
          if (!cfg.checkpoint_dir.empty()) f.save(cfg.checkpoint_dir / mc.label, mc.train->to_json());
          pm.filter = std::make_shared<DensityFilter>(std::move(f));
        }
      } catch (const TrainingDivergence& e) {
        man.failed_methods[mc.label] = e.what();
        events.record("divergence", mc.label + ": " + e.what());
        continue;
      }
      if (pm.filter->trained_steps() < K) {
        man.failed_methods[mc.label] = "filter trained for fewer than K steps";
        continue;
      }
      man.timings.push_back({mc.label, "train", seconds_since(t0), 1.0});
      any_deep = true;
    }
    methods.push_back(std::move(pm));
  }

  std::unique_ptr<Normalizer> norm;
  if (any_deep) {
    Normalizer::Options o = cfg.normalization;
    o.seed = cfg.seed;
    norm = std::make_unique<Normalizer>(ex, grid, o, &events);
  }

  Rng truth_rng = root.substream(Stream::kEvaluation, 0);
  const TruthBatch truth = simulate_truth(ex, grid, cfg.sequences, truth_rng);
  const bool have_ref = cfg.reference.kind != ReferenceSpec::Kind::kNone;
  const int J = cfg.kld_samples;
  const int nm = static_cast<int>(methods.size());

  std::vector<SequenceResult> per_seq(cfg.sequences);
  parallel_for(cfg.sequences, cfg.threads, [&](int m) {
    SequenceResult& res = per_seq[m];
    const ObservationSequence obs = truth.sequence(m);
    const auto ref = make_reference(ex, cfg.reference, grid, obs, root.substream(Stream::kReference, m), &events);
    // KLD sample points per k, drawn once per sequence.
    std::vector<Mat> z(K);
    std::vector<Vec> ref_lp(K);
    if (ref) {
      Rng zr = root.substream(Stream::kEvaluation, 1 + std::uint64_t(m));
      for (int k = 1; k <= K; ++k) {
        z[k - 1] = ref->sample(k, J, zr);
        ref_lp[k - 1] = ref->log_pdf(k, z[k - 1]);
      }
      for (int k = 1; k <= K; ++k) res.ref_ae.push_back((truth.state(k, m) - ref->mean(k)).norm());
    }
    res.method.resize(nm);
    res.times.resize(nm);
    for (int i = 0; i < nm; ++i) {
      const auto& pm = methods[i];
      const Rng mr = root.substream(std::uint64_t(Stream::kFilter), std::uint64_t(m) * 1024 + i);
      const auto t0 = Clock::now();
      std::vector<StepOutput> steps = pm.filter ? run_deep(pm, *norm, obs, mr, &events)
                                                : run_classical(pm, ex, grid, obs, mr, &events);
      res.times[i].estimate = seconds_since(t0);
      res.method[i].resize(K);
      for (int k = 1; k <= K; ++k) {
        const StepOutput& so = steps[k - 1];
        const Vec s = truth.state(k, m);
        SeqValues v{};
        v[kAe] = (s - so.mean).norm();
        const auto t1 = Clock::now();
        v[kNll] = nll_term(so.log_pdf(s)[0]);
        if (ref) {
          v[kFme] = (ref->mean(k) - so.mean).norm();
          const Vec lq = so.log_pdf(z[k - 1]);
          double acc = 0.0;
          for (int j = 0; j < J; ++j) acc += kld_term(ref_lp[k - 1][j], lq[j]);
          v[kKld] = acc / J;
        }
        res.times[i].density += seconds_since(t1);
        res.times[i].points += ref ? J + 1 : 1;
        res.method[i][k - 1] = v;
      }
    }
  });

  // Ordered reduction.
  for (int i = 0; i < nm; ++i) {
    const std::string& label = methods[i].cfg.label;
    MethodTimes tt;
    for (const auto& r : per_seq) {
      tt.estimate += r.times[i].estimate;
      tt.density += r.times[i].density;
      tt.points += r.times[i].points;
    }
    man.timings.push_back({label, "estimate", tt.estimate, double(cfg.sequences)});
    man.timings.push_back({label, "density", tt.density, tt.points});
    for (int k = 1; k <= K; ++k) {
      std::array<double, 4> sum{};
      double ref_ae = 0.0;
      for (const auto& r : per_seq) {
        for (int q = 0; q < 4; ++q) sum[q] += r.method[i][k - 1][q];
        if (have_ref) ref_ae += r.ref_ae[k - 1];
      }
      const double M = cfg.sequences;
      const double tk = grid.t(k);
      auto emit = [&](const char* metric, double value) {
        result.records.push_back({ex.name, label, cfg.seed, tk, metric, value});
      };
      if (have_ref) emit("fme", sum[kFme] / M);
      emit("mae", sum[kAe] / M);
      if (have_ref) emit("rmae", rmae(sum[kAe] / M, ref_ae / M));
      if (have_ref) emit("kld", sum[kKld] / M);
      emit("nll", sum[kNll] / M);
    }
  }
  man.events = events.events();
  man.event_counts = events.counts();
  return result;
}

std::string timing_report(const std::vector<RunManifest>& manifests) {
  struct Acc {
    double seconds = 0.0;
    double count = 0.0;
  };
  std::map<std::tuple<std::string, int, std::string>, Acc> acc;
  for (const auto& m : manifests) {
    for (const auto& t : m.timings) {
      auto& a = acc[{t.method, m.state_dim, t.phase}];
      a.seconds += t.seconds;
      a.count += t.count;
    }
  }
  std::ostringstream out;
  out << "method,d,phase,seconds\n";
  out << std::setprecision(10);
  for (const auto& [key, a] : acc) {
    const auto& [method, d, phase] = key;
    double v = a.seconds;
    std::string ph = phase;
    if (phase == "estimate") {
      v = a.count > 0 ? a.seconds / a.count : 0.0;
      ph = "estimate_per_trajectory";
    } else if (phase == "density") {
      v = a.count > 0 ? 1000.0 * a.seconds / a.count : 0.0;
      ph = "density_per_1000_points";
    }
    out << method << ',' << d << ',' << ph << ',' << v << '\n';
  }
  return out.str();
}

std::vector<MetricRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "example,method,seed,t_k,metric,value") throw std::runtime_error(path.string() + ": bad header");
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream s(line);
    MetricRecord r;
    std::string f;
    std::getline(s, r.example, ',');
    std::getline(s, r.method, ',');
    std::getline(s, f, ',');
    r.seed = std::stoull(f);
    std::getline(s, f, ',');
    r.t_k = std::stod(f);
    std::getline(s, r.metric, ',');
    std::getline(s, f, ',');
    r.value = std::stod(f);
    out.push_back(std::move(r));
  }
  return out;
}

std::string summary_report(const std::vector<MetricRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, int>> acc;
  for (const auto& r : records) {
    auto& a = acc[{r.example, r.method, r.metric}];
    a.first += r.value;
    ++a.second;
  }
  std::ostringstream out;
  out << std::left << std::setw(12) << "example" << std::setw(14) << "method" << std::setw(8) << "metric"
      << "time-average\n";
  for (const auto& [key, a] : acc) {
    const auto& [ex, method, metric] = key;
    out << std::setw(12) << ex << std::setw(14) << method << std::setw(8) << metric << std::setprecision(6)
        << a.first / a.second << '\n';
  }
  return out.str();
}

}  // namespace dfw
