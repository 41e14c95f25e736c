#include "dfw/deep_train.hpp"

#include <chrono>
#include <iostream>

namespace dfw {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Observation histories with precomputed log Z of the Bayes-updated
/// density phi_{k-1} L(o_k, .) for one observation step k >= 1.
struct NormPool {
  Mat hist;  // d' k x S
  Vec log_z;
};

NormPool build_pool(const DensityFilter& filter, const Normalizer& norm, int k, int size, Rng rng) {
  const Example& ex = filter.example();
  const int dp = ex.obs_dim();
  Rng sim_rng = rng.substream(Stream::kTruth);
  NormPool pool{simulate_observation_histories(ex, filter.grid(), k, size, sim_rng), Vec(size)};
  Rng is_rng = rng.substream(Stream::kNormalization);
  for (int s = 0; s < size; ++s) {
    const Mat seq = Eigen::Map<const Mat>(pool.hist.col(s).data(), dp, k);
    pool.log_z[s] = norm.estimate([&](const Mat& x) { return filter.log_density(k, x, seq); }, k, seq, is_rng).log_z;
  }
  return pool;
}

/// Histories (and log Z) for one batch: count pool sequences, each shared by
/// a contiguous block of B / count elements.
void draw_from_pool(const NormPool& pool, int batch, int count, Rng& rng, Mat& hist, Vec& log_z) {
  hist.resize(pool.hist.rows(), batch);
  log_z.resize(batch);
  const int per = (batch + count - 1) / count;
  for (int c = 0; c < count; ++c) {
    const auto s = static_cast<Eigen::Index>(rng.uniform() * pool.hist.cols()) % pool.hist.cols();
    for (int b = c * per; b < std::min(batch, (c + 1) * per); ++b) {
      hist.col(b) = pool.hist.col(s);
      log_z[b] = pool.log_z[s];
    }
  }
}

void progress(const DeepTrainConfig& cfg, int k, int n, long it, double loss, double lr) {
  if (cfg.log_every > 0 && it % cfg.log_every == 0) {
    std::cerr << "[" << to_string(cfg.method) << "] k=" << k;
    if (n >= 0) std::cerr << " n=" << n;
    std::cerr << " it=" << it << " loss=" << loss << " lr=" << lr << "\n";
  }
}

int steps_to_train(const DeepTrainConfig& cfg, const TimeGrid& grid) {
  return cfg.steps < 0 ? grid.observations : std::min(cfg.steps, grid.observations);
}

}  // namespace

DeepTrainConfig DeepTrainConfig::from_json(const nlohmann::json& j) {
  DeepTrainConfig c;
  c.method = deep_method_from_string(j.at("method"));
  c.net.hidden_layers = j.value("hidden_layers", 3);
  c.net.width_phi = j.value("width_phi", 128);
  c.net.width_v = j.value("width_v", 32);
  c.batch = j.value("batch", 512);
  if (j.contains("lr")) {
    const auto& lr = j["lr"];
    c.lr.eta_max = lr.value("max", 1e-4);
    c.lr.eta_min = lr.value("min", c.lr.eta_max);
    c.lr.cycle = lr.value("cycle", 80);
    c.lr.patience = lr.value("patience", 50);
    c.lr.window = lr.value("window", 200);
  }
  c.early_stopping = j.value("early_stopping", true);
  c.max_iterations = j.value("max_iterations", 20000);
  c.dataset_batches = j.value("dataset_batches", 20000);
  c.update_epochs = j.value("update_epochs", 100);
  c.prediction_epochs = j.value("prediction_epochs", 10);
  if (j.contains("normalization")) {
    const auto& n = j["normalization"];
    c.norm.method = norm_method_from_string(n.value("method", "quad"));
    c.norm.samples = n.value("samples", 256);
    c.norm.inflation = n.value("inflation", 0.0);
    c.norm.moment_paths = n.value("moment_paths", 100000);
    c.norm_count = n.value("count", 64);
    c.norm_pool = n.value("pool", 2048);
  }
  c.steps = j.value("steps", -1);
  c.log_every = j.value("log_every", 0);
  return c;
}

nlohmann::json DeepTrainConfig::to_json() const {
  return {{"method", to_string(method)},
          {"hidden_layers", net.hidden_layers},
          {"width_phi", net.width_phi},
          {"width_v", net.width_v},
          {"batch", batch},
          {"lr",
           {{"max", lr.eta_max},
            {"min", lr.eta_min},
            {"cycle", lr.cycle},
            {"patience", lr.patience},
            {"window", lr.window}}},
          {"early_stopping", early_stopping},
          {"max_iterations", max_iterations},
          {"dataset_batches", dataset_batches},
          {"update_epochs", update_epochs},
          {"prediction_epochs", prediction_epochs},
          {"normalization",
           {{"method", dfw::to_string(norm.method)},
            {"samples", norm.samples},
            {"inflation", norm.inflation},
            {"moment_paths", norm.moment_paths},
            {"count", norm_count},
            {"pool", norm_pool}}},
          {"steps", steps},
          {"log_every", log_every}};
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& r : steps) {
    s.push_back({{"k", r.k},
                 {"n", r.n},
                 {"iterations", r.iterations},
                 {"final_loss", r.final_loss},
                 {"stopped_early", r.stopped_early},
                 {"seconds", r.seconds}});
  }
  return {{"steps", s}, {"seconds", seconds}, {"diverged", diverged}, {"divergence", divergence}};
}

DensityFilter train_bsdef(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg, std::uint64_t seed,
                          EventLog* log, TrainReport* report) {
  if (!is_bsde(cfg.method)) throw std::invalid_argument("train_bsdef: method must be bsdef or logbsdef");
  const auto t_run = Clock::now();
  DensityFilter filter(cfg.method, ex, grid, cfg.net);
  const Rng root(seed);
  Rng init = root.substream(Stream::kInit);
  std::unique_ptr<Normalizer> norm;
  if (cfg.norm_count > 0) {
    Normalizer::Options o = cfg.norm;
    o.seed = seed;
    norm = std::make_unique<Normalizer>(ex, grid, o, log);
  }
  const int K = steps_to_train(cfg, grid);
  const int N = grid.substeps;
  for (int k = 0; k < K; ++k) {
    const auto t_step = Clock::now();
    Mlp<double> phi = k == 0 ? filter.new_phi(init) : warm_start(filter.phi_nets()[k - 1]);
    std::vector<Mlp<double>> vbar;
    for (int n = 0; n < N; ++n) vbar.push_back(k == 0 ? filter.new_vbar(init) : warm_start(filter.vbar_nets()[k - 1][n]));
    TrainState<double> phi_state(phi.size(), cfg.lr);
    std::vector<Adam<double>> v_adam;
    for (const auto& v : vbar) v_adam.emplace_back(v.size());

    NormPool pool;
    const bool normalized = norm && k >= 1;
    if (normalized) pool = build_pool(filter, *norm, k, cfg.norm_pool, root.substream(Stream::kNormalization, k));

    StepReport rep{k, -1};
    double loss = 0.0;
    Mat hist;
    Vec log_z;
    for (long it = 0; it < cfg.max_iterations; ++it) {
      Rng brng = root.substream(std::uint64_t(Stream::kTraining), (std::uint64_t(k) << 40) | std::uint64_t(it));
      IntervalBatch ib = simulate_interval_batch(ex, grid, k, cfg.batch, normalized ? 0 : cfg.batch, brng);
      if (normalized) {
        draw_from_pool(pool, cfg.batch, cfg.norm_count, brng, hist, log_z);
      } else {
        hist = std::move(ib.obs);
      }
      const Vec* lz = normalized ? &log_z : nullptr;
      BsdeGradients g;
      try {
        const Vec target = bsde_terminal(filter, k, ib.x.back(), hist, lz);
        const BsdeRollout r = bsde_rollout(filter, phi, vbar, ib.x, ib.dw, hist);
        g = bsde_backward(filter, phi, vbar, r, target);
      } catch (const NumericalDivergence& e) {
        record_event(log, "divergence", "k=" + std::to_string(k) + ": " + e.what());
        throw TrainingDivergence(k, -1, std::string("training diverged at k=") + std::to_string(k) + ": " + e.what());
      }
      loss = g.loss;
      if (!std::isfinite(loss) || !g.phi.allFinite()) {
        record_event(log, "divergence", "non-finite loss at k=" + std::to_string(k));
        throw TrainingDivergence(k, -1, "non-finite loss at k=" + std::to_string(k));
      }
      const double lr = phi_state.monitor.learning_rate();
      phi_state.adam.step(phi.params(), g.phi, lr);
      for (int n = 0; n < N; ++n) v_adam[n].step(vbar[n].params(), g.vbar[n], lr);
      progress(cfg, k, -1, it, loss, lr);
      rep.iterations = it + 1;
      if (phi_state.monitor.observe(loss) && cfg.early_stopping) {
        rep.stopped_early = true;
        break;
      }
    }
    const auto& means = phi_state.monitor.window_means();
    rep.final_loss = means.empty() ? loss : means.back();
    rep.seconds = seconds_since(t_step);
    filter.phi_nets().push_back(std::move(phi));
    filter.vbar_nets().push_back(std::move(vbar));
    if (report) report->steps.push_back(rep);
    if (cfg.log_every > 0) {
      std::cerr << "[" << to_string(cfg.method) << "] step " << k << " done: " << rep.iterations
                << " iterations, loss " << rep.final_loss << ", " << rep.seconds << " s\n";
    }
  }
  if (report) report->seconds = seconds_since(t_run);
  return filter;
}

DensityFilter train_dsf(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg, std::uint64_t seed,
                        EventLog* log, TrainReport* report) {
  if (is_bsde(cfg.method)) throw std::invalid_argument("train_dsf: method must be dsf or logdsf");
  const auto t_run = Clock::now();
  DensityFilter filter(cfg.method, ex, grid, cfg.net);
  const Rng root(seed);
  Rng init = root.substream(Stream::kInit);
  std::unique_ptr<Normalizer> norm;
  if (cfg.norm_count > 0) {
    Normalizer::Options o = cfg.norm;
    o.seed = seed;
    norm = std::make_unique<Normalizer>(ex, grid, o, log);
  }
  const int K = steps_to_train(cfg, grid);
  const int N = grid.substeps;
  for (int k = 0; k < K; ++k) {
    const bool normalized = norm && k >= 1;
    NormPool pool;
    if (normalized) pool = build_pool(filter, *norm, k, cfg.norm_pool, root.substream(Stream::kNormalization, k));

    // Dataset for this observation interval, reused by all N networks.
    struct Batch {
      std::vector<Mat> x;
      Mat hist;
      Vec log_z;
    };
    std::vector<Batch> data(cfg.dataset_batches);
    for (int b = 0; b < cfg.dataset_batches; ++b) {
      Rng brng = root.substream(std::uint64_t(Stream::kTraining), (std::uint64_t(k) << 40) | std::uint64_t(b));
      IntervalBatch ib = simulate_interval_batch(ex, grid, k, cfg.batch, normalized ? 0 : cfg.batch, brng);
      data[b].x = std::move(ib.x);
      if (normalized) {
        draw_from_pool(pool, cfg.batch, cfg.norm_count, brng, data[b].hist, data[b].log_z);
      } else {
        data[b].hist = std::move(ib.obs);
      }
    }

    filter.dsf_nets().emplace_back();
    for (int n = 0; n < N; ++n) {
      const auto t_step = Clock::now();
      Mlp<double> net = (k == 0 && n == 0) ? filter.new_phi(init)
                        : n == 0           ? warm_start(filter.predictor(k - 1))
                                           : warm_start(filter.dsf_nets()[k].back());
      std::vector<Vec> targets(data.size());
      for (std::size_t b = 0; b < data.size(); ++b) {
        const Vec* lz = (normalized && n == 0) ? &data[b].log_z : nullptr;
        targets[b] = ds_target(filter, k, n, data[b].x[n + 1], data[b].hist, lz);
        if (!targets[b].allFinite()) {
          record_event(log, "divergence", "non-finite target at k=" + std::to_string(k) + " n=" + std::to_string(n));
          throw TrainingDivergence(k, n, "non-finite target at k=" + std::to_string(k) + " n=" + std::to_string(n));
        }
      }
      TrainState<double> state(net.size(), cfg.lr);
      const int epochs = n == 0 ? cfg.update_epochs : cfg.prediction_epochs;
      StepReport rep{k, n + 1};
      double loss = 0.0;
      Eigen::VectorXd grad(net.size());
      Mlp<double>::Tape tape;
      bool stop = false;
      for (int e = 0; e < epochs && !stop; ++e) {
        for (std::size_t b = 0; b < data.size() && !stop; ++b) {
          const Mat& out = net.forward(filter.make_input(data[b].x[n], data[b].hist), tape);
          const Vec diff = out.row(0).transpose() - targets[b];
          loss = diff.squaredNorm() / double(diff.size());
          if (!std::isfinite(loss)) {
            record_event(log, "divergence", "non-finite loss at k=" + std::to_string(k) + " n=" + std::to_string(n));
            throw TrainingDivergence(k, n, "non-finite loss at k=" + std::to_string(k) + " n=" + std::to_string(n));
          }
          grad.setZero();
          net.backward(tape, (2.0 / double(diff.size())) * diff.transpose(), &grad);
          const double lr = state.monitor.learning_rate();
          state.adam.step(net.params(), grad, lr);
          progress(cfg, k, n, rep.iterations, loss, lr);
          ++rep.iterations;
          stop = state.monitor.observe(loss) && cfg.early_stopping;
          rep.stopped_early = stop;
        }
      }
      const auto& means = state.monitor.window_means();
      rep.final_loss = means.empty() ? loss : means.back();
      rep.seconds = seconds_since(t_step);
      filter.dsf_nets()[k].push_back(std::move(net));
      if (report) report->steps.push_back(rep);
    }
    if (cfg.log_every > 0) std::cerr << "[" << to_string(cfg.method) << "] step " << k << " done\n";
  }
  if (report) report->seconds = seconds_since(t_run);
  return filter;
}

DensityFilter train_deep(const Example& ex, const TimeGrid& grid, const DeepTrainConfig& cfg, std::uint64_t seed,
                         EventLog* log, TrainReport* report) {
  try {
    return is_bsde(cfg.method) ? train_bsdef(ex, grid, cfg, seed, log, report)
                               : train_dsf(ex, grid, cfg, seed, log, report);
  } catch (const TrainingDivergence&) {
    throw;
  } catch (const NumericalDivergence& e) {
    // sample paths or normalization blew up outside the loss evaluation
    record_event(log, "divergence", e.what());
    throw TrainingDivergence(-1, -1, std::string("training diverged: ") + e.what());
  }
}

}  // namespace dfw
