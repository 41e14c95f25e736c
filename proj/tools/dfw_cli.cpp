#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dfw/bench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dfw;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

// Rows of comma-separated numbers; a non-numeric first line is a header.
Mat read_csv_matrix(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream s(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(s, cell, ',')) {
      try {
        r.push_back(std::stod(cell));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw std::runtime_error(p.string() + ": non-numeric row '" + line + "'");
    }
    first = false;
    if (!rows.empty() && r.size() != rows.front().size()) throw std::runtime_error(p.string() + ": ragged rows");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) return Mat();
  Mat m(rows.front().size(), rows.size());  // one row of the file per column
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t i = 0; i < rows[j].size(); ++i) m(i, j) = rows[j][i];
  return m;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct ModelFlags {
  std::string model;
  int dim = 0;
  int dim_obs = 0;
  double horizon = 0.0;
  int observations = 0;
  int substeps = 0;
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
  app->add_option("--model", f.model, "Example: ou, bistable, lsm, schlogl, l96");
  app->add_option("--dim", f.dim, "State dimension (ou, l96) or mass count (lsm)");
  app->add_option("--dim-obs", f.dim_obs, "Observed components (l96)");
  app->add_option("--horizon", f.horizon, "T");
  app->add_option("--observations", f.observations, "K");
  app->add_option("--substeps", f.substeps, "N");
}

// Example and grid from the experiment config (if any), overridden by flags.
std::pair<json, TimeGrid> resolve_model(const ModelFlags& f, const json& cfg, int default_substeps) {
  json ex = cfg.contains("example") ? cfg["example"] : json::object();
  if (!f.model.empty() && ex.value("name", "") != f.model) ex = {{"name", f.model}};
  if (!ex.contains("name")) throw CLI::ValidationError("--model", "no model given and no example in --config");
  if (f.dim > 0) ex[ex["name"] == "lsm" ? "r" : "d"] = f.dim;
  if (f.dim_obs > 0) ex["d_obs"] = f.dim_obs;
  TimeGrid g{1.0, 10, default_substeps};
  if (cfg.contains("grid")) {
    g.horizon = cfg["grid"].value("T", g.horizon);
    g.observations = cfg["grid"].value("K", g.observations);
    g.substeps = cfg["grid"].value("N", g.substeps);
  }
  if (f.horizon > 0) g.horizon = f.horizon;
  if (f.observations > 0) g.observations = f.observations;
  if (f.substeps > 0) g.substeps = f.substeps;
  return {ex, g};
}

void write_sidecar(const Example& ex, const fs::path& dir) {
  if (ex.name != "lsm") return;
  SpringMassParams p = ex.spec.contains("params")
                           ? SpringMassParams::from_json(ex.spec["params"])
                           : SpringMassParams::sample(ex.spec.value("r", 5), ex.spec.value("model_seed", std::uint64_t{2024}));
  write_text(dir / "lsm_params.json", p.to_json().dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Density filter workbench"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  fs::path config_path;
  fs::path out_dir = ".";
  int threads = 1;
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--config", config_path, "JSON config")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate signal paths and observations into a dataset blob");
  ModelFlags sim_flags;
  int sim_count = 100;
  fs::path sim_out = "dataset.blob";
  add_model_flags(sim, sim_flags);
  sim->add_option("--count", sim_count, "Number of paths")->check(CLI::PositiveNumber);
  sim->add_option("--out", sim_out, "Dataset file name, relative to --out-dir");

  // train
  auto* train = app.add_subcommand("train", "Train a deep density filter");
  ModelFlags train_flags;
  std::string train_method = "logbsdef";
  fs::path train_out;
  add_model_flags(train, train_flags);
  train->add_option("--method", train_method, "dsf, logdsf, bsdef, logbsdef")
      ->check(CLI::IsMember({"dsf", "logdsf", "bsdef", "logbsdef"}));
  train->add_option("--out", train_out, "Checkpoint directory (default <out-dir>/<method>)");

  // filter
  auto* filt = app.add_subcommand("filter", "Run a classical filter and print per-step moments");
  ModelFlags filt_flags;
  std::string filt_method = "kf";
  int filt_members = 1000;
  fs::path filt_obs;
  std::string filt_out = "filter.csv";
  add_model_flags(filt, filt_flags);
  filt->add_option("--method", filt_method, "kf, ekf, enkf, pf")->check(CLI::IsMember({"kf", "ekf", "enkf", "pf"}));
  filt->add_option("--members", filt_members, "Ensemble size or particle count")->check(CLI::PositiveNumber);
  filt->add_option("--obs", filt_obs, "Observation CSV, one row per t_k (default: simulated)")
      ->check(CLI::ExistingFile);
  filt->add_option("--out", filt_out, "Output CSV, relative to --out-dir; '-' for stdout");

  // eval-density
  auto* evd = app.add_subcommand("eval-density", "Evaluate a trained filter's log-density at query points");
  fs::path evd_ckpt, evd_obs, evd_points;
  int evd_k = 0;
  std::string evd_norm;
  std::string evd_out = "-";
  evd->add_option("--checkpoint", evd_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  evd->add_option("--obs", evd_obs, "Observation CSV, one row per t_k")->required()->check(CLI::ExistingFile);
  evd->add_option("--points", evd_points, "Query points CSV, one row per point")->required()->check(CLI::ExistingFile);
  evd->add_option("--k", evd_k, "Observation step (default: every step covered by --obs)");
  evd->add_option("--normalize", evd_norm, "quad, i-ekf or i-g; omitted = unnormalized")
      ->check(CLI::IsMember({"quad", "i-ekf", "i-g"}));
  evd->add_option("--out", evd_out, "Output CSV, relative to --out-dir; '-' for stdout");

  // bench
  auto* bench = app.add_subcommand("bench", "Run an experiment config and write metrics and manifest");
  std::string bench_tag;
  bench->add_option("--tag", bench_tag, "Output file prefix (default: config file stem)");

  // report
  auto* rep = app.add_subcommand("report", "Summarize metrics CSVs and timing from manifests");
  std::vector<fs::path> rep_metrics, rep_manifests;
  rep->add_option("--metrics", rep_metrics, "Metrics CSV files")->check(CLI::ExistingFile);
  rep->add_option("--manifests", rep_manifests, "Manifest JSON files")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = config_path.empty() ? json::object() : read_json(config_path);
    fs::create_directories(out_dir);

    if (*sim) {
      auto [exj, grid] = resolve_model(sim_flags, cfg, 128);
      const Example ex = make_example(exj);
      Rng rng = Rng(seed).substream(Stream::kTruth);
      std::vector<std::pair<Trajectory, ObservationSequence>> data;
      for (int i = 0; i < sim_count; ++i) data.push_back(simulate_pair(ex, grid, rng));
      write_dataset(out_dir / sim_out, ex, grid, seed, data);
      write_sidecar(ex, out_dir);
      std::cerr << "wrote " << (out_dir / sim_out).string() << " (" << sim_count << " paths)\n";
    } else if (*train) {
      auto [exj, grid] = resolve_model(train_flags, cfg, 64);
      const Example ex = make_example(exj);
      json tj = json::object();
      if (cfg.contains("methods")) {
        for (const auto& m : cfg["methods"])
          if (m.value("name", "") == train_method) tj = m.value("train", json::object());
      } else if (!cfg.empty()) {
        tj = cfg;
      }
      tj["method"] = train_method;
      const DeepTrainConfig tc = DeepTrainConfig::from_json(tj);
      EventLog events;
      TrainReport report;
      const fs::path dir = train_out.empty() ? out_dir / train_method : train_out;
      try {
        DensityFilter f = train_deep(ex, grid, tc, seed, &events, &report);
        f.save(dir, {{"train", tc.to_json()}, {"seed", seed}, {"report", report.to_json()}});
      } catch (const TrainingDivergence& e) {
        json j = report.to_json();
        j["diverged"] = true;
        j["divergence"] = e.what();
        write_text(dir / "report.json", j.dump(2) + "\n");
        std::cerr << "training diverged: " << e.what() << "\n";
        return 2;
      }
      write_sidecar(ex, dir);
      write_text(dir / "report.json", report.to_json().dump(2) + "\n");
      std::cerr << "saved " << dir.string() << " (" << report.seconds << " s)\n";
    } else if (*filt) {
      auto [exj, grid] = resolve_model(filt_flags, cfg, 128);
      const Example ex = make_example(exj);
      const Rng root(seed);
      ObservationSequence obs;
      if (!filt_obs.empty()) {
        obs.obs = read_csv_matrix(filt_obs);
        if (obs.obs.rows() != ex.obs_dim()) throw std::runtime_error("observation CSV width != d'");
        grid.observations = obs.size();
      } else {
        Rng r = root.substream(Stream::kEvaluation);
        obs = simulate_pair(ex, grid, r).second;
      }
      Rng rng = root.substream(Stream::kFilter);
      std::ostringstream out;
      const int d = ex.state_dim();
      out << "k,t";
      for (int i = 0; i < d; ++i) out << ",mean_" << i;
      for (int i = 0; i < d; ++i) out << ",var_" << i;
      out << '\n';
      auto emit = [&](int k, const Vec& m, const Mat& c) {
        out << k << ',' << fmt(grid.t(k));
        for (int i = 0; i < d; ++i) out << ',' << fmt(m[i]);
        for (int i = 0; i < d; ++i) out << ',' << fmt(c(i, i));
        out << '\n';
      };
      const double dt = grid.interval();
      if (filt_method == "kf" || filt_method == "ekf") {
        GaussianBelief b = GaussianBelief::from(ex.prior);
        for (int k = 1; k <= obs.size(); ++k) {
          b = filt_method == "kf" ? kf_step(b, ex, dt, grid.substeps, obs.at(k))
                                  : ekf_step(b, ex, dt, grid.substeps, obs.at(k));
          emit(k, b.mean, b.cov);
        }
      } else if (filt_method == "enkf") {
        Mat ens = ex.prior.sample(rng, filt_members);
        for (int k = 1; k <= obs.size(); ++k) {
          ens = enkf_step(ens, ex, dt, grid.substeps, obs.at(k), rng);
          const Moments m = ensemble_moments(ens);
          emit(k, m.mean, m.cov);
        }
      } else {
        ParticleCloud cloud = ParticleCloud::from(ex.prior, filt_members, rng);
        for (int k = 1; k <= obs.size(); ++k) {
          ParticleCloud w;
          cloud = pf_step(cloud, ex, dt, grid.substeps, obs.at(k), rng, &w);
          const Moments m = cloud_moments(w);
          emit(k, m.mean, m.cov);
        }
      }
      if (filt_out == "-") {
        std::cout << out.str();
      } else {
        write_text(out_dir / filt_out, out.str());
      }
    } else if (*evd) {
      const DensityFilter f = DensityFilter::load(evd_ckpt);
      const Mat obs = read_csv_matrix(evd_obs);
      const Mat x = read_csv_matrix(evd_points);
      const int d = f.example().state_dim();
      if (obs.rows() != f.example().obs_dim()) throw std::runtime_error("observation CSV width != d'");
      if (x.rows() != d) throw std::runtime_error("points CSV width != d");
      const int kmax = std::min<int>(obs.cols(), f.trained_steps());
      const int k0 = evd_k > 0 ? evd_k : 1;
      const int k1 = evd_k > 0 ? evd_k : kmax;
      if (k1 > kmax) throw std::runtime_error("--k exceeds the observations or trained steps");
      std::unique_ptr<Normalizer> norm;
      if (!evd_norm.empty()) {
        Normalizer::Options o;
        o.method = norm_method_from_string(evd_norm);
        o.seed = seed;
        norm = std::make_unique<Normalizer>(f.example(), f.grid().with_substeps(128), o);
      }
      std::ostringstream out;
      out << "k";
      for (int i = 0; i < d; ++i) out << ",x_" << i;
      out << ",log_density\n";
      Rng rng = Rng(seed).substream(Stream::kNormalization, 1);
      for (int k = k0; k <= k1; ++k) {
        Vec lp = f.log_density(k, x, obs);
        if (norm) {
          const auto est = norm->estimate([&](const Mat& y) { return f.log_density(k, y, obs); }, k, obs, rng);
          lp.array() -= est.log_z;
        }
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
          out << k;
          for (int i = 0; i < d; ++i) out << ',' << fmt(x(i, j));
          out << ',' << fmt(lp[j]) << '\n';
        }
      }
      if (evd_out == "-") {
        std::cout << out.str();
      } else {
        write_text(out_dir / evd_out, out.str());
      }
    } else if (*bench) {
      if (config_path.empty()) throw CLI::ValidationError("--config", "bench needs --config");
      ExperimentConfig ec = ExperimentConfig::from_json(cfg);
      if (app.get_option("--seed")->count() > 0) ec.seed = seed;
      if (app.get_option("--threads")->count() > 0) ec.threads = threads;
      const std::string tag = bench_tag.empty() ? config_path.stem().string() : bench_tag;
      ec.checkpoint_dir = out_dir / (tag + "_checkpoints");
      const ExperimentResult r = run_experiment(ec);
      write_text(out_dir / (tag + "_metrics.csv"), format_metrics_csv(r.records));
      write_text(out_dir / (tag + "_manifest.json"), r.manifest.to_json().dump(2) + "\n");
      write_sidecar(make_example(ec.example), out_dir);
      for (const auto& [m, why] : r.manifest.failed_methods) std::cerr << "method " << m << " failed: " << why << "\n";
      std::cout << summary_report(r.records);
    } else if (*rep) {
      std::vector<MetricRecord> all;
      for (const auto& p : rep_metrics) {
        auto r = read_metrics_csv(p);
        all.insert(all.end(), r.begin(), r.end());
      }
      std::vector<RunManifest> manifests;
      for (const auto& p : rep_manifests) manifests.push_back(RunManifest::from_json(read_json(p)));
      if (!all.empty()) std::cout << summary_report(all);
      const std::string timing = timing_report(manifests);
      write_text(out_dir / "timing.csv", timing);
      if (!manifests.empty()) std::cout << '\n' << timing;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
