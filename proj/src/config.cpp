#include <cstdio>

#include "dfw/bench.hpp"

namespace dfw {

ReferenceSpec ReferenceSpec::from_json(const nlohmann::json& j) {
  ReferenceSpec r;
  const std::string kind = j.value("kind", "kf");
  if (kind == "kf") {
    r.kind = Kind::kKf;
  } else if (kind == "pf") {
    r.kind = Kind::kPf;
  } else if (kind == "none") {
    r.kind = Kind::kNone;
  } else {
    throw std::invalid_argument("unknown reference kind '" + kind + "'");
  }
  r.particles = j.value("particles", 100000);
  if (r.kind == Kind::kPf && r.particles < 2) throw std::invalid_argument("pf reference needs >= 2 particles");
  return r;
}

nlohmann::json ReferenceSpec::to_json() const {
  const char* k = kind == Kind::kKf ? "kf" : kind == Kind::kPf ? "pf" : "none";
  nlohmann::json j = {{"kind", k}};
  if (kind == Kind::kPf) j["particles"] = particles;
  return j;
}

bool MethodConfig::deep() const {
  return name == "dsf" || name == "logdsf" || name == "bsdef" || name == "logbsdef";
}

MethodConfig MethodConfig::from_json(const nlohmann::json& j) {
  MethodConfig m;
  m.name = j.at("name").get<std::string>();
  if (!(m.deep() || m.name == "kf" || m.name == "ekf" || m.name == "enkf" || m.name == "pf")) {
    throw std::invalid_argument("unknown method '" + m.name + "'");
  }
  m.label = j.value("label", m.name);
  m.members = j.value("members", j.value("particles", 1000));
  m.substeps = j.value("substeps", 0);
  const std::string rs = j.value("resampling", "systematic");
  if (rs == "systematic") {
    m.resampling = Resampling::kSystematic;
  } else if (rs == "multinomial") {
    m.resampling = Resampling::kMultinomial;
  } else {
    throw std::invalid_argument("unknown resampling scheme '" + rs + "'");
  }
  m.checkpoint = j.value("checkpoint", "");
  m.force = j.value("force", false);
  if (m.deep()) {
    nlohmann::json t = j.value("train", nlohmann::json::object());
    t["method"] = m.name;
    m.train = DeepTrainConfig::from_json(t);
  }
  return m;
}

nlohmann::json MethodConfig::to_json() const {
  nlohmann::json j = {{"name", name}, {"label", label}};
  if (name == "enkf" || name == "pf") {
    j["members"] = members;
    j["substeps"] = substeps;
  }
  if (name == "pf") j["resampling"] = resampling == Resampling::kSystematic ? "systematic" : "multinomial";
  if (train) j["train"] = train->to_json();
  if (!checkpoint.empty()) j["checkpoint"] = checkpoint;
  if (force) j["force"] = true;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.example = j.at("example");
  const auto& g = j.value("grid", nlohmann::json::object());
  c.horizon = g.value("T", 1.0);
  c.observations = g.value("K", 10);
  c.deep_substeps = g.value("N", 64);
  c.seed = j.value("seed", std::uint64_t{1});
  const auto& e = j.value("evaluation", nlohmann::json::object());
  c.sequences = e.value("sequences", 1000);
  c.eval_substeps = e.value("substeps", 128);
  c.kld_samples = e.value("kld_samples", 100);
  const auto& n = e.value("normalization", nlohmann::json::object());
  c.normalization.method = norm_method_from_string(n.value("method", "quad"));
  c.normalization.samples = n.value("samples", 1000);
  c.normalization.inflation = n.value("inflation", 0.0);
  c.normalization.moment_paths = n.value("moment_paths", 100000);
  c.reference = ReferenceSpec::from_json(e.value("reference", nlohmann::json{{"kind", "kf"}}));
  for (const auto& m : j.at("methods")) c.methods.push_back(MethodConfig::from_json(m));
  c.threads = j.value("threads", 1);
  if (c.sequences < 1 || c.observations < 1 || c.eval_substeps < 1 || c.deep_substeps < 1 || !(c.horizon > 0.0)) {
    throw std::invalid_argument("experiment config: invalid grid or sequence count");
  }
  make_example(c.example);  // validates the example block
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& x : methods) m.push_back(x.to_json());
  return {{"example", example},
          {"grid", {{"T", horizon}, {"K", observations}, {"N", deep_substeps}}},
          {"seed", seed},
          {"evaluation",
           {{"sequences", sequences},
            {"substeps", eval_substeps},
            {"kld_samples", kld_samples},
            {"normalization",
             {{"method", to_string(normalization.method)},
              {"samples", normalization.samples},
              {"inflation", normalization.inflation},
              {"moment_paths", normalization.moment_paths}}},
            {"reference", reference.to_json()}}},
          {"methods", m}};
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& p : timings) {
    t.push_back({{"method", p.method}, {"phase", p.phase}, {"seconds", p.seconds}, {"count", p.count}});
  }
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : events) ev.push_back({{"category", e.category}, {"message", e.message}});
  return {{"config_hash", config_hash},
          {"version", version},
          {"state_dim", state_dim},
          {"timings", t},
          {"events", ev},
          {"event_counts", event_counts},
          {"failed_methods", failed_methods},
          {"training", training}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.config_hash = j.value("config_hash", "");
  m.version = j.value("version", "");
  m.state_dim = j.value("state_dim", 0);
  for (const auto& t : j.value("timings", nlohmann::json::array())) {
    m.timings.push_back({t.at("method"), t.at("phase"), t.at("seconds"), t.at("count")});
  }
  for (const auto& e : j.value("events", nlohmann::json::array())) {
    m.events.push_back({e.at("category"), e.at("message")});
  }
  m.event_counts = j.value("event_counts", std::map<std::string, std::size_t>{});
  m.failed_methods = j.value("failed_methods", std::map<std::string, std::string>{});
  if (j.contains("training")) m.training = j["training"].get<std::map<std::string, nlohmann::json>>();
  return m;
}

}  // namespace dfw
