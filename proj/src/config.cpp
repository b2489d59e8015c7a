#include "demorph/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace demorph {

namespace {

class FieldReader {
 public:
  FieldReader(const Json& j, std::string where, std::vector<std::string>& problems)
      : j_(j), where_(std::move(where)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where_ + ": expected an object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }

  void read(const char* key, int& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_number_integer()) {
      out = v.get<int>();
    } else {
      bad(key, "an integer");
    }
  }

  void read(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      out = v.get<std::uint64_t>();
    } else {
      bad(key, "a non-negative integer");
    }
  }

  void read(const char* key, double& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_number()) {
      out = v.get<double>();
    } else {
      bad(key, "a number");
    }
  }

  void read(const char* key, std::optional<double>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      bad(key, "a number or null");
    }
  }

  void read(const char* key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_boolean()) {
      out = v.get<bool>();
    } else {
      bad(key, "a boolean");
    }
  }

  void read(const char* key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (v.is_string()) {
      out = v.get<std::string>();
    } else {
      bad(key, "a string");
    }
  }

  void read(const char* key, std::vector<double>& out) {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array()) return bad(key, "an array of numbers");
    std::vector<double> values;
    for (const auto& e : v) {
      if (!e.is_number()) return bad(key, "an array of numbers");
      values.push_back(e.get<double>());
    }
    out = std::move(values);
  }

  const Json* child(const char* key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) problems_.push_back(where_ + "." + key + ": unknown key");
    }
  }

  std::vector<std::string>& problems() { return problems_; }

 private:
  void bad(const char* key, const char* expected) {
    problems_.push_back(where_ + "." + key + ": expected " + expected);
  }

  const Json& j_;
  std::string where_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

void read_network(const Json& j, const std::string& where, NetworkConfig& cfg,
                  std::vector<std::string>& problems) {
  FieldReader r(j, where, problems);
  r.read("k", cfg.k);
  r.read("resolution", cfg.resolution);
  r.read("base_channels", cfg.base_channels);
  r.read("depth", cfg.depth);
  r.read("heads", cfg.heads);
  r.finish();
}

void read_train(const Json& j, const std::string& where, TrainConfig& cfg,
                std::vector<std::string>& problems) {
  FieldReader r(j, where, problems);
  std::string mode = mode_name(cfg.mode);
  r.read("mode", mode);
  try {
    cfg.mode = parse_mode(mode);
  } catch (const ConfigError& e) {
    problems.push_back(r.path("mode") + ": " + e.what());
  }
  r.read("learning_rate", cfg.learning_rate);
  r.read("batch_size", cfg.batch_size);
  r.read("epochs", cfg.epochs);
  r.read("lr_gamma", cfg.lr_gamma);
  r.read("seed", cfg.seed);
  r.read("lambda", cfg.lambda);
  r.read("checkpoint_every", cfg.checkpoint_every);
  r.read("grad_clip", cfg.grad_clip);
  if (const Json* net = r.child("net")) read_network(*net, r.path("net"), cfg.net, problems);
  r.finish();
}

[[noreturn]] void throw_problems(const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << "invalid configuration (" << problems.size() << " problem"
     << (problems.size() == 1 ? "" : "s") << "):";
  for (const auto& p : problems) os << "\n  - " << p;
  throw ConfigError(os.str());
}

std::vector<std::string> network_problems(const NetworkConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    return {std::string("net: ") + e.what()};
  }
  return {};
}

}  // namespace

std::string mode_name(TrainMode mode) {
  return mode == TrainMode::Decomposition ? "decomposition" : "demorphing";
}

TrainMode parse_mode(const std::string& name) {
  if (name == "decomposition") return TrainMode::Decomposition;
  if (name == "demorphing") return TrainMode::Demorphing;
  throw ConfigError("unknown mode '" + name + "' (expected decomposition or demorphing)");
}

Json to_json(const NetworkConfig& cfg) {
  return Json{{"k", cfg.k},
              {"resolution", cfg.resolution},
              {"base_channels", cfg.base_channels},
              {"depth", cfg.depth},
              {"heads", cfg.heads}};
}

Json to_json(const TrainConfig& cfg) {
  Json j;
  j["mode"] = mode_name(cfg.mode);
  j["learning_rate"] = cfg.learning_rate;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["lr_gamma"] = cfg.lr_gamma;
  j["seed"] = cfg.seed;
  j["lambda"] = cfg.lambda ? Json(*cfg.lambda) : Json(nullptr);
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["grad_clip"] = cfg.grad_clip;
  j["net"] = to_json(cfg.net);
  return j;
}

Json to_json(const ExperimentConfig& cfg) {
  Json j;
  j["train"] = to_json(cfg.train);
  j["data"] = Json{{"identities", cfg.data.identities},
                   {"variations", cfg.data.variations},
                   {"alphas", cfg.data.alphas},
                   {"seed", cfg.data.seed},
                   {"train_fraction", cfg.data.train_fraction},
                   {"non_morph_probes", cfg.data.non_morph_probes}};
  j["comparator"] = Json{{"kind", cfg.comparator.kind},
                         {"command", cfg.comparator.command},
                         {"tau", cfg.comparator.tau}};
  j["output_dir"] = cfg.output_dir;
  j["write_grids"] = cfg.write_grids;
  return j;
}

NetworkConfig network_config_from_json(const Json& j) {
  NetworkConfig cfg;
  std::vector<std::string> problems;
  read_network(j, "net", cfg, problems);
  if (!problems.empty()) throw_problems(problems);
  return cfg;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  std::vector<std::string> problems;
  read_train(j, "train", cfg, problems);
  if (!problems.empty()) throw_problems(problems);
  return cfg;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig cfg;
  std::vector<std::string> problems;
  FieldReader r(j, "config", problems);
  if (const Json* t = r.child("train")) read_train(*t, "train", cfg.train, problems);
  if (const Json* d = r.child("data")) {
    FieldReader dr(*d, "data", problems);
    dr.read("identities", cfg.data.identities);
    dr.read("variations", cfg.data.variations);
    dr.read("alphas", cfg.data.alphas);
    dr.read("seed", cfg.data.seed);
    dr.read("train_fraction", cfg.data.train_fraction);
    dr.read("non_morph_probes", cfg.data.non_morph_probes);
    dr.finish();
  }
  if (const Json* c = r.child("comparator")) {
    FieldReader cr(*c, "comparator", problems);
    cr.read("kind", cfg.comparator.kind);
    cr.read("command", cfg.comparator.command);
    cr.read("tau", cfg.comparator.tau);
    cr.finish();
  }
  r.read("output_dir", cfg.output_dir);
  r.read("write_grids", cfg.write_grids);
  r.finish();
  if (!problems.empty()) throw_problems(problems);
  return cfg;
}

ExperimentConfig ExperimentConfig::desk(TrainMode mode) {
  ExperimentConfig cfg;
  cfg.train = TrainConfig::desk(mode);
  if (mode == TrainMode::Demorphing) {
    cfg.data.identities = 6;
  } else {
    cfg.data.identities = 16;
  }
  return cfg;
}

std::vector<std::string> ExperimentConfig::problems() const {
  std::vector<std::string> out = train.problems();
  if (data.identities < 2) out.push_back("data.identities must be >= 2");
  if (data.variations < 1) out.push_back("data.variations must be >= 1");
  if (data.alphas.empty()) out.push_back("data.alphas must not be empty");
  for (double a : data.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) out.push_back("data.alphas entries must lie in [0,1]");
  }
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    out.push_back("data.train_fraction must lie in (0,1)");
  }
  if (data.non_morph_probes < 0) out.push_back("data.non_morph_probes must be >= 0");
  if (comparator.kind != "toy" && comparator.kind != "external") {
    out.push_back("comparator.kind must be 'toy' or 'external'");
  }
  if (comparator.kind == "external" && comparator.command.empty()) {
    out.push_back("comparator.command is required for the external comparator");
  }
  if (!(comparator.tau > -1.0 && comparator.tau < 1.0)) out.push_back("comparator.tau must lie in (-1,1)");
  if (output_dir.empty()) out.push_back("output_dir must not be empty");
  return out;
}

void ExperimentConfig::validate() const {
  const auto p = problems();
  if (!p.empty()) throw_problems(p);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json_file(path));
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  write_json_file(path, to_json(cfg));
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}


TrainConfig TrainConfig::full(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.net = NetworkConfig::full_scale(mode == TrainMode::Demorphing ? 2 : 1);
  return cfg;
}

TrainConfig TrainConfig::desk(TrainMode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.batch_size = 8;
  cfg.epochs = mode == TrainMode::Demorphing ? 400 : 300;
  cfg.grad_clip = 5.0;
  cfg.net = NetworkConfig::desk_scale(mode == TrainMode::Demorphing ? 2 : 1);
  return cfg;
}

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out;
  if (!(learning_rate > 0.0)) out.push_back("train.learning_rate must be > 0");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) out.push_back("train.lr_gamma must lie in (0,1]");
  if (batch_size < 1) out.push_back("train.batch_size must be >= 1");
  if (epochs < 1) out.push_back("train.epochs must be >= 1");
  if (checkpoint_every < 0) out.push_back("train.checkpoint_every must be >= 0");
  if (!(grad_clip >= 0.0)) out.push_back("train.grad_clip must be >= 0");
  if (lambda && !(*lambda >= 0.0 && *lambda <= 1.0)) out.push_back("train.lambda must lie in [0,1]");
  for (auto& p : network_problems(net)) out.push_back("train." + p);
  const int want_heads = mode == TrainMode::Demorphing ? 2 : 1;
  if (net.heads != want_heads) {
    out.push_back("train.net.heads must be " + std::to_string(want_heads) + " for mode " +
                  mode_name(mode));
  }
  return out;
}

void TrainConfig::validate() const {
  const auto p = problems();
  if (!p.empty()) throw_problems(p);
}

LossConfig TrainConfig::loss() const {
  return LossConfig{lambda ? *lambda : default_lambda(net.k), net.k};
}

}  // namespace demorph
