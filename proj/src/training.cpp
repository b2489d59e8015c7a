#include "demorph/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "demorph/array_io.hpp"
#include "demorph/config.hpp"
#include "demorph/seed.hpp"

namespace demorph {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFormat = "demorph-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

std::string array_file(const std::string& prefix, const std::string& name) {
  return "arrays/" + prefix + name + ".bin";
}

Json shape_json(const Shape& s) { return Json::array({s.n, s.c, s.h, s.w}); }

ParameterList<float> trainable(const ParameterList<float>& params) {
  ParameterList<float> out;
  for (auto* p : params) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<EpochRecord> trace_from_json(const Json& j) {
  std::vector<EpochRecord> out;
  for (const auto& r : j) out.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>()});
  return out;
}

void write_loss_csv(const fs::path& path, std::span<const EpochRecord> trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss,lr\n" << std::setprecision(17);
  for (const auto& r : trace) out << r.epoch << ',' << r.loss << ',' << r.lr << '\n';
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  auto a = acc.values();
  auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_gamma, static_cast<double>(epoch));
}

std::vector<int> balanced_batches(std::size_t n, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (n == 0) return {};
  const std::size_t count = (n + batch_size - 1) / batch_size;
  std::vector<int> sizes(count, static_cast<int>(n / count));
  for (std::size_t i = 0; i < n % count; ++i) ++sizes[i];
  return sizes;
}

// ---------------------------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(const ParameterList<float>& params) {
  for (auto* p : trainable(params)) {
    state_.first_moment.emplace_back(p->value.shape());
    state_.second_moment.emplace_back(p->value.shape());
  }
}

void AdamOptimizer::restore(AdamState state) {
  if (state.first_moment.size() != state_.first_moment.size() ||
      state.second_moment.size() != state_.second_moment.size()) {
    throw StructuralError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < state.first_moment.size(); ++i) {
    if (!(state.first_moment[i].shape() == state_.first_moment[i].shape()) ||
        !(state.second_moment[i].shape() == state_.second_moment[i].shape())) {
      throw StructuralError("optimizer moment " + std::to_string(i) + " has the wrong shape");
    }
  }
  state_ = std::move(state);
}

void AdamOptimizer::step(const ParameterList<float>& params, double lr) {
  const auto list = trainable(params);
  if (list.size() != state_.first_moment.size()) {
    throw StructuralError("optimizer was built for a different parameter list");
  }
  ++state_.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto value = list[i]->value.values();
    auto grad = list[i]->grad.values();
    auto m = state_.first_moment[i].values();
    auto v = state_.second_moment[i].values();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      const double mj = kBeta1 * m[j] + (1.0 - kBeta1) * g;
      const double vj = kBeta2 * v[j] + (1.0 - kBeta2) * g * g;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      value[j] = static_cast<float>(value[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + kEps));
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& dir, Networks<float>& networks, const TrainConfig& config,
                     int epochs_done, std::span<const EpochRecord> trace,
                     const AdamState* optimizer) {
  std::error_code ec;
  fs::create_directories(dir / "arrays", ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  write_json_file(dir / "config.json", to_json(config));

  Json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["epochs_done"] = epochs_done;
  Json params = Json::array();
  for (auto* p : networks.parameters()) {
    const std::string file = array_file("", p->name);
    write_array(dir / file, p->value);
    params.push_back(Json{{"name", p->name},
                          {"file", file},
                          {"shape", shape_json(p->value.shape())},
                          {"trainable", p->trainable}});
  }
  manifest["parameters"] = std::move(params);
  if (optimizer) {
    Json moments = Json::array();
    const auto list = trainable(networks.parameters());
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string m_file = array_file("adam.m.", list[i]->name);
      const std::string v_file = array_file("adam.v.", list[i]->name);
      write_array(dir / m_file, optimizer->first_moment.at(i));
      write_array(dir / v_file, optimizer->second_moment.at(i));
      moments.push_back(Json{{"name", list[i]->name}, {"m", m_file}, {"v", v_file}});
    }
    manifest["optimizer"] = Json{{"step", optimizer->step}, {"moments", std::move(moments)}};
  }
  Json t = Json::array();
  for (const auto& r : trace) t.push_back(Json::array({r.epoch, r.loss, r.lr}));
  manifest["trace"] = std::move(t);
  write_json_file(dir / "manifest.json", manifest);
}

namespace {

// Inside a checkpoint, unreadable JSON means a damaged checkpoint rather than a user config error.
Json read_checkpoint_json(const fs::path& path) {
  try {
    return read_json_file(path);
  } catch (const ConfigError& e) {
    throw IntegrityError(e.what());
  }
}

}  // namespace

Checkpoint load_checkpoint(const fs::path& dir, const std::optional<NetworkConfig>& expected) {
  if (!fs::is_directory(dir)) throw IntegrityError("checkpoint directory not found: " + dir.string());
  for (const char* f : {"config.json", "manifest.json"}) {
    if (!fs::exists(dir / f)) throw IntegrityError("checkpoint is missing " + std::string(f));
  }
  Checkpoint ck;
  try {
    ck.config = train_config_from_json(read_checkpoint_json(dir / "config.json"));
  } catch (const ConfigError& e) {
    throw IntegrityError("checkpoint config is invalid: " + std::string(e.what()));
  }
  const NetworkConfig& net = ck.config.net;
  if (expected && !(expected->k == net.k && expected->resolution == net.resolution &&
                    expected->base_channels == net.base_channels && expected->depth == net.depth &&
                    expected->heads == net.heads)) {
    throw StructuralError("checkpoint network (k=" + std::to_string(net.k) +
                          ", heads=" + std::to_string(net.heads) +
                          ") does not match the expected structure (k=" + std::to_string(expected->k) +
                          ", heads=" + std::to_string(expected->heads) + ")");
  }
  const Json manifest = read_checkpoint_json(dir / "manifest.json");
  try {
    if (manifest.at("format") != kCheckpointFormat || manifest.at("version") != kCheckpointVersion) {
      throw IntegrityError("unsupported checkpoint format in " + dir.string());
    }

    std::map<std::string, Json> stored;
    std::vector<std::string> stored_order;
    for (const auto& p : manifest.at("parameters")) {
      stored_order.push_back(p.at("name").get<std::string>());
      stored[stored_order.back()] = p;
    }

    Networks<float> nets{Decomposer<float>(net), Merger<float>(net)};
    auto params = nets.parameters();

    // Structure first: every expected name present with the right shape, nothing extra.
    std::vector<std::string> problems;
    std::set<std::string> wanted;
    for (auto* p : params) {
      wanted.insert(p->name);
      auto it = stored.find(p->name);
      if (it == stored.end()) {
        problems.push_back("missing " + p->name);
        continue;
      }
      if (it->second.at("shape") != shape_json(p->value.shape())) {
        problems.push_back(p->name + " has shape " + it->second.at("shape").dump() + ", expected " +
                           shape_json(p->value.shape()).dump());
      }
    }
    for (const auto& name : stored_order) {
      if (!wanted.contains(name)) problems.push_back("unexpected " + name);
    }
    if (!problems.empty()) {
      std::string msg = "checkpoint does not fit its configuration:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw StructuralError(msg);
    }

    // Then the files: report every missing array at once.
    std::vector<std::string> missing;
    for (auto* p : params) {
      if (!fs::exists(dir / stored[p->name].at("file").get<std::string>())) missing.push_back(p->name);
    }
    if (!missing.empty()) {
      std::string msg = "checkpoint arrays missing:";
      for (const auto& m : missing) msg += " " + m;
      throw IntegrityError(msg);
    }
    for (auto* p : params) {
      Tensor<float> t = read_array(dir / stored[p->name].at("file").get<std::string>());
      if (!(t.shape() == p->value.shape())) {
        throw StructuralError("array for " + p->name + " has shape " + t.shape().str());
      }
      p->value = std::move(t);
    }

    if (manifest.contains("optimizer")) {
      const Json& opt = manifest.at("optimizer");
      AdamState state;
      state.step = opt.at("step").get<std::int64_t>();
      const auto list = trainable(params);
      const auto& moments = opt.at("moments");
      if (moments.size() != list.size()) throw StructuralError("optimizer state does not match parameters");
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (moments[i].at("name") != list[i]->name) {
          throw StructuralError("optimizer moment order does not match parameters");
        }
        state.first_moment.push_back(read_array(dir / moments[i].at("m").get<std::string>()));
        state.second_moment.push_back(read_array(dir / moments[i].at("v").get<std::string>()));
        if (!(state.first_moment.back().shape() == list[i]->value.shape()) ||
            !(state.second_moment.back().shape() == list[i]->value.shape())) {
          throw StructuralError("optimizer moments for " + list[i]->name + " have the wrong shape");
        }
      }
      ck.optimizer = std::move(state);
    }
    ck.epochs_done = manifest.at("epochs_done").get<int>();
    ck.trace = trace_from_json(manifest.at("trace"));
    ck.networks = std::move(nets);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  nets_ = init_params<float>(cfg_.net, cfg_.seed);
  params_ = nets_.parameters();
  adam_ = AdamOptimizer(params_);
}

Trainer::Trainer(Checkpoint resume) : cfg_(std::move(resume.config)) {
  cfg_.validate();
  nets_ = std::move(resume.networks);
  params_ = nets_.parameters();
  adam_ = AdamOptimizer(params_);
  if (resume.optimizer) adam_.restore(std::move(*resume.optimizer));
  epochs_done_ = resume.epochs_done;
  trace_ = std::move(resume.trace);
  if (static_cast<int>(trace_.size()) != epochs_done_) {
    throw IntegrityError("checkpoint trace length does not match its epoch count");
  }
}

void Trainer::zero_grad() {
  for (auto* p : params_) {
    if (p->trainable) p->grad.fill(0.0f);
  }
}

void Trainer::clip_gradients() {
  if (cfg_.grad_clip <= 0.0) return;
  double sq = 0.0;
  for (auto* p : params_) {
    if (!p->trainable) continue;
    for (float g : p->grad.values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > cfg_.grad_clip)) return;
  const float scale = static_cast<float>(cfg_.grad_clip / norm);
  for (auto* p : params_) {
    if (!p->trainable) continue;
    for (auto& g : p->grad.values()) g *= scale;
  }
}

void Trainer::apply_update(double lr) {
  clip_gradients();
  adam_.step(params_, lr);
}

double Trainer::step_decomposition(const Tensor<float>& batch, double lr) {
  zero_grad();
  auto dt = nets_.decomposer.forward(batch, true);
  auto comps = dt.outputs();
  auto mt = nets_.merger.forward(comps, 0, true);
  DecompositionGrads<float> g;
  const double loss = decomposition_loss(batch, mt.output(), comps, cfg_.loss(), &g);
  auto d_comps = nets_.merger.backward(mt, comps, g.reconstruction);
  for (std::size_t i = 0; i < d_comps.size(); ++i) add_into(d_comps[i], g.components[i]);
  nets_.decomposer.backward(dt, d_comps);
  apply_update(lr);
  return loss;
}

double Trainer::step_demorph(const Tensor<float>& morph, const Tensor<float>& b1,
                             const Tensor<float>& b2, double lr) {
  zero_grad();
  auto dt = nets_.decomposer.forward(morph, true);
  auto comps = dt.outputs();
  auto m0 = nets_.merger.forward(comps, 0, true);
  auto m1 = nets_.merger.forward(comps, 1, true);
  FinalGrads<float> g;
  const double loss = final_loss(morph, m0.output(), m1.output(), b1, b2, comps, cfg_.loss(), &g);
  auto d0 = nets_.merger.backward(m0, comps, g.o1);
  auto d1 = nets_.merger.backward(m1, comps, g.o2);
  for (std::size_t i = 0; i < d0.size(); ++i) {
    add_into(d0[i], d1[i]);
    add_into(d0[i], g.components[i]);
  }
  nets_.decomposer.backward(dt, d0);
  apply_update(lr);
  return loss;
}

double Trainer::decomposition_loss_on(const Tensor<float>& batch) {
  auto comps = nets_.decomposer.forward(batch, true).outputs();
  auto out = nets_.merger.forward(comps, 0, true).output();
  return decomposition_loss(batch, out, comps, cfg_.loss());
}

double Trainer::demorph_loss_on(const Tensor<float>& morph, const Tensor<float>& b1,
                                const Tensor<float>& b2) {
  auto comps = nets_.decomposer.forward(morph, true).outputs();
  auto o1 = nets_.merger.forward(comps, 0, true).output();
  auto o2 = nets_.merger.forward(comps, 1, true).output();
  return final_loss(morph, o1, o2, b1, b2, comps, cfg_.loss());
}

template <typename StepFn>
TrainReport Trainer::fit(std::size_t n_samples, StepFn&& step, const fs::path& run_dir) {
  if (n_samples == 0) throw DataError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();
  const auto sizes = balanced_batches(n_samples, cfg_.batch_size);
  const fs::path ck_dir = run_dir.empty() ? fs::path{} : run_dir / "checkpoints";

  for (int epoch = epochs_done_; epoch < cfg_.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg_, epoch);
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(mix_seed(cfg_.seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    std::size_t offset = 0;
    for (int size : sizes) {
      const double loss = step(std::span<const std::size_t>(order.data() + offset, size), lr);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged: loss is " + std::string(std::isnan(loss) ? "NaN" : "infinite") +
                              " at epoch " + std::to_string(epoch));
      }
      total += loss * size;
      offset += size;
    }
    EpochRecord rec{epoch, total / static_cast<double>(n_samples), lr};
    trace_.push_back(rec);
    epochs_done_ = epoch + 1;
    if (callback_) callback_(rec);
    if (!ck_dir.empty() && cfg_.checkpoint_every > 0 && epochs_done_ % cfg_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch-%04d", epochs_done_);
      save_checkpoint(ck_dir / name, nets_, cfg_, epochs_done_, trace_, &adam_.state());
    }
  }

  TrainReport report;
  report.trace = trace_;
  report.seed = cfg_.seed;
  if (!run_dir.empty()) {
    report.final_checkpoint = ck_dir / "final";
    save_checkpoint(report.final_checkpoint, nets_, cfg_, epochs_done_, trace_, &adam_.state());
    write_loss_csv(run_dir / "loss.csv", trace_);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

TrainReport Trainer::fit_decomposition(std::span<const Image> images, const fs::path& run_dir) {
  if (cfg_.mode != TrainMode::Decomposition || cfg_.net.heads != 1) {
    throw ModeError("decomposition training needs mode decomposition and a one-head merger");
  }
  for (const auto& img : images) validate_image(img, cfg_.net.resolution);
  return fit(
      images.size(),
      [&](std::span<const std::size_t> idx, double lr) {
        std::vector<Tensor<float>> items;
        for (auto i : idx) items.push_back(images[i]);
        return step_decomposition(stack<float>(items), lr);
      },
      run_dir);
}

TrainReport Trainer::fit_demorph(std::span<const MorphSample> samples, const fs::path& run_dir) {
  if (cfg_.mode != TrainMode::Demorphing || cfg_.net.heads != 2) {
    throw ModeError("demorph training needs mode demorphing and a two-head merger");
  }
  for (const auto& s : samples) {
    validate_image(s.morph, cfg_.net.resolution);
    validate_image(s.bonafide1, cfg_.net.resolution);
    validate_image(s.bonafide2, cfg_.net.resolution);
  }
  return fit(
      samples.size(),
      [&](std::span<const std::size_t> idx, double lr) {
        std::vector<Tensor<float>> m, b1, b2;
        for (auto i : idx) {
          m.push_back(samples[i].morph);
          b1.push_back(samples[i].bonafide1);
          b2.push_back(samples[i].bonafide2);
        }
        return step_demorph(stack<float>(m), stack<float>(b1), stack<float>(b2), lr);
      },
      run_dir);
}

TrainReport train_decomposition(const TrainConfig& cfg, std::span<const Image> images,
                                const fs::path& run_dir) {
  Trainer trainer(cfg);
  return trainer.fit_decomposition(images, run_dir);
}

TrainReport train_demorph(const TrainConfig& cfg, const DatasetSplit& dataset,
                          const fs::path& run_dir) {
  Trainer trainer(cfg);
  return trainer.fit_demorph(dataset.train, run_dir);
}

}  // namespace demorph
