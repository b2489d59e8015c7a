// demorph: data generation, training, inference and evaluation from one config file.
//
// Exit codes: 0 success, 1 other failure, 2 config/mode error, 3 data or I/O error,
// 4 checkpoint integrity error.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "demorph/biometric.hpp"
#include "demorph/config.hpp"
#include "demorph/dataset_io.hpp"
#include "demorph/experiment.hpp"
#include "demorph/image_io.hpp"
#include "demorph/training.hpp"

namespace fs = std::filesystem;
using namespace demorph;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitIntegrity = 4;

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

// An explicit --run-dir, or <output_dir>/<timestamp>-<command> (suffixed when taken).
fs::path resolve_run_dir(const std::string& explicit_dir, const std::string& output_dir, const std::string& command) {
  if (!explicit_dir.empty()) return make_dir(explicit_dir);
  const fs::path base = fs::path(output_dir) / (timestamp() + "-" + command);
  fs::path dir = base;
  for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  return make_dir(dir);
}

// MANIFEST.json: the commands that wrote into the run directory and every file it now holds.
void update_manifest(const fs::path& run_dir, const std::string& command, const Json& inputs) {
  const fs::path path = run_dir / "MANIFEST.json";
  Json manifest{{"format", "demorph-run"}, {"commands", Json::object()}};
  if (fs::exists(path)) {
    try {
      manifest = read_json_file(path);
    } catch (const ConfigError&) {
      // A damaged index is rebuilt from scratch.
    }
  }
  manifest["commands"][command] = inputs;
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), run_dir).generic_string();
    if (rel != "MANIFEST.json") files.insert(rel);
  }
  manifest["files"] = files;
  write_json_file(path, manifest);
}

ExperimentConfig load_config(const std::string& path) {
  auto cfg = load_experiment_config(path);
  cfg.validate();
  return cfg;
}

Image load_input_image(const std::string& path, int resolution) {
  Image img = load_png(path);
  if (img.h() != resolution || img.w() != resolution) img = resize_bilinear(img, resolution);
  return img;
}

std::string fmt_sim(const std::optional<Embedding>& a, const std::optional<Embedding>& b) {
  if (!a || !b) return "NotFound";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", similarity(*a, *b));
  return buf;
}

// ---------------------------------------------------------------------------------------------

struct InitConfigArgs {
  std::string mode = "demorphing";
  std::string preset = "desk";
  std::string out;
};

int cmd_init_config(const InitConfigArgs& a) {
  const TrainMode mode = parse_mode(a.mode);
  ExperimentConfig cfg;
  if (a.preset == "desk") {
    cfg = ExperimentConfig::desk(mode);
  } else if (a.preset == "full") {
    cfg.train = TrainConfig::full(mode);
  } else {
    throw ConfigError("unknown preset '" + a.preset + "' (expected desk or full)");
  }
  if (!fs::path(a.out).parent_path().empty()) make_dir(fs::path(a.out).parent_path());
  save_experiment_config(a.out, cfg);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct GenDataArgs {
  std::string config;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  const auto cfg = load_config(a.config);
  make_dir(a.out);
  const auto data = generate_experiment_data(cfg.data, cfg.train.net.resolution);
  Json source{{"generator", "procedural"}, {"resolution", cfg.train.net.resolution}};
  source["data"] = to_json(cfg)["data"];
  save_dataset(a.out, data, source);
  std::cout << "wrote " << data.split.train.size() << " train morphs, " << data.split.test.size()
            << " test morphs, " << data.bonafides.size() << " bonafides, " << data.probes.size()
            << " probes to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string run_dir;
  std::string resume;
};

int cmd_train(const TrainArgs& a) {
  const auto cfg = load_config(a.config);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume, cfg.train.net);
    auto stored = to_json(resume->config);
    auto wanted = to_json(cfg.train);
    stored.erase("epochs");
    wanted.erase("epochs");
    if (stored != wanted) {
      throw ConfigError("--resume checkpoint was trained with a different configuration (only epochs may change)");
    }
    if (resume->epochs_done > cfg.train.epochs) {
      throw ConfigError("checkpoint already holds " + std::to_string(resume->epochs_done) +
                        " epochs, more than train.epochs = " + std::to_string(cfg.train.epochs));
    }
    resume->config.epochs = cfg.train.epochs;
  }
  const auto data = load_dataset(a.data, cfg.train.net.resolution, cfg.data.train_fraction, cfg.data.seed);
  const fs::path run_dir = resolve_run_dir(a.run_dir, cfg.output_dir, "train");
  save_experiment_config(run_dir / "config.json", cfg);

  Trainer trainer = resume ? Trainer(std::move(*resume)) : Trainer(cfg.train);
  const int every = std::max(1, cfg.train.epochs / 20);
  trainer.on_epoch([&](const EpochRecord& r) {
    if (r.epoch % every == 0 || r.epoch + 1 == cfg.train.epochs) {
      std::fprintf(stderr, "epoch %d/%d loss %.6f lr %.6g\n", r.epoch + 1, cfg.train.epochs, r.loss, r.lr);
    }
  });
  std::vector<Image> images;
  TrainReport report;
  if (cfg.train.mode == TrainMode::Decomposition) {
    for (const auto& b : data.bonafides) images.push_back(b.image);
    report = trainer.fit_decomposition(images, run_dir);
  } else {
    report = trainer.fit_demorph(data.split.train, run_dir);
  }

  Json summary{{"mode", mode_name(cfg.train.mode)},
               {"epochs", report.trace.size()},
               {"seed", report.seed},
               {"initial_loss", report.trace.empty() ? Json(nullptr) : Json(report.trace.front().loss)},
               {"final_loss", report.trace.empty() ? Json(nullptr) : Json(report.trace.back().loss)},
               {"checkpoint", fs::relative(report.final_checkpoint, run_dir).generic_string()}};
  write_json_file(run_dir / "train.json", summary);
  update_manifest(run_dir, "train",
                  Json{{"config", a.config}, {"data", a.data}, {"resume", a.resume.empty() ? Json(nullptr) : Json(a.resume)}});
  std::cout << "run directory: " << run_dir.string() << "\n"
            << "final loss " << summary["final_loss"].dump() << " after " << report.trace.size() << " epochs ("
            << report.wall_seconds << " s)\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string config;
  std::string run_dir;
  bool grids = false;
};

int cmd_evaluate(EvaluateArgs a) {
  if (a.checkpoint.empty()) {
    if (a.run_dir.empty()) throw ConfigError("evaluate needs --checkpoint or --run-dir");
    a.checkpoint = (fs::path(a.run_dir) / "checkpoints" / "final").string();
  }
  if (a.config.empty() && !a.run_dir.empty() && fs::exists(fs::path(a.run_dir) / "config.json")) {
    a.config = (fs::path(a.run_dir) / "config.json").string();
  }
  auto ck = load_checkpoint(a.checkpoint);
  ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    if (cfg.train.mode != ck.config.mode) {
      throw ModeError("config mode " + mode_name(cfg.train.mode) + " does not match checkpoint mode " +
                      mode_name(ck.config.mode));
    }
  }
  cfg.train = ck.config;
  const auto data = load_dataset(a.data, ck.config.net.resolution, cfg.data.train_fraction, cfg.data.seed);
  if (ck.config.mode == TrainMode::Decomposition && data.bonafides.empty()) {
    throw ModeError("decomposition checkpoint but the manifest lists no bonafides");
  }
  if (ck.config.mode == TrainMode::Demorphing && data.split.test.empty()) {
    throw ModeError("demorphing checkpoint but the manifest holds no test morphs");
  }
  const auto cmp = make_comparator(cfg.comparator.kind, cfg.comparator.command);
  Json report = evaluate(ck.networks, ck.config.mode, data, *cmp, cfg.comparator.tau);
  report["epochs_trained"] = ck.epochs_done;

  const fs::path run_dir = resolve_run_dir(a.run_dir, cfg.output_dir, "evaluate");
  if (!fs::exists(run_dir / "config.json")) save_experiment_config(run_dir / "config.json", cfg);
  write_json_file(run_dir / "report.json", report);
  if (a.grids || cfg.write_grids) write_grids(run_dir / "grids", ck.networks, ck.config.mode, data);
  update_manifest(run_dir, "evaluate",
                  Json{{"checkpoint", a.checkpoint}, {"data", a.data}, {"config", a.config.empty() ? Json(nullptr) : Json(a.config)}});

  if (ck.config.mode == TrainMode::Decomposition) {
    std::cout << "reconstruction match accuracy " << report["reconstruction"]["match_accuracy"].get<double>()
              << ", component leak rates " << report["components"]["leak_rate"].dump() << "\n";
  } else {
    std::cout << "test restoration accuracy: subject 1 " << report["test"]["subject1_accuracy"].get<double>()
              << ", subject 2 " << report["test"]["subject2_accuracy"].get<double>() << "\n";
  }
  std::cout << "report: " << (run_dir / "report.json").string() << "\n";
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::string image;
  std::string config;
  std::string run_dir;
  std::string bonafide1;
  std::string bonafide2;
};

int cmd_infer(const InferArgs& a, bool demorph_mode) {
  auto ck = load_checkpoint(a.checkpoint);
  ExperimentConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  const int heads = ck.config.net.heads;
  if (demorph_mode && heads != 2) {
    throw ModeError("demorph needs a two-head (demorphing) checkpoint, this one has " + std::to_string(heads));
  }
  const int res = ck.config.net.resolution;
  const Image input = load_input_image(a.image, res);
  const auto cmp = make_comparator(cfg.comparator.kind, cfg.comparator.command);
  const fs::path run_dir = resolve_run_dir(a.run_dir, cfg.output_dir, demorph_mode ? "demorph" : "decompose");

  const auto comps = decompose(ck.networks.decomposer, input);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    save_png(comps[i], run_dir / ("component_" + std::to_string(i + 1) + ".png"));
  }
  const auto e_in = cmp->embed(input);
  std::ofstream caption(run_dir / "caption.txt");
  caption << "input: " << a.image << "\n";
  Json inputs{{"checkpoint", a.checkpoint}, {"image", a.image}};

  if (demorph_mode) {
    const auto out = demorph::demorph(ck.networks.decomposer, ck.networks.merger, input);
    save_png(out.output1, run_dir / "output_1.png");
    save_png(out.output2, run_dir / "output_2.png");
    const auto e1 = cmp->embed(out.output1);
    const auto e2 = cmp->embed(out.output2);
    caption << "similarity(O1, input) = " << fmt_sim(e1, e_in) << "\n"
            << "similarity(O2, input) = " << fmt_sim(e2, e_in) << "\n"
            << "similarity(O1, O2) = " << fmt_sim(e1, e2) << "\n";
    for (const auto& [label, path] : {std::pair{"B1", a.bonafide1}, std::pair{"B2", a.bonafide2}}) {
      if (path.empty()) continue;
      const auto eb = cmp->embed(load_input_image(path, res));
      caption << "similarity(O1, " << label << ") = " << fmt_sim(e1, eb) << "\n"
              << "similarity(O2, " << label << ") = " << fmt_sim(e2, eb) << "\n";
      inputs[label == std::string("B1") ? "bonafide1" : "bonafide2"] = path;
    }
  } else if (heads == 1) {
    const Image rec = merge(ck.networks.merger, 0, comps);
    save_png(rec, run_dir / "reconstruction.png");
    caption << "similarity(reconstruction, input) = " << fmt_sim(cmp->embed(rec), e_in) << "\n";
  }
  for (std::size_t i = 0; i < comps.size(); ++i) {
    caption << "similarity(I" << i + 1 << ", input) = " << fmt_sim(cmp->embed(comps[i]), e_in) << "\n";
  }
  caption << "comparator " << cmp->name() << ", tau " << cfg.comparator.tau << "\n";
  caption.close();
  update_manifest(run_dir, demorph_mode ? "demorph" : "decompose", inputs);
  std::cout << "outputs written to " << run_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"demorph: reference-free face demorphing experiments"};
  app.require_subcommand(1);

  InitConfigArgs init_args;
  auto* init = app.add_subcommand("init-config", "Write a preset experiment config");
  init->add_option("--mode", init_args.mode, "decomposition | demorphing")->capture_default_str();
  init->add_option("--preset", init_args.preset, "desk | full")->capture_default_str();
  init->add_option("--out", init_args.out, "Config file to write")->required();

  GenDataArgs gen_args;
  auto* gen = app.add_subcommand("gen-data", "Generate the procedural dataset (PNGs + manifest.json)");
  gen->add_option("--config", gen_args.config, "Experiment config")->required();
  gen->add_option("--out", gen_args.out, "Dataset directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a decomposition or demorphing model");
  train->add_option("--config", train_args.config, "Experiment config")->required();
  train->add_option("--data", train_args.data, "Dataset directory or manifest")->required();
  train->add_option("--run-dir", train_args.run_dir, "Run directory (default: timestamped under output_dir)");
  train->add_option("--resume", train_args.resume, "Checkpoint directory to continue from");

  EvaluateArgs eval_args;
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint and write report.json");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory (default: <run-dir>/checkpoints/final)");
  eval->add_option("--data", eval_args.data, "Dataset directory or manifest")->required();
  eval->add_option("--config", eval_args.config, "Experiment config (default: <run-dir>/config.json)");
  eval->add_option("--run-dir", eval_args.run_dir, "Run directory for the report");
  eval->add_flag("--grids", eval_args.grids, "Also write PNG grids with captions");

  InferArgs dm_args;
  auto* dm = app.add_subcommand("demorph", "Demorph one image: components, O1, O2 and a caption");
  dm->add_option("--checkpoint", dm_args.checkpoint, "Demorphing checkpoint")->required();
  dm->add_option("--image", dm_args.image, "Input PNG")->required();
  dm->add_option("--config", dm_args.config, "Experiment config (comparator settings)");
  dm->add_option("--run-dir", dm_args.run_dir, "Output directory");
  dm->add_option("--bonafide1", dm_args.bonafide1, "Optional reference for the caption");
  dm->add_option("--bonafide2", dm_args.bonafide2, "Optional reference for the caption");

  InferArgs dc_args;
  auto* dc = app.add_subcommand("decompose", "Decompose one image into its components");
  dc->add_option("--checkpoint", dc_args.checkpoint, "Checkpoint")->required();
  dc->add_option("--image", dc_args.image, "Input PNG")->required();
  dc->add_option("--config", dc_args.config, "Experiment config (comparator settings)");
  dc->add_option("--run-dir", dc_args.run_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*init) return cmd_init_config(init_args);
    if (*gen) return cmd_gen_data(gen_args);
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_evaluate(eval_args);
    if (*dm) return cmd_infer(dm_args, true);
    if (*dc) return cmd_infer(dc_args, false);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitIntegrity;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DomainError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
