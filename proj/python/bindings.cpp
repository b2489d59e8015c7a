// Python bindings. Images cross the boundary as float arrays shaped (3, H, W); batches as
// (N, 3, H, W). Configs and reports cross as JSON-compatible dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "demorph/biometric.hpp"
#include "demorph/config.hpp"
#include "demorph/dataset_io.hpp"
#include "demorph/experiment.hpp"
#include "demorph/losses.hpp"
#include "demorph/metrics.hpp"
#include "demorph/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace demorph;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
Tensor<T> to_tensor(const Array<T>& a) {
  Shape s;
  if (a.ndim() == 3) {
    s = Shape{1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  } else if (a.ndim() == 4) {
    s = Shape{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
              static_cast<int>(a.shape(3))};
  } else {
    throw DimensionError("expected an array shaped (3, H, W) or (N, 3, H, W)");
  }
  Tensor<T> t(s);
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

template <typename T>
Array<T> to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape;
  if (t.n() == 1) {
    shape = {t.c(), t.h(), t.w()};
  } else {
    shape = {t.n(), t.c(), t.h(), t.w()};
  }
  Array<T> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

Image to_image(const Array<float>& a) { return to_tensor<float>(a); }

template <typename T>
Components<T> to_components(const std::vector<Array<T>>& list) {
  Components<T> out;
  for (const auto& a : list) out.push_back(to_tensor<T>(a));
  return out;
}

std::vector<Array<float>> from_components(const ComponentSet& c) {
  std::vector<Array<float>> out;
  for (const auto& t : c) out.push_back(to_array(t));
  return out;
}

// Python objects <-> JSON go through the json module to keep one source of truth for parsing.
Json to_json_value(const py::handle& obj) {
  return Json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object from_json_value(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

LossConfig loss_config(int k, std::optional<double> lambda) {
  LossConfig cfg = LossConfig::for_k(k);
  if (lambda) cfg.lambda = *lambda;
  cfg.validate();
  return cfg;
}

// Inference wrapper around a network pair.
class Model {
 public:
  Model(const NetworkConfig& cfg, std::uint64_t seed) : nets_(init_params<float>(cfg, seed)) {}
  explicit Model(Checkpoint ck) : nets_(std::move(ck.networks)), train_(ck.config), epochs_(ck.epochs_done) {}

  py::object config() const { return from_json_value(to_json(nets_.config())); }
  int epochs_done() const { return epochs_; }

  std::vector<Array<float>> decompose_image(const Array<float>& img) {
    return from_components(decompose(nets_.decomposer, to_image(img)));
  }
  Array<float> merge_components(const std::vector<Array<float>>& comps, int head) {
    return to_array(merge(nets_.merger, head, to_components<float>(comps)));
  }
  py::tuple demorph_image(const Array<float>& img) {
    auto out = demorph::demorph(nets_.decomposer, nets_.merger, to_image(img));
    return py::make_tuple(to_array(out.output1), to_array(out.output2), from_components(out.components));
  }
  std::vector<double> merger_scales(int head) const {
    const auto s = nets_.merger.scales(head);
    return {s.begin(), s.end()};
  }
  std::vector<int> latent_shape() {
    const auto s = nets_.config().latent_shape();
    return {s.c, s.h, s.w};
  }
  void save(const fs::path& dir) { save_checkpoint(dir, nets_, train_, epochs_); }

  Networks<float>& networks() { return nets_; }

 private:
  Networks<float> nets_;
  TrainConfig train_;
  int epochs_ = 0;
};

}  // namespace

PYBIND11_MODULE(demorph, m) {
  m.doc() = "Reference-free face demorphing: procedural data, decomposer/merger networks, losses and metrics";

  auto& error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<DimensionError>(m, "DimensionError", error);
  py::register_exception<DomainError>(m, "DomainError", error);
  py::register_exception<DataError>(m, "DataError", error);
  py::register_exception<IntegrityError>(m, "IntegrityError", error);
  py::register_exception<MetricError>(m, "MetricError", error);

  // Configuration.
  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init([](int k, int resolution, int base_channels, int depth, int heads) {
             NetworkConfig c{k, resolution, base_channels, depth, heads};
             c.validate();
             return c;
           }),
           py::arg("k") = 3, py::arg("resolution") = 64, py::arg("base_channels") = 16, py::arg("depth") = 5,
           py::arg("heads") = 1)
      .def_static("full_scale", &NetworkConfig::full_scale, py::arg("heads") = 1)
      .def_static("desk_scale", &NetworkConfig::desk_scale, py::arg("heads") = 1)
      .def_readonly("k", &NetworkConfig::k)
      .def_readonly("resolution", &NetworkConfig::resolution)
      .def_readonly("base_channels", &NetworkConfig::base_channels)
      .def_readonly("depth", &NetworkConfig::depth)
      .def_readonly("heads", &NetworkConfig::heads)
      .def("latent_shape", [](const NetworkConfig& c) {
        const auto s = c.latent_shape();
        return std::vector<int>{s.c, s.h, s.w};
      })
      .def("__repr__", [](const NetworkConfig& c) { return "NetworkConfig(" + to_json(c).dump() + ")"; });

  m.def("desk_config", [](const std::string& mode) { return from_json_value(to_json(ExperimentConfig::desk(parse_mode(mode)))); },
        py::arg("mode"), "Desk-scale experiment config as a dict");
  m.def("validate_config", [](const py::dict& d) {
    const auto cfg = experiment_config_from_json(to_json_value(d));
    return cfg.problems();
  }, py::arg("config"), "Every violated constraint of an experiment config (empty when valid)");

  // Imaging.
  m.def("render_bonafide", [](std::uint64_t identity_seed, std::uint64_t variation, int resolution) {
    return to_array(render_bonafide(make_identity(identity_seed), variation, resolution));
  }, py::arg("identity_seed"), py::arg("variation") = 0, py::arg("resolution") = 64);
  m.def("make_morph", [](const Array<float>& b1, const Array<float>& b2, double alpha) {
    return to_array(make_morph(to_image(b1), to_image(b2), alpha));
  }, py::arg("b1"), py::arg("b2"), py::arg("alpha") = 0.5);
  m.def("generate_dataset", [](int identities, int variations, std::vector<double> alphas, int resolution,
                               std::uint64_t seed) {
    py::list out;
    for (const auto& s : generate_dataset(identities, variations, alphas, resolution, seed)) {
      py::dict d;
      d["morph"] = to_array(s.morph);
      d["bonafide1"] = to_array(s.bonafide1);
      d["bonafide2"] = to_array(s.bonafide2);
      d["id1"] = s.identity1;
      d["id2"] = s.identity2;
      d["alpha"] = s.alpha;
      out.append(d);
    }
    return out;
  }, py::arg("identities"), py::arg("variations") = 1, py::arg("alphas") = std::vector<double>{0.5},
     py::arg("resolution") = 64, py::arg("seed") = 0);
  m.def("generate_data", [](const py::dict& config, const fs::path& out) {
    const auto cfg = experiment_config_from_json(to_json_value(config));
    cfg.validate();
    save_dataset(out, generate_experiment_data(cfg.data, cfg.train.net.resolution));
  }, py::arg("config"), py::arg("out_dir"), "Write the procedural dataset (PNGs + manifest.json)");

  // Biometrics (toy embedder).
  m.def("embed", [](const Array<float>& img) { return embed_toy(to_image(img)).vector; }, py::arg("image"));
  m.def("similarity", [](const Array<float>& a, const Array<float>& b) {
    return similarity(embed_toy(to_image(a)), embed_toy(to_image(b)));
  }, py::arg("a"), py::arg("b"));
  m.def("is_match", [](const Array<float>& a, const Array<float>& b, double tau) {
    ToyComparator cmp;
    return is_match(cmp, to_image(a), to_image(b), tau).matched;
  }, py::arg("a"), py::arg("b"), py::arg("tau") = kDefaultTau);

  // Losses, evaluated in double precision.
  m.def("default_lambda", &default_lambda, py::arg("k"));
  m.def("l1", [](const Array<double>& a, const Array<double>& b) { return l1(to_tensor(a), to_tensor(b)); });
  m.def("decomposition_loss", [](const Array<double>& input, const Array<double>& rec,
                                 const std::vector<Array<double>>& comps, std::optional<double> lambda) {
    return decomposition_loss(to_tensor(input), to_tensor(rec), to_components<double>(comps),
                              loss_config(static_cast<int>(comps.size()), lambda));
  }, py::arg("input"), py::arg("reconstruction"), py::arg("components"), py::arg("lam") = py::none());
  m.def("crossroad_loss", [](const Array<double>& o1, const Array<double>& o2, const Array<double>& b1,
                             const Array<double>& b2) {
    return crossroad_loss(to_tensor(o1), to_tensor(o2), to_tensor(b1), to_tensor(b2));
  }, py::arg("o1"), py::arg("o2"), py::arg("b1"), py::arg("b2"));
  m.def("final_loss", [](const Array<double>& morph, const Array<double>& o1, const Array<double>& o2,
                         const Array<double>& b1, const Array<double>& b2, const std::vector<Array<double>>& comps,
                         std::optional<double> lambda) {
    return final_loss(to_tensor(morph), to_tensor(o1), to_tensor(o2), to_tensor(b1), to_tensor(b2),
                      to_components<double>(comps), loss_config(static_cast<int>(comps.size()), lambda));
  }, py::arg("morph"), py::arg("o1"), py::arg("o2"), py::arg("b1"), py::arg("b2"), py::arg("components"),
     py::arg("lam") = py::none());

  // Metrics.
  m.def("ssim", [](const Array<float>& a, const Array<float>& b) { return ssim(to_image(a), to_image(b)); });
  m.def("psnr", [](const Array<float>& a, const Array<float>& b) { return psnr(to_image(a), to_image(b)); });
  m.def("fid_from_features", &fid_from_features, py::arg("a"), py::arg("b"));
  m.def("restoration_accuracy", [](const std::vector<std::tuple<Array<float>, Array<float>, Array<float>, Array<float>>>& rows,
                                   double tau) {
    std::vector<RestorationInput> in;
    for (const auto& [o1, o2, b1, b2] : rows) in.push_back({to_image(o1), to_image(o2), to_image(b1), to_image(b2)});
    ToyComparator cmp;
    const auto r = restoration_accuracy(in, cmp, tau);
    return py::make_tuple(r.subject1, r.subject2);
  }, py::arg("rows"), py::arg("tau") = kDefaultTau, "rows of (O1, O2, B1, B2); returns (subject1, subject2)");

  // Networks.
  py::class_<Model>(m, "Model")
      .def(py::init<const NetworkConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_static("load", [](const fs::path& dir) { return Model(load_checkpoint(dir)); }, py::arg("checkpoint"))
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("epochs_done", &Model::epochs_done)
      .def("latent_shape", &Model::latent_shape)
      .def("decompose", &Model::decompose_image, py::arg("image"))
      .def("merge", &Model::merge_components, py::arg("components"), py::arg("head") = 0)
      .def("demorph", &Model::demorph_image, py::arg("image"), "Returns (O1, O2, components)")
      .def("merger_scales", &Model::merger_scales, py::arg("head") = 0)
      .def("save", &Model::save, py::arg("checkpoint"));

  // Experiments.
  m.def("train", [](const py::dict& config, const fs::path& data, const fs::path& run_dir) {
    const auto cfg = experiment_config_from_json(to_json_value(config));
    cfg.validate();
    const auto dataset = load_dataset(data, cfg.train.net.resolution, cfg.data.train_fraction, cfg.data.seed);
    TrainReport report;
    {
      py::gil_scoped_release release;
      if (cfg.train.mode == TrainMode::Decomposition) {
        std::vector<Image> images;
        for (const auto& b : dataset.bonafides) images.push_back(b.image);
        report = train_decomposition(cfg.train, images, run_dir);
      } else {
        report = train_demorph(cfg.train, dataset.split, run_dir);
      }
    }
    py::list trace;
    for (const auto& r : report.trace) trace.append(py::make_tuple(r.epoch, r.loss, r.lr));
    return py::make_tuple(trace, report.final_checkpoint);
  }, py::arg("config"), py::arg("data"), py::arg("run_dir"), "Returns ([(epoch, loss, lr)], final checkpoint path)");
  m.def("evaluate", [](const fs::path& checkpoint, const fs::path& data, std::optional<py::dict> config) {
    auto ck = load_checkpoint(checkpoint);
    ExperimentConfig cfg;
    if (config) cfg = experiment_config_from_json(to_json_value(*config));
    const auto dataset = load_dataset(data, ck.config.net.resolution, cfg.data.train_fraction, cfg.data.seed);
    const auto cmp = make_comparator(cfg.comparator.kind, cfg.comparator.command);
    return from_json_value(evaluate(ck.networks, ck.config.mode, dataset, *cmp, cfg.comparator.tau));
  }, py::arg("checkpoint"), py::arg("data"), py::arg("config") = py::none(), "Evaluation report as a dict");
}
