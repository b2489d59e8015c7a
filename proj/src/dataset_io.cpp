#include "demorph/dataset_io.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "demorph/image_io.hpp"

namespace demorph {

namespace fs = std::filesystem;

namespace {

std::string format_name(const char* pattern, int a, int b = 0, int c = 0) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c);
  return buf;
}

Json labeled_record(const std::string& path, const LabeledImage& img) {
  return Json{{"path", path}, {"id", img.identity}, {"variation", img.variation}};
}

// Caches decoded images by path so shared bonafides are read once.
class ImageReader {
 public:
  ImageReader(fs::path base, int resolution) : base_(std::move(base)), resolution_(resolution) {}

  const Image& get(const std::string& rel) {
    auto it = cache_.find(rel);
    if (it != cache_.end()) return it->second;
    Image img = load_png(base_ / rel);
    if (resolution_ > 0 && (img.h() != resolution_ || img.w() != resolution_)) {
      img = resize_bilinear(img, resolution_);
    }
    return cache_.emplace(rel, std::move(img)).first->second;
  }

 private:
  fs::path base_;
  int resolution_;
  std::map<std::string, Image> cache_;
};

std::vector<LabeledImage> read_labeled(const Json& list, ImageReader& reader) {
  std::vector<LabeledImage> out;
  for (const auto& r : list) {
    LabeledImage img;
    img.image = reader.get(r.at("path").get<std::string>());
    img.identity = r.at("id").get<int>();
    img.variation = r.value("variation", 0);
    out.push_back(std::move(img));
  }
  return out;
}

void check_scenario1(const DatasetSplit& split) {
  std::set<std::pair<int, int>> train_pairs;
  for (const auto& s : split.train) {
    train_pairs.emplace(std::min(s.identity1, s.identity2), std::max(s.identity1, s.identity2));
  }
  for (const auto& s : split.test) {
    if (train_pairs.count({std::min(s.identity1, s.identity2), std::max(s.identity1, s.identity2)})) {
      throw SplitError("identity pair (" + std::to_string(s.identity1) + ", " + std::to_string(s.identity2) +
                       ") appears in both train and test");
    }
    for (int id : {s.identity1, s.identity2}) {
      if (!split.bonafide_pool.count(id)) {
        throw SplitError("test identity " + std::to_string(id) + " never appears in a training morph");
      }
    }
  }
}

}  // namespace

Dataset generate_experiment_data(const DataConfig& data, int resolution) {
  Dataset out;
  out.resolution = resolution;
  const auto samples = generate_dataset(data.identities, data.variations, data.alphas, resolution, data.seed);
  out.split = build_scenario1_split(samples, data.train_fraction, data.seed);
  out.bonafides = generate_bonafides(data.identities, data.variations, resolution, data.seed);
  for (int i = 0; i < data.non_morph_probes; ++i) {
    LabeledImage p;
    p.identity = i % data.identities;
    p.variation = data.variations + i / data.identities;
    p.image = render_bonafide(dataset_identity(data.seed, p.identity), p.variation, resolution);
    out.probes.push_back(std::move(p));
  }
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& dataset, const Json& source) {
  std::error_code ec;
  for (const char* sub : {"morphs", "bonafides", "probes"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }

  Json manifest{{"format", kDatasetFormat}, {"version", kDatasetVersion}, {"resolution", dataset.resolution},
                {"source", source}};

  // Bonafides are written once and referenced by (identity, pixels).
  std::map<int, std::vector<std::pair<const Image*, std::string>>> written;
  Json bonafides = Json::array();
  for (const auto& b : dataset.bonafides) {
    const std::string rel = format_name("bonafides/id%04d_v%03d.png", b.identity, b.variation);
    save_png(b.image, dir / rel);
    written[b.identity].emplace_back(&b.image, rel);
    bonafides.push_back(labeled_record(rel, b));
  }
  int extra = 0;
  auto bonafide_path = [&](const Image& img, int id) {
    for (const auto& [ptr, rel] : written[id]) {
      if (*ptr == img) return rel;
    }
    const std::string rel = format_name("bonafides/id%04d_x%03d.png", id, extra++);
    save_png(img, dir / rel);
    written[id].emplace_back(&img, rel);
    return rel;
  };

  Json morphs = Json::array();
  int index = 0;
  for (const auto* part : {&dataset.split.train, &dataset.split.test}) {
    const char* split = part == &dataset.split.train ? "train" : "test";
    for (const auto& s : *part) {
      const std::string rel = format_name("morphs/%05d_%04d_%04d.png", index++, s.identity1, s.identity2);
      save_png(s.morph, dir / rel);
      morphs.push_back(Json{{"morph_path", rel},
                            {"bonafide1_path", bonafide_path(s.bonafide1, s.identity1)},
                            {"bonafide2_path", bonafide_path(s.bonafide2, s.identity2)},
                            {"id1", s.identity1},
                            {"id2", s.identity2},
                            {"alpha", s.alpha},
                            {"split", split}});
    }
  }

  Json probes = Json::array();
  for (std::size_t i = 0; i < dataset.probes.size(); ++i) {
    const auto& p = dataset.probes[i];
    const std::string rel = format_name("probes/%04d_id%04d_v%03d.png", static_cast<int>(i), p.identity, p.variation);
    save_png(p.image, dir / rel);
    probes.push_back(labeled_record(rel, p));
  }

  manifest["morphs"] = std::move(morphs);
  manifest["bonafides"] = std::move(bonafides);
  manifest["probes"] = std::move(probes);
  write_json_file(dir / "manifest.json", manifest);
}

Dataset load_dataset(const fs::path& path, int resolution, double train_fraction, std::uint64_t seed) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  if (!fs::exists(file)) throw IoError("dataset manifest not found: " + file.string());
  Json manifest;
  try {
    manifest = read_json_file(file);
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }

  Dataset out;
  out.resolution = resolution;
  ImageReader reader(file.parent_path(), resolution);
  try {
    if (manifest.contains("format") && manifest.at("format") != kDatasetFormat) {
      throw DataError("unsupported dataset format in " + file.string());
    }
    std::vector<MorphSample> samples;
    std::vector<std::string> splits;
    std::map<std::string, int> derived;  // bonafide path -> identity, in first-seen order
    std::vector<std::string> derived_order;
    const Json empty = Json::array();
    const Json& records = manifest.contains("morphs") ? manifest.at("morphs") : empty;
    for (const auto& r : records) {
      MorphSample s;
      s.morph = reader.get(r.at("morph_path").get<std::string>());
      const auto p1 = r.at("bonafide1_path").get<std::string>();
      const auto p2 = r.at("bonafide2_path").get<std::string>();
      s.bonafide1 = reader.get(p1);
      s.bonafide2 = reader.get(p2);
      s.identity1 = r.at("id1").get<int>();
      s.identity2 = r.at("id2").get<int>();
      s.alpha = r.value("alpha", 0.5);
      if (s.identity1 == s.identity2) {
        throw DataError("morph " + r.at("morph_path").get<std::string>() + " uses one identity twice");
      }
      for (const auto& [p, id] : {std::pair{p1, s.identity1}, std::pair{p2, s.identity2}}) {
        if (derived.emplace(p, id).second) derived_order.push_back(p);
      }
      splits.push_back(r.contains("split") ? r.at("split").get<std::string>() : std::string());
      samples.push_back(std::move(s));
    }

    const auto labelled = std::count_if(splits.begin(), splits.end(), [](const auto& s) { return !s.empty(); });
    if (labelled == 0) {
      if (!samples.empty()) out.split = build_scenario1_split(samples, train_fraction, seed);
    } else if (labelled == static_cast<std::ptrdiff_t>(splits.size())) {
      for (std::size_t i = 0; i < samples.size(); ++i) {
        if (splits[i] == "train") {
          out.split.bonafide_pool.insert(samples[i].identity1);
          out.split.bonafide_pool.insert(samples[i].identity2);
          out.split.train.push_back(std::move(samples[i]));
        } else if (splits[i] == "test") {
          out.split.test.push_back(std::move(samples[i]));
        } else {
          throw DataError("unknown split '" + splits[i] + "' (expected train or test)");
        }
      }
      check_scenario1(out.split);
    } else {
      throw DataError("the split field must be set on every morph record or on none");
    }

    if (manifest.contains("bonafides")) {
      out.bonafides = read_labeled(manifest.at("bonafides"), reader);
    } else {
      std::map<int, int> seen;
      for (const auto& p : derived_order) {
        LabeledImage img;
        img.image = reader.get(p);
        img.identity = derived[p];
        img.variation = seen[img.identity]++;
        out.bonafides.push_back(std::move(img));
      }
    }
    if (manifest.contains("probes")) out.probes = read_labeled(manifest.at("probes"), reader);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest " + file.string() + ": " + e.what());
  }
  if (out.split.train.empty() && out.split.test.empty() && out.bonafides.empty()) {
    throw DataError("dataset " + file.string() + " holds no images");
  }
  return out;
}

}  // namespace demorph
