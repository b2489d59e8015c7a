#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "demorph/config.hpp"
#include "demorph/imaging.hpp"

namespace demorph {

// A dataset on disk: PNG files plus manifest.json.
//
//   {"format": "demorph-dataset", "version": 1, "resolution": 64, "source": {...},
//    "morphs":    [{"morph_path", "bonafide1_path", "bonafide2_path", "id1", "id2", "alpha", "split"}],
//    "bonafides": [{"path", "id", "variation"}],
//    "probes":    [{"path", "id", "variation"}]}
//
// Paths are relative to the manifest. Only "morphs" with its five path/id fields is required;
// "alpha" defaults to 0.5 and "split" ("train" | "test") must be on all records or none.
struct Dataset {
  int resolution = 0;
  DatasetSplit split;
  std::vector<LabeledImage> bonafides;  // decomposition-mode training images
  std::vector<LabeledImage> probes;     // non-morph inputs for the demorpher
};

inline constexpr const char* kDatasetFormat = "demorph-dataset";
inline constexpr int kDatasetVersion = 1;

// Procedural dataset: all identity pairs as morphs split by pairs, every bonafide, and
// data.non_morph_probes probes drawn from variations not used in any morph.
Dataset generate_experiment_data(const DataConfig& data, int resolution);

// `source` is stored verbatim under "source".
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, const Json& source = Json::object());

// `path` is a manifest file or a directory holding manifest.json. Images not at `resolution`
// are resized bilinearly. Unsplit manifests are split by pairs with (train_fraction, seed).
// When "bonafides" is absent it is rebuilt from the distinct bonafides of the morph records.
Dataset load_dataset(const std::filesystem::path& path, int resolution, double train_fraction,
                     std::uint64_t seed);

}  // namespace demorph
