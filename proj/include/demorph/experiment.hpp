#pragma once

#include <filesystem>
#include <vector>

#include "demorph/biometric.hpp"
#include "demorph/config.hpp"
#include "demorph/dataset_io.hpp"
#include "demorph/nets.hpp"

namespace demorph {

// Decomposition report over dataset.bonafides: reconstruction match accuracy (with and without
// NotFound images), mean l1 of the reconstruction and of every component, how often a component
// itself matches its input, the replicated-component leakage protocol, and SSIM/PSNR/FID of the
// reconstructions.
Json evaluate_decomposition(Networks<float>& nets, const Dataset& dataset, const Comparator& comparator,
                            double tau);

// Demorphing report: restoration accuracy on test and train morphs with per-morph records,
// the mean train cross-road term, IQA of assigned outputs against their bonafides, and the
// non-morph duplicate rate over dataset.probes.
Json evaluate_demorph(Networks<float>& nets, const Dataset& dataset, const Comparator& comparator,
                      double tau);

Json evaluate(Networks<float>& nets, TrainMode mode, const Dataset& dataset, const Comparator& comparator,
              double tau);

// Tiles rows of equally sized images into one PNG (2 px white gutters) and writes `caption`
// next to it as <path>.txt.
void save_grid(const std::filesystem::path& path, const std::vector<std::vector<Image>>& rows,
               const std::string& caption);

// Up to `limit` rows: decomposition rows are input, components, reconstruction; demorph rows are
// morph, B1, B2, components, O1, O2.
void write_grids(const std::filesystem::path& dir, Networks<float>& nets, TrainMode mode,
                 const Dataset& dataset, int limit = 8);

}  // namespace demorph
