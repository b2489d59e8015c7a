#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "demorph/biometric.hpp"
#include "demorph/nets.hpp"

namespace demorph {

inline constexpr double kPsnrCap = 100.0;

struct MatchAccuracy {
  double value = 0.0;
  int matches = 0;
  int evaluated = 0;  // denominator
  int not_found = 0;  // pairs where either side had no embedding
};

using ImagePair = std::pair<Image, Image>;

// Fraction of pairs that match at tau. With exclude_not_found, NotFound pairs leave the
// denominator. Throws MetricError when nothing is left to count.
MatchAccuracy match_accuracy(std::span<const ImagePair> pairs, const Comparator& comparator,
                             double tau, bool exclude_not_found);

struct RestorationInput {
  Image o1, o2, b1, b2;
};

struct RestorationRecord {
  bool swapped = false;  // O2 assigned to B1
  // Similarity of each output to each bonafide; empty on NotFound.
  std::optional<double> o1_b1, o1_b2, o2_b1, o2_b2;
  bool subject1_correct = false;
  bool subject2_correct = false;
  bool not_found = false;
};

struct RestorationAccuracy {
  double subject1 = 0.0;
  double subject2 = 0.0;
  std::vector<RestorationRecord> records;
};

// Outputs are paired with bonafides by the assignment with the larger total similarity
// (natural on ties). Subject s is correct when its assigned output matches B_s and not the other.
RestorationAccuracy restoration_accuracy(std::span<const RestorationInput> results,
                                         const Comparator& comparator, double tau);

struct LeakageReport {
  int images = 0;
  std::vector<double> leak_rate;                       // per component index, over all images
  std::vector<std::optional<double>> leak_rate_found;  // NotFound removed; empty if nothing left
  std::vector<int> not_found;                          // per index
  double reconstruction_rate = 0.0;                    // full ComponentSet control
  std::optional<double> reconstruction_rate_found;
  int reconstruction_not_found = 0;
};

// For each index i, merges [I_i] * k and counts outputs that still match the original.
LeakageReport component_leakage(Decomposer<float>& decomposer, Merger<float>& merger,
                                std::span<const Image> images, const Comparator& comparator,
                                double tau);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Gaussian-window SSIM over valid windows, averaged over windows, channels and batch.
double ssim(const Image& a, const Image& b);

// 10 log10(1 / MSE), capped at 100.
double psnr(const Image& a, const Image& b);

// Frechet distance between Gaussians fitted to two feature sets (rows are samples).
// Each set needs at least dim + 1 rows.
double fid_from_features(const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b);

double fid(std::span<const Image> set_a, std::span<const Image> set_b, const Comparator& embedder);

// Minimum set size fid() accepts for this embedder.
int fid_min_samples(const Comparator& embedder, const Image& probe);

struct IqaReport {
  double ssim = 0.0;  // mean over pairs
  double psnr = 0.0;  // mean over pairs
  std::optional<double> fid;
  std::string fid_note;  // why fid is absent, or the embedder used
};

IqaReport image_quality(std::span<const Image> reference, std::span<const Image> restored,
                        const Comparator& embedder);

}  // namespace demorph
