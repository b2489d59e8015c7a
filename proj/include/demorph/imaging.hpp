#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "demorph/seed.hpp"
#include "demorph/tensor.hpp"

namespace demorph {

inline constexpr int kImageChannels = 3;

// Procedural identity. The appearance vector is a pure function of the seed.
struct IdentityParams {
  std::uint64_t seed = 0;
  std::vector<double> appearance;

  static constexpr int kTextureGrid = 8;
  static constexpr int kGeometrySize = 21;
  static constexpr int kSize = kGeometrySize + kTextureGrid * kTextureGrid;
};

struct MorphSample {
  Image morph;
  Image bonafide1;
  Image bonafide2;
  int identity1 = 0;
  int identity2 = 0;
  double alpha = 0.5;
};

struct DatasetSplit {
  std::vector<MorphSample> train;
  std::vector<MorphSample> test;
  std::set<int> bonafide_pool;
};

// A bonafide together with its identity label, used for decomposition-mode data.
struct LabeledImage {
  Image image;
  int identity = 0;
  int variation = 0;
};

IdentityParams make_identity(std::uint64_t seed);

// Throws ConfigError unless resolution >= 16 and divisible by 16.
void validate_resolution(int resolution);

Image render_bonafide(const IdentityParams& identity, std::uint64_t variation_seed,
                      int resolution);

// Per-pixel alpha * b1 + (1 - alpha) * b2. Symmetric under (b1, b2, alpha) <-> (b2, b1, 1 - alpha)
// bit for bit.
Image make_morph(const Image& b1, const Image& b2, double alpha);

DatasetSplit build_scenario1_split(std::span<const MorphSample> samples, double train_fraction,
                                   std::uint64_t seed);

std::vector<MorphSample> generate_dataset(int n_identities, int variations_per_identity,
                                          std::span<const double> alphas, int resolution,
                                          std::uint64_t seed);

// Unique bonafides for identities 0..n-1, variations 0..v-1, identity-major order.
std::vector<LabeledImage> generate_bonafides(int n_identities, int variations_per_identity,
                                             int resolution, std::uint64_t seed);

// Identity label -> procedural identity for a dataset seed.
IdentityParams dataset_identity(std::uint64_t dataset_seed, int label);

// Bilinear resample (half-pixel centers) of a 1xCxHxW image to res x res.
Image resize_bilinear(const Image& image, int resolution);

// Throws DimensionError / DomainError when the tensor is not a valid ImageTensor.
void validate_image(const Image& image, int resolution);

}  // namespace demorph
