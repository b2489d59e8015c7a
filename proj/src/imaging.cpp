#include "demorph/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <utility>

namespace demorph {

namespace {

// Indices into IdentityParams::appearance.
enum Geometry : int {
  kBgTone = 0,
  kBgAngle,
  kBgStrength,
  kHeadCx,
  kHeadCy,
  kHeadAx,
  kHeadAy,
  kSkinLum,
  kSkinWarm,
  kSkinBlue,
  kHairline,
  kHairTone,
  kEyeSpacing,
  kEyeSize,
  kEyeHeight,
  kEyeTone,
  kMouthWidth,
  kMouthCurve,
  kMouthHeight,
  kMouthTone,
  kTextureAmp,
};
static_assert(kTextureAmp + 1 == IdentityParams::kGeometrySize);

struct Rgb {
  double r, g, b;
};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

// Coverage of an ellipse at a pixel, anti-aliased over roughly one pixel.
double ellipse_mask(double u, double v, double cx, double cy, double ax, double ay,
                    double pixel) {
  const double du = (u - cx) / ax;
  const double dv = (v - cy) / ay;
  const double signed_distance = (std::sqrt(du * du + dv * dv) - 1.0) * std::min(ax, ay);
  return std::clamp(0.5 - signed_distance / pixel, 0.0, 1.0);
}

// Smoothstep squeezed into the middle 40% of a cell so the texture reads as soft tiles.
double smooth(double t) {
  t = std::clamp((t - 0.5) * 2.5 + 0.5, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// C1 interpolation of the identity texture grid at (u, v) in [-1, 1]^2.
double texture_at(const std::vector<double>& appearance, double u, double v) {
  constexpr int g = IdentityParams::kTextureGrid;
  const double gx = std::clamp((u + 1.0) * 0.5 * g - 0.5, 0.0, g - 1.0);
  const double gy = std::clamp((v + 1.0) * 0.5 * g - 0.5, 0.0, g - 1.0);
  const int x0 = std::min(static_cast<int>(gx), g - 2);
  const int y0 = std::min(static_cast<int>(gy), g - 2);
  const double tx = smooth(gx - x0);
  const double ty = smooth(gy - y0);
  auto cell = [&](int x, int y) {
    return appearance[IdentityParams::kGeometrySize + y * g + x] * 2.0 - 1.0;
  };
  const double top = cell(x0, y0) * (1 - tx) + cell(x0 + 1, y0) * tx;
  const double bottom = cell(x0, y0 + 1) * (1 - tx) + cell(x0 + 1, y0 + 1) * tx;
  return top * (1 - ty) + bottom * ty;
}

}  // namespace

IdentityParams make_identity(std::uint64_t seed) {
  IdentityParams id;
  id.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0x1D));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  id.appearance.resize(IdentityParams::kSize);
  for (auto& a : id.appearance) a = unit(rng);
  return id;
}

void validate_resolution(int resolution) {
  if (resolution < 16 || resolution % 16 != 0) {
    throw ConfigError("resolution must be >= 16 and divisible by 16, got " +
                      std::to_string(resolution));
  }
}

Image render_bonafide(const IdentityParams& identity, std::uint64_t variation_seed,
                      int resolution) {
  validate_resolution(resolution);
  if (identity.appearance.size() != static_cast<std::size_t>(IdentityParams::kSize)) {
    throw ConfigError("identity appearance vector has wrong length");
  }
  const auto& p = identity.appearance;

  const double bg_tone = 0.35 + 0.3 * p[kBgTone];
  const double bg_angle = 2.0 * std::numbers::pi * p[kBgAngle];
  const double bg_strength = 0.15 * p[kBgStrength];
  const double head_cx = (p[kHeadCx] - 0.5) * 0.2;
  const double head_cy = (p[kHeadCy] - 0.5) * 0.16 + 0.05;
  const double head_ax = 0.45 + 0.15 * p[kHeadAx];
  const double head_ay = 0.58 + 0.15 * p[kHeadAy];
  const double skin = bg_tone + (p[kSkinLum] - 0.5) * 0.3;
  const Rgb skin_rgb{std::min(1.0, skin * (1.0 + 0.25 * (p[kSkinWarm] - 0.3))), skin,
                     skin * (1.0 - 0.3 * p[kSkinBlue])};
  const double hairline = head_cy + (-0.15 - 0.3 * p[kHairline]) * head_ay;
  const double hair = std::clamp(skin + (p[kHairTone] - 0.5) * 0.5, 0.05, 0.95);
  const Rgb hair_rgb{std::min(1.0, hair * 1.15), hair, hair * 0.8};
  const double eye_dx = (0.28 + 0.14 * p[kEyeSpacing]) * head_ax;
  const double eye_r = (0.07 + 0.05 * p[kEyeSize]) * head_ax;
  const double eye_y = head_cy + (-0.15 + 0.15 * p[kEyeHeight]) * head_ay;
  const double iris = std::max(0.05, skin - 0.1 - 0.25 * p[kEyeTone]);
  const double mouth_w = (0.18 + 0.15 * p[kMouthWidth]) * head_ax;
  const double mouth_curve = (p[kMouthCurve] - 0.5) * 0.3;
  const double mouth_y = head_cy + (0.3 + 0.15 * p[kMouthHeight]) * head_ay;
  const Rgb lips{0.5 + 0.4 * p[kMouthTone], 0.2, 0.25};
  const double texture_amp = 0.28 + 0.06 * p[kTextureAmp];

  // Variation jitter: each term bounded so one rendering moves at most 0.025 per pixel.
  std::mt19937_64 rng(mix_seed(identity.seed, 0xA000 + variation_seed));
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const double jitter_bright = 0.01 * sym(rng);
  const double jitter_angle = std::numbers::pi * sym(rng);
  const double jitter_grad = 0.006 * (0.5 + 0.5 * sym(rng));
  const double noise_amp = 0.0065;

  const double pixel = 2.0 / resolution;
  Image img(Shape{1, kImageChannels, resolution, resolution});
  for (int y = 0; y < resolution; ++y) {
    const double v = (y + 0.5) * pixel - 1.0;
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) * pixel - 1.0;
      const double bg =
          bg_tone + bg_strength * (u * std::cos(bg_angle) + v * std::sin(bg_angle));
      Rgb c{bg, bg, bg};

      const double head = ellipse_mask(u, v, head_cx, head_cy, head_ax, head_ay, pixel);
      c = lerp(c, skin_rgb, head);
      const double hair_mask = head * std::clamp(0.5 + (hairline - v) / pixel, 0.0, 1.0);
      c = lerp(c, hair_rgb, hair_mask);

      for (int side : {-1, 1}) {
        const double ex = head_cx + side * eye_dx;
        const double sclera = ellipse_mask(u, v, ex, eye_y, eye_r * 1.6, eye_r, pixel);
        const double white = std::min(0.95, skin + 0.25);
        c = lerp(c, Rgb{white, white, white * 0.98}, sclera * head);
        const double pupil = ellipse_mask(u, v, ex, eye_y, eye_r * 0.75, eye_r * 0.75, pixel);
        c = lerp(c, Rgb{iris, iris * 0.9, iris * 0.8}, pupil * head);
        const double brow = ellipse_mask(u, v, ex, eye_y - 2.2 * eye_r, eye_r * 1.8,
                                         eye_r * 0.35, pixel);
        c = lerp(c, hair_rgb, brow * head);
      }

      const double mu = (u - head_cx) / mouth_w;
      if (std::abs(mu) < 1.0) {
        const double centre = mouth_y + mouth_curve * (mu * mu - 0.5) * mouth_w;
        const double band = std::clamp(0.5 - (std::abs(v - centre) - 0.035) / pixel, 0.0, 1.0);
        const double taper = std::clamp((1.0 - std::abs(mu)) * 4.0, 0.0, 1.0);
        c = lerp(c, lips, band * taper * head);
      }

      const double texture = texture_amp * texture_at(p, u, v);
      const double jitter = jitter_bright +
                            jitter_grad * (u * std::cos(jitter_angle) + v * std::sin(jitter_angle)) *
                                (1.0 / std::numbers::sqrt2) +
                            noise_amp * sym(rng);
      const double offset = texture + jitter;
      img(0, 0, y, x) = static_cast<float>(std::clamp(c.r + offset, 0.0, 1.0));
      img(0, 1, y, x) = static_cast<float>(std::clamp(c.g + offset, 0.0, 1.0));
      img(0, 2, y, x) = static_cast<float>(std::clamp(c.b + offset, 0.0, 1.0));
    }
  }
  return img;
}

Image make_morph(const Image& b1, const Image& b2, double alpha) {
  require_same_shape(b1.shape(), b2.shape(), "make_morph");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw DomainError("make_morph: alpha must lie in [0,1]");
  }
  // Both weights come from one exact subtraction so the swapped call uses the same pair.
  double w1, w2;
  if (alpha >= 0.5) {
    w1 = alpha;
    w2 = 1.0 - alpha;
  } else {
    w2 = 1.0 - alpha;
    w1 = 1.0 - w2;
  }
  Image out(b1.shape());
  auto a = b1.values();
  auto b = b2.values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = w1 * static_cast<double>(a[i]) + w2 * static_cast<double>(b[i]);
    o[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

IdentityParams dataset_identity(std::uint64_t dataset_seed, int label) {
  return make_identity(mix_seed(dataset_seed, static_cast<std::uint64_t>(label)));
}

std::vector<MorphSample> generate_dataset(int n_identities, int variations_per_identity,
                                          std::span<const double> alphas, int resolution,
                                          std::uint64_t seed) {
  if (n_identities < 2) throw ConfigError("generate_dataset: need at least 2 identities");
  if (variations_per_identity < 1) throw ConfigError("generate_dataset: need >= 1 variation");
  if (alphas.empty()) throw ConfigError("generate_dataset: no morph alphas");
  validate_resolution(resolution);

  std::vector<IdentityParams> ids;
  for (int i = 0; i < n_identities; ++i) ids.push_back(dataset_identity(seed, i));
  std::vector<int> uses(n_identities, 0);
  std::map<std::pair<int, int>, Image> cache;
  auto bonafide = [&](int id) -> const Image& {
    const int variation = uses[id]++ % variations_per_identity;
    auto key = std::make_pair(id, variation);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, render_bonafide(ids[id], variation, resolution)).first;
    }
    return it->second;
  };

  std::vector<MorphSample> out;
  for (int i = 0; i < n_identities; ++i) {
    for (int j = i + 1; j < n_identities; ++j) {
      const Image b1 = bonafide(i);
      const Image b2 = bonafide(j);
      for (double alpha : alphas) {
        MorphSample s;
        s.bonafide1 = b1;
        s.bonafide2 = b2;
        s.identity1 = i;
        s.identity2 = j;
        s.alpha = alpha;
        s.morph = make_morph(b1, b2, alpha);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<LabeledImage> generate_bonafides(int n_identities, int variations_per_identity,
                                             int resolution, std::uint64_t seed) {
  if (n_identities < 1) throw ConfigError("generate_bonafides: need at least 1 identity");
  validate_resolution(resolution);
  std::vector<LabeledImage> out;
  for (int i = 0; i < n_identities; ++i) {
    const auto id = dataset_identity(seed, i);
    for (int v = 0; v < variations_per_identity; ++v) {
      out.push_back({render_bonafide(id, v, resolution), i, v});
    }
  }
  return out;
}

DatasetSplit build_scenario1_split(std::span<const MorphSample> samples, double train_fraction,
                                   std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0,1)");
  }
  using Pair = std::pair<int, int>;
  std::map<Pair, std::vector<std::size_t>> by_pair;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.identity1 == s.identity2) {
      throw DataError("morph sample has identical identities " + std::to_string(s.identity1));
    }
    by_pair[{std::min(s.identity1, s.identity2), std::max(s.identity1, s.identity2)}].push_back(i);
  }
  std::vector<Pair> pairs;
  std::map<int, int> pairs_per_identity;
  for (const auto& [pair, _] : by_pair) {
    pairs.push_back(pair);
    ++pairs_per_identity[pair.first];
    ++pairs_per_identity[pair.second];
  }
  std::vector<int> lonely;
  for (const auto& [id, count] : pairs_per_identity) {
    if (count < 2) lonely.push_back(id);
  }
  auto join = [](const std::vector<int>& ids) {
    std::ostringstream os;
    for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? ", " : "") << ids[i];
    return os.str();
  };
  if (!lonely.empty()) {
    throw SplitError("identities occurring in fewer than two morph pairs cannot be shared "
                     "between train and test: " + join(lonely));
  }
  if (pairs.size() < 2) throw SplitError("need at least two identity pairs to split");

  const int n_train = std::clamp(static_cast<int>(std::lround(train_fraction * pairs.size())), 1,
                                 static_cast<int>(pairs.size()) - 1);

  std::mt19937_64 rng(mix_seed(seed, 0x5B17));
  std::vector<int> uncovered;
  for (int attempt = 0; attempt < 20000; ++attempt) {
    std::vector<Pair> order = pairs;
    std::shuffle(order.begin(), order.end(), rng);
    std::set<int> train_ids;
    for (int i = 0; i < n_train; ++i) {
      train_ids.insert(order[i].first);
      train_ids.insert(order[i].second);
    }
    std::vector<int> missing;
    for (std::size_t i = n_train; i < order.size(); ++i) {
      for (int id : {order[i].first, order[i].second}) {
        if (!train_ids.count(id)) missing.push_back(id);
      }
    }
    if (missing.empty()) {
      const std::set<Pair> train_pairs(order.begin(), order.begin() + n_train);
      DatasetSplit split;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const Pair key{std::min(s.identity1, s.identity2), std::max(s.identity1, s.identity2)};
        (train_pairs.count(key) ? split.train : split.test).push_back(s);
      }
      split.bonafide_pool = std::move(train_ids);
      return split;
    }
    if (uncovered.empty() || missing.size() < uncovered.size()) uncovered = missing;
  }
  std::sort(uncovered.begin(), uncovered.end());
  uncovered.erase(std::unique(uncovered.begin(), uncovered.end()), uncovered.end());
  throw SplitError("no pair split shares the bonafide pool; test-only identities: " +
                   join(uncovered));
}

Image resize_bilinear(const Image& image, int resolution) {
  if (image.n() != 1) throw DimensionError("resize_bilinear expects a single image");
  if (image.h() == resolution && image.w() == resolution) return image;
  Image out(Shape{1, image.c(), resolution, resolution});
  const double sy = static_cast<double>(image.h()) / resolution;
  const double sx = static_cast<double>(image.w()) / resolution;
  for (int c = 0; c < image.c(); ++c) {
    for (int y = 0; y < resolution; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.h() - 1.0);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, image.h() - 1);
      const double ty = fy - y0;
      for (int x = 0; x < resolution; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.w() - 1.0);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, image.w() - 1);
        const double tx = fx - x0;
        const double top = image(0, c, y0, x0) * (1 - tx) + image(0, c, y0, x1) * tx;
        const double bot = image(0, c, y1, x0) * (1 - tx) + image(0, c, y1, x1) * tx;
        out(0, c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

void validate_image(const Image& image, int resolution) {
  const Shape expected{1, kImageChannels, resolution, resolution};
  if (!(image.shape() == expected)) {
    throw DimensionError("expected image " + expected.str() + ", got " + image.shape().str());
  }
  for (float v : image.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("image intensity outside [0,1]");
  }
}

}  // namespace demorph
