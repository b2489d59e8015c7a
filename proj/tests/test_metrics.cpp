#include <cmath>
#include <random>

#include "doctest.h"
#include "demorph/imaging.hpp"
#include "demorph/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace demorph;

namespace {

// Reports NotFound for images whose first value is exactly zero.
class PickyComparator final : public Comparator {
 public:
  std::string name() const override { return "picky"; }
  std::optional<Embedding> embed(const Image& image) const override {
    if (image.data()[0] == 0.0f) return std::nullopt;
    return embed_toy(image);
  }
};

Image face(int id, int variation = 0) { return render_bonafide(make_identity(500 + id), variation, 64); }

// Direct windowed SSIM: explicit 11x11 weighted sums at every valid position.
}  // namespace

TEST_CASE("match accuracy") {
  ToyComparator toy;
  std::vector<ImagePair> same, distinct;
  for (int i = 0; i < 4; ++i) {
    same.emplace_back(face(i), face(i));
    distinct.emplace_back(face(i), face(i + 10));
  }
  CHECK(match_accuracy(same, toy, 0.4, false).value == 1.0);
  CHECK(match_accuracy(distinct, toy, 0.4, false).value == 0.0);

  PickyComparator picky;
  std::vector<ImagePair> mixed(same.begin(), same.begin() + 3);
  Image blank = face(3);
  blank.data()[0] = 0.0f;
  mixed.emplace_back(blank, face(3));
  const auto off = match_accuracy(mixed, picky, 0.4, false);
  CHECK(off.value == 0.75);
  CHECK(off.not_found == 1);
  const auto on = match_accuracy(mixed, picky, 0.4, true);
  CHECK(on.value == 1.0);
  CHECK(on.evaluated == 3);

  CHECK_THROWS_AS(match_accuracy(std::span<const ImagePair>{}, toy, 0.4, false), MetricError);
  std::vector<ImagePair> none{{blank, blank}};
  CHECK_THROWS_AS(match_accuracy(none, picky, 0.4, true), MetricError);
}

TEST_CASE("restoration accuracy") {
  ToyComparator toy;
  const Image b1 = face(1), b2 = face(2);
  const std::vector<RestorationInput> exact{{b1, b2, b1, b2}};
  auto r = restoration_accuracy(exact, toy, 0.4);
  CHECK(r.subject1 == 1.0);
  CHECK(r.subject2 == 1.0);
  CHECK_FALSE(r.records[0].swapped);

  const std::vector<RestorationInput> swapped{{b2, b1, b1, b2}};
  r = restoration_accuracy(swapped, toy, 0.4);
  CHECK(r.subject1 == 1.0);
  CHECK(r.subject2 == 1.0);
  CHECK(r.records[0].swapped);

  const std::vector<RestorationInput> collapsed{{b1, b1, b1, b2}};
  r = restoration_accuracy(collapsed, toy, 0.4);
  CHECK(r.subject1 == 1.0);
  CHECK(r.subject2 == 0.0);

  // A morph-like output matching both bonafides is wrong for its subject.
  const Image m = make_morph(b1, b2, 0.5);
  const std::vector<RestorationInput> ambiguous{{m, b2, b1, b2}};
  r = restoration_accuracy(ambiguous, toy, 0.4);
  CHECK(r.subject1 == 0.0);
  CHECK(r.subject2 == 1.0);

  std::mt19937_64 rng(3);
  std::vector<RestorationInput> random_set, flipped;
  for (int i = 0; i < 6; ++i) {
    const Image o1 = make_morph(face(i), face(i + 20), 0.8);
    const Image o2 = make_morph(face(i + 20), face(i), 0.7);
    random_set.push_back({o1, o2, face(i), face(i + 20)});
    flipped.push_back({o2, o1, face(i), face(i + 20)});
  }
  const auto ra = restoration_accuracy(random_set, toy, 0.4);
  const auto rb = restoration_accuracy(flipped, toy, 0.4);
  CHECK(ra.subject1 == rb.subject1);
  CHECK(ra.subject2 == rb.subject2);

  PickyComparator picky;
  Image blank = b1;
  blank.data()[0] = 0.0f;
  const std::vector<RestorationInput> lost{{blank, b2, b1, b2}};
  r = restoration_accuracy(lost, picky, 0.4);
  CHECK(r.records[0].not_found);
  CHECK(r.subject1 == 0.0);
  CHECK(r.subject2 == 1.0);
  CHECK_THROWS_AS(restoration_accuracy(std::span<const RestorationInput>{}, toy, 0.4), MetricError);
}

TEST_CASE("ssim") {
  std::mt19937_64 rng(5);
  const auto a = testing::random_tensor<float>(Shape{1, 3, 64, 64}, rng);
  const auto b = testing::random_tensor<float>(Shape{1, 3, 64, 64}, rng);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12);
  CHECK(std::abs(ssim(a, b) - oracle::naive_ssim(a, b)) < 1e-6);
  const Image f1 = face(1), f2 = face(2);
  CHECK(std::abs(ssim(f1, f2) - oracle::naive_ssim(f1, f2)) < 1e-6);
  for (int i = 0; i < 5; ++i) {
    auto c = a;
    c.data()[rng() % c.size()] += 0.01f;
    CHECK(ssim(a, c) < 1.0);
  }
  CHECK_THROWS_AS(ssim(Image(Shape{1, 3, 8, 8}), Image(Shape{1, 3, 8, 8})), MetricError);
  CHECK_THROWS_AS(ssim(a, Image(Shape{1, 3, 32, 32})), DimensionError);
}

TEST_CASE("psnr") {
  std::mt19937_64 rng(6);
  const auto a = testing::random_tensor<float>(Shape{1, 3, 16, 16}, rng);
  const auto b = testing::random_tensor<float>(Shape{1, 3, 16, 16}, rng);
  CHECK(psnr(a, a) == 100.0);
  const Image lo(Shape{1, 3, 8, 8}, 0.25f), hi(Shape{1, 3, 8, 8}, 0.35f);
  const double d = static_cast<double>(0.35f) - 0.25f;
  CHECK(psnr(lo, hi) == doctest::Approx(10.0 * std::log10(1.0 / (d * d))).epsilon(1e-12));
  CHECK(psnr(lo, hi) == doctest::Approx(20.0).epsilon(1e-5));
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = static_cast<double>(a.data()[i]) - b.data()[i];
    se += e * e;
  }
  CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(a.size() / se)) < 1e-9);
  CHECK(psnr(a, b) < 100.0);
}

TEST_CASE("fid") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int dim = 6, count = 40;
  std::vector<std::vector<double>> s(count, std::vector<double>(dim));
  for (auto& row : s)
    for (int j = 0; j < dim; ++j) row[j] = n01(rng) * (1.0 + j);
  CHECK(std::abs(fid_from_features(s, s)) <= 1e-6);

  std::vector<double> d(dim);
  double d2 = 0.0;
  for (int j = 0; j < dim; ++j) {
    d[j] = 0.3 * (j - 2.0);
    d2 += d[j] * d[j];
  }
  auto shifted = s;
  for (auto& row : shifted)
    for (int j = 0; j < dim; ++j) row[j] += d[j];
  CHECK(std::abs(fid_from_features(s, shifted) - d2) < 1e-4);

  std::vector<std::vector<double>> t(count, std::vector<double>(dim));
  for (auto& row : t)
    for (int j = 0; j < dim; ++j) row[j] = n01(rng) * 2.0 + 1.0;
  const double ab = fid_from_features(s, t);
  CHECK(std::abs(ab - fid_from_features(t, s)) < 1e-8);
  CHECK(ab > 0.0);

  // Rank-deficient covariance is tolerated through the eigenvalue clamp.
  auto flat = s;
  for (auto& row : flat) row[0] = 0.5;
  CHECK(fid_from_features(flat, flat) >= -1e-6);

  const std::vector<std::vector<double>> tiny(dim, std::vector<double>(dim, 0.0));
  CHECK_THROWS_AS(fid_from_features(tiny, s), MetricError);

  ToyComparator toy;
  std::vector<Image> images;
  for (int i = 0; i < 66; ++i) images.push_back(testing::random_tensor<float>(Shape{1, 3, 16, 16}, rng));
  CHECK(fid_min_samples(toy, images[0]) == 65);
  CHECK(std::abs(fid(images, images, toy)) <= 1e-6);
  CHECK_THROWS_AS(fid(std::span<const Image>(images).first(10), images, toy), MetricError);
}

TEST_CASE("image quality summary") {
  ToyComparator toy;
  std::vector<Image> ref{face(1), face(2)};
  std::vector<Image> out{face(1), face(2, 1)};
  const auto rep = image_quality(ref, out, toy);
  CHECK(rep.ssim < 1.0);
  CHECK(rep.ssim > 0.5);
  CHECK_FALSE(rep.fid.has_value());
  CHECK(rep.fid_note.find("65") != std::string::npos);
}

TEST_CASE("component leakage protocol") {
  const auto cfg = NetworkConfig{.k = 3, .resolution = 64, .base_channels = 4, .depth = 5, .heads = 1};
  auto nets = init_params<float>(cfg, 3);
  ToyComparator toy;
  std::vector<Image> images;
  for (int i = 0; i < 10; ++i) images.push_back(face(i));
  const auto rep = component_leakage(nets.decomposer, nets.merger, images, toy, 0.4);
  CHECK(rep.images == 10);
  CHECK(rep.leak_rate.size() == 3);
  CHECK(rep.leak_rate_found.size() == 3);
  CHECK(rep.reconstruction_rate < 0.2);

  auto two = init_params<float>(NetworkConfig{.k = 3, .resolution = 64, .base_channels = 4, .depth = 5, .heads = 2}, 3);
  CHECK_THROWS_AS(component_leakage(two.decomposer, two.merger, images, toy, 0.4), ModeError);
}
