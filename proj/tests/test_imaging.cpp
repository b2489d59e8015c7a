#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "demorph/biometric.hpp"
#include "demorph/imaging.hpp"

using namespace demorph;

namespace {

float max_abs_diff(const Image& a, const Image& b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

void check_range(const Image& img) {
  for (float v : img.values()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

using PairKey = std::pair<int, int>;

PairKey key(const MorphSample& s) {
  return {std::min(s.identity1, s.identity2), std::max(s.identity1, s.identity2)};
}

// Exhaustive scan of the scenario-1 invariants.
void check_split(const DatasetSplit& split) {
  std::set<PairKey> train_pairs, test_pairs;
  std::set<int> train_ids;
  for (const auto& s : split.train) {
    train_pairs.insert(key(s));
    train_ids.insert(s.identity1);
    train_ids.insert(s.identity2);
  }
  for (const auto& s : split.test) test_pairs.insert(key(s));
  for (const auto& p : test_pairs) CHECK(train_pairs.count(p) == 0);
  for (const auto& s : split.test) {
    CHECK(split.bonafide_pool.count(s.identity1) == 1);
    CHECK(split.bonafide_pool.count(s.identity2) == 1);
  }
  CHECK(split.bonafide_pool == train_ids);
}

}  // namespace

TEST_CASE("identities are pure functions of their seed") {
  const auto a = make_identity(7);
  const auto b = make_identity(7);
  const auto c = make_identity(8);
  CHECK(a.appearance == b.appearance);
  CHECK(a.appearance.size() == static_cast<std::size_t>(IdentityParams::kSize));
  CHECK(a.appearance != c.appearance);
}

TEST_CASE("rendering") {
  const auto id = make_identity(7);
  const Image v0 = render_bonafide(id, 0, 64);
  CHECK(v0.shape() == Shape{1, 3, 64, 64});
  CHECK(render_bonafide(id, 0, 64) == v0);
  check_range(v0);
  const Image v1 = render_bonafide(id, 1, 64);
  CHECK(max_abs_diff(v0, v1) <= 0.05f);
  CHECK_FALSE(v0 == v1);

  ToyComparator cmp;
  const Image other = render_bonafide(make_identity(8), 0, 64);
  CHECK(similarity(*cmp.embed(v0), *cmp.embed(other)) < kDefaultTau);
  CHECK(similarity(*cmp.embed(v0), *cmp.embed(v1)) > kDefaultTau);

  CHECK_THROWS_AS(render_bonafide(id, 0, 24), ConfigError);
  CHECK_THROWS_AS(render_bonafide(id, 0, 8), ConfigError);
  CHECK_NOTHROW(render_bonafide(id, 0, 16));
}

TEST_CASE("distinct identities rarely match under the toy comparator") {
  ToyComparator cmp;
  std::vector<Embedding> e;
  for (int i = 0; i < 40; ++i) e.push_back(*cmp.embed(render_bonafide(make_identity(1000 + i), 0, 64)));
  int matches = 0, total = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      matches += similarity(e[i], e[j]) > kDefaultTau;
      ++total;
    }
  }
  CHECK(static_cast<double>(matches) / total <= 0.01);
}

TEST_CASE("morphing") {
  const Shape s{1, 3, 2, 2};
  const Image a(s, 0.2f), b(s, 0.6f);
  const Image mid = make_morph(a, b, 0.5);
  for (float v : mid.values()) CHECK(v == doctest::Approx(0.4f));
  CHECK(make_morph(a, b, 1.0) == a);
  CHECK(make_morph(a, b, 0.0) == b);
  CHECK(make_morph(a, a, 0.5) == a);
  CHECK_THROWS_AS(make_morph(a, Image(Shape{1, 3, 2, 4}), 0.5), DimensionError);
  CHECK_THROWS_AS(make_morph(a, b, 1.5), DomainError);

  const Image x = render_bonafide(make_identity(1), 0, 32);
  const Image y = render_bonafide(make_identity(2), 0, 32);
  for (double alpha : {0.0, 0.1, 0.3, 0.37, 0.5, 0.61, 0.9, 1.0}) {
    const Image m = make_morph(x, y, alpha);
    check_range(m);
    CHECK(m == make_morph(y, x, 1.0 - alpha));
  }
}

TEST_CASE("dataset generation") {
  const std::vector<double> half{0.5};
  const auto d = generate_dataset(4, 2, half, 64, 1);
  CHECK(d.size() == 6);
  for (const auto& s : d) {
    CHECK(s.identity1 != s.identity2);
    CHECK(s.morph == make_morph(s.bonafide1, s.bonafide2, s.alpha));
    check_range(s.morph);
  }

  const std::vector<double> two{0.3, 0.7};
  const auto e = generate_dataset(2, 1, two, 64, 1);
  REQUIRE(e.size() == 2);
  CHECK(e[0].alpha == 0.3);
  CHECK(e[1].alpha == 0.7);
  CHECK(e[0].bonafide1 == e[1].bonafide1);
  CHECK(e[0].morph == make_morph(e[0].bonafide1, e[0].bonafide2, 0.3));

  const auto again = generate_dataset(4, 2, half, 64, 1);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(again[i].morph == d[i].morph);
  CHECK_THROWS_AS(generate_dataset(1, 1, half, 64, 1), ConfigError);
}

TEST_CASE("bonafide generation matches the dataset identities") {
  const auto bona = generate_bonafides(3, 2, 32, 5);
  REQUIRE(bona.size() == 6);
  CHECK(bona[3].identity == 1);
  CHECK(bona[3].variation == 1);
  CHECK(bona[3].image == render_bonafide(dataset_identity(5, 1), 1, 32));
}

TEST_CASE("scenario-1 split") {
  const std::vector<double> alphas{0.3, 0.7};
  const auto samples = generate_dataset(4, 1, alphas, 16, 3);
  REQUIRE(samples.size() == 12);

  const auto split = build_scenario1_split(samples, 0.6, 9);
  // Pairs are never divided, so each side holds whole pairs of two morphs: 4 pairs train, 2 test.
  CHECK(split.train.size() == 8);
  CHECK(split.test.size() == 4);
  check_split(split);
  CHECK(split.bonafide_pool == std::set<int>{0, 1, 2, 3});

  const auto again = build_scenario1_split(samples, 0.6, 9);
  REQUIRE(again.train.size() == split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) CHECK(key(again.train[i]) == key(split.train[i]));

  for (std::uint64_t seed = 0; seed < 20; ++seed) check_split(build_scenario1_split(samples, 0.6, seed));

  const std::vector<double> half{0.5};
  const auto six = generate_dataset(6, 1, half, 16, 3);
  for (double f : {0.3, 0.5, 0.6, 0.8}) check_split(build_scenario1_split(six, f, 4));
}

TEST_CASE("scenario-1 split errors") {
  const std::vector<double> half{0.5};
  auto samples = generate_dataset(4, 1, half, 16, 3);
  // Keep (0,1), (0,2), (1,2) and add (2,3): identity 3 occurs once.
  std::vector<MorphSample> lonely;
  for (const auto& s : samples) {
    if (s.identity2 != 3 || s.identity1 == 2) lonely.push_back(s);
  }
  try {
    build_scenario1_split(lonely, 0.6, 1);
    FAIL("expected a split error");
  } catch (const SplitError& e) {
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
  CHECK_THROWS_AS(build_scenario1_split(samples, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(build_scenario1_split(samples, 1.0, 1), ConfigError);
}

TEST_CASE("bilinear resize") {
  const Image flat(Shape{1, 3, 20, 20}, 0.3f);
  const Image up = resize_bilinear(flat, 64);
  CHECK(up.shape() == Shape{1, 3, 64, 64});
  for (float v : up.values()) CHECK(v == doctest::Approx(0.3f));
  const Image img = render_bonafide(make_identity(4), 0, 32);
  CHECK(resize_bilinear(img, 32) == img);
  const Image down = resize_bilinear(resize_bilinear(img, 64), 32);
  CHECK(max_abs_diff(down, img) < 0.2f);
}

TEST_CASE("image validation") {
  Image img(Shape{1, 3, 16, 16}, 0.5f);
  CHECK_NOTHROW(validate_image(img, 16));
  CHECK_THROWS_AS(validate_image(img, 32), DimensionError);
  img.data()[5] = 1.5f;
  CHECK_THROWS_AS(validate_image(img, 16), DomainError);
  img.data()[5] = std::nanf("");
  CHECK_THROWS_AS(validate_image(img, 16), DomainError);
}
