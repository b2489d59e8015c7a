#include <cmath>
#include <random>

#include "doctest.h"
#include "demorph/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace demorph;
using testing::random_tensor;
using namespace oracle;

namespace {

using T = Tensor<double>;

Components<double> random_components(Shape s, int k, std::mt19937_64& rng) {
  Components<double> c;
  for (int i = 0; i < k; ++i) c.push_back(random_tensor(s, rng));
  return c;
}

void require_fd(const testing::FdStats& st) {
  CHECK(st.checked > 0);
  CHECK(st.max_rel < 1e-3);
}

}  // namespace

TEST_CASE("default lambda is 1/(k+1)") {
  CHECK(default_lambda(3) == 0.25);
  CHECK(default_lambda(1) == 0.5);
  CHECK(LossConfig::for_k(4).lambda == doctest::Approx(0.2));
  CHECK_THROWS_AS(default_lambda(0), DomainError);
}

TEST_CASE("loss values agree with scalar oracles") {
  std::mt19937_64 rng(11);
  const Shape s{1, 3, 8, 8};
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor(s, rng);
    const auto r = random_tensor(s, rng);
    const auto c = random_components(s, 3, rng);
    const auto o1 = random_tensor(s, rng), o2 = random_tensor(s, rng);
    const auto b1 = random_tensor(s, rng), b2 = random_tensor(s, rng);
    const LossConfig cfg = LossConfig::for_k(3);
    CHECK(std::abs(decomposition_loss(x, r, c, cfg) - oracle_decomposition(x, r, c, 0.25)) < 1e-10);
    CHECK(std::abs(crossroad_loss(o1, o2, b1, b2) - oracle_crossroad(o1, o2, b1, b2)) < 1e-10);
    CHECK(std::abs(final_loss(x, o1, o2, b1, b2, c, cfg) - oracle_final(x, o1, o2, b1, b2, c, 0.25)) <
          1e-10);
  }
}

TEST_CASE("batched losses average per-sample values") {
  std::mt19937_64 rng(12);
  const Shape s{3, 3, 8, 8};
  const auto x = random_tensor(s, rng), r = random_tensor(s, rng);
  const auto c = random_components(s, 3, rng);
  const LossConfig cfg{0.4, 3};
  double mean = 0.0;
  for (int i = 0; i < 3; ++i) {
    Components<double> ci;
    for (const auto& t : c) ci.push_back(slice_sample(t, i));
    mean += decomposition_loss(slice_sample(x, i), slice_sample(r, i), ci, cfg) / 3.0;
  }
  CHECK(decomposition_loss(x, r, c, cfg) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("decomposition loss gradients match finite differences") {
  std::mt19937_64 rng(21);
  const Shape s{2, 3, 8, 8};
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor(s, rng), r = random_tensor(s, rng);
    auto c = random_components(s, 3, rng);
    const LossConfig cfg{0.3, 3};
    DecompositionGrads<double> g;
    decomposition_loss(x, r, c, cfg, &g);
    auto f = [&] { return decomposition_loss(x, r, c, cfg); };
    require_fd(testing::fd_check(f, x, g.input, testing::all_coords(x)));
    require_fd(testing::fd_check(f, r, g.reconstruction, testing::all_coords(r)));
    for (int i = 0; i < 3; ++i) require_fd(testing::fd_check(f, c[i], g.components[i], testing::all_coords(c[i])));
  }
}

TEST_CASE("crossroad and final loss gradients match finite differences") {
  std::mt19937_64 rng(22);
  const Shape s{2, 3, 8, 8};
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_tensor(s, rng);
    auto o1 = random_tensor(s, rng), o2 = random_tensor(s, rng);
    auto b1 = random_tensor(s, rng), b2 = random_tensor(s, rng);
    auto c = random_components(s, 3, rng);
    const LossConfig cfg{0.25, 3};

    CrossroadGrads<double> cg;
    crossroad_loss(o1, o2, b1, b2, &cg);
    auto fc = [&] { return crossroad_loss(o1, o2, b1, b2); };
    require_fd(testing::fd_check(fc, o1, cg.o1, testing::all_coords(o1)));
    require_fd(testing::fd_check(fc, o2, cg.o2, testing::all_coords(o2)));
    require_fd(testing::fd_check(fc, b1, cg.b1, testing::all_coords(b1)));
    require_fd(testing::fd_check(fc, b2, cg.b2, testing::all_coords(b2)));

    FinalGrads<double> fg;
    final_loss(m, o1, o2, b1, b2, c, cfg, &fg);
    auto ff = [&] { return final_loss(m, o1, o2, b1, b2, c, cfg); };
    require_fd(testing::fd_check(ff, m, fg.morph, testing::all_coords(m)));
    require_fd(testing::fd_check(ff, o1, fg.o1, testing::all_coords(o1)));
    require_fd(testing::fd_check(ff, b2, fg.b2, testing::all_coords(b2)));
    for (int i = 0; i < 3; ++i) require_fd(testing::fd_check(ff, c[i], fg.components[i], testing::all_coords(c[i])));
  }
}

TEST_CASE("crossroad loss is order free") {
  std::mt19937_64 rng(31);
  const Shape s{1, 3, 8, 8};
  for (int trial = 0; trial < 100; ++trial) {
    const auto o1 = random_tensor(s, rng), o2 = random_tensor(s, rng);
    const auto b1 = random_tensor(s, rng), b2 = random_tensor(s, rng);
    const double base = crossroad_loss(o1, o2, b1, b2);
    CHECK(crossroad_loss(o2, o1, b1, b2) == base);
    CHECK(crossroad_loss(o1, o2, b2, b1) == base);
    CHECK(crossroad_loss(b1, b2, b1, b2) == 0.0);
    CHECK(crossroad_loss(b2, b1, b1, b2) == 0.0);
  }
}

TEST_CASE("lambda = 1 removes the penalty terms from the gradient") {
  std::mt19937_64 rng(41);
  const Shape s{2, 3, 8, 8};
  const auto m = random_tensor(s, rng), o1 = random_tensor(s, rng), o2 = random_tensor(s, rng);
  const auto b1 = random_tensor(s, rng), b2 = random_tensor(s, rng);
  const auto c = random_components(s, 3, rng);
  FinalGrads<double> g;
  const double v = final_loss(m, o1, o2, b1, b2, c, LossConfig{1.0, 3}, &g);
  CHECK(v == doctest::Approx(crossroad_loss(o1, o2, b1, b2)).epsilon(1e-14));
  for (const auto& gc : g.components) {
    for (double x : gc.values()) CHECK(x == 0.0);
  }
  for (double x : g.morph.values()) CHECK(x == 0.0);
}

TEST_CASE("a tie in the crossroad pairing takes the natural branch") {
  const Shape s{1, 3, 4, 4};
  const T a(s, 0.2), b(s, 0.7);
  // o1 == o2 makes both pairings equal.
  CrossroadGrads<double> g;
  crossroad_loss(a, a, a, b, &g);
  // Natural pairing: o1 vs b1 (zero), o2 vs b2 (pulls o2 up towards 0.7).
  for (double x : g.o1.values()) CHECK(x == 0.0);
  for (double x : g.o2.values()) CHECK(x < 0.0);
}

TEST_CASE("loss inputs are validated") {
  const Shape s{1, 3, 8, 8};
  const T x(s), r(Shape{1, 3, 8, 4});
  Components<double> c(3, T(s));
  CHECK_THROWS_AS(decomposition_loss(x, r, c, LossConfig{}), DimensionError);
  Components<double> two(2, T(s));
  CHECK_THROWS_AS(decomposition_loss(x, x, two, LossConfig{0.25, 3}), DimensionError);
  CHECK_THROWS_AS(decomposition_loss(x, x, c, LossConfig{1.5, 3}), ConfigError);
  CHECK_THROWS_AS(crossroad_loss(x, x, x, r), DimensionError);
}
