#include <cmath>
#include <random>

#include "doctest.h"
#include "demorph/nets.hpp"
#include "demorph/losses.hpp"
#include "support.hpp"

using namespace demorph;
using testing::random_tensor;

namespace {

NetworkConfig tiny(int heads = 1, int k = 3) {
  return NetworkConfig{.k = k, .resolution = 16, .base_channels = 4, .depth = 3, .heads = heads};
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

// Naive reference convolution, zero padding k/2.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, int stride,
                          const Tensor<double>* bias) {
  const int k = w.w();
  const int pad = k / 2;
  const int oh = (x.h() + 2 * pad - k) / stride + 1;
  const int ow = (x.w() + 2 * pad - k) / stride + 1;
  Tensor<double> y(Shape{x.n(), w.n(), oh, ow});
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < w.n(); ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = bias ? bias->data()[o] : 0.0;
          for (int c = 0; c < x.c(); ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int yy = i * stride + a - pad;
                const int xx = j * stride + b - pad;
                if (yy < 0 || yy >= x.h() || xx < 0 || xx >= x.w()) continue;
                acc += x(n, c, yy, xx) * w(o, c, a, b);
              }
          y(n, o, i, j) = acc;
        }
  return y;
}

Tensor<double> naive_transpose(const Tensor<double>& x, const Tensor<double>& w) {
  Tensor<double> y(Shape{x.n(), w.c(), 2 * x.h(), 2 * x.w()});
  for (int n = 0; n < x.n(); ++n)
    for (int ci = 0; ci < x.c(); ++ci)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          for (int co = 0; co < w.c(); ++co)
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b) y(n, co, 2 * i + a, 2 * j + b) += x(n, ci, i, j) * w(ci, co, a, b);
  return y;
}

// FD on `count` checked coordinates of random trainable parameters; kink-adjacent draws are
// replaced by fresh ones.
void check_parameter_grads(ParameterList<double> params, const std::function<double()>& f,
                           std::mt19937_64& rng, int count) {
  ParameterList<double> trainable;
  for (auto* p : params) {
    if (p->trainable) trainable.push_back(p);
  }
  std::uniform_int_distribution<std::size_t> pick(0, trainable.size() - 1);
  int checked = 0;
  double worst = 0.0;
  for (int attempt = 0; attempt < 20 * count && checked < count; ++attempt) {
    auto* p = trainable[pick(rng)];
    auto coords = testing::sample_coords(p->value.size(), 1, rng);
    const auto st = testing::fd_check(f, p->value, p->grad, coords);
    checked += st.checked;
    worst = std::max(worst, st.max_rel);
    if (st.max_rel >= 1e-3) MESSAGE("parameter " << p->name << " rel err " << st.max_rel);
  }
  CHECK(checked == count);
  CHECK(worst < 1e-3);
}

}  // namespace

TEST_CASE("conv2d matches a naive convolution") {
  std::mt19937_64 rng(1);
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      Conv2d<double> conv("c", 3, 5, k, stride, true);
      conv.init(rng, 2.0);
      for (auto& v : conv.bias().value.values()) v = 0.1;
      const auto x = random_tensor(Shape{2, 3, 8, 8}, rng, -1, 1);
      const auto y = conv.forward(x);
      const auto ref = naive_conv(x, conv.weight().value, stride, &conv.bias().value);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("transposed conv matches a naive scatter") {
  std::mt19937_64 rng(2);
  ConvTranspose2x2<double> up("u", 4, 3);
  up.init(rng, 2.0);
  const auto x = random_tensor(Shape{2, 4, 3, 5}, rng, -1, 1);
  const auto y = up.forward(x);
  const auto ref = naive_transpose(x, up.weight().value);
  REQUIRE(y.shape() == ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 rng(3);
  SUBCASE("conv2d stride 2") {
    Conv2d<double> conv("c", 3, 4, 3, 2, false);
    conv.init(rng, 2.0);
    auto x = random_tensor(Shape{2, 3, 8, 8}, rng, -1, 1);
    const auto r = random_tensor(conv.output_shape(x.shape()), rng, -1, 1);
    auto f = [&] { return dot(conv.forward(x), r); };
    const auto dx = conv.backward(x, r, true);
    CHECK(testing::fd_check(f, x, dx, testing::all_coords(x)).max_rel < 1e-6);
    CHECK(testing::fd_check(f, conv.weight().value, conv.weight().grad, testing::all_coords(conv.weight().value)).max_rel < 1e-6);
  }
  SUBCASE("transposed conv") {
    ConvTranspose2x2<double> up("u", 3, 2);
    up.init(rng, 2.0);
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng, -1, 1);
    const auto r = random_tensor(Shape{2, 2, 8, 8}, rng, -1, 1);
    auto f = [&] { return dot(up.forward(x), r); };
    const auto dx = up.backward(x, r, true);
    CHECK(testing::fd_check(f, x, dx, testing::all_coords(x)).max_rel < 1e-6);
    CHECK(testing::fd_check(f, up.weight().value, up.weight().grad, testing::all_coords(up.weight().value)).max_rel < 1e-6);
  }
  SUBCASE("batch norm in training mode") {
    BatchNorm2d<double> bn("bn", 3);
    for (auto& v : bn.gamma().value.values()) v = 1.3;
    for (auto& v : bn.beta().value.values()) v = -0.2;
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng, -1, 1);
    const auto r = random_tensor(x.shape(), rng, -1, 1);
    auto f = [&] { return dot(bn.forward(x, true, nullptr), r); };
    BatchNormCache<double> cache;
    bn.forward(x, true, &cache);
    const auto dx = bn.backward(cache, r);
    CHECK(testing::fd_check(f, x, dx, testing::all_coords(x)).max_rel < 1e-5);
    CHECK(testing::fd_check(f, bn.gamma().value, bn.gamma().grad, testing::all_coords(bn.gamma().value)).max_rel < 1e-6);
  }
}

TEST_CASE("batch norm uses batch statistics in training and running statistics in eval") {
  std::mt19937_64 rng(4);
  BatchNorm2d<double> bn("bn", 2);
  const auto x = random_tensor(Shape{4, 2, 3, 3}, rng, 2.0, 5.0);
  const auto y = bn.forward(x, true, nullptr);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0;
    int count = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        const double v = y.data()[(n * 2 + c) * 9 + i];
        mean += v;
        sq += v * v;
        ++count;
      }
    mean /= count;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(sq / count == doctest::Approx(1.0).epsilon(1e-4));
  }
  // One step of momentum 0.1 from (0, 1).
  double m0 = 0.0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 9; ++i) m0 += x.data()[n * 18 + i];
  m0 /= 36.0;
  CHECK(bn.running_mean().value.data()[0] == doctest::Approx(0.1 * m0).epsilon(1e-12));
  const auto e1 = bn.forward(x, false, nullptr);
  const auto e2 = bn.forward(x, false, nullptr);
  CHECK(e1 == e2);
  CHECK_FALSE(e1 == y);
}

TEST_CASE("shape contract") {
  SUBCASE("presets") {
    CHECK(NetworkConfig::full_scale(1).latent_shape() == Shape{1, 1024, 14, 14});
    CHECK(NetworkConfig::desk_scale(1).latent_shape() == Shape{1, 256, 4, 4});
  }
  SUBCASE("desk forward") {
    const auto cfg = NetworkConfig::desk_scale(2);
    auto nets = init_params<float>(cfg, 5);
    std::mt19937_64 rng(5);
    const auto x = random_tensor<float>(Shape{1, 3, 64, 64}, rng);
    CHECK(nets.decomposer.encode(x).shape() == Shape{1, 256, 4, 4});
    const auto out = demorph::demorph(nets.decomposer, nets.merger, x);
    REQUIRE(out.components.size() == 3);
    for (const auto& c : out.components) CHECK(c.shape() == x.shape());
    CHECK(out.output1.shape() == x.shape());
    CHECK(out.output2.shape() == x.shape());
  }
  SUBCASE("wrong input extent") {
    auto nets = init_params<float>(tiny(), 1);
    CHECK_THROWS_AS(nets.decomposer.forward(Tensor<float>(Shape{1, 3, 32, 32}), false), DimensionError);
  }
}

TEST_CASE("network config validation") {
  CHECK_THROWS_AS((NetworkConfig{.k = 1}.validate()), ConfigError);
  CHECK_THROWS_AS((NetworkConfig{.resolution = 40}.validate()), ConfigError);
  CHECK_THROWS_AS((NetworkConfig{.heads = 3}.validate()), ConfigError);
  CHECK_NOTHROW(NetworkConfig::full_scale(2).validate());
}

TEST_CASE("decoders read identical latent and skip tensors") {
  auto nets = init_params<double>(tiny(), 6);
  // Give decoder 1 the parameters of decoder 0: outputs must then coincide exactly.
  auto params = nets.decomposer.parameters();
  for (auto* dst : params) {
    const std::string prefix = "decomposer.decoder1.";
    if (dst->name.rfind(prefix, 0) != 0) continue;
    const std::string src_name = "decomposer.decoder0." + dst->name.substr(prefix.size());
    for (auto* src : params) {
      if (src->name == src_name) dst->value = src->value;
    }
  }
  std::mt19937_64 rng(6);
  const auto x = random_tensor(Shape{2, 3, 16, 16}, rng);
  const auto outs = nets.decomposer.forward(x, true).outputs();
  CHECK(outs[0] == outs[1]);
  CHECK_FALSE(outs[0] == outs[2]);
}

TEST_CASE("merger weights start at unit softplus and respect order") {
  auto nets = init_params<double>(tiny(2), 7);
  for (int h = 0; h < 2; ++h) {
    for (double s : nets.merger.scales(h)) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(nets.merger.scales(2), IndexError);
  CHECK_THROWS_AS(nets.merger.scales(-1), IndexError);

  std::mt19937_64 rng(7);
  Components<double> comps;
  for (int i = 0; i < 3; ++i) comps.push_back(random_tensor(Shape{1, 3, 16, 16}, rng));
  auto& w = nets.merger.weights().value;
  w.data()[0] = 2.0;
  w.data()[1] = -1.0;
  const auto natural = nets.merger.forward(comps, 0, false).output();
  Components<double> permuted{comps[1], comps[0], comps[2]};
  const auto swapped = nets.merger.forward(permuted, 0, false).output();
  double diff = 0.0;
  for (std::size_t i = 0; i < natural.size(); ++i) diff = std::max(diff, std::abs(natural.data()[i] - swapped.data()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("demorph needs two heads") {
  auto nets = init_params<float>(tiny(1), 8);
  const Tensor<float> x(Shape{1, 3, 16, 16}, 0.5f);
  CHECK_THROWS_AS(demorph::demorph(nets.decomposer, nets.merger, x), ConfigError);
}

TEST_CASE("initialisation is a pure function of the seed") {
  auto a = init_params<float>(tiny(2), 9);
  auto b = init_params<float>(tiny(2), 9);
  auto c = init_params<float>(tiny(2), 10);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
    any_diff |= !(pa[i]->value == pc[i]->value);
  }
  CHECK(any_diff);
}

TEST_CASE("precision conversion round-trips exactly") {
  auto f = init_params<float>(tiny(2), 11);
  auto d = convert_networks<double>(f);
  auto back = convert_networks<float>(d);
  auto pf = f.parameters(), pb = back.parameters();
  for (std::size_t i = 0; i < pf.size(); ++i) CHECK(pf[i]->value == pb[i]->value);
}

TEST_CASE("decomposer gradients match finite differences") {
  auto nets = init_params<double>(tiny(), 12);
  std::mt19937_64 rng(12);
  const auto x = random_tensor(Shape{2, 3, 16, 16}, rng);
  Components<double> r;
  for (int j = 0; j < 3; ++j) r.push_back(random_tensor(x.shape(), rng, -1, 1));
  auto f = [&] {
    const auto outs = nets.decomposer.forward(x, true).outputs();
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) acc += dot(outs[j], r[j]);
    return acc;
  };
  const auto trace = nets.decomposer.forward(x, true);
  nets.decomposer.backward(trace, r);
  check_parameter_grads(nets.decomposer.parameters(), f, rng, 30);
}

TEST_CASE("merger gradients match finite differences") {
  auto nets = init_params<double>(tiny(2), 13);
  std::mt19937_64 rng(13);
  nets.merger.weights().value.data()[1] = 0.2;
  nets.merger.weights().value.data()[4] = 1.1;
  Components<double> comps;
  for (int i = 0; i < 3; ++i) comps.push_back(random_tensor(Shape{2, 3, 16, 16}, rng));
  const auto r = random_tensor(comps[0].shape(), rng, -1, 1);
  for (int head : {0, 1}) {
    for (auto* p : nets.merger.parameters()) p->grad.fill(0.0);
    auto f = [&] { return dot(nets.merger.forward(comps, head, true).output(), r); };
    const auto trace = nets.merger.forward(comps, head, true);
    auto dc = nets.merger.backward(trace, comps, r);
    for (int i = 0; i < 3; ++i) {
      auto coords = testing::sample_coords(comps[i].size(), 10, rng);
      const auto st = testing::fd_check(f, comps[i], dc[i], coords);
      CHECK(st.checked > 0);
      CHECK(st.max_rel < 1e-3);
    }
    auto& w = nets.merger.weights();
    const auto st = testing::fd_check(f, w.value, w.grad, testing::all_coords(w.value));
    CHECK(st.checked == 6);
    CHECK(st.max_rel < 1e-3);
    check_parameter_grads(nets.merger.parameters(), f, rng, 30);
  }
}

TEST_CASE("end-to-end decomposition objective gradients") {
  auto nets = init_params<double>(tiny(), 14);
  std::mt19937_64 rng(14);
  const auto x = random_tensor(Shape{2, 3, 16, 16}, rng);
  const LossConfig cfg = LossConfig::for_k(3);
  auto f = [&] {
    const auto comps = nets.decomposer.forward(x, true).outputs();
    return decomposition_loss(x, nets.merger.forward(comps, 0, true).output(), comps, cfg);
  };
  const auto dt = nets.decomposer.forward(x, true);
  const auto comps = dt.outputs();
  const auto mt = nets.merger.forward(comps, 0, true);
  DecompositionGrads<double> g;
  decomposition_loss(x, mt.output(), comps, cfg, &g);
  auto dc = nets.merger.backward(mt, comps, g.reconstruction);
  for (int i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < dc[i].size(); ++j) dc[i].data()[j] += g.components[i].data()[j];
  }
  nets.decomposer.backward(dt, dc);
  check_parameter_grads(nets.parameters(), f, rng, 30);
}
