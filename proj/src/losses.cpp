#include "demorph/losses.hpp"

#include <cmath>
#include <string>

namespace demorph {

namespace {

template <typename T>
double sample_l1(std::span<const T> a, std::span<const T> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.size());
}

// d/da and d/db of upstream * l1(a, b), accumulated.
template <typename T>
void sample_l1_grad(std::span<const T> a, std::span<const T> b, double upstream, std::span<T> ga,
                    std::span<T> gb) {
  const double scale = upstream / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    const double g = d > 0 ? scale : (d < 0 ? -scale : 0.0);
    ga[i] += static_cast<T>(g);
    gb[i] -= static_cast<T>(g);
  }
}

template <typename T>
void check_components(const Tensor<T>& anchor, const Components<T>& components, int k,
                      const char* what) {
  if (static_cast<int>(components.size()) != k) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(k) +
                         " components, got " + std::to_string(components.size()));
  }
  for (const auto& c : components) require_same_shape(anchor.shape(), c.shape(), what);
}

// (1 - lambda)-weighted penalties for one sample: exp(-sum_i l1(anchor, I_i)) and
// exp(-sum_{i<j} l1(I_i, I_j)). Gradients scaled by `weight` are accumulated when requested.
template <typename T>
double penalty_terms(const Tensor<T>& anchor, const Components<T>& comps, int b, double weight,
                     Tensor<T>* g_anchor, Components<T>* g_comps) {
  const std::size_t k = comps.size();
  double to_anchor = 0.0;
  for (std::size_t i = 0; i < k; ++i) to_anchor += sample_l1(anchor.sample(b), comps[i].sample(b));
  double between = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) between += sample_l1(comps[i].sample(b), comps[j].sample(b));
  }
  const double e_anchor = std::exp(-to_anchor);
  const double e_between = std::exp(-between);
  if (g_anchor && g_comps) {
    const double up_anchor = -weight * e_anchor;
    const double up_between = -weight * e_between;
    for (std::size_t i = 0; i < k; ++i) {
      sample_l1_grad(anchor.sample(b), comps[i].sample(b), up_anchor, g_anchor->sample(b),
                     (*g_comps)[i].sample(b));
      for (std::size_t j = i + 1; j < k; ++j) {
        sample_l1_grad(comps[i].sample(b), comps[j].sample(b), up_between, (*g_comps)[i].sample(b),
                       (*g_comps)[j].sample(b));
      }
    }
  }
  return e_anchor + e_between;
}

template <typename T>
Components<T> zeros_like(const Components<T>& comps) {
  Components<T> out;
  for (const auto& c : comps) out.emplace_back(c.shape());
  return out;
}

}  // namespace

LossConfig LossConfig::for_k(int k) { return LossConfig{default_lambda(k), k}; }

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0,1]");
  if (k < 1) throw ConfigError("loss k must be >= 1");
}

double default_lambda(int k) {
  if (k < 1) throw DomainError("default_lambda: k must be >= 1, got " + std::to_string(k));
  return 1.0 / (k + 1.0);
}

template <typename T>
T l1(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1");
  return static_cast<T>(sample_l1(a.values(), b.values()));
}

template <typename T>
T decomposition_loss(const Tensor<T>& input, const Tensor<T>& reconstruction,
                     const Components<T>& components, const LossConfig& cfg,
                     DecompositionGrads<T>* grads) {
  cfg.validate();
  require_same_shape(input.shape(), reconstruction.shape(), "decomposition_loss");
  check_components(input, components, cfg.k, "decomposition_loss");
  const int batch = input.n();
  if (grads) {
    grads->input = Tensor<T>(input.shape());
    grads->reconstruction = Tensor<T>(input.shape());
    grads->components = zeros_like(components);
  }
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double rec = sample_l1(input.sample(b), reconstruction.sample(b));
    const double e_rec = std::exp(rec);
    const double pen = penalty_terms(input, components, b, (1.0 - cfg.lambda) / batch,
                                     grads ? &grads->input : nullptr,
                                     grads ? &grads->components : nullptr);
    total += cfg.lambda * e_rec + (1.0 - cfg.lambda) * pen;
    if (grads) {
      sample_l1_grad(input.sample(b), reconstruction.sample(b), cfg.lambda * e_rec / batch,
                     grads->input.sample(b), grads->reconstruction.sample(b));
    }
  }
  return static_cast<T>(total / batch);
}

template <typename T>
T crossroad_loss(const Tensor<T>& o1, const Tensor<T>& o2, const Tensor<T>& b1,
                 const Tensor<T>& b2, CrossroadGrads<T>* grads) {
  require_same_shape(o1.shape(), o2.shape(), "crossroad_loss");
  require_same_shape(o1.shape(), b1.shape(), "crossroad_loss");
  require_same_shape(o1.shape(), b2.shape(), "crossroad_loss");
  const int batch = o1.n();
  if (grads) {
    for (auto* g : {&grads->o1, &grads->o2, &grads->b1, &grads->b2}) *g = Tensor<T>(o1.shape());
  }
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double natural = sample_l1(o1.sample(b), b1.sample(b)) + sample_l1(o2.sample(b), b2.sample(b));
    const double swapped = sample_l1(o1.sample(b), b2.sample(b)) + sample_l1(o2.sample(b), b1.sample(b));
    const bool use_natural = natural <= swapped;
    total += use_natural ? natural : swapped;
    if (grads) {
      const double up = 1.0 / batch;
      auto& gb_first = use_natural ? grads->b1 : grads->b2;
      auto& gb_second = use_natural ? grads->b2 : grads->b1;
      const auto& t_first = use_natural ? b1 : b2;
      const auto& t_second = use_natural ? b2 : b1;
      sample_l1_grad(o1.sample(b), t_first.sample(b), up, grads->o1.sample(b), gb_first.sample(b));
      sample_l1_grad(o2.sample(b), t_second.sample(b), up, grads->o2.sample(b), gb_second.sample(b));
    }
  }
  return static_cast<T>(total / batch);
}

template <typename T>
T final_loss(const Tensor<T>& morph, const Tensor<T>& o1, const Tensor<T>& o2,
             const Tensor<T>& b1, const Tensor<T>& b2, const Components<T>& components,
             const LossConfig& cfg, FinalGrads<T>* grads) {
  cfg.validate();
  require_same_shape(morph.shape(), o1.shape(), "final_loss");
  check_components(morph, components, cfg.k, "final_loss");
  CrossroadGrads<T> cr_grads;
  const double cr = crossroad_loss(o1, o2, b1, b2, grads ? &cr_grads : nullptr);
  const int batch = morph.n();
  if (grads) {
    grads->morph = Tensor<T>(morph.shape());
    grads->components = zeros_like(components);
  }
  double pen = 0.0;
  for (int b = 0; b < batch; ++b) {
    pen += penalty_terms(morph, components, b, (1.0 - cfg.lambda) / batch,
                         grads ? &grads->morph : nullptr, grads ? &grads->components : nullptr);
  }
  if (grads) {
    auto scale = [&](Tensor<T>& t) {
      for (auto& v : t.values()) v = static_cast<T>(v * cfg.lambda);
      return std::move(t);
    };
    grads->o1 = scale(cr_grads.o1);
    grads->o2 = scale(cr_grads.o2);
    grads->b1 = scale(cr_grads.b1);
    grads->b2 = scale(cr_grads.b2);
  }
  return static_cast<T>(cfg.lambda * cr + (1.0 - cfg.lambda) * pen / batch);
}

#define DEMORPH_INSTANTIATE_LOSSES(T)                                                          \
  template T l1(const Tensor<T>&, const Tensor<T>&);                                           \
  template T decomposition_loss(const Tensor<T>&, const Tensor<T>&, const Components<T>&,      \
                                const LossConfig&, DecompositionGrads<T>*);                    \
  template T crossroad_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            const Tensor<T>&, CrossroadGrads<T>*);                             \
  template T final_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                        const Tensor<T>&, const Components<T>&, const LossConfig&, FinalGrads<T>*);

DEMORPH_INSTANTIATE_LOSSES(float)
DEMORPH_INSTANTIATE_LOSSES(double)

}  // namespace demorph
