#pragma once

#include "demorph/tensor.hpp"

namespace demorph {

// Weighting between the reconstruction term and the component penalties.
// Pairs in the inter-component penalty are unordered (i < j).
struct LossConfig {
  double lambda = 0.25;
  int k = 3;

  static LossConfig for_k(int k);
  void validate() const;
};

// 1 / (k + 1): one part reconstruction, k parts decomposition.
double default_lambda(int k);

// Every loss below treats dimension n as a batch: per-sample values are averaged over n.
// L1 terms are mean-reduced per sample, which keeps the exponents in [-2k, 1].

template <typename T>
T l1(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
struct DecompositionGrads {
  Tensor<T> input;
  Tensor<T> reconstruction;
  Components<T> components;
};

// lambda * exp(l1(I, I_hat)) + (1 - lambda) * [exp(-sum_i l1(I, I_i)) + exp(-sum_{i<j} l1(I_i, I_j))]
template <typename T>
T decomposition_loss(const Tensor<T>& input, const Tensor<T>& reconstruction,
                     const Components<T>& components, const LossConfig& cfg,
                     DecompositionGrads<T>* grads = nullptr);

template <typename T>
struct CrossroadGrads {
  Tensor<T> o1, o2, b1, b2;
};

// min over natural and swapped output/bonafide pairings of the summed L1 terms.
template <typename T>
T crossroad_loss(const Tensor<T>& o1, const Tensor<T>& o2, const Tensor<T>& b1,
                 const Tensor<T>& b2, CrossroadGrads<T>* grads = nullptr);

template <typename T>
struct FinalGrads {
  Tensor<T> morph;
  Tensor<T> o1, o2, b1, b2;
  Components<T> components;
};

// lambda * crossroad + (1 - lambda) * [component penalties anchored at the morph]
template <typename T>
T final_loss(const Tensor<T>& morph, const Tensor<T>& o1, const Tensor<T>& o2,
             const Tensor<T>& b1, const Tensor<T>& b2, const Components<T>& components,
             const LossConfig& cfg, FinalGrads<T>* grads = nullptr);

}  // namespace demorph
