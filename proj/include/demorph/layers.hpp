#pragma once

#include <random>
#include <string>
#include <vector>

#include "demorph/tensor.hpp"

namespace demorph {

// A named learnable array (trainable) or a persistent buffer such as BatchNorm running statistics.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool is_trainable = true)
      : name(std::move(n)), value(shape), grad(is_trainable ? Tensor<T>(shape) : Tensor<T>()),
        trainable(is_trainable) {}
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

// 2-D convolution, zero padding kernel/2. Weight layout: out x in x k x k.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         bool bias);

  Tensor<T> forward(const Tensor<T>& x) const;
  // Accumulates parameter gradients; returns dL/dx when need_dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx);

  void init(std::mt19937_64& rng, double gain);
  void collect(ParameterList<T>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Shape output_shape(const Shape& in) const;
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  void im2col(const T* x, int h, int w, int oh, int ow, T* col) const;
  void col2im(const T* col, int h, int w, int oh, int ow, T* dx) const;

  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  bool has_bias_ = false;
  Parameter<T> weight_;
  Parameter<T> bias_;
};

// Transposed convolution, kernel 2, stride 2: doubles the spatial side. Weight: in x out x 2 x 2.
template <typename T>
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(const std::string& name, int in_channels, int out_channels);

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_dx);

  void init(std::mt19937_64& rng, double gain);
  void collect(ParameterList<T>& out);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter<T>& weight() { return weight_; }

 private:
  int in_ = 0, out_ = 0;
  Parameter<T> weight_;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

// Batch statistics in training mode (running estimates updated with momentum), running
// statistics in evaluation mode.
template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training, BatchNormCache<T>* cache);
  Tensor<T> backward(const BatchNormCache<T>& cache, const Tensor<T>& dy);

  void collect(ParameterList<T>& out);

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Parameter<T>& running_mean() { return running_mean_; }
  Parameter<T>& running_var() { return running_var_; }

 private:
  int channels_ = 0;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
};

// Convolution (or transposed convolution) + BatchNorm + ReLU.
template <typename T>
struct BlockTrace {
  Tensor<T> input;
  BatchNormCache<T> bn;
  Tensor<T> output;
};

template <typename T, typename Op>
class NormBlock {
 public:
  NormBlock() = default;
  NormBlock(Op op, BatchNorm2d<T> bn) : op_(std::move(op)), bn_(std::move(bn)) {}

  BlockTrace<T> forward(Tensor<T> x, bool training);
  Tensor<T> backward(const BlockTrace<T>& trace, Tensor<T> dy, bool need_dx);

  void init(std::mt19937_64& rng) { op_.init(rng, 2.0); }
  void collect(ParameterList<T>& out) {
    op_.collect(out);
    bn_.collect(out);
  }
  const Op& op() const { return op_; }

 private:
  Op op_;
  BatchNorm2d<T> bn_;
};

template <typename T>
using ConvBlock = NormBlock<T, Conv2d<T>>;
template <typename T>
using UpBlock = NormBlock<T, ConvTranspose2x2<T>>;

// Channel concatenation of two equal-extent batches, and its inverse for gradients.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels);

}  // namespace demorph
