#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "demorph/layers.hpp"
#include "demorph/tensor.hpp"

namespace demorph {

struct NetworkConfig {
  int k = 3;
  int resolution = 64;
  int base_channels = 16;
  int depth = 5;
  int heads = 1;

  // 224x224 input, 64 -> 1024 channels, 1024x14x14 latent.
  static NetworkConfig full_scale(int heads = 1);
  // 64x64 input, 16 -> 256 channels, 256x4x4 latent.
  static NetworkConfig desk_scale(int heads = 1);

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  int channels(int stage) const { return base_channels << stage; }
  int side(int stage) const { return resolution >> stage; }
  int latent_side() const { return side(depth - 1); }
  Shape latent_shape(int batch = 1) const {
    return Shape{batch, channels(depth - 1), latent_side(), latent_side()};
  }

  bool operator==(const NetworkConfig&) const = default;
};

// softplus(w) and its derivative (the logistic function).
double softplus(double w);
double softplus_grad(double w);
// w such that softplus(w) == 1.
inline constexpr double kUnitSoftplusWeight = 0.54132485461291810;

template <typename T>
struct EncoderTrace {
  std::vector<BlockTrace<T>> stages;  // stages[s].output is the stage-s feature map

  const Tensor<T>& feature(int s) const { return stages[s].output; }
  const Tensor<T>& latent() const { return stages.back().output; }
};

// Stage 0 is a stride-1 stem; stages 1..depth-1 halve the side and double the channels.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& name, const NetworkConfig& cfg);

  EncoderTrace<T> forward(const Tensor<T>& x, bool training);
  // d_features[s] may be empty when stage s output received no gradient.
  Tensor<T> backward(const EncoderTrace<T>& trace, std::vector<Tensor<T>> d_features,
                     bool need_dx);

  void init(std::mt19937_64& rng);
  void collect(ParameterList<T>& out);
  const std::vector<ConvBlock<T>>& stages() const { return stages_; }

 private:
  std::vector<ConvBlock<T>> stages_;
};

template <typename T>
struct DecoderTrace {
  std::vector<BlockTrace<T>> up;      // indexed by target stage s
  std::vector<BlockTrace<T>> refine;  // indexed by target stage s
  Tensor<T> output;                   // after the sigmoid
};

template <typename T>
struct DecoderGrads {
  Tensor<T> latent;
  std::vector<Tensor<T>> skips;  // one per stage 0..depth-2
};

// Per stage (deepest first): 2x2 stride-2 transposed conv + BN + ReLU, concatenate the skip,
// 3x3 stride-1 conv + BN + ReLU. A 1x1 conv with sigmoid maps to RGB.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& name, const NetworkConfig& cfg);

  DecoderTrace<T> forward(const Tensor<T>& latent, const std::vector<const Tensor<T>*>& skips,
                          bool training);
  DecoderGrads<T> backward(const DecoderTrace<T>& trace, const Tensor<T>& d_output);

  void init(std::mt19937_64& rng);
  void collect(ParameterList<T>& out);

 private:
  int depth_ = 0;
  std::vector<UpBlock<T>> up_;
  std::vector<ConvBlock<T>> refine_;
  Conv2d<T> head_;
};

template <typename T>
struct DecomposerTrace {
  EncoderTrace<T> encoder;
  std::vector<DecoderTrace<T>> decoders;

  Components<T> outputs() const;
};

template <typename T>
class Decomposer {
 public:
  Decomposer() = default;
  explicit Decomposer(const NetworkConfig& cfg);

  DecomposerTrace<T> forward(const Tensor<T>& x, bool training);
  void backward(const DecomposerTrace<T>& trace, const Components<T>& d_outputs);

  // Latent of the shared encoder, evaluation mode.
  Tensor<T> encode(const Tensor<T>& x);

  void init(std::mt19937_64& rng);
  ParameterList<T> parameters();
  const NetworkConfig& config() const { return cfg_; }
  int decoder_count() const { return static_cast<int>(decoders_.size()); }

 private:
  NetworkConfig cfg_;
  Encoder<T> encoder_;
  std::vector<Decoder<T>> decoders_;
};

template <typename T>
struct MergerTrace {
  int head = 0;
  std::vector<T> scales;  // softplus(w_head,i)
  Components<T> weighted;
  std::vector<EncoderTrace<T>> encoders;
  std::vector<Tensor<T>> summed;  // per-stage elementwise sums over the k encoders
  DecoderTrace<T> decoder;

  const Tensor<T>& output() const { return decoder.output; }
};

// k encoders shared across heads; every head owns a decoder and a k-vector of weights.
template <typename T>
class Merger {
 public:
  Merger() = default;
  explicit Merger(const NetworkConfig& cfg);

  MergerTrace<T> forward(const Components<T>& components, int head, bool training);
  // Returns dL/d(components); accumulates parameter gradients.
  Components<T> backward(const MergerTrace<T>& trace, const Components<T>& components,
                         const Tensor<T>& d_output);

  std::vector<T> scales(int head) const;
  Parameter<T>& weights() { return weights_; }
  const Parameter<T>& weights() const { return weights_; }

  void init(std::mt19937_64& rng);
  ParameterList<T> parameters();
  const NetworkConfig& config() const { return cfg_; }

 private:
  void check_head(int head) const;

  NetworkConfig cfg_;
  std::vector<Encoder<T>> encoders_;
  std::vector<Decoder<T>> decoders_;
  Parameter<T> weights_;  // heads x k, unconstrained
};

template <typename T>
struct Networks {
  Decomposer<T> decomposer;
  Merger<T> merger;

  const NetworkConfig& config() const { return decomposer.config(); }
  ParameterList<T> parameters();  // decomposer first, then merger
};

// Deterministic initialisation: He-normal convolutions, unit BN, softplus(w) == 1.
template <typename T>
Networks<T> init_params(const NetworkConfig& cfg, std::uint64_t seed);

// Copies every parameter and buffer value from one precision to another.
template <typename To, typename From>
Networks<To> convert_networks(Networks<From>& from);

// Single-image inference in evaluation mode (running BatchNorm statistics).
ComponentSet decompose(Decomposer<float>& decomposer, const Image& image);
ComponentSet apply_weights(const Merger<float>& merger, int head, const ComponentSet& components);
Image merge(Merger<float>& merger, int head, const ComponentSet& components);

struct DemorphOutput {
  Image output1;
  Image output2;
  ComponentSet components;
};
DemorphOutput demorph(Decomposer<float>& decomposer, Merger<float>& merger, const Image& morph);

}  // namespace demorph
