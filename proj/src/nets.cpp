#include "demorph/nets.hpp"

#include <cmath>

#include "demorph/seed.hpp"

namespace demorph {

namespace {

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  if (x.empty()) return;
  if (acc.empty()) {
    acc = x;
    return;
  }
  require_same_shape(acc.shape(), x.shape(), "gradient accumulation");
  auto a = acc.values();
  auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::string stage_name(const std::string& base, const char* kind, int s) {
  return base + "." + kind + std::to_string(s);
}

}  // namespace

NetworkConfig NetworkConfig::full_scale(int heads) {
  return NetworkConfig{.k = 3, .resolution = 224, .base_channels = 64, .depth = 5, .heads = heads};
}

NetworkConfig NetworkConfig::desk_scale(int heads) {
  return NetworkConfig{.k = 3, .resolution = 64, .base_channels = 16, .depth = 5, .heads = heads};
}

void NetworkConfig::validate() const {
  if (k < 2) throw ConfigError("network k must be >= 2, got " + std::to_string(k));
  if (depth < 2 || depth > 8) throw ConfigError("network depth must lie in [2,8]");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (heads != 1 && heads != 2) throw ConfigError("heads must be 1 or 2");
  const int factor = 1 << (depth - 1);
  if (resolution < factor || resolution % factor != 0) {
    throw ConfigError("resolution " + std::to_string(resolution) + " must be divisible by 2^(depth-1) = " +
                      std::to_string(factor));
  }
}

double softplus(double w) { return w > 30.0 ? w : std::log1p(std::exp(w)); }
double softplus_grad(double w) { return 1.0 / (1.0 + std::exp(-w)); }

// ---------------------------------------------------------------------------------------------
// Encoder

template <typename T>
Encoder<T>::Encoder(const std::string& name, const NetworkConfig& cfg) {
  for (int s = 0; s < cfg.depth; ++s) {
    const int in = s == 0 ? 3 : cfg.channels(s - 1);
    const std::string base = stage_name(name, "s", s);
    stages_.emplace_back(Conv2d<T>(base + ".conv", in, cfg.channels(s), 3, s == 0 ? 1 : 2, false),
                         BatchNorm2d<T>(base + ".bn", cfg.channels(s)));
  }
}

template <typename T>
EncoderTrace<T> Encoder<T>::forward(const Tensor<T>& x, bool training) {
  EncoderTrace<T> trace;
  trace.stages.reserve(stages_.size());
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    trace.stages.push_back(stages_[s].forward(s == 0 ? x : trace.stages[s - 1].output, training));
  }
  return trace;
}

template <typename T>
Tensor<T> Encoder<T>::backward(const EncoderTrace<T>& trace, std::vector<Tensor<T>> d_features,
                               bool need_dx) {
  Tensor<T> grad;
  for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
    add_into(grad, d_features[s]);
    if (grad.empty()) continue;
    grad = stages_[s].backward(trace.stages[s], std::move(grad), s > 0 || need_dx);
  }
  return grad;
}

template <typename T>
void Encoder<T>::init(std::mt19937_64& rng) {
  for (auto& s : stages_) s.init(rng);
}

template <typename T>
void Encoder<T>::collect(ParameterList<T>& out) {
  for (auto& s : stages_) s.collect(out);
}

// ---------------------------------------------------------------------------------------------
// Decoder

template <typename T>
Decoder<T>::Decoder(const std::string& name, const NetworkConfig& cfg) : depth_(cfg.depth) {
  for (int s = 0; s < cfg.depth - 1; ++s) {
    const int c = cfg.channels(s);
    up_.emplace_back(ConvTranspose2x2<T>(stage_name(name, "up", s), cfg.channels(s + 1), c),
                     BatchNorm2d<T>(stage_name(name, "up", s) + ".bn", c));
    refine_.emplace_back(Conv2d<T>(stage_name(name, "refine", s), 2 * c, c, 3, 1, false),
                         BatchNorm2d<T>(stage_name(name, "refine", s) + ".bn", c));
  }
  head_ = Conv2d<T>(name + ".head", cfg.channels(0), 3, 1, 1, true);
}

template <typename T>
DecoderTrace<T> Decoder<T>::forward(const Tensor<T>& latent,
                                    const std::vector<const Tensor<T>*>& skips, bool training) {
  if (static_cast<int>(skips.size()) != depth_ - 1) {
    throw DimensionError("decoder expects " + std::to_string(depth_ - 1) + " skip tensors");
  }
  DecoderTrace<T> trace;
  trace.up.resize(depth_ - 1);
  trace.refine.resize(depth_ - 1);
  const Tensor<T>* x = &latent;
  for (int s = depth_ - 2; s >= 0; --s) {
    trace.up[s] = up_[s].forward(*x, training);
    trace.refine[s] = refine_[s].forward(concat_channels(trace.up[s].output, *skips[s]), training);
    x = &trace.refine[s].output;
  }
  Tensor<T> z = head_.forward(*x);
  for (auto& v : z.values()) v = T(1) / (T(1) + std::exp(-v));
  trace.output = std::move(z);
  return trace;
}

template <typename T>
DecoderGrads<T> Decoder<T>::backward(const DecoderTrace<T>& trace, const Tensor<T>& d_output) {
  require_same_shape(trace.output.shape(), d_output.shape(), "Decoder::backward");
  Tensor<T> dz(d_output.shape());
  auto y = trace.output.values();
  auto dy = d_output.values();
  auto g = dz.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = dy[i] * y[i] * (T(1) - y[i]);

  DecoderGrads<T> grads;
  grads.skips.resize(depth_ - 1);
  Tensor<T> dx = head_.backward(trace.refine[0].output, dz, true);
  for (int s = 0; s < depth_ - 1; ++s) {
    Tensor<T> dcat = refine_[s].backward(trace.refine[s], std::move(dx), true);
    auto [d_up, d_skip] = split_channels(dcat, up_[s].op().out_channels());
    grads.skips[s] = std::move(d_skip);
    dx = up_[s].backward(trace.up[s], std::move(d_up), true);
  }
  grads.latent = std::move(dx);
  return grads;
}

template <typename T>
void Decoder<T>::init(std::mt19937_64& rng) {
  for (auto& b : up_) b.init(rng);
  for (auto& b : refine_) b.init(rng);
  head_.init(rng, 1.0);
}

template <typename T>
void Decoder<T>::collect(ParameterList<T>& out) {
  for (auto& b : up_) b.collect(out);
  for (auto& b : refine_) b.collect(out);
  head_.collect(out);
}

// ---------------------------------------------------------------------------------------------
// Decomposer

template <typename T>
Components<T> DecomposerTrace<T>::outputs() const {
  Components<T> out;
  out.reserve(decoders.size());
  for (const auto& d : decoders) out.push_back(d.output);
  return out;
}

template <typename T>
Decomposer<T>::Decomposer(const NetworkConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = Encoder<T>("decomposer.encoder", cfg_);
  for (int j = 0; j < cfg_.k; ++j) {
    decoders_.emplace_back("decomposer.decoder" + std::to_string(j), cfg_);
  }
}

template <typename T>
DecomposerTrace<T> Decomposer<T>::forward(const Tensor<T>& x, bool training) {
  const Shape expected{x.n(), 3, cfg_.resolution, cfg_.resolution};
  require_same_shape(expected, x.shape(), "decompose");
  DecomposerTrace<T> trace;
  trace.encoder = encoder_.forward(x, training);
  // Every decoder reads the very same latent and skip tensors.
  std::vector<const Tensor<T>*> skips;
  for (int s = 0; s < cfg_.depth - 1; ++s) skips.push_back(&trace.encoder.feature(s));
  for (auto& dec : decoders_) {
    trace.decoders.push_back(dec.forward(trace.encoder.latent(), skips, training));
  }
  return trace;
}

template <typename T>
void Decomposer<T>::backward(const DecomposerTrace<T>& trace, const Components<T>& d_outputs) {
  if (static_cast<int>(d_outputs.size()) != cfg_.k) {
    throw DimensionError("decomposer backward expects k output gradients");
  }
  std::vector<Tensor<T>> d_features(cfg_.depth);
  for (int j = 0; j < cfg_.k; ++j) {
    if (d_outputs[j].empty()) continue;
    auto g = decoders_[j].backward(trace.decoders[j], d_outputs[j]);
    add_into(d_features[cfg_.depth - 1], g.latent);
    for (int s = 0; s < cfg_.depth - 1; ++s) add_into(d_features[s], g.skips[s]);
  }
  encoder_.backward(trace.encoder, std::move(d_features), false);
}

template <typename T>
Tensor<T> Decomposer<T>::encode(const Tensor<T>& x) {
  auto trace = encoder_.forward(x, false);
  return trace.latent();
}

template <typename T>
void Decomposer<T>::init(std::mt19937_64& rng) {
  encoder_.init(rng);
  for (auto& d : decoders_) d.init(rng);
}

template <typename T>
ParameterList<T> Decomposer<T>::parameters() {
  ParameterList<T> out;
  encoder_.collect(out);
  for (auto& d : decoders_) d.collect(out);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Merger

template <typename T>
Merger<T>::Merger(const NetworkConfig& cfg)
    : cfg_(cfg), weights_("merger.weights", Shape{cfg.heads, cfg.k, 1, 1}) {
  cfg_.validate();
  for (int i = 0; i < cfg_.k; ++i) {
    encoders_.emplace_back("merger.encoder" + std::to_string(i), cfg_);
  }
  for (int h = 0; h < cfg_.heads; ++h) {
    decoders_.emplace_back("merger.head" + std::to_string(h), cfg_);
  }
  weights_.value.fill(static_cast<T>(kUnitSoftplusWeight));
}

template <typename T>
void Merger<T>::check_head(int head) const {
  if (head < 0 || head >= cfg_.heads) {
    throw IndexError("merger head " + std::to_string(head) + " out of range [0," +
                     std::to_string(cfg_.heads) + ")");
  }
}

template <typename T>
std::vector<T> Merger<T>::scales(int head) const {
  check_head(head);
  std::vector<T> out(cfg_.k);
  for (int i = 0; i < cfg_.k; ++i) {
    out[i] = static_cast<T>(softplus(weights_.value.data()[head * cfg_.k + i]));
  }
  return out;
}

template <typename T>
MergerTrace<T> Merger<T>::forward(const Components<T>& components, int head, bool training) {
  check_head(head);
  if (static_cast<int>(components.size()) != cfg_.k) {
    throw DimensionError("merger expects " + std::to_string(cfg_.k) + " components, got " +
                         std::to_string(components.size()));
  }
  MergerTrace<T> trace;
  trace.head = head;
  trace.scales = scales(head);
  for (int i = 0; i < cfg_.k; ++i) {
    const Shape expected{components[i].n(), 3, cfg_.resolution, cfg_.resolution};
    require_same_shape(expected, components[i].shape(), "merge");
    Tensor<T> w = components[i];
    for (auto& v : w.values()) v *= trace.scales[i];
    trace.encoders.push_back(encoders_[i].forward(w, training));
    trace.weighted.push_back(std::move(w));
  }
  trace.summed.resize(cfg_.depth);
  for (int s = 0; s < cfg_.depth; ++s) {
    for (const auto& e : trace.encoders) add_into(trace.summed[s], e.feature(s));
  }
  std::vector<const Tensor<T>*> skips;
  for (int s = 0; s < cfg_.depth - 1; ++s) skips.push_back(&trace.summed[s]);
  trace.decoder = decoders_[head].forward(trace.summed[cfg_.depth - 1], skips, training);
  return trace;
}

template <typename T>
Components<T> Merger<T>::backward(const MergerTrace<T>& trace, const Components<T>& components,
                                  const Tensor<T>& d_output) {
  auto g = decoders_[trace.head].backward(trace.decoder, d_output);
  std::vector<Tensor<T>> d_features(cfg_.depth);
  for (int s = 0; s < cfg_.depth - 1; ++s) d_features[s] = std::move(g.skips[s]);
  d_features[cfg_.depth - 1] = std::move(g.latent);

  Components<T> d_components(cfg_.k);
  for (int i = 0; i < cfg_.k; ++i) {
    Tensor<T> d_weighted = encoders_[i].backward(trace.encoders[i], d_features, true);
    double d_scale = 0.0;
    auto dw = d_weighted.values();
    auto c = components[i].values();
    for (std::size_t j = 0; j < dw.size(); ++j) d_scale += static_cast<double>(dw[j]) * c[j];
    const std::size_t widx = trace.head * cfg_.k + i;
    weights_.grad.data()[widx] +=
        static_cast<T>(d_scale * softplus_grad(weights_.value.data()[widx]));
    for (auto& v : dw) v *= trace.scales[i];
    d_components[i] = std::move(d_weighted);
  }
  return d_components;
}

template <typename T>
void Merger<T>::init(std::mt19937_64& rng) {
  for (auto& e : encoders_) e.init(rng);
  for (auto& d : decoders_) d.init(rng);
  weights_.value.fill(static_cast<T>(kUnitSoftplusWeight));
}

template <typename T>
ParameterList<T> Merger<T>::parameters() {
  ParameterList<T> out;
  for (auto& e : encoders_) e.collect(out);
  for (auto& d : decoders_) d.collect(out);
  out.push_back(&weights_);
  return out;
}

// ---------------------------------------------------------------------------------------------

template <typename T>
ParameterList<T> Networks<T>::parameters() {
  ParameterList<T> out = decomposer.parameters();
  for (auto* p : merger.parameters()) out.push_back(p);
  return out;
}

template <typename T>
Networks<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Networks<T> nets{Decomposer<T>(cfg), Merger<T>(cfg)};
  std::mt19937_64 rng_d(mix_seed(seed, 0xDEC0));
  std::mt19937_64 rng_m(mix_seed(seed, 0x3E76));
  nets.decomposer.init(rng_d);
  nets.merger.init(rng_m);
  return nets;
}

template <typename To, typename From>
Networks<To> convert_networks(Networks<From>& from) {
  Networks<To> to{Decomposer<To>(from.config()), Merger<To>(from.config())};
  auto src = from.parameters();
  auto dst = to.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<To>();
  return to;
}

ComponentSet decompose(Decomposer<float>& decomposer, const Image& image) {
  if (image.n() != 1) throw DimensionError("decompose expects a single image");
  return decomposer.forward(image, false).outputs();
}

ComponentSet apply_weights(const Merger<float>& merger, int head, const ComponentSet& components) {
  const auto s = merger.scales(head);
  if (components.size() != s.size()) {
    throw DimensionError("apply_weights expects " + std::to_string(s.size()) + " components");
  }
  ComponentSet out = components;
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (auto& v : out[i].values()) v *= s[i];
  }
  return out;
}

Image merge(Merger<float>& merger, int head, const ComponentSet& components) {
  return merger.forward(components, head, false).output();
}

DemorphOutput demorph(Decomposer<float>& decomposer, Merger<float>& merger, const Image& morph) {
  if (merger.config().heads != 2) {
    throw ConfigError("demorph requires a two-head merger, got " +
                      std::to_string(merger.config().heads));
  }
  DemorphOutput out;
  out.components = decompose(decomposer, morph);
  out.output1 = merge(merger, 0, out.components);
  out.output2 = merge(merger, 1, out.components);
  return out;
}

template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template struct DecomposerTrace<float>;
template struct DecomposerTrace<double>;
template class Decomposer<float>;
template class Decomposer<double>;
template class Merger<float>;
template class Merger<double>;
template struct Networks<float>;
template struct Networks<double>;
template Networks<float> init_params<float>(const NetworkConfig&, std::uint64_t);
template Networks<double> init_params<double>(const NetworkConfig&, std::uint64_t);
template Networks<double> convert_networks<double, float>(Networks<float>&);
template Networks<float> convert_networks<float, double>(Networks<double>&);
template Networks<float> convert_networks<float, float>(Networks<float>&);

}  // namespace demorph
