#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unetgan/conv.hpp"
#include "unetgan/ops.hpp"

namespace unetgan {

/// 64-bit FNV-1a over a byte range.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Ordered, address-stable collection of named parameters.
template <typename S>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<S> value) {
    items_.emplace_back(std::move(name), std::move(value));
    return items_.size() - 1;
  }

  Parameter<S>& operator[](std::size_t i) { return items_[i]; }
  const Parameter<S>& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  Parameter<S>* find(const std::string& name) {
    for (auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<Parameter<S>*> pointers() {
    std::vector<Parameter<S>*> out;
    for (auto& p : items_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : items_) p.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
  }

  /// Hash of every parameter's name, shape and value bytes, in order.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : items_) {
      h = fnv1a(p.name.data(), p.name.size(), h);
      for (auto d : p.value.shape()) {
        const auto d64 = static_cast<std::uint64_t>(d);
        h = fnv1a(&d64, sizeof d64, h);
      }
      h = fnv1a(p.value.values().data(), p.value.numel() * sizeof(S), h);
    }
    return h;
  }

  /// Copies all values (not gradients) from a structurally identical set.
  void copy_values_from(const ParameterSet& other) {
    if (other.size() != size()) throw ShapeError("copy_values_from: parameter count mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      if (items_[i].value.shape() != other[i].value.shape()) {
        throw ShapeError("copy_values_from: shape mismatch for " + items_[i].name);
      }
      items_[i].value = other[i].value.detach();
    }
  }

 private:
  std::deque<Parameter<S>> items_;
};

namespace detail {

/// Builds parameters in a fixed order from one seeded stream.
template <typename S>
class Initializer {
 public:
  Initializer(ParameterSet<S>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  std::size_t he(const std::string& name, Shape shape, double fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    std::vector<S> v(numel(shape));
    for (auto& x : v) x = static_cast<S>(dist(rng_));
    return params_.add(name, Tensor<S>(std::move(shape), std::move(v)));
  }

  std::size_t constant(const std::string& name, Shape shape, S value) {
    return params_.add(name, Tensor<S>::full(std::move(shape), value));
  }

 private:
  ParameterSet<S>& params_;
  std::mt19937_64 rng_;
};

}  // namespace detail

template <typename S>
struct ConvLayer {
  std::size_t weight = 0, bias = 0, stride = 1, pad = 0;
  bool transposed = false;

  static ConvLayer make(detail::Initializer<S>& init, const std::string& name, std::size_t in, std::size_t out,
                        std::size_t k, std::size_t stride, std::size_t pad, bool transposed = false) {
    ConvLayer l;
    l.stride = stride;
    l.pad = pad;
    l.transposed = transposed;
    if (transposed) {
      l.weight = init.he(name + ".weight", {in, out, k, k}, double(in * k * k) / double(stride * stride));
    } else {
      l.weight = init.he(name + ".weight", {out, in, k, k}, double(in * k * k));
    }
    l.bias = init.constant(name + ".bias", {out}, S(0));
    return l;
  }

  Tensor<S> operator()(ParameterSet<S>& ps, const Graph<S>& g, const Tensor<S>& x) const {
    if (transposed) return conv_transpose2d(x, g.use(ps[weight]), g.use(ps[bias]), stride, pad);
    return conv2d(x, g.use(ps[weight]), g.use(ps[bias]), stride, pad);
  }
};

template <typename S>
struct NormLayer {
  std::size_t gain = 0, shift = 0;

  static NormLayer make(detail::Initializer<S>& init, const std::string& name, std::size_t channels) {
    return {init.constant(name + ".gain", {channels}, S(1)), init.constant(name + ".shift", {channels}, S(0))};
  }

  Tensor<S> operator()(ParameterSet<S>& ps, const Graph<S>& g, const Tensor<S>& x) const {
    return instance_norm(x, g.use(ps[gain]), g.use(ps[shift]));
  }
};

/// conv -> instance norm -> activation
template <typename S>
struct ConvNormAct {
  ConvLayer<S> conv;
  std::optional<NormLayer<S>> norm;
  Activation act = Activation::kRelu;

  Tensor<S> operator()(ParameterSet<S>& ps, const Graph<S>& g, const Tensor<S>& x) const {
    Tensor<S> h = conv(ps, g, x);
    if (norm) h = (*norm)(ps, g, h);
    return activate(h, act);
  }
};

/// Two 3x3 conv + instance-norm layers with an identity skip added before the
/// final relu. Shape preserving.
template <typename S>
struct ResidualBlock {
  ConvLayer<S> conv1, conv2;
  NormLayer<S> norm1, norm2;

  static ResidualBlock make(detail::Initializer<S>& init, const std::string& name, std::size_t channels) {
    ResidualBlock b;
    b.conv1 = ConvLayer<S>::make(init, name + ".conv1", channels, channels, 3, 1, 1);
    b.norm1 = NormLayer<S>::make(init, name + ".norm1", channels);
    b.conv2 = ConvLayer<S>::make(init, name + ".conv2", channels, channels, 3, 1, 1);
    b.norm2 = NormLayer<S>::make(init, name + ".norm2", channels);
    return b;
  }

  Tensor<S> operator()(ParameterSet<S>& ps, const Graph<S>& g, const Tensor<S>& x) const {
    Tensor<S> h = relu(norm1(ps, g, conv1(ps, g, x)));
    h = norm2(ps, g, conv2(ps, g, h));
    return relu(add(h, x));
  }
};

template <typename S>
Tensor<S> to_signed_range(const Tensor<S>& x) {
  return add_scalar(scale(x, S(2)), S(-1));
}

template <typename S>
Tensor<S> to_unit_range(const Tensor<S>& t) {
  return add_scalar(scale(t, S(0.5)), S(0.5));
}

inline void require_image_batch(std::string_view who, const Shape& s, std::size_t multiple) {
  if (s.size() != 4 || s[1] != 1 || s[2] == 0 || s[3] == 0 || s[2] % multiple != 0 || s[3] % multiple != 0) {
    throw ShapeError(std::string(who) + ": expected N x 1 x H x W with H, W multiples of " + std::to_string(multiple) +
                     ", got " + to_string(s));
  }
}

// ---------------------------------------------------------------------------
// Segmenter

struct UnetConfig {
  std::size_t base_channels = 16;
  std::size_t n_classes = 3;
  std::vector<int> taps = {7, 9};
};

template <typename S>
struct UnetOutput {
  std::optional<Tensor<S>> logits;  // absent when the forward was truncated
  std::vector<Tensor<S>> taps;      // in the order of UnetConfig::taps
};

/// Residual encoder-decoder segmenter. Residual blocks are numbered 1..11 in
/// forward order: #1-2 (c), pool, #3-4 (2c), pool, #5-6 (4c), pool, #7-8 (8c)
/// bottleneck, then one block per decoder stage: #9 (4c), #10 (2c), #11 (c).
template <typename S>
class UnetModel {
 public:
  static constexpr int kBlocks = 11;
  static constexpr const char* kKind = "unet";

  UnetModel(UnetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    if (cfg_.n_classes < 2) throw ShapeError("unet: n_classes must be >= 2");
    for (int t : cfg_.taps)
      if (t < 1 || t > kBlocks) throw ShapeError("unet: tap index " + std::to_string(t) + " outside 1..11");
    const std::size_t c = cfg_.base_channels;
    detail::Initializer<S> init(params_, seed);
    const std::size_t widths[4] = {c, 2 * c, 4 * c, 8 * c};
    std::size_t in = 1;
    for (int s = 0; s < 4; ++s) {
      const std::string name = "enc" + std::to_string(s);
      enter_[s] = {ConvLayer<S>::make(init, name + ".in", in, widths[s], 3, 1, 1), NormLayer<S>::make(init, name + ".in_norm", widths[s]),
                   Activation::kRelu};
      for (int b = 0; b < 2; ++b)
        blocks_.push_back(ResidualBlock<S>::make(init, "block" + std::to_string(blocks_.size() + 1), widths[s]));
      in = widths[s];
    }
    for (int s = 0; s < 3; ++s) {
      const std::size_t out = widths[2 - s];
      const std::string name = "dec" + std::to_string(s);
      up_[s] = ConvLayer<S>::make(init, name + ".up", in, out, 2, 2, 0, true);
      fuse_[s] = {ConvLayer<S>::make(init, name + ".fuse", 2 * out, out, 3, 1, 1), NormLayer<S>::make(init, name + ".fuse_norm", out),
                  Activation::kRelu};
      blocks_.push_back(ResidualBlock<S>::make(init, "block" + std::to_string(blocks_.size() + 1), out));
      in = out;
    }
    head_ = ConvLayer<S>::make(init, "head", c, cfg_.n_classes, 1, 1, 0);
  }

  /// Runs the network. With stop_after_block in 1..11 the pass halts after
  /// that block and returns no logits.
  UnetOutput<S> forward(const Tensor<S>& images, const Graph<S>& g, int stop_after_block = 0) {
    require_image_batch("unet_forward", images.shape(), 8);
    if (stop_after_block < 0 || stop_after_block > kBlocks) throw ShapeError("unet_forward: bad truncation point");
    const int last = stop_after_block == 0 ? kBlocks : stop_after_block;
    for (int t : cfg_.taps)
      if (t > last) throw ShapeError("unet_forward: tap #" + std::to_string(t) + " lies beyond truncation point");

    UnetOutput<S> out;
    std::vector<std::optional<Tensor<S>>> tapped(cfg_.taps.size());
    int block = 0;
    auto run_block = [&](Tensor<S>& x) {
      x = blocks_[static_cast<std::size_t>(block)](params_, g, x);
      ++block;
      for (std::size_t i = 0; i < cfg_.taps.size(); ++i)
        if (cfg_.taps[i] == block) tapped[i] = x;
      return stop_after_block != 0 && block == stop_after_block;
    };
    auto finish = [&] {
      for (auto& t : tapped) out.taps.push_back(*t);
      return out;
    };

    Tensor<S> x = images;
    Tensor<S> skips[3];
    for (int s = 0; s < 4; ++s) {
      if (s > 0) x = maxpool2d(x);
      x = enter_[s](params_, g, x);
      if (run_block(x) || run_block(x)) return finish();
      if (s < 3) skips[s] = x;
    }
    for (int s = 0; s < 3; ++s) {
      x = up_[s](params_, g, x);
      x = fuse_[s](params_, g, concat_channels(x, skips[2 - s]));
      if (run_block(x)) return finish();
    }
    out.logits = head_(params_, g, x);
    return finish();
  }

  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }
  const UnetConfig& config() const { return cfg_; }
  UnetConfig& config() { return cfg_; }
  std::uint64_t seed() const { return seed_; }

 private:
  UnetConfig cfg_;
  std::uint64_t seed_;
  ParameterSet<S> params_;
  ConvNormAct<S> enter_[4];
  ConvNormAct<S> fuse_[3];
  ConvLayer<S> up_[3];
  ConvLayer<S> head_;
  std::vector<ResidualBlock<S>> blocks_;
};

template <typename S>
UnetModel<S> build_unet(std::uint64_t seed, std::size_t n_classes = 3) {
  UnetConfig cfg;
  cfg.n_classes = n_classes;
  return UnetModel<S>(cfg, seed);
}

// ---------------------------------------------------------------------------
// Translator

struct GeneratorConfig {
  std::size_t base_channels = 16;
  std::size_t residual_blocks = 4;
};

/// Image-to-image translator. Takes and returns images in [0, 1]; works in
/// [-1, 1] internally: tanh(atanh(input) + head), so a zero head is the identity.
template <typename S>
class GeneratorModel {
 public:
  static constexpr const char* kKind = "generator";
  static constexpr double kSkipShrink = 0.98;

  GeneratorModel(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    const std::size_t c = cfg_.base_channels;
    detail::Initializer<S> init(params_, seed);
    stem_ = {ConvLayer<S>::make(init, "stem", 1, c, 7, 1, 3), NormLayer<S>::make(init, "stem_norm", c), Activation::kRelu};
    down_[0] = {ConvLayer<S>::make(init, "down0", c, 2 * c, 3, 2, 1), NormLayer<S>::make(init, "down0_norm", 2 * c),
                Activation::kRelu};
    down_[1] = {ConvLayer<S>::make(init, "down1", 2 * c, 4 * c, 3, 2, 1), NormLayer<S>::make(init, "down1_norm", 4 * c),
                Activation::kRelu};
    for (std::size_t i = 0; i < cfg_.residual_blocks; ++i)
      blocks_.push_back(ResidualBlock<S>::make(init, "res" + std::to_string(i), 4 * c));
    up_[0] = {ConvLayer<S>::make(init, "up0", 4 * c, 2 * c, 4, 2, 1, true), NormLayer<S>::make(init, "up0_norm", 2 * c),
              Activation::kRelu};
    up_[1] = {ConvLayer<S>::make(init, "up1", 2 * c, c, 4, 2, 1, true), NormLayer<S>::make(init, "up1_norm", c),
              Activation::kRelu};
    head_ = ConvLayer<S>::make(init, "out", c, 1, 7, 1, 3);
    // zero head: a fresh generator is (almost) the identity map
    params_[head_.weight].value = Tensor<S>::zeros(params_[head_.weight].value.shape());
  }

  Tensor<S> forward(const Tensor<S>& images, const Graph<S>& g) {
    require_image_batch("generator", images.shape(), 4);
    const Tensor<S> signed_in = to_signed_range(images);
    Tensor<S> x = stem_(params_, g, signed_in);
    x = down_[1](params_, g, down_[0](params_, g, x));
    for (const auto& b : blocks_) x = b(params_, g, x);
    x = up_[1](params_, g, up_[0](params_, g, x));
    // tanh(atanh(k x) + head); k < 1 keeps atanh finite at the range ends
    const Tensor<S> u = scale(signed_in, S(kSkipShrink));
    const Tensor<S> pre = scale(sub(log(add_scalar(u, S(1))), log(one_minus(u))), S(0.5));
    return to_unit_range(tanh(add(pre, head_(params_, g, x))));
  }

  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }
  const GeneratorConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

 private:
  GeneratorConfig cfg_;
  std::uint64_t seed_;
  ParameterSet<S> params_;
  ConvNormAct<S> stem_, down_[2], up_[2];
  ConvLayer<S> head_;
  std::vector<ResidualBlock<S>> blocks_;
};

template <typename S>
GeneratorModel<S> build_generator(std::uint64_t seed) {
  return GeneratorModel<S>(GeneratorConfig{}, seed);
}

// ---------------------------------------------------------------------------
// Patch discriminator

struct DiscriminatorConfig {
  std::size_t base_channels = 16;
};

/// Three stride-2 4x4 convs (leaky relu, instance norm after the first) and a
/// 3x3 scoring conv; emits an (H/8) x (W/8) map of probabilities.
template <typename S>
class DiscriminatorModel {
 public:
  static constexpr const char* kKind = "discriminator";

  DiscriminatorModel(DiscriminatorConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    const std::size_t c = cfg_.base_channels;
    detail::Initializer<S> init(params_, seed);
    layers_[0] = {ConvLayer<S>::make(init, "c0", 1, c, 4, 2, 1), std::nullopt, Activation::kLeakyRelu};
    layers_[1] = {ConvLayer<S>::make(init, "c1", c, 2 * c, 4, 2, 1), NormLayer<S>::make(init, "c1_norm", 2 * c),
                  Activation::kLeakyRelu};
    layers_[2] = {ConvLayer<S>::make(init, "c2", 2 * c, 4 * c, 4, 2, 1), NormLayer<S>::make(init, "c2_norm", 4 * c),
                  Activation::kLeakyRelu};
    score_ = {ConvLayer<S>::make(init, "score", 4 * c, 1, 3, 1, 1), std::nullopt, Activation::kSigmoid};
  }

  Tensor<S> forward(const Tensor<S>& images, const Graph<S>& g) {
    require_image_batch("discriminator", images.shape(), 8);
    Tensor<S> x = to_signed_range(images);
    for (const auto& l : layers_) x = l(params_, g, x);
    return score_(params_, g, x);
  }

  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }
  const DiscriminatorConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

 private:
  DiscriminatorConfig cfg_;
  std::uint64_t seed_;
  ParameterSet<S> params_;
  ConvNormAct<S> layers_[3];
  ConvNormAct<S> score_;
};

template <typename S>
DiscriminatorModel<S> build_discriminator(std::uint64_t seed) {
  return DiscriminatorModel<S>(DiscriminatorConfig{}, seed);
}

}  // namespace unetgan
