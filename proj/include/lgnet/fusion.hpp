#pragma once

// Per-scale fusion of learned and adapted general features: channel
// concatenation followed by a residual squeeze-and-excitation block that
// reduces channels in two steps.

#include "lgnet/backbones.hpp"
#include "lgnet/feature_map.hpp"
#include "lgnet/layers.hpp"

#include <array>
#include <memory>
#include <stdexcept>
#include <string>

namespace lgnet {

/// Intermediate width of the two-step reduction: max(floor(c_in / 2), c_out).
int channel_mid(int c_in, int c_out);

struct ChannelReductionSpec {
  int c_in = 0;
  int c_out = 0;
  int c_mid = 0;

  static ChannelReductionSpec make(int c_in, int c_out) { return {c_in, c_out, channel_mid(c_in, c_out)}; }
};

struct SEConfig {
  int reduction_ratio = 8;

  int bottleneck(int channels) const { return std::max(1, channels / reduction_ratio); }
};

enum class ReductionMode { squeeze_excitation, pointwise };

struct FusionConfig {
  SEConfig se;
  ReductionMode mode = ReductionMode::squeeze_excitation;
  int kernel_size = 3;
  bool use_norm = true;
  bool final_activation = true;
};

template <typename Scalar>
FeatureMap<Scalar> concat_features(const FeatureMap<Scalar>& learned, const FeatureMap<Scalar>& adapted) {
  if (learned.height != adapted.height || learned.width != adapted.width || learned.scale != adapted.scale)
    throw std::invalid_argument("concat_features: spatial size or scale mismatch");
  return {concat_rows(learned.data, adapted.data), learned.height, learned.width, learned.scale};
}

/// Squeeze (global average pool) and excitation (affine, ReLU, affine,
/// sigmoid). w1 is bottleneck x C, w2 is C x bottleneck; biases are columns.
/// Returns the C x 1 gate.
template <typename Scalar>
Var<Scalar> se_gate(const Var<Scalar>& feature, const Var<Scalar>& w1, const Var<Scalar>& b1, const Var<Scalar>& w2,
                    const Var<Scalar>& b2) {
  const Var<Scalar> squeezed = mean_cols(feature);
  const Var<Scalar> hidden = relu(add(matmul(w1, squeezed), b1));
  return sigmoid(add(matmul(w2, hidden), b2));
}

template <typename Scalar>
class SqueezeExcitation {
 public:
  SqueezeExcitation() = default;
  SqueezeExcitation(ParameterStore<Scalar>& store, const std::string& name, int channels, const SEConfig& cfg,
                    CounterRng& rng) {
    const int hidden = cfg.bottleneck(channels);
    w1_ = store.add(name + ".w1", init::he<Scalar>(hidden, channels, rng));
    b1_ = store.add(name + ".b1", Matrix<Scalar>::Zero(hidden, 1));
    w2_ = store.add(name + ".w2", init::xavier<Scalar>(channels, hidden, rng));
    b2_ = store.add(name + ".b2", Matrix<Scalar>::Zero(channels, 1));
  }

  Var<Scalar> gate(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const {
    return se_gate(x.data, b(w1_), b(b1_), b(w2_), b(b2_));
  }

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const {
    return {scale_rows(x.data, gate(x, b)), x.height, x.width, x.scale};
  }

  Parameter<Scalar>* w1() const { return w1_; }
  Parameter<Scalar>* w2() const { return w2_; }
  Parameter<Scalar>* b1() const { return b1_; }
  Parameter<Scalar>* b2() const { return b2_; }

 private:
  Parameter<Scalar>*w1_ = nullptr, *b1_ = nullptr, *w2_ = nullptr, *b2_ = nullptr;
};

/// Common interface of the per-scale reduction blocks.
template <typename Scalar>
class ChannelReducer {
 public:
  virtual ~ChannelReducer() = default;
  virtual FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const = 0;
};

/// conv(c_in -> c_mid) -> norm -> ReLU -> conv(c_mid -> c_out) -> norm -> SE
/// gate, plus a 1x1 projection shortcut of the input, then ReLU.
template <typename Scalar>
class SEChannelReduction final : public ChannelReducer<Scalar> {
 public:
  SEChannelReduction(ParameterStore<Scalar>& store, const std::string& name, int c_in, int c_out,
                     const FusionConfig& cfg, CounterRng& rng)
      : spec_(ChannelReductionSpec::make(c_in, c_out)), cfg_(cfg) {
    if (c_out > c_in) throw std::invalid_argument("SE channel reduction: c_out exceeds c_in");
    const int k = cfg.kernel_size;
    conv1_ = Conv2d<Scalar>(store, name + ".conv1", c_in, spec_.c_mid, k, 1, k / 2, rng);
    conv2_ = Conv2d<Scalar>(store, name + ".conv2", spec_.c_mid, c_out, k, 1, k / 2, rng);
    if (cfg.use_norm) {
      norm1_ = GroupNorm<Scalar>(store, name + ".norm1", spec_.c_mid);
      norm2_ = GroupNorm<Scalar>(store, name + ".norm2", c_out);
    }
    se_ = SqueezeExcitation<Scalar>(store, name + ".se", c_out, cfg.se, rng);
    shortcut_ = Conv2d<Scalar>(store, name + ".shortcut", c_in, c_out, 1, 1, 0, rng);
  }

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const override {
    if (x.channels() != spec_.c_in) throw std::invalid_argument("SE channel reduction: unexpected input channels");
    FeatureMap<Scalar> y = conv1_(x, b);
    if (cfg_.use_norm) y = norm1_(y, b);
    y.data = relu(y.data);
    y = conv2_(y, b);
    if (cfg_.use_norm) y = norm2_(y, b);
    y = se_(y, b);
    const FeatureMap<Scalar> res = shortcut_(x, b);
    Var<Scalar> out = add(y.data, res.data);
    if (cfg_.final_activation) out = relu(out);
    return {out, x.height, x.width, x.scale};
  }

  const ChannelReductionSpec& spec() const { return spec_; }
  const Conv2d<Scalar>& conv1() const { return conv1_; }
  const Conv2d<Scalar>& conv2() const { return conv2_; }
  const Conv2d<Scalar>& shortcut() const { return shortcut_; }
  const SqueezeExcitation<Scalar>& se() const { return se_; }

 private:
  ChannelReductionSpec spec_;
  FusionConfig cfg_;
  Conv2d<Scalar> conv1_, conv2_, shortcut_;
  GroupNorm<Scalar> norm1_, norm2_;
  SqueezeExcitation<Scalar> se_;
};

/// Ablation replacement: one 1x1 convolution straight to c_out.
template <typename Scalar>
class PointwiseReduction final : public ChannelReducer<Scalar> {
 public:
  PointwiseReduction(ParameterStore<Scalar>& store, const std::string& name, int c_in, int c_out, CounterRng& rng)
      : conv_(store, name + ".conv", c_in, c_out, 1, 1, 0, rng) {}

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const override { return conv_(x, b); }

 private:
  Conv2d<Scalar> conv_;
};

template <typename Scalar>
std::unique_ptr<ChannelReducer<Scalar>> make_reducer(ParameterStore<Scalar>& store, const std::string& name, int c_in,
                                                     int c_out, const FusionConfig& cfg, CounterRng& rng) {
  if (cfg.mode == ReductionMode::pointwise)
    return std::make_unique<PointwiseReduction<Scalar>>(store, name, c_in, c_out, rng);
  return std::make_unique<SEChannelReduction<Scalar>>(store, name, c_in, c_out, cfg, rng);
}

/// Four resizing adapters (tap i -> pyramid level i, shallow taps to fine
/// levels) followed by concatenation and per-scale reduction back to the
/// learned backbone's channel counts.
template <typename Scalar>
class Fusion {
 public:
  Fusion() = default;
  Fusion(ParameterStore<Scalar>& store, const std::array<int, 4>& learned_channels, int general_channels,
         int patch_size, const FusionConfig& cfg, CounterRng& rng) {
    for (std::size_t i = 0; i < 4; ++i) {
      const int scale = MultiScaleFeatures<Scalar>::kScales[i];
      const std::string n = "fusion.s" + std::to_string(scale);
      adapters_[i] = ResizeAdapter<Scalar>(store, n + ".adapter", general_channels, patch_size, scale, rng);
      reducers_[i] = make_reducer(store, n + ".reduce", learned_channels[i] + general_channels, learned_channels[i], cfg, rng);
    }
  }

  MultiScaleFeatures<Scalar> operator()(const MultiScaleFeatures<Scalar>& learned,
                                        const std::array<FeatureMap<Scalar>, 4>& general_states,
                                        Binding<Scalar>& b) const {
    MultiScaleFeatures<Scalar> out;
    for (std::size_t i = 0; i < 4; ++i) {
      const FeatureMap<Scalar> adapted = adapters_[i](general_states[i], b);
      out.levels[i] = (*reducers_[i])(concat_features(learned.levels[i], adapted), b);
    }
    return out;
  }

 private:
  std::array<ResizeAdapter<Scalar>, 4> adapters_;
  std::array<std::shared_ptr<ChannelReducer<Scalar>>, 4> reducers_;
};

/// Adapters only, for the general-features-only ablation.
template <typename Scalar>
class AdapterPyramid {
 public:
  AdapterPyramid() = default;
  AdapterPyramid(ParameterStore<Scalar>& store, int general_channels, int patch_size, CounterRng& rng) {
    for (std::size_t i = 0; i < 4; ++i) {
      const int scale = MultiScaleFeatures<Scalar>::kScales[i];
      adapters_[i] = ResizeAdapter<Scalar>(store, "adapters.s" + std::to_string(scale), general_channels, patch_size,
                                           scale, rng);
    }
  }

  MultiScaleFeatures<Scalar> operator()(const std::array<FeatureMap<Scalar>, 4>& general_states,
                                        Binding<Scalar>& b) const {
    MultiScaleFeatures<Scalar> out;
    for (std::size_t i = 0; i < 4; ++i) out.levels[i] = adapters_[i](general_states[i], b);
    return out;
  }

 private:
  std::array<ResizeAdapter<Scalar>, 4> adapters_;
};

}  // namespace lgnet
