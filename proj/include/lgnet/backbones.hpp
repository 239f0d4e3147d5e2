#pragma once

// Dual-backbone feature extractors: a trainable hierarchical convolutional
// encoder emitting a 1/4..1/32 pyramid, and a frozen patch transformer whose
// hidden states are tapped at four depths and aligned to the pyramid by
// trainable resizing adapters.

#include "lgnet/feature_map.hpp"
#include "lgnet/layers.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

struct LearnedBackboneConfig {
  std::array<int, 4> stage_channels{32, 64, 128, 256};
  int blocks_per_stage = 1;

  void validate() const;
};

struct GeneralBackboneConfig {
  int patch_size = 16;
  int embed_dim = 64;
  int num_blocks = 8;
  int num_heads = 4;
  int mlp_ratio = 2;
  std::array<int, 4> tap_indices{2, 4, 6, 8};
  std::uint64_t seed = 0x6c67656e;  // weights are a pure function of this seed

  void validate() const;
};

/// Taps at a quarter, half, three quarters and the full depth.
std::array<int, 4> default_taps(int depth);

/// Throws unless both sides are positive multiples of 32.
void check_input_size(int height, int width);

namespace detail {
inline std::string stage_name(int s) { return "learned.stage" + std::to_string(s); }
}  // namespace detail

/// Strided convolutional stand-in for a hierarchical transformer encoder.
template <typename Scalar>
class LearnedBackbone {
 public:
  LearnedBackbone() = default;
  LearnedBackbone(ParameterStore<Scalar>& store, const LearnedBackboneConfig& cfg, CounterRng& rng) : cfg_(cfg) {
    cfg.validate();
    const int c0 = cfg.stage_channels[0];
    const int stem_mid = std::max(8, c0 / 2);
    stem1_ = Conv2d<Scalar>(store, "learned.stem1", 3, stem_mid, 3, 2, 1, rng);
    stem1_norm_ = GroupNorm<Scalar>(store, "learned.stem1.norm", stem_mid);
    stem2_ = Conv2d<Scalar>(store, "learned.stem2", stem_mid, c0, 3, 2, 1, rng);
    stem2_norm_ = GroupNorm<Scalar>(store, "learned.stem2.norm", c0);
    for (int s = 0; s < 4; ++s) {
      const int c = cfg.stage_channels[static_cast<std::size_t>(s)];
      Stage& st = stages_[static_cast<std::size_t>(s)];
      if (s > 0) {
        const int prev = cfg.stage_channels[static_cast<std::size_t>(s - 1)];
        st.down = Conv2d<Scalar>(store, detail::stage_name(s) + ".down", prev, c, 2, 2, 0, rng);
        st.down_norm = GroupNorm<Scalar>(store, detail::stage_name(s) + ".down.norm", c);
      }
      for (int k = 0; k < cfg.blocks_per_stage; ++k) {
        const std::string n = detail::stage_name(s) + ".block" + std::to_string(k);
        st.blocks.push_back({Conv2d<Scalar>(store, n + ".conv", c, c, 3, 1, 1, rng), GroupNorm<Scalar>(store, n + ".norm", c)});
      }
    }
  }

  MultiScaleFeatures<Scalar> forward(const ImageTensor<Scalar>& image, Binding<Scalar>& b) const {
    check_input_size(image.height, image.width);
    FeatureMap<Scalar> x{Var<Scalar>(image.values), image.height, image.width, 1};
    x = relu_map(stem1_norm_(stem1_(x, b), b));
    x = relu_map(stem2_norm_(stem2_(x, b), b));
    MultiScaleFeatures<Scalar> out;
    for (std::size_t s = 0; s < 4; ++s) {
      const Stage& st = stages_[s];
      if (s > 0) x = relu_map(st.down_norm(st.down(x, b), b));
      for (const Block& blk : st.blocks) {
        const FeatureMap<Scalar> y = blk.norm(blk.conv(x, b), b);
        x = {relu(add(x.data, y.data)), x.height, x.width, x.scale};
      }
      out.levels[s] = x;
    }
    return out;
  }

  const LearnedBackboneConfig& config() const { return cfg_; }

 private:
  struct Block {
    Conv2d<Scalar> conv;
    GroupNorm<Scalar> norm;
  };
  struct Stage {
    Conv2d<Scalar> down;
    GroupNorm<Scalar> down_norm;
    std::vector<Block> blocks;
  };

  static FeatureMap<Scalar> relu_map(const FeatureMap<Scalar>& x) { return {relu(x.data), x.height, x.width, x.scale}; }

  LearnedBackboneConfig cfg_;
  Conv2d<Scalar> stem1_, stem2_;
  GroupNorm<Scalar> stem1_norm_, stem2_norm_;
  std::array<Stage, 4> stages_;
};

/// Frozen patch transformer (pre-norm blocks, one global summary token,
/// fixed sinusoidal positions). Parameters are drawn from cfg.seed and
/// registered as frozen; forward never records a graph.
template <typename Scalar>
class GeneralBackbone {
 public:
  GeneralBackbone() = default;
  GeneralBackbone(ParameterStore<Scalar>& store, const GeneralBackboneConfig& cfg, const std::string& prefix = "general")
      : cfg_(cfg) {
    cfg.validate();
    CounterRng rng(cfg.seed, 0x67656e);
    const int d = cfg.embed_dim;
    patch_embed_ = Conv2d<Scalar>(store, prefix + ".patch_embed", 3, d, cfg.patch_size, cfg.patch_size, 0, rng, true);
    summary_token_ = store.add(prefix + ".summary_token", init::normal<Scalar>(1, d, 0.02, rng), true);
    for (int i = 0; i < cfg.num_blocks; ++i) {
      const std::string n = prefix + ".block" + std::to_string(i);
      blocks_.push_back({LayerNorm<Scalar>(store, n + ".norm1", d, true),
                         MultiHeadAttention<Scalar>(store, n + ".attn", d, cfg.num_heads, rng, true),
                         LayerNorm<Scalar>(store, n + ".norm2", d, true),
                         Linear<Scalar>(store, n + ".mlp1", d, d * cfg.mlp_ratio, rng, true),
                         Linear<Scalar>(store, n + ".mlp2", d * cfg.mlp_ratio, d, rng, true)});
    }
  }

  /// One D x (H/p * W/p) map per tap, all at stride patch_size.
  std::array<FeatureMap<Scalar>, 4> forward(const ImageTensor<Scalar>& image, Binding<Scalar>& b) const {
    const int p = cfg_.patch_size;
    if (image.height % p != 0 || image.width % p != 0)
      throw std::invalid_argument("general backbone: image size not divisible by patch size");
    NoGradGuard no_grad;
    const FeatureMap<Scalar> patches = patch_embed_(FeatureMap<Scalar>{Var<Scalar>(image.values), image.height, image.width, 1}, b);
    const int gh = patches.height;
    const int gw = patches.width;
    Matrix<Scalar> tokens(1 + gh * gw, cfg_.embed_dim);
    tokens.row(0) = summary_token_->value.row(0);
    tokens.bottomRows(gh * gw) = patches.values().transpose() + sine_position_encoding<Scalar>(gh, gw, cfg_.embed_dim);
    Var<Scalar> x(std::move(tokens));
    std::array<FeatureMap<Scalar>, 4> taps;
    std::size_t next_tap = 0;
    for (int i = 0; i < cfg_.num_blocks; ++i) {
      const BlockParams& blk = blocks_[static_cast<std::size_t>(i)];
      const Var<Scalar> h = blk.norm1(x, b);
      x = add(x, blk.attn(h, h, h, b));
      x = add(x, blk.mlp2(gelu(blk.mlp1(blk.norm2(x, b), b)), b));
      if (next_tap < 4 && cfg_.tap_indices[next_tap] == i + 1) {
        // Drop the summary token; the remaining rows are the patch grid.
        Matrix<Scalar> grid = x.value().bottomRows(gh * gw).transpose();
        taps[next_tap++] = {Var<Scalar>(std::move(grid)), gh, gw, p};
      }
    }
    return taps;
  }

  const GeneralBackboneConfig& config() const { return cfg_; }

 private:
  struct BlockParams {
    LayerNorm<Scalar> norm1;
    MultiHeadAttention<Scalar> attn;
    LayerNorm<Scalar> norm2;
    Linear<Scalar> mlp1;
    Linear<Scalar> mlp2;
  };

  GeneralBackboneConfig cfg_;
  Conv2d<Scalar> patch_embed_;
  Parameter<Scalar>* summary_token_ = nullptr;
  std::vector<BlockParams> blocks_;
};

/// Trainable convolution that moves a patch-grid hidden state to one pyramid
/// stride: 3x3 conv then bilinear upsampling for finer targets, a
/// same-resolution 3x3 conv for the patch stride, a stride-2 3x3 conv for
/// the next coarser stride.
template <typename Scalar>
class ResizeAdapter {
 public:
  ResizeAdapter() = default;
  ResizeAdapter(ParameterStore<Scalar>& store, const std::string& name, int channels, int source_scale,
                int target_scale, CounterRng& rng)
      : source_scale_(source_scale), target_scale_(target_scale) {
    int stride = 1;
    if (target_scale > source_scale) {
      if (target_scale != 2 * source_scale) throw std::invalid_argument("adapter: unsupported downsampling factor");
      stride = 2;
    } else if (source_scale % target_scale != 0) {
      throw std::invalid_argument("adapter: target scale must divide the source scale");
    }
    conv_ = Conv2d<Scalar>(store, name + ".conv", channels, channels, 3, stride, 1, rng);
  }

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& hidden, Binding<Scalar>& b) const {
    if (hidden.scale != source_scale_) throw std::invalid_argument("adapter: hidden state has unexpected scale");
    FeatureMap<Scalar> y = conv_(hidden, b);
    if (target_scale_ < source_scale_) {
      const int f = source_scale_ / target_scale_;
      y = {resize_bilinear(y.data, y.height, y.width, y.height * f, y.width * f), y.height * f, y.width * f,
           target_scale_};
    }
    return y;
  }

  int target_scale() const { return target_scale_; }

 private:
  Conv2d<Scalar> conv_;
  int source_scale_ = 16;
  int target_scale_ = 16;
};

/// Functional form of a single resize: builds a fresh adapter from `rng`.
template <typename Scalar>
FeatureMap<Scalar> adapt_resize(const FeatureMap<Scalar>& hidden, int target_scale, ParameterStore<Scalar>& store,
                                CounterRng& rng, Binding<Scalar>& b) {
  if (target_scale != 4 && target_scale != 8 && target_scale != 16 && target_scale != 32)
    throw std::invalid_argument("adapt_resize: unsupported target scale " + std::to_string(target_scale));
  const ResizeAdapter<Scalar> adapter(store, "adapt_resize.s" + std::to_string(target_scale) + "." + std::to_string(store.size()),
                                      hidden.channels(), hidden.scale, target_scale, rng);
  return adapter(hidden, b);
}

/// Named copy of parameter values.
template <typename Scalar>
using ParameterSnapshot = std::vector<std::pair<std::string, Matrix<Scalar>>>;

/// Snapshot of every parameter whose name starts with `prefix`.
template <typename Scalar>
ParameterSnapshot<Scalar> snapshot(const ParameterStore<Scalar>& store, const std::string& prefix) {
  ParameterSnapshot<Scalar> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store[i].name.rfind(prefix, 0) == 0) out.emplace_back(store[i].name, store[i].value);
  }
  return out;
}

/// True iff both snapshots hold the same names with bitwise-identical values.
template <typename Scalar>
bool freeze_check(const ParameterSnapshot<Scalar>& before, const ParameterSnapshot<Scalar>& after) {
  if (before.size() != after.size()) return false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& [na, a] = before[i];
    const auto& [nb, bm] = after[i];
    if (na != nb || a.rows() != bm.rows() || a.cols() != bm.cols()) return false;
    if (std::memcmp(a.data(), bm.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) != 0) return false;
  }
  return true;
}

}  // namespace lgnet
