#pragma once

#include "lgnet/backbones.hpp"
#include "lgnet/decoder.hpp"
#include "lgnet/fusion.hpp"
#include "lgnet/image.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>

namespace lgnet {

/// Architecture variants: the dual-backbone model and its ablations.
enum class Variant { full, learned_only, general_only, general_small, no_se };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct ModelConfig {
  LearnedBackboneConfig learned;
  GeneralBackboneConfig general;
  FusionConfig fusion;
  DecoderConfig decoder;
  Normalization normalization;
  std::uint64_t init_seed = 1;
};

/// Half-depth, half-width frozen encoder with proportional taps.
GeneralBackboneConfig smaller_general(const GeneralBackboneConfig& g);

/// Config actually used to build `v` from a base config.
ModelConfig variant_config(ModelConfig cfg, Variant v);

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
};

template <typename Scalar>
class GlassSegmenter {
 public:
  struct Output {
    QuerySet<Scalar> queries;
    Var<Scalar> mask_logits;  // n_queries x (mask_h * mask_w)
    int mask_h = 0;
    int mask_w = 0;
    int image_h = 0;
    int image_w = 0;
  };

  GlassSegmenter(const ModelConfig& cfg, Variant variant);

  Output forward(const ImageTensor<Scalar>& image, Binding<Scalar>& b) const;

  /// Multi-scale features handed to the decoder.
  MultiScaleFeatures<Scalar> pyramid(const ImageTensor<Scalar>& image, Binding<Scalar>& b) const;

  /// Graph-free inference to an image-sized confidence map.
  ConfidenceMap predict(const ImageTensor<Scalar>& image) const;
  ConfidenceMap predict(const RgbImage& image) const;

  ParameterStore<Scalar>& parameters() { return *store_; }
  const ParameterStore<Scalar>& parameters() const { return *store_; }
  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return variant_; }
  bool has_general() const { return general_.has_value(); }
  bool has_learned() const { return learned_.has_value(); }
  const PixelDecoder<Scalar>& pixel_decoder() const { return pixel_decoder_; }
  const QueryDecoder<Scalar>& query_decoder() const { return query_decoder_; }

 private:
  ModelConfig cfg_;
  Variant variant_;
  std::unique_ptr<ParameterStore<Scalar>> store_;
  std::optional<LearnedBackbone<Scalar>> learned_;
  std::optional<GeneralBackbone<Scalar>> general_;
  std::optional<Fusion<Scalar>> fusion_;
  std::optional<AdapterPyramid<Scalar>> adapters_;
  PixelDecoder<Scalar> pixel_decoder_;
  QueryDecoder<Scalar> query_decoder_;
};

template <typename Scalar>
ParamCounts count_params(const GlassSegmenter<Scalar>& model) {
  return {model.parameters().total_elements(), model.parameters().trainable_elements()};
}

template <typename Scalar>
GlassSegmenter<Scalar> build_variant(const std::string& name, const ModelConfig& base) {
  return GlassSegmenter<Scalar>(base, parse_variant(name));
}

extern template class GlassSegmenter<float>;
extern template class GlassSegmenter<double>;

}  // namespace lgnet
