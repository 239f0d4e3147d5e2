#include "lgnet/model.hpp"

#include <stdexcept>

namespace lgnet {

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "learned_only") return Variant::learned_only;
  if (name == "general_only") return Variant::general_only;
  if (name == "general_small") return Variant::general_small;
  if (name == "no_se") return Variant::no_se;
  throw std::invalid_argument("unknown variant: " + name);
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::learned_only: return "learned_only";
    case Variant::general_only: return "general_only";
    case Variant::general_small: return "general_small";
    case Variant::no_se: return "no_se";
  }
  return "full";
}

GeneralBackboneConfig smaller_general(const GeneralBackboneConfig& g) {
  GeneralBackboneConfig s = g;
  s.num_blocks = std::max(4, (g.num_blocks / 2) / 4 * 4);
  s.num_heads = std::max(1, g.num_heads / 2);
  s.embed_dim = std::max(s.num_heads, g.embed_dim / 2 / s.num_heads * s.num_heads);
  s.tap_indices = default_taps(s.num_blocks);
  return s;
}

ModelConfig variant_config(ModelConfig cfg, Variant v) {
  if (v == Variant::no_se) cfg.fusion.mode = ReductionMode::pointwise;
  if (v == Variant::general_small) cfg.general = smaller_general(cfg.general);
  return cfg;
}

template <typename Scalar>
GlassSegmenter<Scalar>::GlassSegmenter(const ModelConfig& base, Variant variant)
    : cfg_(variant_config(base, variant)), variant_(variant), store_(std::make_unique<ParameterStore<Scalar>>()) {
  const bool use_learned = variant != Variant::general_only;
  const bool use_general = variant != Variant::learned_only;
  if (use_learned) {
    CounterRng rng(cfg_.init_seed, 1);
    learned_.emplace(*store_, cfg_.learned, rng);
  }
  if (use_general) general_.emplace(*store_, cfg_.general);

  std::array<int, 4> pyramid_channels = cfg_.learned.stage_channels;
  if (use_learned && use_general) {
    CounterRng rng(cfg_.init_seed, 2);
    fusion_.emplace(*store_, cfg_.learned.stage_channels, cfg_.general.embed_dim, cfg_.general.patch_size, cfg_.fusion, rng);
  } else if (use_general) {
    CounterRng rng(cfg_.init_seed, 3);
    adapters_.emplace(*store_, cfg_.general.embed_dim, cfg_.general.patch_size, rng);
    pyramid_channels.fill(cfg_.general.embed_dim);
  }
  CounterRng pixel_rng(cfg_.init_seed, 4);
  pixel_decoder_ = PixelDecoder<Scalar>(*store_, pyramid_channels, cfg_.decoder.embed_dim, pixel_rng);
  CounterRng query_rng(cfg_.init_seed, 5);
  query_decoder_ = QueryDecoder<Scalar>(*store_, cfg_.decoder, query_rng);
}

template <typename Scalar>
MultiScaleFeatures<Scalar> GlassSegmenter<Scalar>::pyramid(const ImageTensor<Scalar>& image, Binding<Scalar>& b) const {
  check_input_size(image.height, image.width);
  if (!general_) return learned_->forward(image, b);
  const auto taps = general_->forward(image, b);
  if (!learned_) return (*adapters_)(taps, b);
  return (*fusion_)(learned_->forward(image, b), taps, b);
}

template <typename Scalar>
typename GlassSegmenter<Scalar>::Output GlassSegmenter<Scalar>::forward(const ImageTensor<Scalar>& image,
                                                                        Binding<Scalar>& b) const {
  const MultiScaleFeatures<Scalar> features = pyramid(image, b);
  const PixelDecoding<Scalar> pd = pixel_decoder_(features, b);
  Output out;
  out.queries = query_decoder_(pd, b);
  out.mask_logits = query_decoder_.predict_masks(out.queries, pd, b);
  out.mask_h = pd.pixel_embedding.height;
  out.mask_w = pd.pixel_embedding.width;
  out.image_h = image.height;
  out.image_w = image.width;
  return out;
}

template <typename Scalar>
ConfidenceMap GlassSegmenter<Scalar>::predict(const ImageTensor<Scalar>& image) const {
  NoGradGuard no_grad;
  Binding<Scalar> b(false);
  const Output out = forward(image, b);
  return semantic_inference(out.queries.class_logits.value().template cast<double>(),
                            out.mask_logits.value().template cast<double>(), out.mask_h, out.mask_w, out.image_h,
                            out.image_w);
}

template <typename Scalar>
ConfidenceMap GlassSegmenter<Scalar>::predict(const RgbImage& image) const {
  return predict(to_tensor<Scalar>(image, cfg_.normalization));
}

template class GlassSegmenter<float>;
template class GlassSegmenter<double>;

}  // namespace lgnet
