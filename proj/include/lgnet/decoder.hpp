#pragma once

// Query-based mask decoder: a top-down pixel decoder producing stride-4
// pixel embeddings, a transformer query decoder over the coarser levels,
// per-query mask logits, semantic fusion into a confidence map, and the
// matching-based training loss.

#include "lgnet/feature_map.hpp"
#include "lgnet/hungarian.hpp"
#include "lgnet/image.hpp"
#include "lgnet/layers.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

/// Class index of the glass class in class logits; the other is no-object.
inline constexpr int kGlassClass = 0;
inline constexpr int kNoObjectClass = 1;

struct DecoderConfig {
  int embed_dim = 64;
  int n_queries = 16;
  int n_layers = 3;
  int n_heads = 4;
  int ffn_dim = 128;

  void validate() const;
};

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double no_object = 0.1;
};

template <typename Scalar>
struct PixelDecoding {
  FeatureMap<Scalar> pixel_embedding;            // stride 4
  std::array<FeatureMap<Scalar>, 3> context_levels;  // strides 8, 16, 32
};

template <typename Scalar>
struct QuerySet {
  Var<Scalar> embeddings;     // n_queries x embed_dim
  Var<Scalar> class_logits;   // n_queries x 2
  int n_queries() const { return static_cast<int>(embeddings.rows()); }
};

/// Context tokens of one level with their positional encodings.
template <typename Scalar>
struct ContextTokens {
  Var<Scalar> tokens;        // N x D
  Matrix<Scalar> positions;  // N x D
};

/// FPN-style top-down decoder: 1x1 lateral projections, bilinear 2x
/// upsample-and-add from coarse to fine, then norm/ReLU/1x1 on the finest.
template <typename Scalar>
class PixelDecoder {
 public:
  PixelDecoder() = default;
  PixelDecoder(ParameterStore<Scalar>& store, const std::array<int, 4>& in_channels, int embed_dim, CounterRng& rng)
      : embed_dim_(embed_dim) {
    for (std::size_t i = 0; i < 4; ++i) {
      lateral_[i] = Conv2d<Scalar>(store, "pixel_decoder.lateral" + std::to_string(i), in_channels[i], embed_dim, 1, 1, 0, rng);
    }
    out_norm_ = GroupNorm<Scalar>(store, "pixel_decoder.out.norm", embed_dim);
    out_proj_ = Conv2d<Scalar>(store, "pixel_decoder.out.proj", embed_dim, embed_dim, 1, 1, 0, rng);
  }

  PixelDecoding<Scalar> operator()(const MultiScaleFeatures<Scalar>& fused, Binding<Scalar>& b) const {
    fused.validate();
    std::array<FeatureMap<Scalar>, 4> merged;
    merged[3] = lateral_[3](fused.levels[3], b);
    for (int i = 2; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      const FeatureMap<Scalar> lat = lateral_[ui](fused.levels[ui], b);
      const FeatureMap<Scalar>& coarse = merged[ui + 1];
      const Var<Scalar> up = resize_bilinear(coarse.data, coarse.height, coarse.width, lat.height, lat.width);
      merged[ui] = {add(lat.data, up), lat.height, lat.width, lat.scale};
    }
    FeatureMap<Scalar> pe = out_norm_(merged[0], b);
    pe.data = relu(pe.data);
    pe = out_proj_(pe, b);
    return {pe, {merged[1], merged[2], merged[3]}};
  }

  int embed_dim() const { return embed_dim_; }

 private:
  int embed_dim_ = 0;
  std::array<Conv2d<Scalar>, 4> lateral_;
  GroupNorm<Scalar> out_norm_;
  Conv2d<Scalar> out_proj_;
};

/// Learned queries refined by rounds of (cross-attention over one context
/// level, self-attention, feed-forward), levels cycling coarse to fine.
template <typename Scalar>
class QueryDecoder {
 public:
  QueryDecoder() = default;
  QueryDecoder(ParameterStore<Scalar>& store, const DecoderConfig& cfg, CounterRng& rng) : cfg_(cfg) {
    cfg.validate();
    const int d = cfg.embed_dim;
    query_feat_ = store.add("query_decoder.query_feat", init::normal<Scalar>(cfg.n_queries, d, 1.0, rng));
    query_pos_ = store.add("query_decoder.query_pos", init::normal<Scalar>(cfg.n_queries, d, 1.0, rng));
    level_embed_ = store.add("query_decoder.level_embed", init::normal<Scalar>(3, d, 1.0, rng));
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string n = "query_decoder.layer" + std::to_string(l);
      layers_.push_back({MultiHeadAttention<Scalar>(store, n + ".cross", d, cfg.n_heads, rng),
                         LayerNorm<Scalar>(store, n + ".cross.norm", d),
                         MultiHeadAttention<Scalar>(store, n + ".self", d, cfg.n_heads, rng),
                         LayerNorm<Scalar>(store, n + ".self.norm", d),
                         Linear<Scalar>(store, n + ".ffn1", d, cfg.ffn_dim, rng),
                         Linear<Scalar>(store, n + ".ffn2", cfg.ffn_dim, d, rng),
                         LayerNorm<Scalar>(store, n + ".ffn.norm", d)});
    }
    final_norm_ = LayerNorm<Scalar>(store, "query_decoder.norm", d);
    class_head_ = Linear<Scalar>(store, "query_decoder.class_head", d, 2, rng);
    mask_head1_ = Linear<Scalar>(store, "query_decoder.mask_head1", d, d, rng);
    mask_head2_ = Linear<Scalar>(store, "query_decoder.mask_head2", d, d, rng);
  }

  /// Flattens the context levels (coarsest first) into tokens with level
  /// embeddings and sinusoidal positions.
  std::array<ContextTokens<Scalar>, 3> context_tokens(const PixelDecoding<Scalar>& pd, Binding<Scalar>& b) const {
    std::array<ContextTokens<Scalar>, 3> out;
    const Var<Scalar> levels = b(level_embed_);
    for (std::size_t j = 0; j < 3; ++j) {
      const FeatureMap<Scalar>& ctx = pd.context_levels[2 - j];
      const Var<Scalar> level_row = slice_rows(levels, static_cast<Eigen::Index>(j), 1);
      out[j] = {add_row_bias(transpose(ctx.data), level_row),
                sine_position_encoding<Scalar>(ctx.height, ctx.width, cfg_.embed_dim)};
    }
    return out;
  }

  QuerySet<Scalar> operator()(const PixelDecoding<Scalar>& pd, Binding<Scalar>& b) const {
    return decode_tokens(context_tokens(pd, b), b);
  }

  QuerySet<Scalar> decode_tokens(const std::array<ContextTokens<Scalar>, 3>& ctx, Binding<Scalar>& b) const {
    Var<Scalar> q = b(query_feat_);
    const Var<Scalar> qpos = b(query_pos_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      const ContextTokens<Scalar>& c = ctx[l % 3];
      const Var<Scalar> keys = add(c.tokens, Var<Scalar>(c.positions));
      q = layer.cross_norm(add(q, layer.cross(add(q, qpos), keys, c.tokens, b)), b);
      const Var<Scalar> qp = add(q, qpos);
      q = layer.self_norm(add(q, layer.self(qp, qp, q, b)), b);
      q = layer.ffn_norm(add(q, layer.ffn2(relu(layer.ffn1(q, b)), b)), b);
    }
    const Var<Scalar> out = final_norm_(q, b);
    return {out, class_head_(out, b)};
  }

  /// Per-query mask logits: <mask_head(embedding_q), pixel_embedding[:, p]>,
  /// n_queries x (H/4 * W/4).
  Var<Scalar> predict_masks(const QuerySet<Scalar>& queries, const PixelDecoding<Scalar>& pd, Binding<Scalar>& b) const {
    if (queries.embeddings.cols() != pd.pixel_embedding.data.rows())
      throw std::invalid_argument("predict_masks: embedding dimension mismatch");
    return mask_logits(mask_embeddings(queries, b), pd.pixel_embedding);
  }

  Var<Scalar> mask_embeddings(const QuerySet<Scalar>& queries, Binding<Scalar>& b) const {
    return mask_head2_(relu(mask_head1_(queries.embeddings, b)), b);
  }

  static Var<Scalar> mask_logits(const Var<Scalar>& mask_embedding, const FeatureMap<Scalar>& pixel_embedding) {
    return matmul(mask_embedding, pixel_embedding.data);
  }

  const DecoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    MultiHeadAttention<Scalar> cross;
    LayerNorm<Scalar> cross_norm;
    MultiHeadAttention<Scalar> self;
    LayerNorm<Scalar> self_norm;
    Linear<Scalar> ffn1, ffn2;
    LayerNorm<Scalar> ffn_norm;
  };

  DecoderConfig cfg_;
  Parameter<Scalar>*query_feat_ = nullptr, *query_pos_ = nullptr, *level_embed_ = nullptr;
  std::vector<Layer> layers_;
  LayerNorm<Scalar> final_norm_;
  Linear<Scalar> class_head_, mask_head1_, mask_head2_;
};

/// Per pixel: sum over queries of P(glass | query) * sigmoid(mask logit),
/// clamped to [0, 1], then bilinearly resized to out_h x out_w.
ConfidenceMap semantic_inference(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& mask_logits, int mask_h,
                                 int mask_w, int out_h, int out_w);

/// 1 where confidence >= threshold.
BinaryMask binarize(const ConfidenceMap& conf, double threshold = 0.5);

/// Nearest-neighbour resample of a mask.
BinaryMask resize_mask_nearest(const BinaryMask& mask, int out_h, int out_w);

/// Mask as a 1 x (H*W) row of 0/1 reals.
template <typename Scalar>
Matrix<Scalar> mask_row(const BinaryMask& mask) {
  Matrix<Scalar> row(1, static_cast<Eigen::Index>(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = static_cast<Scalar>(mask.values[i]);
  return row;
}

/// 1 - (2 sum(p g) + 1) / (sum(p) + sum(g) + 1).
template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& probs, const Matrix<Scalar>& gt) {
  if (probs.rows() != gt.rows() || probs.cols() != gt.cols()) throw std::invalid_argument("dice_loss: shape mismatch");
  const Scalar num = Scalar(2) * probs.value().cwiseProduct(gt).sum() + Scalar(1);
  const Scalar den = probs.value().sum() + gt.sum() + Scalar(1);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = Scalar(1) - num / den;
  return Var<Scalar>::from_op(std::move(out), {probs}, [probs, gt, num, den](const Matrix<Scalar>& g) {
    const Matrix<Scalar> d = -(Scalar(2) * gt * den - Matrix<Scalar>::Constant(gt.rows(), gt.cols(), num)) / (den * den);
    probs.add_grad(d * g(0, 0));
  });
}

/// Mean binary cross-entropy of logits against 0/1 targets.
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Matrix<Scalar>& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols())
    throw std::invalid_argument("bce_with_logits: shape mismatch");
  const auto z = logits.value().array();
  const Scalar n = static_cast<Scalar>(target.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = (z.max(Scalar(0)) - z * target.array() + (Scalar(1) + (-z.abs()).exp()).log()).sum() / n;
  return Var<Scalar>::from_op(std::move(out), {logits}, [logits, target, n](const Matrix<Scalar>& g) {
    const auto s = Scalar(1) / (Scalar(1) + (-logits.value().array()).exp());
    logits.add_grad(((s - target.array()) * (g(0, 0) / n)).matrix());
  });
}

/// Class-weighted mean cross-entropy over rows:
/// sum_i w[t_i] * -log softmax(z_i)[t_i] / sum_i w[t_i].
template <typename Scalar>
Var<Scalar> weighted_cross_entropy(const Var<Scalar>& logits, const std::vector<int>& targets,
                                   const std::vector<Scalar>& class_weights) {
  const Eigen::Index n = logits.rows();
  if (static_cast<Eigen::Index>(targets.size()) != n) throw std::invalid_argument("weighted_cross_entropy: target count");
  Matrix<Scalar> probs(n, logits.cols());
  Scalar total_w = 0;
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = logits.value().row(i);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row.array() - m).exp().sum());
    probs.row(i) = (row.array() - lse).exp().matrix();
    const auto t = static_cast<std::size_t>(targets[static_cast<std::size_t>(i)]);
    total_w += class_weights[t];
    loss += class_weights[t] * (lse - row(static_cast<Eigen::Index>(t)));
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = loss / total_w;
  return Var<Scalar>::from_op(std::move(out), {logits},
                              [logits, targets, class_weights, probs = std::move(probs), total_w](const Matrix<Scalar>& g) {
                                Matrix<Scalar> d = probs;
                                for (Eigen::Index i = 0; i < d.rows(); ++i) {
                                  const auto t = static_cast<std::size_t>(targets[static_cast<std::size_t>(i)]);
                                  d(i, static_cast<Eigen::Index>(t)) -= Scalar(1);
                                  d.row(i) *= class_weights[t] / total_w;
                                }
                                logits.add_grad(d * g(0, 0));
                              });
}

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  Var<Scalar> cls;
  Var<Scalar> bce;   // invalid when the ground truth is empty
  Var<Scalar> dice;  // invalid when the ground truth is empty
  std::vector<std::pair<int, int>> assignment;  // (query, ground-truth mask)
  Eigen::MatrixXd cost;                         // n_queries x n_masks
};

/// Matching cost of every query against every ground-truth mask:
/// w.cls * (-P(glass)) + w.bce * BCE + w.dice * dice.
Eigen::MatrixXd matching_cost(const Eigen::MatrixXd& class_logits, const Eigen::MatrixXd& mask_logits,
                              const std::vector<Eigen::RowVectorXd>& gt_masks, const LossWeights& w);

/// Hungarian-matched set loss for a single-class (glass) ground truth. `gt`
/// must already be at mask-logit resolution. With no glass pixels there is no
/// target mask and only the classification term remains.
template <typename Scalar>
LossTerms<Scalar> match_and_loss(const Var<Scalar>& class_logits, const Var<Scalar>& mask_logits, const BinaryMask& gt,
                                 const LossWeights& w) {
  if (static_cast<Eigen::Index>(gt.size()) != mask_logits.cols())
    throw std::invalid_argument("match_and_loss: ground truth does not match mask resolution");
  LossTerms<Scalar> out;
  const Eigen::Index nq = class_logits.rows();
  std::vector<Eigen::RowVectorXd> targets;
  if (gt.count() > 0) targets.push_back(mask_row<double>(gt).row(0));
  out.cost = matching_cost(class_logits.value().template cast<double>(), mask_logits.value().template cast<double>(),
                           targets, w);
  out.assignment = targets.empty() ? std::vector<std::pair<int, int>>{} : hungarian_match(out.cost);

  std::vector<int> cls_targets(static_cast<std::size_t>(nq), kNoObjectClass);
  for (const auto& [q, m] : out.assignment) cls_targets[static_cast<std::size_t>(q)] = kGlassClass;
  const std::vector<Scalar> class_weights{Scalar(1), static_cast<Scalar>(w.no_object)};
  out.cls = weighted_cross_entropy(class_logits, cls_targets, class_weights);
  out.total = scale(out.cls, static_cast<Scalar>(w.cls));
  if (!out.assignment.empty()) {
    const Matrix<Scalar> target = mask_row<Scalar>(gt);
    const int q = out.assignment.front().first;
    const Var<Scalar> logits = slice_rows(mask_logits, q, 1);
    out.bce = bce_with_logits(logits, target);
    out.dice = dice_loss(sigmoid(logits), target);
    out.total = add(out.total, add(scale(out.bce, static_cast<Scalar>(w.bce)), scale(out.dice, static_cast<Scalar>(w.dice))));
  }
  return out;
}

}  // namespace lgnet
