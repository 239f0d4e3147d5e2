#pragma once

#include "lgnet/feature_map.hpp"
#include "lgnet/ops.hpp"
#include "lgnet/parameter.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace lgnet {

/// Group count for GroupNorm: the largest divisor of `channels` that is at
/// most 8 and leaves at least two channels per group.
inline int norm_groups(int channels) {
  for (int g = 8; g > 1; --g) {
    if (channels % g == 0 && channels / g >= 2) return g;
  }
  return 1;
}

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<Scalar>& store, const std::string& name, int c_in, int c_out, int kernel, int stride,
         int pad, CounterRng& rng, bool frozen = false)
      : kernel_(kernel), stride_(stride), pad_(pad) {
    weight_ = store.add(name + ".weight", init::he<Scalar>(c_out, static_cast<Eigen::Index>(c_in) * kernel * kernel, rng),
                        frozen);
    bias_ = store.add(name + ".bias", Matrix<Scalar>::Zero(c_out, 1), frozen);
  }

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const {
    const ConvGeometry geo{x.height, x.width, kernel_, stride_, pad_};
    return {conv2d(x.data, geo, b(weight_), b(bias_)), geo.out_h(), geo.out_w(), x.scale * stride_};
  }

  int out_channels() const { return static_cast<int>(weight_->value.rows()); }
  Parameter<Scalar>* weight() const { return weight_; }
  Parameter<Scalar>* bias() const { return bias_; }

 private:
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

/// Token-wise affine map y = x W + b with W stored D_in x D_out.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<Scalar>& store, const std::string& name, int d_in, int d_out, CounterRng& rng,
         bool frozen = false) {
    weight_ = store.add(name + ".weight", init::xavier<Scalar>(d_in, d_out, rng), frozen);
    bias_ = store.add(name + ".bias", Matrix<Scalar>::Zero(1, d_out), frozen);
  }

  Var<Scalar> operator()(const Var<Scalar>& x, Binding<Scalar>& b) const {
    return add_row_bias(matmul(x, b(weight_)), b(bias_));
  }

  Parameter<Scalar>* weight() const { return weight_; }
  Parameter<Scalar>* bias() const { return bias_; }

 private:
  Parameter<Scalar>* weight_ = nullptr;
  Parameter<Scalar>* bias_ = nullptr;
};

template <typename Scalar>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParameterStore<Scalar>& store, const std::string& name, int channels, bool frozen = false)
      : groups_(norm_groups(channels)) {
    gamma_ = store.add(name + ".gamma", Matrix<Scalar>::Ones(channels, 1), frozen);
    beta_ = store.add(name + ".beta", Matrix<Scalar>::Zero(channels, 1), frozen);
  }

  FeatureMap<Scalar> operator()(const FeatureMap<Scalar>& x, Binding<Scalar>& b) const {
    return {group_norm(x.data, groups_, b(gamma_), b(beta_)), x.height, x.width, x.scale};
  }

 private:
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
  int groups_ = 1;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<Scalar>& store, const std::string& name, int dim, bool frozen = false) {
    gamma_ = store.add(name + ".gamma", Matrix<Scalar>::Ones(1, dim), frozen);
    beta_ = store.add(name + ".beta", Matrix<Scalar>::Zero(1, dim), frozen);
  }

  Var<Scalar> operator()(const Var<Scalar>& x, Binding<Scalar>& b) const {
    return layer_norm_rows(x, b(gamma_), b(beta_));
  }

 private:
  Parameter<Scalar>* gamma_ = nullptr;
  Parameter<Scalar>* beta_ = nullptr;
};

template <typename Scalar>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<Scalar>& store, const std::string& name, int dim, int heads, CounterRng& rng,
                     bool frozen = false)
      : heads_(heads), head_dim_(dim / heads) {
    if (heads <= 0 || dim % heads != 0) throw std::invalid_argument(name + ": dim must be divisible by heads");
    q_ = Linear<Scalar>(store, name + ".q", dim, dim, rng, frozen);
    k_ = Linear<Scalar>(store, name + ".k", dim, dim, rng, frozen);
    v_ = Linear<Scalar>(store, name + ".v", dim, dim, rng, frozen);
    o_ = Linear<Scalar>(store, name + ".o", dim, dim, rng, frozen);
  }

  /// query: Nq x D, key/value: Nk x D.
  Var<Scalar> operator()(const Var<Scalar>& query, const Var<Scalar>& key, const Var<Scalar>& value,
                         Binding<Scalar>& b) const {
    const Var<Scalar> q = q_(query, b);
    const Var<Scalar> k = k_(key, b);
    const Var<Scalar> v = v_(value, b);
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim_));
    std::vector<Var<Scalar>> outs;
    outs.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      const Var<Scalar> qh = heads_ == 1 ? q : slice_cols(q, h * head_dim_, head_dim_);
      const Var<Scalar> kh = heads_ == 1 ? k : slice_cols(k, h * head_dim_, head_dim_);
      const Var<Scalar> vh = heads_ == 1 ? v : slice_cols(v, h * head_dim_, head_dim_);
      const Var<Scalar> attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
      outs.push_back(matmul(attn, vh));
    }
    return o_(heads_ == 1 ? outs.front() : concat_cols(outs), b);
  }

 private:
  int heads_ = 1;
  int head_dim_ = 0;
  Linear<Scalar> q_, k_, v_, o_;
};

/// Fixed 2-D sinusoidal encoding, (h*w) x dim; the first half of the
/// channels encodes y, the second half x.
template <typename Scalar>
Matrix<Scalar> sine_position_encoding(int h, int w, int dim) {
  Matrix<Scalar> pe(static_cast<Eigen::Index>(h) * w, dim);
  const int half = dim / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index row = static_cast<Eigen::Index>(y) * w + x;
      for (int c = 0; c < dim; ++c) {
        const bool is_y = c < half;
        const int local = is_y ? c : c - half;
        const int span = is_y ? half : dim - half;
        const double pos = is_y ? (y + 0.5) / h : (x + 0.5) / w;
        const double freq = std::pow(10000.0, -2.0 * (local / 2) / std::max(span, 1));
        const double angle = 6.283185307179586 * pos * freq * 8.0;
        pe(row, c) = static_cast<Scalar>(local % 2 == 0 ? std::sin(angle) : std::cos(angle));
      }
    }
  }
  return pe;
}

}  // namespace lgnet
