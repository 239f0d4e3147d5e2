#pragma once

// Differentiable free functions over Var<Scalar>.
//
// Layout conventions: spatial activations are C x (H*W) with pixel index
// y*W + x; token sequences are N x D (one token per row).

#include "lgnet/autograd.hpp"
#include "lgnet/resample.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgnet {

namespace detail {
inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return Var<Scalar>::from_op(a.value() + b.value(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) a.add_grad(g);
    if (b.requires_grad()) b.add_grad(g);
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  return add(a, b);
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return Var<Scalar>::from_op(a.value() - b.value(), {a, b}, [a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) a.add_grad(g);
    if (b.requires_grad()) b.add_grad(-g);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return Var<Scalar>::from_op(a.value().cwiseProduct(b.value()), {a, b},
                              [a, b](const Matrix<Scalar>& g) {
                                if (a.requires_grad()) a.add_grad(g.cwiseProduct(b.value()));
                                if (b.requires_grad()) b.add_grad(g.cwiseProduct(a.value()));
                              });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return Var<Scalar>::from_op(a.value() * s, {a}, [a, s](const Matrix<Scalar>& g) { a.add_grad(g * s); });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix<Scalar> out;
  out.noalias() = a.value() * b.value();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) a.add_grad(g * b.value().transpose());
    if (b.requires_grad()) b.add_grad(a.value().transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix<Scalar> out;
  out.noalias() = a.value() * b.value().transpose();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Matrix<Scalar>& g) {
    if (a.requires_grad()) a.add_grad(g * b.value());
    if (b.requires_grad()) b.add_grad(g.transpose() * a.value());
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  return Var<Scalar>::from_op(a.value().transpose(), {a},
                              [a](const Matrix<Scalar>& g) { a.add_grad(g.transpose()); });
}

/// x + bias, bias a column (rows(x) x 1) broadcast over columns.
template <typename Scalar>
Var<Scalar> add_col_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  detail::require(bias.cols() == 1 && bias.rows() == x.rows(), "add_col_bias: bias shape");
  Matrix<Scalar> out = x.value().colwise() + bias.value().col(0);
  return Var<Scalar>::from_op(std::move(out), {x, bias}, [x, bias](const Matrix<Scalar>& g) {
    if (x.requires_grad()) x.add_grad(g);
    if (bias.requires_grad()) bias.add_grad(g.rowwise().sum());
  });
}

/// x + bias, bias a row (1 x cols(x)) broadcast over rows.
template <typename Scalar>
Var<Scalar> add_row_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  detail::require(bias.rows() == 1 && bias.cols() == x.cols(), "add_row_bias: bias shape");
  Matrix<Scalar> out = x.value().rowwise() + bias.value().row(0);
  return Var<Scalar>::from_op(std::move(out), {x, bias}, [x, bias](const Matrix<Scalar>& g) {
    if (x.requires_grad()) x.add_grad(g);
    if (bias.requires_grad()) bias.add_grad(g.colwise().sum());
  });
}

/// Each row of x multiplied by the matching entry of the column `gate`.
template <typename Scalar>
Var<Scalar> scale_rows(const Var<Scalar>& x, const Var<Scalar>& gate) {
  detail::require(gate.cols() == 1 && gate.rows() == x.rows(), "scale_rows: gate shape");
  Matrix<Scalar> out = x.value().array().colwise() * gate.value().col(0).array();
  return Var<Scalar>::from_op(std::move(out), {x, gate}, [x, gate](const Matrix<Scalar>& g) {
    if (x.requires_grad()) x.add_grad((g.array().colwise() * gate.value().col(0).array()).matrix());
    if (gate.requires_grad()) gate.add_grad(g.cwiseProduct(x.value()).rowwise().sum());
  });
}

/// Row means, as a column vector (global average pooling for C x HW maps).
template <typename Scalar>
Var<Scalar> mean_cols(const Var<Scalar>& x) {
  const auto n = static_cast<Scalar>(x.cols());
  return Var<Scalar>::from_op(x.value().rowwise().mean(), {x}, [x, n](const Matrix<Scalar>& g) {
    x.add_grad(g.col(0).replicate(1, x.cols()) / n);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Matrix<Scalar>& g) {
    x.add_grad(Matrix<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Matrix<Scalar>& g) {
    x.add_grad((x.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Matrix<Scalar> out = (Scalar(1) / (Scalar(1) + (-x.value().array()).exp())).matrix();
  Matrix<Scalar> y = out;
  return Var<Scalar>::from_op(std::move(out), {x}, [x, y = std::move(y)](const Matrix<Scalar>& g) {
    x.add_grad((g.array() * y.array() * (Scalar(1) - y.array())).matrix());
  });
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = static_cast<Scalar>(0.044715);
  auto xa = x.value().array();
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> t = (c * (xa + k * xa.cube())).tanh();
  Matrix<Scalar> out = (Scalar(0.5) * xa * (Scalar(1) + t)).matrix();
  return Var<Scalar>::from_op(std::move(out), {x}, [x, t = std::move(t), c, k](const Matrix<Scalar>& g) {
    auto xv = x.value().array();
    auto d = Scalar(0.5) * (Scalar(1) + t) +
             Scalar(0.5) * xv * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * xv.square());
    x.add_grad((g.array() * d).matrix());
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  Matrix<Scalar> out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Scalar m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  Matrix<Scalar> y = out;
  return Var<Scalar>::from_op(std::move(out), {x}, [x, y = std::move(y)](const Matrix<Scalar>& g) {
    const ColVector<Scalar> dot = g.cwiseProduct(y).rowwise().sum();
    x.add_grad((y.array() * (g.colwise() - dot).array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Normalizes each row over its columns, then applies per-column gamma/beta
/// (both 1 x D).
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                            Scalar eps = Scalar(1e-5)) {
  detail::require(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
                  "layer_norm_rows: affine shape");
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Matrix<Scalar> xhat(n, d);
  ColVector<Scalar> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mu = x.value().row(r).mean();
    const Scalar var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu).matrix() * inv_std(r);
  }
  Matrix<Scalar> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return Var<Scalar>::from_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix<Scalar>& g) {
        if (gamma.requires_grad()) gamma.add_grad(g.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad()) beta.add_grad(g.colwise().sum());
        if (!x.requires_grad()) return;
        Matrix<Scalar> dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
        const ColVector<Scalar> m1 = dxhat.rowwise().mean();
        const ColVector<Scalar> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
        Matrix<Scalar> dx = dxhat;
        dx.colwise() -= m1;
        dx -= (xhat.array().colwise() * m2.array()).matrix();
        dx = (dx.array().colwise() * inv_std.array()).matrix();
        x.add_grad(dx);
      });
}

/// Group normalization of a C x P map; gamma and beta are C x 1.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, int groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
  const Eigen::Index c = x.rows();
  const Eigen::Index p = x.cols();
  detail::require(groups > 0 && c % groups == 0, "group_norm: channels not divisible by groups");
  detail::require(gamma.rows() == c && beta.rows() == c, "group_norm: affine shape");
  const Eigen::Index per = c / groups;
  Matrix<Scalar> xhat(c, p);
  ColVector<Scalar> inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    auto block = x.value().middleRows(gi * per, per);
    const Scalar mu = block.mean();
    const Scalar var = (block.array() - mu).square().mean();
    inv_std(gi) = Scalar(1) / std::sqrt(var + eps);
    xhat.middleRows(gi * per, per) = ((block.array() - mu) * inv_std(gi)).matrix();
  }
  Matrix<Scalar> out = (xhat.array().colwise() * gamma.value().col(0).array()).matrix();
  out.colwise() += beta.value().col(0);
  return Var<Scalar>::from_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, groups, per, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          const Matrix<Scalar>& g) {
        if (gamma.requires_grad()) gamma.add_grad(g.cwiseProduct(xhat).rowwise().sum());
        if (beta.requires_grad()) beta.add_grad(g.rowwise().sum());
        if (!x.requires_grad()) return;
        Matrix<Scalar> dxhat = (g.array().colwise() * gamma.value().col(0).array()).matrix();
        Matrix<Scalar> dx(dxhat.rows(), dxhat.cols());
        for (int gi = 0; gi < groups; ++gi) {
          auto dh = dxhat.middleRows(gi * per, per).array();
          auto xh = xhat.middleRows(gi * per, per).array();
          const Scalar m1 = dh.mean();
          const Scalar m2 = (dh * xh).mean();
          dx.middleRows(gi * per, per) = ((dh - m1 - xh * m2) * inv_std(gi)).matrix();
        }
        x.add_grad(dx);
      });
}

// ---------------------------------------------------------------------------
// Spatial

struct ConvGeometry {
  int in_h = 0;
  int in_w = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

namespace detail {

/// Column o holds the receptive field of output pixel o, ordered
/// (ky, kx, channel) with channel fastest.
template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& x, const ConvGeometry& geo) {
  const Eigen::Index c = x.rows();
  const int oh = geo.out_h();
  const int ow = geo.out_w();
  const int k = geo.kernel;
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(c * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index o = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.in_h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * geo.stride - geo.pad + kx;
          if (ix < 0 || ix >= geo.in_w) continue;
          cols.col(o).segment((ky * k + kx) * c, c) = x.col(static_cast<Eigen::Index>(iy) * geo.in_w + ix);
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Matrix<Scalar> col2im(const Matrix<Scalar>& cols, Eigen::Index c, const ConvGeometry& geo) {
  const int oh = geo.out_h();
  const int ow = geo.out_w();
  const int k = geo.kernel;
  Matrix<Scalar> x = Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(geo.in_h) * geo.in_w);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index o = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * geo.stride - geo.pad + ky;
        if (iy < 0 || iy >= geo.in_h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * geo.stride - geo.pad + kx;
          if (ix < 0 || ix >= geo.in_w) continue;
          x.col(static_cast<Eigen::Index>(iy) * geo.in_w + ix) += cols.col(o).segment((ky * k + kx) * c, c);
        }
      }
    }
  }
  return x;
}

}  // namespace detail

/// 2-D convolution. `weight` is C_out x (k*k*C_in) in (ky, kx, c_in) order;
/// `bias` is C_out x 1.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const ConvGeometry& geo, const Var<Scalar>& weight,
                   const Var<Scalar>& bias) {
  const Eigen::Index c_in = x.rows();
  detail::require(x.cols() == static_cast<Eigen::Index>(geo.in_h) * geo.in_w, "conv2d: input size mismatch");
  detail::require(weight.cols() == c_in * geo.kernel * geo.kernel, "conv2d: weight shape mismatch");
  detail::require(bias.rows() == weight.rows() && bias.cols() == 1, "conv2d: bias shape mismatch");
  detail::require(geo.out_h() > 0 && geo.out_w() > 0, "conv2d: empty output");
  if (geo.pointwise()) {
    Matrix<Scalar> out;
    out.noalias() = weight.value() * x.value();
    out.colwise() += bias.value().col(0);
    return Var<Scalar>::from_op(std::move(out), {x, weight, bias}, [x, weight, bias](const Matrix<Scalar>& g) {
      if (weight.requires_grad()) weight.add_grad(g * x.value().transpose());
      if (bias.requires_grad()) bias.add_grad(g.rowwise().sum());
      if (x.requires_grad()) x.add_grad(weight.value().transpose() * g);
    });
  }
  Matrix<Scalar> cols = detail::im2col(x.value(), geo);
  Matrix<Scalar> out;
  out.noalias() = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  const bool keep_cols = grad_enabled() && weight.requires_grad();
  if (!keep_cols) cols.resize(0, 0);
  return Var<Scalar>::from_op(std::move(out), {x, weight, bias},
                              [x, weight, bias, geo, c_in, cols = std::move(cols)](const Matrix<Scalar>& g) {
                                if (weight.requires_grad()) weight.add_grad(g * cols.transpose());
                                if (bias.requires_grad()) bias.add_grad(g.rowwise().sum());
                                if (x.requires_grad()) {
                                  Matrix<Scalar> dcols;
                                  dcols.noalias() = weight.value().transpose() * g;
                                  x.add_grad(detail::col2im(dcols, c_in, geo));
                                }
                              });
}

/// Bilinear resize of a C x (in_h*in_w) map (half-pixel centres).
template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, int in_h, int in_w, int out_h, int out_w) {
  detail::require(x.cols() == static_cast<Eigen::Index>(in_h) * in_w, "resize_bilinear: input size mismatch");
  if (in_h == out_h && in_w == out_w) return x;
  const auto ty = linear_taps(in_h, out_h);
  const auto tx = linear_taps(in_w, out_w);
  const Eigen::Index c = x.rows();
  Matrix<Scalar> out(c, static_cast<Eigen::Index>(out_h) * out_w);
  const Matrix<Scalar>& in = x.value();
  for (int oy = 0; oy < out_h; ++oy) {
    const auto& a = ty[static_cast<std::size_t>(oy)];
    const Scalar wy1 = static_cast<Scalar>(a.frac);
    const Scalar wy0 = Scalar(1) - wy1;
    for (int ox = 0; ox < out_w; ++ox) {
      const auto& b = tx[static_cast<std::size_t>(ox)];
      const Scalar wx1 = static_cast<Scalar>(b.frac);
      const Scalar wx0 = Scalar(1) - wx1;
      out.col(static_cast<Eigen::Index>(oy) * out_w + ox) =
          wy0 * (wx0 * in.col(a.lo * in_w + b.lo) + wx1 * in.col(a.lo * in_w + b.hi)) +
          wy1 * (wx0 * in.col(a.hi * in_w + b.lo) + wx1 * in.col(a.hi * in_w + b.hi));
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, ty, tx, c, in_h, in_w, out_h, out_w](const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(c, static_cast<Eigen::Index>(in_h) * in_w);
    for (int oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      const Scalar wy1 = static_cast<Scalar>(a.frac);
      const Scalar wy0 = Scalar(1) - wy1;
      for (int ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const Scalar wx1 = static_cast<Scalar>(b.frac);
        const Scalar wx0 = Scalar(1) - wx1;
        const auto go = g.col(static_cast<Eigen::Index>(oy) * out_w + ox);
        dx.col(a.lo * in_w + b.lo) += (wy0 * wx0) * go;
        dx.col(a.lo * in_w + b.hi) += (wy0 * wx1) * go;
        dx.col(a.hi * in_w + b.lo) += (wy1 * wx0) * go;
        dx.col(a.hi * in_w + b.hi) += (wy1 * wx1) * go;
      }
    }
    x.add_grad(dx);
  });
}

// ---------------------------------------------------------------------------
// Slicing and stacking

template <typename Scalar>
Var<Scalar> concat_rows(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require(a.cols() == b.cols(), "concat_rows: column mismatch");
  Matrix<Scalar> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const Eigen::Index ra = a.rows();
  const Eigen::Index rb = b.rows();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b, ra, rb](const Matrix<Scalar>& g) {
    if (a.requires_grad()) a.add_grad(g.topRows(ra));
    if (b.requires_grad()) b.add_grad(g.bottomRows(rb));
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows: out of range");
  return Var<Scalar>::from_op(x.value().middleRows(start, count), {x}, [x, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.rows(), x.cols());
    dx.middleRows(start, count) = g;
    x.add_grad(dx);
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Eigen::Index start, Eigen::Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols: out of range");
  return Var<Scalar>::from_op(x.value().middleCols(start, count), {x}, [x, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.rows(), x.cols());
    dx.middleCols(start, count) = g;
    x.add_grad(dx);
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty input");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    detail::require(p.rows() == parts.front().rows(), "concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix<Scalar> out(parts.front().rows(), total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Var<Scalar>::from_op(std::move(out), parts, [parts](const Matrix<Scalar>& g) {
    Eigen::Index offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.add_grad(g.middleCols(offset, p.cols()));
      offset += p.cols();
    }
  });
}

}  // namespace lgnet
