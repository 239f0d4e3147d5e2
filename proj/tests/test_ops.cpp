#include "grad_check.hpp"

#include "lgnet/layers.hpp"
#include "lgnet/ops.hpp"

#include <gtest/gtest.h>

using namespace lgnet;
using lgnet::testing::check_input_gradients;
using V = Var<double>;
using M = Matrix<double>;

namespace {

M rand_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
  CounterRng rng(seed, 0);
  return init::normal<double>(r, c, sd, rng);
}

// Values bounded away from zero so that ReLU kinks are not crossed.
M away_from_zero(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  M m = rand_mat(r, c, seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = m(i) >= 0 ? m(i) + 0.1 : m(i) - 0.1;
  return m;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autograd, BackwardAccumulatesThroughSharedSubgraph) {
  M a = M::Constant(1, 1, 3.0);
  V x = V::leaf(a, true);
  V y = mul(x, x);          // x^2
  V z = add(y, scale(x, 2.0));  // x^2 + 2x
  backward(z);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 8.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  M a = M::Ones(2, 2);
  V x = V::leaf(a, true);
  NoGradGuard guard;
  V y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, LeafAliasesExternalStorage) {
  M a = M::Ones(2, 2);
  V x = V::leaf(a, false);
  EXPECT_EQ(x.value().data(), a.data());
}

TEST(OpsGradient, ElementwiseAndLinear) {
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 1), rand_mat(4, 5, 2)},
                                  [](const std::vector<V>& v) { return matmul(v[0], v[1]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 3), rand_mat(5, 4, 4)},
                                  [](const std::vector<V>& v) { return matmul_nt(v[0], v[1]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 5), rand_mat(3, 4, 6)},
                                  [](const std::vector<V>& v) { return sub(mul(v[0], v[1]), transpose(transpose(v[0]))); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 7), rand_mat(3, 1, 8), rand_mat(1, 4, 9)},
                                  [](const std::vector<V>& v) { return add_row_bias(add_col_bias(v[0], v[1]), v[2]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 10), rand_mat(3, 1, 11)},
                                  [](const std::vector<V>& v) { return scale_rows(v[0], v[1]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 4, 12)},
                                  [](const std::vector<V>& v) { return add(sum(mean_cols(v[0])), scale(mean(v[0]), 2.0)); })
                .max_rel_error,
            kTol);
}

TEST(OpsGradient, Activations) {
  EXPECT_LT(check_input_gradients({away_from_zero(3, 5, 13)}, [](const std::vector<V>& v) { return relu(v[0]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 5, 14)}, [](const std::vector<V>& v) { return sigmoid(v[0]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 5, 15)}, [](const std::vector<V>& v) { return gelu(v[0]); })
                .max_rel_error,
            kTol);
  EXPECT_LT(check_input_gradients({rand_mat(3, 5, 16)}, [](const std::vector<V>& v) { return softmax_rows(v[0]); })
                .max_rel_error,
            kTol);
}

TEST(OpsGradient, Normalization) {
  EXPECT_LT(check_input_gradients({rand_mat(4, 6, 17), rand_mat(1, 6, 18), rand_mat(1, 6, 19)},
                                  [](const std::vector<V>& v) { return layer_norm_rows(v[0], v[1], v[2]); })
                .max_rel_error,
            1e-5);
  EXPECT_LT(check_input_gradients({rand_mat(6, 9, 20), rand_mat(6, 1, 21), rand_mat(6, 1, 22)},
                                  [](const std::vector<V>& v) { return group_norm(v[0], 3, v[1], v[2]); })
                .max_rel_error,
            1e-5);
}

TEST(OpsGradient, Convolution) {
  struct Case {
    int k, s, p;
  };
  for (const Case c : {Case{3, 1, 1}, Case{3, 2, 1}, Case{2, 2, 0}, Case{1, 1, 0}}) {
    const ConvGeometry geo{5, 6, c.k, c.s, c.p};
    const auto r = check_input_gradients({rand_mat(3, 30, 23), rand_mat(4, 3 * c.k * c.k, 24), rand_mat(4, 1, 25)},
                                         [geo](const std::vector<V>& v) { return conv2d(v[0], geo, v[1], v[2]); });
    EXPECT_LT(r.max_rel_error, kTol) << "kernel " << c.k << " stride " << c.s << ": " << r.worst;
  }
}

TEST(OpsGradient, ResizeAndReshape) {
  for (auto [oh, ow] : {std::pair{6, 8}, std::pair{12, 16}, std::pair{2, 3}}) {
    const int h = oh;
    const int w = ow;
    const auto r = check_input_gradients({rand_mat(2, 12, 26)},
                                         [h, w](const std::vector<V>& v) { return resize_bilinear(v[0], 3, 4, h, w); });
    EXPECT_LT(r.max_rel_error, kTol) << h << "x" << w;
  }
  EXPECT_LT(check_input_gradients({rand_mat(2, 5, 27), rand_mat(3, 5, 28)},
                                  [](const std::vector<V>& v) {
                                    const V c = concat_rows(v[0], v[1]);
                                    const V wide = concat_cols(std::vector<V>{slice_cols(c, 2, 2), c});
                                    return slice_rows(wide, 1, 3);
                                  })
                .max_rel_error,
            kTol);
}

TEST(Ops, ConvolutionMatchesDirectLoop) {
  const ConvGeometry geo{5, 7, 3, 2, 1};
  const M x = rand_mat(2, 35, 30);
  const M w = rand_mat(3, 18, 31);
  const M bias = rand_mat(3, 1, 32);
  const M out = conv2d(V(x), geo, V(w), V(bias)).value();
  ASSERT_EQ(out.cols(), geo.out_h() * geo.out_w());
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < geo.out_h(); ++oy)
      for (int ox = 0; ox < geo.out_w(); ++ox) {
        double acc = bias(co, 0);
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx)
            for (int ci = 0; ci < 2; ++ci) {
              const int iy = oy * 2 - 1 + ky;
              const int ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
              acc += w(co, (ky * 3 + kx) * 2 + ci) * x(ci, iy * 7 + ix);
            }
        EXPECT_NEAR(out(co, oy * geo.out_w() + ox), acc, 1e-12);
      }
}

TEST(Ops, BilinearResizeOfConstantIsConstant) {
  const M x = M::Constant(2, 12, 1.5);
  const M y = resize_bilinear(V(x), 3, 4, 12, 16).value();
  EXPECT_TRUE((y.array() == 1.5).all());
}

TEST(Ops, SoftmaxRowsSumToOne) {
  const M p = softmax_rows(V(rand_mat(4, 7, 33, 10.0))).value();
  for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
}

TEST(Ops, ShapeErrorsThrow) {
  EXPECT_THROW(matmul(V(M::Ones(2, 3)), V(M::Ones(2, 3))), std::invalid_argument);
  EXPECT_THROW(concat_rows(V(M::Ones(2, 3)), V(M::Ones(2, 4))), std::invalid_argument);
}

TEST(Layers, AttentionGradient) {
  ParameterStore<double> store;
  CounterRng rng(40, 0);
  MultiHeadAttention<double> attn(store, "attn", 8, 2, rng);
  const M q = rand_mat(3, 8, 41);
  const M kv = rand_mat(5, 8, 42);
  const M w = rand_mat(3, 8, 43);
  auto loss = [&](Binding<double>& b) { return sum(mul(attn(V(q), V(kv), V(kv), b), V(w))); };
  const auto r = lgnet::testing::check_parameter_gradients(store, loss, 40, 44, 1e-5, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Layers, NormGroupsKeepTwoChannelsPerGroup) {
  EXPECT_EQ(norm_groups(32), 8);
  EXPECT_EQ(norm_groups(8), 4);
  EXPECT_EQ(norm_groups(3), 1);
  EXPECT_EQ(norm_groups(48), 8);
}
