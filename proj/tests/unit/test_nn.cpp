#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "nn_testing.hpp"
#include "thz/nn/ops.hpp"

namespace {

using namespace thz;
using namespace thz::nn;
using thz::testing::all_probes;
using thz::testing::check_gradients;
using thz::testing::random_tensor;

using Mat = std::vector<std::vector<double>>;

// Row-major (HW x C) view of one sample of an NCHW tensor.
Mat as_matrix(const Tensor<double>& t, std::size_t n = 0) {
  const std::size_t hw = t.shape.plane();
  Mat m(hw, std::vector<double>(t.shape.c));
  for (std::size_t c = 0; c < t.shape.c; ++c)
    for (std::size_t i = 0; i < hw; ++i) m[i][c] = t.channel(n, c)[i];
  return m;
}

// Gauss-Jordan with partial pivoting; solves A Z = B in place.
Mat solve(Mat a, Mat b) {
  const std::size_t k = a.size(), c = b[0].size();
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < k; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t q = 0; q < k; ++q) a[r][q] -= f * a[col][q];
      for (std::size_t q = 0; q < c; ++q) b[r][q] -= f * b[col][q];
    }
  }
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t q = 0; q < c; ++q) b[r][q] /= a[r][r];
  return b;
}

// V (V^T V + eps I)^{-1} V^T X with eps = 1e-6 tr(V^T V) / K.
Mat dense_projection(const Mat& v, const Mat& x) {
  const std::size_t n = v.size(), k = v[0].size(), c = x[0].size();
  Mat a(k, std::vector<double>(k, 0.0)), b(k, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) a[p][q] += v[i][p] * v[i][q];
      for (std::size_t q = 0; q < c; ++q) b[p][q] += v[i][p] * x[i][q];
    }
  }
  double tr = 0.0;
  for (std::size_t p = 0; p < k; ++p) tr += a[p][p];
  for (std::size_t p = 0; p < k; ++p) a[p][p] += 1e-6 * tr / static_cast<double>(k);
  const Mat z = solve(a, b);
  Mat out(n, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < c; ++q)
      for (std::size_t p = 0; p < k; ++p) out[i][q] += v[i][p] * z[p][q];
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Var<double> project(const Tensor<double>& v, const Tensor<double>& x) {
  return orth_project(constant(v), constant(x));
}

TEST(OrthProject, IdempotentAndFixesBasis) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = random_tensor<double>({2, 16, 16, 16}, rng);
    const auto x = random_tensor<double>({2, 3, 16, 16}, rng);
    const auto px = project(v, x)->value;
    EXPECT_LT(max_abs_diff(project(v, px)->value, px), 1e-5);
    EXPECT_LT(max_abs_diff(project(v, v)->value, v), 1e-5);
  }
}

TEST(OrthProject, MatchesDenseNormalEquations) {
  std::mt19937_64 rng(2);
  const auto v = random_tensor<double>({1, 4, 5, 6}, rng);
  const auto x = random_tensor<double>({1, 3, 5, 6}, rng);
  const auto got = as_matrix(project(v, x)->value);
  const auto want = dense_projection(as_matrix(v), as_matrix(x));
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(got[i][c], want[i][c], 1e-10);
}

TEST(OrthProject, FullRankIsIdentity) {
  std::mt19937_64 rng(3);
  // N = K = 4; a well-conditioned V keeps the regularisation bias below 1e-5.
  auto v = random_tensor<double>({1, 4, 2, 2}, rng, -0.3, 0.3);
  for (std::size_t k = 0; k < 4; ++k) v.channel(0, k)[k] += 1.0;
  const auto x = random_tensor<double>({1, 2, 2, 2}, rng);
  EXPECT_LT(max_abs_diff(project(v, x)->value, x), 1e-5);
}

TEST(OrthProject, OrthonormalBasisIsPlainProjection) {
  std::mt19937_64 rng(4);
  auto v = random_tensor<double>({1, 3, 4, 4}, rng);
  // Gram-Schmidt on the columns.
  const std::size_t n = 16;
  for (std::size_t k = 0; k < 3; ++k) {
    double* col = v.channel(0, k);
    for (std::size_t j = 0; j < k; ++j) {
      const double* prev = v.channel(0, j);
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += col[i] * prev[i];
      for (std::size_t i = 0; i < n; ++i) col[i] -= dot * prev[i];
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += col[i] * col[i];
    for (std::size_t i = 0; i < n; ++i) col[i] /= std::sqrt(norm);
  }
  const auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  const auto got = project(v, x)->value;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double want = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        double vtx = 0.0;
        for (std::size_t q = 0; q < n; ++q) vtx += v.channel(0, k)[q] * x.channel(0, c)[q];
        want += v.channel(0, k)[i] * vtx;
      }
      EXPECT_NEAR(got.channel(0, c)[i], want, 1e-5);
    }
  }
}

TEST(OrthProject, ZeroBasisMapsToZero) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  const auto out = project(Tensor<double>({1, 3, 4, 4}), x)->value;
  for (double o : out.data) EXPECT_EQ(o, 0.0);
}

TEST(OrthProject, FloatAgreesWithDouble) {
  std::mt19937_64 rng(6);
  const auto v = random_tensor<double>({1, 16, 16, 16}, rng);
  const auto x = random_tensor<double>({1, 3, 16, 16}, rng);
  Tensor<float> vf(v.shape), xf(x.shape);
  std::copy(v.data.begin(), v.data.end(), vf.data.begin());
  std::copy(x.data.begin(), x.data.end(), xf.data.begin());
  const auto d = project(v, x)->value;
  const auto f = orth_project(constant(vf), constant(xf))->value;
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_NEAR(f.data[i], d.data[i], 1e-4);
}

TEST(Attention, RowsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + trial * 3, k = 1 + trial % 5;
    const auto v = random_tensor<double>({1, 1, n, k}, rng, -3.0, 3.0);
    const auto beta = attention_matrix<double>(v.data, n, k);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += beta[j * n + i];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, ZeroBasisIsUniform) {
  const std::size_t n = 9;
  const std::vector<double> v(n * 2, 0.0);
  for (double b : attention_matrix<double>(v, n, 2)) EXPECT_DOUBLE_EQ(b, 1.0 / n);
}

TEST(Attention, MatchesHandRolledSoftmax) {
  const std::size_t n = 4, k = 2;
  const std::vector<double> v{0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.0, -2.0};
  const auto beta = attention_matrix<double>(v, n, k);
  for (std::size_t j = 0; j < n; ++j) {
    double z = 0.0;
    std::array<double, 4> e{};
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp(v[j * k] * v[i * k] + v[j * k + 1] * v[i * k + 1]);
      z += e[i];
    }
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(beta[j * n + i], e[i] / z, 1e-7);
  }
}

TEST(Attention, ApplyMatchesDenseProduct) {
  std::mt19937_64 rng(8);
  for (std::size_t hw : {3, 8, 13}) {
    const auto v = random_tensor<double>({2, 3, hw, hw}, rng);
    const auto s = random_tensor<double>({2, 6, hw, hw}, rng);
    const auto o = attention_apply(constant(v), constant(s))->value;
    const std::size_t n = hw * hw;
    for (std::size_t b = 0; b < 2; ++b) {
      const auto vm = as_matrix(v, b);
      std::vector<double> flat;
      for (const auto& row : vm) flat.insert(flat.end(), row.begin(), row.end());
      const auto beta = attention_matrix<double>(flat, n, 3);
      for (std::size_t c = 0; c < 6; ++c) {
        for (std::size_t j = 0; j < n; ++j) {
          double want = 0.0;
          for (std::size_t i = 0; i < n; ++i) want += beta[j * n + i] * s.channel(b, c)[i];
          EXPECT_NEAR(o.channel(b, c)[j], want, 1e-12);
        }
      }
    }
  }
}

TEST(Ops, ConvMatchesDirectSum) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<double>({1, 2, 5, 6}, rng);
  const auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  const auto b = random_tensor<double>({1, 3, 1, 1}, rng);
  for (std::size_t stride : {1, 2}) {
    const auto y = conv2d(constant(x), constant(w), constant(b), stride, 1)->value;
    ASSERT_EQ(y.shape, (Shape4{1, 3, (5 + 2 - 3) / stride + 1, (6 + 2 - 3) / stride + 1}));
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t r = 0; r < y.shape.h; ++r) {
        for (std::size_t c = 0; c < y.shape.w; ++c) {
          double s = b.data[o];
          for (std::size_t i = 0; i < 2; ++i)
            for (int dr = 0; dr < 3; ++dr)
              for (int dc = 0; dc < 3; ++dc) {
                const long rr = static_cast<long>(r * stride) + dr - 1, cc = static_cast<long>(c * stride) + dc - 1;
                if (rr < 0 || cc < 0 || rr >= 5 || cc >= 6) continue;
                s += w.at(o, i, dr, dc) * x.at(0, i, rr, cc);
              }
          EXPECT_NEAR(y.at(0, o, r, c), s, 1e-12);
        }
      }
    }
  }
}

TEST(Ops, ShapeErrors) {
  const auto a = constant(Tensor<double>({1, 2, 4, 4})), b = constant(Tensor<double>({1, 3, 4, 4}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mse_loss(a, b), ShapeError);
  EXPECT_THROW(conv2d(a, constant(Tensor<double>({1, 3, 3, 3})), Var<double>{}, 1, 1), ShapeError);
  EXPECT_THROW(avg_pool2(constant(Tensor<double>({1, 1, 3, 4}))), ShapeError);
  EXPECT_THROW(orth_project(constant(Tensor<double>({1, 2, 4, 4})), constant(Tensor<double>({1, 2, 4, 5}))),
               ShapeError);
}

TEST(Ops, GlobalPoolOfConstantIsExact) {
  Tensor<double> x({1, 2, 3, 5});
  std::fill(x.channel(0, 0), x.channel(0, 0) + 15, 0.3);
  std::fill(x.channel(0, 1), x.channel(0, 1) + 15, -1.7);
  const auto g = global_avg_pool(constant(x))->value;
  EXPECT_EQ(g.data[0], 0.3);
  EXPECT_EQ(g.data[1], -1.7);
}

TEST(Ops, NoGradGuardRecordsNothing) {
  const auto p = parameter(Tensor<double>({1, 1, 2, 2}, 1.0));
  NoGradGuard guard;
  const auto y = relu(p);
  EXPECT_TRUE(y->inputs.empty());
}

// Central differences against reverse mode for each differentiable op.
class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{10};
  Var<double> param(Shape4 s) { return parameter(random_tensor<double>(s, rng)); }
  Var<double> target(Shape4 s) { return constant(random_tensor<double>(s, rng)); }
};

TEST_F(OpGradients, Conv2d) {
  const auto x = param({2, 2, 6, 6}), w = param({3, 2, 3, 3}), b = param({1, 3, 1, 1});
  for (std::size_t stride : {1, 2}) {
    const auto t = target({2, 3, 6 / stride, 6 / stride});
    const auto r = check_gradients([&] { return mse_loss(conv2d(x, w, b, stride, 1), t); }, all_probes({x, w, b}),
                                   1e-6);
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

TEST_F(OpGradients, BatchNormTraining) {
  const auto x = param({3, 2, 4, 4}), g = param({1, 2, 1, 1}), b = param({1, 2, 1, 1});
  Tensor<double> rm({1, 2, 1, 1}), rv({1, 2, 1, 1}, 1.0);
  const BatchNormState<double> st{&rm, &rv};
  const auto t = target({3, 2, 4, 4});
  const auto r = check_gradients([&] { return mse_loss(batch_norm(x, g, b, st, true), t); }, all_probes({x, g, b}),
                                 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST_F(OpGradients, PoolingResamplingAndPointwise) {
  const auto x = param({2, 3, 4, 6}), w = param({2, 3, 1, 1});
  const auto t_pool = target({2, 3, 2, 3}), t_up = target({2, 3, 8, 12}), t_same = target({2, 3, 4, 6}),
             t_gap = target({2, 3, 1, 1});
  auto probes = all_probes({x, w});
  EXPECT_LT(check_gradients([&] { return mse_loss(avg_pool2(x), t_pool); }, probes, 1e-6).max_rel_error, 1e-6);
  EXPECT_LT(check_gradients([&] { return mse_loss(upsample_bilinear2(x), t_up); }, probes, 1e-6).max_rel_error,
            1e-6);
  EXPECT_LT(check_gradients([&] { return mse_loss(sigmoid(x), t_same); }, probes, 1e-6).max_rel_error, 1e-6);
  EXPECT_LT(check_gradients([&] { return mse_loss(global_avg_pool(x), t_gap); }, probes, 1e-6).max_rel_error,
            1e-6);
  EXPECT_LT(check_gradients([&] { return mse_loss(channel_scale(x, w), t_same); }, probes, 1e-6).max_rel_error,
            1e-6);
}

TEST_F(OpGradients, ConcatSliceAdd) {
  const auto a = param({1, 2, 3, 3}), b = param({1, 3, 3, 3});
  const auto t = target({1, 3, 3, 3});
  const auto r = check_gradients(
      [&] {
        const std::array<Var<double>, 2> parts{a, b};
        const auto cat = concat_channels<double>(parts);
        return mse_loss(add(slice_channels(cat, 1, 3), b), t);
      },
      all_probes({a, b}), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST_F(OpGradients, OrthProject) {
  const auto v = param({2, 4, 4, 4}), x = param({2, 3, 4, 4});
  const auto t = target({2, 3, 4, 4});
  const auto r = check_gradients([&] { return mse_loss(orth_project(v, x), t); }, all_probes({v, x}), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST_F(OpGradients, AttentionApply) {
  const auto v = param({2, 4, 4, 4}), s = param({2, 6, 4, 4});
  const auto t = target({2, 6, 4, 4});
  const auto r = check_gradients([&] { return mse_loss(attention_apply(v, s), t); }, all_probes({v, s}), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Backward, AccumulatesThroughSharedInputs) {
  // y = x + x: dL/dx is twice the upstream gradient.
  auto x = parameter(Tensor<double>({1, 1, 1, 2}, 1.0));
  const auto t = constant(Tensor<double>({1, 1, 1, 2}, 0.0));
  const auto loss = mse_loss(add(x, x), t);  // mean((2x)^2) -> d/dx = 4x
  backward(loss);
  EXPECT_DOUBLE_EQ(x->grad[0], 4.0);
  EXPECT_DOUBLE_EQ(x->grad[1], 4.0);
}

}  // namespace
