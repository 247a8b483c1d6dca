#pragma once

#include <span>
#include <vector>

#include "thz/nn/tensor.hpp"

namespace thz::nn {

/// 2D cross-correlation with square kernels and zero padding.
/// `w` is (out, in, k, k); `bias` is (1, out, 1, 1) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t pad);

/// Running statistics updated in training mode (momentum 0.1, unbiased variance).
template <typename T>
struct BatchNormState {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalisation; batch statistics when `training`, stored ones otherwise.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const BatchNormState<T>& state,
                  bool training);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
/// x (N,C,H,W) times per-channel weights (N,C,1,1).
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& w);
/// Spatial mean: (N,C,H,W) -> (N,C,1,1).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
/// 2x2 mean pooling, stride 2; H and W must be even.
template <typename T>
Var<T> avg_pool2(const Var<T>& x);
/// Bilinear x2 upsampling with half-pixel centres and edge clamping.
template <typename T>
Var<T> upsample_bilinear2(const Var<T>& x);
template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);
template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t start, std::size_t count);

/// Per sample, with V the (HW x K) matrix of `basis` channels and X the
/// (HW x C) matrix of `x`: returns V (V^T V + eps I)^{-1} V^T X reshaped back,
/// eps = 1e-6 trace(V^T V) / K. A zero basis spans nothing and maps to zero.
template <typename T>
Var<T> orth_project(const Var<T>& basis, const Var<T>& x);

/// Per sample: O = beta S, beta = row-softmax(V V^T), with V from `basis` and
/// S from `values` as above. beta is never stored; it is recomputed in blocks.
template <typename T>
Var<T> attention_apply(const Var<T>& basis, const Var<T>& values);

/// Mean squared error over all elements; returns a (1,1,1,1) scalar.
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target);

/// Dense attention matrix of one (N x K) row-major basis, N x N row-major.
template <typename T>
std::vector<T> attention_matrix(std::span<const T> v_rowmajor, std::size_t n, std::size_t k);

}  // namespace thz::nn
