#pragma once

#include <functional>
#include <vector>

#include "s3d/tensor.hpp"

namespace s3d {

// The op set covers exactly what the training pipeline composes: conv/pool
// feature extraction, the cosine classifier, per-channel style statistics,
// and the probability-space losses. All ops run in 64-bit floats, check
// shapes, and reject non-finite outputs.

// a [M,K] x b [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);

// x [B,C,H,W], w [O,C,kh,kw], bias [O] (optional), stride 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int pad);

// 2x2 average pooling, stride 2; spatial dims must be even.
Tensor avgpool2x2(const Tensor& x);

Tensor relu(const Tensor& x);

// Elementwise; add also accepts a rank-1 rhs matching the last dim of lhs
// (row broadcast, used for bias terms).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // zero denominator is an error

Tensor scalar_mul(const Tensor& a, double c);

// Per-channel spatial mean / population std of x [B,C,H,W] -> [B,C].
Tensor channel_mean(const Tensor& x);
Tensor channel_std(const Tensor& x);

// Normalizes the vectors lying along `axis` of a 2-D tensor; the norm is
// floored at kNormEpsilon so degenerate vectors stay finite.
Tensor l2_normalize(const Tensor& x, int axis);

// Row-wise softmax of a 2-D tensor, max-subtracted.
Tensor softmax_rows(const Tensor& x);

// Natural log with the argument floored at kLogFloor.
Tensor log(const Tensor& x);

Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar

Tensor reshape(const Tensor& x, std::vector<int> new_shape);

// Identity in the forward pass; blocks all gradient flow in the backward.
Tensor detach(const Tensor& x);

// Batch assembly: copies rows `indices` of data [N, ...] into [B, ...].
// Plumbing for datasets, not a differentiable op.
Tensor gather_rows(const Tensor& data, const std::vector<int>& indices);

inline constexpr double kNormEpsilon = 1e-6;
inline constexpr double kLogFloor = 1e-12;

// Compares the recorded-graph gradient of a scalar-valued closure against
// central finite differences at `point`. Returns
// max_i |analytic_i - fd_i| / max(1, |analytic_i|).
using ScalarClosure = std::function<Tensor(const std::vector<Tensor>&)>;
double finite_diff_check(const ScalarClosure& f, const std::vector<Tensor>& point, double h = 1e-5);

}  // namespace s3d
