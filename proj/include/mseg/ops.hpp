#pragma once

#include <cstdint>
#include <vector>

#include "mseg/tensor.hpp"

namespace mseg {

// Elementwise arithmetic with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

/// Exact GELU, 0.5·x·(1 + erf(x/√2)).
Tensor gelu(const Tensor& x);

/// Inverted dropout: survivors are scaled by 1/(1-p) while training,
/// identity in eval mode. Requires 0 <= p < 1.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over the listed axes and drops them from the shape.
Tensor sum_axes(const Tensor& x, std::vector<int> axes);
Tensor mean_axis(const Tensor& x, int axis);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[..., in] · wᵀ + b with w stored as [out, in]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Cross-correlation with zero padding. x: [B,Cin,H,W], w: [Cout,Cin,kh,kw].
/// `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Transposed convolution without padding. w: [Cin,Cout,k,k].
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride);

/// Normalizes over the last axis with population variance, then applies
/// gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// x: [B, C, ...]; statistics over (C/groups, ...) per sample and group.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose(const Tensor& x, int axis0, int axis1);

/// Torus roll of axes 1 and 2 of a [B,H,W,C] tensor:
/// out[b, (i+dh) mod H, (j+dw) mod W] = x[b, i, j].
Tensor cyclic_shift(const Tensor& x, std::int64_t dh, std::int64_t dw);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

/// Rows of x (along axis 0) picked by `indices`; gradients scatter-add.
Tensor index_select(const Tensor& x, const std::vector<std::int64_t>& indices);

}  // namespace mseg
