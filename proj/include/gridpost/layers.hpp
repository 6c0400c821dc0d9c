#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridpost/tensor.hpp"

namespace gridpost {

enum class Activation { linear, relu, sigmoid };

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

/// Kernel/stride/padding of a 2-D (transposed) convolution or pooling window.
struct Window2d {
  Index kh = 3, kw = 3;
  Index sh = 1, sw = 1;
  Index ph = 0, pw = 0;
};

/// Output extent of a cross-correlation / pooling window.
inline Index conv_out_extent(Index in, Index k, Index s, Index p) {
  return (in + 2 * p - k) / s + 1;
}

/// Output extent of a transposed convolution: the input extent of the
/// matching forward convolution.
inline Index tconv_out_extent(Index in, Index k, Index s, Index p) {
  return (in - 1) * s - 2 * p + k;
}

template <typename Scalar>
void apply_activation(Activation act, Eigen::Ref<Vec<Scalar>> x);

// Multiplies grad by act'(.) evaluated from the activation output y.
template <typename Scalar>
void activation_backward(Activation act, const Eigen::Ref<const Vec<Scalar>>& y,
                         Eigen::Ref<Vec<Scalar>> grad);

// --- im2col / col2im on a single (C,H,W) sample -------------------------

template <typename Scalar>
void im2col(const Scalar* input, Index channels, Index height, Index width, const Window2d& win,
            Index out_h, Index out_w, RowMat<Scalar>& cols);

template <typename Scalar>
void col2im(const RowMat<Scalar>& cols, Index channels, Index height, Index width,
            const Window2d& win, Index out_h, Index out_w, Scalar* image);

// --- fast paths used by Sequential ---------------------------------------

/// Stride-1 cross-correlation by shifted row accumulation. Adds into y
/// [F,Ho,Wo]; kernels [F,C,kh,kw].
template <typename Scalar>
void conv2d_direct(const Scalar* x, Index C, Index H, Index W, const Scalar* kernels, Index F,
                   const Window2d& win, Index Ho, Index Wo, Scalar* y);

/// Adds the kernel gradient into dkernels and, when dx is non-null, the input
/// gradient into dx.
template <typename Scalar>
void conv2d_direct_backward(const Scalar* x, Index C, Index H, Index W, const Scalar* kernels,
                            Index F, const Window2d& win, Index Ho, Index Wo, const Scalar* gy,
                            Scalar* dkernels, Scalar* dx);

/// A transposed convolution whose kernel is a multiple of its stride,
/// rewritten as a stride-1 correlation over the input with sh*sw*F output
/// channels, one per output phase, interleaved back into the output grid.
struct SubpixelPlan {
  Index C = 0, F = 0, H = 0, W = 0, Ho = 0, Wo = 0;
  Window2d win;    // transposed convolution
  Window2d inner;  // stride-1 correlation over the input
  Index qh = 0, qw = 0;

  /// Empty when the geometry does not qualify.
  static std::optional<SubpixelPlan> make(Index C, Index F, Index H, Index W, const Window2d& win);
  Index rows() const { return win.sh * win.sw * F; }
  Index cols() const { return C * inner.kh * inner.kw; }
};

/// kernels [C,F,kh,kw] -> [sh*sw*F, C*ikh*ikw].
template <typename Scalar>
RowMat<Scalar> subpixel_pack(const SubpixelPlan& plan, const Scalar* kernels);

template <typename Scalar>
void subpixel_unpack_add(const SubpixelPlan& plan, const RowMat<Scalar>& packed, Scalar* kernels);

/// Phase outputs [sh*sw*F, qh*qw] -> y [F,Ho,Wo] (overwrites).
template <typename Scalar>
void subpixel_scatter(const SubpixelPlan& plan, const RowMat<Scalar>& phases, Scalar* y);

/// Inverse of subpixel_scatter; phase cells outside the output are zero.
template <typename Scalar>
void subpixel_gather(const SubpixelPlan& plan, const Scalar* y, RowMat<Scalar>& phases);

// --- single-sample layer operations -------------------------------------

/// Cross-correlation (no kernel flip) with zero padding.
/// input [C,H,W], kernels [F,C,kh,kw], bias [F] -> [F,H',W'].
template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                              const Tensor<Scalar>& bias, Index sh, Index sw, Index ph, Index pw);

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  Tensor<Scalar> kernels;
  Tensor<Scalar> bias;
};

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                  const Tensor<Scalar>& grad_output, Index sh, Index sw, Index ph,
                                  Index pw);

/// Adjoint of conv2d_forward with the same geometry.
/// input [C,H,W], kernels [C,F,kh,kw] (the forward kernel mapping F->C), bias [F]
/// -> [F, (H-1)sh - 2ph + kh, (W-1)sw - 2pw + kw].
template <typename Scalar>
Tensor<Scalar> tconv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                               const Tensor<Scalar>& bias, Index sh, Index sw, Index ph, Index pw);

template <typename Scalar>
ConvGrads<Scalar> tconv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                   const Tensor<Scalar>& grad_output, Index sh, Index sw,
                                   Index ph, Index pw);

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  std::vector<std::int32_t> argmax;  // flat input offset per output cell
};

template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input, Index window, Index stride);

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Tensor<Scalar>& grad_output,
                                  const std::vector<std::int32_t>& argmax, const Shape& input_shape);

/// activation(W x + b); input [n], weights [m,n], bias [m].
template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                             const Tensor<Scalar>& bias, Activation act);

}  // namespace gridpost
