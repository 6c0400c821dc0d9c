#include "gridpost/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gridpost {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Activation parse_activation(const std::string& name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

template <typename Scalar>
void apply_activation(Activation act, Eigen::Ref<Vec<Scalar>> x) {
  switch (act) {
    case Activation::linear: break;
    case Activation::relu: x = x.cwiseMax(Scalar(0)); break;
    case Activation::sigmoid:
      x = x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
      break;
  }
}

template <typename Scalar>
void activation_backward(Activation act, const Eigen::Ref<const Vec<Scalar>>& y,
                         Eigen::Ref<Vec<Scalar>> grad) {
  switch (act) {
    case Activation::linear: break;
    case Activation::relu:
      grad = (y.array() > Scalar(0)).select(grad, Scalar(0));
      break;
    case Activation::sigmoid:
      grad = grad.cwiseProduct((y.array() * (Scalar(1) - y.array())).matrix());
      break;
  }
}

namespace {

// Output columns ox with 0 <= ox*stride - pad + k < extent, as [lo, hi).
std::pair<Index, Index> valid_range(Index out, Index stride, Index pad, Index k, Index extent) {
  const Index off = k - pad;
  const Index lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const Index hi = extent - off <= 0 ? 0 : std::min(out, (extent - off - 1) / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

template <typename Scalar>
void im2col(const Scalar* input, Index channels, Index height, Index width, const Window2d& win,
            Index out_h, Index out_w, RowMat<Scalar>& cols) {
  cols.resize(channels * win.kh * win.kw, out_h * out_w);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = input + c * height * width;
    for (Index ki = 0; ki < win.kh; ++ki) {
      for (Index kj = 0; kj < win.kw; ++kj) {
        Scalar* row = cols.row((c * win.kh + ki) * win.kw + kj).data();
        const auto [lo, hi] = valid_range(out_w, win.sw, win.pw, kj, width);
        const Index off = kj - win.pw;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * win.sh - win.ph + ki;
          Scalar* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * width;
          std::fill(dst, dst + lo, Scalar(0));
          if (win.sw == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (Index ox = lo; ox < hi; ++ox) dst[ox] = src[ox * win.sw + off];
          }
          std::fill(dst + hi, dst + out_w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const RowMat<Scalar>& cols, Index channels, Index height, Index width,
            const Window2d& win, Index out_h, Index out_w, Scalar* image) {
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = image + c * height * width;
    for (Index ki = 0; ki < win.kh; ++ki) {
      for (Index kj = 0; kj < win.kw; ++kj) {
        const Scalar* row = cols.row((c * win.kh + ki) * win.kw + kj).data();
        const auto [lo, hi] = valid_range(out_w, win.sw, win.pw, kj, width);
        const Index off = kj - win.pw;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * win.sh - win.ph + ki;
          if (iy < 0 || iy >= height) continue;
          const Scalar* src = row + oy * out_w;
          Scalar* dst = plane + iy * width;
          if (win.sw == 1) {
            for (Index ox = lo; ox < hi; ++ox) dst[ox + off] += src[ox];
          } else {
            for (Index ox = lo; ox < hi; ++ox) dst[ox * win.sw + off] += src[ox];
          }
        }
      }
    }
  }
}

namespace {

template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

}  // namespace

template <typename Scalar>
void conv2d_direct(const Scalar* x, Index C, Index H, Index W, const Scalar* kernels, Index F,
                   const Window2d& win, Index Ho, Index Wo, Scalar* y) {
  for (Index f = 0; f < F; ++f) {
    Scalar* yf = y + f * Ho * Wo;
    for (Index c = 0; c < C; ++c) {
      const Scalar* xc = x + c * H * W;
      for (Index ki = 0; ki < win.kh; ++ki) {
        for (Index kj = 0; kj < win.kw; ++kj) {
          const Scalar w = kernels[((f * C + c) * win.kh + ki) * win.kw + kj];
          const auto [lo, hi] = valid_range(Wo, 1, win.pw, kj, W);
          const Index off = kj - win.pw;
          for (Index oy = 0; oy < Ho; ++oy) {
            const Index iy = oy - win.ph + ki;
            if (iy < 0 || iy >= H) continue;
            ArrayMap<Scalar>(yf + oy * Wo + lo, hi - lo) += w * ConstArrayMap<Scalar>(xc + iy * W + lo + off, hi - lo);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void conv2d_direct_backward(const Scalar* x, Index C, Index H, Index W, const Scalar* kernels,
                            Index F, const Window2d& win, Index Ho, Index Wo, const Scalar* gy,
                            Scalar* dkernels, Scalar* dx) {
  for (Index f = 0; f < F; ++f) {
    const Scalar* gf = gy + f * Ho * Wo;
    for (Index c = 0; c < C; ++c) {
      const Scalar* xc = x + c * H * W;
      Scalar* dxc = dx ? dx + c * H * W : nullptr;
      for (Index ki = 0; ki < win.kh; ++ki) {
        for (Index kj = 0; kj < win.kw; ++kj) {
          const Index k = ((f * C + c) * win.kh + ki) * win.kw + kj;
          const Scalar w = kernels[k];
          const auto [lo, hi] = valid_range(Wo, 1, win.pw, kj, W);
          const Index off = kj - win.pw;
          Scalar acc = 0;
          for (Index oy = 0; oy < Ho; ++oy) {
            const Index iy = oy - win.ph + ki;
            if (iy < 0 || iy >= H) continue;
            const ConstArrayMap<Scalar> grow(gf + oy * Wo + lo, hi - lo);
            acc += (grow * ConstArrayMap<Scalar>(xc + iy * W + lo + off, hi - lo)).sum();
            if (dxc) ArrayMap<Scalar>(dxc + iy * W + lo + off, hi - lo) += w * grow;
          }
          dkernels[k] += acc;
        }
      }
    }
  }
}

namespace {

struct PhaseAxis {
  Index s, p, k, m, pin, kin, q;

  // Kernel tap feeding output phase phi from inner tap u, or -1.
  Index tap(Index phi, Index u) const {
    const Index t0 = phi + p;
    const Index a = t0 / s + pin - u;
    return (a >= 0 && a < m) ? s * a + t0 % s : -1;
  }
};

std::optional<PhaseAxis> phase_axis(Index s, Index p, Index k, Index out) {
  if (k % s != 0) return std::nullopt;
  const Index m = k / s;
  const Index dmin = p / s, dmax = (s - 1 + p) / s;
  const Index pin = m - 1 - dmin;
  if (pin < 0) return std::nullopt;
  return PhaseAxis{s, p, k, m, pin, m + dmax - dmin, (out + s - 1) / s};
}

}  // namespace

std::optional<SubpixelPlan> SubpixelPlan::make(Index C, Index F, Index H, Index W, const Window2d& win) {
  const Index Ho = tconv_out_extent(H, win.kh, win.sh, win.ph);
  const Index Wo = tconv_out_extent(W, win.kw, win.sw, win.pw);
  const auto ah = phase_axis(win.sh, win.ph, win.kh, Ho);
  const auto aw = phase_axis(win.sw, win.pw, win.kw, Wo);
  if (!ah || !aw || Ho < 1 || Wo < 1) return std::nullopt;
  SubpixelPlan plan;
  plan.C = C;
  plan.F = F;
  plan.H = H;
  plan.W = W;
  plan.Ho = Ho;
  plan.Wo = Wo;
  plan.win = win;
  plan.inner = Window2d{ah->kin, aw->kin, 1, 1, ah->pin, aw->pin};
  plan.qh = ah->q;
  plan.qw = aw->q;
  return plan;
}

namespace {

template <typename Scalar, typename Fn>
void for_each_phase_tap(const SubpixelPlan& plan, Fn&& fn) {
  const PhaseAxis ah = *phase_axis(plan.win.sh, plan.win.ph, plan.win.kh, plan.Ho);
  const PhaseAxis aw = *phase_axis(plan.win.sw, plan.win.pw, plan.win.kw, plan.Wo);
  const Window2d& w = plan.win;
  for (Index py = 0; py < w.sh; ++py) {
    for (Index px = 0; px < w.sw; ++px) {
      for (Index u = 0; u < ah.kin; ++u) {
        const Index ki = ah.tap(py, u);
        if (ki < 0) continue;
        for (Index v = 0; v < aw.kin; ++v) {
          const Index kj = aw.tap(px, v);
          if (kj < 0) continue;
          for (Index f = 0; f < plan.F; ++f) {
            for (Index c = 0; c < plan.C; ++c) {
              const Index row = (py * w.sw + px) * plan.F + f;
              const Index col = (c * ah.kin + u) * aw.kin + v;
              fn(row, col, ((c * plan.F + f) * w.kh + ki) * w.kw + kj);
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
RowMat<Scalar> subpixel_pack(const SubpixelPlan& plan, const Scalar* kernels) {
  RowMat<Scalar> packed = RowMat<Scalar>::Zero(plan.rows(), plan.cols());
  for_each_phase_tap<Scalar>(plan, [&](Index r, Index c, Index k) { packed(r, c) = kernels[k]; });
  return packed;
}

template <typename Scalar>
void subpixel_unpack_add(const SubpixelPlan& plan, const RowMat<Scalar>& packed, Scalar* kernels) {
  for_each_phase_tap<Scalar>(plan, [&](Index r, Index c, Index k) { kernels[k] += packed(r, c); });
}

template <typename Scalar>
void subpixel_scatter(const SubpixelPlan& plan, const RowMat<Scalar>& phases, Scalar* y) {
  const Window2d& w = plan.win;
  for (Index py = 0; py < w.sh; ++py) {
    for (Index px = 0; px < w.sw; ++px) {
      for (Index f = 0; f < plan.F; ++f) {
        const Scalar* src = phases.row((py * w.sw + px) * plan.F + f).data();
        Scalar* dst = y + f * plan.Ho * plan.Wo;
        for (Index q = 0; q < plan.qh && q * w.sh + py < plan.Ho; ++q) {
          Scalar* drow = dst + (q * w.sh + py) * plan.Wo + px;
          const Scalar* srow = src + q * plan.qw;
          for (Index r = 0; r < plan.qw && r * w.sw + px < plan.Wo; ++r) drow[r * w.sw] = srow[r];
        }
      }
    }
  }
}

template <typename Scalar>
void subpixel_gather(const SubpixelPlan& plan, const Scalar* y, RowMat<Scalar>& phases) {
  const Window2d& w = plan.win;
  phases.setZero(plan.rows(), plan.qh * plan.qw);
  for (Index py = 0; py < w.sh; ++py) {
    for (Index px = 0; px < w.sw; ++px) {
      for (Index f = 0; f < plan.F; ++f) {
        Scalar* dst = phases.row((py * w.sw + px) * plan.F + f).data();
        const Scalar* src = y + f * plan.Ho * plan.Wo;
        for (Index q = 0; q < plan.qh && q * w.sh + py < plan.Ho; ++q) {
          const Scalar* srow = src + (q * w.sh + py) * plan.Wo + px;
          Scalar* drow = dst + q * plan.qw;
          for (Index r = 0; r < plan.qw && r * w.sw + px < plan.Wo; ++r) drow[r] = srow[r * w.sw];
        }
      }
    }
  }
}

namespace {

void require_rank(const char* op, const char* what, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_string(shape));
  }
}

void require_positive(const char* op, Index sh, Index sw, Index ph, Index pw) {
  if (sh < 1 || sw < 1 || ph < 0 || pw < 0) {
    throw ConfigError(std::string(op) + ": stride must be >= 1 and padding >= 0");
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                              const Tensor<Scalar>& bias, Index sh, Index sw, Index ph, Index pw) {
  require_rank("conv2d", "input", input.shape(), 3);
  require_rank("conv2d", "kernels", kernels.shape(), 4);
  require_positive("conv2d", sh, sw, ph, pw);
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const Index F = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != C) {
    throw DimensionError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) +
                         " != input channels " + std::to_string(C));
  }
  if (bias.size() != F) throw DimensionError("conv2d: bias length must equal filter count");
  if (H + 2 * ph < kh || W + 2 * pw < kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const Window2d win{kh, kw, sh, sw, ph, pw};
  const Index Ho = conv_out_extent(H, kh, sh, ph), Wo = conv_out_extent(W, kw, sw, pw);
  RowMat<Scalar> cols;
  im2col(input.data().data(), C, H, W, win, Ho, Wo, cols);
  Tensor<Scalar> out({F, Ho, Wo});
  auto y = out.matrix(F, Ho * Wo);
  y.noalias() = kernels.matrix(F, C * kh * kw) * cols;
  y.colwise() += bias.data();
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                  const Tensor<Scalar>& grad_output, Index sh, Index sw, Index ph,
                                  Index pw) {
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const Index F = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const Index Ho = grad_output.dim(1), Wo = grad_output.dim(2);
  const Window2d win{kh, kw, sh, sw, ph, pw};
  RowMat<Scalar> cols;
  im2col(input.data().data(), C, H, W, win, Ho, Wo, cols);
  const auto dy = grad_output.matrix(F, Ho * Wo);

  ConvGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(kernels.shape()),
                      Tensor<Scalar>({F})};
  g.kernels.matrix(F, C * kh * kw).noalias() = dy * cols.transpose();
  g.bias.data() = dy.rowwise().sum();
  RowMat<Scalar> dcols = kernels.matrix(F, C * kh * kw).transpose() * dy;
  col2im(dcols, C, H, W, win, Ho, Wo, g.input.data().data());
  return g;
}

template <typename Scalar>
Tensor<Scalar> tconv2d_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                               const Tensor<Scalar>& bias, Index sh, Index sw, Index ph, Index pw) {
  require_rank("tconv2d", "input", input.shape(), 3);
  require_rank("tconv2d", "kernels", kernels.shape(), 4);
  require_positive("tconv2d", sh, sw, ph, pw);
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const Index F = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(0) != C) {
    throw DimensionError("tconv2d: kernel input channels " + std::to_string(kernels.dim(0)) +
                         " != input channels " + std::to_string(C));
  }
  if (bias.size() != F) throw DimensionError("tconv2d: bias length must equal filter count");
  if (ph >= kh || pw >= kw) throw ConfigError("tconv2d: padding must be smaller than kernel");
  const Index Ho = tconv_out_extent(H, kh, sh, ph), Wo = tconv_out_extent(W, kw, sw, pw);
  if (Ho < 1 || Wo < 1) throw ConfigError("tconv2d: non-positive output extent");
  const Window2d win{kh, kw, sh, sw, ph, pw};

  RowMat<Scalar> cols = kernels.matrix(C, F * kh * kw).transpose() * input.matrix(C, H * W);
  Tensor<Scalar> out({F, Ho, Wo});
  col2im(cols, F, Ho, Wo, win, H, W, out.data().data());
  out.matrix(F, Ho * Wo).colwise() += bias.data();
  return out;
}

template <typename Scalar>
ConvGrads<Scalar> tconv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& kernels,
                                   const Tensor<Scalar>& grad_output, Index sh, Index sw,
                                   Index ph, Index pw) {
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const Index F = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  const Index Ho = grad_output.dim(1), Wo = grad_output.dim(2);
  const Window2d win{kh, kw, sh, sw, ph, pw};
  RowMat<Scalar> dcols;
  im2col(grad_output.data().data(), F, Ho, Wo, win, H, W, dcols);

  ConvGrads<Scalar> g{Tensor<Scalar>(input.shape()), Tensor<Scalar>(kernels.shape()),
                      Tensor<Scalar>({F})};
  g.input.matrix(C, H * W).noalias() = kernels.matrix(C, F * kh * kw) * dcols;
  g.kernels.matrix(C, F * kh * kw).noalias() = input.matrix(C, H * W) * dcols.transpose();
  g.bias.data() = grad_output.matrix(F, Ho * Wo).rowwise().sum();
  return g;
}

template <typename Scalar>
PoolResult<Scalar> maxpool2d(const Tensor<Scalar>& input, Index window, Index stride) {
  require_rank("maxpool2d", "input", input.shape(), 3);
  if (window < 1 || stride < 1) throw ConfigError("maxpool2d: window and stride must be >= 1");
  const Index C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (window > H || window > W) throw DimensionError("maxpool2d: window larger than input");
  const Index Ho = conv_out_extent(H, window, stride, 0), Wo = conv_out_extent(W, window, stride, 0);
  PoolResult<Scalar> r{Tensor<Scalar>({C, Ho, Wo}), std::vector<std::int32_t>(C * Ho * Wo)};
  const Scalar* x = input.data().data();
  Scalar* y = r.output.data().data();
  Index o = 0;
  for (Index c = 0; c < C; ++c) {
    for (Index oy = 0; oy < Ho; ++oy) {
      for (Index ox = 0; ox < Wo; ++ox, ++o) {
        Index best = (c * H + oy * stride) * W + ox * stride;
        for (Index i = 0; i < window; ++i) {
          for (Index j = 0; j < window; ++j) {
            const Index k = (c * H + oy * stride + i) * W + ox * stride + j;
            if (x[k] > x[best]) best = k;
          }
        }
        y[o] = x[best];
        r.argmax[o] = static_cast<std::int32_t>(best);
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2d_backward(const Tensor<Scalar>& grad_output,
                                  const std::vector<std::int32_t>& argmax,
                                  const Shape& input_shape) {
  Tensor<Scalar> g(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += grad_output[static_cast<Index>(o)];
  return g;
}

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weights,
                             const Tensor<Scalar>& bias, Activation act) {
  require_rank("dense", "weights", weights.shape(), 2);
  const Index m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n || bias.size() != m) {
    throw DimensionError("dense: weights " + shape_string(weights.shape()) + " incompatible with input " +
                         shape_string(input.shape()) + " / bias " + shape_string(bias.shape()));
  }
  Tensor<Scalar> out({m});
  out.data().noalias() = weights.matrix(m, n) * input.data();
  out.data() += bias.data();
  apply_activation<Scalar>(act, out.data());
  return out;
}

#define GRIDPOST_INSTANTIATE_LAYERS(S)                                                          \
  template void apply_activation<S>(Activation, Eigen::Ref<Vec<S>>);                            \
  template void activation_backward<S>(Activation, const Eigen::Ref<const Vec<S>>&,             \
                                       Eigen::Ref<Vec<S>>);                                     \
  template void im2col<S>(const S*, Index, Index, Index, const Window2d&, Index, Index,         \
                          RowMat<S>&);                                                          \
  template void col2im<S>(const RowMat<S>&, Index, Index, Index, const Window2d&, Index, Index, \
                          S*);                                                                  \
  template void conv2d_direct<S>(const S*, Index, Index, Index, const S*, Index, const Window2d&,  \
                                 Index, Index, S*);                                            \
  template void conv2d_direct_backward<S>(const S*, Index, Index, Index, const S*, Index,       \
                                          const Window2d&, Index, Index, const S*, S*, S*);     \
  template RowMat<S> subpixel_pack<S>(const SubpixelPlan&, const S*);                           \
  template void subpixel_unpack_add<S>(const SubpixelPlan&, const RowMat<S>&, S*);              \
  template void subpixel_scatter<S>(const SubpixelPlan&, const RowMat<S>&, S*);                 \
  template void subpixel_gather<S>(const SubpixelPlan&, const S*, RowMat<S>&);                  \
  template Tensor<S> conv2d_forward<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                       Index, Index, Index, Index);                             \
  template ConvGrads<S> conv2d_backward<S>(const Tensor<S>&, const Tensor<S>&,                  \
                                           const Tensor<S>&, Index, Index, Index, Index);       \
  template Tensor<S> tconv2d_forward<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,   \
                                        Index, Index, Index, Index);                            \
  template ConvGrads<S> tconv2d_backward<S>(const Tensor<S>&, const Tensor<S>&,                 \
                                            const Tensor<S>&, Index, Index, Index, Index);      \
  template PoolResult<S> maxpool2d<S>(const Tensor<S>&, Index, Index);                          \
  template Tensor<S> maxpool2d_backward<S>(const Tensor<S>&, const std::vector<std::int32_t>&,  \
                                           const Shape&);                                       \
  template Tensor<S> dense_forward<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,     \
                                      Activation);

GRIDPOST_INSTANTIATE_LAYERS(float)
GRIDPOST_INSTANTIATE_LAYERS(double)

}  // namespace gridpost
