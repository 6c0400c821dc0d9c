#include "gridpost/network.hpp"

#include <cmath>

namespace gridpost {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::tconv2d: return "tconv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::activation: return "activation";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::tconv2d, LayerKind::maxpool2d,
                 LayerKind::activation, LayerKind::reshape}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(Index units, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::conv2d(Index filters, Index kernel, Index stride, Index pad, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.units = filters;
  s.window = {kernel, kernel, stride, stride, pad, pad};
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::tconv2d(Index filters, Index kernel, Index stride, Index pad, Activation act) {
  LayerSpec s = conv2d(filters, kernel, stride, pad, act);
  s.kind = LayerKind::tconv2d;
  return s;
}

LayerSpec LayerSpec::maxpool2d(Index window, Index stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.window = {window, window, stride, stride, 0, 0};
  return s;
}

LayerSpec LayerSpec::activation_only(Activation act) {
  LayerSpec s;
  s.kind = LayerKind::activation;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::reshape(Shape target) {
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.target = std::move(target);
  return s;
}

std::string LayerSpec::describe() const {
  std::string d = to_string(kind);
  switch (kind) {
    case LayerKind::dense: d += "(" + std::to_string(units) + ")"; break;
    case LayerKind::conv2d:
    case LayerKind::tconv2d:
      d += "(" + std::to_string(units) + ", k" + std::to_string(window.kh) + "x" +
           std::to_string(window.kw) + ", s" + std::to_string(window.sh) + ", p" +
           std::to_string(window.ph) + ")";
      break;
    case LayerKind::maxpool2d:
      d += "(w" + std::to_string(window.kh) + ", s" + std::to_string(window.sh) + ")";
      break;
    case LayerKind::reshape: d += shape_string(target); break;
    case LayerKind::activation: break;
  }
  if (kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::tconv2d ||
      kind == LayerKind::activation) {
    d += " " + to_string(activation);
  }
  return d;
}

namespace {

// Shifted-row accumulation beats im2col + GEMM for very few output filters.
bool use_direct_conv(Index channels, Index filters, const Window2d& w) {
  return w.sh == 1 && w.sw == 1 && filters <= 2 && channels >= filters;
}

// A NaN or inf anywhere makes the sum non-finite; unlike allFinite() this
// vectorizes. Finite values large enough to overflow the sum are flagged too.
template <typename Scalar>
bool all_finite(const Batch<Scalar>& x) {
  return std::isfinite(x.sum());
}

bool has_activation(LayerKind kind) {
  return kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::tconv2d ||
         kind == LayerKind::activation;
}

[[noreturn]] void build_error(std::size_t layer, const LayerSpec& spec, const std::string& why) {
  throw ConfigError("layer " + std::to_string(layer) + " (" + spec.describe() + "): " + why);
}

}  // namespace

template <typename Scalar>
Sequential<Scalar>::Sequential(Shape input_shape, std::vector<LayerSpec> specs)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)) {
  shapes_.push_back(input_shape_);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& s = specs_[i];
    const Shape& in = shapes_.back();
    const Window2d& w = s.window;
    Shape out;
    int pindex = -1;
    switch (s.kind) {
      case LayerKind::dense: {
        if (s.units < 1) build_error(i, s, "units must be >= 1");
        pindex = static_cast<int>(params_.size());
        params_.emplace_back(Shape{s.units, shape_size(in)});
        params_.emplace_back(Shape{s.units});
        out = {s.units};
        break;
      }
      case LayerKind::conv2d: {
        if (in.size() != 3) build_error(i, s, "expects a [C,H,W] input, got " + shape_string(in));
        if (s.units < 1 || w.kh < 1 || w.kw < 1 || w.sh < 1 || w.sw < 1 || w.ph < 0 || w.pw < 0) {
          build_error(i, s, "filters/kernel/stride must be positive");
        }
        if (in[1] + 2 * w.ph < w.kh || in[2] + 2 * w.pw < w.kw) {
          build_error(i, s, "kernel larger than padded input " + shape_string(in));
        }
        pindex = static_cast<int>(params_.size());
        params_.emplace_back(Shape{s.units, in[0], w.kh, w.kw});
        params_.emplace_back(Shape{s.units});
        out = {s.units, conv_out_extent(in[1], w.kh, w.sh, w.ph),
               conv_out_extent(in[2], w.kw, w.sw, w.pw)};
        break;
      }
      case LayerKind::tconv2d: {
        if (in.size() != 3) build_error(i, s, "expects a [C,H,W] input, got " + shape_string(in));
        if (s.units < 1 || w.kh < 1 || w.kw < 1 || w.sh < 1 || w.sw < 1 || w.ph < 0 || w.pw < 0) {
          build_error(i, s, "filters/kernel/stride must be positive");
        }
        if (w.ph >= w.kh || w.pw >= w.kw) build_error(i, s, "padding must be smaller than kernel");
        const Index ho = tconv_out_extent(in[1], w.kh, w.sh, w.ph);
        const Index wo = tconv_out_extent(in[2], w.kw, w.sw, w.pw);
        if (ho < 1 || wo < 1) build_error(i, s, "non-positive output extent");
        pindex = static_cast<int>(params_.size());
        params_.emplace_back(Shape{in[0], s.units, w.kh, w.kw});
        params_.emplace_back(Shape{s.units});
        out = {s.units, ho, wo};
        break;
      }
      case LayerKind::maxpool2d: {
        if (in.size() != 3) build_error(i, s, "expects a [C,H,W] input, got " + shape_string(in));
        if (w.kh < 1 || w.sh < 1) build_error(i, s, "window and stride must be >= 1");
        if (w.kh > in[1] || w.kw > in[2]) build_error(i, s, "window larger than input " + shape_string(in));
        out = {in[0], conv_out_extent(in[1], w.kh, w.sh, 0), conv_out_extent(in[2], w.kw, w.sw, 0)};
        break;
      }
      case LayerKind::activation: out = in; break;
      case LayerKind::reshape: {
        if (shape_size(s.target) != shape_size(in)) {
          build_error(i, s, "cannot reshape " + shape_string(in));
        }
        out = s.target;
        break;
      }
    }
    shapes_.push_back(out);
    param_index_.push_back(pindex);
  }
}

template <typename Scalar>
void Sequential<Scalar>::initialize(std::mt19937_64& rng) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const int p = param_index_[i];
    if (p < 0) continue;
    const LayerSpec& s = specs_[i];
    double fan_in = 0, fan_out = 0;
    if (s.kind == LayerKind::dense) {
      fan_in = static_cast<double>(params_[p].dim(1));
      fan_out = static_cast<double>(params_[p].dim(0));
    } else {
      const double rf = static_cast<double>(s.window.kh * s.window.kw);
      fan_in = rf * static_cast<double>(shapes_[i][0]);
      fan_out = rf * static_cast<double>(s.units);
    }
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Index k = 0; k < params_[p].size(); ++k) params_[p][k] = static_cast<Scalar>(limit * u(rng));
    params_[p + 1].data().setZero();
  }
}

template <typename Scalar>
std::vector<std::string> Sequential<Scalar>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (param_index_[i] < 0) continue;
    names.push_back("layer" + std::to_string(i) + "." + to_string(specs_[i].kind) + ".weight");
    names.push_back("layer" + std::to_string(i) + "." + to_string(specs_[i].kind) + ".bias");
  }
  return names;
}

template <typename Scalar>
Index Sequential<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::run_layer(std::size_t i, const Batch<Scalar>& x,
                                            std::vector<std::int32_t>* argmax) const {
  const LayerSpec& s = specs_[i];
  const Shape& in = shapes_[i];
  const Shape& out = shapes_[i + 1];
  const Index batch = x.cols();
  const Index out_len = shape_size(out);
  const Window2d& w = s.window;
  Batch<Scalar> y;

  switch (s.kind) {
    case LayerKind::dense: {
      const Tensor<Scalar>& W = params_[param_index_[i]];
      const Tensor<Scalar>& b = params_[param_index_[i] + 1];
      y.noalias() = W.matrix(W.dim(0), W.dim(1)) * x;
      y.colwise() += b.data();
      break;
    }
    case LayerKind::conv2d: {
      const Tensor<Scalar>& K = params_[param_index_[i]];
      const Tensor<Scalar>& b = params_[param_index_[i] + 1];
      const auto kmat = K.matrix(s.units, in[0] * w.kh * w.kw);
      if (use_direct_conv(in[0], s.units, w)) {
        y.setZero(out_len, batch);
        for (Index n = 0; n < batch; ++n) {
          conv2d_direct(x.col(n).data(), in[0], in[1], in[2], K.data().data(), s.units, w, out[1], out[2],
                        y.col(n).data());
          Eigen::Map<RowMat<Scalar>> yn(y.col(n).data(), out[0], out[1] * out[2]);
          yn.colwise() += b.data();
        }
        break;
      }
      y.resize(out_len, batch);
      RowMat<Scalar> cols;
      for (Index n = 0; n < batch; ++n) {
        im2col(x.col(n).data(), in[0], in[1], in[2], w, out[1], out[2], cols);
        Eigen::Map<RowMat<Scalar>> yn(y.col(n).data(), out[0], out[1] * out[2]);
        yn.noalias() = kmat * cols;
        yn.colwise() += b.data();
      }
      break;
    }
    case LayerKind::tconv2d: {
      const Tensor<Scalar>& K = params_[param_index_[i]];
      const Tensor<Scalar>& b = params_[param_index_[i] + 1];
      if (const auto plan = SubpixelPlan::make(in[0], s.units, in[1], in[2], w)) {
        const RowMat<Scalar> packed = subpixel_pack(*plan, K.data().data());
        y.resize(out_len, batch);
        RowMat<Scalar> cols, phases;
        for (Index n = 0; n < batch; ++n) {
          im2col(x.col(n).data(), in[0], in[1], in[2], plan->inner, plan->qh, plan->qw, cols);
          phases.noalias() = packed * cols;
          subpixel_scatter(*plan, phases, y.col(n).data());
          Eigen::Map<RowMat<Scalar>> yn(y.col(n).data(), out[0], out[1] * out[2]);
          yn.colwise() += b.data();
        }
        break;
      }
      const auto kmat = K.matrix(in[0], s.units * w.kh * w.kw);
      y.setZero(out_len, batch);
      RowMat<Scalar> cols;
      for (Index n = 0; n < batch; ++n) {
        Eigen::Map<const RowMat<Scalar>> xn(x.col(n).data(), in[0], in[1] * in[2]);
        cols.noalias() = kmat.transpose() * xn;
        col2im(cols, out[0], out[1], out[2], w, in[1], in[2], y.col(n).data());
        Eigen::Map<RowMat<Scalar>> yn(y.col(n).data(), out[0], out[1] * out[2]);
        yn.colwise() += b.data();
      }
      break;
    }
    case LayerKind::maxpool2d: {
      y.resize(out_len, batch);
      if (argmax) argmax->resize(static_cast<std::size_t>(out_len * batch));
      const Index C = in[0], H = in[1], W = in[2];
      for (Index n = 0; n < batch; ++n) {
        const Scalar* xn = x.col(n).data();
        Scalar* yn = y.col(n).data();
        Index o = 0;
        for (Index c = 0; c < C; ++c) {
          for (Index oy = 0; oy < out[1]; ++oy) {
            for (Index ox = 0; ox < out[2]; ++ox, ++o) {
              Index best = (c * H + oy * w.sh) * W + ox * w.sw;
              for (Index a = 0; a < w.kh; ++a) {
                const Index row = (c * H + oy * w.sh + a) * W + ox * w.sw;
                for (Index bcol = 0; bcol < w.kw; ++bcol) {
                  if (xn[row + bcol] > xn[best]) best = row + bcol;
                }
              }
              yn[o] = xn[best];
              if (argmax) (*argmax)[static_cast<std::size_t>(n * out_len + o)] = static_cast<std::int32_t>(best);
            }
          }
        }
      }
      break;
    }
    case LayerKind::activation:
    case LayerKind::reshape: y = x; break;
  }
  if (has_activation(s.kind)) {
    apply_activation<Scalar>(s.activation, Eigen::Map<Vec<Scalar>>(y.data(), y.size()));
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::forward(const Batch<Scalar>& input) const {
  if (input.rows() != shape_size(input_shape_)) {
    throw DimensionError("network input length " + std::to_string(input.rows()) + " != " +
                         std::to_string(shape_size(input_shape_)));
  }
  Batch<Scalar> x = input;
  for (std::size_t i = 0; i < specs_.size(); ++i) x = run_layer(i, x, nullptr);
  return x;
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::forward(const Batch<Scalar>& input, Tape<Scalar>& tape) const {
  if (input.rows() != shape_size(input_shape_)) {
    throw DimensionError("network input length " + std::to_string(input.rows()) + " != " +
                         std::to_string(shape_size(input_shape_)));
  }
  tape.values.resize(specs_.size() + 1);
  tape.argmax.resize(specs_.size());
  tape.values[0] = input;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    tape.values[i + 1] = run_layer(i, tape.values[i], &tape.argmax[i]);
    if (!all_finite(tape.values[i + 1])) {
      throw NumericError("non-finite activation in layer " + std::to_string(i) + " (" +
                             specs_[i].describe() + ")",
                         static_cast<long>(i));
    }
  }
  return tape.values.back();
}

template <typename Scalar>
Batch<Scalar> Sequential<Scalar>::backward(const Tape<Scalar>& tape, const Batch<Scalar>& grad_output,
                                           std::vector<Tensor<Scalar>>& grads,
                                           bool want_input_grad) const {
  grads.resize(params_.size());
  for (std::size_t p = 0; p < params_.size(); ++p) grads[p] = Tensor<Scalar>(params_[p].shape());

  Batch<Scalar> g = grad_output;
  for (std::size_t ii = specs_.size(); ii-- > 0;) {
    const LayerSpec& s = specs_[ii];
    const Shape& in = shapes_[ii];
    const Shape& out = shapes_[ii + 1];
    const Batch<Scalar>& x = tape.values[ii];
    const Batch<Scalar>& y = tape.values[ii + 1];
    const Index batch = x.cols();
    const Window2d& w = s.window;
    const bool need_dx = want_input_grad || ii > 0;

    if (has_activation(s.kind)) {
      activation_backward<Scalar>(s.activation, Eigen::Map<const Vec<Scalar>>(y.data(), y.size()),
                                  Eigen::Map<Vec<Scalar>>(g.data(), g.size()));
    }

    Batch<Scalar> dx;
    switch (s.kind) {
      case LayerKind::dense: {
        const int p = param_index_[ii];
        const Tensor<Scalar>& W = params_[p];
        const auto wmat = W.matrix(W.dim(0), W.dim(1));
        grads[p].matrix(W.dim(0), W.dim(1)).noalias() = g * x.transpose();
        grads[p + 1].data() = g.rowwise().sum();
        if (need_dx) dx.noalias() = wmat.transpose() * g;
        break;
      }
      case LayerKind::conv2d: {
        const int p = param_index_[ii];
        const Index kcols = in[0] * w.kh * w.kw;
        const auto kmat = params_[p].matrix(s.units, kcols);
        auto dk = grads[p].matrix(s.units, kcols);
        if (need_dx) dx.setZero(x.rows(), batch);
        if (use_direct_conv(in[0], s.units, w)) {
          for (Index n = 0; n < batch; ++n) {
            Eigen::Map<const RowMat<Scalar>> gn(g.col(n).data(), out[0], out[1] * out[2]);
            conv2d_direct_backward(x.col(n).data(), in[0], in[1], in[2], params_[p].data().data(), s.units, w,
                                   out[1], out[2], g.col(n).data(), grads[p].data().data(),
                                   need_dx ? dx.col(n).data() : nullptr);
            grads[p + 1].data() += gn.rowwise().sum();
          }
          break;
        }
        RowMat<Scalar> cols, dcols;
        for (Index n = 0; n < batch; ++n) {
          Eigen::Map<const RowMat<Scalar>> gn(g.col(n).data(), out[0], out[1] * out[2]);
          im2col(x.col(n).data(), in[0], in[1], in[2], w, out[1], out[2], cols);
          dk.noalias() += gn * cols.transpose();
          grads[p + 1].data() += gn.rowwise().sum();
          if (need_dx) {
            dcols.noalias() = kmat.transpose() * gn;
            col2im(dcols, in[0], in[1], in[2], w, out[1], out[2], dx.col(n).data());
          }
        }
        break;
      }
      case LayerKind::tconv2d: {
        const int p = param_index_[ii];
        const Index kcols = s.units * w.kh * w.kw;
        const auto kmat = params_[p].matrix(in[0], kcols);
        auto dk = grads[p].matrix(in[0], kcols);
        if (need_dx) dx.resize(x.rows(), batch);
        if (const auto plan = SubpixelPlan::make(in[0], s.units, in[1], in[2], w)) {
          const RowMat<Scalar> packed = subpixel_pack(*plan, params_[p].data().data());
          RowMat<Scalar> dpacked = RowMat<Scalar>::Zero(plan->rows(), plan->cols());
          RowMat<Scalar> cols, phases, dcols;
          for (Index n = 0; n < batch; ++n) {
            Eigen::Map<const RowMat<Scalar>> gn(g.col(n).data(), out[0], out[1] * out[2]);
            im2col(x.col(n).data(), in[0], in[1], in[2], plan->inner, plan->qh, plan->qw, cols);
            subpixel_gather(*plan, g.col(n).data(), phases);
            dpacked.noalias() += phases * cols.transpose();
            grads[p + 1].data() += gn.rowwise().sum();
            if (need_dx) {
              dcols.noalias() = packed.transpose() * phases;
              dx.col(n).setZero();
              col2im(dcols, in[0], in[1], in[2], plan->inner, plan->qh, plan->qw, dx.col(n).data());
            }
          }
          subpixel_unpack_add(*plan, dpacked, grads[p].data().data());
          break;
        }
        RowMat<Scalar> dcols;
        for (Index n = 0; n < batch; ++n) {
          Eigen::Map<const RowMat<Scalar>> gn(g.col(n).data(), out[0], out[1] * out[2]);
          Eigen::Map<const RowMat<Scalar>> xn(x.col(n).data(), in[0], in[1] * in[2]);
          im2col(g.col(n).data(), out[0], out[1], out[2], w, in[1], in[2], dcols);
          dk.noalias() += xn * dcols.transpose();
          grads[p + 1].data() += gn.rowwise().sum();
          if (need_dx) {
            Eigen::Map<RowMat<Scalar>> dxn(dx.col(n).data(), in[0], in[1] * in[2]);
            dxn.noalias() = kmat * dcols;
          }
        }
        break;
      }
      case LayerKind::maxpool2d: {
        if (need_dx) {
          dx.setZero(x.rows(), batch);
          const Index out_len = g.rows();
          const auto& am = tape.argmax[ii];
          for (Index n = 0; n < batch; ++n) {
            for (Index o = 0; o < out_len; ++o) {
              dx(am[static_cast<std::size_t>(n * out_len + o)], n) += g(o, n);
            }
          }
        }
        break;
      }
      case LayerKind::activation:
      case LayerKind::reshape:
        if (need_dx) dx = std::move(g);
        break;
    }
    g = std::move(dx);
  }
  return g;
}

Eigen::VectorXd flatten_parameters(const std::vector<Tensor<double>>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.size();
  Eigen::VectorXd flat(n);
  Index off = 0;
  for (const auto& p : params) {
    flat.segment(off, p.size()) = p.data();
    off += p.size();
  }
  return flat;
}

void unflatten_parameters(const Eigen::VectorXd& flat, std::vector<Tensor<double>>& params) {
  Index off = 0;
  for (auto& p : params) {
    if (off + p.size() > flat.size()) throw DimensionError("flat parameter vector too short");
    p.data() = flat.segment(off, p.size());
    off += p.size();
  }
  if (off != flat.size()) throw DimensionError("flat parameter vector too long");
}

template class Sequential<float>;
template class Sequential<double>;

}  // namespace gridpost
