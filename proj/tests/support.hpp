#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gridpost/gradcheck.hpp"
#include "gridpost/network.hpp"
#include "gridpost/rng.hpp"

namespace gridpost::testing {

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("gridpost-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
  return t;
}

inline Batch<double> random_batch(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Batch<double> b(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) b(i, j) = u(rng);
  }
  return b;
}

// Textbook seven-loop cross-correlation.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& k,
                                   const Tensor<double>& b, Index s, Index p) {
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const Index Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
  Tensor<double> y({F, Ho, Wo});
  for (Index f = 0; f < F; ++f)
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox) {
        double acc = b[f];
        for (Index c = 0; c < C; ++c)
          for (Index i = 0; i < kh; ++i)
            for (Index j = 0; j < kw; ++j) {
              const Index iy = oy * s - p + i, ix = ox * s - p + j;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) acc += k.at({f, c, i, j}) * x.at({c, iy, ix});
            }
        y.at({f, oy, ox}) = acc;
      }
  return y;
}

// Scatter form of the transposed convolution; kernels [C,F,kh,kw].
inline Tensor<double> naive_tconv2d(const Tensor<double>& x, const Tensor<double>& k,
                                    const Tensor<double>& b, Index s, Index p) {
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index F = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  const Index Ho = (H - 1) * s - 2 * p + kh, Wo = (W - 1) * s - 2 * p + kw;
  Tensor<double> y({F, Ho, Wo});
  for (Index f = 0; f < F; ++f) y.matrix(F, Ho * Wo).row(f).array() += b[f];
  for (Index c = 0; c < C; ++c)
    for (Index iy = 0; iy < H; ++iy)
      for (Index ix = 0; ix < W; ++ix)
        for (Index f = 0; f < F; ++f)
          for (Index i = 0; i < kh; ++i)
            for (Index j = 0; j < kw; ++j) {
              const Index oy = iy * s - p + i, ox = ix * s - p + j;
              if (oy >= 0 && oy < Ho && ox >= 0 && ox < Wo) y.at({f, oy, ox}) += k.at({c, f, i, j}) * x.at({c, iy, ix});
            }
  return y;
}

struct NetGradResult {
  GradCheckReport params;
  GradCheckReport input;
};

// Checks parameter and input gradients of loss = 0.5 * sum (net(x) - target)^2.
inline NetGradResult check_network_gradients(Sequential<double>& net, const Batch<double>& x,
                                             const Batch<double>& target, double eps = 1e-5) {
  Tape<double> tape;
  const Batch<double> y = net.forward(x, tape);
  std::vector<Tensor<double>> grads;
  const Batch<double> dx = net.backward(tape, y - target, grads, true);

  auto params = net.parameters();
  const Eigen::VectorXd theta = flatten_parameters(params);
  auto loss_at = [&](const Eigen::VectorXd& t) {
    unflatten_parameters(t, net.parameters());
    const double l = 0.5 * (net.forward(x) - target).squaredNorm();
    return l;
  };
  NetGradResult r;
  r.params = grad_check(loss_at, theta, flatten_parameters(grads), eps);
  unflatten_parameters(theta, net.parameters());

  const Eigen::Map<const Eigen::VectorXd> x0(x.data(), x.size());
  auto loss_x = [&](const Eigen::VectorXd& v) {
    const Batch<double> xv = Eigen::Map<const Batch<double>>(v.data(), x.rows(), x.cols());
    return 0.5 * (net.forward(xv) - target).squaredNorm();
  };
  r.input = grad_check(loss_x, x0, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()), eps);
  return r;
}

}  // namespace gridpost::testing
