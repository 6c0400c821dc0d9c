#include <doctest.h>

#include <cmath>

#include "gridpost/embedding.hpp"
#include "gridpost/gradcheck.hpp"
#include "gridpost/layers.hpp"
#include "gridpost/network.hpp"
#include "gridpost/optim.hpp"
#include "support.hpp"

using namespace gridpost;
using gridpost::testing::random_batch;
using gridpost::testing::random_tensor;

TEST_CASE("tensor rejects zero extents and mismatched data") {
  CHECK_THROWS_AS(Tensor<double>({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, Vec<double>::Zero(3)), DimensionError);
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({1, 0}) == 4);
  CHECK(t.matrix(2, 3)(0, 2) == 3);
  CHECK_THROWS_AS(t.matrix(4, 2), DimensionError);
  CHECK(t.reshaped({3, 2}).at({2, 1}) == 6);
}

TEST_CASE("conv2d examples") {
  SUBCASE("scaling kernel") {
    const Tensor<double> x = Tensor<double>::constant({1, 3, 3}, 1.0);
    const Tensor<double> k({1, 1, 1, 1}, {2.0});
    const auto y = conv2d_forward(x, k, Tensor<double>({1}), 1, 1, 0, 0);
    CHECK(y.shape() == Shape{1, 3, 3});
    CHECK((y.data().array() == 2.0).all());
  }
  SUBCASE("hand sum") {
    const Tensor<double> x({1, 2, 2}, {1, 2, 3, 4});
    const auto y = conv2d_forward(x, Tensor<double>::constant({1, 1, 2, 2}, 1.0), Tensor<double>({1}), 1, 1, 0, 0);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y[0] == 10.0);
  }
  SUBCASE("same padding keeps 81x81") {
    const Tensor<float> x({1, 81, 81});
    const auto y = conv2d_forward(x, Tensor<float>({16, 1, 3, 3}), Tensor<float>({16}), 1, 1, 1, 1);
    CHECK(y.shape() == Shape{16, 81, 81});
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>({2, 4, 4}), Tensor<double>({1, 3, 3, 3}), Tensor<double>({1}), 1, 1, 0, 0),
                    DimensionError);
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(conv2d_forward(Tensor<double>({1, 2, 2}), Tensor<double>({1, 1, 5, 5}), Tensor<double>({1}), 1, 1, 1, 1),
                    DimensionError);
  }
}

TEST_CASE("conv2d matches the seven-loop oracle") {
  auto rng = seed_stream(11, "conv");
  for (auto [s, p, k] : {std::tuple{1, 1, 3}, {2, 0, 3}, {3, 2, 5}, {1, 0, 1}}) {
    const auto x = random_tensor({3, 7, 8}, rng);
    const auto K = random_tensor({4, 3, k, k}, rng);
    const auto b = random_tensor({4}, rng);
    const auto ref = gridpost::testing::naive_conv2d(x, K, b, s, p);
    const auto y = conv2d_forward(x, K, b, s, s, p, p);
    REQUIRE(y.shape() == ref.shape());
    CHECK((y.data() - ref.data()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tconv2d examples and oracle") {
  CHECK(tconv_out_extent(3, 9, 3, 3) == 9);
  CHECK(tconv_out_extent(27, 9, 3, 3) == 81);
  const auto y = tconv2d_forward(Tensor<double>({1, 1, 1}, {1.5}), Tensor<double>({1, 1, 1, 1}, {-2.0}),
                                 Tensor<double>({1}), 1, 1, 0, 0);
  CHECK(y[0] == -3.0);
  CHECK_THROWS_AS(tconv2d_forward(Tensor<double>({1, 2, 2}), Tensor<double>({1, 1, 3, 3}), Tensor<double>({1}), 1, 1, 3, 3),
                  ConfigError);

  auto rng = seed_stream(12, "tconv");
  for (auto [s, p, k] : {std::tuple{3, 3, 9}, {2, 1, 4}, {3, 0, 4}, {1, 1, 3}}) {
    const auto x = random_tensor({2, 4, 5}, rng);
    const auto K = random_tensor({2, 3, k, k}, rng);
    const auto b = random_tensor({3}, rng);
    const auto ref = gridpost::testing::naive_tconv2d(x, K, b, s, p);
    const auto out = tconv2d_forward(x, K, b, s, s, p, p);
    REQUIRE(out.shape() == ref.shape());
    CHECK((out.data() - ref.data()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("conv and tconv are adjoint") {
  auto rng = seed_stream(13, "adjoint");
  for (auto [s, p, k, H] : {std::tuple{1, 1, 3, 6}, {3, 3, 9, 9}, {2, 1, 3, 7}, {2, 0, 2, 8}}) {
    const auto x = random_tensor({2, H, H}, rng);
    const auto K = random_tensor({3, 2, k, k}, rng);  // conv: 2 -> 3, tconv: 3 -> 2
    const Tensor<double> zero3({3}), zero2({2});
    const auto cx = conv2d_forward(x, K, zero3, s, s, p, p);
    const auto yv = random_tensor(cx.shape(), rng);
    const auto ty = tconv2d_forward(yv, K, zero2, s, s, p, p);
    if (ty.shape() != x.shape()) continue;  // strided geometry that does not invert exactly
    const double lhs = cx.data().dot(yv.data());
    const double rhs = x.data().dot(ty.data());
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("maxpool2d") {
  const auto r = maxpool2d(Tensor<double>({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  CHECK(r.output.shape() == Shape{1, 1, 1});
  CHECK(r.output[0] == 4.0);
  CHECK(r.argmax[0] == 3);

  const auto big = maxpool2d(Tensor<float>::constant({16, 81, 81}, 0.25f), 3, 3);
  CHECK(big.output.shape() == Shape{16, 27, 27});
  CHECK((big.output.data().array() == 0.25f).all());

  CHECK_THROWS_AS(maxpool2d(Tensor<double>({1, 2, 2}), 3, 1), DimensionError);

  const auto g = maxpool2d_backward(Tensor<double>({1, 1, 1}, {5.0}), r.argmax, Shape{1, 2, 2});
  CHECK(g.data() == (Vec<double>(4) << 0, 0, 0, 5).finished());
}

TEST_CASE("dense_forward examples") {
  const Tensor<double> x({2}, {0.3, -0.7});
  Tensor<double> I({2, 2}, {1, 0, 0, 1});
  CHECK(dense_forward(x, I, Tensor<double>({2}), Activation::linear) == x);
  CHECK(dense_forward(Tensor<double>({2}, {1, 1}), Tensor<double>({1, 2}, {1, 1}), Tensor<double>({1}, {-3}), Activation::relu)[0] == 0.0);
  const double s = dense_forward(Tensor<double>({1}, {0}), Tensor<double>({1, 1}, {2}), Tensor<double>({1}, {1}), Activation::sigmoid)[0];
  CHECK(s == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(s == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK_THROWS_AS(dense_forward(x, Tensor<double>({1, 3}), Tensor<double>({1}), Activation::linear), DimensionError);
}

TEST_CASE("activation names round trip") {
  for (auto a : {Activation::linear, Activation::relu, Activation::sigmoid}) CHECK(parse_activation(to_string(a)) == a);
  CHECK_THROWS_AS(parse_activation("tanh"), ConfigError);
}

TEST_CASE("sequential fast paths agree with the reference layer functions") {
  auto rng = seed_stream(14, "fast");
  struct Case {
    Shape in;
    LayerSpec spec;
  };
  const std::vector<Case> cases{
      {{8, 9, 9}, LayerSpec::tconv2d(5, 9, 3, 3, Activation::linear)},   // sub-pixel
      {{3, 4, 5}, LayerSpec::tconv2d(2, 4, 2, 1, Activation::linear)},   // sub-pixel, even kernel
      {{3, 4, 5}, LayerSpec::tconv2d(2, 5, 3, 1, Activation::linear)},   // generic col2im
      {{6, 7, 7}, LayerSpec::conv2d(1, 3, 1, 1, Activation::linear)},    // direct
      {{6, 7, 7}, LayerSpec::conv2d(4, 3, 1, 1, Activation::linear)},    // im2col
      {{2, 7, 6}, LayerSpec::conv2d(2, 3, 2, 1, Activation::linear)},    // strided
  };
  for (const auto& c : cases) {
    Sequential<double> net(c.in, {c.spec});
    net.initialize(rng);
    net.parameters()[1] = random_tensor(net.parameters()[1].shape(), rng);
    const Batch<double> x = random_batch(shape_size(c.in), 3, rng);
    const Batch<double> y = net.forward(x);
    for (Index n = 0; n < 3; ++n) {
      const Tensor<double> xn(c.in, x.col(n));
      const auto& K = net.parameters()[0];
      const auto& b = net.parameters()[1];
      const Window2d& w = c.spec.window;
      const auto ref = c.spec.kind == LayerKind::conv2d ? conv2d_forward(xn, K, b, w.sh, w.sw, w.ph, w.pw)
                                                        : tconv2d_forward(xn, K, b, w.sh, w.sw, w.ph, w.pw);
      CHECK((y.col(n) - ref.data()).cwiseAbs().maxCoeff() < 1e-12);
    }
    // backward against the reference gradient functions
    Tape<double> tape;
    net.forward(x, tape);
    const Batch<double> gy = random_batch(y.rows(), 3, rng);
    std::vector<Tensor<double>> grads;
    const Batch<double> dx = net.backward(tape, gy, grads, true);
    Tensor<double> dk(net.parameters()[0].shape()), db(net.parameters()[1].shape());
    for (Index n = 0; n < 3; ++n) {
      const Tensor<double> xn(c.in, x.col(n));
      const Tensor<double> gn(net.output_shape(), gy.col(n));
      const Window2d& w = c.spec.window;
      const auto g = c.spec.kind == LayerKind::conv2d
                         ? conv2d_backward(xn, net.parameters()[0], gn, w.sh, w.sw, w.ph, w.pw)
                         : tconv2d_backward(xn, net.parameters()[0], gn, w.sh, w.sw, w.ph, w.pw);
      CHECK((dx.col(n) - g.input.data()).cwiseAbs().maxCoeff() < 1e-12);
      dk.data() += g.kernels.data();
      db.data() += g.bias.data();
    }
    CHECK((grads[0].data() - dk.data()).cwiseAbs().maxCoeff() < 1e-11);
    CHECK((grads[1].data() - db.data()).cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("sub-pixel plan geometry") {
  const auto plan = SubpixelPlan::make(8, 16, 27, 27, Window2d{9, 9, 3, 3, 3, 3});
  REQUIRE(plan);
  CHECK(plan->Ho == 81);
  CHECK(plan->inner.kh == 3);
  CHECK(plan->inner.ph == 1);
  CHECK(plan->qh == 27);
  CHECK(plan->rows() == 9 * 16);
  CHECK_FALSE(SubpixelPlan::make(1, 1, 4, 4, Window2d{5, 5, 3, 3, 1, 1}));
}

TEST_CASE("sequential geometry and errors") {
  const std::vector<LayerSpec> enc{
      LayerSpec::conv2d(16, 3, 1, 1, Activation::relu), LayerSpec::maxpool2d(3, 3),
      LayerSpec::conv2d(8, 3, 1, 1, Activation::relu),  LayerSpec::maxpool2d(3, 3),
      LayerSpec::conv2d(4, 3, 1, 1, Activation::relu),  LayerSpec::maxpool2d(3, 3)};
  Sequential<float> net({1, 81, 81}, enc);
  CHECK(shape_size(net.output_shape()) == 36);

  CHECK_THROWS_AS(Sequential<double>({1, 4, 4}, {LayerSpec::conv2d(2, 7, 1, 0, Activation::relu)}), ConfigError);
  try {
    Sequential<double>({1, 4, 4}, {LayerSpec::maxpool2d(2, 2), LayerSpec::maxpool2d(3, 3)});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
  CHECK_THROWS_AS(Sequential<double>({6}, {LayerSpec::reshape({4, 2})}), ConfigError);
}

TEST_CASE("forward pass reports the layer producing non-finite values") {
  Sequential<double> net({2}, {LayerSpec::dense(2, Activation::linear), LayerSpec::dense(1, Activation::linear)});
  net.parameters()[2].data().setConstant(std::numeric_limits<double>::infinity());
  Tape<double> tape;
  try {
    net.forward(Batch<double>::Ones(2, 1), tape);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.layer() == 1);
  }
}

TEST_CASE("dense squared-error gradient by hand") {
  Sequential<double> net({2}, {LayerSpec::dense(1, Activation::linear)});
  net.parameters()[0] = Tensor<double>({1, 2}, {0.5, -1.0});
  net.parameters()[1] = Tensor<double>({1}, {0.25});
  Batch<double> x(2, 1);
  x << 2.0, 3.0;
  const double target = 1.0;
  Tape<double> tape;
  const Batch<double> y = net.forward(x, tape);
  std::vector<Tensor<double>> grads;
  net.backward(tape, 2.0 * (y.array() - target).matrix(), grads);
  const double r = 0.5 * 2 - 3 + 0.25 - target;
  CHECK(grads[0][0] == doctest::Approx(2 * r * 2.0));
  CHECK(grads[0][1] == doctest::Approx(2 * r * 3.0));
  CHECK(grads[1][0] == doctest::Approx(2 * r));

  // exact fit: zero gradients
  net.parameters()[1][0] += -r;
  const Batch<double> y2 = net.forward(x, tape);
  net.backward(tape, 2.0 * (y2.array() - target).matrix(), grads);
  CHECK(grads[0].data().norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("network gradients match finite differences") {
  auto rng = seed_stream(15, "gc");
  struct Case {
    const char* name;
    Shape in;
    std::vector<LayerSpec> specs;
  };
  const std::vector<Case> cases{
      {"mlp", {5}, {LayerSpec::dense(7, Activation::relu), LayerSpec::dense(3, Activation::sigmoid), LayerSpec::dense(2, Activation::linear)}},
      {"conv", {2, 6, 6}, {LayerSpec::conv2d(3, 3, 1, 1, Activation::sigmoid), LayerSpec::conv2d(1, 3, 1, 1, Activation::linear)}},
      {"strided conv", {2, 7, 7}, {LayerSpec::conv2d(3, 3, 2, 1, Activation::linear)}},
      {"pool", {2, 6, 6}, {LayerSpec::maxpool2d(3, 3)}},
      {"tconv", {2, 3, 3}, {LayerSpec::tconv2d(3, 9, 3, 3, Activation::sigmoid)}},
      {"tconv generic", {2, 3, 3}, {LayerSpec::tconv2d(2, 5, 3, 1, Activation::linear)}},
      {"reshape", {6}, {LayerSpec::dense(8, Activation::linear), LayerSpec::reshape({2, 2, 2}),
                        LayerSpec::conv2d(1, 3, 1, 1, Activation::linear)}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    Sequential<double> net(c.in, c.specs);
    net.initialize(rng);
    for (auto& p : net.parameters()) p = random_tensor(p.shape(), rng, -0.5, 0.5);
    const Batch<double> x = random_batch(shape_size(c.in), 2, rng);
    const Batch<double> t = random_batch(shape_size(net.output_shape()), 2, rng);
    const auto r = gridpost::testing::check_network_gradients(net, x, t);
    CHECK(r.params.max_rel_error < 1e-4);
    CHECK(r.input.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check on x squared") {
  Eigen::VectorXd x(1), g(1);
  x << 3.0;
  g << 6.0;
  const auto r = grad_check([](const Eigen::VectorXd& v) { return v[0] * v[0]; }, x, g);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.checked == 1);
}

TEST_CASE("grad_check skips a kink") {
  Eigen::VectorXd x(2), g(2);
  x << 0.0, 2.0;
  g << 0.0, 1.0;
  const auto r = grad_check([](const Eigen::VectorXd& v) { return std::max(v[0], 0.0) + v[1]; }, x, g);
  CHECK(r.skipped == 1);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("adam") {
  std::vector<Tensor<double>> p{Tensor<double>({3}, {1, -2, 0.5})};
  auto st = AdamState<double>::for_parameters(p, 1e-3);
  SUBCASE("zero gradient leaves parameters unchanged") {
    const auto before = p[0];
    adam_step(p, {Tensor<double>({3})}, st);
    CHECK(p[0] == before);
    CHECK(st.step == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    adam_step(p, {Tensor<double>({3}, {0.3, -4.0, 1e-3})}, st);
    CHECK(p[0][0] == doctest::Approx(1 - 1e-3).epsilon(1e-6));
    CHECK(p[0][1] == doctest::Approx(-2 + 1e-3).epsilon(1e-6));
    CHECK(p[0][2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-4));
  }
  SUBCASE("constant gradient keeps moving the same way") {
    const Tensor<double> g({3}, {1, 1, 1});
    adam_step(p, {g}, st);
    const double a = p[0][0];
    adam_step(p, {g}, st);
    CHECK(p[0][0] < a);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(adam_step(p, {Tensor<double>({2})}, st), DimensionError);
  }
}

TEST_CASE("embedding lookup and scatter-add gradient") {
  Embedding<double> e(3, 2);
  e.table = Tensor<double>({3, 2}, {1, 2, 3, 4, 5, 6});
  const std::vector<Index> ids{2, 0, 2};
  const Batch<double> out = e.forward(ids);
  CHECK(out(0, 0) == 5);
  CHECK(out(1, 1) == 2);
  Tensor<double> g;
  e.backward(ids, Batch<double>::Ones(2, 3), g);
  CHECK(g.at({2, 0}) == 2);
  CHECK(g.at({1, 0}) == 0);
  const std::vector<Index> bad{3};
  CHECK_THROWS_AS(e.forward(bad), DomainError);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  auto run = [] {
    auto rng = seed_stream(5, "init");
    Sequential<float> net({1, 9, 9}, {LayerSpec::conv2d(2, 3, 1, 1, Activation::relu), LayerSpec::maxpool2d(3, 3),
                                      LayerSpec::dense(2, Activation::linear)});
    net.initialize(rng);
    auto st = AdamState<float>::for_parameters(net.parameters(), 1e-2);
    auto drng = seed_stream(5, "data");
    const Batch<float> x = random_batch(81, 4, drng).cast<float>();
    Tape<float> tape;
    std::vector<Tensor<float>> grads;
    for (int i = 0; i < 5; ++i) {
      const Batch<float> y = net.forward(x, tape);
      net.backward(tape, y, grads, false);
      adam_step(net.parameters(), grads, st);
    }
    return net.parameters();
  };
  CHECK(run() == run());
}

TEST_CASE("cast and flatten round trip") {
  auto rng = seed_stream(16, "cast");
  Sequential<double> net({3}, {LayerSpec::dense(2, Activation::relu)});
  net.initialize(rng);
  const auto f = net.cast<float>();
  CHECK(f.parameters()[0][1] == static_cast<float>(net.parameters()[0][1]));
  auto params = net.parameters();
  const Eigen::VectorXd flat = flatten_parameters(params);
  CHECK(flat.size() == net.parameter_count());
  unflatten_parameters(flat * 2.0, params);
  CHECK(params[0][0] == 2.0 * net.parameters()[0][0]);
}
