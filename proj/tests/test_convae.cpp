#include <doctest.h>

#include <random>

#include "gridpost/convae.hpp"
#include "gridpost/errors.hpp"
#include "support.hpp"

using namespace gridpost;

namespace {

// 27x27 fields through three pool stages and three x3 decoder stages.
ConvAeConfig small_config(Index h) {
  ConvAeConfig c;
  c.latent_dim = h;
  c.height = c.width = 27;
  c.bridge_width = 16;
  return c;
}

std::vector<FieldMatrix> smooth_fields(int n, Index size, double ell, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FieldMatrix> out;
  for (int i = 0; i < n; ++i) {
    GridField f;
    f.values = gaussian_random_field(size, size, ell, rng).cast<float>();
    out.push_back(minmax_normalize(f).field.values);
  }
  return out;
}

double mean_field_mse(const std::vector<FieldMatrix>& fields) {
  FieldMatrix mean = FieldMatrix::Zero(fields[0].rows(), fields[0].cols());
  for (const auto& f : fields) mean += f;
  mean /= static_cast<float>(fields.size());
  double s = 0;
  for (const auto& f : fields) s += (f - mean).cast<double>().squaredNorm();
  return s / static_cast<double>(fields.size() * fields[0].size());
}

}  // namespace

TEST_CASE("convae default geometry") {
  const ConvAeModel m = convae_build(ConvAeConfig{});
  CHECK(m.encoder.output_shape() == Shape{2});
  CHECK(m.decoder.output_shape() == Shape{1, 81, 81});
  // conv16, pool, conv8, pool, conv4, pool -> 4x3x3
  CHECK(m.encoder.layer_output_shape(5) == Shape{4, 3, 3});
  CHECK(m.decoder.layer_output_shape(2) == Shape{4, 3, 3});
  CHECK(m.decoder.layer_output_shape(3) == Shape{4, 9, 9});
  CHECK(m.decoder.layer_output_shape(5) == Shape{16, 81, 81});
  // encoder 160 + 1160 + 292 + 2368 + 130, decoder 192 + 2340 + 1300 + 2600 + 10384 + 145
  CHECK(m.encoder.parameter_count() == 4110);
  CHECK(m.decoder.parameter_count() == 16961);
  CHECK(m.parameter_count() == convae_build(ConvAeConfig{}).parameter_count());

  const auto notes = ConvAeConfig{}.deviations();
  REQUIRE(notes.size() == 4);
  CHECK(notes[0].find("stride 3") != std::string::npos);
  CHECK(notes[2].find("64") != std::string::npos);
}

TEST_CASE("convae build errors and literal pooling") {
  ConvAeConfig c;
  c.latent_dim = 0;
  CHECK_THROWS_AS(convae_build(c), ConfigError);
  c.latent_dim = 2;
  c.height = 80;
  CHECK_THROWS_WITH_AS(convae_build(c), doctest::Contains("decoder layer"), ConfigError);

  ConvAeConfig lit;
  lit.pool_stride = 1;
  const ConvAeModel m = convae_build(lit);
  CHECK(m.encoder.layer_output_shape(5) == Shape{4, 75, 75});
  CHECK(m.decoder.output_shape() == Shape{1, 81, 81});
  CHECK(lit.deviations()[0].find("stride 1") != std::string::npos);
}

TEST_CASE("convae encode and decode contracts") {
  const auto fields = smooth_fields(3, 81, 6.0, 1);
  for (Index h : {1, 2, 4, 8, 16, 32}) {
    ConvAeConfig c;
    c.latent_dim = h;
    const ConvAeModel m = convae_build(c);
    const Vec<float> code = m.encode(fields[0]);
    CHECK(code.size() == h);
    CHECK((code.array() == m.encode(fields[0]).array()).all());
  }

  const ConvAeModel m = convae_build(ConvAeConfig{});
  SUBCASE("normalization invariance") {
    GridField raw{GridSpec{}, "t2m", "2007-01-01", (fields[1].array() * 25.0f + 270.0f).matrix()};
    GridField raw2 = raw;
    raw2.values = (fields[1].array() * 3.0f - 5.0f).matrix();
    const Vec<float> a = m.encode(minmax_normalize(raw).field.values);
    const Vec<float> b = m.encode(minmax_normalize(raw2).field.values);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5f);
  }
  SUBCASE("decode range and determinism") {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> g(0.0f, 50.0f);
    for (int i = 0; i < 5; ++i) {
      Vec<float> code(2);
      code << g(rng), g(rng);
      const FieldMatrix y = m.decode(code);
      CHECK(y.rows() == 81);
      CHECK(y.minCoeff() > 0.0f);
      CHECK(y.maxCoeff() < 1.0f);
    }
    CHECK(m.decode(Vec<float>::Zero(2)) == convae_build(ConvAeConfig{}).decode(Vec<float>::Zero(2)));
    CHECK(reconstruction_mse(m, fields) <= 1.0);
  }
  SUBCASE("batch paths agree") {
    const Batch<float> x = fields_to_batch(fields);
    const Batch<float> codes = m.encode_batch(x);
    CHECK((codes.col(2) - m.encode(fields[2])).cwiseAbs().maxCoeff() < 1e-6f);
    const Batch<float> y = m.decode_batch(codes);
    CHECK((y.col(1) - Eigen::Map<const Vec<float>>(m.decode(codes.col(1)).data(), 81 * 81)).cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("input errors") {
    CHECK_THROWS_AS(m.encode(FieldMatrix::Zero(80, 81)), DimensionError);
    FieldMatrix bad = fields[0];
    bad(3, 3) = 1.5f;
    CHECK_THROWS_AS(m.encode(bad), DomainError);
    CHECK_THROWS_AS(m.decode(Vec<float>::Zero(3)), DimensionError);
  }
}

TEST_CASE("convae gradients on a 9x9 geometry") {
  ConvAeConfig c;
  c.height = c.width = 9;
  c.latent_dim = 3;
  c.encoder_filters = {3};
  c.decoder_filters = {2};
  c.bridge_width = 5;
  const ConvAeModel m = convae_build(c);

  std::vector<LayerSpec> specs = m.encoder.specs();
  specs.insert(specs.end(), m.decoder.specs().begin(), m.decoder.specs().end());
  Sequential<double> full({1, 9, 9}, specs);
  CHECK(full.output_shape() == Shape{1, 9, 9});
  const auto enc = m.encoder.cast<double>().parameters();
  const auto dec = m.decoder.cast<double>().parameters();
  std::vector<Tensor<double>> params = enc;
  params.insert(params.end(), dec.begin(), dec.end());
  REQUIRE(params.size() == full.parameters().size());
  full.parameters() = params;

  std::mt19937_64 rng(9);
  const Batch<double> x = gridpost::testing::random_batch(81, 2, rng, 0.0, 1.0);
  const auto r = gridpost::testing::check_network_gradients(full, x, x);
  CHECK(r.params.max_rel_error < 1e-4);
  CHECK(r.input.max_rel_error < 1e-4);
  CHECK(r.params.checked > r.params.skipped);
}

TEST_CASE("convae training") {
  const auto train = smooth_fields(200, 27, 3.0, 10);
  const auto val = smooth_fields(40, 27, 3.0, 11);

  ConvAeConfig cfg = small_config(8);
  cfg.max_epochs = 40;
  cfg.seed = 3;
  ConvAeModel m = convae_build(cfg);
  int calls = 0;
  convae_train(m, train, val, [&](const EpochRecord& r) { CHECK(r.epoch == ++calls); });
  CHECK(calls == static_cast<int>(m.history.size()));
  CHECK(m.history.size() <= 40);
  REQUIRE(m.best_epoch >= 1);
  CHECK(m.history[m.best_epoch - 1].val_mse <= m.history[0].val_mse);
  // restore-best: the returned weights give exactly the best validation score
  CHECK(reconstruction_mse(m, val) == m.history[m.best_epoch - 1].val_mse);
  CHECK(reconstruction_mse(m, train) < mean_field_mse(train));

  SUBCASE("fixed seed reproduces the history") {
    ConvAeConfig c2 = small_config(2);
    c2.max_epochs = 3;
    ConvAeModel a = convae_build(c2), b = convae_build(c2);
    const std::span<const FieldMatrix> t(train.data(), 64), v(val.data(), 16);
    convae_train(a, t, v);
    convae_train(b, t, v);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].train_mse == b.history[i].train_mse);
      CHECK(a.history[i].val_mse == b.history[i].val_mse);
    }
    CHECK(a.encode(val[0]) == b.encode(val[0]));
  }
}

TEST_CASE("convae early stopping and training errors") {
  const auto train = smooth_fields(16, 27, 3.0, 20);
  const auto val = smooth_fields(8, 27, 3.0, 21);

  SUBCASE("plateau triggers patience") {
    ConvAeConfig c = small_config(2);
    c.learning_rate = 1e-30;  // updates vanish in float, validation MSE is flat
    c.patience = 3;
    ConvAeModel m = convae_build(c);
    convae_train(m, train, val);
    CHECK(m.history.size() == 4);
    CHECK(m.best_epoch == 1);
    CHECK(m.best_epoch < m.history.back().epoch);
  }
  SUBCASE("non-finite loss names epoch and batch") {
    ConvAeModel m = convae_build(small_config(2));
    m.decoder.parameters()[0][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(convae_train(m, train, val), doctest::Contains("epoch 1 batch 0"), TrainingError);
  }
  SUBCASE("inputs outside [0,1]") {
    ConvAeModel m = convae_build(small_config(2));
    auto bad = train;
    bad[4](0, 0) = -0.1f;
    CHECK_THROWS_AS(convae_train(m, bad, val), DomainError);
  }
}
