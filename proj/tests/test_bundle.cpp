#include <doctest.h>

#include <cstring>
#include <fstream>

#include "gridpost/bundle.hpp"
#include "gridpost/errors.hpp"
#include "support.hpp"
#include "toy_data.hpp"

using namespace gridpost;
using gridpost::testing::TempDir;
using gridpost::testing::ToyOptions;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("bundle container") {
  TempDir dir("bundle");
  const auto path = dir.path / "x.bundle";
  Bundle b;
  b.kind = "test";
  b.created = "2020-01-01T00:00:00Z";
  b.meta["answer"] = 42;
  std::mt19937_64 rng(1);
  const Tensor<float> t = gridpost::testing::random_tensor<float>({2, 3, 4}, rng);
  RowMat<double> m(2, 2);
  m << 1.0, 2.0, 3.0, 4.0 + 1e-15;
  b.put("t", t);
  b.put("m", m);
  save_bundle(path, b);

  SUBCASE("round trip") {
    const Bundle r = load_bundle(path);
    CHECK(r.kind == "test");
    CHECK(r.created == b.created);
    CHECK(r.meta["answer"] == 42);
    CHECK(r.tensor("t") == t);
    CHECK(r.matrix("m") == m);
    CHECK_THROWS_AS(r.tensor("m"), BundleError);
    CHECK_THROWS_AS(r.blob("nope"), BundleError);
    CHECK_THROWS_AS(expect_kind(r, "emos"), BundleError);
  }

  SUBCASE("saving is byte-stable") {
    const auto other = dir.path / "y.bundle";
    save_bundle(other, load_bundle(path));
    CHECK(read_bytes(other) == read_bytes(path));
  }

  SUBCASE("damaged files") {
    const std::string bytes = read_bytes(path);
    std::string bad = bytes;
    bad[0] = 'X';
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_bundle(path), FormatError);
    write_bytes(path, bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_bundle(path), FormatError);
    write_bytes(path, bytes + "junk");
    CHECK_THROWS_AS(load_bundle(path), FormatError);
    bad = bytes;
    bad[16] = '#';  // first byte of the JSON header
    write_bytes(path, bad);
    CHECK_THROWS_AS(load_bundle(path), FormatError);
    CHECK_THROWS_AS(load_bundle(dir.path / "missing"), IoError);
  }
}

TEST_CASE("model bundles round trip") {
  TempDir dir("models");
  ToyOptions o;
  o.offsets = {1.0, -1.0};
  o.with_grid = true;
  o.days = 120;
  const Dataset train = gridpost::testing::toy_dataset(o);
  o.first_day = 120;
  o.days = 40;
  o.seed = 3;
  const Dataset val = gridpost::testing::toy_dataset(o);

  SUBCASE("emos") {
    const EmosModel m = emos_train(train);
    save_bundle(dir.path / "e", emos_bundle(m));
    const EmosModel r = emos_from_bundle(load_bundle(dir.path / "e"));
    const auto a = emos_predict(m, val), b = emos_predict(r, val);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].mu == b[i].mu);
      CHECK(a[i].sigma == b[i].sigma);
    }
    CHECK_THROWS_AS(pca_from_bundle(load_bundle(dir.path / "e")), BundleError);
  }

  SUBCASE("pca") {
    const SpatialEncoder e = gridpost::testing::toy_pca_encoder(train, 3);
    save_bundle(dir.path / "p", encoder_bundle(e));
    const SpatialEncoder r = encoder_from_bundle(load_bundle(dir.path / "p"));
    CHECK(r.method == SpatialMode::pca);
    CHECK(r.variable == "t2m");
    CHECK(r.encode(val) == e.encode(val));
  }

  SUBCASE("convae") {
    ConvAeConfig c;
    c.latent_dim = 2;
    c.height = c.width = 9;
    c.encoder_filters = {3};
    c.decoder_filters = {2};
    c.bridge_width = 5;
    SpatialEncoder e;
    e.variable = "t2m";
    e.method = SpatialMode::convae;
    e.convae = convae_build(c);
    save_bundle(dir.path / "c", encoder_bundle(e));
    const Bundle b = load_bundle(dir.path / "c");
    const ConvAeModel r = convae_from_bundle(b);
    CHECK(r.parameter_count() == e.convae->parameter_count());
    for (std::size_t i = 0; i < r.encoder.parameters().size(); ++i) {
      CHECK(r.encoder.parameters()[i] == e.convae->encoder.parameters()[i]);
    }

    Bundle wrong = b;
    wrong.meta["config"]["bridge_width"] = 16;
    CHECK_THROWS_AS(convae_from_bundle(wrong), BundleError);
  }

  SUBCASE("drn with its encoder") {
    const std::vector<SpatialEncoder> enc{gridpost::testing::toy_pca_encoder(train, 2)};
    DrnConfig cfg = gridpost::testing::toy_drn_config();
    cfg.max_epochs = 5;
    cfg.spatial_mode = SpatialMode::pca;
    cfg.spatial_variables = {"t2m"};
    cfg.latent_dim = 2;
    const DrnModel m = drn_train(cfg, train, val, enc);
    save_bundle(dir.path / "d", drn_bundle(m, enc));

    std::vector<SpatialEncoder> enc2;
    const DrnModel r = drn_from_bundle(load_bundle(dir.path / "d"), &enc2);
    REQUIRE(enc2.size() == 1);
    CHECK(r.layout.names == m.layout.names);
    CHECK(r.members.size() == m.members.size());
    CHECK(r.members[0].history.size() == m.members[0].history.size());

    const auto a = drn_predict(m, drn_inputs(m, assemble_features(val, enc)));
    const auto b = drn_predict(r, drn_inputs(r, assemble_features(val, enc2)));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].mu == b[i].mu);
      CHECK(a[i].sigma == b[i].sigma);
    }
    CHECK(load_bundle(dir.path / "d").meta["deviations"].size() == drn_deviations().size());
  }
}
