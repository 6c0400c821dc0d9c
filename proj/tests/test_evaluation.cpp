#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "gridpost/errors.hpp"
#include "gridpost/evaluation.hpp"
#include "support.hpp"
#include "toy_data.hpp"

using namespace gridpost;
using gridpost::testing::TempDir;
using gridpost::testing::ToyOptions;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ForecastSet toy_set(int days, int stations, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  ForecastSet s;
  for (int t = 0; t < days; ++t)
    for (int k = 0; k < stations; ++k) {
      s.dates.push_back(synthetic_date(t));
      s.station_ids.push_back("S" + std::to_string(k));
      s.forecasts.push_back({0.0, sigma});
      s.obs.push_back(z(rng));
    }
  return s;
}

}  // namespace

TEST_CASE("mean_crps") {
  // crps(N(0,1), 0) = 2 phi(0) - 1/sqrt(pi)
  const double c0 = 2.0 / std::sqrt(2.0 * M_PI) - 1.0 / std::sqrt(M_PI);
  const std::vector<GaussianForecast> f{{0.0, 1.0}, {0.0, 2.0}, {5.0, 1.0}};
  const std::vector<double> y{0.0, 0.0, std::nan("")};
  const CrpsSummary s = mean_crps(f, y);
  CHECK(s.count == 2);
  CHECK(s.skipped == 1);
  CHECK(s.mean == doctest::Approx(1.5 * c0));

  const std::vector<double> none{std::nan(""), std::nan(""), std::nan("")};
  CHECK_THROWS_AS(mean_crps(f, none), DataError);
  CHECK_THROWS_AS(mean_crps(f, std::vector<double>{0.0}), PairingError);
}

TEST_CASE("station skill") {
  const ForecastSet a = toy_set(30, 2, 1.0, 1);

  SUBCASE("against itself") {
    for (const auto& r : station_crpss(a, a)) {
      CHECK(r.crpss == 0.0);
      CHECK(r.p_value == 1.0);
      CHECK_FALSE(r.significant);
      CHECK(r.count == 30);
    }
  }

  SUBCASE("antisymmetric statistic") {
    ForecastSet b = a;
    for (auto& f : b.forecasts) f.sigma = 2.0;
    const auto ab = station_crpss(a, b), ba = station_crpss(b, a);
    REQUIRE(ab.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(ab[i].dm_statistic == doctest::Approx(-ba[i].dm_statistic));
      CHECK(ab[i].p_value == doctest::Approx(ba[i].p_value));
      CHECK(ab[i].crpss > 0.0);
      CHECK(ab[i].crps == ba[i].reference_crps);
    }
  }

  SUBCASE("short series leave the test undefined") {
    const ForecastSet s = toy_set(9, 1, 1.0, 2);
    const auto r = station_crpss(s, s);
    CHECK(std::isnan(r[0].p_value));
    CHECK_FALSE(r[0].significant);
  }

  SUBCASE("unpaired sets") {
    ForecastSet b = a;
    b.dates[5] = "2099-01-01";
    try {
      station_crpss(a, b);
      FAIL("expected PairingError");
    } catch (const PairingError& e) {
      CHECK(std::string(e.what()).find("2099-01-01") != std::string::npos);
    }
    ForecastSet dup = a;
    dup.dates[1] = dup.dates[3];
    dup.station_ids[1] = dup.station_ids[3];
    CHECK_THROWS_AS(station_crpss(dup, a), PairingError);
  }

  SUBCASE("csv") {
    TempDir dir("skill");
    write_station_skill_csv(dir.path / "s.csv", station_crpss(a, a));
    const std::string text = slurp(dir.path / "s.csv");
    CHECK(text.rfind("station_id,n,crps,reference_crps,crpss,dm_stat,p_value,significant\nS0,30,", 0) == 0);
  }
}

TEST_CASE("pooled DM averages stations per date") {
  const ForecastSet a = toy_set(40, 3, 1.0, 4);
  ForecastSet b = a;
  for (auto& f : b.forecasts) f.sigma = 1.6;
  std::vector<double> da, db;
  for (int t = 0; t < 40; ++t) {
    double sa = 0, sb = 0;
    for (int k = 0; k < 3; ++k) {
      sa += crps_gaussian(a.forecasts[3 * t + k], a.obs[3 * t + k]);
      sb += crps_gaussian(b.forecasts[3 * t + k], a.obs[3 * t + k]);
    }
    da.push_back(sa / 3);
    db.push_back(sb / 3);
  }
  const DmResult want = dm_test(da, db), got = pooled_dm(a, b);
  CHECK(got.statistic == doctest::Approx(want.statistic).epsilon(1e-12));
  CHECK(got.p_value == doctest::Approx(want.p_value).epsilon(1e-12));
  CHECK(daily_mean_crps(a) == da);
}

TEST_CASE("forecast csv uses shortest round-trip numbers") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(2.0) == "2");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  ForecastSet s;
  s.dates = {"2007-01-01"};
  s.station_ids = {"S0"};
  s.forecasts = {{281.25, 0.5}};
  s.obs = {0.0};
  TempDir dir("fc");
  write_forecasts_csv(dir.path / "f.csv", s);
  CHECK(slurp(dir.path / "f.csv") == "date,station_id,mu,sigma\n2007-01-01,S0,281.25,0.5\n");
}

TEST_CASE("permutation importance") {
  ToyOptions o;
  o.offsets = {1.5, -1.5, 0.0};
  o.with_grid = true;
  const Dataset train = gridpost::testing::toy_dataset(o);
  o.first_day = 200;
  o.days = 60;
  o.seed = 2;
  const Dataset val = gridpost::testing::toy_dataset(o);
  const std::vector<SpatialEncoder> enc{gridpost::testing::toy_pca_encoder(train, 2)};
  DrnConfig cfg = gridpost::testing::toy_drn_config();
  cfg.spatial_mode = SpatialMode::pca;
  cfg.spatial_variables = {"t2m"};
  cfg.latent_dim = 2;
  const DrnModel model = drn_train(cfg, train, val, enc);
  const DrnInputs in = drn_inputs(model, assemble_features(val, enc));

  const auto groups = importance_groups(model.layout);
  REQUIRE(groups.size() == 8);
  CHECK(groups[6].first == "t2m_codes");
  CHECK(groups[6].second == std::vector<Index>{6, 7});
  CHECK(groups[7].first == "station_embedding");

  SUBCASE("identity permutation changes nothing") {
    ImportanceOptions opt;
    opt.identity = true;
    for (const auto& r : permutation_importance(model, in, opt)) {
      CHECK(r.mean_delta == 0.0);
      CHECK(r.sd_delta == 0.0);
      CHECK(r.repeats == 2);
    }
  }

  SUBCASE("signal features matter, constant ones do not") {
    const auto rows = permutation_importance(model, in, {3, 0, false});
    auto row = [&](const std::string& n) {
      return *std::find_if(rows.begin(), rows.end(), [&](const ImportanceRow& r) { return r.feature == n; });
    };
    CHECK(row("lat").mean_delta == 0.0);
    CHECK(row("orography").mean_delta == 0.0);
    CHECK(row("t2m_mean").mean_delta > 0.5);
    CHECK(row("station_embedding").mean_delta > 0.2);
    const auto again = permutation_importance(model, in, {3, 0, false});
    CHECK(again[0].mean_delta == rows[0].mean_delta);
  }

  SUBCASE("repeat count") {
    CHECK(permutation_importance(model, in, {1, 1, false})[0].repeats == 1);
    CHECK_THROWS_AS(permutation_importance(model, in, {1, 3, false}), ConfigError);
  }
}

TEST_CASE("reconstruction curve rows") {
  std::vector<ReconModel> models;
  for (Index h : {1, 2})
    for (std::string m : {"pca", "convae"})
      models.push_back({m, h, [h](std::span<const FieldMatrix> f) { return static_cast<double>(f.size()) / h; }});
  const std::vector<FieldMatrix> train(4, FieldMatrix::Zero(2, 2)), test(2, FieldMatrix::Zero(2, 2));
  const std::vector<Index> hs{1, 2};
  const std::vector<std::string> methods{"convae", "pca"};
  const auto rows = recon_curve(models, hs, methods, train, test);
  REQUIRE(rows.size() == 8);
  CHECK(rows[0].method == "convae");
  CHECK(rows[0].split == "train");
  CHECK(rows[0].mse == 4.0);
  CHECK(rows[7].h == 2);
  CHECK(rows[7].split == "test");
  CHECK(rows[7].mse == 1.0);

  const std::vector<Index> bad{3};
  CHECK_THROWS_AS(recon_curve(models, bad, methods, train, test), ConfigError);

  TempDir dir("recon");
  write_recon_csv(dir.path / "r.csv", rows);
  CHECK(slurp(dir.path / "r.csv").rfind("h,method,split,mse\n1,convae,train,4\n", 0) == 0);
}
