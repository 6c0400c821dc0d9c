#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridpost/postproc.hpp"

namespace gridpost {

/// Forecasts for a set of (date, station) pairs with the matching
/// observations (NaN when missing).
struct ForecastSet {
  std::vector<std::string> dates;
  std::vector<std::string> station_ids;
  std::vector<GaussianForecast> forecasts;
  std::vector<double> obs;

  std::size_t size() const { return forecasts.size(); }
};

ForecastSet make_forecast_set(const Dataset& data, std::vector<GaussianForecast> forecasts);

/// CSV `date,station_id,mu,sigma`.
void write_forecasts_csv(const std::filesystem::path& path, const ForecastSet& set);

struct CrpsSummary {
  double mean = 0.0;
  std::size_t count = 0;
  std::size_t skipped = 0;  // missing observations
};

/// Mean CRPS over pairs with an observation; DataError when there are none.
CrpsSummary mean_crps(std::span<const GaussianForecast> forecasts, std::span<const double> obs);
CrpsSummary mean_crps(const ForecastSet& set);

struct StationSkill {
  std::string station_id;
  std::size_t count = 0;
  double crps = 0.0;
  double reference_crps = 0.0;
  double crpss = 0.0;
  double dm_statistic = 0.0;
  double p_value = 1.0;  // NaN when fewer than 10 dates
  bool significant = false;
};

/// Per-station CRPSS of model against reference with a DM test on the
/// per-date score series. Throws PairingError when the two sets do not
/// cover the same (date, station) pairs.
std::vector<StationSkill> station_crpss(const ForecastSet& model, const ForecastSet& reference, double alpha = 0.05);

void write_station_skill_csv(const std::filesystem::path& path, std::span<const StationSkill> rows);

/// DM test on per-date CRPS averaged over stations.
DmResult pooled_dm(const ForecastSet& model, const ForecastSet& reference);

/// Per-date mean CRPS over stations, dates in ascending order.
std::vector<double> daily_mean_crps(const ForecastSet& set);

// --- permutation importance ---------------------------------------------

struct ImportanceOptions {
  std::uint64_t seed = 0;
  int repeats = 0;         // members used; 0 = all
  bool identity = false;   // identity permutation (diagnostic)
};

struct ImportanceRow {
  std::string feature;
  double mean_delta = 0.0;
  double sd_delta = 0.0;   // across repetitions
  int repeats = 0;
};

/// Feature groups: each predictor and meta column on its own, the codes of
/// a spatial variable as one block, and the station embedding as a block.
std::vector<std::pair<std::string, std::vector<Index>>> importance_groups(const FeatureLayout& layout);

std::vector<ImportanceRow> permutation_importance(const DrnModel& model, const DrnInputs& inputs,
                                                  const ImportanceOptions& options = {});

void write_importance_csv(const std::filesystem::path& path, std::span<const ImportanceRow> rows);

// --- curves --------------------------------------------------------------

struct ReconModel {
  std::string method;  // convae | pca
  Index h = 0;
  std::function<double(std::span<const FieldMatrix>)> mse;
};

struct ReconRow {
  Index h = 0;
  std::string method;
  std::string split;
  double mse = 0.0;
};

/// Rows ordered by h, then method, then split (train, test).
std::vector<ReconRow> recon_curve(std::span<const ReconModel> models, std::span<const Index> hs,
                                  std::span<const std::string> methods, std::span<const FieldMatrix> train01,
                                  std::span<const FieldMatrix> test01);

void write_recon_csv(const std::filesystem::path& path, std::span<const ReconRow> rows);

struct SweepRow {
  Index embed_dim = 0;
  std::string spatial_mode;
  double mean_crps = 0.0;
};

std::vector<SweepRow> embed_sweep(const DrnConfig& base, std::span<const Index> dims, const DatasetSplit& split,
                                  std::span<const SpatialEncoder> encoders);

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

/// Shortest round-trip text for a double, used in every emitted CSV.
std::string format_number(double v);

}  // namespace gridpost
