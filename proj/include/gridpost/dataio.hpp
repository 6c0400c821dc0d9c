#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gridpost/tensor.hpp"

namespace gridpost {

/// Regular lat/lon grid. Rows run north to south, columns west to east.
struct GridSpec {
  double lon0 = -10.0;
  double lat0 = 30.0;
  double dlon = 0.5;
  double dlat = 0.5;
  Index nlon = 81;
  Index nlat = 81;

  void validate() const;
  double lat_max() const { return lat0 + static_cast<double>(nlat - 1) * dlat; }
  double lon_max() const { return lon0 + static_cast<double>(nlon - 1) * dlon; }
  double lat_of_row(Index r) const { return lat_max() - static_cast<double>(r) * dlat; }
  double lon_of_col(Index c) const { return lon0 + static_cast<double>(c) * dlon; }
  bool contains(double lat, double lon) const;
  bool operator==(const GridSpec&) const = default;
};

using FieldMatrix = RowMat<float>;

struct GridField {
  GridSpec spec;
  std::string variable;
  std::string valid_date;  // YYYY-MM-DD
  FieldMatrix values;      // [nlat, nlon]
};

struct NormalizedField {
  GridField field;
  double min = 0.0;
  double max = 0.0;
};

/// Per-field rescaling to [0,1]; constant fields map to 0.5.
NormalizedField minmax_normalize(const GridField& field);

/// Four-node stencil of a bilinear interpolation at a fixed location.
struct BilinearStencil {
  Index row = 0, col = 0;  // north-west node
  double w00 = 0, w01 = 0, w10 = 0, w11 = 0;

  template <typename Derived>
  double apply(const Eigen::DenseBase<Derived>& v) const {
    return w00 * static_cast<double>(v(row, col)) + w01 * static_cast<double>(v(row, col + 1)) +
           w10 * static_cast<double>(v(row + 1, col)) + w11 * static_cast<double>(v(row + 1, col + 1));
  }
};

BilinearStencil bilinear_stencil(const GridSpec& spec, double lat, double lon);

double bilinear_interpolate(const GridField& field, double lat, double lon);

// --- grid binary format ("GFB1") ----------------------------------------

void write_grid(const std::filesystem::path& path, std::span<const GridField> fields);
std::vector<GridField> read_grid(const std::filesystem::path& path);

// --- station tables ------------------------------------------------------

struct Station {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  double altitude = 0.0;
  double orography = 0.0;
};

struct Observation {
  std::string date;
  std::string station_id;
  std::optional<double> value;
};

struct PredictorRow {
  std::string date;
  std::string station_id;
  std::vector<double> values;
};

struct PredictorTable {
  std::vector<std::string> names;
  std::vector<PredictorRow> rows;
};

std::vector<Station> read_stations(const std::filesystem::path& path, const GridSpec& grid);
void write_stations(const std::filesystem::path& path, std::span<const Station> stations);
std::vector<Observation> read_observations(const std::filesystem::path& path);
void write_observations(const std::filesystem::path& path, std::span<const Observation> obs);
PredictorTable read_predictors(const std::filesystem::path& path);
void write_predictors(const std::filesystem::path& path, const PredictorTable& table);

/// One (station, date) row.
struct StationSample {
  std::string station_id;
  Index station = 0;  // position in Dataset::stations
  std::string date;
  std::vector<double> predictors;
  Station meta;
  std::optional<double> observation;
  std::vector<double> members;  // raw target-variable ensemble, when known
  double oracle_mu = std::numeric_limits<double>::quiet_NaN();  // generator-internal expected obs
};

struct Dataset {
  GridSpec grid;
  std::vector<std::string> predictor_names;
  std::vector<Station> stations;
  std::vector<std::string> dates;                         // sorted, unique
  std::vector<StationSample> samples;                     // sorted by (date, station)
  std::map<std::string, std::vector<GridField>> fields;   // per variable, aligned with dates

  Index station_index(const std::string& id) const;
  Index predictor_index(const std::string& name) const;
  const GridField& field(const std::string& variable, std::size_t date_index) const;
  std::size_t date_index(const std::string& date) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Sorts by date, then assigns dates <= train_end to train, dates in
/// (train_end, val_end] to validation and the rest to test.
DatasetSplit chronological_split(const Dataset& data, const std::string& train_end,
                                 const std::string& val_end);

/// Last 360-day year is test, the one before validation; datasets shorter
/// than three years fall back to a 60/20/20 split of the dates.
std::pair<std::string, std::string> default_split_dates(const Dataset& data);

/// Date of day index in a 360-day calendar (twelve 30-day months).
std::string synthetic_date(int day, int start_year = 2007);

void write_dataset(const std::filesystem::path& dir, const Dataset& data);

/// Loads stations, observations and predictors, plus the grids of the
/// requested variables (grid_<var>.gfb).
Dataset load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& grid_variables);

// --- synthetic generator -------------------------------------------------

struct SynthConfig {
  int variables = 4;
  int stations = 50;
  int days = 1080;
  int members = 20;
  double length_scale = 6.0;   // Gaussian kernel sd in grid cells
  double bias = 2.0;           // ensemble bias of the target, physical units
  double bias_pattern = 0.5;   // amplitude of the smooth bias pattern, standardized units
  double gamma = 0.0;          // weight of the large-scale signal <P, truth>
  double quadratic = 0.0;      // weight of the quadratic predictor term
  double obs_noise = 0.6;      // observation noise sd, physical units
  double spread = 0.2;         // member noise sd, standardized units
  double station_bias_sd = 0.5;
  double lapse_rate = -0.0065;  // K per metre of altitude above model orography
  double missing_fraction = 0.0;
  int noise_rank = 24;
  int start_year = 2007;
  GridSpec grid;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  std::vector<FieldMatrix> truth;   // target variable, physical units, per day
  RowMat<double> pattern;           // P: zero mean, unit RMS
  std::vector<double> signal;       // gamma * <P, truth> per day
};

std::vector<std::string> synthetic_variable_names(int count);

/// Mean over grid points of pattern * field.
double pattern_projection(const RowMat<double>& pattern, const FieldMatrix& field);

SyntheticData synth_generate(const SynthConfig& config, std::uint64_t seed);

/// White noise smoothed by a Gaussian kernel (sd = length_scale cells) on a
/// padded domain, cropped and standardized to zero mean, unit sd.
RowMat<double> gaussian_random_field(Index nlat, Index nlon, double length_scale,
                                     std::mt19937_64& rng);

}  // namespace gridpost
