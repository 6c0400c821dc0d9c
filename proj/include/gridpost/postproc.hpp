#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gridpost/convae.hpp"
#include "gridpost/embedding.hpp"
#include "gridpost/pca.hpp"
#include "gridpost/scoring.hpp"

namespace gridpost {

double softplus(double x);
double softplus_inverse(double y);
double logistic(double x);

// --- EMOS ----------------------------------------------------------------

/// mu = a + b*mean, sigma = softplus(c + d*sd).
struct EmosParams {
  double a = 0.0, b = 1.0, c = 0.0, d = 0.0;
  bool sd_fixed = false;    // sd constant in training, d held at 0
  bool mean_fixed = false;  // mean constant in training, b held at 1
  int iterations = 0;
};

GaussianForecast emos_predict(const EmosParams& p, double mean, double sd);

struct EmosFitOptions {
  int max_iterations = 2000;
  double gradient_tol = 1e-9;
  std::size_t min_samples = 30;
  /// Called with the mean training CRPS after every accepted step.
  std::function<void(int, double)> on_iteration;
};

/// Full-batch gradient descent with Armijo backtracking on the mean CRPS.
/// Samples are sorted canonically first, so the result does not depend on
/// their order.
EmosParams emos_fit(std::span<const double> mean, std::span<const double> sd, std::span<const double> obs,
                    const EmosFitOptions& options = {});

double emos_mean_crps(const EmosParams& p, std::span<const double> mean, std::span<const double> sd,
                      std::span<const double> obs);

struct EmosModel {
  std::string mean_predictor = "t2m_mean";
  std::string sd_predictor = "t2m_sd";
  std::vector<std::string> station_ids;
  std::vector<EmosParams> params;  // aligned with station_ids
};

/// One fit per station on the samples with an observation.
EmosModel emos_train(const Dataset& train, const std::string& variable = "t2m", const EmosFitOptions& options = {});

/// One forecast per sample of data; unknown stations are a DataError.
std::vector<GaussianForecast> emos_predict(const EmosModel& model, const Dataset& data);

// --- features ------------------------------------------------------------

enum class SpatialMode { none, convae, pca };

SpatialMode parse_spatial_mode(const std::string& name);
std::string to_string(SpatialMode mode);

/// A frozen encoder mapping one variable's normalized fields to codes.
struct SpatialEncoder {
  std::string variable;
  SpatialMode method = SpatialMode::none;
  std::optional<ConvAeModel> convae;
  std::optional<PcaModel> pca;

  Index latent_dim() const;
  /// Codes for every date of data, rows aligned with data.dates.
  RowMat<double> encode(const Dataset& data) const;
};

/// Column names and training-set standardization of the continuous inputs.
/// Order: predictors, station meta, codes.
struct FeatureLayout {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> sd;
  Index predictor_count = 0;
  Index meta_count = 0;
  std::vector<std::string> spatial_variables;
  Index latent_dim = 0;

  Index size() const { return static_cast<Index>(names.size()); }
  Index index_of(const std::string& name) const;
};

/// Raw (unstandardized) feature rows, one per sample of data.
struct FeatureRows {
  RowMat<double> values;      // [samples, features]
  std::vector<double> obs;    // NaN when missing
  std::vector<std::string> station_ids;
  std::vector<std::string> dates;
};

FeatureRows assemble_features(const Dataset& data, std::span<const SpatialEncoder> encoders);

/// Names for the given data and encoders, statistics from rows.
FeatureLayout fit_feature_layout(const Dataset& data, std::span<const SpatialEncoder> encoders,
                                 const FeatureRows& rows);

// --- DRN -----------------------------------------------------------------

struct DrnConfig {
  Index embedding_dim = 15;
  std::vector<Index> hidden{100, 100};
  double learning_rate = 0.002;
  Index batch_size = 1024;
  int max_epochs = 100;
  int patience = 10;
  int repetitions = 10;
  std::uint64_t seed = 0;
  SpatialMode spatial_mode = SpatialMode::none;
  std::vector<std::string> spatial_variables;
  Index latent_dim = 0;

  void validate() const;
};

struct DrnEpoch {
  int epoch = 0;
  double train_crps = 0.0;
  double val_crps = 0.0;
};

struct DrnMember {
  Embedding<float> embedding;
  Sequential<float> net;
  std::vector<DrnEpoch> history;
  int best_epoch = 0;
};

struct DrnModel {
  DrnConfig config;
  FeatureLayout layout;
  std::vector<std::string> station_ids;
  double target_mean = 0.0;
  double target_sd = 1.0;
  std::vector<DrnMember> members;
};

/// Standardized network inputs for a set of samples.
struct DrnInputs {
  Batch<float> x;             // [features, samples]
  std::vector<Index> station; // embedding row per sample
  std::vector<double> obs;    // NaN when missing
  std::vector<std::string> station_ids;
  std::vector<std::string> dates;
};

DrnInputs drn_inputs(const DrnModel& model, const FeatureRows& rows);

/// Trains config.repetitions members, repetition k seeded with seed + k,
/// on up to GRIDPOST_THREADS worker threads.
DrnModel drn_train(const DrnConfig& config, const Dataset& train, const Dataset& val,
                   std::span<const SpatialEncoder> encoders);

std::vector<GaussianForecast> drn_member_predict(const DrnModel& model, const DrnMember& member,
                                                 const DrnInputs& inputs);

/// Parameter averaging over members.
std::vector<GaussianForecast> drn_predict(const DrnModel& model, const DrnInputs& inputs);

/// Averages mu and sigma over the member forecasts.
std::vector<GaussianForecast> aggregate_forecasts(std::span<const std::vector<GaussianForecast>> members);

/// Worker threads: GRIDPOST_THREADS when set, else hardware concurrency,
/// capped at tasks.
int worker_threads(int tasks);

}  // namespace gridpost
