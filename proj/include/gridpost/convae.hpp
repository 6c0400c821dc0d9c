#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gridpost/dataio.hpp"
#include "gridpost/network.hpp"

namespace gridpost {

struct ConvAeConfig {
  Index latent_dim = 2;
  Index height = 81;
  Index width = 81;
  std::vector<Index> encoder_filters{16, 8, 4};
  Index conv_kernel = 3;
  Index conv_stride = 1;
  Index conv_pad = 1;
  Index pool_window = 3;
  Index pool_stride = 3;
  Index bridge_width = 64;
  std::vector<Index> decoder_filters{4, 8, 16};
  Index decoder_kernel = 9;
  Index decoder_stride = 3;
  Index decoder_pad = 3;
  Index output_kernel = 3;
  double learning_rate = 1e-3;
  Index batch_size = 32;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
  /// Notes on choices that depart from the literal reference architecture.
  std::vector<std::string> deviations() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct ConvAeModel {
  ConvAeConfig config;
  Sequential<float> encoder;
  Sequential<float> decoder;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 1-based, 0 before training

  Index parameter_count() const { return encoder.parameter_count() + decoder.parameter_count(); }

  /// field01 must be height x width with values in [0,1].
  Vec<float> encode(const FieldMatrix& field01) const;
  FieldMatrix decode(const Eigen::Ref<const Vec<float>>& code) const;

  /// Columns are flattened fields / codes.
  Batch<float> encode_batch(const Batch<float>& fields) const;
  Batch<float> decode_batch(const Batch<float>& codes) const;
};

/// Assembles encoder and decoder for the configured geometry and draws the
/// initial weights from the config seed. Throws ConfigError naming the
/// failing layer when the decoder does not rebuild height x width.
ConvAeModel convae_build(const ConvAeConfig& config);

/// Flattens fields into columns (row-major per field).
Batch<float> fields_to_batch(std::span<const FieldMatrix> fields);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on the grid-point MSE with seeded shuffling; early stopping on
/// validation MSE with restore-best.
void convae_train(ConvAeModel& model, std::span<const FieldMatrix> train01,
                  std::span<const FieldMatrix> val01, const EpochCallback& on_epoch = {});

/// Mean over fields and grid points of (x - decode(encode(x)))^2.
double reconstruction_mse(const ConvAeModel& model, std::span<const FieldMatrix> fields01);

/// Normalized fields of one variable.
std::vector<FieldMatrix> normalized_fields(const Dataset& data, const std::string& variable);

}  // namespace gridpost
