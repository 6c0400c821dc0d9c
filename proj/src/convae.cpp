#include "gridpost/convae.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "gridpost/optim.hpp"
#include "gridpost/rng.hpp"

namespace gridpost {

void ConvAeConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("convae: latent dimension must be >= 1");
  if (height < 2 || width < 2) throw ConfigError("convae: input must be at least 2x2");
  if (encoder_filters.empty() || decoder_filters.empty()) throw ConfigError("convae: filter lists must not be empty");
  for (Index f : encoder_filters) {
    if (f < 1) throw ConfigError("convae: encoder filters must be >= 1");
  }
  for (Index f : decoder_filters) {
    if (f < 1) throw ConfigError("convae: decoder filters must be >= 1");
  }
  if (conv_kernel < 1 || conv_stride < 1 || conv_pad < 0 || pool_window < 1 || pool_stride < 1) {
    throw ConfigError("convae: kernel, stride and pool settings must be positive");
  }
  if (decoder_kernel < 1 || decoder_stride < 1 || decoder_pad < 0) {
    throw ConfigError("convae: decoder kernel/stride must be positive");
  }
  if (output_kernel < 1 || output_kernel % 2 == 0) throw ConfigError("convae: output kernel must be odd");
  if (bridge_width < 1) throw ConfigError("convae: bridge width must be >= 1");
  if (!(learning_rate > 0) || batch_size < 1 || max_epochs < 1 || patience < 1) {
    throw ConfigError("convae: invalid optimizer settings");
  }
}

std::vector<std::string> ConvAeConfig::deviations() const {
  std::vector<std::string> notes;
  if (pool_stride == 1) {
    notes.push_back("max-pooling stride 1 as stated in the reference architecture; the encoder flatten is large");
  } else {
    notes.push_back(fmt::format("max-pooling stride {} (reference states stride 1, which does not downsample)", pool_stride));
  }
  notes.push_back(fmt::format("decoder transposed convolutions use stride {} and padding {} (unspecified in reference)",
                              decoder_stride, decoder_pad));
  notes.push_back(fmt::format("dense bridge width {} on both encoder and decoder sides", bridge_width));
  notes.push_back("convolution means cross-correlation (no kernel flip)");
  return notes;
}

ConvAeModel convae_build(const ConvAeConfig& config) {
  config.validate();
  ConvAeModel model;
  model.config = config;

  std::vector<LayerSpec> enc;
  for (Index f : config.encoder_filters) {
    enc.push_back(LayerSpec::conv2d(f, config.conv_kernel, config.conv_stride, config.conv_pad, Activation::relu));
    enc.push_back(LayerSpec::maxpool2d(config.pool_window, config.pool_stride));
  }
  enc.push_back(LayerSpec::dense(config.bridge_width, Activation::relu));
  enc.push_back(LayerSpec::dense(config.latent_dim, Activation::linear));
  model.encoder = Sequential<float>({1, config.height, config.width}, enc);

  // Invert the decoder geometry from the output size to find the start grid.
  Index gh = config.height, gw = config.width;
  for (std::size_t i = config.decoder_filters.size(); i-- > 0;) {
    const Index k = config.decoder_kernel, s = config.decoder_stride, p = config.decoder_pad;
    const Index ih = (gh + 2 * p - k) / s + 1, iw = (gw + 2 * p - k) / s + 1;
    if (ih < 1 || iw < 1 || tconv_out_extent(ih, k, s, p) != gh || tconv_out_extent(iw, k, s, p) != gw) {
      throw ConfigError(fmt::format("decoder layer {} (tconv2d k{} s{} p{}) cannot produce {}x{}", i, k, s, p, gh, gw));
    }
    gh = ih;
    gw = iw;
  }
  const Index c0 = config.encoder_filters.back();
  std::vector<LayerSpec> dec;
  dec.push_back(LayerSpec::dense(config.bridge_width, Activation::relu));
  dec.push_back(LayerSpec::dense(c0 * gh * gw, Activation::relu));
  dec.push_back(LayerSpec::reshape({c0, gh, gw}));
  for (Index f : config.decoder_filters) {
    dec.push_back(LayerSpec::tconv2d(f, config.decoder_kernel, config.decoder_stride, config.decoder_pad, Activation::relu));
  }
  dec.push_back(LayerSpec::conv2d(1, config.output_kernel, 1, (config.output_kernel - 1) / 2, Activation::sigmoid));
  model.decoder = Sequential<float>({config.latent_dim}, dec);
  if (model.decoder.output_shape() != Shape{1, config.height, config.width}) {
    throw ConfigError("decoder output " + shape_string(model.decoder.output_shape()) + " does not match input");
  }

  auto rng = seed_stream(config.seed, "init");
  model.encoder.initialize(rng);
  model.decoder.initialize(rng);
  return model;
}

Batch<float> fields_to_batch(std::span<const FieldMatrix> fields) {
  if (fields.empty()) return {};
  const Index len = fields.front().size();
  Batch<float> out(len, static_cast<Index>(fields.size()));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].size() != len) throw DimensionError("fields differ in size");
    out.col(static_cast<Index>(i)) = Eigen::Map<const Vec<float>>(fields[i].data(), len);
  }
  return out;
}

Vec<float> ConvAeModel::encode(const FieldMatrix& field01) const {
  if (field01.rows() != config.height || field01.cols() != config.width) {
    throw DimensionError(fmt::format("convae: expected {}x{} field, got {}x{}", config.height, config.width,
                                     field01.rows(), field01.cols()));
  }
  if (!field01.allFinite() || field01.minCoeff() < 0.0f || field01.maxCoeff() > 1.0f) {
    throw DomainError("convae: input field must lie in [0,1]");
  }
  Batch<float> x = Eigen::Map<const Vec<float>>(field01.data(), field01.size());
  return encoder.forward(x).col(0);
}

FieldMatrix ConvAeModel::decode(const Eigen::Ref<const Vec<float>>& code) const {
  if (code.size() != config.latent_dim) {
    throw DimensionError(fmt::format("convae: code length {} != latent dimension {}", code.size(), config.latent_dim));
  }
  Batch<float> c = code;
  const Batch<float> y = decoder.forward(c);
  return Eigen::Map<const FieldMatrix>(y.data(), config.height, config.width);
}

Batch<float> ConvAeModel::encode_batch(const Batch<float>& fields) const { return encoder.forward(fields); }

Batch<float> ConvAeModel::decode_batch(const Batch<float>& codes) const {
  if (codes.rows() != config.latent_dim) throw DimensionError("convae: code length mismatch");
  return decoder.forward(codes);
}

namespace {

double batch_mse(const ConvAeModel& model, const Batch<float>& x) {
  constexpr Index chunk = 64;
  double sum = 0.0;
  for (Index start = 0; start < x.cols(); start += chunk) {
    const Index n = std::min(chunk, x.cols() - start);
    const Batch<float> xb = x.middleCols(start, n);
    const Batch<float> y = model.decoder.forward(model.encoder.forward(xb));
    sum += (y - xb).cast<double>().squaredNorm();
  }
  return sum / static_cast<double>(x.size());
}

}  // namespace

void convae_train(ConvAeModel& model, std::span<const FieldMatrix> train01, std::span<const FieldMatrix> val01,
                  const EpochCallback& on_epoch) {
  const ConvAeConfig& cfg = model.config;
  if (train01.empty() || val01.empty()) throw ConfigError("convae: empty training or validation set");
  const Batch<float> xtrain = fields_to_batch(train01);
  const Batch<float> xval = fields_to_batch(val01);
  for (const Batch<float>* x : {&xtrain, &xval}) {
    if (x->rows() != cfg.height * cfg.width) throw DimensionError("convae: field size does not match config");
    if (!x->allFinite() || x->minCoeff() < 0.0f || x->maxCoeff() > 1.0f) {
      throw DomainError("convae: training fields must lie in [0,1]");
    }
  }

  auto shuffle_rng = seed_stream(cfg.seed, "shuffle");
  auto enc_state = AdamState<float>::for_parameters(model.encoder.parameters(), cfg.learning_rate);
  auto dec_state = AdamState<float>::for_parameters(model.decoder.parameters(), cfg.learning_rate);
  std::vector<Tensor<float>> best_enc = model.encoder.parameters();
  std::vector<Tensor<float>> best_dec = model.decoder.parameters();
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<Index> order(static_cast<std::size_t>(xtrain.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  Tape<float> enc_tape, dec_tape;
  std::vector<Tensor<float>> enc_grads, dec_grads;
  model.history.clear();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      Batch<float> xb(xtrain.rows(), static_cast<Index>(n));
      for (std::size_t j = 0; j < n; ++j) xb.col(static_cast<Index>(j)) = xtrain.col(order[start + j]);

      Batch<float> y;
      try {
        const Batch<float> codes = model.encoder.forward(xb, enc_tape);
        y = model.decoder.forward(codes, dec_tape);
      } catch (const NumericError& e) {
        throw TrainingError(fmt::format("convae epoch {} batch {}: {}", epoch, batch_index, e.what()));
      }
      const Batch<float> diff = y - xb;
      const double loss = diff.cast<double>().squaredNorm() / static_cast<double>(diff.size());
      if (!std::isfinite(loss)) {
        throw TrainingError(fmt::format("convae: non-finite loss at epoch {} batch {}", epoch, batch_index));
      }
      loss_sum += loss * static_cast<double>(n);

      const Batch<float> grad_y = diff * (2.0f / static_cast<float>(diff.size()));
      const Batch<float> grad_codes = model.decoder.backward(dec_tape, grad_y, dec_grads, true);
      model.encoder.backward(enc_tape, grad_codes, enc_grads, false);
      adam_step(model.encoder.parameters(), enc_grads, enc_state);
      adam_step(model.decoder.parameters(), dec_grads, dec_state);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), batch_mse(model, xval)};
    if (!std::isfinite(rec.val_mse)) throw TrainingError(fmt::format("convae: non-finite validation loss at epoch {}", epoch));
    model.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      model.best_epoch = epoch;
      best_enc = model.encoder.parameters();
      best_dec = model.decoder.parameters();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.encoder.parameters() = best_enc;
  model.decoder.parameters() = best_dec;
}

double reconstruction_mse(const ConvAeModel& model, std::span<const FieldMatrix> fields01) {
  if (fields01.empty()) throw ConfigError("reconstruction_mse: no fields");
  return batch_mse(model, fields_to_batch(fields01));
}

std::vector<FieldMatrix> normalized_fields(const Dataset& data, const std::string& variable) {
  auto it = data.fields.find(variable);
  if (it == data.fields.end()) throw DataError("no grids loaded for variable " + variable);
  std::vector<FieldMatrix> out;
  out.reserve(it->second.size());
  for (const GridField& f : it->second) out.push_back(minmax_normalize(f).field.values);
  return out;
}

}  // namespace gridpost
