#include "gridpost/postproc.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "gridpost/optim.hpp"
#include "gridpost/rng.hpp"

namespace gridpost {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (!(y > 0)) throw DomainError("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- EMOS ----------------------------------------------------------------

GaussianForecast emos_predict(const EmosParams& p, double mean, double sd) {
  return {p.a + p.b * mean, std::max(softplus(p.c + p.d * sd), std::numeric_limits<double>::min())};
}

double emos_mean_crps(const EmosParams& p, std::span<const double> mean, std::span<const double> sd,
                      std::span<const double> obs) {
  double s = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) s += crps_gaussian(emos_predict(p, mean[i], sd[i]), obs[i]);
  return s / static_cast<double>(obs.size());
}

namespace {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.sd += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(m.sd / static_cast<double>(v.size()));
  return m;
}

bool degenerate(const Moments& m) { return !(m.sd > 1e-12 * std::max(1.0, std::abs(m.mean))); }

}  // namespace

EmosParams emos_fit(std::span<const double> mean, std::span<const double> sd, std::span<const double> obs,
                    const EmosFitOptions& options) {
  const std::size_t n = obs.size();
  if (mean.size() != n || sd.size() != n) throw DimensionError("emos_fit: input lengths differ");
  if (n < options.min_samples) {
    throw DataError(fmt::format("emos_fit: need at least {} samples, got {}", options.min_samples, n));
  }
  std::vector<std::tuple<double, double, double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(sd[i]) || !std::isfinite(obs[i])) {
      throw DataError("emos_fit: non-finite input");
    }
    rows[i] = {mean[i], sd[i], obs[i]};
  }
  std::sort(rows.begin(), rows.end());
  std::vector<double> m(n), v(n), y(n), resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::tie(m[i], v[i], y[i]) = rows[i];
    resid[i] = y[i] - m[i];
  }

  const Moments mm = moments(m), vm = moments(v);
  EmosParams out;
  out.mean_fixed = degenerate(mm);
  out.sd_fixed = degenerate(vm);
  const double m_scale = out.mean_fixed ? 1.0 : mm.sd;
  const double v_scale = out.sd_fixed ? 1.0 : vm.sd;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = out.mean_fixed ? 0.0 : (m[i] - mm.mean) / m_scale;
    v[i] = out.sd_fixed ? 0.0 : (v[i] - vm.mean) / v_scale;
  }

  // theta = (a', b', c', d') on standardized predictors; the fixed
  // coordinates see exactly zero gradient.
  const double sigma0 = std::max(moments(resid).sd, 1e-6);
  Eigen::Vector4d theta(mm.mean, m_scale, softplus_inverse(sigma0), 0.0);
  if (out.mean_fixed) theta[1] = 1.0;

  auto eval = [&](const Eigen::Vector4d& t, Eigen::Vector4d* grad) {
    double f = 0.0;
    Eigen::Vector4d g = Eigen::Vector4d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = t[0] + t[1] * m[i];
      const double s = t[2] + t[3] * v[i];
      const GaussianForecast fc{mu, std::max(softplus(s), std::numeric_limits<double>::min())};
      f += crps_gaussian(fc, y[i]);
      if (grad) {
        const CrpsGradient cg = crps_gaussian_grad(fc, y[i]);
        const double ds = cg.d_sigma * logistic(s);
        g += Eigen::Vector4d(cg.d_mu, cg.d_mu * m[i], ds, ds * v[i]);
      }
    }
    if (grad) *grad = g / static_cast<double>(n);
    return f / static_cast<double>(n);
  };

  Eigen::Vector4d g;
  double f = eval(theta, &g);
  double step = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (g.cwiseAbs().maxCoeff() < options.gradient_tol) break;
    bool accepted = false;
    Eigen::Vector4d next;
    double fn = f;
    while (step > 1e-20) {
      next = theta - step * g;
      fn = eval(next, nullptr);
      if (fn <= f - 1e-4 * step * g.squaredNorm()) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const double gain = f - fn;
    theta = next;
    f = eval(theta, &g);
    if (options.on_iteration) options.on_iteration(it + 1, f);
    step *= 2.0;
    if (gain <= 1e-15 * f) break;
  }

  out.b = theta[1] / m_scale;
  out.a = out.mean_fixed ? theta[0] - mm.mean : theta[0] - out.b * mm.mean;
  out.d = theta[3] / v_scale;
  out.c = theta[2] - out.d * (out.sd_fixed ? 0.0 : vm.mean);
  if (out.sd_fixed) out.d = 0.0;
  out.iterations = it;
  return out;
}

EmosModel emos_train(const Dataset& train, const std::string& variable, const EmosFitOptions& options) {
  EmosModel model;
  model.mean_predictor = variable + "_mean";
  model.sd_predictor = variable + "_sd";
  const Index im = train.predictor_index(model.mean_predictor);
  const Index is = train.predictor_index(model.sd_predictor);
  if (im < 0 || is < 0) throw ConfigError("emos: dataset has no predictors for variable " + variable);

  const std::size_t S = train.stations.size();
  std::vector<std::vector<double>> m(S), s(S), y(S);
  for (const auto& smp : train.samples) {
    if (!smp.observation) continue;
    const auto k = static_cast<std::size_t>(smp.station);
    m[k].push_back(smp.predictors[static_cast<std::size_t>(im)]);
    s[k].push_back(smp.predictors[static_cast<std::size_t>(is)]);
    y[k].push_back(*smp.observation);
  }
  for (std::size_t k = 0; k < S; ++k) {
    model.station_ids.push_back(train.stations[k].id);
    try {
      model.params.push_back(emos_fit(m[k], s[k], y[k], options));
    } catch (const DataError& e) {
      throw DataError("station " + train.stations[k].id + ": " + e.what());
    }
  }
  return model;
}

std::vector<GaussianForecast> emos_predict(const EmosModel& model, const Dataset& data) {
  const Index im = data.predictor_index(model.mean_predictor);
  const Index is = data.predictor_index(model.sd_predictor);
  if (im < 0 || is < 0) throw DataError("emos: dataset lacks " + model.mean_predictor + "/" + model.sd_predictor);
  std::unordered_map<std::string, std::size_t> lookup;
  for (std::size_t k = 0; k < model.station_ids.size(); ++k) lookup[model.station_ids[k]] = k;
  std::vector<GaussianForecast> out;
  out.reserve(data.samples.size());
  for (const auto& smp : data.samples) {
    auto it = lookup.find(smp.station_id);
    if (it == lookup.end()) throw DataError("emos: no parameters for station " + smp.station_id);
    out.push_back(emos_predict(model.params[it->second], smp.predictors[static_cast<std::size_t>(im)],
                               smp.predictors[static_cast<std::size_t>(is)]));
  }
  return out;
}

// --- features ------------------------------------------------------------

SpatialMode parse_spatial_mode(const std::string& name) {
  if (name == "none") return SpatialMode::none;
  if (name == "convae") return SpatialMode::convae;
  if (name == "pca") return SpatialMode::pca;
  throw ConfigError("unknown spatial mode '" + name + "' (expected none, convae or pca)");
}

std::string to_string(SpatialMode mode) {
  switch (mode) {
    case SpatialMode::none: return "none";
    case SpatialMode::convae: return "convae";
    case SpatialMode::pca: return "pca";
  }
  return "none";
}

Index SpatialEncoder::latent_dim() const {
  if (method == SpatialMode::convae && convae) return convae->config.latent_dim;
  if (method == SpatialMode::pca && pca) return pca->latent_dim();
  throw ConfigError("spatial encoder for " + variable + " holds no model");
}

RowMat<double> SpatialEncoder::encode(const Dataset& data) const {
  const std::vector<FieldMatrix> fields = normalized_fields(data, variable);
  const Index h = latent_dim();
  RowMat<double> codes(static_cast<Index>(fields.size()), h);
  if (method == SpatialMode::convae) {
    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < fields.size(); start += chunk) {
      const std::size_t n = std::min(chunk, fields.size() - start);
      const Batch<float> c = convae->encode_batch(fields_to_batch(std::span(fields).subspan(start, n)));
      codes.middleRows(static_cast<Index>(start), static_cast<Index>(n)) = c.transpose().cast<double>();
    }
  } else {
    for (std::size_t t = 0; t < fields.size(); ++t) {
      const Vec<double> x = Eigen::Map<const Vec<float>>(fields[t].data(), fields[t].size()).cast<double>();
      codes.row(static_cast<Index>(t)) = pca_encode(*pca, x).transpose();
    }
  }
  return codes;
}

Index FeatureLayout::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<Index>(it - names.begin());
}

namespace {

const char* const kMetaNames[] = {"lat", "lon", "altitude", "orography"};

}  // namespace

FeatureRows assemble_features(const Dataset& data, std::span<const SpatialEncoder> encoders) {
  std::vector<RowMat<double>> codes;
  Index width = static_cast<Index>(data.predictor_names.size()) + 4;
  for (const auto& e : encoders) {
    codes.push_back(e.encode(data));
    width += codes.back().cols();
  }
  FeatureRows rows;
  rows.values.resize(static_cast<Index>(data.samples.size()), width);
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const StationSample& s = data.samples[i];
    if (s.predictors.size() != data.predictor_names.size()) {
      throw DataError(fmt::format("sample {} {} has {} predictors, expected {}", s.date, s.station_id,
                                  s.predictors.size(), data.predictor_names.size()));
    }
    auto row = rows.values.row(static_cast<Index>(i));
    Index c = 0;
    for (double p : s.predictors) row[c++] = p;
    row[c++] = s.meta.lat;
    row[c++] = s.meta.lon;
    row[c++] = s.meta.altitude;
    row[c++] = s.meta.orography;
    if (!codes.empty()) {
      const auto t = static_cast<Index>(data.date_index(s.date));
      for (const auto& cb : codes) {
        row.segment(c, cb.cols()) = cb.row(t);
        c += cb.cols();
      }
    }
    if (!row.allFinite()) throw DataError("non-finite feature for " + s.station_id + " on " + s.date);
    rows.obs.push_back(s.observation.value_or(std::numeric_limits<double>::quiet_NaN()));
    rows.station_ids.push_back(s.station_id);
    rows.dates.push_back(s.date);
  }
  return rows;
}

FeatureLayout fit_feature_layout(const Dataset& data, std::span<const SpatialEncoder> encoders,
                                 const FeatureRows& rows) {
  FeatureLayout layout;
  layout.names = data.predictor_names;
  layout.predictor_count = static_cast<Index>(data.predictor_names.size());
  layout.meta_count = 4;
  for (const char* m : kMetaNames) layout.names.emplace_back(m);
  for (const auto& e : encoders) {
    layout.spatial_variables.push_back(e.variable);
    layout.latent_dim = e.latent_dim();
    for (Index k = 0; k < e.latent_dim(); ++k) layout.names.push_back(fmt::format("{}_code{}", e.variable, k));
  }
  if (rows.values.cols() != layout.size()) throw DimensionError("feature rows do not match layout");
  if (rows.values.rows() == 0) throw DataError("no samples for feature standardization");
  for (Index j = 0; j < rows.values.cols(); ++j) {
    std::vector<double> col(static_cast<std::size_t>(rows.values.rows()));
    for (Index i = 0; i < rows.values.rows(); ++i) col[static_cast<std::size_t>(i)] = rows.values(i, j);
    const Moments m = moments(col);
    layout.mean.push_back(m.mean);
    layout.sd.push_back(degenerate(m) ? 1.0 : m.sd);
  }
  return layout;
}

// --- DRN -----------------------------------------------------------------

void DrnConfig::validate() const {
  if (embedding_dim < 1) throw ConfigError("drn: embedding dimension must be >= 1");
  if (repetitions < 1) throw ConfigError("drn: repetitions must be >= 1");
  if (hidden.empty()) throw ConfigError("drn: need at least one hidden layer");
  for (Index u : hidden) {
    if (u < 1) throw ConfigError("drn: hidden widths must be >= 1");
  }
  if (!(learning_rate > 0) || batch_size < 1 || max_epochs < 1 || patience < 1) {
    throw ConfigError("drn: invalid optimizer settings");
  }
  if ((spatial_mode == SpatialMode::none) != spatial_variables.empty()) {
    throw ConfigError("drn: spatial variables must be given exactly when the spatial mode is not none");
  }
  if (spatial_mode != SpatialMode::none && latent_dim < 1) throw ConfigError("drn: latent dimension must be >= 1");
}

int worker_threads(int tasks) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("GRIDPOST_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) n = v;
  }
  return std::clamp(n, 1, std::max(1, tasks));
}

DrnInputs drn_inputs(const DrnModel& model, const FeatureRows& rows) {
  const FeatureLayout& L = model.layout;
  if (rows.values.cols() != L.size()) {
    throw BundleError(fmt::format("feature width {} does not match model layout {}", rows.values.cols(), L.size()));
  }
  std::unordered_map<std::string, Index> lookup;
  for (std::size_t k = 0; k < model.station_ids.size(); ++k) lookup[model.station_ids[k]] = static_cast<Index>(k);

  DrnInputs in;
  const Index n = rows.values.rows();
  in.x.resize(L.size(), n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < L.size(); ++j) {
      in.x(j, i) = static_cast<float>((rows.values(i, j) - L.mean[static_cast<std::size_t>(j)]) /
                                      L.sd[static_cast<std::size_t>(j)]);
    }
    auto it = lookup.find(rows.station_ids[static_cast<std::size_t>(i)]);
    if (it == lookup.end()) {
      throw DataError("station " + rows.station_ids[static_cast<std::size_t>(i)] + " has no learned embedding");
    }
    in.station.push_back(it->second);
  }
  in.obs = rows.obs;
  in.station_ids = rows.station_ids;
  in.dates = rows.dates;
  return in;
}

namespace {

constexpr double kSigmaFloor = 1e-9;

Batch<float> network_input(const DrnMember& m, const Batch<float>& x, std::span<const Index> ids) {
  const Index E = m.embedding.dim();
  Batch<float> in(E + x.rows(), x.cols());
  in.topRows(E) = m.embedding.forward(ids);
  in.bottomRows(x.rows()) = x;
  return in;
}

// Mean CRPS in standardized units; fills grad (d loss / d raw) when given.
double crps_batch(const Batch<float>& raw, std::span<const double> y, Batch<float>* grad) {
  const Index n = raw.cols();
  if (grad) grad->resize(2, n);
  double sum = 0.0;
  for (Index j = 0; j < n; ++j) {
    const double r1 = raw(1, j);
    const GaussianForecast f{raw(0, j), std::max(softplus(r1), kSigmaFloor)};
    const double yj = y[static_cast<std::size_t>(j)];
    sum += crps_gaussian(f, yj);
    if (grad) {
      const CrpsGradient g = crps_gaussian_grad(f, yj);
      (*grad)(0, j) = static_cast<float>(g.d_mu / static_cast<double>(n));
      (*grad)(1, j) = static_cast<float>(g.d_sigma * logistic(r1) / static_cast<double>(n));
    }
  }
  return sum / static_cast<double>(n);
}

Batch<float> member_raw(const DrnMember& m, const Batch<float>& x, std::span<const Index> ids) {
  constexpr Index chunk = 4096;
  Batch<float> raw(2, x.cols());
  for (Index start = 0; start < x.cols(); start += chunk) {
    const Index n = std::min(chunk, x.cols() - start);
    raw.middleCols(start, n) = m.net.forward(network_input(m, x.middleCols(start, n), ids.subspan(start, n)));
  }
  return raw;
}

struct TrainSet {
  Batch<float> x;
  std::vector<Index> ids;
  std::vector<double> y;  // standardized
};

TrainSet observed(const DrnInputs& in, double mean, double sd) {
  TrainSet t;
  std::vector<Index> cols;
  for (std::size_t i = 0; i < in.obs.size(); ++i) {
    if (std::isnan(in.obs[i])) continue;
    cols.push_back(static_cast<Index>(i));
    t.ids.push_back(in.station[i]);
    t.y.push_back((in.obs[i] - mean) / sd);
  }
  t.x.resize(in.x.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) t.x.col(static_cast<Index>(j)) = in.x.col(cols[j]);
  return t;
}

DrnMember train_member(const DrnModel& model, int rep, const TrainSet& train, const TrainSet& val) {
  const DrnConfig& cfg = model.config;
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(rep);
  auto init = seed_stream(seed, "init");
  auto shuffle = seed_stream(seed, "shuffle");

  DrnMember m;
  m.embedding = Embedding<float>(static_cast<Index>(model.station_ids.size()), cfg.embedding_dim);
  std::uniform_real_distribution<float> u(-0.05f, 0.05f);
  for (Index i = 0; i < m.embedding.table.size(); ++i) m.embedding.table[i] = u(init);
  std::vector<LayerSpec> specs;
  for (Index w : cfg.hidden) specs.push_back(LayerSpec::dense(w, Activation::relu));
  specs.push_back(LayerSpec::dense(2, Activation::linear));
  m.net = Sequential<float>({cfg.embedding_dim + model.layout.size()}, specs);
  m.net.initialize(init);

  auto net_state = AdamState<float>::for_parameters(m.net.parameters(), cfg.learning_rate);
  std::vector<Tensor<float>> emb_params{m.embedding.table};
  auto emb_state = AdamState<float>::for_parameters(emb_params, cfg.learning_rate);
  std::vector<Tensor<float>> net_grads, emb_grads(1);

  DrnMember best = m;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Index> order(train.ids.size());
  std::iota(order.begin(), order.end(), Index{0});
  Tape<float> tape;
  Batch<float> grad_raw;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0.0;
    int batch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      Batch<float> xb(train.x.rows(), static_cast<Index>(n));
      std::vector<Index> ids(n);
      std::vector<double> yb(n);
      for (std::size_t j = 0; j < n; ++j) {
        const Index src = order[start + j];
        xb.col(static_cast<Index>(j)) = train.x.col(src);
        ids[j] = train.ids[static_cast<std::size_t>(src)];
        yb[j] = train.y[static_cast<std::size_t>(src)];
      }
      Batch<float> raw;
      try {
        raw = m.net.forward(network_input(m, xb, ids), tape);
      } catch (const NumericError& e) {
        throw TrainingError(fmt::format("drn repetition {} epoch {} batch {}: {}", rep, epoch, batch, e.what()));
      }
      const double loss = crps_batch(raw, yb, &grad_raw);
      if (!std::isfinite(loss)) {
        throw TrainingError(fmt::format("drn repetition {} epoch {} batch {}: non-finite loss (raw range [{}, {}])",
                                        rep, epoch, batch, raw.minCoeff(), raw.maxCoeff()));
      }
      loss_sum += loss * static_cast<double>(n);
      const Batch<float> dx = m.net.backward(tape, grad_raw, net_grads, true);
      emb_grads[0] = Tensor<float>(m.embedding.table.shape());
      m.embedding.backward(ids, dx.topRows(cfg.embedding_dim), emb_grads[0]);
      adam_step(m.net.parameters(), net_grads, net_state);
      emb_params[0] = std::move(m.embedding.table);
      adam_step(emb_params, emb_grads, emb_state);
      m.embedding.table = emb_params[0];
    }

    DrnEpoch rec{epoch, loss_sum / static_cast<double>(order.size()) * model.target_sd,
                 crps_batch(member_raw(m, val.x, val.ids), val.y, nullptr) * model.target_sd};
    if (!std::isfinite(rec.val_crps)) {
      throw TrainingError(fmt::format("drn repetition {} epoch {}: non-finite validation CRPS", rep, epoch));
    }
    m.history.push_back(rec);
    if (rec.val_crps < best_val) {
      best_val = rec.val_crps;
      m.best_epoch = epoch;
      best.embedding = m.embedding;
      best.net = m.net;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  best.history = std::move(m.history);
  best.best_epoch = m.best_epoch;
  return best;
}

}  // namespace

DrnModel drn_train(const DrnConfig& config, const Dataset& train, const Dataset& val,
                   std::span<const SpatialEncoder> encoders) {
  config.validate();
  if (encoders.size() != config.spatial_variables.size()) {
    throw BundleError(fmt::format("drn: {} spatial variables configured but {} encoders given",
                                  config.spatial_variables.size(), encoders.size()));
  }
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    const SpatialEncoder& e = encoders[i];
    if (e.variable != config.spatial_variables[i] || e.method != config.spatial_mode ||
        e.latent_dim() != config.latent_dim) {
      throw BundleError(fmt::format("drn: encoder {} ({}, h={}) does not match requested {} ({}, h={})", i,
                                    e.variable, e.latent_dim(), config.spatial_variables[i],
                                    to_string(config.spatial_mode), config.latent_dim));
    }
  }

  DrnModel model;
  model.config = config;
  const FeatureRows train_rows = assemble_features(train, encoders);
  model.layout = fit_feature_layout(train, encoders, train_rows);
  for (const auto& s : train.stations) model.station_ids.push_back(s.id);
  for (const auto& s : val.samples) {
    if (train.station_index(s.station_id) < 0) {
      throw DataError("drn: station " + s.station_id + " appears in validation but not in training");
    }
  }

  std::vector<double> y;
  for (double v : train_rows.obs) {
    if (!std::isnan(v)) y.push_back(v);
  }
  if (y.empty()) throw DataError("drn: no training observations");
  const Moments ym = moments(y);
  model.target_mean = ym.mean;
  model.target_sd = degenerate(ym) ? 1.0 : ym.sd;

  const TrainSet tset = observed(drn_inputs(model, train_rows), model.target_mean, model.target_sd);
  const TrainSet vset =
      observed(drn_inputs(model, assemble_features(val, encoders)), model.target_mean, model.target_sd);
  if (vset.ids.empty()) throw DataError("drn: no validation observations");

  const int R = config.repetitions;
  model.members.resize(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int k; (k = next.fetch_add(1)) < R;) {
      try {
        model.members[static_cast<std::size_t>(k)] = train_member(model, k, tset, vset);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = R;
      }
    }
  };
  const int threads = worker_threads(R);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return model;
}

std::vector<GaussianForecast> drn_member_predict(const DrnModel& model, const DrnMember& member,
                                                 const DrnInputs& inputs) {
  if (inputs.x.rows() != model.layout.size()) throw BundleError("drn: input width does not match model layout");
  const Batch<float> raw = member_raw(member, inputs.x, inputs.station);
  std::vector<GaussianForecast> out(static_cast<std::size_t>(raw.cols()));
  for (Index j = 0; j < raw.cols(); ++j) {
    out[static_cast<std::size_t>(j)] = {model.target_mean + model.target_sd * raw(0, j),
                                        model.target_sd * std::max(softplus(raw(1, j)), kSigmaFloor)};
  }
  return out;
}

std::vector<GaussianForecast> aggregate_forecasts(std::span<const std::vector<GaussianForecast>> members) {
  if (members.empty()) throw ConfigError("aggregate: no member forecasts");
  const std::size_t n = members.front().size();
  std::vector<GaussianForecast> out(n, GaussianForecast{0.0, 0.0});
  for (const auto& m : members) {
    if (m.size() != n) throw BundleError("aggregate: member forecasts differ in length");
    for (std::size_t i = 0; i < n; ++i) {
      out[i].mu += m[i].mu;
      out[i].sigma += m[i].sigma;
    }
  }
  const auto k = static_cast<double>(members.size());
  for (auto& f : out) {
    f.mu /= k;
    f.sigma /= k;
  }
  return out;
}

std::vector<GaussianForecast> drn_predict(const DrnModel& model, const DrnInputs& inputs) {
  if (model.members.empty()) throw BundleError("drn: model has no members");
  std::vector<std::vector<GaussianForecast>> per;
  for (const auto& m : model.members) per.push_back(drn_member_predict(model, m, inputs));
  return aggregate_forecasts(per);
}

}  // namespace gridpost
