#include "gridpost/evaluation.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "gridpost/rng.hpp"

namespace gridpost {

std::string format_number(double v) { return fmt::format("{}", v); }

namespace {

void write_lines(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

using PairKey = std::pair<std::string, std::string>;  // (date, station)

std::map<PairKey, std::size_t> pair_index(const ForecastSet& s) {
  std::map<PairKey, std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!idx.emplace(PairKey{s.dates[i], s.station_ids[i]}, i).second) {
      throw PairingError("duplicate forecast for station " + s.station_ids[i] + " on " + s.dates[i]);
    }
  }
  return idx;
}

// Index pairs (model, reference) in (date, station) order.
std::vector<std::pair<std::size_t, std::size_t>> pair_up(const ForecastSet& a, const ForecastSet& b) {
  const auto ia = pair_index(a), ib = pair_index(b);
  std::set<std::string> bad;
  for (const auto& [k, _] : ia) {
    if (!ib.count(k)) bad.insert(k.first);
  }
  for (const auto& [k, _] : ib) {
    if (!ia.count(k)) bad.insert(k.first);
  }
  if (!bad.empty()) {
    std::string list;
    int shown = 0;
    for (const auto& d : bad) {
      if (shown++ == 10) {
        list += ", ...";
        break;
      }
      list += (list.empty() ? "" : ", ") + d;
    }
    throw PairingError(fmt::format("forecast sets are not paired on {} date(s): {}", bad.size(), list));
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(ia.size());
  for (const auto& [k, i] : ia) out.emplace_back(i, ib.at(k));
  return out;
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

ForecastSet make_forecast_set(const Dataset& data, std::vector<GaussianForecast> forecasts) {
  if (forecasts.size() != data.samples.size()) {
    throw PairingError(fmt::format("{} forecasts for {} samples", forecasts.size(), data.samples.size()));
  }
  ForecastSet s;
  s.forecasts = std::move(forecasts);
  for (const auto& smp : data.samples) {
    s.dates.push_back(smp.date);
    s.station_ids.push_back(smp.station_id);
    s.obs.push_back(smp.observation.value_or(std::numeric_limits<double>::quiet_NaN()));
  }
  return s;
}

void write_forecasts_csv(const std::filesystem::path& path, const ForecastSet& set) {
  std::string text = "date,station_id,mu,sigma\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    text += fmt::format("{},{},{},{}\n", set.dates[i], set.station_ids[i], format_number(set.forecasts[i].mu),
                        format_number(set.forecasts[i].sigma));
  }
  write_lines(path, text);
}

CrpsSummary mean_crps(std::span<const GaussianForecast> forecasts, std::span<const double> obs) {
  if (forecasts.size() != obs.size()) throw PairingError("mean_crps: forecasts and observations differ in length");
  CrpsSummary s;
  double sum = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (std::isnan(obs[i])) {
      ++s.skipped;
      continue;
    }
    sum += crps_gaussian(forecasts[i], obs[i]);
    ++s.count;
  }
  if (s.count == 0) throw DataError("mean_crps: no forecast/observation pairs");
  s.mean = sum / static_cast<double>(s.count);
  return s;
}

CrpsSummary mean_crps(const ForecastSet& set) { return mean_crps(set.forecasts, set.obs); }

std::vector<StationSkill> station_crpss(const ForecastSet& model, const ForecastSet& reference, double alpha) {
  const auto pairs = pair_up(model, reference);
  std::map<std::string, std::pair<ScoreSeries, ScoreSeries>> per_station;
  for (const auto& [i, j] : pairs) {
    if (std::isnan(model.obs[i])) continue;
    auto& [a, b] = per_station[model.station_ids[i]];
    a.station = b.station = model.station_ids[i];
    a.model = "model";
    b.model = "reference";
    a.values.push_back(crps_gaussian(model.forecasts[i], model.obs[i]));
    b.values.push_back(crps_gaussian(reference.forecasts[j], model.obs[i]));
  }
  std::vector<StationSkill> out;
  for (const auto& [id, ab] : per_station) {
    const auto& [a, b] = ab;
    StationSkill s;
    s.station_id = id;
    s.count = a.values.size();
    s.crps = std::accumulate(a.values.begin(), a.values.end(), 0.0) / static_cast<double>(s.count);
    s.reference_crps = std::accumulate(b.values.begin(), b.values.end(), 0.0) / static_cast<double>(s.count);
    s.crpss = crpss(s.crps, s.reference_crps);
    if (s.count >= 10) {
      const DmResult dm = dm_test(a, b);
      s.dm_statistic = dm.statistic;
      s.p_value = dm.p_value;
      s.significant = dm.p_value < alpha;
    } else {
      s.dm_statistic = s.p_value = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(s);
  }
  return out;
}

void write_station_skill_csv(const std::filesystem::path& path, std::span<const StationSkill> rows) {
  std::string text = "station_id,n,crps,reference_crps,crpss,dm_stat,p_value,significant\n";
  for (const auto& r : rows) {
    text += fmt::format("{},{},{},{},{},{},{},{}\n", r.station_id, r.count, format_number(r.crps),
                        format_number(r.reference_crps), format_number(r.crpss), format_number(r.dm_statistic),
                        format_number(r.p_value), r.significant ? 1 : 0);
  }
  write_lines(path, text);
}

std::vector<double> daily_mean_crps(const ForecastSet& set) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (std::isnan(set.obs[i])) continue;
    auto& [sum, n] = acc[set.dates[i]];
    sum += crps_gaussian(set.forecasts[i], set.obs[i]);
    ++n;
  }
  std::vector<double> out;
  for (const auto& [d, sn] : acc) out.push_back(sn.first / static_cast<double>(sn.second));
  return out;
}

DmResult pooled_dm(const ForecastSet& model, const ForecastSet& reference) {
  const auto pairs = pair_up(model, reference);
  std::map<std::string, std::array<double, 3>> acc;  // date -> (sum a, sum b, n)
  for (const auto& [i, j] : pairs) {
    if (std::isnan(model.obs[i])) continue;
    auto& v = acc[model.dates[i]];
    v[0] += crps_gaussian(model.forecasts[i], model.obs[i]);
    v[1] += crps_gaussian(reference.forecasts[j], model.obs[i]);
    v[2] += 1.0;
  }
  ScoreSeries a{{}, "pooled", "model"}, b{{}, "pooled", "reference"};
  for (const auto& [d, v] : acc) {
    a.values.push_back(v[0] / v[2]);
    b.values.push_back(v[1] / v[2]);
  }
  return dm_test(a, b);
}

// --- permutation importance ---------------------------------------------

std::vector<std::pair<std::string, std::vector<Index>>> importance_groups(const FeatureLayout& layout) {
  std::vector<std::pair<std::string, std::vector<Index>>> groups;
  const Index plain = layout.predictor_count + layout.meta_count;
  for (Index j = 0; j < plain; ++j) groups.push_back({layout.names[static_cast<std::size_t>(j)], {j}});
  Index c = plain;
  for (const auto& v : layout.spatial_variables) {
    std::vector<Index> cols(static_cast<std::size_t>(layout.latent_dim));
    std::iota(cols.begin(), cols.end(), c);
    c += layout.latent_dim;
    groups.push_back({v + "_codes", cols});
  }
  groups.push_back({"station_embedding", {}});
  return groups;
}

std::vector<ImportanceRow> permutation_importance(const DrnModel& model, const DrnInputs& inputs,
                                                  const ImportanceOptions& options) {
  if (model.members.empty()) throw BundleError("importance: model has no members");
  const std::size_t R = options.repeats > 0 ? std::min<std::size_t>(static_cast<std::size_t>(options.repeats),
                                                                      model.members.size())
                                            : model.members.size();
  if (options.repeats > 0 && static_cast<std::size_t>(options.repeats) > model.members.size()) {
    throw ConfigError(fmt::format("importance: {} repeats requested but the model has {} members", options.repeats,
                                  model.members.size()));
  }
  const std::size_t n = inputs.station.size();

  std::vector<double> reference(R);
  for (std::size_t r = 0; r < R; ++r) {
    reference[r] = mean_crps(drn_member_predict(model, model.members[r], inputs), inputs.obs).mean;
  }

  std::vector<ImportanceRow> rows;
  for (const auto& [name, cols] : importance_groups(model.layout)) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (!options.identity) {
      auto rng = seed_stream(options.seed, "permutation:" + name);
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    DrnInputs permuted = inputs;
    for (std::size_t i = 0; i < n; ++i) {
      const auto dst = static_cast<Index>(i), src = static_cast<Index>(perm[i]);
      for (Index c : cols) permuted.x(c, dst) = inputs.x(c, src);
      if (cols.empty()) permuted.station[i] = inputs.station[perm[i]];
    }
    std::vector<double> deltas;
    for (std::size_t r = 0; r < R; ++r) {
      deltas.push_back(mean_crps(drn_member_predict(model, model.members[r], permuted), inputs.obs).mean -
                       reference[r]);
    }
    ImportanceRow row;
    row.feature = name;
    row.mean_delta = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(R);
    row.sd_delta = sample_sd(deltas);
    row.repeats = static_cast<int>(R);
    rows.push_back(row);
  }
  return rows;
}

void write_importance_csv(const std::filesystem::path& path, std::span<const ImportanceRow> rows) {
  std::string text = "feature,mean_delta_crps,sd_delta_crps,repeats\n";
  for (const auto& r : rows) {
    text += fmt::format("{},{},{},{}\n", r.feature, format_number(r.mean_delta), format_number(r.sd_delta), r.repeats);
  }
  write_lines(path, text);
}

// --- curves --------------------------------------------------------------

std::vector<ReconRow> recon_curve(std::span<const ReconModel> models, std::span<const Index> hs,
                                  std::span<const std::string> methods, std::span<const FieldMatrix> train01,
                                  std::span<const FieldMatrix> test01) {
  std::vector<ReconRow> rows;
  for (Index h : hs) {
    for (const auto& method : methods) {
      auto it = std::find_if(models.begin(), models.end(),
                             [&](const ReconModel& m) { return m.h == h && m.method == method; });
      if (it == models.end()) throw ConfigError(fmt::format("recon-curve: no {} model for h={}", method, h));
      rows.push_back({h, method, "train", it->mse(train01)});
      rows.push_back({h, method, "test", it->mse(test01)});
    }
  }
  return rows;
}

void write_recon_csv(const std::filesystem::path& path, std::span<const ReconRow> rows) {
  std::string text = "h,method,split,mse\n";
  for (const auto& r : rows) text += fmt::format("{},{},{},{}\n", r.h, r.method, r.split, format_number(r.mse));
  write_lines(path, text);
}

std::vector<SweepRow> embed_sweep(const DrnConfig& base, std::span<const Index> dims, const DatasetSplit& split,
                                  std::span<const SpatialEncoder> encoders) {
  std::vector<SweepRow> rows;
  for (Index dim : dims) {
    DrnConfig cfg = base;
    cfg.embedding_dim = dim;
    const DrnModel model = drn_train(cfg, split.train, split.validation, encoders);
    const DrnInputs in = drn_inputs(model, assemble_features(split.test, encoders));
    rows.push_back({dim, to_string(cfg.spatial_mode), mean_crps(drn_predict(model, in), in.obs).mean});
  }
  return rows;
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::string text = "embed_dim,spatial_mode,mean_crps\n";
  for (const auto& r : rows) text += fmt::format("{},{},{}\n", r.embed_dim, r.spatial_mode, format_number(r.mean_crps));
  write_lines(path, text);
}

}  // namespace gridpost
