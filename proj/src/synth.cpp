#include <fmt/format.h>

#include <cmath>
#include <numbers>

#include "gridpost/dataio.hpp"
#include "gridpost/rng.hpp"

namespace gridpost {

namespace {

struct VariableScale {
  double base;
  double scale;
};

VariableScale variable_scale(int k) {
  switch (k) {
    case 0: return {283.0, 3.0};    // t2m, K
    case 1: return {5500.0, 60.0};  // z500, gpm
    case 2: return {5.0, 6.0};      // u850, m/s
    case 3: return {0.0, 6.0};      // v850, m/s
    default: return {0.0, 1.0};
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (stations < 1) throw ConfigError("synthetic data: stations must be >= 1");
  if (days < 30) throw ConfigError("synthetic data: days must be >= 30");
  if (!(length_scale > 0)) throw ConfigError("synthetic data: length scale must be positive");
  if (variables < 1 || variables > 99) throw ConfigError("synthetic data: variables must be in 1..99");
  if (members < 1) throw ConfigError("synthetic data: ensemble size must be >= 1");
  if (noise_rank < 1) throw ConfigError("synthetic data: noise rank must be >= 1");
  if (obs_noise < 0 || spread < 0 || station_bias_sd < 0) {
    throw ConfigError("synthetic data: noise levels must be non-negative");
  }
  if (missing_fraction < 0 || missing_fraction >= 1) {
    throw ConfigError("synthetic data: missing fraction must be in [0,1)");
  }
  grid.validate();
}

std::vector<std::string> synthetic_variable_names(int count) {
  static const char* named[] = {"t2m", "z500", "u850", "v850"};
  std::vector<std::string> out;
  for (int k = 0; k < count; ++k) out.push_back(k < 4 ? named[k] : "syn" + std::to_string(k));
  return out;
}

RowMat<double> gaussian_random_field(Index nlat, Index nlon, double length_scale, std::mt19937_64& rng) {
  const Index radius = static_cast<Index>(std::ceil(3.0 * length_scale));
  const Index H = nlat + 2 * radius, W = nlon + 2 * radius;
  std::normal_distribution<double> normal;
  RowMat<double> noise(H, W);
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < W; ++j) noise(i, j) = normal(rng);
  }
  Vec<double> kernel(2 * radius + 1);
  for (Index k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * static_cast<double>(k * k) / (length_scale * length_scale));
  }
  RowMat<double> rows = RowMat<double>::Zero(H, nlon);
  for (Index k = 0; k < kernel.size(); ++k) rows += kernel[k] * noise.middleCols(k, nlon);
  RowMat<double> field = RowMat<double>::Zero(nlat, nlon);
  for (Index k = 0; k < kernel.size(); ++k) field += kernel[k] * rows.middleRows(k, nlat);

  const double mean = field.mean();
  field.array() -= mean;
  const double sd = std::sqrt(field.squaredNorm() / static_cast<double>(field.size()));
  if (sd > 0) field /= sd;
  return field;
}

double pattern_projection(const RowMat<double>& pattern, const FieldMatrix& field) {
  return (pattern.array() * field.cast<double>().array()).mean();
}

SyntheticData synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const GridSpec& grid = cfg.grid;
  const Index nlat = grid.nlat, nlon = grid.nlon;
  const int V = cfg.variables, S = cfg.stations, M = cfg.members, K = cfg.noise_rank;
  const auto names = synthetic_variable_names(V);

  auto rng_stations = seed_stream(seed, "stations");
  auto rng_static = seed_stream(seed, "static-fields");
  auto rng_truth = seed_stream(seed, "truth");
  auto rng_members = seed_stream(seed, "members");
  auto rng_obs = seed_stream(seed, "observations");
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;

  SyntheticData out;
  Dataset& data = out.dataset;
  data.grid = grid;

  // Large-scale west-east dipole.
  out.pattern.resize(nlat, nlon);
  for (Index r = 0; r < nlat; ++r) {
    for (Index c = 0; c < nlon; ++c) {
      out.pattern(r, c) = std::cos(std::numbers::pi * static_cast<double>(c) / static_cast<double>(nlon - 1));
    }
  }
  out.pattern.array() -= out.pattern.mean();
  out.pattern /= std::sqrt(out.pattern.squaredNorm() / static_cast<double>(out.pattern.size()));

  // Static fields: orography, bias pattern, member-noise basis per variable.
  RowMat<double> orography = gaussian_random_field(nlat, nlon, std::max(cfg.length_scale, 8.0), rng_static);
  orography = (300.0 + 250.0 * orography.array()).cwiseMax(0.0).matrix();
  const RowMat<double> bias_pattern = gaussian_random_field(nlat, nlon, 2.0 * cfg.length_scale, rng_static);
  std::vector<std::vector<RowMat<double>>> basis(static_cast<std::size_t>(V));
  for (auto& b : basis) {
    for (int j = 0; j < K; ++j) b.push_back(gaussian_random_field(nlat, nlon, cfg.length_scale, rng_static));
  }

  // Stations in an inner box of the domain.
  const double lat_lo = grid.lat0 + 0.4 * (grid.lat_max() - grid.lat0);
  const double lat_hi = grid.lat0 + 0.6 * (grid.lat_max() - grid.lat0);
  const double lon_lo = grid.lon0 + 0.4 * (grid.lon_max() - grid.lon0);
  const double lon_hi = grid.lon0 + 0.625 * (grid.lon_max() - grid.lon0);
  std::vector<BilinearStencil> stencils;
  std::vector<double> station_offset;
  for (int s = 0; s < S; ++s) {
    Station st;
    st.id = fmt::format("S{:03d}", s + 1);
    st.lat = lat_lo + (lat_hi - lat_lo) * uniform(rng_stations);
    st.lon = lon_lo + (lon_hi - lon_lo) * uniform(rng_stations);
    stencils.push_back(bilinear_stencil(grid, st.lat, st.lon));
    st.orography = stencils.back().apply(orography);
    st.altitude = std::max(0.0, st.orography + 80.0 * normal(rng_stations));
    station_offset.push_back(cfg.lapse_rate * (st.altitude - st.orography) +
                             cfg.station_bias_sd * normal(rng_stations));
    data.stations.push_back(std::move(st));
  }

  // Basis functions and bias evaluated at stations.
  std::vector<RowMat<double>> basis_at(static_cast<std::size_t>(V), RowMat<double>(S, K));
  for (int k = 0; k < V; ++k) {
    for (int s = 0; s < S; ++s) {
      for (int j = 0; j < K; ++j) basis_at[k](s, j) = stencils[s].apply(basis[k][j]);
    }
  }
  const double target_scale = variable_scale(0).scale;
  std::vector<double> bias_at(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) bias_at[s] = cfg.bias / target_scale + cfg.bias_pattern * stencils[s].apply(bias_pattern);
  const RowMat<double> bias_field = (cfg.bias / target_scale + cfg.bias_pattern * bias_pattern.array()).matrix();

  for (int k = 0; k < V; ++k) {
    data.predictor_names.push_back(names[k] + "_mean");
    data.predictor_names.push_back(names[k] + "_sd");
    data.fields[names[k]];
  }

  const double noise_norm = cfg.spread / std::sqrt(static_cast<double>(K));
  RowMat<double> z(M, K);
  RowMat<double> member_values(S, M);
  std::vector<double> target_truth_at(static_cast<std::size_t>(S));
  std::vector<double> quad_at(static_cast<std::size_t>(S));
  std::vector<std::vector<double>> target_members(static_cast<std::size_t>(S));

  for (int d = 0; d < cfg.days; ++d) {
    const std::string date = synthetic_date(d, cfg.start_year);
    data.dates.push_back(date);
    const std::size_t first_sample = data.samples.size();
    for (int s = 0; s < S; ++s) {
      StationSample smp;
      smp.station_id = data.stations[s].id;
      smp.station = s;
      smp.date = date;
      smp.meta = data.stations[s];
      smp.predictors.resize(2 * static_cast<std::size_t>(V));
      data.samples.push_back(std::move(smp));
    }

    for (int k = 0; k < V; ++k) {
      const VariableScale vs = variable_scale(k);
      const RowMat<double> truth = gaussian_random_field(nlat, nlon, cfg.length_scale, rng_truth);
      for (int m = 0; m < M; ++m) {
        for (int j = 0; j < K; ++j) z(m, j) = normal(rng_members);
      }
      const Vec<double> zbar = z.colwise().mean().transpose();

      RowMat<double> mean_std = truth + bias_field;
      for (int j = 0; j < K; ++j) mean_std += (noise_norm * zbar[j]) * basis[k][j];
      GridField gf;
      gf.spec = grid;
      gf.variable = names[k];
      gf.valid_date = date;
      gf.values = (vs.base + vs.scale * mean_std.array()).cast<float>().matrix();
      data.fields[names[k]].push_back(std::move(gf));

      // member values at stations: base + scale * (truth + bias + noise)
      member_values = (basis_at[k] * z.transpose()) * noise_norm;
      for (int s = 0; s < S; ++s) {
        const double t_at = stencils[s].apply(truth);
        member_values.row(s).array() += t_at + bias_at[s];
        member_values.row(s) = (vs.base + vs.scale * member_values.row(s).array()).matrix();
        const double mean = member_values.row(s).mean();
        double sd = 0.0;
        if (M > 1) {
          sd = std::sqrt((member_values.row(s).array() - mean).square().sum() / static_cast<double>(M - 1));
        }
        StationSample& smp = data.samples[first_sample + static_cast<std::size_t>(s)];
        smp.predictors[2 * static_cast<std::size_t>(k)] = mean;
        smp.predictors[2 * static_cast<std::size_t>(k) + 1] = sd;
        if (k == 0) {
          smp.members.assign(member_values.row(s).data(), member_values.row(s).data() + M);
        }
        if (k == std::min(1, V - 1)) quad_at[s] = t_at;
      }
      if (k == 0) out.truth.push_back((vs.base + vs.scale * truth.array()).cast<float>().matrix());
    }

    const FieldMatrix& truth_phys = out.truth.back();
    const double signal = cfg.gamma * pattern_projection(out.pattern, truth_phys);
    out.signal.push_back(signal);
    for (int s = 0; s < S; ++s) {
      StationSample& smp = data.samples[first_sample + static_cast<std::size_t>(s)];
      const double q = quad_at[s];
      const double expected = stencils[s].apply(truth_phys) + signal +
                              cfg.quadratic * target_scale * (q * q - 1.0) + station_offset[s];
      const double eps = normal(rng_obs);
      const double u = uniform(rng_obs);
      smp.oracle_mu = expected;
      if (u >= cfg.missing_fraction) smp.observation = expected + cfg.obs_noise * eps;
    }
  }
  return out;
}

}  // namespace gridpost
