// gridpost command-line tool.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "gridpost/bundle.hpp"
#include "gridpost/errors.hpp"
#include "gridpost/evaluation.hpp"

using namespace gridpost;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

// Checksums of a file, or of every regular file in a directory except manifests.
json checksums(const fs::path& path) {
  json out = json::object();
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out[f.string()] = sha256_file(f);
  } else {
    out[path.string()] = sha256_file(path);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Flags, seed, inputs and outputs of one invocation.
struct Manifest {
  json doc;
  Manifest(const CLI::App& cmd, std::uint64_t seed) {
    doc["command"] = cmd.get_name();
    json flags = json::object();
    for (const CLI::Option* o : cmd.get_options()) {
      if (o->get_name() == "--help") continue;
      std::string v;
      if (o->count() > 0) {
        for (const auto& r : o->results()) v += (v.empty() ? "" : ",") + r;
      } else {
        v = o->get_default_str();
      }
      flags[o->get_name()] = v;
    }
    doc["flags"] = flags;
    doc["seed"] = seed;
    doc["inputs"] = json::object();
    doc["outputs"] = json::object();
  }
  void input(const fs::path& p) { doc["inputs"].update(checksums(p)); }
  void output(const fs::path& p) { doc["outputs"].update(checksums(p)); }
  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc.dump(2) << "\n";
  }
  void write_beside(const fs::path& output) const { write(output.string() + ".manifest.json"); }
};

struct SplitFlags {
  std::string train_end, val_end;
  void add(CLI::App* c) {
    c->add_option("--train-end", train_end, "Last training date (default: all but the final two years)");
    c->add_option("--val-end", val_end, "Last validation date");
  }
  DatasetSplit apply(const Dataset& d) const {
    auto [t, v] = default_split_dates(d);
    return chronological_split(d, train_end.empty() ? t : train_end, val_end.empty() ? v : val_end);
  }
};

const Dataset& pick(const DatasetSplit& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation") return s.validation;
  if (name == "test") return s.test;
  throw ConfigError("unknown split " + name + " (train, validation, test)");
}

// --- gen-data ------------------------------------------------------------

struct GenFlags {
  fs::path out;
  SynthConfig cfg;
  std::uint64_t seed = 0;
  bool force = false;
};

void gen_data(const CLI::App& cmd, const GenFlags& f) {
  if (fs::exists(f.out) && !fs::is_empty(f.out) && !f.force) {
    throw ConfigError(f.out.string() + " exists and is not empty (use --force)");
  }
  const SyntheticData s = synth_generate(f.cfg, f.seed);
  fs::create_directories(f.out);
  write_dataset(f.out, s.dataset);
  Manifest m(cmd, f.seed);
  m.output(f.out);
  m.write(f.out / "manifest.json");
  std::cout << m.doc.dump(2) << "\n";
}

// --- encoders ------------------------------------------------------------

struct ConvAeFlags {
  fs::path data, out, history;
  std::string var = "t2m";
  Index h = 2;
  Index pool_stride = 3;
  int epochs = 100;
  int patience = 10;
  std::size_t max_train = 0;
  std::uint64_t seed = 0;
  SplitFlags split;
};

void train_convae(const CLI::App& cmd, const ConvAeFlags& f) {
  ConvAeConfig cfg;
  cfg.latent_dim = f.h;
  cfg.pool_stride = f.pool_stride;
  cfg.max_epochs = f.epochs;
  cfg.patience = f.patience;
  cfg.seed = f.seed;
  if (f.pool_stride == 1) {
    std::cerr << "warning: --pool-stride 1 does not downsample; the encoder flatten is "
              << cfg.encoder_filters.back() << "x75x75 and training is slow\n";
  }
  const Dataset d = load_dataset(f.data, {f.var});
  cfg.height = d.grid.nlat;
  cfg.width = d.grid.nlon;
  ConvAeModel model = convae_build(cfg);
  const DatasetSplit s = f.split.apply(d);
  std::vector<FieldMatrix> train = normalized_fields(s.train, f.var);
  if (f.max_train > 0 && train.size() > f.max_train) train.resize(f.max_train);
  const std::vector<FieldMatrix> val = normalized_fields(s.validation, f.var);

  std::string hist = "epoch,train_mse,val_mse\n";
  convae_train(model, train, val, [&](const EpochRecord& r) {
    std::cerr << fmt::format("epoch {} train {:.6f} val {:.6f}\n", r.epoch, r.train_mse, r.val_mse);
    hist += fmt::format("{},{},{}\n", r.epoch, format_number(r.train_mse), format_number(r.val_mse));
  });
  save_bundle(f.out, convae_bundle(model, f.var));
  Manifest m(cmd, f.seed);
  m.input(f.data);
  m.output(f.out);
  if (!f.history.empty()) {
    std::ofstream(f.history, std::ios::trunc) << hist;
    m.output(f.history);
  }
  m.write_beside(f.out);
  std::cout << fmt::format("convae {} h={} best epoch {} of {}\n", f.var, f.h, model.best_epoch, model.history.size());
}

struct PcaFlags {
  fs::path data, out;
  std::string var = "t2m";
  Index h = 2;
  SplitFlags split;
};

void train_pca(const CLI::App& cmd, const PcaFlags& f) {
  const Dataset d = load_dataset(f.data, {f.var});
  const DatasetSplit s = f.split.apply(d);
  const auto fields = normalized_fields(s.train, f.var);
  if (fields.empty()) throw DataError("no training fields");
  RowMat<double> x(static_cast<Index>(fields.size()), fields[0].size());
  for (std::size_t i = 0; i < fields.size(); ++i) {
    x.row(static_cast<Index>(i)) = Eigen::Map<const Vec<float>>(fields[i].data(), fields[i].size()).cast<double>();
  }
  const PcaModel model = pca_fit(x, f.h);
  save_bundle(f.out, pca_bundle(model, f.var, d.grid.nlat, d.grid.nlon));
  Manifest m(cmd, 0);
  m.input(f.data);
  m.output(f.out);
  m.write_beside(f.out);
  std::cout << fmt::format("pca {} h={} training mse {}\n", f.var, f.h, format_number(pca_reconstruction_mse(model, x)));
}

// --- EMOS / DRN ----------------------------------------------------------

struct EmosFlags {
  fs::path data, out;
  std::string var = "t2m";
  SplitFlags split;
};

void train_emos(const CLI::App& cmd, const EmosFlags& f) {
  const DatasetSplit s = f.split.apply(load_dataset(f.data, {}));
  const EmosModel model = emos_train(s.train, f.var);
  save_bundle(f.out, emos_bundle(model));
  Manifest m(cmd, 0);
  m.input(f.data);
  m.output(f.out);
  m.write_beside(f.out);
  std::cout << fmt::format("emos: {} stations\n", model.station_ids.size());
}

struct DrnFlags {
  fs::path data, out;
  std::string spatial = "none";
  std::string spatial_vars;
  std::string encoders;
  Index h = 0;
  DrnConfig cfg;
  SplitFlags split;

  void add(CLI::App* c) {
    c->add_option("--data", data, "Dataset directory")->required();
    c->add_option("--spatial", spatial, "Spatial inputs: none, convae or pca")->capture_default_str();
    c->add_option("--spatial-vars", spatial_vars, "Comma-separated grid variables");
    c->add_option("--encoders", encoders, "Comma-separated encoder bundles, one per spatial variable");
    c->add_option("--h", h, "Latent dimension the encoders must have");
    c->add_option("--embed-dim", cfg.embedding_dim, "Station embedding dimension")->capture_default_str();
    c->add_option("--repeats", cfg.repetitions, "Independent repetitions")->capture_default_str();
    c->add_option("--seed", cfg.seed, "Base seed")->capture_default_str();
    c->add_option("--epochs", cfg.max_epochs, "Maximum epochs")->capture_default_str();
    c->add_option("--patience", cfg.patience, "Early-stopping patience")->capture_default_str();
    c->add_option("--batch", cfg.batch_size, "Minibatch size")->capture_default_str();
    c->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    split.add(c);
  }

  // Resolves the spatial flags and loads the frozen encoders.
  std::vector<SpatialEncoder> resolve(Manifest& m) {
    cfg.spatial_mode = parse_spatial_mode(spatial);
    cfg.spatial_variables = split_list(spatial_vars);
    const auto paths = split_list(encoders);
    if (cfg.spatial_mode == SpatialMode::none) {
      if (!cfg.spatial_variables.empty() || !paths.empty()) {
        throw ConfigError("--spatial none conflicts with --spatial-vars/--encoders");
      }
      return {};
    }
    if (cfg.spatial_variables.empty()) throw ConfigError("--spatial " + spatial + " needs --spatial-vars");
    if (paths.size() != cfg.spatial_variables.size()) {
      throw ConfigError(fmt::format("{} spatial variables but {} encoder bundles", cfg.spatial_variables.size(),
                                    paths.size()));
    }
    if (h < 1) throw ConfigError("--h is required with spatial inputs");
    cfg.latent_dim = h;
    std::vector<SpatialEncoder> out;
    for (const auto& p : paths) {
      out.push_back(encoder_from_bundle(load_bundle(p)));
      m.input(p);
    }
    return out;
  }
};

void train_drn(const CLI::App& cmd, DrnFlags f) {
  Manifest m(cmd, f.cfg.seed);
  const auto enc = f.resolve(m);
  f.cfg.validate();
  const DatasetSplit s = f.split.apply(load_dataset(f.data, f.cfg.spatial_variables));
  const DrnModel model = drn_train(f.cfg, s.train, s.validation, enc);
  save_bundle(f.out, drn_bundle(model, enc));
  m.input(f.data);
  m.output(f.out);
  m.write_beside(f.out);
  std::cout << fmt::format("drn: {} members, {} features\n", model.members.size(), model.layout.size());
}

// --- prediction and evaluation -------------------------------------------

// Forecasts of an EMOS or DRN bundle on one split.
ForecastSet bundle_forecasts(const fs::path& bundle_path, const fs::path& data, const SplitFlags& split,
                             const std::string& which) {
  const Bundle b = load_bundle(bundle_path);
  if (b.kind == "emos") {
    const DatasetSplit s = split.apply(load_dataset(data, {}));
    const Dataset& d = pick(s, which);
    return make_forecast_set(d, emos_predict(emos_from_bundle(b), d));
  }
  if (b.kind == "drn") {
    std::vector<SpatialEncoder> enc;
    const DrnModel model = drn_from_bundle(b, &enc);
    const DatasetSplit s = split.apply(load_dataset(data, model.config.spatial_variables));
    const Dataset& d = pick(s, which);
    const DrnInputs in = drn_inputs(model, assemble_features(d, enc));
    return make_forecast_set(d, drn_predict(model, in));
  }
  throw BundleError("cannot forecast with a " + b.kind + " bundle");
}

// Forecast CSV joined with the observations of data.
ForecastSet csv_forecasts(const fs::path& path, const Dataset& data) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::pair<std::string, std::string>, double> obs;
  for (const auto& s : data.samples) {
    obs[{s.date, s.station_id}] = s.observation.value_or(std::numeric_limits<double>::quiet_NaN());
  }
  ForecastSet set;
  std::string line;
  std::getline(in, line);
  if (line != "date,station_id,mu,sigma") throw DataError(path.string() + ": unexpected header '" + line + "'");
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 4) throw DataError(fmt::format("{}:{}: expected 4 columns", path.string(), n));
    auto it = obs.find({cols[0], cols[1]});
    if (it == obs.end()) {
      throw PairingError(fmt::format("{}:{}: no sample for station {} on {}", path.string(), n, cols[1], cols[0]));
    }
    set.dates.push_back(cols[0]);
    set.station_ids.push_back(cols[1]);
    try {
      set.forecasts.push_back({std::stod(cols[2]), std::stod(cols[3])});
    } catch (const std::exception&) {
      throw DataError(fmt::format("{}:{}: bad number", path.string(), n));
    }
    set.obs.push_back(it->second);
  }
  return set;
}

ForecastSet any_forecasts(const fs::path& path, const fs::path& data, const SplitFlags& split,
                          const std::string& which) {
  if (path.extension() == ".csv") return csv_forecasts(path, load_dataset(data, {}));
  return bundle_forecasts(path, data, split, which);
}

struct PredictFlags {
  fs::path model, data, out;
  std::string split_name = "test";
  SplitFlags split;
};

void predict(const CLI::App& cmd, const PredictFlags& f) {
  const ForecastSet s = bundle_forecasts(f.model, f.data, f.split, f.split_name);
  write_forecasts_csv(f.out, s);
  Manifest m(cmd, 0);
  m.input(f.model);
  m.input(f.data);
  m.output(f.out);
  m.write_beside(f.out);
  std::cout << fmt::format("{} forecasts\n", s.size());
}

struct EvaluateFlags {
  fs::path model, reference, data, out;
  std::string split_name = "test";
  double alpha = 0.05;
  SplitFlags split;
};

void evaluate(const CLI::App& cmd, const EvaluateFlags& f) {
  const ForecastSet s = any_forecasts(f.model, f.data, f.split, f.split_name);
  Manifest m(cmd, 0);
  m.input(f.model);
  m.input(f.data);
  const CrpsSummary overall = mean_crps(s);
  std::cout << fmt::format("mean crps {} over {} pairs ({} without observation)\n", format_number(overall.mean),
                           overall.count, overall.skipped);
  if (f.reference.empty()) {
    std::map<std::string, std::pair<double, std::size_t>> per;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (std::isnan(s.obs[i])) continue;
      auto& [sum, n] = per[s.station_ids[i]];
      sum += crps_gaussian(s.forecasts[i], s.obs[i]);
      ++n;
    }
    std::string text = "station_id,n,crps\n";
    for (const auto& [id, sn] : per) text += fmt::format("{},{},{}\n", id, sn.second, format_number(sn.first / sn.second));
    std::ofstream out(f.out, std::ios::trunc);
    if (!out) throw IoError("cannot write " + f.out.string());
    out << text;
  } else {
    const ForecastSet r = any_forecasts(f.reference, f.data, f.split, f.split_name);
    m.input(f.reference);
    const auto rows = station_crpss(s, r, f.alpha);
    write_station_skill_csv(f.out, rows);
    const DmResult dm = pooled_dm(s, r);
    const auto better = std::count_if(rows.begin(), rows.end(), [](const StationSkill& k) { return k.crpss > 0; });
    std::cout << fmt::format("reference crps {}; better at {} of {} stations; pooled DM {} (p = {})\n",
                             format_number(mean_crps(r).mean), better, rows.size(), format_number(dm.statistic),
                             format_number(dm.p_value));
  }
  m.output(f.out);
  m.write_beside(f.out);
}

struct ImportanceFlags {
  fs::path model, data, out;
  std::string split_name = "test";
  ImportanceOptions opt;
  SplitFlags split;
};

void importance(const CLI::App& cmd, const ImportanceFlags& f) {
  const Bundle b = load_bundle(f.model);
  std::vector<SpatialEncoder> enc;
  const DrnModel model = drn_from_bundle(b, &enc);
  const DatasetSplit s = f.split.apply(load_dataset(f.data, model.config.spatial_variables));
  const DrnInputs in = drn_inputs(model, assemble_features(pick(s, f.split_name), enc));
  const auto rows = permutation_importance(model, in, f.opt);
  write_importance_csv(f.out, rows);
  Manifest m(cmd, f.opt.seed);
  m.input(f.model);
  m.input(f.data);
  m.output(f.out);
  m.write_beside(f.out);
  for (const auto& r : rows) std::cout << fmt::format("{:<20} {}\n", r.feature, format_number(r.mean_delta));
}

struct ReconFlags {
  fs::path data, out;
  std::string var = "t2m";
  std::string bundles;
  SplitFlags split;
};

void recon(const CLI::App& cmd, const ReconFlags& f) {
  const DatasetSplit s = f.split.apply(load_dataset(f.data, {f.var}));
  const auto train = normalized_fields(s.train, f.var);
  const auto test = normalized_fields(s.test, f.var);
  Manifest m(cmd, 0);
  m.input(f.data);
  std::vector<ReconModel> models;
  std::vector<Index> hs;
  std::vector<std::string> methods;
  for (const auto& p : split_list(f.bundles)) {
    const SpatialEncoder e = encoder_from_bundle(load_bundle(p));
    m.input(p);
    if (e.variable != f.var) throw BundleError(fmt::format("{} encodes {}, not {}", p, e.variable, f.var));
    ReconModel rm;
    rm.method = to_string(e.method);
    rm.h = e.latent_dim();
    if (e.convae) {
      rm.mse = [c = *e.convae](std::span<const FieldMatrix> x) { return reconstruction_mse(c, x); };
    } else {
      rm.mse = [pm = *e.pca](std::span<const FieldMatrix> x) {
        RowMat<double> a(static_cast<Index>(x.size()), x[0].size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          a.row(static_cast<Index>(i)) = Eigen::Map<const Vec<float>>(x[i].data(), x[i].size()).cast<double>();
        }
        return pca_reconstruction_mse(pm, a);
      };
    }
    if (std::find(hs.begin(), hs.end(), rm.h) == hs.end()) hs.push_back(rm.h);
    if (std::find(methods.begin(), methods.end(), rm.method) == methods.end()) methods.push_back(rm.method);
    models.push_back(std::move(rm));
  }
  if (models.empty()) throw ConfigError("--bundles lists no encoder bundles");
  std::sort(hs.begin(), hs.end());
  std::sort(methods.begin(), methods.end());
  const auto rows = recon_curve(models, hs, methods, train, test);
  write_recon_csv(f.out, rows);
  m.output(f.out);
  m.write_beside(f.out);
}

struct SweepFlags {
  DrnFlags drn;
  std::string dims = "5,10,15,20";
  fs::path out;
};

void sweep(const CLI::App& cmd, SweepFlags f) {
  Manifest m(cmd, f.drn.cfg.seed);
  const auto enc = f.drn.resolve(m);
  f.drn.cfg.validate();
  std::vector<Index> dims;
  for (const auto& d : split_list(f.dims)) {
    try {
      dims.push_back(std::stol(d));
    } catch (const std::exception&) {
      throw ConfigError("--dims: bad value " + d);
    }
  }
  const DatasetSplit s = f.drn.split.apply(load_dataset(f.drn.data, f.drn.cfg.spatial_variables));
  const auto rows = embed_sweep(f.drn.cfg, dims, s, enc);
  write_sweep_csv(f.out, rows);
  m.input(f.drn.data);
  m.output(f.out);
  m.write_beside(f.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian post-processing of ensemble forecasts with spatial latent codes"};
  app.require_subcommand(1);
  app.set_help_flag("-h,--help", "Print this help message and exit");
  // --h is the latent dimension, so subcommands only take the long help flag.
  auto sub = [&app](const std::string& name, const std::string& desc) {
    CLI::App* c = app.add_subcommand(name, desc);
    c->set_help_flag("--help", "Print this help message and exit");
    return c;
  };

  GenFlags gen;
  auto* c_gen = sub("gen-data", "Generate a synthetic dataset");
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--vars", gen.cfg.variables, "Grid variables")->capture_default_str();
  c_gen->add_option("--stations", gen.cfg.stations, "Stations")->capture_default_str();
  c_gen->add_option("--days", gen.cfg.days, "Days (360-day calendar)")->capture_default_str();
  c_gen->add_option("--ens", gen.cfg.members, "Ensemble members")->capture_default_str();
  c_gen->add_option("--gamma", gen.cfg.gamma, "Weight of the large-scale signal")->capture_default_str();
  c_gen->add_option("--quadratic", gen.cfg.quadratic, "Weight of the quadratic predictor term")->capture_default_str();
  c_gen->add_option("--bias", gen.cfg.bias, "Ensemble bias of the target")->capture_default_str();
  c_gen->add_option("--length-scale", gen.cfg.length_scale, "Field smoothing length in cells")->capture_default_str();
  c_gen->add_option("--obs-noise", gen.cfg.obs_noise, "Observation noise sd")->capture_default_str();
  c_gen->add_option("--missing", gen.cfg.missing_fraction, "Fraction of missing observations")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  c_gen->add_flag("--force", gen.force, "Write into a non-empty directory");

  ConvAeFlags cae;
  auto* c_cae = sub("train-convae", "Train a convolutional autoencoder on one variable");
  c_cae->add_option("--data", cae.data, "Dataset directory")->required();
  c_cae->add_option("--var", cae.var, "Grid variable")->capture_default_str();
  c_cae->add_option("--h", cae.h, "Latent dimension")->capture_default_str();
  c_cae->add_option("--out", cae.out, "Output bundle")->required();
  c_cae->add_option("--pool-stride", cae.pool_stride, "Max-pooling stride")->capture_default_str();
  c_cae->add_option("--seed", cae.seed, "Seed")->capture_default_str();
  c_cae->add_option("--epochs", cae.epochs, "Maximum epochs")->capture_default_str();
  c_cae->add_option("--patience", cae.patience, "Early-stopping patience")->capture_default_str();
  c_cae->add_option("--max-train", cae.max_train, "Use at most this many training fields (0 = all)")
      ->capture_default_str();
  c_cae->add_option("--history", cae.history, "Write epoch,train_mse,val_mse CSV");
  cae.split.add(c_cae);

  PcaFlags pca;
  auto* c_pca = sub("train-pca", "Fit PCA to one variable");
  c_pca->add_option("--data", pca.data, "Dataset directory")->required();
  c_pca->add_option("--var", pca.var, "Grid variable")->capture_default_str();
  c_pca->add_option("--h", pca.h, "Components")->capture_default_str();
  c_pca->add_option("--out", pca.out, "Output bundle")->required();
  pca.split.add(c_pca);

  EmosFlags emos;
  auto* c_emos = sub("train-emos", "Fit per-station EMOS");
  c_emos->add_option("--data", emos.data, "Dataset directory")->required();
  c_emos->add_option("--var", emos.var, "Target variable")->capture_default_str();
  c_emos->add_option("--out", emos.out, "Output bundle")->required();
  emos.split.add(c_emos);

  DrnFlags drn;
  auto* c_drn = sub("train-drn", "Train a distributional regression network");
  drn.add(c_drn);
  c_drn->add_option("--out", drn.out, "Output bundle")->required();

  PredictFlags pred;
  auto* c_pred = sub("predict", "Write forecasts of an EMOS or DRN bundle");
  c_pred->add_option("--model", pred.model, "Model bundle")->required();
  c_pred->add_option("--data", pred.data, "Dataset directory")->required();
  c_pred->add_option("--out", pred.out, "Forecast CSV")->required();
  c_pred->add_option("--split", pred.split_name, "train, validation or test")->capture_default_str();
  pred.split.add(c_pred);

  EvaluateFlags ev;
  auto* c_ev = sub("evaluate", "Score forecasts, optionally against a reference");
  c_ev->add_option("--model", ev.model, "Model bundle or forecast CSV")->required();
  c_ev->add_option("--reference", ev.reference, "Reference bundle or forecast CSV");
  c_ev->add_option("--data", ev.data, "Dataset directory")->required();
  c_ev->add_option("--out", ev.out, "Per-station CSV")->required();
  c_ev->add_option("--split", ev.split_name, "train, validation or test")->capture_default_str();
  c_ev->add_option("--alpha", ev.alpha, "Significance level")->capture_default_str();
  ev.split.add(c_ev);

  ImportanceFlags imp;
  auto* c_imp = sub("importance", "Permutation importance of a DRN bundle");
  c_imp->add_option("--model", imp.model, "DRN bundle")->required();
  c_imp->add_option("--data", imp.data, "Dataset directory")->required();
  c_imp->add_option("--out", imp.out, "Importance CSV")->required();
  c_imp->add_option("--repeats", imp.opt.repeats, "Members to use (0 = all)")->capture_default_str();
  c_imp->add_option("--seed", imp.opt.seed, "Permutation seed")->capture_default_str();
  c_imp->add_option("--split", imp.split_name, "train, validation or test")->capture_default_str();
  imp.split.add(c_imp);

  ReconFlags rec;
  auto* c_rec = sub("recon-curve", "Reconstruction MSE of encoder bundles");
  c_rec->add_option("--data", rec.data, "Dataset directory")->required();
  c_rec->add_option("--var", rec.var, "Grid variable")->capture_default_str();
  c_rec->add_option("--bundles", rec.bundles, "Comma-separated convae/pca bundles")->required();
  c_rec->add_option("--out", rec.out, "Output CSV")->required();
  rec.split.add(c_rec);

  SweepFlags sw;
  auto* c_sw = sub("embed-sweep", "Test CRPS over embedding dimensions");
  sw.drn.add(c_sw);
  c_sw->add_option("--dims", sw.dims, "Comma-separated embedding dimensions")->capture_default_str();
  c_sw->add_option("--out", sw.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*c_gen) gen_data(*c_gen, gen);
    if (*c_cae) train_convae(*c_cae, cae);
    if (*c_pca) train_pca(*c_pca, pca);
    if (*c_emos) train_emos(*c_emos, emos);
    if (*c_drn) train_drn(*c_drn, drn);
    if (*c_pred) predict(*c_pred, pred);
    if (*c_ev) evaluate(*c_ev, ev);
    if (*c_imp) importance(*c_imp, imp);
    if (*c_rec) recon(*c_rec, rec);
    if (*c_sw) sweep(*c_sw, sw);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
