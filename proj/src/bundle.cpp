#include "gridpost/bundle.hpp"

#include <fmt/format.h>

#include <bit>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iterator>

namespace gridpost {

static_assert(std::endian::native == std::endian::little, "bundle payloads assume a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'M', 'B', 'D', '1'};
constexpr std::uint32_t kVersion = 1;

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::atoll(epoch));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw BundleError("unknown blob dtype " + dtype);
}

template <typename T>
void append(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_at(const std::string& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof v);
  return v;
}

}  // namespace

void Bundle::put(const std::string& name, const Tensor<float>& t) {
  Blob b{"f32", t.shape(), std::string(reinterpret_cast<const char*>(t.data().data()), sizeof(float) * t.size())};
  blobs[name] = std::move(b);
}

void Bundle::put(const std::string& name, const Eigen::Ref<const RowMat<double>>& m) {
  const RowMat<double> copy = m;
  Blob b{"f64", {m.rows(), m.cols()}, std::string(reinterpret_cast<const char*>(copy.data()), sizeof(double) * copy.size())};
  blobs[name] = std::move(b);
}

const Blob& Bundle::blob(const std::string& name) const {
  auto it = blobs.find(name);
  if (it == blobs.end()) throw BundleError(fmt::format("{} bundle lacks blob '{}'", kind, name));
  return it->second;
}

Tensor<float> Bundle::tensor(const std::string& name) const {
  const Blob& b = blob(name);
  if (b.dtype != "f32") throw BundleError("blob " + name + " is not f32");
  Tensor<float> t(b.shape);
  std::memcpy(t.data().data(), b.bytes.data(), b.bytes.size());
  return t;
}

RowMat<double> Bundle::matrix(const std::string& name) const {
  const Blob& b = blob(name);
  if (b.dtype != "f64" || b.shape.size() != 2) throw BundleError("blob " + name + " is not an f64 matrix");
  RowMat<double> m(b.shape[0], b.shape[1]);
  std::memcpy(m.data(), b.bytes.data(), b.bytes.size());
  return m;
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
  json header;
  header["kind"] = bundle.kind;
  header["created"] = bundle.created.empty() ? utc_now() : bundle.created;
  header["meta"] = bundle.meta;
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& [name, b] : bundle.blobs) {
    table.push_back({{"name", name}, {"dtype", b.dtype}, {"shape", b.shape}, {"offset", offset}, {"bytes", b.bytes.size()}});
    offset += b.bytes.size();
  }
  header["blobs"] = table;
  const std::string text = header.dump();

  std::string buf(kMagic, 4);
  append<std::uint32_t>(buf, kVersion);
  append<std::uint64_t>(buf, text.size());
  buf += text;
  for (const auto& [name, b] : bundle.blobs) buf += b.bytes;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write bundle " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Bundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open bundle " + path.string());
  const std::string buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad magic in " + path.string(), 0);
  if (read_at<std::uint32_t>(buf, 4) != kVersion) throw FormatError("unsupported bundle version in " + path.string(), 4);
  const auto len = read_at<std::uint64_t>(buf, 8);
  if (16 + len > buf.size()) throw FormatError("truncated bundle header in " + path.string(), 16);

  json header;
  try {
    header = json::parse(buf.substr(16, len));
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("unreadable bundle header in {}: {}", path.string(), e.what()), 16);
  }
  Bundle b;
  const std::size_t payload = 16 + len;
  try {
    b.kind = header.at("kind").get<std::string>();
    b.created = header.at("created").get<std::string>();
    b.meta = header.at("meta");
    std::size_t end = payload;
    for (const auto& e : header.at("blobs")) {
      Blob blob;
      blob.dtype = e.at("dtype").get<std::string>();
      blob.shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::size_t>();
      const auto size = e.at("bytes").get<std::size_t>();
      if (shape_size(blob.shape) * static_cast<Index>(dtype_size(blob.dtype)) != static_cast<Index>(size)) {
        throw BundleError("blob " + e.at("name").get<std::string>() + " size does not match its shape");
      }
      if (payload + off + size > buf.size()) {
        throw FormatError("truncated bundle payload in " + path.string(), static_cast<long long>(payload + off));
      }
      blob.bytes = buf.substr(payload + off, size);
      end = std::max(end, payload + off + size);
      b.blobs[e.at("name").get<std::string>()] = std::move(blob);
    }
    if (end != buf.size()) throw FormatError("trailing bytes in bundle " + path.string(), static_cast<long long>(end));
  } catch (const json::exception& e) {
    throw BundleError(fmt::format("malformed bundle header in {}: {}", path.string(), e.what()));
  }
  return b;
}

void expect_kind(const Bundle& bundle, const std::string& kind) {
  if (bundle.kind != kind) throw BundleError(fmt::format("expected a {} bundle, got {}", kind, bundle.kind));
}

// --- EMOS ----------------------------------------------------------------

std::vector<std::string> emos_deviations() {
  return {"sigma = softplus(c + d*sd) instead of the affine c + d*sd",
          "fitted per station by full-batch gradient descent with Armijo backtracking on standardized predictors"};
}

Bundle emos_bundle(const EmosModel& model) {
  Bundle b;
  b.kind = "emos";
  b.meta["mean_predictor"] = model.mean_predictor;
  b.meta["sd_predictor"] = model.sd_predictor;
  b.meta["deviations"] = emos_deviations();
  json st = json::array();
  for (std::size_t k = 0; k < model.station_ids.size(); ++k) {
    const EmosParams& p = model.params[k];
    st.push_back({{"id", model.station_ids[k]}, {"a", p.a}, {"b", p.b}, {"c", p.c}, {"d", p.d},
                  {"sd_fixed", p.sd_fixed}, {"mean_fixed", p.mean_fixed}, {"iterations", p.iterations}});
  }
  b.meta["stations"] = st;
  return b;
}

EmosModel emos_from_bundle(const Bundle& b) {
  expect_kind(b, "emos");
  EmosModel m;
  try {
    m.mean_predictor = b.meta.at("mean_predictor");
    m.sd_predictor = b.meta.at("sd_predictor");
    for (const auto& s : b.meta.at("stations")) {
      m.station_ids.push_back(s.at("id"));
      EmosParams p;
      p.a = s.at("a");
      p.b = s.at("b");
      p.c = s.at("c");
      p.d = s.at("d");
      p.sd_fixed = s.at("sd_fixed");
      p.mean_fixed = s.at("mean_fixed");
      p.iterations = s.at("iterations");
      m.params.push_back(p);
    }
  } catch (const json::exception& e) {
    throw BundleError(std::string("emos bundle: ") + e.what());
  }
  return m;
}

// --- PCA -----------------------------------------------------------------

Bundle pca_bundle(const PcaModel& model, const std::string& variable, Index height, Index width) {
  if (height * width != model.input_dim()) throw DimensionError("pca bundle: field shape does not match model");
  Bundle b;
  b.kind = "pca";
  b.meta["variable"] = variable;
  b.meta["h"] = model.latent_dim();
  b.meta["height"] = height;
  b.meta["width"] = width;
  b.meta["total_variance"] = model.total_variance;
  b.meta["fit"] = "thin SVD of the centered training fields";
  b.put("mean", model.mean.transpose());
  b.put("components", model.components);
  b.put("eigenvalues", model.eigenvalues.transpose());
  return b;
}

PcaModel pca_from_bundle(const Bundle& b) {
  expect_kind(b, "pca");
  PcaModel m;
  m.mean = b.matrix("mean").row(0).transpose();
  m.components = b.matrix("components");
  m.eigenvalues = b.matrix("eigenvalues").row(0).transpose();
  try {
    m.total_variance = b.meta.at("total_variance");
    if (b.meta.at("h").get<Index>() != m.latent_dim()) throw BundleError("pca bundle: h does not match components");
  } catch (const json::exception& e) {
    throw BundleError(std::string("pca bundle: ") + e.what());
  }
  if (m.mean.size() != m.input_dim() || m.eigenvalues.size() != m.latent_dim()) {
    throw BundleError("pca bundle: inconsistent blob shapes");
  }
  return m;
}

// --- ConvAE --------------------------------------------------------------

json to_json(const ConvAeConfig& c) {
  return {{"latent_dim", c.latent_dim},       {"height", c.height},
          {"width", c.width},                 {"encoder_filters", c.encoder_filters},
          {"conv_kernel", c.conv_kernel},     {"conv_stride", c.conv_stride},
          {"conv_pad", c.conv_pad},           {"pool_window", c.pool_window},
          {"pool_stride", c.pool_stride},     {"bridge_width", c.bridge_width},
          {"decoder_filters", c.decoder_filters}, {"decoder_kernel", c.decoder_kernel},
          {"decoder_stride", c.decoder_stride}, {"decoder_pad", c.decoder_pad},
          {"output_kernel", c.output_kernel}, {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},
          {"patience", c.patience},           {"seed", c.seed}};
}

ConvAeConfig convae_config_from_json(const json& j) {
  ConvAeConfig c;
  try {
    c.latent_dim = j.at("latent_dim");
    c.height = j.at("height");
    c.width = j.at("width");
    c.encoder_filters = j.at("encoder_filters").get<std::vector<Index>>();
    c.conv_kernel = j.at("conv_kernel");
    c.conv_stride = j.at("conv_stride");
    c.conv_pad = j.at("conv_pad");
    c.pool_window = j.at("pool_window");
    c.pool_stride = j.at("pool_stride");
    c.bridge_width = j.at("bridge_width");
    c.decoder_filters = j.at("decoder_filters").get<std::vector<Index>>();
    c.decoder_kernel = j.at("decoder_kernel");
    c.decoder_stride = j.at("decoder_stride");
    c.decoder_pad = j.at("decoder_pad");
    c.output_kernel = j.at("output_kernel");
    c.learning_rate = j.at("learning_rate");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.patience = j.at("patience");
    c.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw BundleError(std::string("convae config: ") + e.what());
  }
  return c;
}

namespace {

void put_network(Bundle& b, const std::string& prefix, const Sequential<float>& net) {
  for (std::size_t i = 0; i < net.parameters().size(); ++i) b.put(fmt::format("{}.{}", prefix, i), net.parameters()[i]);
}

void load_network(const Bundle& b, const std::string& prefix, Sequential<float>& net) {
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    Tensor<float> t = b.tensor(fmt::format("{}.{}", prefix, i));
    if (t.shape() != net.parameters()[i].shape()) {
      throw BundleError(fmt::format("{}.{} has shape {}, architecture expects {}", prefix, i, shape_string(t.shape()),
                                    shape_string(net.parameters()[i].shape())));
    }
    net.parameters()[i] = std::move(t);
  }
}

}  // namespace

Bundle convae_bundle(const ConvAeModel& model, const std::string& variable) {
  Bundle b;
  b.kind = "convae";
  b.meta["variable"] = variable;
  b.meta["config"] = to_json(model.config);
  b.meta["deviations"] = model.config.deviations();
  b.meta["parameter_count"] = model.parameter_count();
  b.meta["best_epoch"] = model.best_epoch;
  json hist = json::array();
  for (const auto& r : model.history) hist.push_back({r.epoch, r.train_mse, r.val_mse});
  b.meta["history"] = hist;
  put_network(b, "encoder", model.encoder);
  put_network(b, "decoder", model.decoder);
  return b;
}

ConvAeModel convae_from_bundle(const Bundle& b) {
  expect_kind(b, "convae");
  ConvAeModel m = convae_build(convae_config_from_json(b.meta.at("config")));
  load_network(b, "encoder", m.encoder);
  load_network(b, "decoder", m.decoder);
  try {
    m.best_epoch = b.meta.at("best_epoch");
    for (const auto& r : b.meta.at("history")) m.history.push_back({r.at(0), r.at(1), r.at(2)});
    if (b.meta.at("parameter_count").get<Index>() != m.parameter_count()) {
      throw BundleError("convae bundle: parameter count does not match the architecture");
    }
  } catch (const json::exception& e) {
    throw BundleError(std::string("convae bundle: ") + e.what());
  }
  return m;
}

Bundle encoder_bundle(const SpatialEncoder& e) {
  if (e.method == SpatialMode::convae && e.convae) return convae_bundle(*e.convae, e.variable);
  if (e.method == SpatialMode::pca && e.pca) {
    const Index side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(e.pca->input_dim()))));
    return pca_bundle(*e.pca, e.variable, side, e.pca->input_dim() / side);
  }
  throw ConfigError("encoder for " + e.variable + " holds no model");
}

SpatialEncoder encoder_from_bundle(const Bundle& b) {
  SpatialEncoder e;
  try {
    e.variable = b.meta.at("variable");
  } catch (const json::exception&) {
    throw BundleError(b.kind + " bundle has no variable");
  }
  if (b.kind == "convae") {
    e.method = SpatialMode::convae;
    e.convae = convae_from_bundle(b);
  } else if (b.kind == "pca") {
    e.method = SpatialMode::pca;
    e.pca = pca_from_bundle(b);
  } else {
    throw BundleError("expected a convae or pca bundle, got " + b.kind);
  }
  return e;
}

// --- DRN -----------------------------------------------------------------

std::vector<std::string> drn_deviations() {
  return {"sigma = softplus(raw output) instead of an unconstrained output",
          "targets standardized by the training mean and sd; mu and sigma de-standardized at the output",
          "batch size 1024 (unspecified in reference)",
          "embedding rows initialized uniform in [-0.05, 0.05]",
          "ensemble aggregation averages mu and sigma over repetitions"};
}

json to_json(const DrnConfig& c) {
  return {{"embedding_dim", c.embedding_dim}, {"hidden", c.hidden},
          {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},       {"patience", c.patience},
          {"repetitions", c.repetitions},     {"seed", c.seed},
          {"spatial_mode", to_string(c.spatial_mode)}, {"spatial_variables", c.spatial_variables},
          {"latent_dim", c.latent_dim}};
}

DrnConfig drn_config_from_json(const json& j) {
  DrnConfig c;
  try {
    c.embedding_dim = j.at("embedding_dim");
    c.hidden = j.at("hidden").get<std::vector<Index>>();
    c.learning_rate = j.at("learning_rate");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.patience = j.at("patience");
    c.repetitions = j.at("repetitions");
    c.seed = j.at("seed");
    c.spatial_mode = parse_spatial_mode(j.at("spatial_mode"));
    c.spatial_variables = j.at("spatial_variables").get<std::vector<std::string>>();
    c.latent_dim = j.at("latent_dim");
  } catch (const json::exception& e) {
    throw BundleError(std::string("drn config: ") + e.what());
  }
  return c;
}

Bundle drn_bundle(const DrnModel& model, std::span<const SpatialEncoder> encoders) {
  Bundle b;
  b.kind = "drn";
  b.meta["config"] = to_json(model.config);
  b.meta["deviations"] = drn_deviations();
  const FeatureLayout& L = model.layout;
  b.meta["layout"] = {{"names", L.names},
                      {"mean", L.mean},
                      {"sd", L.sd},
                      {"predictor_count", L.predictor_count},
                      {"meta_count", L.meta_count},
                      {"spatial_variables", L.spatial_variables},
                      {"latent_dim", L.latent_dim}};
  b.meta["station_ids"] = model.station_ids;
  b.meta["target_mean"] = model.target_mean;
  b.meta["target_sd"] = model.target_sd;
  json members = json::array();
  for (std::size_t k = 0; k < model.members.size(); ++k) {
    const DrnMember& m = model.members[k];
    json hist = json::array();
    for (const auto& r : m.history) hist.push_back({r.epoch, r.train_crps, r.val_crps});
    members.push_back({{"best_epoch", m.best_epoch}, {"history", hist}});
    b.put(fmt::format("member{}.embedding", k), m.embedding.table);
    put_network(b, fmt::format("member{}.net", k), m.net);
  }
  b.meta["members"] = members;
  json enc = json::array();
  for (std::size_t i = 0; i < encoders.size(); ++i) {
    const Bundle e = encoder_bundle(encoders[i]);
    enc.push_back({{"kind", e.kind}, {"meta", e.meta}});
    for (const auto& [name, blob] : e.blobs) b.blobs[fmt::format("encoder{}/{}", i, name)] = blob;
  }
  b.meta["encoders"] = enc;
  return b;
}

DrnModel drn_from_bundle(const Bundle& b, std::vector<SpatialEncoder>* encoders) {
  expect_kind(b, "drn");
  DrnModel m;
  m.config = drn_config_from_json(b.meta.at("config"));
  try {
    const json& L = b.meta.at("layout");
    m.layout.names = L.at("names").get<std::vector<std::string>>();
    m.layout.mean = L.at("mean").get<std::vector<double>>();
    m.layout.sd = L.at("sd").get<std::vector<double>>();
    m.layout.predictor_count = L.at("predictor_count");
    m.layout.meta_count = L.at("meta_count");
    m.layout.spatial_variables = L.at("spatial_variables").get<std::vector<std::string>>();
    m.layout.latent_dim = L.at("latent_dim");
    m.station_ids = b.meta.at("station_ids").get<std::vector<std::string>>();
    m.target_mean = b.meta.at("target_mean");
    m.target_sd = b.meta.at("target_sd");
    if (m.layout.mean.size() != m.layout.names.size() || m.layout.sd.size() != m.layout.names.size()) {
      throw BundleError("drn bundle: layout statistics do not match feature names");
    }

    std::vector<LayerSpec> specs;
    for (Index w : m.config.hidden) specs.push_back(LayerSpec::dense(w, Activation::relu));
    specs.push_back(LayerSpec::dense(2, Activation::linear));
    const auto& members = b.meta.at("members");
    for (std::size_t k = 0; k < members.size(); ++k) {
      DrnMember mem;
      mem.embedding.table = b.tensor(fmt::format("member{}.embedding", k));
      if (mem.embedding.table.shape() !=
          Shape{static_cast<Index>(m.station_ids.size()), m.config.embedding_dim}) {
        throw BundleError(fmt::format("drn bundle: member {} embedding has the wrong shape", k));
      }
      mem.net = Sequential<float>({m.config.embedding_dim + m.layout.size()}, specs);
      load_network(b, fmt::format("member{}.net", k), mem.net);
      mem.best_epoch = members[k].at("best_epoch");
      for (const auto& r : members[k].at("history")) mem.history.push_back({r.at(0), r.at(1), r.at(2)});
      m.members.push_back(std::move(mem));
    }

    if (encoders) {
      encoders->clear();
      const auto& enc = b.meta.at("encoders");
      for (std::size_t i = 0; i < enc.size(); ++i) {
        Bundle e;
        e.kind = enc[i].at("kind");
        e.meta = enc[i].at("meta");
        const std::string prefix = fmt::format("encoder{}/", i);
        for (const auto& [name, blob] : b.blobs) {
          if (name.rfind(prefix, 0) == 0) e.blobs[name.substr(prefix.size())] = blob;
        }
        encoders->push_back(encoder_from_bundle(e));
      }
    }
  } catch (const json::exception& e) {
    throw BundleError(std::string("drn bundle: ") + e.what());
  }
  return m;
}

}  // namespace gridpost
