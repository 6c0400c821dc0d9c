#include "gridpost/dataio.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gridpost {

void GridSpec::validate() const {
  if (nlon < 2 || nlat < 2) throw ConfigError("grid needs at least 2x2 nodes");
  if (!(dlon > 0) || !(dlat > 0)) throw ConfigError("grid spacing must be positive");
  if (nlon > 65535 || nlat > 65535) throw ConfigError("grid extent exceeds 65535");
}

bool GridSpec::contains(double lat, double lon) const {
  constexpr double tol = 1e-9;
  return lat >= lat0 - tol && lat <= lat_max() + tol && lon >= lon0 - tol && lon <= lon_max() + tol;
}

NormalizedField minmax_normalize(const GridField& field) {
  if (!field.values.allFinite()) {
    throw DataError("non-finite value in field " + field.variable + " " + field.valid_date);
  }
  NormalizedField out{field, 0.0, 0.0};
  const double lo = field.values.minCoeff();
  const double hi = field.values.maxCoeff();
  out.min = lo;
  out.max = hi;
  if (hi == lo) {
    out.field.values.setConstant(0.5f);
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  out.field.values = field.values.unaryExpr([&](float v) {
    return static_cast<float>(std::clamp((static_cast<double>(v) - lo) * inv, 0.0, 1.0));
  });
  return out;
}

BilinearStencil bilinear_stencil(const GridSpec& spec, double lat, double lon) {
  if (!spec.contains(lat, lon)) {
    throw DomainError(fmt::format("location ({}, {}) outside grid [{}, {}] x [{}, {}]", lat, lon,
                                  spec.lat0, spec.lat_max(), spec.lon0, spec.lon_max()));
  }
  const double fy = std::clamp((spec.lat_max() - lat) / spec.dlat, 0.0, static_cast<double>(spec.nlat - 1));
  const double fx = std::clamp((lon - spec.lon0) / spec.dlon, 0.0, static_cast<double>(spec.nlon - 1));
  BilinearStencil s;
  s.row = std::min<Index>(static_cast<Index>(std::floor(fy)), spec.nlat - 2);
  s.col = std::min<Index>(static_cast<Index>(std::floor(fx)), spec.nlon - 2);
  const double ty = fy - static_cast<double>(s.row);
  const double tx = fx - static_cast<double>(s.col);
  s.w00 = (1 - ty) * (1 - tx);
  s.w01 = (1 - ty) * tx;
  s.w10 = ty * (1 - tx);
  s.w11 = ty * tx;
  return s;
}

double bilinear_interpolate(const GridField& field, double lat, double lon) {
  return bilinear_stencil(field.spec, lat, lon).apply(field.values);
}

// --- grid binary format --------------------------------------------------

namespace {

constexpr char kGridMagic[4] = {'G', 'F', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 4 * 8;
constexpr std::size_t kDateBytes = 10;
constexpr std::size_t kVarBytes = 8;

template <typename T>
void put_le(std::string& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const std::string& buf, std::size_t offset) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, buf.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void write_grid(const std::filesystem::path& path, std::span<const GridField> fields) {
  if (fields.empty()) throw ConfigError("write_grid: no fields");
  const GridSpec& spec = fields.front().spec;
  spec.validate();
  std::string buf;
  const std::size_t cells = static_cast<std::size_t>(spec.nlat * spec.nlon);
  buf.reserve(kHeaderBytes + fields.size() * (kDateBytes + kVarBytes + 4 * cells));
  buf.append(kGridMagic, 4);
  put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(spec.nlat));
  put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(spec.nlon));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(fields.size()));
  put_le<double>(buf, spec.lon0);
  put_le<double>(buf, spec.lat0);
  put_le<double>(buf, spec.dlon);
  put_le<double>(buf, spec.dlat);
  for (const GridField& f : fields) {
    if (!(f.spec == spec)) throw ConfigError("write_grid: fields with differing grid specs");
    if (f.values.rows() != spec.nlat || f.values.cols() != spec.nlon) {
      throw DimensionError("write_grid: field shape does not match grid spec");
    }
    if (f.valid_date.size() != kDateBytes) throw ConfigError("write_grid: bad date '" + f.valid_date + "'");
    if (f.variable.empty() || f.variable.size() > kVarBytes) {
      throw ConfigError("write_grid: variable id must be 1..8 characters");
    }
    buf.append(f.valid_date);
    std::string var = f.variable;
    var.resize(kVarBytes, ' ');
    buf.append(var);
    for (Index r = 0; r < spec.nlat; ++r) {
      for (Index c = 0; c < spec.nlon; ++c) put_le<float>(buf, f.values(r, c));
    }
  }
  write_file(path, buf);
}

std::vector<GridField> read_grid(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), kGridMagic, 4) != 0) {
    throw FormatError("bad magic in " + path.string(), 0);
  }
  if (buf.size() < kHeaderBytes) throw FormatError("truncated header in " + path.string(), static_cast<long long>(buf.size()));
  GridSpec spec;
  spec.nlat = get_le<std::uint16_t>(buf, 4);
  spec.nlon = get_le<std::uint16_t>(buf, 6);
  const std::uint32_t count = get_le<std::uint32_t>(buf, 8);
  spec.lon0 = get_le<double>(buf, 12);
  spec.lat0 = get_le<double>(buf, 20);
  spec.dlon = get_le<double>(buf, 28);
  spec.dlat = get_le<double>(buf, 36);
  if (spec.nlat < 2 || spec.nlon < 2 || !(spec.dlon > 0) || !(spec.dlat > 0)) {
    throw FormatError("invalid grid header in " + path.string(), 4);
  }
  const std::size_t cells = static_cast<std::size_t>(spec.nlat * spec.nlon);
  const std::size_t record = kDateBytes + kVarBytes + 4 * cells;

  std::vector<GridField> fields;
  fields.reserve(count);
  std::size_t off = kHeaderBytes;
  for (std::uint32_t t = 0; t < count; ++t) {
    if (off + record > buf.size()) {
      throw FormatError(fmt::format("truncated payload in {}: record {} of {} incomplete", path.string(), t, count),
                        static_cast<long long>(off));
    }
    GridField f;
    f.spec = spec;
    f.valid_date = buf.substr(off, kDateBytes);
    std::string var = buf.substr(off + kDateBytes, kVarBytes);
    var.erase(var.find_last_not_of(' ') + 1);
    f.variable = var;
    f.values.resize(spec.nlat, spec.nlon);
    std::size_t p = off + kDateBytes + kVarBytes;
    for (Index r = 0; r < spec.nlat; ++r) {
      for (Index c = 0; c < spec.nlon; ++c, p += 4) f.values(r, c) = get_le<float>(buf, p);
    }
    fields.push_back(std::move(f));
    off += record;
  }
  if (off != buf.size()) {
    throw FormatError("trailing bytes after declared records in " + path.string(), static_cast<long long>(off));
  }
  return fields;
}

// --- CSV -----------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw DataError(fmt::format("{}:{}: cannot parse number '{}'", path.string(), line, s));
  }
  return v;
}

struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line, cells)
};

CsvFile read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvFile csv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (csv.header.empty()) {
      csv.header = split_csv(line);
      continue;
    }
    auto cells = split_csv(line);
    if (cells.size() != csv.header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} columns, got {}", path.string(), lineno,
                                  csv.header.size(), cells.size()));
    }
    csv.rows.emplace_back(lineno, std::move(cells));
  }
  if (csv.header.empty()) throw DataError(path.string() + ": missing header");
  return csv;
}

void require_header(const CsvFile& csv, const std::vector<std::string>& expected,
                    const std::filesystem::path& path) {
  if (csv.header.size() < expected.size() ||
      !std::equal(expected.begin(), expected.end(), csv.header.begin())) {
    throw DataError(path.string() + ": unexpected header");
  }
}

std::string fmt_num(double v) { return fmt::format("{:.9g}", v); }

void write_text(const std::filesystem::path& path, const std::string& text) { write_file(path, text); }

}  // namespace

std::vector<Station> read_stations(const std::filesystem::path& path, const GridSpec& grid) {
  const CsvFile csv = read_csv(path);
  require_header(csv, {"station_id", "lat", "lon", "altitude", "orography"}, path);
  std::vector<Station> out;
  std::set<std::string> seen;
  for (const auto& [line, c] : csv.rows) {
    Station s{c[0], parse_number(c[1], path, line), parse_number(c[2], path, line),
              parse_number(c[3], path, line), parse_number(c[4], path, line)};
    if (!grid.contains(s.lat, s.lon)) {
      throw DataError(fmt::format("{}:{}: station {} at ({}, {}) outside grid bounds", path.string(),
                                  line, s.id, s.lat, s.lon));
    }
    if (!seen.insert(s.id).second) throw DataError(fmt::format("{}:{}: duplicate station {}", path.string(), line, s.id));
    out.push_back(std::move(s));
  }
  return out;
}

void write_stations(const std::filesystem::path& path, std::span<const Station> stations) {
  std::string text = "station_id,lat,lon,altitude,orography\n";
  for (const Station& s : stations) {
    text += fmt::format("{},{},{},{},{}\n", s.id, fmt_num(s.lat), fmt_num(s.lon), fmt_num(s.altitude),
                        fmt_num(s.orography));
  }
  write_text(path, text);
}

std::vector<Observation> read_observations(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  require_header(csv, {"date", "station_id", "obs"}, path);
  std::vector<Observation> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [line, c] : csv.rows) {
    Observation o{c[0], c[1], std::nullopt};
    if (!c[2].empty()) o.value = parse_number(c[2], path, line);
    if (!seen.insert({o.station_id, o.date}).second) {
      throw DataError(fmt::format("{}:{}: duplicate observation for station {} on {}", path.string(),
                                  line, o.station_id, o.date));
    }
    out.push_back(std::move(o));
  }
  return out;
}

void write_observations(const std::filesystem::path& path, std::span<const Observation> obs) {
  std::string text = "date,station_id,obs\n";
  for (const Observation& o : obs) {
    text += o.date + "," + o.station_id + "," + (o.value ? fmt_num(*o.value) : std::string()) + "\n";
  }
  write_text(path, text);
}

PredictorTable read_predictors(const std::filesystem::path& path) {
  const CsvFile csv = read_csv(path);
  require_header(csv, {"date", "station_id"}, path);
  PredictorTable t;
  t.names.assign(csv.header.begin() + 2, csv.header.end());
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [line, c] : csv.rows) {
    PredictorRow r{c[0], c[1], {}};
    for (std::size_t k = 2; k < c.size(); ++k) r.values.push_back(parse_number(c[k], path, line));
    if (!seen.insert({r.station_id, r.date}).second) {
      throw DataError(fmt::format("{}:{}: duplicate predictors for station {} on {}", path.string(),
                                  line, r.station_id, r.date));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

void write_predictors(const std::filesystem::path& path, const PredictorTable& table) {
  std::string text = "date,station_id";
  for (const auto& n : table.names) text += "," + n;
  text += "\n";
  for (const PredictorRow& r : table.rows) {
    text += r.date + "," + r.station_id;
    for (double v : r.values) text += "," + fmt_num(v);
    text += "\n";
  }
  write_text(path, text);
}

// --- dataset -------------------------------------------------------------

Index Dataset::station_index(const std::string& id) const {
  for (std::size_t i = 0; i < stations.size(); ++i) {
    if (stations[i].id == id) return static_cast<Index>(i);
  }
  return -1;
}

Index Dataset::predictor_index(const std::string& name) const {
  auto it = std::find(predictor_names.begin(), predictor_names.end(), name);
  return it == predictor_names.end() ? -1 : static_cast<Index>(it - predictor_names.begin());
}

std::size_t Dataset::date_index(const std::string& date) const {
  auto it = std::lower_bound(dates.begin(), dates.end(), date);
  if (it == dates.end() || *it != date) throw DataError("unknown date " + date);
  return static_cast<std::size_t>(it - dates.begin());
}

const GridField& Dataset::field(const std::string& variable, std::size_t date_index) const {
  auto it = fields.find(variable);
  if (it == fields.end()) throw DataError("no grids loaded for variable " + variable);
  return it->second.at(date_index);
}

std::string synthetic_date(int day, int start_year) {
  const int year = start_year + day / 360;
  const int month = (day % 360) / 30 + 1;
  const int dom = day % 30 + 1;
  return fmt::format("{:04d}-{:02d}-{:02d}", year, month, dom);
}

DatasetSplit chronological_split(const Dataset& data, const std::string& train_end,
                                 const std::string& val_end) {
  if (!(train_end < val_end)) throw ConfigError("split: train_end must precede val_end");
  // sort-then-split
  std::vector<std::size_t> order(data.dates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data.dates[a] < data.dates[b]; });

  DatasetSplit split;
  for (Dataset* part : {&split.train, &split.validation, &split.test}) {
    part->grid = data.grid;
    part->predictor_names = data.predictor_names;
    part->stations = data.stations;
    for (const auto& [var, _] : data.fields) part->fields[var];
  }
  auto part_of = [&](const std::string& date) -> Dataset& {
    if (date <= train_end) return split.train;
    if (date <= val_end) return split.validation;
    return split.test;
  };
  for (std::size_t i : order) {
    Dataset& part = part_of(data.dates[i]);
    part.dates.push_back(data.dates[i]);
    for (const auto& [var, fields] : data.fields) part.fields[var].push_back(fields.at(i));
  }
  std::vector<const StationSample*> samples;
  samples.reserve(data.samples.size());
  for (const auto& s : data.samples) samples.push_back(&s);
  std::stable_sort(samples.begin(), samples.end(), [](const StationSample* a, const StationSample* b) {
    return a->date != b->date ? a->date < b->date : a->station < b->station;
  });
  for (const StationSample* s : samples) part_of(s->date).samples.push_back(*s);

  if (split.train.dates.empty() || split.validation.dates.empty() || split.test.dates.empty()) {
    throw ConfigError(fmt::format("split: empty partition (train {}, validation {}, test {} dates)",
                                  split.train.dates.size(), split.validation.dates.size(),
                                  split.test.dates.size()));
  }
  return split;
}

std::pair<std::string, std::string> default_split_dates(const Dataset& data) {
  if (data.dates.size() < 3) throw ConfigError("split: need at least 3 dates");
  std::vector<std::string> years;
  for (const auto& d : data.dates) {
    std::string y = d.substr(0, 4);
    if (years.empty() || years.back() != y) years.push_back(y);
  }
  if (years.size() >= 3) {
    const std::string& val_year = years[years.size() - 2];
    const std::string& test_year = years.back();
    auto last_before = [&](const std::string& year) {
      auto it = std::lower_bound(data.dates.begin(), data.dates.end(), year);
      return *(it - 1);
    };
    return {last_before(val_year), last_before(test_year)};
  }
  const std::size_t n = data.dates.size();
  const std::size_t train = std::max<std::size_t>(1, n * 6 / 10);
  const std::size_t val = std::max<std::size_t>(train + 1, n * 8 / 10);
  return {data.dates[train - 1], data.dates[std::min(val, n - 1) - 1]};
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  for (const auto& [var, fields] : data.fields) write_grid(dir / ("grid_" + var + ".gfb"), fields);
  write_stations(dir / "stations.csv", data.stations);
  std::vector<Observation> obs;
  PredictorTable pred{data.predictor_names, {}};
  for (const auto& s : data.samples) {
    obs.push_back({s.date, s.station_id, s.observation});
    pred.rows.push_back({s.date, s.station_id, s.predictors});
  }
  write_observations(dir / "observations.csv", obs);
  write_predictors(dir / "predictors.csv", pred);
}

Dataset load_dataset(const std::filesystem::path& dir, const std::vector<std::string>& grid_variables) {
  Dataset data;
  const std::filesystem::path pred_path = dir / "predictors.csv";
  const std::filesystem::path station_path = dir / "stations.csv";
  const std::filesystem::path obs_path = dir / "observations.csv";
  for (const auto& p : {pred_path, station_path, obs_path}) {
    if (!std::filesystem::exists(p)) throw IoError("missing file " + p.string());
  }
  // The grid spec comes from the first grid file when one is loaded.
  std::map<std::string, std::vector<GridField>> raw_fields;
  for (const auto& var : grid_variables) {
    const auto path = dir / ("grid_" + var + ".gfb");
    if (!std::filesystem::exists(path)) throw IoError("missing grid file " + path.string());
    raw_fields[var] = read_grid(path);
    if (raw_fields[var].empty()) throw DataError(path.string() + ": no fields");
  }
  if (!raw_fields.empty()) data.grid = raw_fields.begin()->second.front().spec;
  for (const auto& [var, fields] : raw_fields) {
    if (!(fields.front().spec == data.grid)) throw DataError("grid files disagree on grid spec");
  }

  data.stations = read_stations(station_path, data.grid);
  const auto observations = read_observations(obs_path);
  const PredictorTable pred = read_predictors(pred_path);
  data.predictor_names = pred.names;

  std::unordered_map<std::string, Index> station_lookup;
  for (std::size_t i = 0; i < data.stations.size(); ++i) station_lookup[data.stations[i].id] = static_cast<Index>(i);
  std::map<std::pair<std::string, std::string>, std::optional<double>> obs_lookup;
  for (const auto& o : observations) obs_lookup[{o.date, o.station_id}] = o.value;

  std::set<std::string> dates;
  for (const auto& r : pred.rows) {
    auto st = station_lookup.find(r.station_id);
    if (st == station_lookup.end()) throw DataError("predictors reference unknown station " + r.station_id);
    StationSample s;
    s.station_id = r.station_id;
    s.station = st->second;
    s.date = r.date;
    s.predictors = r.values;
    s.meta = data.stations[static_cast<std::size_t>(st->second)];
    auto ob = obs_lookup.find({r.date, r.station_id});
    if (ob != obs_lookup.end()) s.observation = ob->second;
    dates.insert(r.date);
    data.samples.push_back(std::move(s));
  }
  std::stable_sort(data.samples.begin(), data.samples.end(), [](const StationSample& a, const StationSample& b) {
    return a.date != b.date ? a.date < b.date : a.station < b.station;
  });
  data.dates.assign(dates.begin(), dates.end());

  for (auto& [var, fields] : raw_fields) {
    std::map<std::string, std::size_t> by_date;
    for (std::size_t i = 0; i < fields.size(); ++i) by_date[fields[i].valid_date] = i;
    auto& aligned = data.fields[var];
    for (const auto& d : data.dates) {
      auto it = by_date.find(d);
      if (it == by_date.end()) throw DataError("grid for " + var + " has no field on " + d);
      aligned.push_back(fields[it->second]);
    }
  }
  return data;
}

}  // namespace gridpost
