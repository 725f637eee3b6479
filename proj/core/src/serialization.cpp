#include "d2ip/serialization.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "d2ip/error.hpp"

namespace d2ip {

namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[8] = {'D', '2', 'I', 'P', 'C', 'K', 'P', 'T'};
constexpr int kCheckpointVersion = 1;
constexpr const char* kOrdering = "p-slowest,c-fastest";

std::uint64_t swap_bytes(std::uint64_t v) {
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return out;
}

// Converts between host order and little endian in place.
void to_little_endian(std::span<double> values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (double& v : values) v = std::bit_cast<double>(swap_bytes(std::bit_cast<std::uint64_t>(v)));
  }
}

void write_raw(std::ostream& out, std::span<const double> values, const fs::path& path) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    std::vector<double> tmp(values.begin(), values.end());
    to_little_endian(tmp);
    out.write(reinterpret_cast<const char*>(tmp.data()),
              static_cast<std::streamsize>(tmp.size() * sizeof(double)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void read_raw(std::istream& in, std::span<double> values, const fs::path& path) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(values.size_bytes())) {
    throw FormatError("truncated payload: " + path.string());
  }
  to_little_endian(values);
}

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Typed field access that reports the file and key on failure.
template <typename T>
T field(const json& j, const char* key, const fs::path& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(path.string() + ": missing or invalid field '" + key + "'");
  }
}

json snr_to_json(double snr) { return std::isfinite(snr) ? json(snr) : json(nullptr); }

double snr_from_json(const json& j) { return j.is_null() ? kNoiseFree : j.get<double>(); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
void assign_if(const json& j, const char* key, T& target, std::set<std::string>& seen) {
  if (auto it = j.find(key); it != j.end()) {
    target = it->get<T>();
    seen.insert(key);
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!seen.contains(it.key())) throw FormatError(where + ": unknown key '" + it.key() + "'");
  }
}

}  // namespace

fs::path sidecar_path(const fs::path& payload) {
  fs::path p = payload;
  return p.replace_extension(".json");
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path, false);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out = open_out(path, false);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_doubles(const fs::path& path, std::span<const double> values) {
  std::ofstream out = open_out(path, true);
  write_raw(out, values, path);
}

std::vector<double> read_doubles(const fs::path& path, std::size_t count) {
  std::error_code ec;
  const auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  if (size != count * sizeof(double)) {
    throw FormatError(path.string() + ": expected " + std::to_string(count) + " doubles, found " +
                      std::to_string(size) + " bytes");
  }
  std::ifstream in = open_in(path, true);
  std::vector<double> values(count);
  read_raw(in, values, path);
  return values;
}

void save_matrix(const fs::path& path, const SensitivityMatrix& J) {
  write_doubles(path, std::span<const double>(J.values.data(), J.values.size()));
  write_json(sidecar_path(path), json{{"M", J.measurements()},
                                      {"Q", J.voxels()},
                                      {"normalized", J.normalized},
                                      {"projected", J.projected},
                                      {"grid_ref", J.grid_ref},
                                      {"protocol_ref", J.protocol_ref}});
}

SensitivityMatrix load_matrix(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = read_json(side);
  const auto m = field<std::size_t>(j, "M", side);
  const auto q = field<std::size_t>(j, "Q", side);
  SensitivityMatrix J;
  J.normalized = field<bool>(j, "normalized", side);
  J.projected = field<bool>(j, "projected", side);
  J.grid_ref = field<std::string>(j, "grid_ref", side);
  J.protocol_ref = field<std::string>(j, "protocol_ref", side);
  const auto values = read_doubles(path, m * q);
  J.values = Eigen::Map<const RowMatrix>(values.data(), static_cast<Eigen::Index>(m),
                                         static_cast<Eigen::Index>(q));
  return J;
}

void save_voltages(const fs::path& path, const VoltageSequence& V) {
  validate(V);
  std::vector<double> flat;
  flat.reserve(V.frame_count() * V.measurements());
  for (const auto& f : V.frames) flat.insert(flat.end(), f.values.begin(), f.values.end());
  write_doubles(path, flat);
  write_json(sidecar_path(path), json{{"M", V.measurements()},
                                      {"T", V.frame_count()},
                                      {"reference_mode", to_string(V.reference_mode)},
                                      {"snr_db", snr_to_json(V.snr_db)},
                                      {"seed", V.seed}});
}

VoltageSequence load_voltages(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = read_json(side);
  const auto m = field<std::size_t>(j, "M", side);
  const auto t = field<std::size_t>(j, "T", side);
  VoltageSequence V;
  try {
    V.reference_mode = reference_mode_from_string(field<std::string>(j, "reference_mode", side));
    V.snr_db = snr_from_json(j.at("snr_db"));
    V.seed = field<std::uint64_t>(j, "seed", side);
  } catch (const json::exception&) {
    throw FormatError(side.string() + ": invalid snr_db");
  }
  const auto flat = read_doubles(path, m * t);
  for (std::size_t i = 0; i < t; ++i) {
    VoltageFrame f;
    f.values.assign(flat.begin() + static_cast<std::ptrdiff_t>(i * m),
                    flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    f.frame_index = static_cast<int>(i + 1);
    if (std::isfinite(V.snr_db)) f.snr_db = V.snr_db;
    V.frames.push_back(std::move(f));
  }
  return V;
}

void save_conductivity(const fs::path& path, const ConductivitySequence& seq) {
  std::vector<double> flat;
  flat.reserve(seq.frame_count() * seq.voxels());
  for (const auto& f : seq.frames) {
    if (f.size() != seq.voxels()) throw InvalidArgument("conductivity frames differ in length");
    flat.insert(flat.end(), f.begin(), f.end());
  }
  write_doubles(path, flat);
  json j{{"Q", seq.voxels()},
         {"T", seq.frame_count()},
         {"grid_ref", seq.grid_ref},
         {"reference_mode", to_string(seq.reference_mode)},
         {"is_ground_truth", seq.is_ground_truth},
         {"conductivities", seq.conductivities}};
  j[seq.is_ground_truth ? "case" : "method"] = seq.source;
  write_json(sidecar_path(path), j);
}

ConductivitySequence load_conductivity(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  const json j = read_json(side);
  const auto q = field<std::size_t>(j, "Q", side);
  const auto t = field<std::size_t>(j, "T", side);
  ConductivitySequence seq;
  seq.grid_ref = field<std::string>(j, "grid_ref", side);
  seq.reference_mode =
      reference_mode_from_string(field<std::string>(j, "reference_mode", side));
  seq.is_ground_truth = field<bool>(j, "is_ground_truth", side);
  seq.source = field<std::string>(j, seq.is_ground_truth ? "case" : "method", side);
  seq.conductivities = field<std::map<std::string, double>>(j, "conductivities", side);
  const auto flat = read_doubles(path, q * t);
  for (std::size_t i = 0; i < t; ++i) {
    seq.frames.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * q),
                            flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * q));
  }
  return seq;
}

void save_geometry(const fs::path& path, const GeometryRecord& g) {
  const Box& box = g.grid.extent();
  json electrodes = json::array();
  for (const auto& p : g.electrodes.positions) electrodes.push_back({p[0], p[1], p[2]});
  json pairs = json::array();
  for (const auto& q : g.protocol.pairs) {
    pairs.push_back({q.drive_source, q.drive_sink, q.measure_plus, q.measure_minus});
  }
  write_json(path, json{{"R", g.grid.rows()},
                        {"C", g.grid.cols()},
                        {"P", g.grid.planes()},
                        {"extent", {{"min", box.min}, {"max", box.max}}},
                        {"ordering", kOrdering},
                        {"grid_ref", g.grid.fingerprint()},
                        {"electrodes", electrodes},
                        {"electrode_layers", g.electrodes.layer},
                        {"electrodes_per_layer", g.electrodes.per_layer},
                        {"layers", g.electrodes.layers},
                        {"scheme", to_string(g.protocol.scheme)},
                        {"protocol_ref", g.protocol.fingerprint()},
                        {"protocol", pairs}});
}

GeometryRecord load_geometry(const fs::path& path) {
  const json j = read_json(path);
  if (field<std::string>(j, "ordering", path) != kOrdering) {
    throw FormatError(path.string() + ": unsupported voxel ordering");
  }
  Box box;
  box.min = field<Vec3>(j.at("extent"), "min", path);
  box.max = field<Vec3>(j.at("extent"), "max", path);
  GeometryRecord g{build_grid(field<int>(j, "R", path), field<int>(j, "C", path),
                              field<int>(j, "P", path), box),
                   {},
                   {}};
  for (const auto& p : field<std::vector<Vec3>>(j, "electrodes", path)) {
    g.electrodes.positions.push_back(p);
  }
  g.electrodes.layer = field<std::vector<int>>(j, "electrode_layers", path);
  g.electrodes.per_layer = field<int>(j, "electrodes_per_layer", path);
  g.electrodes.layers = field<int>(j, "layers", path);
  if (g.electrodes.layer.size() != g.electrodes.positions.size()) {
    throw FormatError(path.string() + ": electrode layer list does not match positions");
  }
  g.protocol.scheme = protocol_scheme_from_string(field<std::string>(j, "scheme", path));
  const int n = static_cast<int>(g.electrodes.size());
  for (const auto& q : field<std::vector<std::array<int, 4>>>(j, "protocol", path)) {
    for (int e : q) {
      if (e < 0 || e >= n) throw FormatError(path.string() + ": electrode index out of range");
    }
    g.protocol.pairs.push_back({q[0], q[1], q[2], q[3]});
  }
  return g;
}

void save_checkpoint(const fs::path& path, const ParameterState& theta) {
  json tensors = json::array();
  for (const auto& t : theta.tensors) tensors.push_back({{"name", t.name}, {"dims", t.dims}});
  const std::string header = json{{"version", kCheckpointVersion},
                                  {"config_hash", hex64(theta.config_hash)},
                                  {"provenance", to_string(theta.provenance)},
                                  {"iteration", theta.iteration},
                                  {"checksum", hex64(theta.checksum())},
                                  {"tensors", tensors}}
                                 .dump();
  std::ofstream out = open_out(path, true);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto len = static_cast<std::uint32_t>(header.size());
  const unsigned char len_le[4] = {static_cast<unsigned char>(len & 0xffu),
                                   static_cast<unsigned char>((len >> 8) & 0xffu),
                                   static_cast<unsigned char>((len >> 16) & 0xffu),
                                   static_cast<unsigned char>((len >> 24) & 0xffu)};
  out.write(reinterpret_cast<const char*>(len_le), 4);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : theta.tensors) write_raw(out, t.values, path);
}

ParameterState load_checkpoint(const fs::path& path, const NetworkConfig& expected) {
  std::ifstream in = open_in(path, true);
  char magic[8];
  in.read(magic, sizeof magic);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(path.string() + ": not a checkpoint file");
  }
  unsigned char len_le[4];
  in.read(reinterpret_cast<char*>(len_le), 4);
  if (in.gcount() != 4) throw FormatError(path.string() + ": truncated header");
  const std::uint32_t len = len_le[0] | (len_le[1] << 8) | (len_le[2] << 16) |
                            (static_cast<std::uint32_t>(len_le[3]) << 24);
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw FormatError(path.string() + ": truncated header");
  }
  json j;
  try {
    j = json::parse(header);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (field<int>(j, "version", path) != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version");
  }
  if (field<std::string>(j, "config_hash", path) != hex64(expected.hash())) {
    throw InvalidArgument(path.string() + ": checkpoint was written for another network config");
  }

  ParameterState theta;
  theta.config_hash = expected.hash();
  theta.provenance = provenance_from_string(field<std::string>(j, "provenance", path));
  theta.iteration = field<int>(j, "iteration", path);
  const auto schema = parameter_schema(expected);
  const json& tensors = j.at("tensors");
  if (tensors.size() != schema.size()) {
    throw InvalidArgument(path.string() + ": tensor count does not match the schema");
  }
  for (std::size_t i = 0; i < schema.size(); ++i) {
    NamedTensor t{field<std::string>(tensors[i], "name", path),
                  field<std::vector<int>>(tensors[i], "dims", path),
                  {}};
    if (t.name != schema[i].name || t.dims != schema[i].dims) {
      throw InvalidArgument(path.string() + ": tensor '" + t.name + "' does not match the schema");
    }
    t.values.resize(schema[i].size());
    read_raw(in, t.values, path);
    theta.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after the last tensor");
  }
  if (auto it = j.find("checksum"); it != j.end() && *it != hex64(theta.checksum())) {
    throw FormatError(path.string() + ": checksum mismatch");
  }
  return theta;
}

std::string run_config_to_json(const RunConfig& cfg) {
  const json j{
      {"iters_warm", cfg.iters_warm},
      {"iters_first", cfg.iters_first},
      {"iters_next", cfg.iters_next},
      {"stage_ratio", cfg.ratio()},
      {"learning_rate", cfg.learning_rate},
      {"optimizer_betas", cfg.betas},
      {"adam_epsilon", cfg.adam_epsilon},
      {"tv_weights",
       {{"lambda_tv", cfg.tv_weights.lambda_tv},
        {"lambda_s", cfg.tv_weights.lambda_s},
        {"lambda_t", cfg.tv_weights.lambda_t},
        {"epsilon", cfg.tv_weights.epsilon}}},
      {"network",
       {{"base_channels", cfg.network.base_channels},
        {"depth", cfg.network.depth},
        {"aspp_dilations", cfg.network.aspp_dilations},
        {"use_depthwise", cfg.network.use_depthwise}}},
      {"seed", cfg.seed},
      {"record_every", cfg.record_every},
      {"squared_data_term", cfg.squared_data_term},
      {"output_map", {{"lo", cfg.output_map.lo}, {"hi", cfg.output_map.hi}}},
      {"warm_start_frame", cfg.warm_start_frame},
      {"use_upws", cfg.use_upws},
      {"use_tpp", cfg.use_tpp},
  };
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(std::string_view text) {
  return run_config_from_json(text, RunConfig{});
}

RunConfig run_config_from_json(std::string_view text, const RunConfig& base) {
  RunConfig cfg = base;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw FormatError("run config: expected a JSON object");
    std::set<std::string> seen;
    assign_if(j, "iters_warm", cfg.iters_warm, seen);
    assign_if(j, "iters_first", cfg.iters_first, seen);
    assign_if(j, "iters_next", cfg.iters_next, seen);
    assign_if(j, "learning_rate", cfg.learning_rate, seen);
    assign_if(j, "optimizer_betas", cfg.betas, seen);
    assign_if(j, "adam_epsilon", cfg.adam_epsilon, seen);
    assign_if(j, "seed", cfg.seed, seen);
    assign_if(j, "record_every", cfg.record_every, seen);
    assign_if(j, "squared_data_term", cfg.squared_data_term, seen);
    assign_if(j, "warm_start_frame", cfg.warm_start_frame, seen);
    assign_if(j, "use_upws", cfg.use_upws, seen);
    assign_if(j, "use_tpp", cfg.use_tpp, seen);
    if (auto it = j.find("tv_weights"); it != j.end()) {
      std::set<std::string> s;
      assign_if(*it, "lambda_tv", cfg.tv_weights.lambda_tv, s);
      assign_if(*it, "lambda_s", cfg.tv_weights.lambda_s, s);
      assign_if(*it, "lambda_t", cfg.tv_weights.lambda_t, s);
      assign_if(*it, "epsilon", cfg.tv_weights.epsilon, s);
      reject_unknown(*it, s, "run config tv_weights");
      seen.insert("tv_weights");
    }
    if (auto it = j.find("network"); it != j.end()) {
      std::set<std::string> s;
      assign_if(*it, "base_channels", cfg.network.base_channels, s);
      assign_if(*it, "depth", cfg.network.depth, s);
      assign_if(*it, "aspp_dilations", cfg.network.aspp_dilations, s);
      assign_if(*it, "use_depthwise", cfg.network.use_depthwise, s);
      reject_unknown(*it, s, "run config network");
      seen.insert("network");
    }
    if (auto it = j.find("output_map"); it != j.end()) {
      std::set<std::string> s;
      assign_if(*it, "lo", cfg.output_map.lo, s);
      assign_if(*it, "hi", cfg.output_map.hi, s);
      reject_unknown(*it, s, "run config output_map");
      seen.insert("output_map");
    }
    if (auto it = j.find("stage_ratio"); it != j.end()) {
      seen.insert("stage_ratio");
      if (it->get<std::string>() != cfg.ratio()) {
        throw FormatError("run config: stage_ratio '" + it->get<std::string>() +
                          "' disagrees with the iteration budgets (" + cfg.ratio() + ")");
      }
    }
    reject_unknown(j, seen, "run config");
  } catch (const json::exception& e) {
    throw FormatError(std::string("run config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_run_config(const fs::path& path, const RunConfig& cfg) {
  write_text(path, run_config_to_json(cfg));
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_text(path)); }

void write_trace_csv(std::ostream& out, std::span<const LossTrace> traces) {
  out << "frame,iteration,data,reg,total,seconds\n";
  for (const auto& trace : traces) {
    for (const auto& r : trace.records) {
      out << r.frame << ',' << r.iteration << ',' << format_double(r.data) << ','
          << format_double(r.reg) << ',' << format_double(r.total) << ','
          << format_double(r.seconds) << '\n';
    }
  }
}

std::vector<LossRecord> read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "frame,iteration,data,reg,total,seconds") {
    throw FormatError("trace csv: unexpected header");
  }
  std::vector<LossRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf", &r.frame, &r.iteration, &r.data,
                    &r.reg, &r.total, &r.seconds) != 6) {
      throw FormatError("trace csv: malformed row '" + line + "'");
    }
    records.push_back(r);
  }
  return records;
}

}  // namespace d2ip
