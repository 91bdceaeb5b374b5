/*
 * Copyright 2026 The incda Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

// On-disk formats. Every CSV double is printed with %.17g so a read-back
// is bit-exact. Binary blobs are little-endian IEEE-754 float64 arrays laid
// end to end; the JSON manifest beside each blob lists {name, offset, count}
// in units of doubles.

#ifndef INCDA_IO_HPP_
#define INCDA_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "incda/dynamics.hpp"
#include "incda/fourdvar.hpp"
#include "incda/gaussian_map.hpp"
#include "incda/neural_prior.hpp"
#include "incda/observation.hpp"
#include "incda/training.hpp"

namespace incda::io {

using Json = nlohmann::json;
namespace fs = std::filesystem;

/// Shortest text form that parses back to the same double.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void ensure_parent(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + path.parent_path().string());
}

inline std::ofstream open_out(const fs::path& path, bool binary = false) {
  ensure_parent(path);
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return in;
}

inline void write_json(const fs::path& path, const Json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

inline Json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    throw Error(ErrorCode::IoError, "missing column " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  auto in = open_in(path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "empty csv " + path.string());
  table.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != table.header.size()) {
      throw Error(ErrorCode::IoError, path.string() + ": ragged row");
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

inline double to_double(const std::string& field) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0') throw Error(ErrorCode::IoError, "bad number " + field);
  return v;
}

inline long long to_int(const std::string& field) {
  char* end = nullptr;
  const long long v = std::strtoll(field.c_str(), &end, 10);
  if (end == field.c_str() || *end != '\0') throw Error(ErrorCode::IoError, "bad integer " + field);
  return v;
}

// ---------------------------------------------------------------- blobs

inline Json vector_to_json(const Vector& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

/// Accumulates named float64 arrays for one blob file.
class BlobWriter {
 public:
  void add(const std::string& name, const double* data, std::size_t count) {
    index_.push_back({{"name", name}, {"offset", values_.size()}, {"count", count}});
    values_.insert(values_.end(), data, data + count);
  }
  void add(const std::string& name, const Vector& v) {
    add(name, v.data(), static_cast<std::size_t>(v.size()));
  }
  void add(const std::string& name, double scalar) { add(name, &scalar, 1); }

  const Json& index() const noexcept { return index_; }

  void write(const fs::path& path) const {
    auto out = open_out(path, true);
    for (double v : values_) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
    if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
  }

 private:
  std::vector<double> values_;
  Json index_ = Json::array();
};

class BlobReader {
 public:
  BlobReader(const fs::path& path, const Json& index) {
    auto in = open_in(path, true);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() % 8 != 0) throw Error(ErrorCode::IoError, "truncated blob " + path.string());
    values_.resize(raw.size() / 8);
    for (std::size_t k = 0; k < values_.size(); ++k) {
      std::uint64_t bits;
      std::memcpy(&bits, raw.data() + 8 * k, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      values_[k] = std::bit_cast<double>(bits);
    }
    for (const auto& entry : index) {
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (offset + count > values_.size()) {
        throw Error(ErrorCode::IoError, "blob entry out of range: " + entry.at("name").get<std::string>());
      }
      spans_[entry.at("name").get<std::string>()] = {offset, count};
    }
  }

  Vector vector(const std::string& name) const {
    const auto it = spans_.find(name);
    if (it == spans_.end()) throw Error(ErrorCode::IoError, "blob has no array " + name);
    return Eigen::Map<const Vector>(values_.data() + it->second.first,
                                    static_cast<Index>(it->second.second));
  }

  double scalar(const std::string& name) const {
    const Vector v = vector(name);
    if (v.size() != 1) throw Error(ErrorCode::IoError, name + " is not a scalar");
    return v(0);
  }

  bool has(const std::string& name) const { return spans_.count(name) > 0; }

 private:
  std::vector<double> values_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> spans_;
};

// ---------------------------------------------------------------- trajectories

inline Json normalizer_to_json(const Normalizer& norm) {
  return {{"mean", vector_to_json(norm.mean)}, {"std", vector_to_json(norm.std)}};
}

inline Normalizer normalizer_from_json(const Json& j) {
  return {vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
}

/// `traj_id,t,component,value`; `meta` becomes the sidecar with phi and T filled in.
inline void write_trajectories(const fs::path& csv, const std::vector<Trajectory>& batch,
                               const std::vector<Index>& ids, Json meta) {
  require_dim(static_cast<Index>(ids.size()), static_cast<Index>(batch.size()), "trajectory ids");
  auto out = open_out(csv);
  out << "traj_id,t,component,value\n";
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& traj = batch[n];
    for (Index t = 0; t < traj.steps; ++t) {
      for (Index c = 0; c < traj.phase_dim; ++c) {
        out << ids[n] << ',' << t << ',' << c << ',' << fmt(traj.state(t)(c)) << '\n';
      }
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + csv.string());
  if (!batch.empty()) {
    meta["phase_dim"] = batch.front().phase_dim;
    meta["steps"] = batch.front().steps;
  }
  meta["count"] = batch.size();
  write_json(fs::path(csv).replace_extension(".json"), meta);
}

struct TrajectoryFile {
  std::vector<Index> ids;
  std::vector<Trajectory> trajectories;
  Json meta;
};

inline TrajectoryFile read_trajectories(const fs::path& csv) {
  TrajectoryFile file;
  file.meta = read_json(fs::path(csv).replace_extension(".json"));
  const auto phi = file.meta.at("phase_dim").get<Index>();
  const auto steps = file.meta.at("steps").get<Index>();
  const auto table = read_csv(csv);
  const auto c_id = table.column("traj_id"), c_t = table.column("t"),
             c_comp = table.column("component"), c_val = table.column("value");
  std::map<Index, std::size_t> slot;
  for (const auto& row : table.rows) {
    const Index id = to_int(row[c_id]);
    auto it = slot.find(id);
    if (it == slot.end()) {
      it = slot.emplace(id, file.ids.size()).first;
      file.ids.push_back(id);
      file.trajectories.emplace_back(phi, steps);
    }
    const Index t = to_int(row[c_t]), c = to_int(row[c_comp]);
    if (t < 0 || t >= steps || c < 0 || c >= phi) throw Error(ErrorCode::IoError, "trajectory slot out of range");
    file.trajectories[it->second].state(t)(c) = to_double(row[c_val]);
  }
  return file;
}

// ---------------------------------------------------------------- observations

struct ObservationRecord {
  Index sample_id = 0;
  ObservationProcess proc;
  Vector y;
};

/// `sample_id,flat_index,value` plus a sidecar {d, noise_std, seed}.
inline void write_observations(const fs::path& csv, const std::vector<ObservationRecord>& records,
                               Json meta) {
  auto out = open_out(csv);
  out << "sample_id,flat_index,value\n";
  for (const auto& rec : records) {
    const auto& idx = rec.proc.indices();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out << rec.sample_id << ',' << idx[k] << ',' << fmt(rec.y(static_cast<Index>(k))) << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + csv.string());
  if (!records.empty()) {
    meta["d"] = records.front().proc.state_dim();
    meta["noise_std"] = records.front().proc.noise_std();
  }
  meta["count"] = records.size();
  write_json(fs::path(csv).replace_extension(".json"), meta);
}

struct ObservationFile {
  std::vector<ObservationRecord> records;
  Json meta;
};

inline ObservationFile read_observations(const fs::path& csv) {
  ObservationFile file;
  file.meta = read_json(fs::path(csv).replace_extension(".json"));
  const auto d = file.meta.at("d").get<Index>();
  const auto rho = file.meta.at("noise_std").get<double>();
  const auto table = read_csv(csv);
  const auto c_id = table.column("sample_id"), c_idx = table.column("flat_index"),
             c_val = table.column("value");
  std::map<Index, std::pair<std::vector<Index>, std::vector<double>>> grouped;
  std::vector<Index> order;
  for (const auto& row : table.rows) {
    const Index id = to_int(row[c_id]);
    auto [it, fresh] = grouped.try_emplace(id);
    if (fresh) order.push_back(id);
    it->second.first.push_back(to_int(row[c_idx]));
    it->second.second.push_back(to_double(row[c_val]));
  }
  for (Index id : order) {
    auto& [idx, vals] = grouped[id];
    ObservationRecord rec{id, ObservationProcess(d, idx, rho),
                          Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size()))};
    file.records.push_back(std::move(rec));
  }
  return file;
}

// ---------------------------------------------------------------- Gaussian priors

/// JSON manifest + blob holding {mean, cov (column-major)}.
inline void save_gaussian_prior(const fs::path& manifest, const DenseGaussianPrior& prior, Json meta) {
  BlobWriter blob;
  blob.add("mean", prior.mean);
  blob.add("cov", prior.cov.data(), static_cast<std::size_t>(prior.cov.size()));
  const auto blob_path = fs::path(manifest).replace_extension(".bin");
  blob.write(blob_path);
  meta["format"] = "incda-gaussian-prior-1";
  meta["dim"] = prior.mean.size();
  meta["blob"] = blob_path.filename().string();
  meta["arrays"] = blob.index();
  write_json(manifest, meta);
}

inline DenseGaussianPrior load_gaussian_prior(const fs::path& manifest) {
  const Json meta = read_json(manifest);
  const BlobReader blob(manifest.parent_path() / meta.at("blob").get<std::string>(), meta.at("arrays"));
  const auto d = meta.at("dim").get<Index>();
  Vector mean = blob.vector("mean");
  const Vector flat = blob.vector("cov");
  require_dim(flat.size(), d * d, "stored covariance");
  return {std::move(mean), Eigen::Map<const Matrix>(flat.data(), d, d)};
}

// ---------------------------------------------------------------- networks

inline Json mlp_manifest(const MLPParams& net) {
  Json acts = Json::array();
  for (const auto& layer : net.layers) acts.push_back(to_string(layer.activation));
  return {{"layer_dims", net.dims()}, {"activations", acts}};
}

inline MLPParams mlp_from_manifest(const Json& j) {
  const auto dims = j.at("layer_dims").get<std::vector<Index>>();
  const auto acts = j.at("activations").get<std::vector<std::string>>();
  if (dims.size() < 2 || acts.size() + 1 != dims.size()) {
    throw Error(ErrorCode::IoError, "inconsistent layer manifest");
  }
  MLPParams net;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weights = Matrix::Zero(dims[k + 1], dims[k]);
    layer.bias = Vector::Zero(dims[k + 1]);
    layer.activation = activation_from_string(acts[k]);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Json prior_manifest(const NeuralPrior& prior, std::uint64_t seed) {
  return {{"mu_net", mlp_manifest(prior.mu_net)},
          {"prec_net", mlp_manifest(prior.prec_net)},
          {"embedding_dim", prior.embed_dim},
          {"seed", seed},
          {"phase_dim", prior.phase_dim},
          {"steps", prior.steps},
          {"half_bandwidth", prior.half_bandwidth},
          {"diag_floor", prior.diag_floor},
          {"normalizer", normalizer_to_json(prior.normalizer)}};
}

inline NeuralPrior prior_from_manifest(const Json& j) {
  NeuralPrior prior;
  prior.mu_net = mlp_from_manifest(j.at("mu_net"));
  prior.prec_net = mlp_from_manifest(j.at("prec_net"));
  prior.embed_dim = j.at("embedding_dim").get<Index>();
  prior.phase_dim = j.at("phase_dim").get<Index>();
  prior.steps = j.at("steps").get<Index>();
  prior.half_bandwidth = j.at("half_bandwidth").get<Index>();
  prior.diag_floor = j.at("diag_floor").get<double>();
  prior.normalizer = normalizer_from_json(j.at("normalizer"));
  if (prior.mu_net.input_dim() != prior.input_dim() || prior.mu_net.output_dim() != prior.dim() ||
      prior.prec_net.output_dim() != prior.dim() * (prior.half_bandwidth + 1)) {
    throw Error(ErrorCode::ShapeMismatch, "checkpoint shapes disagree with phi, T and b");
  }
  return prior;
}

/// Writes `<stem>.json` + `<stem>.bin` holding theta = [mu_net; prec_net].
inline void save_prior(const fs::path& manifest, const NeuralPrior& prior, std::uint64_t seed,
                       Json extra = Json::object()) {
  BlobWriter blob;
  blob.add("theta", prior.pack());
  const auto blob_path = fs::path(manifest).replace_extension(".bin");
  blob.write(blob_path);
  Json meta = prior_manifest(prior, seed);
  meta["format"] = "incda-neural-prior-1";
  meta["blob"] = blob_path.filename().string();
  meta["arrays"] = blob.index();
  meta["extra"] = std::move(extra);
  write_json(manifest, meta);
}

inline NeuralPrior load_prior(const fs::path& manifest) {
  const Json meta = read_json(manifest);
  NeuralPrior prior = prior_from_manifest(meta);
  const BlobReader blob(manifest.parent_path() / meta.at("blob").get<std::string>(), meta.at("arrays"));
  prior.unpack(blob.vector("theta"));
  return prior;
}

/// Full optimizer state for bit-identical resumption.
inline void save_train_state(const fs::path& manifest, const TrainState& state, std::uint64_t seed,
                             Json extra = Json::object()) {
  BlobWriter blob;
  blob.add("theta", state.prior.pack());
  blob.add("best_theta", state.best_theta);
  blob.add("adam_m", state.adam.first_moment);
  blob.add("adam_v", state.adam.second_moment);
  blob.add("adam_lr", state.adam.lr);
  blob.add("best_validation", state.best_validation);
  Vector losses(static_cast<Index>(state.log.size()));
  for (std::size_t k = 0; k < state.log.size(); ++k) losses(static_cast<Index>(k)) = state.log[k].loss;
  blob.add("log_loss", losses);
  const auto blob_path = fs::path(manifest).replace_extension(".bin");
  blob.write(blob_path);

  Json epochs = Json::array(), splits = Json::array();
  for (const auto& entry : state.log) {
    epochs.push_back(entry.epoch);
    splits.push_back(entry.split);
  }
  Json meta = prior_manifest(state.prior, seed);
  meta["format"] = "incda-train-state-1";
  meta["blob"] = blob_path.filename().string();
  meta["arrays"] = blob.index();
  meta["epoch"] = state.epoch;
  meta["adam"] = {{"step", state.adam.step}, {"beta1", state.adam.beta1},
                  {"beta2", state.adam.beta2}, {"eps", state.adam.eps}};
  meta["stale_epochs"] = state.stale_epochs;
  meta["stopped_early"] = state.stopped_early;
  meta["log_epochs"] = epochs;
  meta["log_splits"] = splits;
  meta["extra"] = std::move(extra);
  write_json(manifest, meta);
}

inline TrainState load_train_state(const fs::path& manifest, Json* extra = nullptr) {
  const Json meta = read_json(manifest);
  TrainState state;
  state.prior = prior_from_manifest(meta);
  const BlobReader blob(manifest.parent_path() / meta.at("blob").get<std::string>(), meta.at("arrays"));
  state.prior.unpack(blob.vector("theta"));
  state.best_theta = blob.vector("best_theta");
  state.adam.first_moment = blob.vector("adam_m");
  state.adam.second_moment = blob.vector("adam_v");
  state.adam.lr = blob.scalar("adam_lr");
  state.adam.step = meta.at("adam").at("step").get<std::int64_t>();
  state.adam.beta1 = meta.at("adam").at("beta1").get<double>();
  state.adam.beta2 = meta.at("adam").at("beta2").get<double>();
  state.adam.eps = meta.at("adam").at("eps").get<double>();
  state.best_validation = blob.scalar("best_validation");
  state.epoch = meta.at("epoch").get<int>();
  state.stale_epochs = meta.at("stale_epochs").get<int>();
  state.stopped_early = meta.at("stopped_early").get<bool>();
  const auto epochs = meta.at("log_epochs").get<std::vector<int>>();
  const auto splits = meta.at("log_splits").get<std::vector<std::string>>();
  const Vector losses = blob.vector("log_loss");
  if (epochs.size() != splits.size() || static_cast<Index>(epochs.size()) != losses.size()) {
    throw Error(ErrorCode::IoError, "inconsistent training log in " + manifest.string());
  }
  for (std::size_t k = 0; k < epochs.size(); ++k) {
    state.log.push_back({epochs[k], splits[k], losses(static_cast<Index>(k))});
  }
  if (extra != nullptr) *extra = meta.value("extra", Json::object());
  return state;
}

// ---------------------------------------------------------------- logs and traces

/// `epoch,split,loss`.
inline void write_train_log(const fs::path& csv, const std::vector<TrainLogEntry>& log) {
  auto out = open_out(csv);
  out << "epoch,split,loss\n";
  for (const auto& e : log) out << e.epoch << ',' << e.split << ',' << fmt(e.loss) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + csv.string());
}

inline std::vector<TrainLogEntry> read_train_log(const fs::path& csv) {
  const auto table = read_csv(csv);
  const auto c_e = table.column("epoch"), c_s = table.column("split"), c_l = table.column("loss");
  std::vector<TrainLogEntry> log;
  for (const auto& row : table.rows) {
    log.push_back({static_cast<int>(to_int(row[c_e])), row[c_s], to_double(row[c_l])});
  }
  return log;
}

/// One Gauss-Newton run: `iter,objective,alpha,lambda`. Row 0 is the start
/// (alpha and lambda empty there).
inline void write_trace_rows(std::ostream& out, const std::vector<double>& objectives,
                             const std::vector<double>& alphas, const std::vector<double>& lambdas,
                             const std::string& prefix = "") {
  for (std::size_t k = 0; k < objectives.size(); ++k) {
    out << prefix << k << ',' << fmt(objectives[k]) << ',';
    if (k > 0) out << fmt(alphas[k - 1]);
    out << ',';
    if (k > 0) out << fmt(lambdas[k - 1]);
    out << '\n';
  }
}

inline void write_trace(const fs::path& csv, const GaussNewtonTrace& trace) {
  auto out = open_out(csv);
  out << "iter,objective,alpha,lambda\n";
  write_trace_rows(out, trace.objectives, trace.alphas, trace.lambdas);
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + csv.string());
}

/// Appends `sample_id,method,iter,t,component,value` rows for a list of iterates.
inline void write_reconstruction_rows(std::ostream& out, Index sample_id, const std::string& method,
                                      const std::vector<Vector>& iterates, Index phase_dim) {
  for (std::size_t k = 0; k < iterates.size(); ++k) {
    const Vector& x = iterates[k];
    for (Index i = 0; i < x.size(); ++i) {
      out << sample_id << ',' << method << ',' << k << ',' << i / phase_dim << ','
          << i % phase_dim << ',' << fmt(x(i)) << '\n';
    }
  }
}

inline constexpr const char* kReconstructionHeader = "sample_id,method,iter,t,component,value";

}  // namespace incda::io

#endif  // INCDA_IO_HPP_
