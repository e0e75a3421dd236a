#include "protofed/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "protofed/errors.hpp"
#include "protofed/format.hpp"

namespace fs = std::filesystem;

namespace protofed {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ParseError("unknown split tag '" + std::string(s) + "'");
}

std::span<const double> MultimodalDataset::sample(std::size_t m, std::size_t i) const {
  const std::size_t n = sample_size(m);
  return std::span<const double>(features.at(m)).subspan(i * n, n);
}

std::vector<std::size_t> MultimodalDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

void MultimodalDataset::validate() const {
  const std::size_t M = features.size();
  if (M == 0) throw DataError("dataset has no modalities");
  if (modality_names.size() != M || sample_shapes.size() != M) throw DataError("modality metadata misaligned");
  if (splits.size() != labels.size()) throw DataError("split tags do not match sample count");
  for (std::size_t m = 0; m < M; ++m) {
    if (features[m].size() != labels.size() * sample_size(m)) {
      throw DataError("modality '" + modality_names[m] + "' holds " + std::to_string(features[m].size()) +
                      " values, expected " + std::to_string(labels.size() * sample_size(m)));
    }
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

void assign_splits(MultimodalDataset& ds, Rng& rng) {
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train_all = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n_train_all)));
  ds.splits.assign(n, Split::Test);
  for (std::size_t i = 0; i < n_train_all; ++i) ds.splits[order[i]] = i < n_train_all - n_val ? Split::Train : Split::Val;
}

MultimodalDataset synthesize(const SyntheticSpec& spec, Rng& rng) {
  if (spec.num_classes < 2 || spec.num_modalities < 2) throw ConfigError("synthesize needs K >= 2 and M >= 2");
  if (spec.latent_dim == 0 || spec.modality_rank == 0 || spec.modality_rank > spec.latent_dim) {
    throw ConfigError("synthesize needs 0 < modality_rank <= latent_dim");
  }
  if (spec.noise < 0 || spec.feature_noise < 0) throw ConfigError("noise levels must be >= 0");
  if (spec.feature_offset < 0) throw ConfigError("feature_offset must be >= 0");
  const std::size_t M = spec.num_modalities, K = spec.num_classes, D = spec.latent_dim, R = spec.modality_rank;
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> means(K, std::vector<double>(D));
  for (auto& mu : means)
    for (double& v : mu) v = spec.separation * gauss(rng);

  // Per modality (and time step) a [feat x latent] map of rank R, scaled so a
  // sample's expected squared norm is separation^2 + noise^2 whatever its width.
  const std::size_t steps = std::max<std::size_t>(spec.seq_len, 1);
  std::vector<std::size_t> dims(M);
  std::vector<std::vector<std::vector<double>>> maps(M);
  for (std::size_t m = 0; m < M; ++m) {
    dims[m] = m < spec.feature_dims.size() ? spec.feature_dims[m] : spec.feature_dims.back();
    if (dims[m] == 0) throw ConfigError("feature dims must be positive");
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> U(dims[m] * R), V(R * D), A(dims[m] * D, 0.0);
      for (double& v : U) v = gauss(rng) / std::sqrt(static_cast<double>(R));
      for (double& v : V) v = gauss(rng) / std::sqrt(static_cast<double>(D * dims[m]));
      for (std::size_t i = 0; i < dims[m]; ++i)
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t j = 0; j < D; ++j) A[i * D + j] += U[i * R + r] * V[r * D + j];
      maps[m].push_back(std::move(A));
    }
  }
  // Fixed per-modality (and step) mean, same normalized scale as the signal.
  std::vector<std::vector<std::vector<double>>> offsets(M);
  if (spec.feature_offset > 0) {
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t t = 0; t < steps; ++t) {
        std::vector<double> b(dims[m]);
        for (double& v : b) v = spec.feature_offset * gauss(rng) / std::sqrt(static_cast<double>(dims[m]));
        offsets[m].push_back(std::move(b));
      }
  }

  MultimodalDataset ds;
  ds.num_classes = K;
  ds.features.assign(M, {});
  for (std::size_t m = 0; m < M; ++m) {
    ds.modality_names.push_back("m" + std::to_string(m));
    ds.sample_shapes.push_back(spec.seq_len ? Shape{spec.seq_len, dims[m]} : Shape{dims[m]});
    ds.features[m].reserve(spec.samples * steps * dims[m]);
  }
  std::vector<double> latent(D);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::size_t y = i % K;
    ds.labels.push_back(static_cast<int>(y));
    for (std::size_t j = 0; j < D; ++j) latent[j] = means[y][j] + spec.noise * gauss(rng);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t t = 0; t < steps; ++t) {
        const auto& A = maps[m][t];
        for (std::size_t f = 0; f < dims[m]; ++f) {
          double v = 0;
          for (std::size_t j = 0; j < D; ++j) v += A[f * D + j] * latent[j];
          if (spec.feature_noise > 0) v += spec.feature_noise * gauss(rng);
          if (spec.feature_offset > 0) v += offsets[m][t][f];
          ds.features[m].push_back(v);
        }
      }
  }
  assign_splits(ds, rng);
  ds.validate();
  return ds;
}

std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, std::size_t num_clients,
                                                          double beta, Rng& rng, std::size_t min_samples,
                                                          std::size_t max_attempts) {
  if (num_clients == 0) throw ConfigError("dirichlet_partition needs at least one client");
  if (!(beta > 0)) throw ConfigError("dirichlet_partition needs beta > 0");
  const std::size_t n = labels.size();
  if (num_clients * min_samples > n) {
    throw ConfigError("cannot give " + std::to_string(num_clients) + " clients " + std::to_string(min_samples) +
                      " samples each from " + std::to_string(n));
  }
  if (num_clients == 1) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return {all};
  }
  int max_label = -1;
  for (int y : labels) max_label = std::max(max_label, y);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  std::gamma_distribution<double> gamma(beta, 1.0);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<std::vector<std::size_t>> parts(num_clients);
    for (const auto& members : by_class) {
      if (members.empty()) continue;
      std::vector<std::size_t> pos = members;
      std::shuffle(pos.begin(), pos.end(), rng);
      std::vector<double> p(num_clients);
      double total = 0;
      while (total <= 0) {
        total = 0;
        for (double& v : p) total += (v = gamma(rng));
      }
      double cum = 0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < num_clients; ++c) {
        cum += p[c] / total;
        const std::size_t end =
            c + 1 == num_clients ? pos.size()
                                 : std::min(pos.size(), static_cast<std::size_t>(cum * static_cast<double>(pos.size())));
        for (std::size_t j = start; j < std::max(start, end); ++j) parts[c].push_back(pos[j]);
        start = std::max(start, end);
      }
    }
    const bool ok = std::all_of(parts.begin(), parts.end(), [&](const auto& v) { return v.size() >= min_samples; });
    if (ok) {
      for (auto& v : parts) std::sort(v.begin(), v.end());
      return parts;
    }
  }
  throw ConfigError("dirichlet_partition: no draw gave every client " + std::to_string(min_samples) +
                    " samples after " + std::to_string(max_attempts) + " attempts");
}

std::vector<ModalitySet> assign_missing_modalities(std::size_t num_clients, std::size_t num_modalities, double q,
                                                   Rng& rng) {
  if (q < 0 || q > 1) throw ConfigError("missing rate q must lie in [0,1]");
  if (num_modalities == 0) throw ConfigError("need at least one modality");
  // Exactly M uniforms per client: modality m is missing iff u_m < q, and the
  // all-missing rescue keeps argmax u_m (uniform given all missing). Sets are
  // then nested in q and draws never shift between clients.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ModalitySet> out;
  out.reserve(num_clients);
  std::vector<double> u(num_modalities);
  for (std::size_t i = 0; i < num_clients; ++i) {
    ModalitySet avail(num_modalities);
    bool any = false;
    for (std::size_t m = 0; m < num_modalities; ++m) {
      u[m] = unit(rng);
      avail[m] = !(u[m] < q);
      any = any || avail[m];
    }
    if (!any) avail[static_cast<std::size_t>(std::max_element(u.begin(), u.end()) - u.begin())] = true;
    out.push_back(std::move(avail));
  }
  return out;
}

bool ClientShard::present(std::size_t m, std::size_t local) const {
  return available.at(m) && zero_fill.at(m).at(local) == 0;
}

void apply_zero_fill(ClientShard& shard, double u, Rng& rng) {
  if (u < 0 || u >= 1) throw ConfigError("zero-fill rate u must lie in [0,1)");
  const std::size_t n = shard.size();
  shard.zero_fill.assign(shard.available.size(), std::vector<std::uint8_t>(n, 0));
  const auto count = static_cast<std::size_t>(std::floor(u * static_cast<double>(n)));
  if (count == 0) return;
  std::vector<std::size_t> order(n);
  for (std::size_t m = 0; m < shard.available.size(); ++m) {
    if (!shard.available[m]) continue;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j = 0; j < count; ++j) shard.zero_fill[m][order[j]] = 1;
  }
}

std::vector<ClientShard> build_shards(const MultimodalDataset& ds, const ShardOptions& opts, std::uint64_t seed) {
  const auto train = ds.indices(Split::Train);
  std::vector<int> train_labels;
  train_labels.reserve(train.size());
  for (auto i : train) train_labels.push_back(ds.labels[i]);
  Rng part_rng = stream(seed, Purpose::Partition);
  const auto parts = dirichlet_partition(train_labels, opts.num_clients, opts.beta, part_rng, opts.min_samples);
  Rng miss_rng = stream(seed, Purpose::Missingness);
  const auto avail = assign_missing_modalities(opts.num_clients, ds.num_modalities(), opts.q, miss_rng);
  std::vector<ClientShard> shards(opts.num_clients);
  for (std::size_t c = 0; c < opts.num_clients; ++c) {
    ClientShard& s = shards[c];
    s.client_id = static_cast<int>(c);
    for (auto pos : parts[c]) s.indices.push_back(train[pos]);
    s.available = avail[c];
    s.rng_seed = splitmix64(seed ^ splitmix64(c + 1));
    Rng zf = stream(seed, Purpose::ZeroFill, c);
    apply_zero_fill(s, opts.u, zf);
  }
  return shards;
}

MultimodalBatch assemble_batch(const MultimodalDataset& ds, std::span<const std::size_t> rows, Tensor presence) {
  const std::size_t B = rows.size(), M = ds.num_modalities();
  if (presence.shape() != Shape{B, M}) throw ShapeError("presence mask must be [B,M]");
  MultimodalBatch batch;
  for (std::size_t m = 0; m < M; ++m) {
    Shape shape{B};
    shape.insert(shape.end(), ds.sample_shapes[m].begin(), ds.sample_shapes[m].end());
    Tensor x(shape);
    const std::size_t n = ds.sample_size(m);
    for (std::size_t b = 0; b < B; ++b) {
      if (presence.at(b, m) == 0.0) continue;
      const auto src = ds.sample(m, rows[b]);
      std::copy(src.begin(), src.end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    batch.inputs.push_back(std::move(x));
  }
  batch.presence = std::move(presence);
  for (auto r : rows) batch.labels.push_back(ds.labels.at(r));
  return batch;
}

MultimodalBatch shard_batch(const MultimodalDataset& ds, const ClientShard& shard,
                            std::span<const std::size_t> local_positions) {
  const std::size_t B = local_positions.size(), M = ds.num_modalities();
  Tensor presence(Shape{B, M});
  std::vector<std::size_t> rows;
  rows.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    rows.push_back(shard.indices.at(local_positions[b]));
    for (std::size_t m = 0; m < M; ++m) presence.at(b, m) = shard.present(m, local_positions[b]) ? 1.0 : 0.0;
  }
  return assemble_batch(ds, rows, std::move(presence));
}

MultimodalBatch complete_batch(const MultimodalDataset& ds, std::span<const std::size_t> rows) {
  return assemble_batch(ds, rows, Tensor(Shape{rows.size(), ds.num_modalities()}, 1.0));
}

// ---- feature files ----

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    t.rows.push_back(split_csv_line(line));
  }
  return t;
}

double parse_double(const std::string& cell, const fs::path& file, std::size_t row, std::size_t col) {
  double v = 0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && *first == ' ') ++first;
  if (first < last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ParseError("non-numeric cell '" + cell + "' in '" + file.string() + "' at row " + std::to_string(row) +
                     ", column " + std::to_string(col));
  }
  return v;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

MultimodalDataset load_feature_files(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + manifest_path + "': " + e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  MultimodalDataset ds;
  try {
    const fs::path labels_file = resolve(base, manifest.at("labels").get<std::string>());
    const CsvTable labels = read_csv(labels_file);
    for (std::size_t r = 0; r < labels.rows.size(); ++r) {
      if (labels.rows[r].size() != 1) throw ParseError("'" + labels_file.string() + "' row " + std::to_string(r + 1) + " must hold one label");
      const double v = parse_double(labels.rows[r][0], labels_file, r + 1, 0);
      if (v != std::floor(v) || v < 0) throw ParseError("label '" + labels.rows[r][0] + "' is not a class index");
      ds.labels.push_back(static_cast<int>(v));
    }
    const std::size_t n = ds.labels.size();

    const fs::path splits_file = resolve(base, manifest.at("splits").get<std::string>());
    const CsvTable splits = read_csv(splits_file);
    if (splits.rows.size() != n) {
      throw DataError("row count mismatch: '" + labels_file.string() + "' has " + std::to_string(n) + ", '" +
                      splits_file.string() + "' has " + std::to_string(splits.rows.size()));
    }
    for (const auto& row : splits.rows) ds.splits.push_back(parse_split(row.at(0)));

    for (const auto& mod : manifest.at("modalities")) {
      const fs::path file = resolve(base, mod.at("file").get<std::string>());
      const auto dim = mod.at("dim").get<std::size_t>();
      const auto seq_len = mod.value("seq_len", std::size_t{0});
      const std::size_t width = dim * std::max<std::size_t>(seq_len, 1);
      const CsvTable t = read_csv(file);
      if (t.rows.size() != n) {
        throw DataError("row count mismatch: '" + labels_file.string() + "' has " + std::to_string(n) + ", '" +
                        file.string() + "' has " + std::to_string(t.rows.size()));
      }
      if (t.header.size() != width) {
        throw ParseError("'" + file.string() + "' header has " + std::to_string(t.header.size()) +
                         " columns, expected " + std::to_string(width));
      }
      std::vector<double> values;
      values.reserve(n * width);
      for (std::size_t r = 0; r < n; ++r) {
        if (t.rows[r].size() != width) {
          throw ParseError("'" + file.string() + "' row " + std::to_string(r + 1) + " has " +
                           std::to_string(t.rows[r].size()) + " cells, expected " + std::to_string(width));
        }
        for (std::size_t c = 0; c < width; ++c) values.push_back(parse_double(t.rows[r][c], file, r + 1, c));
      }
      ds.modality_names.push_back(mod.value("name", "m" + std::to_string(ds.features.size())));
      ds.sample_shapes.push_back(seq_len ? Shape{seq_len, dim} : Shape{dim});
      ds.features.push_back(std::move(values));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + manifest_path + "': " + e.what());
  }
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = manifest.value("num_classes", static_cast<std::size_t>(max_label + 1));
  ds.validate();
  return ds;
}

std::string export_dataset(const MultimodalDataset& ds, const std::string& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  auto open = [&](const std::string& name) {
    const fs::path p = fs::path(dir) / name;
    std::ofstream out(p);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    return out;
  };
  nlohmann::ordered_json manifest;
  manifest["modalities"] = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < ds.num_modalities(); ++m) {
    const std::string file = ds.modality_names[m] + ".csv";
    const Shape& s = ds.sample_shapes[m];
    const std::size_t width = ds.sample_size(m);
    auto out = open(file);
    for (std::size_t c = 0; c < width; ++c) out << (c ? "," : "") << "feat_" << c;
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto row = ds.sample(m, i);
      for (std::size_t c = 0; c < width; ++c) out << (c ? "," : "") << format_double(row[c]);
      out << '\n';
    }
    nlohmann::ordered_json entry;
    entry["name"] = ds.modality_names[m];
    entry["file"] = file;
    entry["dim"] = s.back();
    if (s.size() == 2) entry["seq_len"] = s[0];
    manifest["modalities"].push_back(entry);
  }
  {
    auto out = open("labels.csv");
    out << "label\n";
    for (int y : ds.labels) out << y << '\n';
  }
  {
    auto out = open("splits.csv");
    out << "split\n";
    for (Split s : ds.splits) out << split_name(s) << '\n';
  }
  manifest["labels"] = "labels.csv";
  manifest["splits"] = "splits.csv";
  manifest["num_classes"] = ds.num_classes;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  auto out = open("manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
  return path;
}

}  // namespace protofed
