#include "protofed/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "protofed/errors.hpp"

namespace protofed {

using nlohmann::ordered_json;

AlgorithmKind parse_algorithm(std::string_view s) {
  if (s == "mfcpl") return AlgorithmKind::MFCPL;
  if (s == "mfcpl_unimodal") return AlgorithmKind::MFCPL_UNIMODAL;
  if (s == "fedavg") return AlgorithmKind::FEDAVG;
  if (s == "fedprox") return AlgorithmKind::FEDPROX;
  if (s == "fedproto") return AlgorithmKind::FEDPROTO;
  throw ConfigError("unknown algorithm '" + std::string(s) +
                    "' (expected mfcpl, mfcpl_unimodal, fedavg, fedprox, fedproto)");
}

const char* algorithm_name(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::MFCPL: return "mfcpl";
    case AlgorithmKind::MFCPL_UNIMODAL: return "mfcpl_unimodal";
    case AlgorithmKind::FEDAVG: return "fedavg";
    case AlgorithmKind::FEDPROX: return "fedprox";
    case AlgorithmKind::FEDPROTO: return "fedproto";
  }
  return "?";
}

LossToggles parse_toggles(std::string_view s) {
  if (s == "all") return {};
  if (s == "none") return LossToggles::none();
  LossToggles t = LossToggles::none();
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find('+', start), s.size());
    const std::string_view part = s.substr(start, end - start);
    if (part == "cmpr") t.cmpr = true;
    else if (part == "cmpc") t.cmpc = true;
    else if (part == "cma") t.cma = true;
    else throw ConfigError("toggles: unknown term '" + std::string(part) + "' (expected cmpr, cmpc, cma, all, none)");
    start = end + 1;
  }
  return t;
}

std::string toggles_name(const LossToggles& t) {
  if (t.cmpr && t.cmpc && t.cma) return "all";
  if (!t.cmpr && !t.cmpc && !t.cma) return "none";
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  add(t.cmpr, "cmpr");
  add(t.cmpc, "cmpc");
  add(t.cma, "cma");
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "algorithm", "mu", "preset", "dataset", "modalities", "classes", "samples", "latent_dim",
      "modality_rank", "feature_dim", "seq_len", "noise", "separation", "feature_noise", "feature_offset", "data_seed",
      "clients", "participation", "q", "u", "beta", "min_samples", "rounds", "local_epochs", "batch",
      "lr", "weight_decay", "proj_dim", "heads", "tau", "alpha_reg", "alpha_con", "alpha_align",
      "toggles", "cma_kind", "seeds", "metric", "test_every", "stochastic", "test_missing", "output_dir"};
  return keys;
}

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); }

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) bad(key, why);
}

template <class T>
T get(const ordered_json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(key, "has the wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

std::size_t get_count(const ordered_json& j, const std::string& key) {
  const auto& v = j.at(key);
  require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0), key,
          "must be a non-negative integer");
  return v.get<std::size_t>();
}

std::vector<std::uint64_t> parse_seeds(const ordered_json& v) {
  std::vector<std::uint64_t> out;
  if (v.is_array()) {
    for (const auto& s : v) {
      require(s.is_number_integer() && s.get<long long>() >= 0, "seeds", "entries must be non-negative integers");
      out.push_back(s.get<std::uint64_t>());
    }
  } else if (v.is_number_integer()) {
    out.push_back(v.get<std::uint64_t>());
  } else if (v.is_string()) {
    std::stringstream ss(v.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoull(item, &used));
        require(used == item.size(), "seeds", "bad entry '" + item + "'");
      } catch (const std::logic_error&) {
        bad("seeds", "bad entry '" + item + "'");
      }
    }
  } else {
    bad("seeds", "must be a list of integers");
  }
  return out;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["algorithm"] = algorithm_name(c.algorithm);
  j["mu"] = c.mu;
  j["preset"] = c.preset;
  j["dataset"] = c.dataset;
  j["modalities"] = c.modalities;
  j["classes"] = c.classes;
  j["samples"] = c.samples;
  j["latent_dim"] = c.latent_dim;
  j["modality_rank"] = c.modality_rank;
  j["feature_dim"] = c.feature_dim;
  j["seq_len"] = c.seq_len;
  j["noise"] = c.noise;
  j["separation"] = c.separation;
  j["feature_noise"] = c.feature_noise;
  j["feature_offset"] = c.feature_offset;
  j["data_seed"] = c.data_seed;
  j["clients"] = c.clients;
  j["participation"] = c.participation;
  j["q"] = c.q;
  j["u"] = c.u;
  j["beta"] = c.beta;
  j["min_samples"] = c.min_samples;
  j["rounds"] = c.rounds;
  j["local_epochs"] = c.local_epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["proj_dim"] = c.proj_dim;
  j["heads"] = c.heads;
  j["tau"] = c.tau;
  j["alpha_reg"] = c.alpha_reg;
  j["alpha_con"] = c.alpha_con;
  j["alpha_align"] = c.alpha_align;
  j["toggles"] = toggles_name(c.toggles);
  j["cma_kind"] = cma_kind_name(c.cma_kind);
  j["seeds"] = c.seeds;
  j["metric"] = metric_name(c.metric);
  j["test_every"] = c.test_every;
  j["stochastic"] = c.stochastic;
  j["test_missing"] = c.test_missing;
  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig from_json(const ordered_json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string unknown;
  const auto& keys = config_keys();
  for (const auto& [key, _] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);

  ExperimentConfig c;
  auto has = [&](const char* k) { return j.contains(k); };
  // Enum parsers know the allowed names but not the key.
  auto named = [&](const char* k, auto parse) {
    try {
      return parse(get<std::string>(j, k));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key '") + k + "': " + e.what());
    }
  };
  if (has("algorithm")) c.algorithm = named("algorithm", [](const std::string& v) { return parse_algorithm(v); });
  if (has("mu")) c.mu = get<double>(j, "mu");
  if (has("preset")) c.preset = get<std::string>(j, "preset");
  if (has("dataset")) c.dataset = get<std::string>(j, "dataset");
  if (has("modalities")) c.modalities = get_count(j, "modalities");
  if (has("classes")) c.classes = get_count(j, "classes");
  if (has("samples")) c.samples = get_count(j, "samples");
  if (has("latent_dim")) c.latent_dim = get_count(j, "latent_dim");
  if (has("modality_rank")) c.modality_rank = get_count(j, "modality_rank");
  if (has("feature_dim")) c.feature_dim = get_count(j, "feature_dim");
  if (has("seq_len")) c.seq_len = get_count(j, "seq_len");
  if (has("noise")) c.noise = get<double>(j, "noise");
  if (has("separation")) c.separation = get<double>(j, "separation");
  if (has("feature_noise")) c.feature_noise = get<double>(j, "feature_noise");
  if (has("feature_offset")) c.feature_offset = get<double>(j, "feature_offset");
  if (has("data_seed")) c.data_seed = get_count(j, "data_seed");
  if (has("clients")) c.clients = get_count(j, "clients");
  if (has("participation")) c.participation = get<double>(j, "participation");
  if (has("q")) c.q = get<double>(j, "q");
  if (has("u")) c.u = get<double>(j, "u");
  if (has("beta")) c.beta = get<double>(j, "beta");
  if (has("min_samples")) c.min_samples = get_count(j, "min_samples");
  if (has("rounds")) c.rounds = get_count(j, "rounds");
  if (has("local_epochs")) c.local_epochs = get_count(j, "local_epochs");
  if (has("batch")) c.batch = get_count(j, "batch");
  if (has("lr")) c.lr = get<double>(j, "lr");
  if (has("weight_decay")) c.weight_decay = get<double>(j, "weight_decay");
  if (has("proj_dim")) c.proj_dim = get_count(j, "proj_dim");
  if (has("heads")) c.heads = get_count(j, "heads");
  if (has("tau")) c.tau = get<double>(j, "tau");
  if (has("alpha_reg")) c.alpha_reg = get<double>(j, "alpha_reg");
  if (has("alpha_con")) c.alpha_con = get<double>(j, "alpha_con");
  if (has("alpha_align")) c.alpha_align = get<double>(j, "alpha_align");
  if (has("toggles")) c.toggles = named("toggles", [](const std::string& v) { return parse_toggles(v); });
  if (has("cma_kind")) c.cma_kind = named("cma_kind", [](const std::string& v) { return parse_cma_kind(v); });
  if (has("seeds")) c.seeds = parse_seeds(j.at("seeds"));
  if (has("metric")) c.metric = named("metric", [](const std::string& v) { return parse_metric(v); });
  if (has("test_every")) c.test_every = get_count(j, "test_every");
  if (has("stochastic")) c.stochastic = get<bool>(j, "stochastic");
  if (has("test_missing")) c.test_missing = get<bool>(j, "test_missing");
  if (has("output_dir")) c.output_dir = get<std::string>(j, "output_dir");
  c.validate();
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(mu >= 0 && std::isfinite(mu), "mu", "must be >= 0");
  require(!dataset.empty(), "dataset", "must not be empty");
  require(modalities >= 2, "modalities", "must be >= 2");
  require(classes >= 2, "classes", "must be >= 2");
  require(samples > 0, "samples", "must be > 0");
  require(latent_dim > 0, "latent_dim", "must be > 0");
  require(modality_rank > 0 && modality_rank <= latent_dim, "modality_rank", "must lie in [1, latent_dim]");
  require(feature_dim > 0, "feature_dim", "must be > 0");
  require(noise >= 0, "noise", "must be >= 0");
  require(feature_noise >= 0, "feature_noise", "must be >= 0");
  require(feature_offset >= 0, "feature_offset", "must be >= 0");
  require(clients >= 1, "clients", "must be >= 1");
  require(participation > 0 && participation <= 1, "participation", "must lie in (0, 1]");
  require(q >= 0 && q <= 1, "q", "must lie in [0, 1]");
  require(u >= 0 && u < 1, "u", "must lie in [0, 1)");
  require(beta > 0, "beta", "must be > 0");
  require(batch >= 1, "batch", "must be >= 1");
  require(lr > 0, "lr", "must be > 0");
  require(weight_decay >= 0, "weight_decay", "must be >= 0");
  require(proj_dim >= 1, "proj_dim", "must be >= 1");
  require(heads >= 1, "heads", "must be >= 1");
  require(tau > 0, "tau", "must be > 0");
  require(alpha_reg >= 0, "alpha_reg", "must be >= 0");
  require(alpha_con >= 0, "alpha_con", "must be >= 0");
  require(alpha_align >= 0, "alpha_align", "must be >= 0");
  require(!seeds.empty(), "seeds", "must list at least one seed");
  require(test_every >= 1, "test_every", "must be >= 1");
  require(!output_dir.empty(), "output_dir", "must not be empty");
}

SyntheticSpec ExperimentConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.num_modalities = modalities;
  s.num_classes = classes;
  s.samples = samples;
  s.latent_dim = latent_dim;
  s.modality_rank = modality_rank;
  s.feature_dims.assign(modalities, feature_dim);
  s.seq_len = seq_len;
  s.separation = separation;
  s.noise = noise;
  s.feature_noise = feature_noise;
  s.feature_offset = feature_offset;
  return s;
}

ExperimentConfig parse_config(std::string_view json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::pair<std::string, std::string>>& overrides) {
  ordered_json j = to_json(cfg);
  for (const auto& [key, text] : overrides) {
    ordered_json v = ordered_json::parse(text, nullptr, false);
    if (v.is_discarded()) v = text;
    j[key] = v;
  }
  return from_json(j);
}

MultimodalDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    Rng rng = stream(cfg.data_seed, Purpose::Synthesis);
    return synthesize(cfg.synthetic_spec(), rng);
  }
  return load_feature_files(cfg.dataset);
}

NetSpec make_net_spec(const ExperimentConfig& cfg, const MultimodalDataset& ds) {
  PresetOptions opts;
  opts.proj_dim = cfg.proj_dim;
  opts.heads = cfg.heads;
  opts.num_modalities = ds.num_modalities();
  opts.num_classes = ds.num_classes;
  for (const Shape& s : ds.sample_shapes) opts.input_dims.push_back(s.back());
  if (!ds.sample_shapes.empty() && ds.sample_shapes[0].size() == 2) opts.seq_len = ds.sample_shapes[0][0];
  NetSpec spec = make_preset(cfg.preset, opts);
  if (spec.num_modalities() != ds.num_modalities()) {
    throw ConfigError("preset '" + cfg.preset + "' expects " + std::to_string(spec.num_modalities()) +
                      " modalities, dataset has " + std::to_string(ds.num_modalities()));
  }
  spec.num_classes = ds.num_classes;
  for (std::size_t m = 0; m < spec.num_modalities(); ++m) {
    const Shape& s = ds.sample_shapes[m];
    spec.encoders[m].input_dim = s.back();
    if (spec.encoders[m].is_sequence() != (s.size() == 2)) {
      throw ConfigError("preset '" + cfg.preset + "' modality " + std::to_string(m) +
                        (s.size() == 2 ? " expects flat features" : " expects [seq_len, dim] sequences") +
                        ", dataset gives " + shape_str(s));
    }
    if (s.size() == 2) spec.seq_len = s[0];
  }
  spec.validate();
  return spec;
}

}  // namespace protofed
