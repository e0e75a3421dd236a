#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "protofed/data.hpp"
#include "protofed/losses.hpp"
#include "protofed/metrics.hpp"
#include "protofed/models.hpp"

namespace protofed {

enum class AlgorithmKind { MFCPL, MFCPL_UNIMODAL, FEDAVG, FEDPROX, FEDPROTO };

AlgorithmKind parse_algorithm(std::string_view s);
const char* algorithm_name(AlgorithmKind kind);

/// "all", "none", or '+'-joined subset of cmpr, cmpc, cma.
LossToggles parse_toggles(std::string_view s);
std::string toggles_name(const LossToggles& t);

/// Flat, strictly validated description of an experiment. Serialized as a
/// JSON object whose keys are the field names below.
struct ExperimentConfig {
  AlgorithmKind algorithm = AlgorithmKind::MFCPL;
  double mu = 0.01;  // FedProx proximal weight

  std::string preset = "synthetic";
  /// "synthetic" or a path to a feature-file manifest.
  std::string dataset = "synthetic";
  std::size_t modalities = 2;
  std::size_t classes = 4;
  std::size_t samples = 2000;
  std::size_t latent_dim = 8;
  std::size_t modality_rank = 8;
  std::size_t feature_dim = 16;
  std::size_t seq_len = 0;
  double noise = 0.5;
  double separation = 1.0;
  double feature_noise = 0.2;
  double feature_offset = 0.0;
  std::uint64_t data_seed = 7;

  std::size_t clients = 20;
  double participation = 1.0;
  double q = 0.5;
  double u = 0.0;
  double beta = 0.2;
  std::size_t min_samples = 8;

  std::size_t rounds = 60;
  std::size_t local_epochs = 1;
  std::size_t batch = 16;
  double lr = 0.05;
  double weight_decay = 1e-5;
  std::size_t proj_dim = 64;
  std::size_t heads = 6;

  double tau = 0.1;
  double alpha_reg = 1.0;
  double alpha_con = 2.0;
  double alpha_align = 0.1;
  LossToggles toggles;
  CmaKind cma_kind = CmaKind::L2;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  MetricKind metric = MetricKind::F1;
  std::size_t test_every = 5;
  bool stochastic = false;
  bool test_missing = false;
  std::string output_dir = "runs/default";

  /// Range checks; throws ConfigError naming the offending key.
  void validate() const;

  LossWeights loss_weights() const { return {alpha_reg, alpha_con, alpha_align, tau}; }
  ShardOptions shard_options() const { return {clients, beta, q, u, min_samples}; }
  SyntheticSpec synthetic_spec() const;
};

/// Every accepted key, in serialization order.
const std::vector<std::string>& config_keys();

/// Parses a JSON object. Unknown keys are rejected with their names listed.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Applies key=value overrides. A value is read as JSON when it parses,
/// otherwise as a string; "seeds" also accepts "1,2,3".
ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::pair<std::string, std::string>>& overrides);

/// Loads the configured dataset (synthesizing from data_seed when synthetic).
MultimodalDataset load_dataset(const ExperimentConfig& cfg);
/// Architecture for the configured preset, sized to the dataset.
NetSpec make_net_spec(const ExperimentConfig& cfg, const MultimodalDataset& ds);

}  // namespace protofed
