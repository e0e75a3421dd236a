#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "protofed/config.hpp"
#include "protofed/data.hpp"
#include "protofed/metrics.hpp"
#include "protofed/models.hpp"
#include "protofed/params.hpp"
#include "protofed/prototypes.hpp"

namespace protofed {

/// ceil(rate * N) distinct ids drawn uniformly without replacement, ascending.
std::vector<int> sample_clients(std::size_t num_clients, double rate, Rng& rng);

struct ClientUpdate {
  ParamStore params;
  std::size_t num_samples = 0;
};

/// Sample-count weighted mean of the updates, accumulated in the given order
/// as theta_0 + sum_i w_i (theta_i - theta_0), so identical inputs return
/// themselves exactly.
ParamStore fedavg_aggregate(std::span<const ClientUpdate> updates);

/// Per-term training losses summed over a client's minibatches.
struct LossTotals {
  double total = 0, ce = 0, cmpr = 0, cmpc = 0, cma = 0, prox = 0;
  std::size_t batches = 0;

  void add(const LossTotals& o);
  LossTotals mean() const;
};

struct ServerState {
  ParamStore theta;
  PrototypeSet complete;                  // empty until the first aggregation
  std::vector<PrototypeSet> unimodal;     // per modality, unimodal ablation only
  int round = 0;
};

struct LocalResult {
  int client_id = -1;
  ParamStore params;
  std::size_t num_samples = 0;
  std::optional<LocalPrototypeSet> prototypes;
  std::vector<LocalPrototypeSet> unimodal;  // per modality
  LossTotals losses;
};

struct RoundReport {
  int round = 0;
  std::vector<int> clients;
  LossTotals losses;  // per-batch means averaged over participants
  double val_metric = 0;
  double val_accuracy = 0;
  std::optional<double> test_metric;
  std::optional<double> test_accuracy;
  double wall_ms = 0;
};

/// One simulated federation for a single seed.
class Federation {
 public:
  Federation(ExperimentConfig cfg, std::shared_ptr<const MultimodalDataset> data, std::uint64_t seed);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const MultimodalNet& net() const noexcept { return net_; }
  const MultimodalDataset& data() const noexcept { return *data_; }
  const std::vector<ClientShard>& shards() const noexcept { return shards_; }
  std::uint64_t seed() const noexcept { return seed_; }

  const ServerState& state() const noexcept { return state_; }
  ServerState& state() noexcept { return state_; }

  /// Local training of one client from `server`, using its broadcast
  /// prototypes. Deterministic in (seed, round, client).
  LocalResult local_update(std::size_t client, const ServerState& server, int round) const;

  /// Sample, train in parallel, aggregate parameters and prototypes,
  /// evaluate on validation. Test evaluation is left to the caller.
  RoundReport run_round();

  EvalResult evaluate(const ParamStore& params, Split split) const;

 private:
  ExperimentConfig cfg_;
  std::shared_ptr<const MultimodalDataset> data_;
  std::uint64_t seed_;
  MultimodalNet net_;
  std::vector<ClientShard> shards_;
  ServerState state_;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<RoundReport> reports;
  ParamStore initial;
  ParamStore final_params;
  ParamStore best_params;
  int best_round = 0;
  double best_val = 0;
  /// Test metric of the best-validation model (the headline number).
  double best_test = 0;
  double final_test = 0;
  PrototypeSet final_prototypes;
};

/// Runs `cfg.rounds` rounds. Validation every round; test every
/// `cfg.test_every` rounds, on the last round, and whenever validation improves.
RunResult run_experiment(const ExperimentConfig& cfg, std::shared_ptr<const MultimodalDataset> data,
                         std::uint64_t seed);

/// Worker threads for client updates: PROTOFED_THREADS if set, else 1.
std::size_t thread_count();

}  // namespace protofed
