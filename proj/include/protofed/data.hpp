#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protofed/batch.hpp"
#include "protofed/rng.hpp"
#include "protofed/tensor.hpp"

namespace protofed {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

const char* split_name(Split s);
Split parse_split(std::string_view s);

/// Aligned per-modality feature arrays. Modality m stores `size()` samples of
/// `sample_shapes[m]` each, row-major and contiguous.
struct MultimodalDataset {
  std::vector<std::string> modality_names;
  std::vector<Shape> sample_shapes;
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::vector<Split> splits;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t num_modalities() const noexcept { return features.size(); }
  std::size_t sample_size(std::size_t m) const { return shape_size(sample_shapes.at(m)); }
  std::span<const double> sample(std::size_t m, std::size_t i) const;
  std::vector<std::size_t> indices(Split s) const;
  /// Checks alignment, label range and split tags; throws DataError.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t num_modalities = 2;
  std::size_t num_classes = 4;
  std::size_t samples = 2000;
  std::size_t latent_dim = 8;
  /// Rank of each modality's map from latent space; < latent_dim makes the
  /// modalities only partially redundant.
  std::size_t modality_rank = 8;
  std::vector<std::size_t> feature_dims{16, 16};
  /// 0 produces flat samples; otherwise [seq_len, feature_dim] sequences.
  std::size_t seq_len = 0;
  double separation = 1.0;
  double noise = 0.5;
  double feature_noise = 0.0;
  /// Scale of a fixed random mean added to each modality. Nonzero makes
  /// zero-filled inputs unlike real ones, as with pre-extracted features.
  double feature_offset = 0.0;
};

/// Latent class mean + N(0, noise^2) per sample, mapped through one fixed
/// random linear map per modality (E|x|^2 = separation^2 + noise^2 per sample
/// and step), plus optional per-feature noise and a fixed per-modality offset. Labels are balanced and splits follow
/// 70/30 train/test with 20% of train held out for validation.
MultimodalDataset synthesize(const SyntheticSpec& spec, Rng& rng);

/// Reassigns split tags: 70% train / 30% test, then 20% of train to val.
void assign_splits(MultimodalDataset& ds, Rng& rng);

/// Per class, Dirichlet(beta * 1_N) proportions allocate that class's
/// positions across clients. Returns positions into `labels`. Proportions are
/// redrawn until every client holds at least `min_samples`.
std::vector<std::vector<std::size_t>> dirichlet_partition(std::span<const int> labels, std::size_t num_clients,
                                                          double beta, Rng& rng, std::size_t min_samples = 8,
                                                          std::size_t max_attempts = 2000);

using ModalitySet = std::vector<bool>;

/// Each modality is missing with probability q, independently per client;
/// a client that draws all-missing keeps one modality chosen uniformly.
/// Draws are coupled across q: raising q only removes modalities.
std::vector<ModalitySet> assign_missing_modalities(std::size_t num_clients, std::size_t num_modalities, double q,
                                                   Rng& rng);

struct ClientShard {
  int client_id = -1;
  /// Dataset row indices owned by this client.
  std::vector<std::size_t> indices;
  ModalitySet available;
  /// zero_fill[m][j]: local sample j has modality m zeroed. Only set for
  /// available modalities; unavailable ones are zero for every sample.
  std::vector<std::vector<std::uint8_t>> zero_fill;
  std::uint64_t rng_seed = 0;

  std::size_t size() const noexcept { return indices.size(); }
  bool present(std::size_t m, std::size_t local) const;
};

/// For each available modality, floor(u * n) samples (without replacement)
/// get their inputs zero-filled.
void apply_zero_fill(ClientShard& shard, double u, Rng& rng);

struct ShardOptions {
  std::size_t num_clients = 20;
  double beta = 0.2;
  double q = 0.5;
  double u = 0.0;
  std::size_t min_samples = 8;
};

/// Partition the train split, assign modality availability and zero-fill.
std::vector<ClientShard> build_shards(const MultimodalDataset& ds, const ShardOptions& opts, std::uint64_t seed);

/// Gathers rows into a batch. Inputs are zeroed wherever `presence` is 0.
MultimodalBatch assemble_batch(const MultimodalDataset& ds, std::span<const std::size_t> rows, Tensor presence);
/// Batch of local positions of a shard, honoring its availability and zero-fill.
MultimodalBatch shard_batch(const MultimodalDataset& ds, const ClientShard& shard,
                            std::span<const std::size_t> local_positions);
/// Batch with every modality present.
MultimodalBatch complete_batch(const MultimodalDataset& ds, std::span<const std::size_t> rows);

/// Manifest schema:
///   {"modalities":[{"name","file","dim","seq_len"?}], "labels": file,
///    "splits": file, "num_classes"?: K}
/// Feature CSVs have a header feat_0..feat_{n-1}; labels CSV a "label"
/// column; splits CSV a "split" column (train/val/test). Relative paths
/// resolve against the manifest's directory.
MultimodalDataset load_feature_files(const std::string& manifest_path);
/// Writes manifest.json plus CSVs into `dir`; floats use shortest round-trip text.
std::string export_dataset(const MultimodalDataset& ds, const std::string& dir);

}  // namespace protofed
