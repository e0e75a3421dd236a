#pragma once

#include <string>
#include <utility>
#include <vector>

#include "protofed/config.hpp"
#include "protofed/fedsim.hpp"

namespace protofed {

/// Files of one seed's run: rounds.csv, metrics.csv, summary.json,
/// final.bin, best.bin and (for prototype algorithms) prototypes.json.
void write_seed_outputs(const std::string& dir, const ExperimentConfig& cfg, const RunResult& run);

/// Aggregate summary over seeds. Holds no timing, so identical inputs give
/// identical text.
std::string run_summary_json(const ExperimentConfig& cfg, const std::vector<RunResult>& runs);

/// Serialized sizes in bytes: one client's prototype payload and its
/// parameter payload, for the configured architecture.
std::pair<std::size_t, std::size_t> payload_sizes(const ExperimentConfig& cfg);

/// Synthesizes the configured dataset into `out_dir`; returns the manifest path.
std::string cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

/// Runs every seed, writes `cfg.output_dir`/{config.json, summary.json,
/// seed_<s>/...}. Returns the output directory.
std::string cmd_run(const ExperimentConfig& cfg);

/// Sweepable axes: q, u, tau, d, cma_kind, toggles.
std::vector<std::string> default_sweep_values(const std::string& axis);

/// One run per (value, seed) under `cfg.output_dir`/<axis>=<value>; writes
/// sweep.csv (one row per value) and sweep_runs.csv (one row per run).
/// Returns the sweep.csv path.
std::string cmd_sweep(const ExperimentConfig& cfg, const std::string& axis, std::vector<std::string> values);

/// Scans `root` for run summaries and writes one CSV row per run to `out_csv`.
/// Returns the row count.
std::size_t cmd_report(const std::string& root, const std::string& out_csv);

}  // namespace protofed
