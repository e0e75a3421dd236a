#include "protofed/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "protofed/errors.hpp"
#include "protofed/format.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace protofed {

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

struct Stats {
  double mean = 0, std = 0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = v.size() > 1 ? std::sqrt(s.std / static_cast<double>(v.size() - 1)) : 0.0;
  return s;
}

ordered_json seed_json(const RunResult& r) {
  ordered_json j;
  j["seed"] = r.seed;
  j["rounds"] = r.reports.size();
  j["best_round"] = r.best_round;
  j["best_val"] = r.best_val;
  j["best_test"] = r.best_test;
  j["final_test"] = r.final_test;
  if (!r.reports.empty()) {
    const auto& last = r.reports.back();
    j["final_val"] = last.val_metric;
    j["final_train_loss"] = last.losses.total;
  }
  return j;
}

std::size_t checkpoint_bytes(const ParamStore& params) {
  std::ostringstream out;
  write_checkpoint(out, params);
  return out.str().size();
}

}  // namespace

void write_seed_outputs(const std::string& dir_str, const ExperimentConfig& cfg, const RunResult& run) {
  const fs::path dir(dir_str);
  ensure_dir(dir);
  {
    std::ostringstream csv;
    csv << "round,clients,loss_total,loss_ce,loss_cmpr,loss_cmpc,loss_cma,loss_prox,val_metric,val_accuracy,"
           "test_metric,test_accuracy,wall_ms\n";
    for (const auto& r : run.reports) {
      std::string ids;
      for (int c : r.clients) ids += (ids.empty() ? "" : ";") + std::to_string(c);
      csv << r.round << ',' << ids << ',' << format_double(r.losses.total) << ',' << format_double(r.losses.ce)
          << ',' << format_double(r.losses.cmpr) << ',' << format_double(r.losses.cmpc) << ','
          << format_double(r.losses.cma) << ',' << format_double(r.losses.prox) << ','
          << format_double(r.val_metric) << ',' << format_double(r.val_accuracy) << ',' << opt(r.test_metric)
          << ',' << opt(r.test_accuracy) << ',' << format_double(std::round(r.wall_ms * 1000) / 1000) << '\n';
    }
    write_text(dir / "rounds.csv", csv.str());
  }
  {
    const std::string m = metric_name(cfg.metric);
    std::ostringstream csv;
    csv << "round,split,metric,value\n";
    for (const auto& r : run.reports) {
      csv << r.round << ",val," << m << ',' << format_double(r.val_metric) << '\n';
      csv << r.round << ",val,accuracy," << format_double(r.val_accuracy) << '\n';
      if (r.test_metric) {
        csv << r.round << ",test," << m << ',' << format_double(*r.test_metric) << '\n';
        csv << r.round << ",test,accuracy," << format_double(*r.test_accuracy) << '\n';
      }
    }
    write_text(dir / "metrics.csv", csv.str());
  }
  ordered_json summary = seed_json(run);
  summary["metric"] = metric_name(cfg.metric);
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  save_checkpoint((dir / "final.bin").string(), run.final_params);
  save_checkpoint((dir / "best.bin").string(), run.best_params);
  if (!run.final_prototypes.empty()) write_text(dir / "prototypes.json", prototypes_to_json(run.final_prototypes) + "\n");
}

std::string run_summary_json(const ExperimentConfig& cfg, const std::vector<RunResult>& runs) {
  ordered_json j;
  j["algorithm"] = algorithm_name(cfg.algorithm);
  j["metric"] = metric_name(cfg.metric);
  j["config"] = ordered_json::parse(config_to_json(cfg));
  std::vector<double> best, final;
  j["seeds"] = ordered_json::array();
  for (const auto& r : runs) {
    j["seeds"].push_back(seed_json(r));
    best.push_back(r.best_test);
    final.push_back(r.final_test);
  }
  const Stats b = stats(best), f = stats(final);
  j["mean_best_test"] = b.mean;
  j["std_best_test"] = b.std;
  j["mean_final_test"] = f.mean;
  j["std_final_test"] = f.std;
  return j.dump(2) + "\n";
}

std::pair<std::size_t, std::size_t> payload_sizes(const ExperimentConfig& cfg) {
  const MultimodalDataset ds = load_dataset(cfg);
  const MultimodalNet net(make_net_spec(cfg, ds));
  Rng rng = stream(0, Purpose::Init);
  const ParamStore params = net.init_params(rng);
  // Worst case: the client reports every class.
  PrototypeSet protos(ds.num_classes, net.spec().proj_dim);
  for (std::size_t k = 0; k < ds.num_classes; ++k) protos.set(k, std::vector<double>(net.spec().proj_dim, 0.0), 1);
  return {serialize_payload(protos).size(), checkpoint_bytes(params)};
}

std::string cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (cfg.dataset != "synthetic") throw ConfigError("gen-data only synthesizes; dataset must be \"synthetic\"");
  return export_dataset(load_dataset(cfg), out_dir);
}

std::string cmd_run(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir(cfg.output_dir);
  ensure_dir(dir);
  write_text(dir / "config.json", config_to_json(cfg) + "\n");
  auto data = std::make_shared<const MultimodalDataset>(load_dataset(cfg));
  std::vector<RunResult> runs;
  for (std::uint64_t seed : cfg.seeds) {
    runs.push_back(run_experiment(cfg, data, seed));
    write_seed_outputs((dir / ("seed_" + std::to_string(seed))).string(), cfg, runs.back());
  }
  write_text(dir / "summary.json", run_summary_json(cfg, runs));
  return dir.string();
}

std::vector<std::string> default_sweep_values(const std::string& axis) {
  if (axis == "q") return {"0.5", "0.7", "0.8", "1.0"};
  if (axis == "u") return {"0.0", "0.2", "0.4", "0.6"};
  if (axis == "tau") return {"0.05", "0.1", "0.5", "1.0"};
  if (axis == "d") return {"16", "32", "64", "128"};
  if (axis == "cma_kind") return {"l2", "l1", "smooth_l1", "kl"};
  if (axis == "toggles") return {"none", "cmpc+cma", "cmpr+cma", "cmpr+cmpc", "all"};
  throw ConfigError("unknown sweep axis '" + axis + "' (expected q, u, tau, d, cma_kind, toggles)");
}

std::string cmd_sweep(const ExperimentConfig& cfg, const std::string& axis, std::vector<std::string> values) {
  const std::vector<std::string> defaults = default_sweep_values(axis);
  if (values.empty()) values = defaults;
  const std::string key = axis == "d" ? "proj_dim" : axis;
  const bool quoted = axis == "cma_kind" || axis == "toggles";
  const fs::path root(cfg.output_dir);
  ensure_dir(root);
  std::ostringstream table, per_run;
  table << "axis,value,algorithm,metric,mean_best_test,std_best_test,mean_final_test,runs\n";
  per_run << "axis,value,seed,best_round,best_val,best_test,final_test\n";
  for (const std::string& value : values) {
    const std::string json_value = quoted ? ordered_json(value).dump() : value;
    ExperimentConfig c = apply_overrides(cfg, {{key, json_value}});
    c.output_dir = (root / (axis + "=" + value)).string();
    cmd_run(c);
    const auto summary = ordered_json::parse(std::ifstream(fs::path(c.output_dir) / "summary.json"));
    table << axis << ',' << value << ',' << algorithm_name(c.algorithm) << ',' << metric_name(c.metric) << ','
          << format_double(summary["mean_best_test"].get<double>()) << ','
          << format_double(summary["std_best_test"].get<double>()) << ','
          << format_double(summary["mean_final_test"].get<double>()) << ',' << summary["seeds"].size() << '\n';
    for (const auto& s : summary["seeds"]) {
      per_run << axis << ',' << value << ',' << s["seed"].get<std::uint64_t>() << ',' << s["best_round"].get<int>()
              << ',' << format_double(s["best_val"].get<double>()) << ','
              << format_double(s["best_test"].get<double>()) << ','
              << format_double(s["final_test"].get<double>()) << '\n';
    }
  }
  write_text(root / "sweep_runs.csv", per_run.str());
  write_text(root / "sweep.csv", table.str());
  return (root / "sweep.csv").string();
}

std::size_t cmd_report(const std::string& root, const std::string& out_csv) {
  if (!fs::is_directory(root)) throw IoError("'" + root + "' is not a directory");
  std::vector<fs::path> found;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "summary.json") found.push_back(entry.path());
  }
  std::sort(found.begin(), found.end());
  std::ostringstream csv;
  csv << "run,algorithm,metric,q,u,beta,tau,proj_dim,toggles,cma_kind,seeds,mean_best_test,std_best_test,"
         "mean_final_test\n";
  std::size_t rows = 0;
  for (const auto& path : found) {
    ordered_json s;
    try {
      s = ordered_json::parse(std::ifstream(path));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("'" + path.string() + "': " + e.what());
    }
    if (!s.contains("config")) continue;  // per-seed summaries
    const auto& c = s["config"];
    csv << fs::relative(path.parent_path(), root).generic_string() << ',' << s["algorithm"].get<std::string>() << ','
        << s["metric"].get<std::string>() << ',' << format_double(c["q"].get<double>()) << ','
        << format_double(c["u"].get<double>()) << ',' << format_double(c["beta"].get<double>()) << ','
        << format_double(c["tau"].get<double>()) << ',' << c["proj_dim"].get<std::size_t>() << ','
        << c["toggles"].get<std::string>() << ',' << c["cma_kind"].get<std::string>() << ',' << s["seeds"].size()
        << ',' << format_double(s["mean_best_test"].get<double>()) << ','
        << format_double(s["std_best_test"].get<double>()) << ','
        << format_double(s["mean_final_test"].get<double>()) << '\n';
    ++rows;
  }
  write_text(out_csv, csv.str());
  return rows;
}

}  // namespace protofed
