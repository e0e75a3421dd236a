// Command-line entry point: gen-data, run, sweep, report.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protofed/commands.hpp"
#include "protofed/errors.hpp"

namespace {

using namespace protofed;

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  for (const std::string& key : config_keys()) {
    cmd->add_option("--" + key, flags.values[key], "override config key " + key);
  }
}

ExperimentConfig resolve(const ConfigFlags& flags) {
  ExperimentConfig cfg = flags.config_path.empty() ? ExperimentConfig{} : load_config(flags.config_path);
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& [key, value] : flags.values)
    if (!value.empty()) overrides.emplace_back(key, value);
  return apply_overrides(cfg, overrides);
}

int report_error(const std::string& type, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"]["type"] = type;
  j["error"]["message"] = message;
  std::cerr << j.dump() << '\n';
  return 2;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal federated prototype learning simulator"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, run_flags, sweep_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "synthesize a dataset as feature CSVs + manifest");
  add_config_flags(gen, gen_flags);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* run = app.add_subcommand("run", "run an experiment for every configured seed");
  add_config_flags(run, run_flags);

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "run one experiment per value of an axis");
  add_config_flags(sweep, sweep_flags);
  sweep->add_option("--axis", axis, "q | u | tau | d | cma_kind | toggles")->required();
  sweep->add_option("--values", values, "comma-separated values (default per axis)");

  std::string report_root, report_out;
  auto* report = app.add_subcommand("report", "collect run summaries into one CSV");
  report->add_option("--root", report_root, "directory to scan")->required();
  report->add_option("--out", report_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("UsageError", e.what());
  }

  try {
    if (gen->parsed()) {
      std::cout << cmd_gen_data(resolve(gen_flags), gen_out) << '\n';
    } else if (run->parsed()) {
      std::cout << cmd_run(resolve(run_flags)) << '\n';
    } else if (sweep->parsed()) {
      std::cout << cmd_sweep(resolve(sweep_flags), axis, split_list(values)) << '\n';
    } else if (report->parsed()) {
      const std::size_t rows = cmd_report(report_root, report_out);
      std::cout << report_out << " (" << rows << " runs)\n";
    }
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what());
  }
  return 0;
}
