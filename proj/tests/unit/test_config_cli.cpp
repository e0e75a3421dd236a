#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "protofed/commands.hpp"
#include "protofed/errors.hpp"

using namespace protofed;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("protofed_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.samples = 300;
  c.clients = 4;
  c.rounds = 2;
  c.proj_dim = 8;
  c.heads = 1;
  c.min_samples = 4;
  c.seeds = {1, 2};
  c.output_dir = out.string();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

struct Shell {
  int status;
  std::string err;
};

Shell run_cli(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "protofed_cli_stderr.txt";
  const std::string cmd = std::string(PROTOFED_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  return {WEXITSTATUS(rc), slurp(err)};
}

}  // namespace

TEST_CASE("config parsing is strict") {
  CHECK(parse_config("{}").rounds == ExperimentConfig{}.rounds);
  try {
    parse_config(R"({"rounds": 3, "learning_rate": 0.1, "qq": 1})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("learning_rate") != std::string::npos);
    CHECK(msg.find("qq") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[1,2]"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"rounds\": "), ParseError);
}

TEST_CASE("validation names the offending key") {
  const auto rejects = [](const std::string& json, const std::string& key) {
    try {
      parse_config(json);
      return false;
    } catch (const ConfigError& e) {
      return std::string(e.what()).find("'" + key + "'") != std::string::npos;
    }
  };
  CHECK(rejects(R"({"q": 1.5})", "q"));
  CHECK(rejects(R"({"u": 1.0})", "u"));
  CHECK(rejects(R"({"tau": 0})", "tau"));
  CHECK(rejects(R"({"participation": 0})", "participation"));
  CHECK(rejects(R"({"modalities": 1})", "modalities"));
  CHECK(rejects(R"({"rounds": -1})", "rounds"));
  CHECK(rejects(R"({"algorithm": "fedsgd"})", "algorithm"));
  CHECK(rejects(R"({"cma_kind": "cosine"})", "cma_kind"));
  CHECK(rejects(R"({"toggles": "cmpr+foo"})", "toggles"));
}

TEST_CASE("config echo reproduces the config") {
  ExperimentConfig c = tiny("x");
  c.algorithm = AlgorithmKind::FEDPROTO;
  c.toggles = parse_toggles("cmpr+cma");
  c.cma_kind = CmaKind::KL;
  c.metric = MetricKind::UAR;
  c.tau = 0.05;
  const std::string text = config_to_json(c);
  CHECK(config_to_json(parse_config(text)) == text);
}

TEST_CASE("toggle and override parsing") {
  CHECK(parse_toggles("all") == LossToggles{});
  CHECK(parse_toggles("none") == LossToggles::none());
  CHECK(parse_toggles("cmpc+cma") == LossToggles{false, true, true});
  CHECK(toggles_name(parse_toggles("cmpr+cmpc")) == "cmpr+cmpc");
  const ExperimentConfig c =
      apply_overrides(ExperimentConfig{}, {{"q", "0.7"}, {"seeds", "4,5"}, {"algorithm", "fedavg"}, {"toggles", "none"}});
  CHECK(c.q == 0.7);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.algorithm == AlgorithmKind::FEDAVG);
  CHECK(c.toggles == LossToggles::none());
  CHECK_THROWS_AS(apply_overrides(ExperimentConfig{}, {{"nope", "1"}}), ConfigError);
}

TEST_CASE("gen-data writes two feature files and loads back equal") {
  const fs::path dir = fresh_dir("gen");
  ExperimentConfig c = tiny(dir);
  const std::string manifest = cmd_gen_data(c, dir.string());
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(dir)) csvs += e.path().extension() == ".csv";
  CHECK(csvs == 4);
  const MultimodalDataset orig = load_dataset(c);
  c.dataset = manifest;
  const MultimodalDataset back = load_dataset(c);
  CHECK(back.features == orig.features);
  CHECK(back.labels == orig.labels);
  CHECK(back.splits == orig.splits);
}

TEST_CASE("gen-data into an unwritable path is an IO error naming it") {
  const fs::path blocker = fresh_dir("blocker");
  std::ofstream(blocker) << "file, not a directory";
  try {
    cmd_gen_data(tiny(blocker), (blocker / "sub").string());
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(blocker.string()) != std::string::npos);
  }
  fs::remove(blocker);
}

TEST_CASE("run writes its outputs, and repeats are bit-identical") {
  const fs::path a = fresh_dir("run_a");
  cmd_run(tiny(a));
  const std::string first = slurp(a / "summary.json");
  cmd_run(tiny(a));
  for (const char* f : {"config.json", "summary.json"}) CHECK(fs::exists(a / f));
  for (const char* f : {"rounds.csv", "metrics.csv", "summary.json", "final.bin", "best.bin", "prototypes.json"})
    CHECK(fs::exists(a / "seed_1" / f));
  CHECK(line_count(a / "seed_1" / "rounds.csv") == 3);
  CHECK(slurp(a / "summary.json") == first);
  CHECK(config_to_json(load_config((a / "config.json").string())) == config_to_json(tiny(a)));
  const auto s = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(s["seeds"].size() == 2);
}

TEST_CASE("full missingness: every client holds one modality and the run completes") {
  const fs::path dir = fresh_dir("q1");
  ExperimentConfig c = tiny(dir);
  c.q = 1.0;
  c.seeds = {1};
  const auto data = std::make_shared<const MultimodalDataset>(load_dataset(c));
  const Federation fed(c, data, 1);
  for (const auto& s : fed.shards()) CHECK(std::count(s.available.begin(), s.available.end(), true) == 1);
  cmd_run(c);
  CHECK(fs::exists(dir / "summary.json"));
}

TEST_CASE("sweeps write one row per value") {
  const fs::path dir = fresh_dir("sweep");
  ExperimentConfig c = tiny(dir);
  c.rounds = 1;
  SUBCASE("toggles default to the five ablation rows") {
    const std::string csv = cmd_sweep(c, "toggles", {});
    CHECK(line_count(csv) == 6);
    CHECK(line_count(fs::path(csv).parent_path() / "sweep_runs.csv") == 11);
  }
  SUBCASE("q") {
    const std::string csv = cmd_sweep(c, "q", {"0.5", "0.7", "0.8", "1.0"});
    CHECK(line_count(csv) == 5);
    CHECK(line_count(fs::path(csv).parent_path() / "sweep_runs.csv") == 9);
    CHECK(cmd_report(dir.string(), (dir / "report.csv").string()) == 4);
  }
  CHECK_THROWS_AS(cmd_sweep(c, "lr", {"0.1"}), ConfigError);
}

TEST_CASE("payload sizes") {
  const auto [protos, params] = payload_sizes(ExperimentConfig{});
  CHECK(protos > 0);
  CHECK(protos < params);
}

TEST_CASE("CLI reports errors as JSON with a nonzero exit") {
  SUBCASE("unknown flag") {
    const Shell r = run_cli("run --learning_rate 0.1");
    CHECK(r.status != 0);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j["error"]["type"] == "UsageError");
  }
  SUBCASE("invalid value names the key") {
    const Shell r = run_cli("run --q 2 --rounds 1");
    CHECK(r.status != 0);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j["error"]["type"] == "ConfigError");
    CHECK(j["error"]["message"].get<std::string>().find("'q'") != std::string::npos);
  }
  SUBCASE("missing config file") {
    const Shell r = run_cli("run --config /nonexistent/protofed.json");
    CHECK(r.status != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["type"] == "IoError");
  }
}
