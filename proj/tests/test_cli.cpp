#include "c4/cli.hpp"
#include "c4/report.hpp"
#include "c4/run_config.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace c4;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("c4_cli_tests_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "c4");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int count(const std::string& hay, const std::string& needle) {
  int n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("run config parsing") {
  const auto def = parse_run_config("{}");
  CHECK(def.train.lambda == 0.3);
  CHECK(def.env.modes.size() == 3);
  const auto cfg = parse_run_config(R"({"train": {"lambda": 0.1, "optimizer": "adam"}})",
                                    {"train.clusters=3", "env.noise_scale=0", "output_dir=out/x"});
  CHECK(cfg.train.lambda == 0.1);
  CHECK(cfg.train.optimizer == Optimizer::Kind::adam);
  CHECK(cfg.train.clusters == 3);
  CHECK(cfg.env.noise_scale == 0.0);
  CHECK(cfg.output_dir == "out/x");
  CHECK(parse_run_config(to_json(cfg)).train.clusters == 3);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"lamda": 0.1}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"extra": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"gamma": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{", {}), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{}", {"novalue"}), ConfigError);
}

TEST_CASE("gen-data") {
  const auto dir = scratch("gen");
  spit(dir / "one.json", R"({"env": {"modes": [{"mean": [0.0, 0.0]}], "noise_scale": 0.0},
                          "data": {"trajectories": 3, "seed": 4}})");
  const auto r = cli({"gen-data", "--config", (dir / "one.json").string(), "--out", (dir / "one.jsonl").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("modes=1") != std::string::npos);
  const auto ds = load((dir / "one.jsonl").string());
  CHECK(ds.header().modes == 1);
  CHECK(ds.header().seed == 4);
  for (const auto& t : ds.transitions()) CHECK(t.a.norm() == 0.0);

  cli({"gen-data", "--config", (dir / "one.json").string(), "--out", (dir / "two.jsonl").string()});
  CHECK(slurp(dir / "one.jsonl") == slurp(dir / "two.jsonl"));

  spit(dir / "three.json", R"({"data": {"trajectories": 100, "seed": 1}})");
  REQUIRE(cli({"gen-data", "--config", (dir / "three.json").string(), "--out", (dir / "three.jsonl").string()}).code ==
          0);
  const auto big = load((dir / "three.jsonl").string());
  CHECK(big.size() == 2000);
  CHECK(big.header().modes == 3);

  spit(dir / "bad.json", R"({"data": {"trajectorys": 1}})");
  const auto bad = cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "x.jsonl").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("trajectorys") != std::string::npos);
  CHECK(cli({"gen-data", "--config", (dir / "missing.json").string(), "--out", "x"}).code == 2);
  CHECK(cli({"gen-data", "--out", "x"}).code == 2);
}

TEST_CASE("train, report") {
  const auto dir = scratch("train");
  spit(dir / "data.json", R"({"data": {"trajectories": 10, "seed": 2}})");
  REQUIRE(cli({"gen-data", "--config", (dir / "data.json").string(), "--out", (dir / "d.jsonl").string()}).code == 0);
  nlohmann::json cfg = {{"dataset", (dir / "d.jsonl").string()},
                        {"output_dir", (dir / "run").string()},
                        {"train", {{"steps", 0}, {"batch_size", 32}, {"refresh_period", 10}, {"hidden", {8}}}}};
  spit(dir / "run.json", cfg.dump());

  SUBCASE("steps = 0 writes a header-only CSV") {
    REQUIRE(cli({"train", "--config", (dir / "run.json").string()}).code == 0);
    const std::string csv = slurp(dir / "run" / "metrics.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
    CHECK(csv.rfind("step,td_loss", 0) == 0);
  }
  SUBCASE("reruns are byte-identical and the paired baseline feeds report") {
    const std::vector<std::string> set{"--set", "train.steps=25", "--set", "train.eval_every=10"};
    auto args = std::vector<std::string>{"train", "--config", (dir / "run.json").string()};
    args.insert(args.end(), set.begin(), set.end());
    REQUIRE(cli(args).code == 0);
    const std::string first = slurp(dir / "run" / "metrics.csv");
    REQUIRE(cli(args).code == 0);
    CHECK(slurp(dir / "run" / "metrics.csv") == first);
    CHECK(count(first, "\n") == 26);

    int mixtures = 0;
    for (const auto& e : fs::directory_iterator(dir / "run" / "mixtures")) mixtures += e.path().extension() == ".json";
    CHECK(mixtures == 25 / 10 + 1);
    CHECK(fs::exists(dir / "run" / "critic.json"));
    const auto summary = nlohmann::json::parse(slurp(dir / "run" / "summary.json"));
    CHECK(summary["refreshes"] == 3);
    CHECK(summary.contains("dataset_tr_n"));

    args.push_back("--baseline");
    REQUIRE(cli(args).code == 0);
    REQUIRE(fs::exists(dir / "run" / "metrics_baseline.csv"));

    const auto rep = cli({"report", (dir / "run" / "metrics.csv").string(),
                          (dir / "run" / "metrics_baseline.csv").string(), "--out", (dir / "rep").string()});
    REQUIRE(rep.code == 0);
    for (const char* m : {"td_loss", "tr_n", "eval_return"}) {
      const std::string svg = slurp(dir / "rep" / (std::string(m) + ".svg"));
      CHECK(count(svg, "<polyline") == 2);
      CHECK(svg.find(">metrics<") != std::string::npos);
      CHECK(svg.find(">metrics_baseline<") != std::string::npos);
    }
    // medians recomputed independently from the CSV text
    const auto sj = nlohmann::json::parse(slurp(dir / "rep" / "summary.json"));
    std::vector<double> td;
    std::stringstream lines(first);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) td.push_back(std::stod(line.substr(line.find(',') + 1)));
    std::sort(td.begin(), td.end());
    CHECK(sj["runs"][0]["metrics"]["td_loss"]["median"].get<double>() == td[12]);
    CHECK(sj["runs"][0]["metrics"]["eval_return"]["count"] == 3);

    const auto one = cli({"report", (dir / "run" / "metrics.csv").string(), "--out", (dir / "rep1").string()});
    REQUIRE(one.code == 0);
    CHECK(count(slurp(dir / "rep1" / "td_loss.svg"), "<polyline") == 1);
  }
  SUBCASE("usage errors") {
    spit(dir / "nodata.json", R"({"dataset": "/nonexistent/d.jsonl"})");
    const auto r = cli({"train", "--config", (dir / "nodata.json").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("does not exist") != std::string::npos);

    spit(dir / "bad.csv",
         "step,td_loss,penalty,objective,tr_n_sample_convention,active_cluster,cluster_occupancy_entropy,eval_return\n"
         "1,0.5,0,0.5,0.1,-1,0,\n2,oops,0,0.5,0.1,-1,0,\n");
    const auto rep = cli({"report", (dir / "bad.csv").string(), "--out", (dir / "r").string()});
    CHECK(rep.code == 2);
    CHECK(rep.err.find("bad.csv:3") != std::string::npos);
    CHECK(cli({"report", "--out", (dir / "r").string()}).code == 2);
  }
}

TEST_CASE("verify") {
  const auto bad = cli({"verify", "--suite", "nope"});
  CHECK(bad.code == 2);
  const auto ok = cli({"verify", "--suite", "covariance"});
  REQUIRE(ok.code == 0);
  const auto doc = nlohmann::json::parse(ok.out);
  CHECK(doc["pass"] == true);
  bool found = false;
  for (const auto& c : doc["suites"][0]["checks"])
    if (c["name"] == "law_of_total_covariance") {
      found = true;
      CHECK(c["value"].get<double>() < 1e-10);
    }
  CHECK(found);
  CHECK(cli({}).code == 2);
}
