#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "lcmflow/cli.hpp"
#include "lcmflow/core.hpp"
#include "lcmflow/likelihood.hpp"

using namespace lcmflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const {
    return sub.empty() ? path.string() : (path / sub).string();
  }
};

// small but trackable dataset; a couple of seconds to build
std::vector<std::string> synth_args(const std::string& out, const std::string& traj = "straight",
                                    uint64_t seed = 3) {
  return {"synth",         "--out",      out,
          "--traj",        traj,         "--frames",
          "6",             "--span",     "0.6",
          "--seed",        std::to_string(seed),
          "--width",       "96",         "--height",
          "64",            "--fov-deg",  "100",
          "--contrast",    "70",         "--freq-low",
          "0.6",           "--freq-high", "2.5",
          "--lk-window",   "9",          "--lk-max-level",
          "1",             "--sparse-stride", "6"};
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  json doc;
  in >> doc;
  return doc;
}

}  // namespace

TEST_CASE("synth builds a dataset and reruns produce identical artifacts") {
  TempDir tmp("lcmflow_cli_synth");
  CHECK(cli::run(synth_args(tmp.str("a"))) == 0);
  CHECK(cli::run(synth_args(tmp.str("b"))) == 0);
  CHECK(fs::exists(tmp.str("a") + "/manifest.json"));
  CHECK(fs::exists(tmp.str("a") + "/run.json"));
  const json run_a = read_json(tmp.str("a") + "/run.json");
  const json run_b = read_json(tmp.str("b") + "/run.json");
  CHECK(run_a["artifacts"] == run_b["artifacts"]);
  CHECK(run_a["seed"] == 3);
  CHECK(fnv1a_file(tmp.str("a") + "/manifest.json") ==
        fnv1a_file(tmp.str("b") + "/manifest.json"));
}

TEST_CASE("synth rejects unknown trajectory kinds with a data error") {
  TempDir tmp("lcmflow_cli_badtraj");
  auto args = synth_args(tmp.str("x"));
  args[4] = "zigzag";
  CHECK(cli::run(args) == 2);
}

TEST_CASE("unknown flags are usage errors") {
  CHECK(cli::run({"synth", "--does-not-exist", "1"}) == 1);
  CHECK(cli::run({"unknown-command"}) == 1);
  CHECK(cli::run({}) == 1);
}

TEST_CASE("calibrate fits a lut from a dataset and evalfit tabulates it") {
  TempDir tmp("lcmflow_cli_cal");
  REQUIRE(cli::run(synth_args(tmp.str("data"), "straight", 11)) == 0);

  const std::string lut_path = tmp.str("out/lut.json");
  CHECK(cli::run({"calibrate", tmp.str("data"), "--out", lut_path, "--knots", "3",
                  "--min-bin-count", "50", "--restarts", "2", "--max-fit-samples", "4000"}) == 0);
  CHECK(fs::exists(lut_path));
  CHECK(fs::exists(tmp.str("out/bins.csv")));
  CHECK(fs::exists(tmp.str("out/run.json")));

  const ParamLut lut = ParamLut::load_json(lut_path);
  CHECK(lut.knots.size() >= 1);
  for (size_t i = 0; i < lut.knots.size(); ++i) {
    const LcmParams at_knot = lut_lookup(lut.knots[i], lut);
    CHECK(at_knot.beta == lut.entries[i].beta);
    CHECK(at_knot.gamma == lut.entries[i].gamma);
    CHECK(at_knot.w_l == lut.entries[i].w_l);
  }

  const std::string table = tmp.str("out/ks.csv");
  CHECK(cli::run({"evalfit", tmp.str("data"), "--lut", lut_path, "--out", table}) == 0);
  std::ifstream in(table);
  std::string header;
  std::getline(in, header);
  CHECK(header == "bin_lo,bin_hi,n,ks_lcm,ks_gauss,ks_loglogistic");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == static_cast<int>(lut.knots.size()));
}

TEST_CASE("evalfit emits NaN statistics for starved bins") {
  TempDir tmp("lcmflow_cli_starved");
  REQUIRE(cli::run(synth_args(tmp.str("data"), "straight", 13)) == 0);
  ParamLut lut;
  lut.knots = {1.0, 100.0};
  lut.entries = {{0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}};
  lut.save_json(tmp.str("lut.json"));
  const std::string table = tmp.str("ks.csv");
  // demand more samples than the tiny dataset can provide
  CHECK(cli::run({"evalfit", tmp.str("data"), "--lut", tmp.str("lut.json"), "--out", table,
                  "--min-bin-count", "10000000"}) == 0);
  std::ifstream in(table);
  std::string line;
  std::getline(in, line);  // header
  int nan_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CHECK(line.find("nan") != std::string::npos);
    ++nan_rows;
  }
  CHECK(nan_rows == 2);
}

TEST_CASE("calibrate fails cleanly on an empty dataset directory") {
  TempDir tmp("lcmflow_cli_empty");
  fs::create_directories(tmp.str("nothing"));
  CHECK(cli::run({"calibrate", tmp.str("nothing"), "--out", tmp.str("lut.json")}) == 2);
}

TEST_CASE("egomotion requires a lut for lcmsac and runs on ground-truth flow") {
  TempDir tmp("lcmflow_cli_ego");
  REQUIRE(cli::run(synth_args(tmp.str("data"), "straight", 17)) == 0);

  CHECK(cli::run({"egomotion", tmp.str("data"), "--estimator", "lcmsac", "--flow", "gt",
                  "--out", tmp.str("runx")}) == 2);

  CHECK(cli::run({"egomotion", tmp.str("data"), "--estimator", "ransac", "--flow", "gt",
                  "--out", tmp.str("run_r"), "--seed", "5", "--max-samples", "300"}) == 0);
  const json metrics = read_json(tmp.str("run_r/metrics.json"));
  CHECK(metrics["estimator"] == "ransac");
  CHECK(metrics["frames"] == 6);
  CHECK(metrics["drift_percent"].get<double>() < 0.01);
  CHECK(fs::exists(tmp.str("run_r/trajectory.csv")));
  CHECK(fs::exists(tmp.str("run_r/run.json")));

  ParamLut lut;
  lut.knots = {10.0};
  lut.entries = {{0.6, 0.05, 0.8}};
  lut.save_json(tmp.str("lut.json"));
  CHECK(cli::run({"egomotion", tmp.str("data"), "--estimator", "lcmsac", "--flow", "gt",
                  "--out", tmp.str("run_l"), "--lut", tmp.str("lut.json"), "--seed", "5",
                  "--max-samples", "300"}) == 0);
  const json lm = read_json(tmp.str("run_l/metrics.json"));
  CHECK(lm["drift_percent"].get<double>() < 0.01);

  SUBCASE("report summarizes both runs with drift deltas") {
    const std::string table = tmp.str("report.csv");
    CHECK(cli::run({"report", tmp.str("run_r/metrics.json"), tmp.str("run_l/metrics.json"),
                    "--out", table}) == 0);
    std::ifstream in(table);
    std::string header, row1, row2;
    std::getline(in, header);
    std::getline(in, row1);
    std::getline(in, row2);
    CHECK(header ==
          "label,estimator,flow,trajectory,drift_percent,delta_vs_first_percent");
    CHECK(row1.find("ransac") != std::string::npos);
    CHECK(row2.find("lcmsac") != std::string::npos);
    // three-decimal drift formatting
    const size_t comma = row1.rfind(',');
    const std::string delta = row1.substr(comma + 1);
    CHECK(delta == "0.000");
  }
}

TEST_CASE("egomotion reruns with the same seed are bit-identical") {
  TempDir tmp("lcmflow_cli_det");
  REQUIRE(cli::run(synth_args(tmp.str("data"), "straight", 23)) == 0);
  for (const char* name : {"r1", "r2"}) {
    REQUIRE(cli::run({"egomotion", tmp.str("data"), "--estimator", "ransac", "--flow",
                      "sparse", "--out", tmp.str(name), "--seed", "9"}) == 0);
  }
  CHECK(fnv1a_file(tmp.str("r1/metrics.json")) == fnv1a_file(tmp.str("r2/metrics.json")));
  CHECK(fnv1a_file(tmp.str("r1/trajectory.csv")) == fnv1a_file(tmp.str("r2/trajectory.csv")));
}

TEST_CASE("report rejects an empty metrics list") {
  CHECK(cli::run({"report", "--out", "/tmp/never.csv"}) == 1);
}

TEST_CASE("synth sweep emits a scene group that calibrate can expand") {
  TempDir tmp("lcmflow_cli_sweep");
  auto args = synth_args(tmp.str("sweep"), "straight", 31);
  args.push_back("--scenes");
  args.push_back("2");
  args.push_back("--contrast-min");
  args.push_back("20");
  args.push_back("--contrast-max");
  args.push_back("90");
  REQUIRE(cli::run(args) == 0);
  CHECK(fs::exists(tmp.str("sweep/group.json")));
  CHECK(fs::exists(tmp.str("sweep/scene_00/manifest.json")));
  CHECK(fs::exists(tmp.str("sweep/scene_01/manifest.json")));

  const std::string lut_path = tmp.str("lut.json");
  CHECK(cli::run({"calibrate", tmp.str("sweep"), "--out", lut_path, "--knots", "3",
                  "--min-bin-count", "50", "--restarts", "1", "--max-fit-samples", "3000"}) == 0);
  CHECK(fs::exists(lut_path));
}
