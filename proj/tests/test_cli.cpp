#include "doctest.h"

#include "kafuse/cli.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace kafuse;
namespace fs = std::filesystem;

namespace {

std::string binary() {
  const char* b = std::getenv("KAFUSE_BIN");
  REQUIRE_MESSAGE(b != nullptr, "KAFUSE_BIN must point at the kafuse executable");
  return b;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + binary() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kafuse_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string small_synth(const fs::path& dir) {
  const std::string data = (dir / "data").string();
  REQUIRE(run("synth --samples 30 --views 2 --informative 2 --duplicates 1 --noise 2 --seed 4 --out " + data) == 0);
  return data;
}

}  // namespace

TEST_CASE("number formatting is locale independent") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-2.5e-10) == "-2.5e-10");
  CHECK(format_number(3.0) == "3");
  CHECK(format_percent(94.256) == "94.26");
  CHECK(format_percent(100.0) == "100.00");
}

TEST_CASE("ranking csv round trip") {
  const fs::path dir = scratch("ranking");
  const FeatureRanking r{{1, 0, 0.75}, {0, 2, 0.1 + 0.2}, {0, 0, 0.0}};
  write_ranking(r, dir / "ranking.csv");
  const auto rows = read_csv(dir / "ranking.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"rank", "view", "feature", "score"});
  CHECK(rows[1] == std::vector<std::string>{"1", "2", "1", "0.75"});
  const FeatureRanking back = read_ranking(dir / "ranking.csv");
  REQUIRE(back.size() == r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(back[i].view == r[i].view);
    CHECK(back[i].feature == r[i].feature);
    CHECK(back[i].score == r[i].score);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset checksum reacts to a single value") {
  SyntheticSpec spec;
  MultiViewDataset ds = synth_generate(spec).data;
  const auto before = dataset_checksum(ds);
  CHECK(dataset_checksum(ds) == before);
  ds.views[1].data(3, 4) += 1e-12;
  CHECK(dataset_checksum(ds) != before);
}

TEST_CASE("usage errors exit with 2") {
  const fs::path dir = scratch("usage");
  CHECK(run("select") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("select --data " + (dir / "missing").string() + " --out " + (dir / "o").string()) == 2);
  const std::string data = small_synth(dir);
  CHECK(run("select --data " + data + " --mode both --out " + (dir / "o").string()) == 2);
  CHECK(run("select --data " + data + " --r 1 --out " + (dir / "o").string()) == 2);
  CHECK(run("synth --informative 0 --out " + (dir / "s").string()) == 2);
  CHECK(run("--help") == 0);
  CHECK(run("synth --out " + (dir / "t").string(), "KAFUSE_THREADS=many") == 2);
  CHECK(run("synth --out " + (dir / "t").string(), "KAFUSE_THREADS=0") == 2);
  CHECK(run("synth --out " + (dir / "t").string(), "KAFUSE_THREADS=3") == 0);
  fs::remove_all(dir);
}

TEST_CASE("select writes a full ranking, a trace and a manifest") {
  const fs::path dir = scratch("select");
  const std::string data = small_synth(dir);
  const std::string out = (dir / "out").string();
  REQUIRE(run("select --data " + data + " --mode graph_only --max-iter 6 --out " + out) == 0);

  const auto ranking = read_csv(dir / "out" / "ranking.csv");
  CHECK(ranking.size() == 1 + 2 * 5);
  const auto trace = read_csv(dir / "out" / "trace.csv");
  REQUIRE(trace.size() >= 2);
  CHECK(trace[0][3] == "alignment");
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(std::stod(trace[i][3]) == 0.0);
  const std::string manifest = slurp(dir / "out" / "manifest.json");
  CHECK(manifest.find("\"mode\": \"graph_only\"") != std::string::npos);
  CHECK(manifest.find("checksum_fnv1a") != std::string::npos);

  const std::string ranking_file = (dir / "out" / "ranking.csv").string();
  CHECK(run("eval --data " + data + " --ranking " + ranking_file + " --ratio 0 --out " + out) == 2);
  CHECK(run("eval --data " + data + " --ranking " + ranking_file + " --ratio 1.5 --out " + out) == 2);
  fs::remove_all(dir);
}

TEST_CASE("synth output is deterministic") {
  const fs::path dir = scratch("synth");
  REQUIRE(run("synth --samples 20 --seed 9 --out " + (dir / "a").string()) == 0);
  REQUIRE(run("synth --samples 20 --seed 9 --out " + (dir / "b").string()) == 0);
  for (const char* f : {"dataset.json", "view1.csv", "view3.csv", "labels.csv", "ground_truth.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  fs::remove_all(dir);
}

TEST_CASE("a one-point sweep equals select followed by eval") {
  const fs::path dir = scratch("sweep");
  const std::string data = small_synth(dir);
  const std::string fit_flags = " --max-iter 5 --seed 2";
  REQUIRE(run("select --data " + data + fit_flags + " --out " + (dir / "sel").string()) == 0);
  REQUIRE(run("eval --data " + data + " --ranking " + (dir / "sel" / "ranking.csv").string() +
              " --ratio 0.4 --runs 5 --seed 3 --out " + (dir / "ev").string()) == 0);
  REQUIRE(run("sweep --data " + data + fit_flags + " --ratios 0.4 --runs 5 --eval-seed 3 --out " +
              (dir / "sw").string()) == 0);

  const auto report = read_csv(dir / "ev" / "report.csv");
  const auto sweep = read_csv(dir / "sw" / "sweep.csv");
  REQUIRE(report.size() == 2);
  REQUIRE(sweep.size() == 2);
  for (std::size_t c = 0; c < report[0].size(); ++c) {
    const auto at = std::find(sweep[0].begin(), sweep[0].end(), report[0][c]);
    REQUIRE(at != sweep[0].end());
    CHECK(sweep[1][static_cast<std::size_t>(at - sweep[0].begin())] == report[1][c]);
  }
  fs::remove_all(dir);
}

TEST_CASE("thread count does not change the evaluation") {
  const fs::path dir = scratch("threads");
  const std::string data = small_synth(dir);
  REQUIRE(run("select --data " + data + " --max-iter 3 --out " + (dir / "sel").string()) == 0);
  const std::string eval_args = "eval --data " + data + " --ranking " + (dir / "sel" / "ranking.csv").string() +
                                " --runs 8 --out ";
  REQUIRE(run("--threads 1 " + eval_args + (dir / "one").string()) == 0);
  REQUIRE(run("--threads 4 " + eval_args + (dir / "four").string()) == 0);
  CHECK(slurp(dir / "one" / "report.csv") == slurp(dir / "four" / "report.csv"));
  fs::remove_all(dir);
}
