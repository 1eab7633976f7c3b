#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stpatch/cli.hpp"
#include "stpatch/dataset.hpp"
#include "stpatch/params.hpp"

using namespace stpatch;

namespace {

namespace fs = std::filesystem;

int run(std::vector<std::string> args) {
  std::vector<const char*> argv = {"stpatch"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(int(argv.size()), argv.data());
}

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

}  // namespace

TEST_CASE("synth then partition round trips through the CLI") {
  TempDir tmp("stpatch_cli_partition");
  CHECK(run({"synth", "--seed", "3", "--points", "20", "--days", "2", "--slice-minutes", "60",
             "--out", tmp.str("ds")}) == 0);
  auto ds = load_dataset(tmp.str("ds"));
  CHECK(ds.point_count() == 20);

  CHECK(run({"partition", "--dataset", tmp.str("ds"), "--capacity", "2", "--leaves-per-patch",
             "2", "--out", tmp.str("part")}) == 0);
  CHECK(fs::exists(tmp.str("part") + "/partition.geojson"));
  CHECK(fs::exists(tmp.str("part") + "/partition.csv"));

  // constraint violation: leaves per patch must be a power of two
  CHECK(run({"partition", "--dataset", tmp.str("ds"), "--capacity", "2", "--leaves-per-patch",
             "3", "--out", tmp.str("bad")}) == 2);

  // --patches picks the grouping
  CHECK(run({"partition", "--dataset", tmp.str("ds"), "--capacity", "2", "--patches", "4",
             "--out", tmp.str("p4")}) == 0);
}

TEST_CASE("train then eval through the CLI") {
  TempDir tmp("stpatch_cli_train");
  const std::string cfg_path = tmp.str("train.cfg");
  {
    std::ofstream out(cfg_path);
    out << "synth_points=12\nsynth_days=6\nsynth_slice_minutes=60\nsynth_seed=4\n";
    out << "capacity=2\nleaves_per_patch=2\n";
    out << "input_dim=6\nweek_dim=2\nday_dim=2\nspatial_dim=2\nheads=2\nlayers=1\n";
    out << "epochs=2\nbatch_size=8\nseed=9\nlog_timing=off\n";
  }
  CHECK(run({"train", "--config", cfg_path, "--out", tmp.str("run"), "--serial"}) == 0);
  CHECK(fs::exists(tmp.str("run") + "/checkpoint.pstg"));
  {
    std::ifstream log(tmp.str("run") + "/trainlog.csv");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 3);  // header + 2 epochs
  }

  CHECK(run({"eval", "--checkpoint", tmp.str("run") + "/checkpoint.pstg", "--config", cfg_path,
             "--split", "val", "--out", tmp.str("eval"),
             "--dump-attention", tmp.str("attn.bin")}) == 0);
  CHECK(fs::exists(tmp.str("eval") + "/metrics.csv"));

  // attention sidecar holds one matrix per layer, block, and head
  auto maps = load_tensor_map(tmp.str("attn.bin"));
  CHECK(maps.size() == 4);  // 1 layer x {depth, breadth} x 2 heads
  CHECK(maps.count("l0.depth.h0") == 1);
  CHECK(maps.count("l0.breadth.h1") == 1);
  const auto& depth0 = maps.at("l0.depth.h0");
  REQUIRE(depth0.rank() == 3);
  CHECK(depth0.dim(1) == depth0.dim(2));  // [R x P x P]

  // bad split name is a usage error
  CHECK(run({"eval", "--checkpoint", tmp.str("run") + "/checkpoint.pstg", "--config", cfg_path,
             "--split", "nope"}) == 2);
  // missing data source is a usage error
  CHECK(run({"eval", "--checkpoint", tmp.str("run") + "/checkpoint.pstg"}) == 2);
}

TEST_CASE("config overrides via --set and seed flag") {
  TempDir tmp("stpatch_cli_set");
  CHECK(run({"train", "--set", "synth_points=10", "--set", "synth_days=6",
             "--set", "synth_slice_minutes=60", "--set", "capacity=2",
             "--set", "leaves_per_patch=1", "--set", "input_dim=4", "--set", "week_dim=2",
             "--set", "day_dim=2", "--set", "spatial_dim=2", "--set", "heads=2",
             "--set", "layers=1", "--set", "epochs=1", "--set", "log_timing=off",
             "--seed", "77", "--out", tmp.str("run")}) == 0);
  CHECK(fs::exists(tmp.str("run") + "/checkpoint.pstg"));

  // unknown key in --set is a usage error
  CHECK(run({"train", "--set", "bogus=1", "--out", tmp.str("x")}) == 2);
}

TEST_CASE("bench subcommand writes a csv") {
  TempDir tmp("stpatch_cli_bench");
  CHECK(run({"bench", "--sizes", "64", "128", "--dim", "8", "--leaves-per-patch", "4",
             "--repeats", "1", "--no-backward", "--out", tmp.str()}) == 0);
  CHECK(fs::exists(tmp.str("bench.csv")));
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({"no-such-command"}) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"partition"}) == 2);  // missing required --dataset
}

TEST_CASE("runtime errors exit with code 1") {
  CHECK(run({"eval", "--checkpoint", "/nonexistent/ckpt.pstg", "--dataset", "/nonexistent"}) == 1);
}
