// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "../tools/cli.hpp"
#include "orchard/ingest.hpp"
#include "orchard/synth.hpp"
#include "test_support.hpp"

using namespace orchard;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "orchardfuse");
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

TreeSpec small_tree(std::uint64_t seed) {
  TreeSpec spec;
  spec.branch_count = 4;
  spec.branch_stations = {0.4, 0.7, 1.0, 1.3};
  spec.branch_diameters = {25, 22, 20, 18};
  spec.branch_lengths = {0.4, 0.4, 0.35, 0.3};
  spec.noise_sigma = 2.0;
  spec.point_count = 30000;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("synth writes the manifest, frame pairs and ground truth") {
  orchard::testing::TempDir dir("cli_synth");
  write(dir / "tree.json", to_json(small_tree(1)).dump());
  const Run r = run({"synth", "--spec", (dir / "tree.json").string(), "--out-dir", (dir / "out").string(),
                     "--frames", "10", "--json"});
  REQUIRE(r.code == 0);
  const json doc = json::parse(r.out);
  CHECK(doc["frames"] == 10);
  for (int i = 0; i < 10; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%03d", i);
    CHECK(fs::exists(dir / "out" / (std::string(stem) + "_depth.pgm")));
    CHECK(fs::exists(dir / "out" / (std::string(stem) + "_mask.pgm")));
  }
  for (const char* f : {"manifest.json", "ground_truth.json", "tree.ply", "pipeline.json"}) {
    CHECK(fs::exists(dir / "out" / f));
  }
  const Manifest m = load_manifest(dir / "out" / "manifest.json");
  CHECK(m.frames.size() == 10);
  const GroundTruth gt = ground_truth_from_json(json::parse(slurp(dir / "out" / "ground_truth.json")));
  CHECK(gt.branch_diameters_mm.size() == 4);
}

TEST_CASE("register a canopy season onto a dormant season") {
  orchard::testing::TempDir dir("cli_register");
  TreeSpec dormant = small_tree(2);
  TreeSpec canopy = small_tree(3);
  canopy.pose = se3_exp(Twist{Vec3(0.02, -0.03, 0.06), Vec3(0.05, -0.08, 0.03)});
  write(dir / "dormant.json", to_json(dormant).dump());
  write(dir / "canopy.json", to_json(canopy).dump());
  write(dir / "config.json", R"({"registration": {"method": "fast_gicp", "resolution_schedule": [4, 2, 1]}})");
  REQUIRE(run({"synth", "--spec", (dir / "dormant.json").string(), "--out-dir", (dir / "d").string(),
               "--frames", "1"}).code == 0);
  REQUIRE(run({"synth", "--spec", (dir / "canopy.json").string(), "--out-dir", (dir / "c").string(), "--frames",
               "1", "--canopy-keep", "0.06", "--canopy-clutter", "500", "--canopy-seed", "4"}).code == 0);
  const Run r = run({"--config", (dir / "config.json").string(), "--json", "register", "--source",
                     (dir / "c" / "canopy.ply").string(), "--target", (dir / "d" / "tree.ply").string(),
                     "--method", "fast_gicp", "--trunk-only", "--output", (dir / "aligned.ply").string()});
  REQUIRE(r.code == 0);
  const json doc = json::parse(r.out);
  REQUIRE(doc["transform"].size() == 16);
  CHECK(doc["method"] == "fast_gicp");
  CHECK(doc["iterations"].get<int>() > 0);
  CHECK(doc["fitness_m"].get<double>() <= 0.006);
  CHECK(fs::exists(dir / "aligned.ply"));

  const Run f = run({"--json", "fitness", "--source", (dir / "c" / "canopy.ply").string(), "--target",
                     (dir / "d" / "tree.ply").string(), "--transform", "1", "0", "0", "0", "0", "1", "0", "0", "0",
                     "0", "1", "0", "0", "0", "0", "1"});
  REQUIRE(f.code == 0);
  CHECK(json::parse(f.out).contains("fitness_m"));
}

TEST_CASE("an unknown method exits with a validation error naming it") {
  const Run r = run({"register", "--source", "a.ply", "--target", "b.ply", "--method", "warp"});
  CHECK(r.code == 1);
  CHECK(r.out.empty());
  const json e = json::parse(r.err);
  CHECK(e["error"]["kind"] == "validation");
  CHECK(e["error"]["message"].get<std::string>().find("warp") != std::string::npos);
}

TEST_CASE("missing inputs and bad configs are validation errors") {
  orchard::testing::TempDir dir("cli_errors");
  CHECK(run({"measure", "--cloud", (dir / "missing.ply").string()}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  write(dir / "bad.json", R"({"registration": {"voxel_size_m": 0.02, "colour": 1}})");
  const Run r = run({"--config", (dir / "bad.json").string(), "register", "--source", "a", "--target", "b"});
  CHECK(r.code == 1);
  CHECK(json::parse(r.err)["error"]["message"].get<std::string>().find("registration.colour") != std::string::npos);
}

TEST_CASE("computation failures exit with code 2") {
  orchard::testing::TempDir dir("cli_fail");
  LabeledPointCloud a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(Vec3(0.01 * i, 0, 0), PointLabel::kTrunk);
    b.push_back(Vec3(0.01 * i, 0, 0), PointLabel::kBranch);
  }
  write_ply(dir / "a.ply", a);
  write_ply(dir / "b.ply", b);
  const Run r = run({"measure", "--cloud", (dir / "b.ply").string()});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err)["error"]["kind"] == "computation");
}

TEST_CASE("measure and evalmeas chain through files") {
  orchard::testing::TempDir dir("cli_measure");
  TreeSpec spec = small_tree(5);
  spec.point_count = 80000;
  write(dir / "tree.json", to_json(spec).dump());
  REQUIRE(run({"synth", "--spec", (dir / "tree.json").string(), "--out-dir", dir.path().string(), "--frames",
               "1"}).code == 0);
  const Run m = run({"--json", "measure", "--cloud", (dir / "tree.ply").string(), "--output",
                     (dir / "report.json").string()});
  REQUIRE(m.code == 0);
  CHECK(json::parse(m.out) == json::parse(slurp(dir / "report.json")));
  const Run e = run({"--json", "evalmeas", "--report", (dir / "report.json").string(), "--truth",
                     (dir / "ground_truth.json").string()});
  REQUIRE(e.code == 0);
  const json doc = json::parse(e.out);
  CHECK(doc["trunk_diameter"]["count"] == 1);
  CHECK(doc["branch_diameter"]["count"] == 4);
  CHECK(doc["branch_spacing"]["count"] == 3);
}

TEST_CASE("evalseg reads two mask images") {
  orchard::testing::TempDir dir("cli_seg");
  MaskImage p(4, 4), t(4, 4);
  p.at(0, 0) = t.at(0, 0) = 1;
  p.at(1, 0) = 1;
  write_mask_pgm(dir / "p.pgm", p);
  write_mask_pgm(dir / "t.pgm", t);
  const Run r = run({"--json", "evalseg", "--pred", (dir / "p.pgm").string(), "--truth", (dir / "t.pgm").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["trunk"]["iou"].get<double>() == 0.5);
}

TEST_CASE("the installed binary speaks the same protocol") {
  const std::string bin = ORCHARDFUSE_CLI_PATH;
  REQUIRE(fs::exists(bin));
  orchard::testing::TempDir dir("cli_bin");
  const std::string cmd = "'" + bin + "' register --source x --target y --method warp > '" +
                          (dir / "out").string() + "' 2> '" + (dir / "err").string() + "'";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 1);
  CHECK(slurp(dir / "out").empty());
  CHECK(json::parse(slurp(dir / "err"))["error"]["kind"] == "validation");
}

}  // TEST_SUITE
