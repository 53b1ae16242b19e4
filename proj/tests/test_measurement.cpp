// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "orchard/measurement.hpp"
#include "orchard/synth.hpp"
#include "test_support.hpp"

using namespace orchard;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Points on a cylinder of `radius` about the z axis through `center`,
// restricted to azimuths in [0, arc_deg).
LabeledPointCloud cylinder(std::size_t n, double radius, double height, double arc_deg, double noise,
                           std::uint64_t seed, PointLabel label = PointLabel::kTrunk,
                           const Vec3& center = Vec3::Zero()) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> az(0.0, arc_deg * kDeg);
  std::uniform_real_distribution<double> z(0.0, height);
  std::normal_distribution<double> g(0.0, noise > 0 ? noise : 1.0);
  LabeledPointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = az(rng);
    const double r = radius + (noise > 0 ? g(rng) : 0.0);
    c.push_back(center + Vec3(r * std::cos(a), r * std::sin(a), z(rng)), label);
  }
  return c;
}

TreeSpec six_branch_tree(double noise_mm = 0.0) {
  TreeSpec spec;
  spec.trunk_height = 1.5;
  spec.trunk_diameter_base = 90;
  spec.taper = 0.8;
  spec.branch_count = 6;
  spec.branch_stations = {0.35, 0.6, 0.85, 1.1, 1.3, 1.45};
  spec.branch_diameters = {25, 25, 25, 25, 25, 25};
  spec.branch_lengths = {0.4, 0.4, 0.4, 0.4, 0.35, 0.3};
  spec.branch_azimuths_deg = {0, 180, 0, 180, 0, 180};
  spec.noise_sigma = noise_mm;
  spec.point_count = 120000;
  spec.seed = 3;
  return spec;
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(std::abs(a.normalized().dot(b.normalized())), 0.0, 1.0)) / kDeg;
}

}  // namespace

TEST_SUITE("measurement") {

TEST_CASE("config validation") {
  MeasurementConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.trunk_slab_thickness = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.trunk_station_fractions = {0.5, 1.5};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("trunk axis of a vertical synthetic trunk") {
  TreeSpec spec;
  spec.point_count = 20000;
  const auto [cloud, gt] = generate_tree(spec);
  const Axis a = estimate_trunk_axis(cloud);
  CHECK(angle_between_deg(a.dir, Vec3::UnitZ()) < 0.5);
  CHECK(a.dir.z() > 0);
  CHECK(a.dir.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("trunk axis of a trunk tilted by ten degrees") {
  TreeSpec spec;
  spec.point_count = 20000;
  spec.pose = se3_exp(Twist{Vec3(1, 1, 0).normalized() * 10.0 * kDeg, Vec3(0.2, 0.1, 0)});
  const auto [cloud, gt] = generate_tree(spec);
  const Vec3 truth = spec.pose.rotation() * Vec3::UnitZ();
  const Axis a = estimate_trunk_axis(cloud);
  CHECK(angle_between_deg(a.dir, truth) < 0.5);
  CHECK(a.dir.dot(truth) > 0);
}

TEST_CASE("isotropic and sparse trunks are rejected") {
  std::mt19937_64 rng(1);
  LabeledPointCloud blob;
  for (int i = 0; i < 2000; ++i) blob.push_back(orchard::testing::random_unit(rng) * 0.1, PointLabel::kTrunk);
  CHECK_THROWS_WITH_AS(estimate_trunk_axis(blob), doctest::Contains("ambiguous"), FitError);
  const auto few = cylinder(99, 0.04, 1.0, 360, 0, 1);
  CHECK_THROWS_AS(estimate_trunk_axis(few), FitError);
}

TEST_CASE("exact cylinder slab recovers the diameter") {
  const auto c = cylinder(30000, 0.04, 1.0, 360, 0, 2);
  const CircleFit f = fit_circle_slab(c, Axis{}, 0.5, 0.02, PointLabel::kTrunk);
  CHECK(std::abs(f.diameter_mm - 80.0) < 1e-6);
  CHECK(f.residual_mm < 1e-6);
  CHECK(f.coverage_deg > 350);
  CHECK(f.center.norm() == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("noisy 200-point slabs land within two millimeters") {
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    // The slab holds every point, so all 200 enter the fit.
    const auto c = cylinder(200, 0.04, 0.02, 360, 0.002, 100 + seed);
    const CircleFit f = fit_circle_slab(c, Axis{}, 0.01, 0.02, PointLabel::kTrunk);
    REQUIRE(f.point_count == 200);
    inside += std::abs(f.diameter_mm - 80.0) <= 2.0;
  }
  CHECK(inside >= 95);
}

TEST_CASE("one-sided render of a trunk yields a half-cylinder fit within three millimeters") {
  TreeSpec spec;
  spec.trunk_height = 1.0;
  spec.trunk_diameter_base = 80;
  spec.taper = 1.0;
  const CameraIntrinsics k;
  const RigidTransform pose = look_at(Vec3(0.762, 0, 0.5), Vec3(0, 0, 0.5));
  const auto [depth, mask] = render_depth_frame(spec, pose, k);
  const auto cloud = apply_transform(pose, backproject_frame(depth, mask, k, {.erode_px = 0}));
  const CircleFit f = fit_circle_slab(cloud, Axis{}, 0.5, 0.02, PointLabel::kTrunk);
  CHECK(f.coverage_deg < 200);
  CHECK(std::abs(f.diameter_mm - 80.0) <= 3.0);
}

TEST_CASE("short arcs and empty slabs are unreliable") {
  const auto arc = cylinder(2000, 0.04, 1.0, 90, 0, 3);
  CHECK_THROWS_WITH_AS(fit_circle_slab(arc, Axis{}, 0.5, 0.02, PointLabel::kTrunk),
                       doctest::Contains("arc coverage"), FitError);
  const auto c = cylinder(2000, 0.04, 1.0, 360, 0, 4);
  CHECK_THROWS_AS(fit_circle_slab(c, Axis{}, 2.0, 0.02, PointLabel::kTrunk), FitError);
  CHECK_THROWS_AS(fit_circle_slab(c, Axis{}, 0.5, 0.02, PointLabel::kBranch), FitError);
}

TEST_CASE("clustering finds every branch near its true attachment") {
  TreeSpec spec = six_branch_tree();
  spec.branch_diameters = {16, 16, 16, 16, 16, 16};
  const auto [cloud, gt] = generate_tree(spec);
  const Axis axis = estimate_trunk_axis(cloud);
  const auto branches = cluster_branches(cloud, axis, 0.015);
  REQUIRE(branches.size() == 6);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    CAPTURE(i);
    CHECK(branches[i].id == static_cast<int>(i));
    CHECK((branches[i].attachment - gt.branch_attachments[i]).norm() < 0.010);
    CHECK(branches[i].axis_dir.norm() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(angle_between_deg(branches[i].axis_dir, gt.branch_directions[i]) < 5.0);
    CHECK(branches[i].axis_dir.dot(gt.branch_directions[i]) > 0);
    CHECK(branches[i].points.size() >= 30);
    if (i > 0) CHECK(branches[i].station_m > branches[i - 1].station_m);
  }
}

TEST_CASE("attachments sit within one branch radius of the axis exit point") {
  const TreeSpec spec = six_branch_tree();
  const auto [cloud, gt] = generate_tree(spec);
  const auto branches = cluster_branches(cloud, estimate_trunk_axis(cloud), 0.015);
  REQUIRE(branches.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK((branches[i].attachment - gt.branch_attachments[i]).norm() < 0.5e-3 * spec.branch_diameters[i] + 0.002);
  }
}

TEST_CASE("branchless clouds give no branches") {
  const auto c = cylinder(5000, 0.04, 1.0, 360, 0, 5);
  CHECK(cluster_branches(c, estimate_trunk_axis(c), 0.015).empty());
}

TEST_CASE("branches closer than the link radius merge") {
  // Two parallel rods leaving the trunk surface 5 mm apart.
  LabeledPointCloud c = cylinder(5000, 0.04, 1.0, 360, 0, 6);
  for (double dz : {0.0, 0.005}) {
    for (int i = 0; i < 200; ++i) {
      c.push_back(Vec3(0.045 + 0.001 * i, 0.0, 0.5 + dz), PointLabel::kBranch);
    }
  }
  CHECK(cluster_branches(c, estimate_trunk_axis(c), 0.015).size() == 1);
  CHECK(cluster_branches(c, estimate_trunk_axis(c), 0.004).size() == 2);
}

TEST_CASE("small clusters are discarded") {
  LabeledPointCloud c = cylinder(5000, 0.04, 1.0, 360, 0, 7);
  for (int i = 0; i < 29; ++i) c.push_back(Vec3(0.05 + 0.001 * i, 0, 0.5), PointLabel::kBranch);
  CHECK(cluster_branches(c, estimate_trunk_axis(c), 0.015).empty());
}

TEST_CASE("measuring a synthetic tree stays within the field error budget") {
  const TreeSpec spec = six_branch_tree(1.0);
  const auto [cloud, gt] = generate_tree(spec);
  const MeasurementReport r = measure_tree(cloud);
  REQUIRE(r.trunk_diameter_mm.has_value());
  CHECK(std::abs(*r.trunk_diameter_mm - gt.trunk_diameter_mm()) <= 5.233);
  REQUIRE(r.branches.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    REQUIRE(r.branches[i].diameter_mm.has_value());
    CHECK(std::abs(*r.branches[i].diameter_mm - 25.0) <= 4.50);
  }
  REQUIRE(r.spacings.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(r.spacings[i].spacing_mm - gt.spacings_mm[i]) <= 13.72);
  CHECK(r.measurement_heights_m.size() == 3);
  for (double res : r.fit_residuals_mm()) CHECK(res >= 0);
}

TEST_CASE("station-difference spacing") {
  const TreeSpec spec = six_branch_tree();
  const auto [cloud, gt] = generate_tree(spec);
  MeasurementConfig cfg;
  cfg.spacing_mode = SpacingMode::kStationDifference;
  const MeasurementReport r = measure_tree(cloud, cfg);
  REQUIRE(r.spacings.size() == 5);
  REQUIRE(r.branches.size() == 6);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& a = r.branches[i];
    const auto& b = r.branches[i + 1];
    CHECK(r.spacings[i].spacing_mm == doctest::Approx(1000.0 * (b.station_m - a.station_m)).epsilon(1e-12));
    // Attachments lie on the branch surface, so stations differ from the
    // axis stations by at most one branch diameter.
    const double truth = 1000.0 * (spec.branch_stations[i + 1] - spec.branch_stations[i]);
    CHECK(std::abs(r.spacings[i].spacing_mm - truth) < 25.0);
  }
}

TEST_CASE("a bare trunk reports a diameter and no branches") {
  TreeSpec spec;
  spec.point_count = 20000;
  const auto [cloud, gt] = generate_tree(spec);
  const auto r = measure_tree(cloud);
  REQUIRE(r.trunk_diameter_mm.has_value());
  CHECK(std::abs(*r.trunk_diameter_mm - gt.trunk_diameter_mm()) < 0.5);
  CHECK(r.branches.empty());
  CHECK(r.spacings.empty());
  CHECK(r.branch_diameters_mm().empty());
}

TEST_CASE("measurement is deterministic and survives a JSON round trip") {
  const auto [cloud, gt] = generate_tree(six_branch_tree(2.0));
  const auto a = measure_tree(cloud);
  const auto b = measure_tree(cloud);
  CHECK(to_json(a).dump() == to_json(b).dump());
  const auto back = measurement_report_from_json(to_json(a));
  CHECK(to_json(back).dump() == to_json(a).dump());
  const auto j = to_json(a);
  CHECK(j.contains("trunk_diameter_mm"));
  CHECK(j.contains("branch_spacings_mm"));
  CHECK(j.contains("measurement_heights_m"));
}

TEST_CASE("diameters are invariant under rigid motion") {
  const auto [cloud, gt] = generate_tree(six_branch_tree(1.0));
  const auto ref = measure_tree(cloud);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    const RigidTransform g = orchard::testing::random_perturbation(rng, 0.5, 1.0);
    MeasurementConfig cfg;
    cfg.up = g.rotation() * Vec3::UnitZ();
    const auto moved = measure_tree(apply_transform(g, cloud), cfg);
    CHECK(std::abs(*moved.trunk_diameter_mm - *ref.trunk_diameter_mm) < 0.1);
    REQUIRE(moved.branches.size() == ref.branches.size());
    for (std::size_t i = 0; i < ref.branches.size(); ++i) {
      CHECK(std::abs(*moved.branches[i].diameter_mm - *ref.branches[i].diameter_mm) < 0.1);
    }
    REQUIRE(moved.spacings.size() == ref.branches.size() - 1);
  }
}

TEST_CASE("failed branch fits stay in the report") {
  // A branch stub too short to reach the two-inch slab.
  LabeledPointCloud c = cylinder(20000, 0.04, 1.0, 360, 0, 9);
  for (int i = 0; i < 400; ++i) {
    const double a = 2 * std::numbers::pi * i / 40.0;
    c.push_back(Vec3(0.040 + 0.0005 * (i / 40), 0.01 * std::cos(a), 0.5 + 0.01 * std::sin(a)), PointLabel::kBranch);
  }
  const auto r = measure_tree(c);
  REQUIRE(r.branches.size() == 1);
  CHECK_FALSE(r.branches[0].diameter_mm.has_value());
  CHECK(r.branches[0].error.has_value());
  CHECK(r.trunk_diameter_mm.has_value());
}

}  // TEST_SUITE
