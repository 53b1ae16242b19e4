// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <tuple>

#include "orchard/error.hpp"
#include "orchard/parallel.hpp"
#include "orchard/registration.hpp"
#include "orchard/synth.hpp"
#include "test_support.hpp"

using namespace orchard;
using orchard::testing::random_perturbation;
using orchard::testing::random_unit;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double angle_deg(const RigidTransform& a, const RigidTransform& b) {
  return rotation_angle((a.inverse() * b).rotation()) / kDeg;
}

double offset_m(const RigidTransform& a, const RigidTransform& b) {
  return (a.translation() - b.translation()).norm();
}

// Smooth, non-symmetric test surface: a wavy sheet with a bump.
LabeledPointCloud wavy_sheet(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::normal_distribution<double> g(0.0, noise > 0 ? noise : 1.0);
  LabeledPointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng), y = u(rng);
    double z = 0.08 * std::sin(6 * x) * std::cos(4 * y) + 0.1 * std::exp(-20 * ((x - 0.2) * (x - 0.2) + y * y));
    if (noise > 0) z += g(rng);
    c.push_back(Vec3(x, y, z), PointLabel::kTrunk);
  }
  return c;
}

TreeSpec dormant_tree(std::uint64_t seed, std::size_t points, double noise_mm) {
  TreeSpec spec;
  spec.trunk_height = 1.5;
  spec.trunk_diameter_base = 90;
  spec.taper = 0.8;
  spec.branch_count = 6;
  spec.branch_stations = {0.35, 0.55, 0.75, 0.95, 1.15, 1.35};
  spec.branch_diameters = {25, 25, 22, 22, 20, 18};
  spec.branch_lengths = {0.5, 0.5, 0.45, 0.45, 0.4, 0.35};
  spec.noise_sigma = noise_mm;
  spec.point_count = points;
  spec.seed = seed;
  return spec;
}

void check_non_increasing(const RegistrationResult& r) {
  for (const auto& h : r.history) CHECK(h.cost_after <= h.cost_before);
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("method names parse and bad names are rejected by value") {
  CHECK(parse_method("icp") == RegistrationMethod::kIcp);
  CHECK(parse_method("gicp") == RegistrationMethod::kGicp);
  CHECK(parse_method("fast_gicp") == RegistrationMethod::kFastGicp);
  CHECK(method_name(RegistrationMethod::kFastGicp) == "fast_gicp");
  CHECK_THROWS_WITH_AS(parse_method("warp"), doctest::Contains("warp"), ValidationError);
}

TEST_CASE("config validation") {
  RegistrationConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.knn_k = 3;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.voxel_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.resolution_schedule = {2.0, -1.0};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("coplanar neighborhoods regularize to the plane model") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  const Vec3 normal = random_unit(rng);
  const Vec3 a = normal.unitOrthogonal();
  const Vec3 b = normal.cross(a);
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.push_back(Vec3(0.3, -0.2, 1.0) + u(rng) * a + u(rng) * b);
  const CovarianceCloud cc = estimate_covariances(pts, 10);
  REQUIRE(cc.size() == pts.size());
  for (const Mat3& c : cc.covariances) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(c);
    CHECK(es.eigenvalues()(0) == doctest::Approx(1e-3).epsilon(1e-9));
    CHECK(es.eigenvalues()(1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(es.eigenvalues()(2) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(std::abs(es.eigenvectors().col(0).dot(normal)) - 1.0) < 1e-6);
    CHECK((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("covariance estimation needs at least k points") {
  const std::vector<Vec3> three{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  CHECK_THROWS_AS(estimate_covariances(three, 4), ValidationError);
  std::vector<Vec3> many(10, Vec3::Zero());
  CHECK_THROWS_AS(estimate_covariances(many, 3), ValidationError);
}

TEST_CASE("raw neighborhood covariances match a brute-force scan") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.1);
  std::vector<Vec3> pts(500);
  for (auto& p : pts) p = Vec3(g(rng), 2 * g(rng), 0.5 * g(rng));
  const int k = 12;
  const auto got = neighborhood_covariances(pts, k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pts.size(); ++j) d.push_back({(pts[j] - pts[i]).squaredNorm(), j});
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    Vec3 mean = Vec3::Zero();
    for (int n = 0; n < k; ++n) mean += pts[d[n].second];
    mean /= k;
    Mat3 c = Mat3::Zero();
    for (int n = 0; n < k; ++n) {
      const Vec3 e = pts[d[n].second] - mean;
      c += e * e.transpose();
    }
    c /= k;
    CHECK((got[i] - c).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("points in one cell collapse to their centroid") {
  CovarianceCloud cc;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.09);
  Vec3 sum = Vec3::Zero();
  for (int i = 0; i < 20; ++i) {
    cc.points.emplace_back(u(rng), u(rng), u(rng));
    cc.covariances.push_back(Mat3::Identity() * 1e-4);
    sum += cc.points.back();
  }
  const auto grid = build_gaussian_voxel_grid(cc, 0.1, 6);
  REQUIRE(grid.size() == 1);
  CHECK(grid.cells()[0].count == 20);
  CHECK((grid.cells()[0].mean - sum / 20.0).norm() < 1e-15);
}

TEST_CASE("two clusters a meter apart give two cells") {
  CovarianceCloud cc;
  for (int i = 0; i < 7; ++i) cc.points.emplace_back(0.02 + 0.005 * i, 0.05, 0.05);
  for (int i = 0; i < 9; ++i) cc.points.emplace_back(1.02 + 0.005 * i, 0.05, 0.05);
  cc.covariances.assign(cc.points.size(), Mat3::Identity());
  const auto grid = build_gaussian_voxel_grid(cc, 0.1, 6);
  REQUIRE(grid.size() == 2);
  CHECK(grid.cells()[0].count == 7);
  CHECK(grid.cells()[1].count == 9);
  CHECK(grid.find(Vec3(0.5, 0.05, 0.05)) == std::nullopt);
  CHECK(grid.find(Vec3(1.01, 0.01, 0.09)) == std::optional<std::size_t>(1));
}

TEST_CASE("voxel grid agrees with a brute-force binning") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.2);
  CovarianceCloud cc;
  for (int i = 0; i < 4000; ++i) cc.points.emplace_back(g(rng), g(rng), g(rng));
  cc.covariances = neighborhood_covariances(cc.points, 8);
  const double vs = 0.07;
  const int min_pts = 5;
  const auto grid = build_gaussian_voxel_grid(cc, vs, min_pts);

  std::map<std::tuple<long, long, long>, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < cc.size(); ++i) {
    const Vec3& p = cc.points[i];
    bins[{static_cast<long>(std::floor(p.x() / vs)), static_cast<long>(std::floor(p.y() / vs)),
          static_cast<long>(std::floor(p.z() / vs))}]
        .push_back(i);
  }
  std::size_t kept_cells = 0, kept_points = 0, grid_points = 0;
  for (const auto& [key, members] : bins) {
    if (members.size() < static_cast<std::size_t>(min_pts)) continue;
    ++kept_cells;
    kept_points += members.size();
    const Vec3 probe = cc.points[members.front()];
    const auto idx = grid.find(probe);
    REQUIRE(idx.has_value());
    const auto& cell = grid.cells()[*idx];
    CHECK(cell.count == members.size());
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
    for (std::size_t m : members) mean += cc.points[m];
    mean /= static_cast<double>(members.size());
    for (std::size_t m : members) {
      const Vec3 e = cc.points[m] - mean;
      cov += cc.covariances[m] + e * e.transpose();
    }
    cov /= static_cast<double>(members.size());
    CHECK((cell.mean - mean).norm() < 1e-12);
    CHECK((cell.cov - cov).cwiseAbs().maxCoeff() < 1e-12);
    const Vec3 lo(std::get<0>(key) * vs, std::get<1>(key) * vs, std::get<2>(key) * vs);
    CHECK((cell.mean.array() >= lo.array() - 1e-12).all());
    CHECK((cell.mean.array() <= lo.array() + vs + 1e-12).all());
  }
  for (const auto& c : grid.cells()) {
    CHECK(c.count >= static_cast<std::size_t>(min_pts));
    grid_points += c.count;
  }
  CHECK(grid.size() == kept_cells);
  CHECK(grid_points == kept_points);
}

TEST_CASE("hand-evaluated Mahalanobis cost of a single pair") {
  CovarianceCloud src, tgt;
  src.points = {Vec3(0, 0, 0)};
  src.covariances = {Mat3::Identity() * 0.005};
  tgt.points = {Vec3(0.1, 0, 0)};
  tgt.covariances = {Mat3::Identity() * 0.005};
  const CostEvaluation c = gicp_cost(src, tgt, RigidTransform::identity(), 0.5);
  CHECK(c.count == 1);
  CHECK(c.cost == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(gicp_cost(src, tgt, RigidTransform::identity(), 0.05).count == 0);
  CHECK(gicp_cost(src, tgt, RigidTransform::identity(), 0.05).cost == 0.0);
}

TEST_CASE("cost vanishes at the true alignment of noise-free clouds") {
  const auto sheet = wavy_sheet(3000, 5);
  std::mt19937_64 rng(5);
  const RigidTransform g = random_perturbation(rng, 0.3, 0.2);
  const CovarianceCloud tgt = estimate_covariances(sheet, 20);
  const CovarianceCloud src = estimate_covariances(apply_transform(g, sheet), 20);
  CHECK(gicp_cost(src, tgt, g.inverse(), 0.05).cost < 1e-9);
  const auto grid = build_gaussian_voxel_grid(tgt, 0.02, 1);
  CovarianceCloud centers;
  for (const auto& c : grid.cells()) {
    centers.points.push_back(g.apply(c.mean));
    centers.covariances.push_back(Mat3::Identity() * 1e-4);
  }
  CHECK(gicp_cost(centers, grid, g.inverse()).cost < 1e-9);
}

TEST_CASE("linearized cost at zero step equals the standalone cost") {
  const auto sheet = wavy_sheet(3000, 6);
  std::mt19937_64 rng(6);
  const RigidTransform pose = random_perturbation(rng, 0.03, 0.01);
  auto tgt = std::make_shared<CovarianceCloud>(estimate_covariances(sheet, 20));
  auto src = std::make_shared<CovarianceCloud>(estimate_covariances(wavy_sheet(2500, 7, 0.002), 20));
  auto target = std::make_shared<PointTarget>(*tgt);

  const auto gicp = make_gicp_objective(src, target, 0.05);
  const auto corr = gicp->correspondences(pose);
  const CostEvaluation ref = gicp_cost(*src, *tgt, pose, 0.05);
  CHECK(corr.size() == ref.count);
  CHECK(std::abs(gicp->linearize(pose, corr).cost - ref.cost) <= 1e-12 * std::max(1.0, ref.cost));
  CHECK(std::abs(gicp->evaluate(pose, corr) - ref.cost) <= 1e-12 * std::max(1.0, ref.cost));

  auto grid = std::make_shared<GaussianVoxelGrid>(build_gaussian_voxel_grid(*tgt, 0.02, 6));
  const auto fast = make_fast_gicp_objective(src, grid);
  const auto fcorr = fast->correspondences(pose);
  const CostEvaluation fref = gicp_cost(*src, *grid, pose);
  CHECK(fcorr.size() == fref.count);
  CHECK(std::abs(fast->linearize(pose, fcorr).cost - fref.cost) <= 1e-12 * std::max(1.0, fref.cost));
}

TEST_CASE("gradient matches finite differences of the cost") {
  const auto sheet = wavy_sheet(1500, 8);
  std::mt19937_64 rng(8);
  const RigidTransform pose = random_perturbation(rng, 0.02, 0.01);
  auto target = std::make_shared<PointTarget>(estimate_covariances(sheet, 20));
  const auto moved = wavy_sheet(1200, 9, 0.003);

  // Isotropic source covariances make the weights independent of rotation,
  // so the cost is exactly the quadratic form being linearized.
  auto src = std::make_shared<CovarianceCloud>();
  src->points = moved.points;
  src->covariances.assign(moved.size(), Mat3::Identity() * 1e-3);
  const auto icp = make_icp_objective(moved.points, target, 0.05);
  const auto gicp = make_gicp_objective(src, target, 0.05);
  for (const Objective* obj : {icp.get(), gicp.get()}) {
    const auto corr = obj->correspondences(pose);
    const Linearization lin = obj->linearize(pose, corr);
    const double h = 1e-6;
    for (int a = 0; a < 6; ++a) {
      Vec6 e = Vec6::Zero();
      e(a) = h;
      const double fp = obj->evaluate(se3_exp(Twist::from_vector(e)) * pose, corr);
      const double fm = obj->evaluate(se3_exp(Twist::from_vector(-e)) * pose, corr);
      const double fd = (fp - fm) / (2 * h);
      // cost = sum d^T W d, so its gradient is twice J^T W d.
      CHECK(fd == doctest::Approx(2.0 * lin.gradient(a)).epsilon(1e-5).scale(1e-6 * lin.cost));
    }
  }
}

TEST_CASE("identical clouds converge immediately to the identity") {
  const auto sheet = wavy_sheet(40000, 10, 0.001);
  for (auto m : {RegistrationMethod::kIcp, RegistrationMethod::kGicp}) {
    CAPTURE(method_name(m));
    RegistrationConfig cfg;
    cfg.method = m;
    const auto r = register_clouds(sheet, sheet, RigidTransform::identity(), cfg);
    CHECK(r.converged);
    CHECK(r.iterations <= 2);
    CHECK((r.transform.matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE(r.fitness.has_value());
    CHECK(*r.fitness == 0.0);
    CHECK(r.fitness_pairs == sheet.size());
  }
}

// Containing-voxel pairs match each point to its cell mean rather than to
// itself, so the identity is not an exact stationary point of this cost.
TEST_CASE("fast_gicp on identical clouds stays at the identity") {
  const auto sheet = wavy_sheet(40000, 10, 0.001);
  RegistrationConfig cfg;
  cfg.method = RegistrationMethod::kFastGicp;
  const auto r = register_clouds(sheet, sheet, RigidTransform::identity(), cfg);
  CHECK(r.converged);
  CHECK(r.iterations <= 2);
  CHECK((r.transform.matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("dormant tree recovers a five degree, ten centimeter perturbation") {
  set_thread_count(1);
  const auto [target, gt] = generate_tree(dormant_tree(21, 50000, 2.0));
  const auto [source0, gt2] = generate_tree(dormant_tree(22, 50000, 2.0));
  std::mt19937_64 rng(12);
  const RigidTransform pert = random_perturbation(rng, 5.0 * kDeg, 0.1);
  const auto source = apply_transform(pert, source0);
  const RigidTransform truth = pert.inverse();
  for (auto m : {RegistrationMethod::kGicp, RegistrationMethod::kFastGicp}) {
    CAPTURE(method_name(m));
    RegistrationConfig cfg;
    cfg.method = m;
    cfg.resolution_schedule = {10, 5, 2.5, 1};
    const auto r = register_clouds(source, target, RigidTransform::identity(), cfg);
    CHECK(angle_deg(r.transform, truth) < 0.5);
    CHECK(offset_m(r.transform, truth) < 0.005);
    check_non_increasing(r);
    CHECK(RigidTransform::is_rotation(r.transform.rotation()));
  }
}

TEST_CASE("fast_gicp and gicp agree on fully overlapping clouds") {
  const auto target = wavy_sheet(8000, 13, 0.001);
  std::mt19937_64 rng(13);
  const RigidTransform pert = random_perturbation(rng, 2.0 * kDeg, 0.01);
  const auto source = apply_transform(pert, wavy_sheet(8000, 14, 0.001));
  RegistrationConfig cfg;
  cfg.method = RegistrationMethod::kGicp;
  const auto a = register_clouds(source, target, RigidTransform::identity(), cfg);
  cfg.method = RegistrationMethod::kFastGicp;
  const auto b = register_clouds(source, target, RigidTransform::identity(), cfg);
  CHECK(angle_deg(a.transform, b.transform) < 1.0);
  CHECK(offset_m(a.transform, b.transform) < 0.01);
  check_non_increasing(a);
  check_non_increasing(b);
}

TEST_CASE("argmin is invariant under a common rigid motion") {
  const auto target = wavy_sheet(4000, 15, 0.001);
  std::mt19937_64 rng(15);
  const auto source = apply_transform(random_perturbation(rng, 3.0 * kDeg, 0.02), wavy_sheet(4000, 16, 0.001));
  const RigidTransform g = random_perturbation(rng, 1.0, 0.5);
  const RigidTransform init = random_perturbation(rng, 0.5 * kDeg, 0.002);
  // The voxel grid is tied to the frame axes, so only the point-pairing
  // methods carry this symmetry.
  for (auto m : {RegistrationMethod::kIcp, RegistrationMethod::kGicp}) {
    CAPTURE(method_name(m));
    RegistrationConfig cfg;
    cfg.method = m;
    cfg.translation_eps = 1e-9;
    cfg.rotation_eps = 1e-9;
    cfg.max_iterations = 200;
    const auto r = register_clouds(source, target, init, cfg);
    const auto rg = register_clouds(apply_transform(g, source), apply_transform(g, target),
                                    g * init * g.inverse(), cfg);
    const RigidTransform expected = g * r.transform * g.inverse();
    CHECK((rg.transform.matrix() - expected.matrix()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("trunk-only mode ignores other labels") {
  auto target = wavy_sheet(3000, 17, 0.001);
  auto source = target;
  // Relabel and displace a block of source points so they would bias a
  // label-agnostic solve.
  for (std::size_t i = 0; i < source.size(); i += 3) {
    source.labels[i] = PointLabel::kClutter;
    source.points[i] += Vec3(0.0, 0.0, 0.02);
  }
  RegistrationConfig cfg;
  cfg.method = RegistrationMethod::kGicp;
  cfg.trunk_only = true;
  const auto r = register_clouds(source, target, RigidTransform::identity(), cfg);
  CHECK((r.transform.matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(r.fitness_pairs == source.with_label(PointLabel::kTrunk).size());
}

TEST_CASE("registration failure modes") {
  const auto sheet = wavy_sheet(500, 18);
  RegistrationConfig cfg;
  CHECK_THROWS_AS(register_clouds(LabeledPointCloud{}, sheet, RigidTransform{}, cfg), ValidationError);
  LabeledPointCloud tiny;
  for (int i = 0; i < 10; ++i) tiny.push_back(sheet.points[i], PointLabel::kTrunk);
  CHECK_THROWS_AS(register_clouds(tiny, sheet, RigidTransform{}, cfg), ValidationError);
  // Far apart: no correspondences at all.
  const auto far = apply_transform(RigidTransform::from_translation(Vec3(5, 0, 0)), sheet);
  for (auto m : {RegistrationMethod::kIcp, RegistrationMethod::kGicp, RegistrationMethod::kFastGicp}) {
    cfg.method = m;
    CHECK_THROWS_AS(register_clouds(far, sheet, RigidTransform{}, cfg), NonConvergentError);
  }
  cfg.trunk_only = true;
  auto branchy = sheet;
  for (auto& l : branchy.labels) l = PointLabel::kBranch;
  CHECK_THROWS_AS(register_clouds(branchy, sheet, RigidTransform{}, cfg), ValidationError);
}

TEST_CASE("single-threaded solves are bit-identical and threads agree closely") {
  const auto target = wavy_sheet(5000, 19, 0.001);
  std::mt19937_64 rng(19);
  const auto source = apply_transform(random_perturbation(rng, 2.0 * kDeg, 0.01), wavy_sheet(5000, 20, 0.001));
  RegistrationConfig cfg;
  cfg.method = RegistrationMethod::kGicp;
  set_thread_count(1);
  const auto a = register_clouds(source, target, RigidTransform::identity(), cfg);
  const auto b = register_clouds(source, target, RigidTransform::identity(), cfg);
  CHECK(a.transform.matrix() == b.transform.matrix());
  CHECK(a.final_cost == b.final_cost);
  set_thread_count(4);
  const auto c = register_clouds(source, target, RigidTransform::identity(), cfg);
  set_thread_count(1);
  CHECK(std::abs(c.final_cost - a.final_cost) <= 1e-9 * std::max(1.0, a.final_cost));
}

}  // TEST_SUITE
