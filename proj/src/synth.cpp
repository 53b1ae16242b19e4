// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "orchard/error.hpp"
#include "orchard/evaluation.hpp"
#include "orchard/parallel.hpp"
#include "orchard/spatial.hpp"

namespace orchard {

using nlohmann::json;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& d) {
  const Vec3 helper = std::abs(d.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 e1 = d.cross(helper).normalized();
  return {e1, d.cross(e1)};
}

// Tree-frame solids.
struct Cone {
  double r0, slope, height;  // r(z) = r0 + slope * z on [0, height]

  bool contains(const Vec3& p) const {
    if (p.z() < 0 || p.z() > height) return false;
    const double r = r0 + slope * p.z();
    return p.x() * p.x() + p.y() * p.y() < r * r;
  }
};

struct Tube {
  Vec3 base;   // on the trunk axis
  Vec3 dir;    // unit
  double radius;
  double length;  // from base to tip
  PointLabel label;

  bool contains(const Vec3& p) const {
    const Vec3 w = p - base;
    const double t = w.dot(dir);
    if (t < 0 || t > length) return false;
    return (w - t * dir).squaredNorm() < radius * radius;
  }
};

struct Scene {
  Cone trunk;
  std::vector<Tube> branches;

  bool buried(const Vec3& p, int skip_branch, bool skip_trunk) const {
    if (!skip_trunk && trunk.contains(p)) return true;
    for (int j = 0; j < static_cast<int>(branches.size()); ++j) {
      if (j != skip_branch && branches[static_cast<std::size_t>(j)].contains(p)) return true;
    }
    return false;
  }
};

Scene build_scene(const TreeSpec& spec) {
  Scene s;
  const double r0 = spec.trunk_diameter_base / 2000.0;
  s.trunk = {r0, (spec.taper - 1.0) * r0 / spec.trunk_height, spec.trunk_height};
  for (int i = 0; i < spec.branch_count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    s.branches.push_back({Vec3(0, 0, spec.branch_stations[u]), spec.branch_direction(i),
                          spec.branch_diameters[u] / 2000.0,
                          spec.branch_exit_param(i) + spec.branch_lengths[u], PointLabel::kBranch});
  }
  return s;
}

// Smallest root of a t^2 + b t + c = 0 above t_min that passes `accept`.
template <typename Accept>
std::optional<double> first_root(double a, double b, double c, double t_min, Accept accept) {
  double roots[2];
  int n = 0;
  if (std::abs(a) < 1e-14) {
    if (std::abs(b) < 1e-14) return std::nullopt;
    roots[n++] = -c / b;
  } else {
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double q = -0.5 * (b + std::copysign(sq, b));
    double t1 = q / a;
    double t2 = q != 0 ? c / q : t1;
    if (t1 > t2) std::swap(t1, t2);
    roots[n++] = t1;
    roots[n++] = t2;
  }
  for (int i = 0; i < n; ++i) {
    if (roots[i] > t_min && accept(roots[i])) return roots[i];
  }
  return std::nullopt;
}

bool misses_sphere(const Vec3& o, const Vec3& d, const Vec3& center, double radius) {
  const Vec3 w = center - o;
  const double t = std::max(0.0, w.dot(d) / d.squaredNorm());
  return (w - t * d).squaredNorm() > radius * radius;
}

std::vector<double> vec_or_empty(const json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<std::vector<double>>() : std::vector<double>{};
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

// ---------------------------------------------------------------------------
// TreeSpec

void TreeSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("tree spec: " + m); };
  if (!(trunk_height > 0)) fail("trunk_height_m must be positive");
  if (!(trunk_diameter_base > 0)) fail("trunk_diameter_base_mm must be positive");
  if (!(taper > 0 && taper <= 1)) fail("taper must lie in (0, 1]");
  if (branch_count < 0) fail("branch_count must be non-negative");
  const auto n = static_cast<std::size_t>(branch_count);
  auto check_len = [&](const std::vector<double>& v, const char* name) {
    if (v.size() != n) {
      fail(std::string(name) + " has " + std::to_string(v.size()) + " entries, expected branch_count = " +
           std::to_string(n));
    }
  };
  check_len(branch_stations, "branch_stations_m");
  check_len(branch_diameters, "branch_diameters_mm");
  check_len(branch_lengths, "branch_lengths_m");
  if (!branch_azimuths_deg.empty()) check_len(branch_azimuths_deg, "branch_azimuths_deg");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(branch_stations[i] > 0 && branch_stations[i] < trunk_height))
      fail("branch_stations_m[" + std::to_string(i) + "] must lie inside the trunk height");
    if (i > 0 && !(branch_stations[i] > branch_stations[i - 1]))
      fail("branch_stations_m must be strictly increasing");
    if (!(branch_diameters[i] > 0)) fail("branch_diameters_mm[" + std::to_string(i) + "] must be positive");
    if (!(branch_lengths[i] > 0)) fail("branch_lengths_m[" + std::to_string(i) + "] must be positive");
  }
  if (!(branch_pitch_deg > -90 && branch_pitch_deg < 90)) fail("branch_pitch_deg must lie in (-90, 90)");
  if (!(noise_sigma >= 0)) fail("noise_sigma_mm must be non-negative");
  if (point_count == 0) fail("point_count must be positive");
}

double TreeSpec::trunk_radius_at(double z) const {
  const double r0 = trunk_diameter_base / 2000.0;
  return r0 + (taper - 1.0) * r0 * z / trunk_height;
}

double TreeSpec::azimuth_deg(int i) const {
  if (!branch_azimuths_deg.empty()) return branch_azimuths_deg.at(static_cast<std::size_t>(i));
  return i % 2 == 0 ? 0.0 : 180.0;
}

Vec3 TreeSpec::branch_direction(int i) const {
  const double az = azimuth_deg(i) * kDegToRad;
  const double p = branch_pitch_deg * kDegToRad;
  return {std::cos(p) * std::cos(az), std::cos(p) * std::sin(az), std::sin(p)};
}

double TreeSpec::branch_exit_param(int i) const {
  const double s = branch_stations.at(static_cast<std::size_t>(i));
  const double p = branch_pitch_deg * kDegToRad;
  const double slope = (taper - 1.0) * trunk_diameter_base / 2000.0 / trunk_height;
  return trunk_radius_at(s) / (std::cos(p) - slope * std::sin(p));
}

json to_json(const TreeSpec& s) {
  json j;
  j["trunk_height_m"] = s.trunk_height;
  j["trunk_diameter_base_mm"] = s.trunk_diameter_base;
  j["taper"] = s.taper;
  j["branch_count"] = s.branch_count;
  j["branch_stations_m"] = s.branch_stations;
  j["branch_diameters_mm"] = s.branch_diameters;
  j["branch_lengths_m"] = s.branch_lengths;
  j["branch_pitch_deg"] = s.branch_pitch_deg;
  j["branch_azimuths_deg"] = s.branch_azimuths_deg;
  j["noise_sigma_mm"] = s.noise_sigma;
  j["seed"] = s.seed;
  j["point_count"] = s.point_count;
  j["pose"] = s.pose.row_major();
  return j;
}

TreeSpec tree_spec_from_json(const json& j) {
  static const std::vector<std::string> known{
      "trunk_height_m",    "trunk_diameter_base_mm", "taper",          "branch_count",
      "branch_stations_m", "branch_diameters_mm",    "branch_lengths_m", "branch_pitch_deg",
      "branch_azimuths_deg", "noise_sigma_mm",       "seed",           "point_count",
      "pose"};
  if (!j.is_object()) throw ValidationError("tree spec: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ValidationError("tree spec: unknown key '" + key + "'");
  }
  TreeSpec s;
  try {
    s.trunk_height = j.value("trunk_height_m", s.trunk_height);
    s.trunk_diameter_base = j.value("trunk_diameter_base_mm", s.trunk_diameter_base);
    s.taper = j.value("taper", s.taper);
    s.branch_stations = vec_or_empty(j, "branch_stations_m");
    s.branch_diameters = vec_or_empty(j, "branch_diameters_mm");
    s.branch_lengths = vec_or_empty(j, "branch_lengths_m");
    s.branch_azimuths_deg = vec_or_empty(j, "branch_azimuths_deg");
    s.branch_count = j.value("branch_count", static_cast<int>(s.branch_stations.size()));
    s.branch_pitch_deg = j.value("branch_pitch_deg", s.branch_pitch_deg);
    s.noise_sigma = j.value("noise_sigma_mm", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
    s.point_count = j.value("point_count", s.point_count);
    if (j.contains("pose")) s.pose = RigidTransform::from_row_major(j.at("pose").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("tree spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Ground truth

double GroundTruth::trunk_diameter_mm() const {
  if (trunk_diameters_mm.empty()) throw ValidationError("ground truth has no trunk stations");
  std::vector<double> v = trunk_diameters_mm;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

GroundTruth ground_truth_of(const TreeSpec& spec, const std::vector<double>& fractions) {
  spec.validate();
  GroundTruth gt;
  gt.applied_transform = spec.pose;
  gt.trunk_station_fractions = fractions;
  for (double f : fractions) gt.trunk_diameters_mm.push_back(2000.0 * spec.trunk_radius_at(f * spec.trunk_height));
  const Mat3& r = spec.pose.rotation();
  for (int i = 0; i < spec.branch_count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const Vec3 d = spec.branch_direction(i);
    const Vec3 exit = Vec3(0, 0, spec.branch_stations[u]) + spec.branch_exit_param(i) * d;
    gt.branch_diameters_mm.push_back(spec.branch_diameters[u]);
    gt.branch_attachments.push_back(spec.pose.apply(exit));
    gt.branch_directions.push_back(r * d);
    gt.branch_offset_points.push_back(spec.pose.apply(exit + kTwoInchesM * d));
  }
  for (std::size_t i = 1; i < gt.branch_offset_points.size(); ++i) {
    gt.spacings_mm.push_back(1000.0 * (gt.branch_offset_points[i] - gt.branch_offset_points[i - 1]).norm());
  }
  return gt;
}

json to_json(const GroundTruth& gt) {
  json j;
  j["trunk_station_fractions"] = gt.trunk_station_fractions;
  j["trunk_diameters_mm"] = gt.trunk_diameters_mm;
  j["trunk_diameter_mm"] = gt.trunk_diameters_mm.empty() ? json(nullptr) : json(gt.trunk_diameter_mm());
  j["branch_diameters_mm"] = gt.branch_diameters_mm;
  j["branch_attachments_m"] = json::array();
  j["branch_directions"] = json::array();
  j["branch_offset_points_m"] = json::array();
  for (std::size_t i = 0; i < gt.branch_attachments.size(); ++i) {
    j["branch_attachments_m"].push_back(vec3_json(gt.branch_attachments[i]));
    j["branch_directions"].push_back(vec3_json(gt.branch_directions[i]));
    j["branch_offset_points_m"].push_back(vec3_json(gt.branch_offset_points[i]));
  }
  j["spacings_mm"] = gt.spacings_mm;
  j["applied_transform"] = gt.applied_transform.row_major();
  return j;
}

GroundTruth ground_truth_from_json(const json& j) {
  try {
    GroundTruth gt;
    gt.trunk_station_fractions = j.at("trunk_station_fractions").get<std::vector<double>>();
    gt.trunk_diameters_mm = j.at("trunk_diameters_mm").get<std::vector<double>>();
    gt.branch_diameters_mm = j.at("branch_diameters_mm").get<std::vector<double>>();
    for (const auto& v : j.at("branch_attachments_m")) gt.branch_attachments.push_back(json_vec3(v));
    for (const auto& v : j.at("branch_directions")) gt.branch_directions.push_back(json_vec3(v));
    for (const auto& v : j.at("branch_offset_points_m")) gt.branch_offset_points.push_back(json_vec3(v));
    gt.spacings_mm = j.at("spacings_mm").get<std::vector<double>>();
    gt.applied_transform = RigidTransform::from_row_major(j.at("applied_transform").get<std::vector<double>>());
    const std::size_t n = gt.branch_diameters_mm.size();
    if (gt.branch_attachments.size() != n || gt.branch_offset_points.size() != n ||
        gt.branch_directions.size() != n || gt.spacings_mm.size() != (n > 0 ? n - 1 : 0)) {
      throw ValidationError("ground truth: branch arrays disagree in length");
    }
    return gt;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("ground truth: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sampling

std::pair<LabeledPointCloud, GroundTruth> generate_tree(const TreeSpec& spec) {
  spec.validate();
  const Scene scene = build_scene(spec);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma / 1000.0);
  auto jitter = [&]() { return spec.noise_sigma > 0 ? noise(rng) : 0.0; };

  const double r0 = scene.trunk.r0;
  const double r1 = r0 * spec.taper;
  const double h = spec.trunk_height;
  std::vector<double> areas{std::numbers::pi * (r0 + r1) * std::hypot(h, r0 - r1)};
  for (int i = 0; i < spec.branch_count; ++i) {
    areas.push_back(2.0 * std::numbers::pi * scene.branches[static_cast<std::size_t>(i)].radius *
                    spec.branch_lengths[static_cast<std::size_t>(i)]);
  }
  double total_area = 0.0;
  for (double a : areas) total_area += a;
  std::vector<std::size_t> quota(areas.size());
  std::size_t assigned = 0;
  for (std::size_t i = 1; i < areas.size(); ++i) {
    quota[i] = static_cast<std::size_t>(std::floor(static_cast<double>(spec.point_count) * areas[i] / total_area));
    assigned += quota[i];
  }
  quota[0] = spec.point_count - assigned;

  LabeledPointCloud cloud;
  cloud.reserve(spec.point_count);
  const std::size_t max_draws_per_point = 1000;

  // Trunk: z from the inverse CDF of the radius-weighted height density.
  const double slope = scene.trunk.slope;
  for (std::size_t accepted = 0, draws = 0; accepted < quota[0]; ++draws) {
    if (draws > max_draws_per_point * (quota[0] + 1)) throw ValidationError("tree spec: trunk surface is fully buried");
    const double u = unit(rng);
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    const double target = u * (r0 * h + 0.5 * slope * h * h);
    const double z = std::abs(slope) < 1e-15 ? target / r0
                                             : (-r0 + std::sqrt(r0 * r0 + 2.0 * slope * target)) / slope;
    const double rad = r0 + slope * z;
    const Vec3 surface(rad * std::cos(theta), rad * std::sin(theta), z);
    if (scene.buried(surface, -1, true)) continue;
    const double rn = rad + jitter();
    cloud.push_back(Vec3(rn * std::cos(theta), rn * std::sin(theta), z), PointLabel::kTrunk);
    ++accepted;
  }

  for (int i = 0; i < spec.branch_count; ++i) {
    const Tube& tube = scene.branches[static_cast<std::size_t>(i)];
    const auto [e1, e2] = perpendicular_basis(tube.dir);
    const std::size_t q = quota[static_cast<std::size_t>(i) + 1];
    for (std::size_t accepted = 0, draws = 0; accepted < q; ++draws) {
      if (draws > max_draws_per_point * (q + 1))
        throw ValidationError("tree spec: branch " + std::to_string(i) + " is fully buried");
      const double t = tube.length * unit(rng);
      const double phi = 2.0 * std::numbers::pi * unit(rng);
      const Vec3 radial = std::cos(phi) * e1 + std::sin(phi) * e2;
      const Vec3 axis_point = tube.base + t * tube.dir;
      const Vec3 surface = axis_point + tube.radius * radial;
      if (scene.buried(surface, i, false)) continue;
      cloud.push_back(axis_point + (tube.radius + jitter()) * radial, PointLabel::kBranch);
      ++accepted;
    }
  }

  if (!spec.pose.matrix().isIdentity(0.0)) {
    for (auto& p : cloud.points) p = spec.pose.apply(p);
  }
  return {std::move(cloud), ground_truth_of(spec)};
}

// ---------------------------------------------------------------------------
// Rendering

std::pair<DepthImage, MaskImage> render_depth_frame(const TreeSpec& spec, const RigidTransform& pose,
                                                    const CameraIntrinsics& k) {
  spec.validate();
  k.validate();
  const Scene scene = build_scene(spec);
  const RigidTransform cam_to_tree = spec.pose.inverse() * pose;
  const Vec3 o = cam_to_tree.translation();
  const Mat3& rot = cam_to_tree.rotation();
  if (scene.buried(o, -1, false)) throw ValidationError("render: camera lies inside the tree geometry");

  const Cone& cone = scene.trunk;
  const Vec3 trunk_center(0, 0, 0.5 * cone.height);
  const double trunk_bound = std::hypot(0.5 * cone.height, std::max(cone.r0, cone.r0 + cone.slope * cone.height));
  std::vector<std::pair<Vec3, double>> branch_bounds;
  for (const Tube& t : scene.branches) {
    branch_bounds.emplace_back(t.base + 0.5 * t.length * t.dir, std::hypot(0.5 * t.length, t.radius));
  }

  DepthImage depth(k.width, k.height);
  MaskImage mask(k.width, k.height);
  parallel_for(static_cast<std::size_t>(k.height), [&](std::size_t v0, std::size_t v1) {
    for (std::size_t v = v0; v < v1; ++v) {
      for (int u = 0; u < k.width; ++u) {
        const Vec3 ray_cam((u - k.cx) / k.fx, (static_cast<double>(v) - k.cy) / k.fy, 1.0);
        const Vec3 d = rot * ray_cam;
        double best = std::numeric_limits<double>::infinity();
        PointLabel label = PointLabel::kBackground;

        if (!misses_sphere(o, d, trunk_center, trunk_bound)) {
          const double m = cone.slope;
          const double rz = cone.r0 + m * o.z();
          const double a = d.x() * d.x() + d.y() * d.y() - m * m * d.z() * d.z();
          const double b = 2.0 * (o.x() * d.x() + o.y() * d.y() - m * d.z() * rz);
          const double c = o.x() * o.x() + o.y() * o.y() - rz * rz;
          const auto hit = first_root(a, b, c, 0.0, [&](double t) {
            const double z = o.z() + t * d.z();
            return z >= 0 && z <= cone.height;
          });
          if (hit && *hit < best) {
            best = *hit;
            label = PointLabel::kTrunk;
          }
        }
        for (std::size_t j = 0; j < scene.branches.size(); ++j) {
          const Tube& tube = scene.branches[j];
          if (misses_sphere(o, d, branch_bounds[j].first, branch_bounds[j].second)) continue;
          const Vec3 w = o - tube.base;
          const Vec3 wp = w - w.dot(tube.dir) * tube.dir;
          const Vec3 dp = d - d.dot(tube.dir) * tube.dir;
          const auto hit = first_root(dp.squaredNorm(), 2.0 * wp.dot(dp), wp.squaredNorm() - tube.radius * tube.radius,
                                      0.0, [&](double t) {
                                        const double s = (w + t * d).dot(tube.dir);
                                        return s >= 0 && s <= tube.length;
                                      });
          if (hit && *hit < best) {
            best = *hit;
            label = tube.label;
          }
        }
        if (!std::isfinite(best)) continue;
        const double raw = std::round(best / k.depth_scale);
        if (raw < 1 || raw > 65535) continue;
        depth.at(u, static_cast<int>(v)) = static_cast<std::uint16_t>(raw);
        mask.at(u, static_cast<int>(v)) = static_cast<std::uint8_t>(label);
      }
    }
  });
  return {std::move(depth), std::move(mask)};
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = target - eye;
  if (forward.norm() < 1e-12) throw ValidationError("look_at: eye and target coincide");
  const Vec3 f = forward.normalized();
  const Vec3 side = f.cross(up);
  if (side.norm() < 1e-9) throw ValidationError("look_at: view direction is parallel to up");
  const Vec3 right = side.normalized();
  const Vec3 down = f.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return RigidTransform(r, eye);
}

std::vector<RigidTransform> capture_poses(const TreeSpec& spec, int n, double distance) {
  if (n <= 0) throw ValidationError("capture_poses: frame count must be positive");
  if (!(distance > 0)) throw ValidationError("capture_poses: distance must be positive");
  std::vector<RigidTransform> poses;
  for (int i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.5 : 0.2 + 0.65 * static_cast<double>(i) / (n - 1);
    const double z = frac * spec.trunk_height;
    const double side = i % 2 == 0 ? -1.0 : 1.0;
    const double x = i % 4 < 2 ? 0.15 : -0.15;
    poses.push_back(spec.pose * look_at(Vec3(x, side * distance, z), Vec3(x, 0.0, z)));
  }
  return poses;
}

std::vector<RigidTransform> orbit_poses(const TreeSpec& spec, int n, double distance, double height_frac,
                                        double start_deg, double arc_deg) {
  if (n <= 0) throw ValidationError("orbit_poses: frame count must be positive");
  if (!(distance > 0)) throw ValidationError("orbit_poses: distance must be positive");
  const double z = height_frac * spec.trunk_height;
  std::vector<RigidTransform> poses;
  for (int i = 0; i < n; ++i) {
    const double az = (start_deg + (n == 1 ? 0.0 : arc_deg * i / (n - 1))) * kDegToRad;
    const Vec3 eye(distance * std::cos(az), distance * std::sin(az), z);
    poses.push_back(spec.pose * look_at(eye, Vec3(0.0, 0.0, z)));
  }
  return poses;
}

std::pair<Vec3, Vec3> tree_bounds(const TreeSpec& spec, double margin) {
  spec.validate();
  const Scene scene = build_scene(spec);
  Vec3 lo(-scene.trunk.r0, -scene.trunk.r0, 0.0);
  Vec3 hi(scene.trunk.r0, scene.trunk.r0, spec.trunk_height);
  for (const Tube& t : scene.branches) {
    const Vec3 tip = t.base + t.length * t.dir;
    lo = lo.cwiseMin(tip - Vec3::Constant(t.radius));
    hi = hi.cwiseMax(tip + Vec3::Constant(t.radius));
  }
  Vec3 wlo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 whi = -wlo;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
    const Vec3 w = spec.pose.apply(corner);
    wlo = wlo.cwiseMin(w);
    whi = whi.cwiseMax(w);
  }
  return {wlo - Vec3::Constant(margin), whi + Vec3::Constant(margin)};
}

// ---------------------------------------------------------------------------
// Canopy season

LabeledPointCloud make_canopy_variant(const LabeledPointCloud& cloud, const CanopyOptions& opt) {
  if (!(opt.keep_branch_frac >= 0 && opt.keep_branch_frac <= 1))
    throw ValidationError("canopy: keep_branch_frac must lie in [0, 1]");
  if (!(opt.clutter_density >= 0)) throw ValidationError("canopy: clutter_density must be non-negative");
  if (opt.trunk_bands <= 0) throw ValidationError("canopy: trunk_bands must be positive");
  if (!(opt.min_sector_frac >= 0 && opt.min_sector_frac <= opt.max_sector_frac && opt.max_sector_frac <= 1))
    throw ValidationError("canopy: sector fractions must satisfy 0 <= min <= max <= 1");
  cloud.validate();
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const LabeledPointCloud trunk = cloud.with_label(PointLabel::kTrunk);
  std::vector<bool> drop(cloud.size(), false);
  if (trunk.size() >= 3) {
    const PrincipalAxes pa = principal_axes(trunk.points);
    const Vec3 axis = pa.eigenvectors.col(0).normalized();
    const auto [e1, e2] = perpendicular_basis(axis);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : trunk.points) {
      const double s = (p - pa.centroid).dot(axis);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    std::vector<std::pair<double, double>> sectors;  // (start rad, width rad) per band
    for (int b = 0; b < opt.trunk_bands; ++b) {
      const double frac = opt.min_sector_frac + (opt.max_sector_frac - opt.min_sector_frac) * unit(rng);
      sectors.emplace_back(2.0 * std::numbers::pi * unit(rng), 2.0 * std::numbers::pi * frac);
    }
    const double band_h = (hi - lo) / opt.trunk_bands;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (cloud.labels[i] != PointLabel::kTrunk) continue;
      const Vec3 w = cloud.points[i] - pa.centroid;
      const double s = w.dot(axis);
      const int band = band_h > 0 ? std::clamp(static_cast<int>((s - lo) / band_h), 0, opt.trunk_bands - 1) : 0;
      const auto [start, width] = sectors[static_cast<std::size_t>(band)];
      double rel = std::atan2(w.dot(e2), w.dot(e1)) - start;
      rel = std::fmod(rel + 4.0 * std::numbers::pi, 2.0 * std::numbers::pi);
      if (rel < width) drop[i] = true;
    }
  }

  std::vector<std::size_t> branch_idx;
  std::vector<Vec3> branch_pts;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] == PointLabel::kBranch) {
      branch_idx.push_back(i);
      branch_pts.push_back(cloud.points[i]);
    }
  }
  Vec3 crown_lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 crown_hi = -crown_lo;
  const std::vector<Vec3>& crown_src = branch_pts.empty() ? cloud.points : branch_pts;
  for (const auto& p : crown_src) {
    crown_lo = crown_lo.cwiseMin(p);
    crown_hi = crown_hi.cwiseMax(p);
  }
  if (!branch_pts.empty()) {
    auto clusters = euclidean_clusters(branch_pts, opt.link_radius, 1);
    std::vector<std::size_t> order(clusters.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const auto keep = static_cast<std::size_t>(std::llround(opt.keep_branch_frac * static_cast<double>(clusters.size())));
    std::vector<bool> keep_cluster(clusters.size(), false);
    for (std::size_t i = 0; i < keep; ++i) keep_cluster[order[i]] = true;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      if (keep_cluster[c]) continue;
      for (std::size_t m : clusters[c]) drop[branch_idx[m]] = true;
    }
  }

  LabeledPointCloud out;
  out.frame_id = cloud.frame_id;
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!drop[i]) out.push_back(cloud.points[i], cloud.labels[i]);
  }
  if (opt.clutter_density > 0 && !crown_src.empty()) {
    const Vec3 size = crown_hi - crown_lo;
    const auto count = static_cast<std::size_t>(std::llround(opt.clutter_density * size.prod()));
    for (std::size_t i = 0; i < count; ++i) {
      const double x = unit(rng);
      const double y = unit(rng);
      const double z = unit(rng);
      out.push_back(crown_lo + Vec3(x, y, z).cwiseProduct(size), PointLabel::kClutter);
    }
  }
  return out;
}

LabeledPointCloud make_canopy_variant(const LabeledPointCloud& cloud, double keep_branch_frac,
                                      double clutter_density, std::uint64_t seed) {
  CanopyOptions opt;
  opt.keep_branch_frac = keep_branch_frac;
  opt.clutter_density = clutter_density;
  opt.seed = seed;
  return make_canopy_variant(cloud, opt);
}

// ---------------------------------------------------------------------------
// Comparison against ground truth

namespace {

void refresh(ErrorSummary& e) {
  if (e.truth.empty()) {
    e.rmse.reset();
    e.mae.reset();
    return;
  }
  e.rmse = rmse(e.truth, e.predicted);
  e.mae = mae(e.truth, e.predicted);
}

json summary_json(const ErrorSummary& e, bool inches) {
  json j;
  j["count"] = e.truth.size();
  j["rmse_mm"] = e.rmse ? json(*e.rmse) : json(nullptr);
  j["mae_mm"] = e.mae ? json(*e.mae) : json(nullptr);
  if (inches) {
    j["rmse_in"] = e.rmse ? json(*e.rmse / kMmPerInch) : json(nullptr);
    j["mae_in"] = e.mae ? json(*e.mae / kMmPerInch) : json(nullptr);
  }
  j["truth_mm"] = e.truth;
  j["predicted_mm"] = e.predicted;
  return j;
}

}  // namespace

MeasurementComparison compare_measurements(const MeasurementReport& report, const GroundTruth& gt,
                                           double match_radius) {
  MeasurementComparison c;
  if (report.trunk_diameter_mm && !gt.trunk_diameters_mm.empty()) {
    c.trunk_mm.truth.push_back(gt.trunk_diameter_mm());
    c.trunk_mm.predicted.push_back(*report.trunk_diameter_mm);
  }

  struct Candidate {
    double dist;
    std::size_t r, g;
  };
  std::vector<Candidate> candidates;
  for (std::size_t r = 0; r < report.branches.size(); ++r) {
    for (std::size_t g = 0; g < gt.branch_attachments.size(); ++g) {
      const double d = (report.branches[r].attachment - gt.branch_attachments[g]).norm();
      if (d <= match_radius) candidates.push_back({d, r, g});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.r != b.r) return a.r < b.r;
    return a.g < b.g;
  });
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> match(report.branches.size(), kNone);
  std::vector<bool> gt_used(gt.branch_attachments.size(), false);
  for (const auto& cand : candidates) {
    if (match[cand.r] != kNone || gt_used[cand.g]) continue;
    match[cand.r] = cand.g;
    gt_used[cand.g] = true;
  }
  for (std::size_t r = 0; r < report.branches.size(); ++r) {
    if (match[r] == kNone) {
      ++c.spurious_branches;
      continue;
    }
    ++c.matched_branches;
    if (report.branches[r].diameter_mm) {
      c.branch_mm.truth.push_back(gt.branch_diameters_mm[match[r]]);
      c.branch_mm.predicted.push_back(*report.branches[r].diameter_mm);
    }
  }
  c.missed_branches = gt.branch_attachments.size() - c.matched_branches;

  auto index_of = [&](int id) {
    for (std::size_t r = 0; r < report.branches.size(); ++r)
      if (report.branches[r].id == id) return r;
    return kNone;
  };
  for (const auto& s : report.spacings) {
    const std::size_t a = index_of(s.first);
    const std::size_t b = index_of(s.second);
    if (a == kNone || b == kNone || match[a] == kNone || match[b] == kNone) continue;
    const std::size_t ga = std::min(match[a], match[b]);
    if (std::max(match[a], match[b]) != ga + 1) continue;
    c.spacing_mm.truth.push_back(gt.spacings_mm[ga]);
    c.spacing_mm.predicted.push_back(s.spacing_mm);
  }
  refresh(c.trunk_mm);
  refresh(c.branch_mm);
  refresh(c.spacing_mm);
  return c;
}

void accumulate(MeasurementComparison& total, const MeasurementComparison& part) {
  auto append = [](ErrorSummary& dst, const ErrorSummary& src) {
    dst.truth.insert(dst.truth.end(), src.truth.begin(), src.truth.end());
    dst.predicted.insert(dst.predicted.end(), src.predicted.begin(), src.predicted.end());
    refresh(dst);
  };
  append(total.trunk_mm, part.trunk_mm);
  append(total.branch_mm, part.branch_mm);
  append(total.spacing_mm, part.spacing_mm);
  total.matched_branches += part.matched_branches;
  total.missed_branches += part.missed_branches;
  total.spurious_branches += part.spurious_branches;
}

json to_json(const MeasurementComparison& c) {
  return {{"trunk_diameter", summary_json(c.trunk_mm, false)},
          {"branch_diameter", summary_json(c.branch_mm, false)},
          {"branch_spacing", summary_json(c.spacing_mm, true)},
          {"matched_branches", c.matched_branches},
          {"missed_branches", c.missed_branches},
          {"spurious_branches", c.spurious_branches}};
}

}  // namespace orchard
