// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/measurement.hpp"

#include <Eigen/Geometry>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "orchard/spatial.hpp"

namespace orchard {

using nlohmann::json;

namespace {

std::pair<Vec3, Vec3> plane_basis(const Vec3& dir) {
  const Vec3 helper = std::abs(dir.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = dir.cross(helper).normalized();
  return {e1, dir.cross(e1)};
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(precision);
  ss << v;
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void MeasurementConfig::validate() const {
  if (!(up.norm() > 0)) throw ValidationError("measurement.up must be non-zero");
  if (!(trunk_slab_thickness > 0)) throw ValidationError("measurement.trunk_slab_thickness must be positive");
  if (!(branch_slab_thickness > 0)) throw ValidationError("measurement.branch_slab_thickness must be positive");
  if (!(branch_offset > 0)) throw ValidationError("measurement.branch_offset must be positive");
  if (!(link_radius > 0)) throw ValidationError("measurement.link_radius must be positive");
  if (!(axis_neighborhood > 0)) throw ValidationError("measurement.axis_neighborhood must be positive");
  if (trunk_station_fractions.empty()) throw ValidationError("measurement.trunk_station_fractions must not be empty");
  for (double f : trunk_station_fractions)
    if (!(f >= 0 && f <= 1)) throw ValidationError("measurement.trunk_station_fractions must lie in [0, 1]");
  if (min_slab_points < 3) throw ValidationError("measurement.min_slab_points must be >= 3");
}

Axis estimate_trunk_axis(const LabeledPointCloud& cloud, const MeasurementConfig& cfg) {
  const LabeledPointCloud trunk = cloud.with_label(PointLabel::kTrunk);
  if (trunk.size() < cfg.min_trunk_points) {
    throw FitError("too few trunk points for an axis: " + std::to_string(trunk.size()) + " (need " +
                   std::to_string(cfg.min_trunk_points) + ")");
  }
  const PrincipalAxes pa = principal_axes(trunk.points);
  const double ratio = pa.eigenvalues[1] > 0 ? pa.eigenvalues[0] / pa.eigenvalues[1]
                                            : std::numeric_limits<double>::infinity();
  if (!(ratio >= 2.0)) {
    throw FitError("ambiguous trunk axis: eigenvalue ratio " + fmt(ratio) + " < 2");
  }
  Axis axis;
  axis.point = pa.centroid;
  axis.dir = pa.eigenvectors.col(0).normalized();
  if (axis.dir.dot(cfg.up) < 0) axis.dir = -axis.dir;
  return axis;
}

CircleFit fit_circle_slab(const LabeledPointCloud& cloud, const Axis& axis, double station,
                          double thickness, PointLabel label, const MeasurementConfig& cfg) {
  const Vec3 dir = axis.dir.normalized();
  const auto [e1, e2] = plane_basis(dir);
  const Vec3 plane_origin = axis.point + station * dir;

  std::vector<Eigen::Vector2d> pts;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] != label) continue;
    const Vec3 w = cloud.points[i] - plane_origin;
    if (std::abs(w.dot(dir)) <= 0.5 * thickness) pts.emplace_back(w.dot(e1), w.dot(e2));
  }
  if (pts.size() < cfg.min_slab_points) {
    throw FitError("slab at station " + fmt(station, 4) + " m has " + std::to_string(pts.size()) + " " +
                   std::string(label_name(label)) + " points (need " + std::to_string(cfg.min_slab_points) + ")");
  }

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixX3d a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d q = pts[static_cast<std::size_t>(i)] - mean;
    a.row(i) << q.x(), q.y(), 1.0;
    b[i] = -q.squaredNorm();
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixX3d> qr(a);
  if (qr.rank() < 3) throw FitError("degenerate slab: points are collinear");
  const Eigen::Vector3d sol = qr.solve(b);
  const Eigen::Vector2d c(-0.5 * sol[0], -0.5 * sol[1]);
  const double r2 = c.squaredNorm() - sol[2];
  if (!(r2 > 0)) throw FitError("degenerate slab: circle fit has no real radius");
  const double radius = std::sqrt(r2);

  std::vector<double> angles;
  angles.reserve(pts.size());
  double misfit = 0.0;
  for (const auto& p : pts) {
    const Eigen::Vector2d d = p - mean - c;
    angles.push_back(std::atan2(d.y(), d.x()));
    const double e = d.norm() - radius;
    misfit += e * e;
  }
  std::sort(angles.begin(), angles.end());
  double max_gap = 2.0 * std::numbers::pi - (angles.back() - angles.front());
  for (std::size_t i = 1; i < angles.size(); ++i) max_gap = std::max(max_gap, angles[i] - angles[i - 1]);
  const double coverage = 360.0 - max_gap * 180.0 / std::numbers::pi;
  if (coverage < cfg.min_arc_coverage_deg) {
    throw FitError("unreliable fit: arc coverage " + fmt(coverage, 1) + " deg < " +
                   fmt(cfg.min_arc_coverage_deg, 1) + " deg");
  }

  CircleFit fit;
  fit.diameter_mm = 2000.0 * radius;
  fit.residual_mm = 1000.0 * std::sqrt(misfit / static_cast<double>(pts.size()));
  fit.center = plane_origin + (mean.x() + c.x()) * e1 + (mean.y() + c.y()) * e2;
  fit.coverage_deg = coverage;
  fit.point_count = pts.size();
  return fit;
}

std::vector<BranchInstance> cluster_branches(const LabeledPointCloud& cloud, const Axis& trunk,
                                             double link_radius, const MeasurementConfig& cfg) {
  const LabeledPointCloud branch = cloud.with_label(PointLabel::kBranch);
  std::vector<BranchInstance> out;
  if (branch.empty()) return out;
  const Vec3 dir = trunk.dir.normalized();
  auto axis_dist2 = [&](const Vec3& p) {
    const Vec3 w = p - trunk.point;
    const double h = w.dot(dir);
    return w.squaredNorm() - h * h;
  };

  for (const auto& members : euclidean_clusters(branch.points, link_radius, cfg.min_cluster_points)) {
    BranchInstance inst;
    inst.points.reserve(members.size());
    std::size_t best = members.front();
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t m : members) {
      inst.points.push_back(branch.points[m], PointLabel::kBranch);
      const double d2 = axis_dist2(branch.points[m]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = m;
      }
    }
    inst.attachment = branch.points[best];

    std::vector<Vec3> local;
    for (const auto& p : inst.points.points) {
      if ((p - inst.attachment).norm() <= cfg.axis_neighborhood) local.push_back(p);
    }
    if (local.size() < 3) local = inst.points.points;
    const PrincipalAxes pa = principal_axes(local);
    Vec3 v = pa.eigenvectors.col(0).normalized();
    Vec3 outward = pa.centroid - inst.attachment;
    if (outward.norm() < 1e-12) {
      const Vec3 w = inst.attachment - trunk.point;
      outward = w - w.dot(dir) * dir;
    }
    if (v.dot(outward) < 0) v = -v;
    inst.axis_dir = v;
    inst.station_m = (inst.attachment - trunk.point).dot(dir);
    out.push_back(std::move(inst));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const BranchInstance& a, const BranchInstance& b) { return a.station_m < b.station_m; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i);
  return out;
}

std::vector<std::pair<int, double>> MeasurementReport::branch_diameters_mm() const {
  std::vector<std::pair<int, double>> out;
  for (const auto& b : branches)
    if (b.diameter_mm) out.emplace_back(b.id, *b.diameter_mm);
  return out;
}

std::vector<double> MeasurementReport::fit_residuals_mm() const {
  std::vector<double> out;
  for (const auto& r : trunk_station_residuals_mm)
    if (r) out.push_back(*r);
  for (const auto& b : branches)
    if (b.residual_mm) out.push_back(*b.residual_mm);
  return out;
}

namespace {

// Position along the branch axis, measured from the attachment, where the
// line through `center` along the branch direction crosses the trunk surface.
std::optional<double> axis_exit_param(const LabeledPointCloud& cloud, const Axis& trunk, const BranchInstance& b,
                                      const Vec3& center, const std::optional<double>& trunk_diameter_mm,
                                      const MeasurementConfig& cfg) {
  const Vec3 u = trunk.dir.normalized();
  double radius = 0.0;
  try {
    radius = 0.0005 * fit_circle_slab(cloud, trunk, (b.attachment - trunk.point).dot(u), cfg.trunk_slab_thickness,
                                      PointLabel::kTrunk, cfg)
                          .diameter_mm;
  } catch (const FitError&) {
    if (!trunk_diameter_mm) return std::nullopt;
    radius = 0.0005 * *trunk_diameter_mm;
  }
  const Vec3 w0 = center - trunk.point;
  const Vec3 w = w0 - w0.dot(u) * u;
  const Vec3 d = b.axis_dir - b.axis_dir.dot(u) * u;
  const double qa = d.squaredNorm();
  const double qb = w.dot(d);
  const double qc = w.squaredNorm() - radius * radius;
  const double disc = qb * qb - qa * qc;
  if (qa < 1e-12 || qc <= 0 || disc < 0) return std::nullopt;
  const double t = (-qb + std::sqrt(disc)) / qa;
  return (center + t * b.axis_dir - b.attachment).dot(b.axis_dir);
}

}  // namespace

MeasurementReport measure_tree(const LabeledPointCloud& cloud, const MeasurementConfig& cfg) {
  cfg.validate();
  MeasurementReport report;
  report.spacing_mode = cfg.spacing_mode;
  report.trunk_axis = estimate_trunk_axis(cloud, cfg);
  const Axis& axis = report.trunk_axis;

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] != PointLabel::kTrunk) continue;
    const double s = (cloud.points[i] - axis.point).dot(axis.dir);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  report.trunk_base_station = lo;

  std::vector<double> diameters;
  for (double f : cfg.trunk_station_fractions) {
    const double station = lo + f * (hi - lo);
    report.measurement_heights_m.push_back(station - lo);
    try {
      const CircleFit fit = fit_circle_slab(cloud, axis, station, cfg.trunk_slab_thickness, PointLabel::kTrunk, cfg);
      report.trunk_station_diameters_mm.push_back(fit.diameter_mm);
      report.trunk_station_residuals_mm.push_back(fit.residual_mm);
      diameters.push_back(fit.diameter_mm);
    } catch (const FitError&) {
      report.trunk_station_diameters_mm.push_back(std::nullopt);
      report.trunk_station_residuals_mm.push_back(std::nullopt);
    }
  }
  if (!diameters.empty()) report.trunk_diameter_mm = median(diameters);

  for (const BranchInstance& b : cluster_branches(cloud, axis, cfg.link_radius, cfg)) {
    BranchMeasurement m;
    m.id = b.id;
    m.attachment = b.attachment;
    m.axis_dir = b.axis_dir;
    m.station_m = b.station_m - lo;
    m.offset_point = b.attachment + cfg.branch_offset * b.axis_dir;
    const Axis branch_axis{b.attachment, b.axis_dir};
    try {
      CircleFit fit = fit_circle_slab(b.points, branch_axis, cfg.branch_offset, cfg.branch_slab_thickness,
                                      PointLabel::kBranch, cfg);
      // The junction curve spans a few millimeters along the branch, so the
      // offset is re-anchored where the fitted branch axis meets the trunk.
      if (const auto exit = axis_exit_param(cloud, axis, b, fit.center, report.trunk_diameter_mm, cfg)) {
        try {
          fit = fit_circle_slab(b.points, branch_axis, *exit + cfg.branch_offset, cfg.branch_slab_thickness,
                                PointLabel::kBranch, cfg);
        } catch (const FitError&) {
        }
      }
      m.diameter_mm = fit.diameter_mm;
      m.residual_mm = fit.residual_mm;
      m.offset_point = fit.center;
    } catch (const FitError& e) {
      m.error = e.what();
    }
    report.branches.push_back(std::move(m));
  }
  for (std::size_t i = 1; i < report.branches.size(); ++i) {
    const auto& a = report.branches[i - 1];
    const auto& b = report.branches[i];
    const double mm = cfg.spacing_mode == SpacingMode::kEuclidean
                          ? 1000.0 * (b.offset_point - a.offset_point).norm()
                          : 1000.0 * std::abs(b.station_m - a.station_m);
    report.spacings.push_back({a.id, b.id, mm});
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> json_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json to_json(const MeasurementReport& r) {
  json j;
  j["trunk_diameter_mm"] = opt_json(r.trunk_diameter_mm);
  j["trunk_axis"] = {{"point_m", vec_json(r.trunk_axis.point)}, {"dir", vec_json(r.trunk_axis.dir)}};
  j["trunk_base_station_m"] = r.trunk_base_station;
  j["measurement_heights_m"] = r.measurement_heights_m;
  j["trunk_station_diameters_mm"] = json::array();
  j["trunk_station_residuals_mm"] = json::array();
  for (std::size_t i = 0; i < r.trunk_station_diameters_mm.size(); ++i) {
    j["trunk_station_diameters_mm"].push_back(opt_json(r.trunk_station_diameters_mm[i]));
    j["trunk_station_residuals_mm"].push_back(opt_json(r.trunk_station_residuals_mm[i]));
  }
  j["branches"] = json::array();
  for (const auto& b : r.branches) {
    j["branches"].push_back({{"id", b.id},
                             {"station_m", b.station_m},
                             {"attachment_m", vec_json(b.attachment)},
                             {"axis_dir", vec_json(b.axis_dir)},
                             {"offset_point_m", vec_json(b.offset_point)},
                             {"diameter_mm", opt_json(b.diameter_mm)},
                             {"residual_mm", opt_json(b.residual_mm)},
                             {"error", b.error ? json(*b.error) : json(nullptr)}});
  }
  j["branch_diameters_mm"] = json::array();
  for (const auto& [id, d] : r.branch_diameters_mm()) j["branch_diameters_mm"].push_back(json::array({id, d}));
  j["branch_spacings_mm"] = json::array();
  for (const auto& s : r.spacings) {
    j["branch_spacings_mm"].push_back({{"first", s.first},
                                       {"second", s.second},
                                       {"spacing_mm", s.spacing_mm},
                                       {"spacing_in", s.spacing_mm / kMmPerInch}});
  }
  j["spacing_mode"] = r.spacing_mode == SpacingMode::kEuclidean ? "euclidean" : "station_difference";
  j["fit_residuals_mm"] = r.fit_residuals_mm();
  return j;
}

MeasurementReport measurement_report_from_json(const json& j) {
  try {
    MeasurementReport r;
    r.trunk_diameter_mm = json_opt(j, "trunk_diameter_mm");
    if (j.contains("trunk_axis")) {
      r.trunk_axis.point = json_vec(j.at("trunk_axis").at("point_m"));
      r.trunk_axis.dir = json_vec(j.at("trunk_axis").at("dir"));
    }
    r.trunk_base_station = j.value("trunk_base_station_m", 0.0);
    if (j.contains("measurement_heights_m")) r.measurement_heights_m = j.at("measurement_heights_m").get<std::vector<double>>();
    if (j.contains("trunk_station_diameters_mm")) {
      for (const auto& v : j.at("trunk_station_diameters_mm"))
        r.trunk_station_diameters_mm.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    if (j.contains("trunk_station_residuals_mm")) {
      for (const auto& v : j.at("trunk_station_residuals_mm"))
        r.trunk_station_residuals_mm.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
    for (const auto& bj : j.at("branches")) {
      BranchMeasurement b;
      b.id = bj.at("id").get<int>();
      b.station_m = bj.at("station_m").get<double>();
      b.attachment = json_vec(bj.at("attachment_m"));
      b.axis_dir = json_vec(bj.at("axis_dir"));
      b.offset_point = json_vec(bj.at("offset_point_m"));
      b.diameter_mm = json_opt(bj, "diameter_mm");
      b.residual_mm = json_opt(bj, "residual_mm");
      if (bj.contains("error") && bj.at("error").is_string()) b.error = bj.at("error").get<std::string>();
      r.branches.push_back(std::move(b));
    }
    for (const auto& sj : j.at("branch_spacings_mm")) {
      r.spacings.push_back({sj.at("first").get<int>(), sj.at("second").get<int>(), sj.at("spacing_mm").get<double>()});
    }
    r.spacing_mode = j.value("spacing_mode", std::string("euclidean")) == "station_difference"
                         ? SpacingMode::kStationDifference
                         : SpacingMode::kEuclidean;
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("measurement report: ") + e.what());
  }
}

}  // namespace orchard
