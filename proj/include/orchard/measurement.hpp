// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "orchard/core.hpp"
#include "orchard/error.hpp"

namespace orchard {

/// A measurement that cannot be trusted (too few points, too little arc).
class FitError : public Error {
 public:
  explicit FitError(const std::string& message) : Error(ErrorKind::kComputation, message) {}
};

constexpr double kTwoInchesM = 0.0508;
constexpr double kMmPerInch = 25.4;

struct Axis {
  Vec3 point = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();  // unit
};

enum class SpacingMode {
  kEuclidean,          // distance between the two-inch offset points
  kStationDifference,  // difference of attachment stations along the trunk axis
};

struct MeasurementConfig {
  Vec3 up = Vec3::UnitZ();  // world vertical, orients the trunk axis
  double trunk_slab_thickness = 0.02;
  std::vector<double> trunk_station_fractions{0.25, 0.5, 0.75};
  double branch_offset = kTwoInchesM;
  double branch_slab_thickness = 0.015;
  double link_radius = 0.015;
  std::size_t min_cluster_points = 30;
  double axis_neighborhood = 0.1;  // radius around the attachment for the branch direction
  SpacingMode spacing_mode = SpacingMode::kEuclidean;
  std::size_t min_trunk_points = 100;
  std::size_t min_slab_points = 12;
  double min_arc_coverage_deg = 120.0;

  void validate() const;
};

/// Centroid and dominant scatter direction of the Trunk points, oriented so
/// that dir . up > 0. FitError when there are too few points or the scatter
/// is not elongated (first/second eigenvalue ratio below 2).
Axis estimate_trunk_axis(const LabeledPointCloud& cloud, const MeasurementConfig& cfg = {});

struct CircleFit {
  double diameter_mm = 0.0;
  double residual_mm = 0.0;  // RMS radial misfit
  Vec3 center = Vec3::Zero();  // on the slab's mid-plane, world coordinates
  double coverage_deg = 0.0;
  std::size_t point_count = 0;
};

/// Kasa circle fit of the `label` points whose axial coordinate lies within
/// station +- thickness / 2, after projection onto the plane normal to the axis.
CircleFit fit_circle_slab(const LabeledPointCloud& cloud, const Axis& axis, double station,
                          double thickness, PointLabel label, const MeasurementConfig& cfg = {});

struct BranchInstance {
  int id = 0;
  LabeledPointCloud points;
  Vec3 attachment = Vec3::Zero();  // branch point nearest the trunk axis
  Vec3 axis_dir = Vec3::UnitX();   // unit, pointing away from the trunk
  double station_m = 0.0;          // attachment position along the trunk axis
};

/// Clusters Branch points by single linkage; ids follow ascending station.
std::vector<BranchInstance> cluster_branches(const LabeledPointCloud& cloud, const Axis& trunk,
                                             double link_radius, const MeasurementConfig& cfg = {});

struct BranchMeasurement {
  int id = 0;
  Vec3 attachment = Vec3::Zero();
  Vec3 axis_dir = Vec3::UnitX();
  double station_m = 0.0;  // from the trunk base along the axis
  Vec3 offset_point = Vec3::Zero();  // cross-section center two inches out
  std::optional<double> diameter_mm;
  std::optional<double> residual_mm;
  std::optional<std::string> error;
};

struct SpacingMeasurement {
  int first = 0;
  int second = 0;
  double spacing_mm = 0.0;
};

struct MeasurementReport {
  std::optional<double> trunk_diameter_mm;
  Axis trunk_axis;
  double trunk_base_station = 0.0;  // axial coordinate of the lowest trunk point
  std::vector<double> measurement_heights_m;  // trunk stations from the base
  std::vector<std::optional<double>> trunk_station_diameters_mm;
  std::vector<std::optional<double>> trunk_station_residuals_mm;
  std::vector<BranchMeasurement> branches;
  std::vector<SpacingMeasurement> spacings;
  SpacingMode spacing_mode = SpacingMode::kEuclidean;

  std::vector<std::pair<int, double>> branch_diameters_mm() const;
  std::vector<double> fit_residuals_mm() const;
};

MeasurementReport measure_tree(const LabeledPointCloud& cloud, const MeasurementConfig& cfg = {});

nlohmann::json to_json(const MeasurementReport& report);
MeasurementReport measurement_report_from_json(const nlohmann::json& j);

}  // namespace orchard
