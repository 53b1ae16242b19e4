// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "orchard/core.hpp"
#include "orchard/ingest.hpp"
#include "orchard/measurement.hpp"

namespace orchard {

/// Parametric tree in its own frame: the trunk is a tapered cylinder standing
/// on z = 0 along +z; branch i leaves the trunk axis at height
/// branch_stations[i], tilted branch_pitch_deg above horizontal. `pose` maps
/// the tree frame to the world.
struct TreeSpec {
  double trunk_height = 1.5;           // m
  double trunk_diameter_base = 90.0;   // mm
  double taper = 0.8;                  // top/base diameter ratio
  int branch_count = 0;
  std::vector<double> branch_stations;   // m
  std::vector<double> branch_diameters;  // mm
  std::vector<double> branch_lengths;    // m, from the trunk surface to the tip
  double branch_pitch_deg = 20.0;
  std::vector<double> branch_azimuths_deg;  // empty: alternate 0 / 180
  double noise_sigma = 0.0;  // mm
  std::uint64_t seed = 0;
  std::size_t point_count = 50000;
  RigidTransform pose;

  void validate() const;

  double trunk_radius_at(double z) const;  // m, tree frame
  double azimuth_deg(int i) const;
  Vec3 branch_direction(int i) const;       // unit, tree frame
  double branch_exit_param(int i) const;    // axis distance from trunk axis to trunk surface
};

nlohmann::json to_json(const TreeSpec& spec);
TreeSpec tree_spec_from_json(const nlohmann::json& j);

/// World-frame truth of a generated tree. Branch entries follow ascending station.
struct GroundTruth {
  std::vector<double> trunk_station_fractions;
  std::vector<double> trunk_diameters_mm;  // at each station
  std::vector<double> branch_diameters_mm;
  std::vector<Vec3> branch_attachments;    // where each branch axis leaves the trunk surface
  std::vector<Vec3> branch_directions;
  std::vector<Vec3> branch_offset_points;  // two inches out along the branch axis
  std::vector<double> spacings_mm;         // consecutive offset points
  RigidTransform applied_transform;

  /// Median of the station diameters, the same statistic measure_tree reports.
  double trunk_diameter_mm() const;
};

nlohmann::json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

GroundTruth ground_truth_of(const TreeSpec& spec,
                            const std::vector<double>& trunk_station_fractions = {0.25, 0.5, 0.75});

/// Surface-uniform samples of every primitive, minus the parts buried inside
/// another primitive, with Gaussian radial noise.
std::pair<LabeledPointCloud, GroundTruth> generate_tree(const TreeSpec& spec);

/// Analytic ray casting. `pose` is camera-to-world. Throws ValidationError
/// when the camera sits inside a primitive.
std::pair<DepthImage, MaskImage> render_depth_frame(const TreeSpec& spec, const RigidTransform& pose,
                                                    const CameraIntrinsics& k);

/// Camera-to-world pose at `eye` looking at `target` (+x right, +y down, +z forward).
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// `n` horizontal views alternating between the two sides of the tree's x-z
/// plane at `distance` from the trunk axis, climbing from 20% to 85% of the
/// trunk height.
std::vector<RigidTransform> capture_poses(const TreeSpec& spec, int n, double distance = 0.762);

/// `n` views on a horizontal arc around the trunk at `height_frac` of its
/// height, from `start_deg` to `start_deg + arc_deg` (azimuth about the
/// trunk axis, 0 = +x), all looking at the axis.
std::vector<RigidTransform> orbit_poses(const TreeSpec& spec, int n, double distance, double height_frac,
                                        double start_deg, double arc_deg);

/// World-frame box enclosing the tree primitives, padded by `margin`.
std::pair<Vec3, Vec3> tree_bounds(const TreeSpec& spec, double margin = 0.0);

struct CanopyOptions {
  double keep_branch_frac = 7.0 / 109.0;
  double clutter_density = 0.0;  // points per cubic meter of crown volume
  std::uint64_t seed = 0;
  int trunk_bands = 4;
  double min_sector_frac = 0.2;
  double max_sector_frac = 0.4;
  double link_radius = 0.015;
};

/// Leaf-on view: drops one contiguous angular sector per trunk height band,
/// keeps round(keep_branch_frac * clusters) whole branch clusters and fills
/// the branch bounding box with Clutter points.
LabeledPointCloud make_canopy_variant(const LabeledPointCloud& cloud, const CanopyOptions& options);
LabeledPointCloud make_canopy_variant(const LabeledPointCloud& cloud, double keep_branch_frac,
                                      double clutter_density, std::uint64_t seed);

struct ErrorSummary {
  std::vector<double> truth;
  std::vector<double> predicted;
  std::optional<double> rmse;
  std::optional<double> mae;
};

struct MeasurementComparison {
  ErrorSummary trunk_mm;
  ErrorSummary branch_mm;
  ErrorSummary spacing_mm;
  std::size_t matched_branches = 0;
  std::size_t missed_branches = 0;    // ground-truth branches without a match
  std::size_t spurious_branches = 0;  // reported branches without a match
};

/// Pairs reported and true branches by nearest attachment (greedy, within
/// `match_radius`). A spacing counts when both of its branches matched
/// consecutive true branches.
MeasurementComparison compare_measurements(const MeasurementReport& report, const GroundTruth& gt,
                                           double match_radius = 0.05);

/// Extends a comparison with another tree's pairs and refreshes the statistics.
void accumulate(MeasurementComparison& total, const MeasurementComparison& part);

nlohmann::json to_json(const MeasurementComparison& c);

}  // namespace orchard
