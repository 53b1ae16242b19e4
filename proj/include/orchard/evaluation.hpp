// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include <json.hpp>

#include "orchard/core.hpp"
#include "orchard/ingest.hpp"

namespace orchard {

/// Mean displacement between aligned pairs. `fitness`/`mse` are absent when no
/// source point found a target point within max_dist (no overlap).
struct FitnessReport {
  std::optional<double> fitness;  // m
  std::optional<double> mse;      // m^2
  std::size_t pair_count = 0;
  double max_dist_used = 0.0;

  bool has_overlap() const { return pair_count > 0; }
};

/// Transforms `source` by t; each transformed point pairs with its nearest
/// target point when that lies within max_dist.
FitnessReport fitness_score(const LabeledPointCloud& target, const LabeledPointCloud& source,
                            const RigidTransform& t, double max_dist);
FitnessReport fitness_score(std::span<const Vec3> target, std::span<const Vec3> source,
                            const RigidTransform& t, double max_dist);

double rmse(std::span<const double> truth, std::span<const double> predicted);
double mae(std::span<const double> truth, std::span<const double> predicted);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

struct ClassMetrics {
  ConfusionCounts counts;
  std::optional<double> iou;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

struct SegmentationReport {
  ClassMetrics trunk;
  ClassMetrics branch;
  std::optional<double> mean_iou;  // over classes whose IoU is defined
};

/// Ratios with a zero denominator stay absent rather than 0 or NaN.
ClassMetrics metrics_from_counts(const ConfusionCounts& counts);

/// One-vs-rest pixel metrics for Trunk and Branch.
SegmentationReport segmentation_metrics(const MaskImage& pred, const MaskImage& truth);

nlohmann::json to_json(const FitnessReport& r);
nlohmann::json to_json(const ClassMetrics& m);
nlohmann::json to_json(const SegmentationReport& r);

}  // namespace orchard
