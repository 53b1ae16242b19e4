// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/evaluation.hpp"

#include <cmath>

#include "orchard/error.hpp"
#include "orchard/parallel.hpp"
#include "orchard/spatial.hpp"

namespace orchard {

using nlohmann::json;

namespace {

struct DistanceSums {
  double dist = 0.0;
  double dist2 = 0.0;
  std::size_t n = 0;
};

void check_pair(std::span<const double> truth, std::span<const double> predicted) {
  if (truth.empty()) throw ValidationError("error metrics need at least one value");
  if (truth.size() != predicted.size()) {
    throw ValidationError("length mismatch: " + std::to_string(truth.size()) + " truth vs " +
                          std::to_string(predicted.size()) + " predicted");
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

FitnessReport fitness_score(std::span<const Vec3> target, std::span<const Vec3> source,
                            const RigidTransform& t, double max_dist) {
  if (target.empty() || source.empty()) throw ValidationError("fitness_score needs non-empty clouds");
  if (!(max_dist > 0)) throw ValidationError("max_dist must be positive");
  const KdTree tree(target);
  const double max2 = max_dist * max_dist;
  const DistanceSums sums = blocked_reduce(
      source.size(), 64, DistanceSums{},
      [&](std::size_t lo, std::size_t hi) {
        DistanceSums s;
        for (std::size_t i = lo; i < hi; ++i) {
          const Vec3 q = t.apply(source[i]);
          if (auto nb = tree.nearest(q, max2)) {
            s.dist += std::sqrt(nb->dist2);
            s.dist2 += nb->dist2;
            ++s.n;
          }
        }
        return s;
      },
      [](DistanceSums a, const DistanceSums& b) {
        a.dist += b.dist;
        a.dist2 += b.dist2;
        a.n += b.n;
        return a;
      });
  FitnessReport r;
  r.max_dist_used = max_dist;
  r.pair_count = sums.n;
  if (sums.n > 0) {
    r.fitness = sums.dist / static_cast<double>(sums.n);
    r.mse = sums.dist2 / static_cast<double>(sums.n);
  }
  return r;
}

FitnessReport fitness_score(const LabeledPointCloud& target, const LabeledPointCloud& source,
                            const RigidTransform& t, double max_dist) {
  return fitness_score(std::span<const Vec3>(target.points), std::span<const Vec3>(source.points),
                       t, max_dist);
}

double rmse(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = truth[i] - predicted[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double mae(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - predicted[i]);
  return s / static_cast<double>(truth.size());
}

ClassMetrics metrics_from_counts(const ConfusionCounts& c) {
  ClassMetrics m;
  m.counts = c;
  const auto tp = static_cast<double>(c.tp);
  if (c.tp + c.fp + c.fn > 0) m.iou = tp / static_cast<double>(c.tp + c.fp + c.fn);
  if (c.tp + c.fp > 0) m.precision = tp / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = tp / static_cast<double>(c.tp + c.fn);
  if (m.precision && m.recall && *m.precision + *m.recall > 0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

SegmentationReport segmentation_metrics(const MaskImage& pred, const MaskImage& truth) {
  if (pred.width != truth.width || pred.height != truth.height) {
    throw ValidationError("mask dimension mismatch: " + std::to_string(pred.width) + "x" +
                          std::to_string(pred.height) + " vs " + std::to_string(truth.width) +
                          "x" + std::to_string(truth.height));
  }
  ConfusionCounts trunk, branch;
  const auto kt = static_cast<std::uint8_t>(PointLabel::kTrunk);
  const auto kb = static_cast<std::uint8_t>(PointLabel::kBranch);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const std::uint8_t p = pred.data[i], t = truth.data[i];
    for (auto [cls, counts] : {std::pair{kt, &trunk}, std::pair{kb, &branch}}) {
      const bool pp = p == cls, tt = t == cls;
      counts->tp += pp && tt;
      counts->fp += pp && !tt;
      counts->fn += !pp && tt;
    }
  }
  SegmentationReport r;
  r.trunk = metrics_from_counts(trunk);
  r.branch = metrics_from_counts(branch);
  double sum = 0.0;
  int n = 0;
  for (const auto* m : {&r.trunk, &r.branch}) {
    if (m->iou) {
      sum += *m->iou;
      ++n;
    }
  }
  if (n > 0) r.mean_iou = sum / n;
  return r;
}

json to_json(const FitnessReport& r) {
  json j;
  j["fitness_m"] = optional_number(r.fitness);
  j["mse_m2"] = optional_number(r.mse);
  j["pair_count"] = r.pair_count;
  j["max_dist_m"] = r.max_dist_used;
  j["overlap"] = r.has_overlap();
  return j;
}

json to_json(const ClassMetrics& m) {
  return {{"tp", m.counts.tp},
          {"fp", m.counts.fp},
          {"fn", m.counts.fn},
          {"iou", optional_number(m.iou)},
          {"precision", optional_number(m.precision)},
          {"recall", optional_number(m.recall)},
          {"f1", optional_number(m.f1)}};
}

json to_json(const SegmentationReport& r) {
  return {{"trunk", to_json(r.trunk)},
          {"branch", to_json(r.branch)},
          {"mean_iou", optional_number(r.mean_iou)}};
}

}  // namespace orchard
