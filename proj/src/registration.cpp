// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/registration.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <limits>
#include <cmath>
#include <map>
#include <numeric>

#include "orchard/error.hpp"
#include "orchard/evaluation.hpp"
#include "orchard/parallel.hpp"

namespace orchard {

namespace {

constexpr std::size_t kReductionBlocks = 64;
constexpr std::size_t kMinCorrespondences = 6;
constexpr int kMaxRejectedSteps = 30;
constexpr int kCoarseStallLimit = 5;
constexpr double kStallRelativeGain = 1e-3;
constexpr double kMinLambda = 1e-12;

}  // namespace

std::string_view method_name(RegistrationMethod m) {
  switch (m) {
    case RegistrationMethod::kIcp: return "icp";
    case RegistrationMethod::kGicp: return "gicp";
    case RegistrationMethod::kFastGicp: return "fast_gicp";
  }
  return "unknown";
}

RegistrationMethod parse_method(std::string_view name) {
  if (name == "icp") return RegistrationMethod::kIcp;
  if (name == "gicp") return RegistrationMethod::kGicp;
  if (name == "fast_gicp") return RegistrationMethod::kFastGicp;
  throw ValidationError("invalid registration method '" + std::string(name) +
                        "' (expected one of: icp, gicp, fast_gicp)");
}

void RegistrationConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ValidationError(std::string("registration.") + name + " must be positive");
  };
  if (max_iterations <= 0) throw ValidationError("registration.max_iterations must be positive");
  positive(translation_eps, "translation_eps");
  positive(rotation_eps, "rotation_eps");
  positive(max_correspondence_dist, "max_correspondence_dist");
  positive(voxel_size, "voxel_size");
  positive(lm_lambda_init, "lm_lambda_init");
  if (knn_k < 4) throw ValidationError("registration.knn_k must be >= 4");
  if (min_points_per_voxel <= 0) throw ValidationError("registration.min_points_per_voxel must be positive");
  for (double s : resolution_schedule) positive(s, "resolution_schedule entries");
}

// ---------------------------------------------------------------------------
// Covariances

std::vector<Mat3> neighborhood_covariances(std::span<const Vec3> points, int k) {
  if (k < 4) throw ValidationError("covariance estimation needs k >= 4");
  if (points.size() < static_cast<std::size_t>(k)) {
    throw ValidationError("cloud has " + std::to_string(points.size()) +
                          " points, fewer than k = " + std::to_string(k));
  }
  const KdTree tree(points);
  std::vector<Mat3> covs(points.size());
  parallel_for(points.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto nbs = tree.knn(points[i], static_cast<std::size_t>(k));
      Vec3 mean = Vec3::Zero();
      for (const auto& nb : nbs) mean += tree.point(nb.index);
      mean /= static_cast<double>(nbs.size());
      Mat3 c = Mat3::Zero();
      for (const auto& nb : nbs) {
        const Vec3 d = tree.point(nb.index) - mean;
        c += d * d.transpose();
      }
      covs[i] = c / static_cast<double>(nbs.size());
    }
  });
  return covs;
}

Mat3 regularize_plane(const Mat3& cov) {
  Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  // Eigen sorts ascending: column 0 is the normal direction.
  const Mat3& r = solver.eigenvectors();
  const Vec3 values(1e-3, 1.0, 1.0);
  return r * values.asDiagonal() * r.transpose();
}

CovarianceCloud estimate_covariances(std::span<const Vec3> points, int k) {
  CovarianceCloud out;
  out.points.assign(points.begin(), points.end());
  out.covariances = neighborhood_covariances(points, k);
  for (auto& c : out.covariances) c = regularize_plane(c);
  return out;
}

CovarianceCloud estimate_covariances(const LabeledPointCloud& cloud, int k) {
  return estimate_covariances(std::span<const Vec3>(cloud.points), k);
}

// ---------------------------------------------------------------------------
// Voxel grid

GaussianVoxelGrid::GaussianVoxelGrid(double voxel_size, std::vector<Cell> cells)
    : voxel_size_(voxel_size), cells_(std::move(cells)) {
  index_.reserve(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) index_.emplace(cells_[i].key, i);
}

VoxelKey GaussianVoxelGrid::key_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size_)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size_)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size_))};
}

std::optional<std::size_t> GaussianVoxelGrid::find(const Vec3& p) const {
  if (!p.allFinite()) return std::nullopt;
  auto it = index_.find(key_of(p));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

GaussianVoxelGrid build_gaussian_voxel_grid(const CovarianceCloud& cloud, double voxel_size,
                                            int min_points) {
  if (!(voxel_size > 0)) throw ValidationError("voxel_size must be positive");
  if (cloud.points.size() != cloud.covariances.size()) {
    throw ValidationError("covariance cloud has mismatched sizes");
  }
  GaussianVoxelGrid probe(voxel_size, {});
  std::vector<std::pair<VoxelKey, std::uint32_t>> keyed(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    keyed[i] = {probe.key_of(cloud.points[i]), static_cast<std::uint32_t>(i)};
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first.x != b.first.x) return a.first.x < b.first.x;
    if (a.first.y != b.first.y) return a.first.y < b.first.y;
    if (a.first.z != b.first.z) return a.first.z < b.first.z;
    return a.second < b.second;
  });

  std::vector<GaussianVoxelGrid::Cell> cells;
  std::size_t begin = 0;
  while (begin < keyed.size()) {
    std::size_t end = begin;
    while (end < keyed.size() && keyed[end].first == keyed[begin].first) ++end;
    const std::size_t n = end - begin;
    if (n >= static_cast<std::size_t>(std::max(1, min_points))) {
      GaussianVoxelGrid::Cell cell;
      cell.key = keyed[begin].first;
      cell.count = n;
      Mat3 mean_cov = Mat3::Zero();
      for (std::size_t i = begin; i < end; ++i) {
        cell.mean += cloud.points[keyed[i].second];
        mean_cov += cloud.covariances[keyed[i].second];
      }
      cell.mean /= static_cast<double>(n);
      Mat3 scatter = Mat3::Zero();
      for (std::size_t i = begin; i < end; ++i) {
        const Vec3 d = cloud.points[keyed[i].second] - cell.mean;
        scatter += d * d.transpose();
      }
      cell.cov = (mean_cov + scatter) / static_cast<double>(n);
      cells.push_back(cell);
    }
    begin = end;
  }
  return GaussianVoxelGrid(voxel_size, std::move(cells));
}

PointTarget::PointTarget(CovarianceCloud cloud)
    : cloud_(std::move(cloud)), tree_(std::span<const Vec3>(cloud_.points)) {}

// ---------------------------------------------------------------------------
// Objectives

namespace {

Linearization combine(Linearization a, const Linearization& b) {
  a.hessian += b.hessian;
  a.gradient += b.gradient;
  a.cost += b.cost;
  a.count += b.count;
  return a;
}

// Accumulates J^T W J, J^T W d and d^T W d for d = p - T q, where the
// left-perturbation Jacobian of d is J = [ [Tq]x , -I ].
void accumulate(const Vec3& tq, const Vec3& d, const Mat3& w, Linearization& lin) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = skew(tq);
  j.rightCols<3>() = -Mat3::Identity();
  const Eigen::Matrix<double, 6, 3> jtw = j.transpose() * w;
  lin.hessian += jtw * j;
  lin.gradient += jtw * d;
  lin.cost += d.dot(w * d);
  ++lin.count;
}

std::vector<Correspondence> gather(std::size_t n,
                                   const std::function<std::optional<std::uint32_t>(std::size_t)>& match) {
  std::vector<std::vector<Correspondence>> parts(kReductionBlocks);
  const std::size_t blocks = std::min<std::size_t>(kReductionBlocks, std::max<std::size_t>(n, 1));
  parallel_for(blocks, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      for (std::size_t i = n * b / blocks; i < n * (b + 1) / blocks; ++i) {
        if (auto t = match(i)) parts[b].push_back({static_cast<std::uint32_t>(i), *t});
      }
    }
  });
  std::vector<Correspondence> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

class NearestNeighborPairing {
 public:
  NearestNeighborPairing(std::shared_ptr<const PointTarget> target, double max_dist)
      : target_(std::move(target)), max_dist2_(max_dist * max_dist) {}

  std::vector<Correspondence> pair(std::span<const Vec3> source, const RigidTransform& t) const {
    return gather(source.size(), [&](std::size_t i) -> std::optional<std::uint32_t> {
      auto nb = target_->tree().nearest(t.apply(source[i]), max_dist2_);
      if (!nb) return std::nullopt;
      return static_cast<std::uint32_t>(nb->index);
    });
  }

  const PointTarget& target() const { return *target_; }

 private:
  std::shared_ptr<const PointTarget> target_;
  double max_dist2_;
};

class IcpObjective final : public Objective {
 public:
  IcpObjective(std::span<const Vec3> source, std::shared_ptr<const PointTarget> target, double max_dist)
      : source_(source.begin(), source.end()), pairing_(std::move(target), max_dist) {}

  std::vector<Correspondence> correspondences(const RigidTransform& t) const override {
    return pairing_.pair(source_, t);
  }

  double evaluate(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& tgt = pairing_.target().cloud().points;
    return blocked_reduce(
        c.size(), kReductionBlocks, 0.0,
        [&](std::size_t lo, std::size_t hi) {
          double s = 0.0;
          for (std::size_t i = lo; i < hi; ++i) {
            s += (tgt[c[i].target] - t.apply(source_[c[i].source])).squaredNorm();
          }
          return s;
        },
        std::plus<>());
  }

  Linearization linearize(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& tgt = pairing_.target().cloud().points;
    const Mat3 eye = Mat3::Identity();
    return blocked_reduce(
        c.size(), kReductionBlocks, Linearization{},
        [&](std::size_t lo, std::size_t hi) {
          Linearization lin;
          for (std::size_t i = lo; i < hi; ++i) {
            const Vec3 tq = t.apply(source_[c[i].source]);
            accumulate(tq, tgt[c[i].target] - tq, eye, lin);
          }
          return lin;
        },
        combine);
  }

 private:
  std::vector<Vec3> source_;
  NearestNeighborPairing pairing_;
};

class GicpObjective final : public Objective {
 public:
  GicpObjective(std::shared_ptr<const CovarianceCloud> source, std::shared_ptr<const PointTarget> target,
                double max_dist)
      : source_(std::move(source)), pairing_(std::move(target), max_dist) {}

  std::vector<Correspondence> correspondences(const RigidTransform& t) const override {
    return pairing_.pair(source_->points, t);
  }

  double evaluate(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& tgt = pairing_.target().cloud();
    const Mat3& r = t.rotation();
    return blocked_reduce(
        c.size(), kReductionBlocks, 0.0,
        [&](std::size_t lo, std::size_t hi) {
          double s = 0.0;
          for (std::size_t i = lo; i < hi; ++i) {
            const auto& [si, ti] = c[i];
            const Vec3 d = tgt.points[ti] - t.apply(source_->points[si]);
            const Mat3 m = tgt.covariances[ti] + r * source_->covariances[si] * r.transpose();
            s += d.dot(m.inverse() * d);
          }
          return s;
        },
        std::plus<>());
  }

  Linearization linearize(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& tgt = pairing_.target().cloud();
    const Mat3& r = t.rotation();
    return blocked_reduce(
        c.size(), kReductionBlocks, Linearization{},
        [&](std::size_t lo, std::size_t hi) {
          Linearization lin;
          for (std::size_t i = lo; i < hi; ++i) {
            const auto& [si, ti] = c[i];
            const Vec3 tq = t.apply(source_->points[si]);
            const Mat3 m = tgt.covariances[ti] + r * source_->covariances[si] * r.transpose();
            accumulate(tq, tgt.points[ti] - tq, m.inverse(), lin);
          }
          return lin;
        },
        combine);
  }

 private:
  std::shared_ptr<const CovarianceCloud> source_;
  NearestNeighborPairing pairing_;
};

class FastGicpObjective final : public Objective {
 public:
  FastGicpObjective(std::shared_ptr<const CovarianceCloud> source,
                    std::shared_ptr<const GaussianVoxelGrid> target)
      : source_(std::move(source)), grid_(std::move(target)) {}

  std::vector<Correspondence> correspondences(const RigidTransform& t) const override {
    return gather(source_->size(), [&](std::size_t i) -> std::optional<std::uint32_t> {
      auto cell = grid_->find(t.apply(source_->points[i]));
      if (!cell) return std::nullopt;
      return static_cast<std::uint32_t>(*cell);
    });
  }

  double evaluate(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& cells = grid_->cells();
    const Mat3& r = t.rotation();
    return blocked_reduce(
        c.size(), kReductionBlocks, 0.0,
        [&](std::size_t lo, std::size_t hi) {
          double s = 0.0;
          for (std::size_t i = lo; i < hi; ++i) {
            const auto& [si, ti] = c[i];
            const Vec3 d = cells[ti].mean - t.apply(source_->points[si]);
            const Mat3 m = cells[ti].cov + r * source_->covariances[si] * r.transpose();
            s += d.dot(m.inverse() * d);
          }
          return s;
        },
        std::plus<>());
  }

  Linearization linearize(const RigidTransform& t, const std::vector<Correspondence>& c) const override {
    const auto& cells = grid_->cells();
    const Mat3& r = t.rotation();
    return blocked_reduce(
        c.size(), kReductionBlocks, Linearization{},
        [&](std::size_t lo, std::size_t hi) {
          Linearization lin;
          for (std::size_t i = lo; i < hi; ++i) {
            const auto& [si, ti] = c[i];
            const Vec3 tq = t.apply(source_->points[si]);
            const Mat3 m = cells[ti].cov + r * source_->covariances[si] * r.transpose();
            accumulate(tq, cells[ti].mean - tq, m.inverse(), lin);
          }
          return lin;
        },
        combine);
  }

 private:
  std::shared_ptr<const CovarianceCloud> source_;
  std::shared_ptr<const GaussianVoxelGrid> grid_;
};

}  // namespace

std::unique_ptr<Objective> make_icp_objective(std::span<const Vec3> source,
                                              std::shared_ptr<const PointTarget> target,
                                              double max_dist) {
  return std::make_unique<IcpObjective>(source, std::move(target), max_dist);
}

std::unique_ptr<Objective> make_gicp_objective(std::shared_ptr<const CovarianceCloud> source,
                                               std::shared_ptr<const PointTarget> target,
                                               double max_dist) {
  return std::make_unique<GicpObjective>(std::move(source), std::move(target), max_dist);
}

std::unique_ptr<Objective> make_fast_gicp_objective(std::shared_ptr<const CovarianceCloud> source,
                                                    std::shared_ptr<const GaussianVoxelGrid> target) {
  return std::make_unique<FastGicpObjective>(std::move(source), std::move(target));
}

// ---------------------------------------------------------------------------
// Standalone cost evaluation. Kept separate from the objectives so tests can
// compare the two paths.

CostEvaluation gicp_cost(const CovarianceCloud& source, const CovarianceCloud& target,
                         const RigidTransform& t, double max_dist) {
  CostEvaluation out;
  if (source.size() == 0 || target.size() == 0) return out;
  const KdTree tree(std::span<const Vec3>(target.points));
  const Mat3& r = t.rotation();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 tq = t.apply(source.points[i]);
    auto nb = tree.nearest(tq, max_dist * max_dist);
    if (!nb) continue;
    const Vec3 d = target.points[nb->index] - tq;
    const Mat3 m = target.covariances[nb->index] + r * source.covariances[i] * r.transpose();
    out.cost += d.dot(m.ldlt().solve(d));
    ++out.count;
  }
  return out;
}

CostEvaluation gicp_cost(const CovarianceCloud& source, const GaussianVoxelGrid& target,
                         const RigidTransform& t) {
  CostEvaluation out;
  const Mat3& r = t.rotation();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 tq = t.apply(source.points[i]);
    auto cell = target.find(tq);
    if (!cell) continue;
    const auto& c = target.cells()[*cell];
    const Vec3 d = c.mean - tq;
    const Mat3 m = c.cov + r * source.covariances[i] * r.transpose();
    out.cost += d.dot(m.ldlt().solve(d));
    ++out.count;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Solver

namespace {

// `stall_limit` > 0 ends the solve once the freshly paired cost per
// correspondence has failed to improve on its best value for that many
// iterations (re-pairing can cycle far from the optimum).
RegistrationResult solve(const Objective& objective, const RigidTransform& init, const RegistrationConfig& cfg,
                         int stall_limit) {
  RegistrationResult result;
  RigidTransform pose = init;
  double lambda = cfg.lm_lambda_init;
  double best_mean_cost = std::numeric_limits<double>::infinity();
  int stalled = 0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const auto corr = objective.correspondences(pose);
    if (corr.size() < kMinCorrespondences) {
      throw NonConvergentError("iteration " + std::to_string(iter) + ": only " +
                               std::to_string(corr.size()) + " correspondences (need " +
                               std::to_string(kMinCorrespondences) + ")");
    }
    const Linearization lin = objective.linearize(pose, corr);
    result.iterations = iter + 1;
    if (stall_limit > 0) {
      const double mean_cost = lin.cost / static_cast<double>(corr.size());
      if (mean_cost < best_mean_cost * (1.0 - kStallRelativeGain)) {
        best_mean_cost = mean_cost;
        stalled = 0;
      } else if (++stalled >= stall_limit) {
        break;
      }
    }

    bool accepted = false;
    bool small = false;
    int rejected = 0;
    while (!accepted) {
      const Mat6 damped = lin.hessian + lambda * Mat6::Identity();
      const Eigen::LDLT<Mat6> ldlt(damped);
      Vec6 delta = Vec6::Zero();
      bool solvable = ldlt.info() == Eigen::Success && ldlt.isPositive();
      if (solvable) {
        delta = -ldlt.solve(lin.gradient);
        solvable = delta.allFinite();
      }
      if (solvable) {
        small = delta.head<3>().norm() < cfg.rotation_eps && delta.tail<3>().norm() < cfg.translation_eps;
        const RigidTransform candidate = se3_exp(Twist::from_vector(delta)) * pose;
        const double cost = objective.evaluate(candidate, corr);
        if (cost <= lin.cost) {
          result.history.push_back({iter, corr.size(), lin.cost, cost, lambda, rejected});
          pose = candidate;
          lambda = std::max(kMinLambda, lambda * 0.1);
          accepted = true;
          break;
        }
        // No descent even for a step below tolerance: we sit at the minimum.
        if (small) break;
      }
      lambda *= 10.0;
      if (++rejected > kMaxRejectedSteps) {
        throw NonConvergentError("iteration " + std::to_string(iter) +
                                 ": singular or non-descending normal equations after damping escalation"
                                 " (lambda " + std::to_string(lambda) + ")");
      }
    }
    if (small) {
      result.converged = true;
      break;
    }
  }
  result.transform = pose.orthonormalized();
  return result;
}

}  // namespace

RegistrationResult optimize(const Objective& objective, const RigidTransform& init,
                            const RegistrationConfig& cfg) {
  return solve(objective, init, cfg, 0);
}

RegistrationResult register_clouds(const LabeledPointCloud& source, const LabeledPointCloud& target,
                                   const RigidTransform& init, const RegistrationConfig& cfg) {
  cfg.validate();
  const LabeledPointCloud src =
      cfg.trunk_only ? source.with_label(PointLabel::kTrunk) : source.foreground();
  const LabeledPointCloud tgt =
      cfg.trunk_only ? target.with_label(PointLabel::kTrunk) : target.foreground();
  if (src.empty() || tgt.empty()) throw ValidationError("registration needs non-empty source and target clouds");
  const bool needs_cov = cfg.method != RegistrationMethod::kIcp;
  const auto k = static_cast<std::size_t>(cfg.knn_k);
  if (needs_cov && (src.size() < k || tgt.size() < k)) {
    throw ValidationError("gicp/fast_gicp need at least knn_k = " + std::to_string(cfg.knn_k) +
                          " points in both clouds (source " + std::to_string(src.size()) +
                          ", target " + std::to_string(tgt.size()) + ")");
  }

  std::shared_ptr<const CovarianceCloud> src_cov;
  std::shared_ptr<const CovarianceCloud> tgt_cov;
  if (needs_cov) {
    src_cov = std::make_shared<CovarianceCloud>(estimate_covariances(src, cfg.knn_k));
    tgt_cov = std::make_shared<CovarianceCloud>(estimate_covariances(tgt, cfg.knn_k));
  } else {
    auto c = std::make_shared<CovarianceCloud>();
    c->points = tgt.points;
    c->covariances.assign(tgt.size(), Mat3::Identity());
    tgt_cov = c;
  }
  std::shared_ptr<const PointTarget> point_target;
  if (cfg.method != RegistrationMethod::kFastGicp) point_target = std::make_shared<PointTarget>(*tgt_cov);

  // Coarse levels pair a strided subset of the source; covariances keep
  // their full-resolution neighborhoods.
  std::vector<Vec3> level_points;
  std::shared_ptr<const CovarianceCloud> level_cov;
  auto make_objective = [&](double scale) -> std::unique_ptr<Objective> {
    std::size_t stride = scale >= 2.0 ? static_cast<std::size_t>(scale) : 1;
    stride = std::min(stride, std::max<std::size_t>(1, src.size() / 2000));
    level_points.clear();
    for (std::size_t i = 0; i < src.size(); i += stride) level_points.push_back(src.points[i]);
    if (needs_cov) {
      if (stride == 1) {
        level_cov = src_cov;
      } else {
        auto c = std::make_shared<CovarianceCloud>();
        for (std::size_t i = 0; i < src.size(); i += stride) {
          c->points.push_back(src_cov->points[i]);
          c->covariances.push_back(src_cov->covariances[i]);
        }
        level_cov = c;
      }
    }
    switch (cfg.method) {
      case RegistrationMethod::kIcp:
        return make_icp_objective(level_points, point_target, cfg.max_correspondence_dist * scale);
      case RegistrationMethod::kGicp:
        return make_gicp_objective(level_cov, point_target, cfg.max_correspondence_dist * scale);
      case RegistrationMethod::kFastGicp:
        return make_fast_gicp_objective(
            level_cov, std::make_shared<GaussianVoxelGrid>(build_gaussian_voxel_grid(
                           *tgt_cov, cfg.voxel_size * scale, cfg.min_points_per_voxel)));
    }
    return nullptr;
  };

  std::vector<double> levels = cfg.resolution_schedule;
  if (levels.empty()) levels.push_back(1.0);

  RegistrationResult total;
  RigidTransform pose = init;
  std::unique_ptr<Objective> objective;
  for (std::size_t level = 0; level < levels.size(); ++level) {
    objective = make_objective(levels[level]);
    // Coarse levels only need to land inside the next level's basin.
    RegistrationConfig level_cfg = cfg;
    level_cfg.translation_eps *= levels[level];
    level_cfg.rotation_eps *= levels[level];
    RegistrationResult r;
    try {
      const bool coarse = level + 1 < levels.size();
      r = solve(*objective, pose, level_cfg, coarse ? kCoarseStallLimit : 0);
    } catch (const NonConvergentError& e) {
      throw NonConvergentError(std::string(method_name(cfg.method)) + " level " + std::to_string(level) +
                               ": " + e.what());
    }
    pose = r.transform;
    total.iterations += r.iterations;
    total.converged = r.converged;
    total.history.insert(total.history.end(), r.history.begin(), r.history.end());
  }
  total.transform = pose;
  const auto final_corr = objective->correspondences(pose);
  total.inlier_count = final_corr.size();
  total.final_cost = objective->evaluate(pose, final_corr);

  const FitnessReport fit = fitness_score(tgt, src, pose, cfg.max_correspondence_dist);
  total.fitness = fit.fitness;
  total.fitness_mse = fit.mse;
  total.fitness_pairs = fit.pair_count;
  return total;
}

}  // namespace orchard
