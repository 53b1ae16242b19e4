// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "orchard/core.hpp"
#include "orchard/spatial.hpp"

namespace orchard {

enum class RegistrationMethod { kIcp, kGicp, kFastGicp };

std::string_view method_name(RegistrationMethod m);
/// Accepts "icp", "gicp", "fast_gicp"; throws ValidationError naming the bad value.
RegistrationMethod parse_method(std::string_view name);

struct RegistrationConfig {
  RegistrationMethod method = RegistrationMethod::kFastGicp;
  int max_iterations = 64;
  double translation_eps = 1e-5;  // m
  double rotation_eps = 1e-5;     // rad
  double max_correspondence_dist = 0.05;  // m; icp/gicp pairing and fitness
  int knn_k = 20;
  double voxel_size = 0.02;  // m; fast_gicp target cells
  int min_points_per_voxel = 6;
  double lm_lambda_init = 1e-6;
  /// Register only Trunk-labeled points (foliage-season mode).
  bool trunk_only = false;
  /// Coarse-to-fine levels. Each entry scales voxel_size (fast_gicp) or
  /// max_correspondence_dist (icp/gicp) for one solve seeded by the previous
  /// level. Empty means a single solve at scale 1.
  std::vector<double> resolution_schedule;

  void validate() const;
};

/// Points with per-point 3x3 covariances (m^2, or the unit-scale plane model).
struct CovarianceCloud {
  std::vector<Vec3> points;
  std::vector<Mat3> covariances;

  std::size_t size() const { return points.size(); }
};

/// Raw (1/k) sample covariance of each point's k nearest neighbors, the point
/// itself included.
std::vector<Mat3> neighborhood_covariances(std::span<const Vec3> points, int k);

/// R diag(1, 1, 1e-3) R^T with R the eigenvectors sorted by descending eigenvalue.
Mat3 regularize_plane(const Mat3& cov);

/// Plane-regularized neighborhood covariances. Throws if |cloud| < k or k < 4.
CovarianceCloud estimate_covariances(const LabeledPointCloud& cloud, int k);
CovarianceCloud estimate_covariances(std::span<const Vec3> points, int k);

struct VoxelKey {
  std::int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349669ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

/// Voxel-aggregated Gaussians: the fast_gicp target.
class GaussianVoxelGrid {
 public:
  struct Cell {
    VoxelKey key;
    std::size_t count = 0;
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
  };

  GaussianVoxelGrid() = default;
  GaussianVoxelGrid(double voxel_size, std::vector<Cell> cells);

  double voxel_size() const { return voxel_size_; }
  std::size_t size() const { return cells_.size(); }
  const std::vector<Cell>& cells() const { return cells_; }

  VoxelKey key_of(const Vec3& p) const;
  /// Index of the cell containing p, if that cell survived the count filter.
  std::optional<std::size_t> find(const Vec3& p) const;

 private:
  double voxel_size_ = 1.0;
  std::vector<Cell> cells_;  // sorted by key (x, y, z)
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> index_;
};

/// Bins by floor(coord / voxel_size). A cell stores the mean of its points and
/// the mean of member covariances plus the (1/n) scatter of members about that
/// mean. Cells with fewer than min_points members are dropped.
GaussianVoxelGrid build_gaussian_voxel_grid(const CovarianceCloud& cloud, double voxel_size,
                                            int min_points);

struct CostEvaluation {
  double cost = 0.0;
  std::size_t count = 0;  // correspondences used
};

/// Nearest-neighbor target for icp/gicp: points, covariances and a kd-tree.
class PointTarget {
 public:
  explicit PointTarget(CovarianceCloud cloud);
  const CovarianceCloud& cloud() const { return cloud_; }
  const KdTree& tree() const { return tree_; }

 private:
  CovarianceCloud cloud_;
  KdTree tree_;
};

/// One source/target pairing: target index is a point (icp/gicp) or cell (fast_gicp).
struct Correspondence {
  std::uint32_t source;
  std::uint32_t target;
};

/// Gauss-Newton system about the current pose for a left perturbation
/// T <- exp(delta) T, delta = (omega, v).
struct Linearization {
  Mat6 hessian = Mat6::Zero();
  Vec6 gradient = Vec6::Zero();
  double cost = 0.0;
  std::size_t count = 0;
};

/// Residual model shared by the three methods. Correspondences are found once
/// per outer iteration; evaluate/linearize reuse them.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::vector<Correspondence> correspondences(const RigidTransform& t) const = 0;
  virtual double evaluate(const RigidTransform& t, const std::vector<Correspondence>& c) const = 0;
  virtual Linearization linearize(const RigidTransform& t,
                                  const std::vector<Correspondence>& c) const = 0;
};

std::unique_ptr<Objective> make_icp_objective(std::span<const Vec3> source,
                                              std::shared_ptr<const PointTarget> target,
                                              double max_dist);
std::unique_ptr<Objective> make_gicp_objective(std::shared_ptr<const CovarianceCloud> source,
                                               std::shared_ptr<const PointTarget> target,
                                               double max_dist);
std::unique_ptr<Objective> make_fast_gicp_objective(std::shared_ptr<const CovarianceCloud> source,
                                                    std::shared_ptr<const GaussianVoxelGrid> target);

/// GICP Mahalanobis cost sum_i d_i^T (C_B + R C_A R^T)^-1 d_i at a fixed pose,
/// pairing each transformed source point with its nearest target point within
/// max_dist. Pure; zero correspondences give cost 0 with count 0.
CostEvaluation gicp_cost(const CovarianceCloud& source, const CovarianceCloud& target,
                         const RigidTransform& t, double max_dist);
/// Same cost with containing-voxel correspondences against a Gaussian grid.
CostEvaluation gicp_cost(const CovarianceCloud& source, const GaussianVoxelGrid& target,
                         const RigidTransform& t);

struct IterationRecord {
  int iteration = 0;
  std::size_t correspondences = 0;
  double cost_before = 0.0;  // at the current pose, this iteration's pairing
  double cost_after = 0.0;   // at the accepted pose, same pairing
  double lambda = 0.0;       // damping used by the accepted step
  int rejected_steps = 0;
};

struct RegistrationResult {
  RigidTransform transform;
  int iterations = 0;
  bool converged = false;
  double final_cost = 0.0;
  std::optional<double> fitness;  // absent when no pair lies within max_dist
  std::optional<double> fitness_mse;
  std::size_t fitness_pairs = 0;
  std::size_t inlier_count = 0;
  std::vector<IterationRecord> history;  // accepted steps, all levels
};

/// Damped Gauss-Newton minimization with the Levenberg rule (lambda x10 on a
/// rejected step, x0.1 on acceptance). Throws NonConvergentError with a
/// diagnostic if an iteration has fewer than 6 correspondences or damping
/// cannot produce a usable step.
RegistrationResult register_clouds(const LabeledPointCloud& source, const LabeledPointCloud& target,
                                   const RigidTransform& init, const RegistrationConfig& cfg);

/// Single-level solve on a prepared objective.
RegistrationResult optimize(const Objective& objective, const RigidTransform& init,
                            const RegistrationConfig& cfg);

}  // namespace orchard
