// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "orchard/core.hpp"

namespace orchard {

/// Static 3-d tree over a copied point set. All queries are exact and break
/// distance ties by the lowest point index, so results are reproducible.
class KdTree {
 public:
  struct Neighbor {
    std::size_t index;
    double dist2;
  };

  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 12);

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// Nearest point with squared distance <= max_dist2.
  std::optional<Neighbor> nearest(const Vec3& q,
                                  double max_dist2 = std::numeric_limits<double>::infinity()) const;

  /// The k nearest points ordered by (dist2, index). Returns fewer than k only
  /// when the tree holds fewer points.
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const;

  /// Indices of all points within `radius` (inclusive), ascending.
  std::vector<std::size_t> radius_search(const Vec3& q, double radius) const;

 private:
  struct Node {
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    int dim = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void nearest_rec(std::int32_t node, const Vec3& q, Neighbor& best) const;
  void knn_rec(std::int32_t node, const Vec3& q, std::size_t k, std::vector<Neighbor>& heap) const;
  void radius_rec(std::int32_t node, const Vec3& q, double r2, std::vector<std::size_t>& out) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// Single-linkage connected components under `link_radius`. Clusters are
/// returned by ascending smallest index, members ascending; components with
/// fewer than `min_size` points are dropped.
std::vector<std::vector<std::size_t>> euclidean_clusters(std::span<const Vec3> points,
                                                         double link_radius,
                                                         std::size_t min_size = 1);

struct PrincipalAxes {
  Vec3 centroid = Vec3::Zero();
  Vec3 eigenvalues = Vec3::Zero();     // descending
  Mat3 eigenvectors = Mat3::Identity();  // columns match eigenvalues
};

/// Centroid and eigen-decomposition of the (1/n) scatter matrix.
PrincipalAxes principal_axes(std::span<const Vec3> points);

}  // namespace orchard
