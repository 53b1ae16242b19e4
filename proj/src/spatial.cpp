// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/spatial.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <deque>
#include <numeric>

namespace orchard {

namespace {

bool closer(double d2, std::size_t idx, const KdTree::Neighbor& than) {
  return d2 < than.dist2 || (d2 == than.dist2 && idx < than.index);
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{-1, -1, begin, end, 0, 0.0});
  if (end - begin <= leaf_size_) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int dim = 0;
  (hi - lo).maxCoeff(&dim);
  if (hi[dim] == lo[dim]) return id;  // all coincident; keep as one leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = points_[a][dim], cb = points_[b][dim];
                     return ca < cb || (ca == cb && a < b);
                   });
  const double split = points_[order_[mid]][dim];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].dim = dim;
  nodes_[id].split = split;
  return id;
}

std::optional<KdTree::Neighbor> KdTree::nearest(const Vec3& q, double max_dist2) const {
  if (points_.empty()) return std::nullopt;
  Neighbor best{std::numeric_limits<std::size_t>::max(), max_dist2};
  nearest_rec(0, q, best);
  if (best.index == std::numeric_limits<std::size_t>::max()) return std::nullopt;
  return best;
}

void KdTree::nearest_rec(std::int32_t id, const Vec3& q, Neighbor& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (closer(d2, idx, best)) best = {idx, d2};
    }
    return;
  }
  const double diff = q[n.dim] - n.split;
  const std::int32_t first = diff < 0 ? n.left : n.right;
  const std::int32_t second = diff < 0 ? n.right : n.left;
  nearest_rec(first, q, best);
  if (diff * diff <= best.dist2) nearest_rec(second, q, best);
}

std::vector<KdTree::Neighbor> KdTree::knn(const Vec3& q, std::size_t k) const {
  std::vector<Neighbor> heap;
  if (k == 0 || points_.empty()) return heap;
  heap.reserve(k + 1);
  knn_rec(0, q, k, heap);
  return heap;
}

void KdTree::knn_rec(std::int32_t id, const Vec3& q, std::size_t k,
                     std::vector<Neighbor>& best) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (best.size() == k && !closer(d2, idx, best.back())) continue;
      // `best` stays sorted; k is small so insertion beats a heap.
      auto pos = std::find_if(best.begin(), best.end(),
                              [&](const Neighbor& b) { return closer(d2, idx, b); });
      best.insert(pos, Neighbor{idx, d2});
      if (best.size() > k) best.pop_back();
    }
    return;
  }
  const double diff = q[n.dim] - n.split;
  const std::int32_t first = diff < 0 ? n.left : n.right;
  const std::int32_t second = diff < 0 ? n.right : n.left;
  knn_rec(first, q, k, best);
  if (best.size() < k || diff * diff <= best.back().dist2) knn_rec(second, q, k, best);
}

std::vector<std::size_t> KdTree::radius_search(const Vec3& q, double radius) const {
  std::vector<std::size_t> out;
  if (points_.empty()) return out;
  radius_rec(0, q, radius * radius, out);
  std::sort(out.begin(), out.end());
  return out;
}

void KdTree::radius_rec(std::int32_t id, const Vec3& q, double r2,
                        std::vector<std::size_t>& out) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.left < 0) {
    for (std::uint32_t i = n.begin; i < n.end; ++i) {
      const std::uint32_t idx = order_[i];
      if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
    }
    return;
  }
  const double diff = q[n.dim] - n.split;
  const std::int32_t first = diff < 0 ? n.left : n.right;
  const std::int32_t second = diff < 0 ? n.right : n.left;
  radius_rec(first, q, r2, out);
  if (diff * diff <= r2) radius_rec(second, q, r2, out);
}

std::vector<std::vector<std::size_t>> euclidean_clusters(std::span<const Vec3> points,
                                                         double link_radius,
                                                         std::size_t min_size) {
  std::vector<std::vector<std::size_t>> clusters;
  if (points.empty()) return clusters;
  const KdTree tree(points);
  std::vector<char> visited(points.size(), 0);
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < points.size(); ++seed) {
    if (visited[seed]) continue;
    std::vector<std::size_t> members;
    visited[seed] = 1;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      members.push_back(cur);
      for (std::size_t nb : tree.radius_search(points[cur], link_radius)) {
        if (!visited[nb]) {
          visited[nb] = 1;
          queue.push_back(nb);
        }
      }
    }
    if (members.size() >= min_size) {
      std::sort(members.begin(), members.end());
      clusters.push_back(std::move(members));
    }
  }
  return clusters;
}

PrincipalAxes principal_axes(std::span<const Vec3> points) {
  PrincipalAxes axes;
  if (points.empty()) return axes;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    scatter += d * d.transpose();
  }
  scatter /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(scatter);
  axes.centroid = mean;
  for (int i = 0; i < 3; ++i) {
    axes.eigenvalues[i] = solver.eigenvalues()[2 - i];
    axes.eigenvectors.col(i) = solver.eigenvectors().col(2 - i);
  }
  return axes;
}

}  // namespace orchard
