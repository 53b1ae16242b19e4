// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace orchard {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

enum class PointLabel : std::uint8_t {
  kBackground = 0,
  kTrunk = 1,
  kBranch = 2,
  kClutter = 3,
};

/// Converts a stored 8-bit class code; throws ValidationError for codes > 3.
PointLabel label_from_code(int code);
std::string_view label_name(PointLabel label);

inline bool is_finite(const Vec3& p) { return p.allFinite(); }

struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<PointLabel> labels;
  std::optional<std::string> frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  void reserve(std::size_t n) {
    points.reserve(n);
    labels.reserve(n);
  }
  void push_back(const Vec3& p, PointLabel label) {
    points.push_back(p);
    labels.push_back(label);
  }

  /// Throws ValidationError when sizes differ or a point is not finite.
  void validate() const;

  /// Subset of points carrying `label`, in original order.
  LabeledPointCloud with_label(PointLabel label) const;
  /// Subset of points with any label other than Background.
  LabeledPointCloud foreground() const;
  std::size_t count(PointLabel label) const;
};

struct Twist {
  Vec3 omega = Vec3::Zero();  // axis-angle, radians
  Vec3 v = Vec3::Zero();      // meters

  static Twist from_vector(const Vec6& xi) { return {xi.head<3>(), xi.tail<3>()}; }
  Vec6 as_vector() const {
    Vec6 xi;
    xi << omega, v;
    return xi;
  }
};

/// Proper rigid motion x -> R x + t. Construction validates orthonormality.
class RigidTransform {
 public:
  static constexpr double kTolerance = 1e-9;

  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform from_matrix(const Mat4& m);
  /// Row-major 4x4, as stored in manifests and CLI output.
  static RigidTransform from_row_major(const std::vector<double>& values);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }
  RigidTransform operator*(const RigidTransform& rhs) const;
  RigidTransform inverse() const;

  Mat4 matrix() const;
  std::vector<double> row_major() const;

  /// Re-projects the rotation onto SO(3) (polar decomposition). Used after
  /// long chains of compositions that drift past kTolerance.
  RigidTransform orthonormalized() const;

  static bool is_rotation(const Mat3& r, double tol = kTolerance);

 private:
  struct Unchecked {};
  RigidTransform(const Mat3& r, const Vec3& t, Unchecked) : rotation_(r), translation_(t) {}

  Mat3 rotation_;
  Vec3 translation_;

  friend RigidTransform se3_exp(const Twist& xi);
};

Mat3 skew(const Vec3& w);

RigidTransform se3_exp(const Twist& xi);
/// Throws ValidationError if `t` is not a proper rotation.
Twist se3_log(const RigidTransform& t);

/// Rotation angle in radians, in [0, pi].
double rotation_angle(const Mat3& r);

LabeledPointCloud apply_transform(const RigidTransform& t, const LabeledPointCloud& cloud);

struct CameraIntrinsics {
  int width = 640;
  int height = 576;
  double fx = 504.0;
  double fy = 504.0;
  double cx = 319.5;
  double cy = 287.5;
  double depth_scale = 0.001;  // meters per raw depth unit

  void validate() const;
};

}  // namespace orchard
