// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/core.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "orchard/error.hpp"

namespace orchard {

PointLabel label_from_code(int code) {
  if (code < 0 || code > 3) {
    throw ValidationError("invalid label code " + std::to_string(code) +
                          " (expected 0..3)");
  }
  return static_cast<PointLabel>(code);
}

std::string_view label_name(PointLabel label) {
  switch (label) {
    case PointLabel::kBackground: return "background";
    case PointLabel::kTrunk: return "trunk";
    case PointLabel::kBranch: return "branch";
    case PointLabel::kClutter: return "clutter";
  }
  return "unknown";
}

void LabeledPointCloud::validate() const {
  if (points.size() != labels.size()) {
    throw ValidationError("cloud has " + std::to_string(points.size()) + " points but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_finite(points[i])) {
      throw ValidationError("cloud point " + std::to_string(i) + " is not finite");
    }
    if (static_cast<int>(labels[i]) > 3) {
      throw ValidationError("cloud label " + std::to_string(i) + " out of range");
    }
  }
}

LabeledPointCloud LabeledPointCloud::with_label(PointLabel label) const {
  LabeledPointCloud out;
  out.frame_id = frame_id;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] == label) out.push_back(points[i], label);
  }
  return out;
}

LabeledPointCloud LabeledPointCloud::foreground() const {
  LabeledPointCloud out;
  out.frame_id = frame_id;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (labels[i] != PointLabel::kBackground) out.push_back(points[i], labels[i]);
  }
  return out;
}

std::size_t LabeledPointCloud::count(PointLabel label) const {
  std::size_t n = 0;
  for (auto l : labels) n += (l == label);
  return n;
}

bool RigidTransform::is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  const Mat3 residual = r.transpose() * r - Mat3::Identity();
  if (residual.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation_)) {
    throw ValidationError("rotation is not orthonormal with determinant +1");
  }
  if (!translation_.allFinite()) {
    throw ValidationError("translation is not finite");
  }
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  const Eigen::RowVector4d bottom = m.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > kTolerance) {
    throw ValidationError("bottom row of a rigid transform must be [0 0 0 1]");
  }
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::from_row_major(const std::vector<double>& values) {
  if (values.size() != 16) {
    throw ValidationError("transform needs 16 values, got " + std::to_string(values.size()));
  }
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = values[static_cast<std::size_t>(4 * r + c)];
  return from_matrix(m);
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_, Unchecked{}};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -(rt * translation_), Unchecked{}};
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

std::vector<double> RigidTransform::row_major() const {
  const Mat4 m = matrix();
  std::vector<double> out(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(4 * r + c)] = m(r, c);
  return out;
}

RigidTransform RigidTransform::orthonormalized() const {
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) *= -1.0;
  return {u * v.transpose(), translation_, Unchecked{}};
}

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0, -w.z(), w.y(),
       w.z(), 0, -w.x(),
       -w.y(), w.x(), 0;
  return s;
}

namespace {

constexpr double kSmallAngle = 1e-9;
// Below this angle the (theta - sin theta) / theta^3 and log-map V^-1
// coefficients are evaluated by series to avoid cancellation.
constexpr double kSeriesAngle = 1e-3;

}  // namespace

RigidTransform se3_exp(const Twist& xi) {
  const double theta = xi.omega.norm();
  const Mat3 w = skew(xi.omega);
  const Mat3 w2 = w * w;
  double a, b, c;
  if (theta < kSmallAngle) {
    a = 1.0;
    b = 0.5;
    c = 1.0 / 6.0;
  } else {
    const double t2 = theta * theta;
    a = std::sin(theta) / theta;
    const double half = std::sin(0.5 * theta);
    b = 2.0 * half * half / t2;
    c = theta < kSeriesAngle ? 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
                             : (theta - std::sin(theta)) / (t2 * theta);
  }
  const Mat3 r = Mat3::Identity() + a * w + b * w2;
  const Mat3 v = Mat3::Identity() + b * w + c * w2;
  return {r, v * xi.v, RigidTransform::Unchecked{}};
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
  // acos is ill-conditioned near 0; the skew part gives sin(theta).
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

Twist se3_log(const RigidTransform& t) {
  const Mat3& r = t.rotation();
  if (!RigidTransform::is_rotation(r)) {
    throw ValidationError("se3_log: rotation is not orthonormal");
  }
  const double theta = rotation_angle(r);
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  Vec3 omega;
  if (theta < kSmallAngle) {
    omega = 0.5 * s;
  } else if (std::numbers::pi - theta < 1e-3) {
    // Near pi the skew part vanishes; recover the axis from the symmetric part.
    const Mat3 sym = 0.5 * (r + r.transpose()) - std::cos(theta) * Mat3::Identity();
    int k = 0;
    sym.diagonal().maxCoeff(&k);
    Vec3 axis = sym.col(k).normalized();
    if (axis.dot(s) < 0) axis = -axis;
    omega = theta * axis;
  } else {
    omega = (theta / (2.0 * std::sin(theta))) * s;
  }

  const Mat3 w = skew(omega);
  double coeff;
  if (theta < kSeriesAngle) {
    const double t2 = theta * theta;
    coeff = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const double a = std::sin(theta) / theta;
    const double half = std::sin(0.5 * theta);
    const double b = 2.0 * half * half / (theta * theta);
    coeff = (1.0 - a / (2.0 * b)) / (theta * theta);
  }
  const Mat3 v_inv = Mat3::Identity() - 0.5 * w + coeff * w * w;
  return {omega, v_inv * t.translation()};
}

LabeledPointCloud apply_transform(const RigidTransform& t, const LabeledPointCloud& cloud) {
  LabeledPointCloud out;
  out.frame_id = cloud.frame_id;
  out.labels = cloud.labels;
  out.points.resize(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) out.points[i] = t.apply(cloud.points[i]);
  return out;
}

void CameraIntrinsics::validate() const {
  if (width <= 0) throw ValidationError("width must be positive");
  if (height <= 0) throw ValidationError("height must be positive");
  if (!(fx > 0)) throw ValidationError("fx must be positive");
  if (!(fy > 0)) throw ValidationError("fy must be positive");
  if (!(cx >= 0 && cx < width)) throw ValidationError("cx must lie in [0, width)");
  if (!(cy >= 0 && cy < height)) throw ValidationError("cy must lie in [0, height)");
  if (!(depth_scale > 0)) throw ValidationError("depth_scale must be positive");
}

}  // namespace orchard
