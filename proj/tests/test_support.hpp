// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "orchard/core.hpp"

namespace orchard::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("orchardfuse_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

/// Rotation by `angle_rad` about a random axis, translation of length `dist`.
inline RigidTransform random_perturbation(std::mt19937_64& rng, double angle_rad, double dist) {
  return se3_exp(Twist{random_unit(rng) * angle_rad, random_unit(rng) * dist});
}

inline RigidTransform random_transform(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(0.0, 3.0);
  std::uniform_real_distribution<double> d(0.0, 2.0);
  return random_perturbation(rng, ang(rng), d(rng));
}

inline LabeledPointCloud random_cloud(std::mt19937_64& rng, std::size_t n, double half_extent = 1.0) {
  std::uniform_real_distribution<double> u(-half_extent, half_extent);
  std::uniform_int_distribution<int> lab(0, 3);
  LabeledPointCloud c;
  c.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.push_back(Vec3(u(rng), u(rng), u(rng)), static_cast<PointLabel>(lab(rng)));
  return c;
}

}  // namespace orchard::testing
