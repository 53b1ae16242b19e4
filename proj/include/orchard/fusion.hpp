// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orchard/core.hpp"
#include "orchard/ingest.hpp"
#include "orchard/registration.hpp"

namespace orchard {

enum class TrackingMode { kManifestPoses, kFrameToModel };

std::string_view tracking_name(TrackingMode m);
TrackingMode parse_tracking(std::string_view name);

struct FusionConfig {
  double voxel_size = 0.004;          // m
  std::optional<double> truncation;   // m; defaults to 4 * voxel_size
  double max_weight = 100.0;
  TrackingMode tracking = TrackingMode::kManifestPoses;
  Vec3 origin = Vec3(-0.75, -1.25, -0.75);  // min corner of the dense box, m
  Vec3 extent = Vec3(1.5, 2.5, 1.5);        // box size, m
  double max_depth = 3.0;  // m; farther returns count as missing
  /// Treat pixels without a depth return as free space out to max_depth.
  /// Off by default: real sensors drop returns on surfaces too.
  bool carve_missing_depth = false;
  /// Registration settings for frame-to-model tracking (method is forced to fast_gicp).
  RegistrationConfig tracker;
  BackprojectOptions tracking_input;

  double truncation_m() const { return truncation.value_or(4.0 * voxel_size); }
  void validate() const;
};

/// Dense TSDF grid. Voxel (i, j, k) is centered at origin + (i + 1/2, j + 1/2, k + 1/2) * voxel_size.
class TsdfVolume {
 public:
  static constexpr int kVoteClasses = 3;  // Trunk, Branch, Clutter

  TsdfVolume(const Vec3& origin, double voxel_size, std::array<int, 3> dims);
  static TsdfVolume from_config(const FusionConfig& cfg);

  const Vec3& origin() const { return origin_; }
  double voxel_size() const { return voxel_size_; }
  const std::array<int, 3>& dims() const { return dims_; }
  std::size_t voxel_count() const { return tsdf_.size(); }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i;
  }
  Vec3 center(int i, int j, int k) const {
    return origin_ + voxel_size_ * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }

  double tsdf(std::size_t idx) const { return tsdf_[idx]; }
  float weight(std::size_t idx) const { return weight_[idx]; }
  const std::array<std::uint16_t, kVoteClasses>& votes(std::size_t idx) const { return votes_[idx]; }
  std::size_t observed_count() const;

  std::span<double> tsdf_data() { return tsdf_; }
  std::span<float> weight_data() { return weight_; }
  std::span<std::array<std::uint16_t, kVoteClasses>> vote_data() { return votes_; }
  std::span<const double> tsdf_data() const { return tsdf_; }
  std::span<const float> weight_data() const { return weight_; }
  std::span<const std::array<std::uint16_t, kVoteClasses>> vote_data() const { return votes_; }

 private:
  Vec3 origin_;
  double voxel_size_;
  std::array<int, 3> dims_;
  std::vector<double> tsdf_;
  std::vector<float> weight_;
  std::vector<std::array<std::uint16_t, kVoteClasses>> votes_;
};

/// Projective TSDF update with frame weight 1. `pose` is camera-to-world.
void integrate_frame(TsdfVolume& volume, const DepthImage& depth, const MaskImage& mask,
                     const CameraIntrinsics& k, const RigidTransform& pose, const FusionConfig& cfg);

struct SurfaceExtraction {
  LabeledPointCloud cloud;
  std::optional<std::string> warning;  // set when nothing could be extracted
};

/// Zero crossings along +x, +y, +z between observed neighbors, linearly
/// interpolated; labeled by the summed votes of both voxels (ties -> lower code).
/// Crossings whose voxels carry no votes are skipped.
SurfaceExtraction extract_surface(const TsdfVolume& volume);

struct FrameData {
  DepthImage depth;
  MaskImage mask;
  std::optional<RigidTransform> pose;
};

struct FusionResult {
  TsdfVolume volume;
  LabeledPointCloud model;
  std::vector<RigidTransform> trajectory;
  std::vector<std::string> warnings;
};

FusionResult fuse_frames(std::span<const FrameData> frames, const CameraIntrinsics& k,
                         const FusionConfig& cfg);
/// Loads each record's PGMs and fuses them in order.
FusionResult fuse_sequence(const std::vector<FrameRecord>& frames, const CameraIntrinsics& k,
                           const FusionConfig& cfg);

/// Debug dump: <prefix>.json sidecar plus raw little-endian arrays
/// <prefix>.tsdf.f64, <prefix>.weight.f32 and <prefix>.votes.u16.
void write_volume_dump(const std::filesystem::path& prefix, const TsdfVolume& volume);
TsdfVolume read_volume_dump(const std::filesystem::path& prefix);

}  // namespace orchard
