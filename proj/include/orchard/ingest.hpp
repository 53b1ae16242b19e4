// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orchard/core.hpp"

namespace orchard {

/// Row-major, top-left origin. Raw units; meters = value * depth_scale. 0 = invalid.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  std::uint16_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  std::uint16_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
};

/// Row-major class codes (PointLabel values).
struct MaskImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  MaskImage() = default;
  MaskImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
};

// Binary PGM ("P5"). Depth uses maxval 65535 with big-endian samples, masks
// maxval 255. Decoding errors carry the byte offset of the problem.
std::vector<std::uint8_t> encode_depth_pgm(const DepthImage& image);
std::vector<std::uint8_t> encode_mask_pgm(const MaskImage& image);
DepthImage decode_depth_pgm(std::span<const std::uint8_t> bytes);
MaskImage decode_mask_pgm(std::span<const std::uint8_t> bytes);

DepthImage read_depth_pgm(const std::filesystem::path& path);
MaskImage read_mask_pgm(const std::filesystem::path& path);
void write_depth_pgm(const std::filesystem::path& path, const DepthImage& image);
void write_mask_pgm(const std::filesystem::path& path, const MaskImage& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Per-class erosion with a 4-connected structuring element applied `px`
/// times. A pixel survives only if its whole diamond neighborhood (clipped to
/// the image) has the same class. Background is never grown.
MaskImage erode_mask(const MaskImage& mask, int px);

struct BackprojectOptions {
  int erode_px = 2;
  double max_range = 3.0;  // meters; farther returns are dropped
};

/// Camera-frame cloud (+z forward, +x right, +y down) of every valid-depth
/// pixel whose eroded label is Trunk or Branch.
LabeledPointCloud backproject_frame(const DepthImage& depth, const MaskImage& mask,
                                    const CameraIntrinsics& k,
                                    const BackprojectOptions& options = {});

enum class PlyFormat { kAscii, kBinaryLittleEndian };

/// Vertex element with float x, y, z and uchar label.
std::vector<std::uint8_t> encode_ply(const LabeledPointCloud& cloud,
                                     PlyFormat format = PlyFormat::kBinaryLittleEndian);
LabeledPointCloud decode_ply(std::span<const std::uint8_t> bytes);
LabeledPointCloud read_ply(const std::filesystem::path& path);
void write_ply(const std::filesystem::path& path, const LabeledPointCloud& cloud,
               PlyFormat format = PlyFormat::kBinaryLittleEndian);

struct FrameRecord {
  std::string depth_path;
  std::string mask_path;
  std::optional<RigidTransform> pose;  // camera-to-world
  std::optional<double> timestamp;
};

struct Manifest {
  CameraIntrinsics intrinsics;
  std::vector<FrameRecord> frames;
};

/// Relative frame paths are resolved against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
std::string manifest_to_json(const Manifest& manifest);

}  // namespace orchard
