// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/fusion.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "orchard/error.hpp"
#include "orchard/parallel.hpp"

namespace orchard {

namespace {
constexpr std::size_t kMaxVoxels = 250'000'000;
}

std::string_view tracking_name(TrackingMode m) {
  return m == TrackingMode::kManifestPoses ? "manifest" : "frame_to_model";
}

TrackingMode parse_tracking(std::string_view name) {
  if (name == "manifest") return TrackingMode::kManifestPoses;
  if (name == "frame_to_model") return TrackingMode::kFrameToModel;
  throw ValidationError("invalid tracking mode '" + std::string(name) +
                        "' (expected one of: manifest, frame_to_model)");
}

void FusionConfig::validate() const {
  if (!(voxel_size > 0)) throw ValidationError("fusion.voxel_size must be positive");
  if (!(truncation_m() >= voxel_size)) throw ValidationError("fusion.truncation must be >= voxel_size");
  if (!(max_weight >= 1)) throw ValidationError("fusion.max_weight must be >= 1");
  if (!(extent.array() > 0).all()) throw ValidationError("fusion.extent must be positive");
  if (!origin.allFinite()) throw ValidationError("fusion.origin must be finite");
  if (!(max_depth > 0)) throw ValidationError("fusion.max_depth must be positive");
  tracker.validate();
}

TsdfVolume::TsdfVolume(const Vec3& origin, double voxel_size, std::array<int, 3> dims)
    : origin_(origin), voxel_size_(voxel_size), dims_(dims) {
  if (!(voxel_size > 0)) throw ValidationError("voxel_size must be positive");
  for (int d : dims)
    if (d <= 0) throw ValidationError("volume dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (n > kMaxVoxels) {
    throw ValidationError("volume of " + std::to_string(n) + " voxels exceeds the dense-grid limit; "
                          "shrink fusion.extent or grow fusion.voxel_size");
  }
  tsdf_.assign(n, 1.0);
  weight_.assign(n, 0.0f);
  votes_.assign(n, {0, 0, 0});
}

TsdfVolume TsdfVolume::from_config(const FusionConfig& cfg) {
  cfg.validate();
  std::array<int, 3> dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max(1, static_cast<int>(std::ceil(cfg.extent[a] / cfg.voxel_size - 1e-9)));
  }
  return TsdfVolume(cfg.origin, cfg.voxel_size, dims);
}

std::size_t TsdfVolume::observed_count() const {
  return static_cast<std::size_t>(std::count_if(weight_.begin(), weight_.end(), [](float w) { return w > 0; }));
}

void integrate_frame(TsdfVolume& volume, const DepthImage& depth, const MaskImage& mask,
                     const CameraIntrinsics& k, const RigidTransform& pose, const FusionConfig& cfg) {
  k.validate();
  if (depth.width != k.width || depth.height != k.height || mask.width != k.width ||
      mask.height != k.height) {
    throw ValidationError("frame dimensions do not match intrinsics");
  }
  if (!RigidTransform::is_rotation(pose.rotation())) throw ValidationError("frame pose is not rigid");

  const double trunc = cfg.truncation_m();
  const double inv_trunc = 1.0 / trunc;
  const auto max_w = static_cast<float>(cfg.max_weight);
  const RigidTransform world_to_cam = pose.inverse();
  const Mat3& r = world_to_cam.rotation();
  const Vec3 step_i = r.col(0) * volume.voxel_size();
  const auto [nx, ny, nz] = volume.dims();
  auto tsdf = volume.tsdf_data();
  auto weight = volume.weight_data();
  auto votes = volume.vote_data();
  const auto background = static_cast<std::uint8_t>(PointLabel::kBackground);

  auto fuse = [&](std::size_t idx, double obs) {
    const float w = weight[idx];
    tsdf[idx] = (tsdf[idx] * w + obs) / (w + 1.0);
    weight[idx] = std::min(w + 1.0f, max_w);
  };

  parallel_for(static_cast<std::size_t>(nz), [&](std::size_t k0, std::size_t k1) {
    for (int kk = static_cast<int>(k0); kk < static_cast<int>(k1); ++kk) {
      for (int j = 0; j < ny; ++j) {
        Vec3 p = world_to_cam.apply(volume.center(0, j, kk));
        for (int i = 0; i < nx; ++i, p += step_i) {
          const double z = p.z();
          if (z <= 0) continue;
          const double u = k.fx * p.x() / z + k.cx;
          const double v = k.fy * p.y() / z + k.cy;
          if (!(u > -0.5 && v > -0.5 && u < k.width - 0.5 && v < k.height - 0.5)) continue;
          const int ui = static_cast<int>(u + 0.5);
          const int vi = static_cast<int>(v + 0.5);
          const std::size_t pix = static_cast<std::size_t>(vi) * k.width + ui;
          const std::size_t idx = volume.index(i, j, kk);
          const double d = depth.data[pix] * k.depth_scale;
          if (depth.data[pix] == 0 || d > cfg.max_depth) {
            if (cfg.carve_missing_depth && z <= cfg.max_depth) fuse(idx, 1.0);
            continue;
          }
          const double sdf = d - z;
          const std::uint8_t label = mask.data[pix];
          if (label == background) {
            if (sdf >= trunc) fuse(idx, 1.0);  // free space in front of a masked-out return
            continue;
          }
          if (sdf <= -trunc) continue;
          fuse(idx, std::min(1.0, sdf * inv_trunc));
          if (sdf < trunc && label <= TsdfVolume::kVoteClasses) {
            auto& c = votes[idx][label - 1];
            if (c < 0xffff) ++c;
          }
        }
      }
    }
  });
}

SurfaceExtraction extract_surface(const TsdfVolume& volume) {
  SurfaceExtraction out;
  const auto [nx, ny, nz] = volume.dims();
  const std::array<std::array<int, 3>, 3> offsets{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  // Per-slice buffers keep output order independent of the thread count.
  std::vector<LabeledPointCloud> slices(static_cast<std::size_t>(nz));
  parallel_for(static_cast<std::size_t>(nz), [&](std::size_t k0, std::size_t k1) {
    for (int kk = static_cast<int>(k0); kk < static_cast<int>(k1); ++kk) {
      auto& slice = slices[static_cast<std::size_t>(kk)];
      for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
          const std::size_t a = volume.index(i, j, kk);
          if (volume.weight(a) <= 0) continue;
          const double ta = volume.tsdf(a);
          for (const auto& o : offsets) {
            const int i2 = i + o[0], j2 = j + o[1], k2 = kk + o[2];
            if (i2 >= nx || j2 >= ny || k2 >= nz) continue;
            const std::size_t b = volume.index(i2, j2, k2);
            if (volume.weight(b) <= 0) continue;
            const double tb = volume.tsdf(b);
            if ((ta < 0) == (tb < 0)) continue;
            const auto& va = volume.votes(a);
            const auto& vb = volume.votes(b);
            int best = -1;
            unsigned best_votes = 0;
            for (int c = 0; c < TsdfVolume::kVoteClasses; ++c) {
              const unsigned n = static_cast<unsigned>(va[c]) + vb[c];
              if (n > best_votes) {
                best_votes = n;
                best = c;
              }
            }
            if (best < 0) continue;
            const double s = ta / (ta - tb);
            const Vec3 ca = volume.center(i, j, kk);
            const Vec3 cb = volume.center(i2, j2, k2);
            slice.push_back(ca + s * (cb - ca), static_cast<PointLabel>(best + 1));
          }
        }
      }
    }
  });
  std::size_t total = 0;
  for (const auto& s : slices) total += s.size();
  out.cloud.reserve(total);
  for (const auto& s : slices) {
    out.cloud.points.insert(out.cloud.points.end(), s.points.begin(), s.points.end());
    out.cloud.labels.insert(out.cloud.labels.end(), s.labels.begin(), s.labels.end());
  }
  if (out.cloud.empty()) {
    out.warning = volume.observed_count() == 0 ? "volume has no observed voxels; surface is empty"
                                               : "volume has no labeled zero crossings; surface is empty";
  }
  return out;
}

FusionResult fuse_frames(std::span<const FrameData> frames, const CameraIntrinsics& k,
                         const FusionConfig& cfg) {
  cfg.validate();
  if (frames.empty()) throw ValidationError("fusion needs at least one frame");
  FusionResult result{TsdfVolume::from_config(cfg), {}, {}, {}};
  RegistrationConfig tracker = cfg.tracker;
  tracker.method = RegistrationMethod::kFastGicp;

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const FrameData& frame = frames[f];
    RigidTransform pose;
    if (cfg.tracking == TrackingMode::kManifestPoses) {
      if (!frame.pose) throw ValidationError("frame " + std::to_string(f) + " has no pose (manifest tracking)");
      pose = *frame.pose;
    } else if (f > 0) {
      const LabeledPointCloud cloud = backproject_frame(frame.depth, frame.mask, k, cfg.tracking_input);
      const SurfaceExtraction model = extract_surface(result.volume);
      RegistrationResult reg;
      try {
        reg = register_clouds(cloud, model.cloud, result.trajectory.back(), tracker);
      } catch (const Error& e) {
        throw NonConvergentError("frame-to-model tracking failed at frame " + std::to_string(f) + ": " + e.what());
      }
      if (!reg.converged) {
        throw NonConvergentError("frame-to-model tracking failed at frame " + std::to_string(f) +
                                 ": no convergence after " + std::to_string(reg.iterations) + " iterations");
      }
      pose = reg.transform;
    }
    integrate_frame(result.volume, frame.depth, frame.mask, k, pose, cfg);
    result.trajectory.push_back(pose);
  }
  SurfaceExtraction surface = extract_surface(result.volume);
  result.model = std::move(surface.cloud);
  if (surface.warning) result.warnings.push_back(*surface.warning);
  return result;
}

FusionResult fuse_sequence(const std::vector<FrameRecord>& frames, const CameraIntrinsics& k,
                           const FusionConfig& cfg) {
  std::vector<FrameData> data;
  data.reserve(frames.size());
  for (const auto& rec : frames) {
    data.push_back({read_depth_pgm(rec.depth_path), read_mask_pgm(rec.mask_path), rec.pose});
  }
  return fuse_frames(data, k, cfg);
}

// ---------------------------------------------------------------------------
// Dump

namespace {

template <class T>
void write_raw(const std::filesystem::path& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

template <class T>
void read_raw(const std::filesystem::path& path, std::span<T> values) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (in.gcount() != static_cast<std::streamsize>(values.size_bytes())) {
    throw ValidationError(path.string() + ": truncated volume array");
  }
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return prefix.string() + suffix;
}

}  // namespace

void write_volume_dump(const std::filesystem::path& prefix, const TsdfVolume& volume) {
  nlohmann::json side;
  side["origin_m"] = {volume.origin().x(), volume.origin().y(), volume.origin().z()};
  side["voxel_size_m"] = volume.voxel_size();
  side["dims"] = {volume.dims()[0], volume.dims()[1], volume.dims()[2]};
  side["layout"] = "x fastest, then y, then z";
  side["arrays"] = {
      {"tsdf", {{"file", with_suffix(prefix, ".tsdf.f64").filename().string()}, {"dtype", "float64"}}},
      {"weight", {{"file", with_suffix(prefix, ".weight.f32").filename().string()}, {"dtype", "float32"}}},
      {"votes", {{"file", with_suffix(prefix, ".votes.u16").filename().string()},
                 {"dtype", "uint16"},
                 {"components", {"trunk", "branch", "clutter"}}}}};
  const std::string text = side.dump(2) + "\n";
  write_file_bytes(with_suffix(prefix, ".json"),
                   std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_raw(with_suffix(prefix, ".tsdf.f64"), volume.tsdf_data());
  write_raw(with_suffix(prefix, ".weight.f32"), volume.weight_data());
  write_raw(with_suffix(prefix, ".votes.u16"), volume.vote_data());
}

TsdfVolume read_volume_dump(const std::filesystem::path& prefix) {
  const auto bytes = read_file_bytes(with_suffix(prefix, ".json"));
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(bytes.begin(), bytes.end());
    TsdfVolume v(Vec3(side["origin_m"][0], side["origin_m"][1], side["origin_m"][2]),
                 side["voxel_size_m"].get<double>(),
                 {side["dims"][0].get<int>(), side["dims"][1].get<int>(), side["dims"][2].get<int>()});
    read_raw(with_suffix(prefix, ".tsdf.f64"), v.tsdf_data());
    read_raw(with_suffix(prefix, ".weight.f32"), v.weight_data());
    read_raw(with_suffix(prefix, ".votes.u16"), v.vote_data());
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("volume sidecar: ") + e.what());
  }
}

}  // namespace orchard
