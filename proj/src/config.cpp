// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "orchard/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "orchard/error.hpp"

namespace orchard {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError("config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError("config: " + where(key) + " has the wrong type");
    }
  }

  void get_vec3(const char* key, Vec3& out) {
    std::vector<double> v{out.x(), out.y(), out.z()};
    get(key, v);
    if (v.size() != 3) throw ValidationError("config: " + where(key) + " must have 3 entries");
    out = Vec3(v[0], v[1], v[2]);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ValidationError("config: unknown key '" + where(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

RegistrationConfig read_registration(const json& j, const std::string& path, RegistrationConfig cfg) {
  Section s(j, path);
  std::string method{method_name(cfg.method)};
  s.get("method", method);
  try {
    cfg.method = parse_method(method);
  } catch (const ValidationError& e) {
    throw ValidationError("config: " + s.where("method") + ": " + e.what());
  }
  s.get("max_iterations", cfg.max_iterations);
  s.get("translation_eps_m", cfg.translation_eps);
  s.get("rotation_eps_rad", cfg.rotation_eps);
  s.get("max_correspondence_dist_m", cfg.max_correspondence_dist);
  s.get("knn_k", cfg.knn_k);
  s.get("voxel_size_m", cfg.voxel_size);
  s.get("min_points_per_voxel", cfg.min_points_per_voxel);
  s.get("lm_lambda_init", cfg.lm_lambda_init);
  s.get("trunk_only", cfg.trunk_only);
  s.get("resolution_schedule", cfg.resolution_schedule);
  s.finish();
  return cfg;
}

BackprojectOptions read_backproject(const json& j, const std::string& path, BackprojectOptions opt) {
  Section s(j, path);
  s.get("erode_px", opt.erode_px);
  s.get("max_range_m", opt.max_range);
  s.finish();
  return opt;
}

json backproject_json(const BackprojectOptions& o) { return {{"erode_px", o.erode_px}, {"max_range_m", o.max_range}}; }

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

void PipelineConfig::validate() const {
  fusion.validate();
  registration.validate();
  measurement.validate();
  if (ingest.erode_px < 0) throw ValidationError("config: ingest.erode_px must be non-negative");
  if (!(ingest.max_range > 0)) throw ValidationError("config: ingest.max_range_m must be positive");
}

json to_json(const RegistrationConfig& c) {
  return {{"method", std::string(method_name(c.method))},
          {"max_iterations", c.max_iterations},
          {"translation_eps_m", c.translation_eps},
          {"rotation_eps_rad", c.rotation_eps},
          {"max_correspondence_dist_m", c.max_correspondence_dist},
          {"knn_k", c.knn_k},
          {"voxel_size_m", c.voxel_size},
          {"min_points_per_voxel", c.min_points_per_voxel},
          {"lm_lambda_init", c.lm_lambda_init},
          {"trunk_only", c.trunk_only},
          {"resolution_schedule", c.resolution_schedule}};
}

RegistrationConfig registration_config_from_json(const json& j, const RegistrationConfig& base) {
  RegistrationConfig cfg = read_registration(j, "registration", base);
  cfg.validate();
  return cfg;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig cfg;
  Section root(j, "");
  if (const json* f = root.child("fusion")) {
    Section s(*f, "fusion");
    FusionConfig& fc = cfg.fusion;
    s.get("voxel_size_m", fc.voxel_size);
    if (const json* t = s.child("truncation_m"); t && !t->is_null()) {
      if (!t->is_number()) throw ValidationError("config: fusion.truncation_m has the wrong type");
      fc.truncation = t->get<double>();
    }
    s.get("max_weight", fc.max_weight);
    std::string tracking{tracking_name(fc.tracking)};
    s.get("tracking", tracking);
    try {
      fc.tracking = parse_tracking(tracking);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("config: fusion.tracking: ") + e.what());
    }
    s.get_vec3("origin_m", fc.origin);
    s.get_vec3("extent_m", fc.extent);
    s.get("max_depth_m", fc.max_depth);
    s.get("carve_missing_depth", fc.carve_missing_depth);
    if (const json* t = s.child("tracker")) fc.tracker = read_registration(*t, "fusion.tracker", fc.tracker);
    if (const json* t = s.child("tracking_input"))
      fc.tracking_input = read_backproject(*t, "fusion.tracking_input", fc.tracking_input);
    s.finish();
  }
  if (const json* r = root.child("registration")) cfg.registration = read_registration(*r, "registration", cfg.registration);
  if (const json* m = root.child("measurement")) {
    Section s(*m, "measurement");
    MeasurementConfig& mc = cfg.measurement;
    s.get_vec3("up", mc.up);
    s.get("trunk_slab_thickness_m", mc.trunk_slab_thickness);
    s.get("trunk_station_fractions", mc.trunk_station_fractions);
    s.get("branch_offset_m", mc.branch_offset);
    s.get("branch_slab_thickness_m", mc.branch_slab_thickness);
    s.get("link_radius_m", mc.link_radius);
    s.get("min_cluster_points", mc.min_cluster_points);
    s.get("axis_neighborhood_m", mc.axis_neighborhood);
    std::string mode = mc.spacing_mode == SpacingMode::kEuclidean ? "euclidean" : "station_difference";
    s.get("spacing_mode", mode);
    if (mode == "euclidean") {
      mc.spacing_mode = SpacingMode::kEuclidean;
    } else if (mode == "station_difference") {
      mc.spacing_mode = SpacingMode::kStationDifference;
    } else {
      throw ValidationError("config: measurement.spacing_mode: invalid value '" + mode +
                            "' (expected one of: euclidean, station_difference)");
    }
    s.get("min_trunk_points", mc.min_trunk_points);
    s.get("min_slab_points", mc.min_slab_points);
    s.get("min_arc_coverage_deg", mc.min_arc_coverage_deg);
    s.finish();
  }
  if (const json* i = root.child("ingest")) cfg.ingest = read_backproject(*i, "ingest", cfg.ingest);
  if (const json* o = root.child("output")) {
    Section s(*o, "output");
    std::string fmt = cfg.ply_format == PlyFormat::kAscii ? "ascii" : "binary_little_endian";
    s.get("ply_format", fmt);
    if (fmt == "ascii") {
      cfg.ply_format = PlyFormat::kAscii;
    } else if (fmt == "binary_little_endian") {
      cfg.ply_format = PlyFormat::kBinaryLittleEndian;
    } else {
      throw ValidationError("config: output.ply_format: invalid value '" + fmt +
                            "' (expected one of: ascii, binary_little_endian)");
    }
    s.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ValidationError("config: " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

json to_json(const PipelineConfig& c) {
  const FusionConfig& f = c.fusion;
  const MeasurementConfig& m = c.measurement;
  json j;
  j["fusion"] = {{"voxel_size_m", f.voxel_size},
                 {"truncation_m", f.truncation ? json(*f.truncation) : json(nullptr)},
                 {"max_weight", f.max_weight},
                 {"tracking", std::string(tracking_name(f.tracking))},
                 {"origin_m", vec3_json(f.origin)},
                 {"extent_m", vec3_json(f.extent)},
                 {"max_depth_m", f.max_depth},
                 {"carve_missing_depth", f.carve_missing_depth},
                 {"tracker", to_json(f.tracker)},
                 {"tracking_input", backproject_json(f.tracking_input)}};
  j["registration"] = to_json(c.registration);
  j["measurement"] = {{"up", vec3_json(m.up)},
                      {"trunk_slab_thickness_m", m.trunk_slab_thickness},
                      {"trunk_station_fractions", m.trunk_station_fractions},
                      {"branch_offset_m", m.branch_offset},
                      {"branch_slab_thickness_m", m.branch_slab_thickness},
                      {"link_radius_m", m.link_radius},
                      {"min_cluster_points", m.min_cluster_points},
                      {"axis_neighborhood_m", m.axis_neighborhood},
                      {"spacing_mode", m.spacing_mode == SpacingMode::kEuclidean ? "euclidean" : "station_difference"},
                      {"min_trunk_points", m.min_trunk_points},
                      {"min_slab_points", m.min_slab_points},
                      {"min_arc_coverage_deg", m.min_arc_coverage_deg}};
  j["ingest"] = backproject_json(c.ingest);
  j["output"] = {{"ply_format", c.ply_format == PlyFormat::kAscii ? "ascii" : "binary_little_endian"}};
  return j;
}

}  // namespace orchard
