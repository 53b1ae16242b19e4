// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>

#include "orchard/config.hpp"
#include "orchard/error.hpp"
#include "orchard/evaluation.hpp"
#include "orchard/fusion.hpp"
#include "orchard/ingest.hpp"
#include "orchard/measurement.hpp"
#include "orchard/parallel.hpp"
#include "orchard/registration.hpp"
#include "orchard/synth.hpp"

namespace orchard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  bool json_out = false;
  bool verbose = false;
  int threads = 0;
  std::string config_path;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  const Common& common;

  void log(const std::string& line) const {
    if (common.verbose) err << line << '\n';
  }

  // JSON mode prints the document; text mode prints its top-level scalars.
  void emit(const json& doc) const {
    if (common.json_out) {
      out << doc.dump(2) << '\n';
      return;
    }
    for (const auto& [key, value] : doc.items()) {
      if (value.is_structured()) continue;
      out << key << ": " << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
    }
  }
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  write_file_bytes(path, bytes);
}

PipelineConfig load_config(const Common& c) {
  return c.config_path.empty() ? PipelineConfig{} : load_pipeline_config(c.config_path);
}

RigidTransform transform_arg(const std::vector<double>& values) {
  return values.empty() ? RigidTransform::identity() : RigidTransform::from_row_major(values);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ----------------------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string out_dir;
  int frames = 10;
  double distance = 0.762;
  std::optional<double> canopy_keep;
  double canopy_clutter = 0.0;
  std::uint64_t canopy_seed = 0;
};

json run_synth(const SynthArgs& a, const Io& io) {
  PipelineConfig cfg = load_config(io.common);
  const TreeSpec spec = tree_spec_from_json(read_json(a.spec));
  if (a.frames < 1) throw ValidationError("synth: --frames must be at least 1");
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  auto [cloud, gt] = generate_tree(spec);
  write_ply(dir / "tree.ply", cloud, cfg.ply_format);
  write_text(dir / "ground_truth.json", to_json(gt).dump(2) + "\n");
  write_text(dir / "tree_spec.json", to_json(spec).dump(2) + "\n");
  json files = json::array({"tree.ply", "ground_truth.json", "tree_spec.json"});

  Manifest manifest;
  const std::vector<RigidTransform> poses = capture_poses(spec, a.frames, a.distance);
  for (std::size_t i = 0; i < poses.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%03zu", i);
    const std::string depth_name = std::string(stem) + "_depth.pgm";
    const std::string mask_name = std::string(stem) + "_mask.pgm";
    const auto [depth, mask] = render_depth_frame(spec, poses[i], manifest.intrinsics);
    write_depth_pgm(dir / depth_name, depth);
    write_mask_pgm(dir / mask_name, mask);
    manifest.frames.push_back({depth_name, mask_name, poses[i], static_cast<double>(i)});
    files.push_back(depth_name);
    files.push_back(mask_name);
    io.log("synth: rendered " + depth_name);
  }
  write_text(dir / "manifest.json", manifest_to_json(manifest));
  files.push_back("manifest.json");

  const auto [lo, hi] = tree_bounds(spec, 0.05);
  cfg.fusion.origin = lo;
  cfg.fusion.extent = hi - lo;
  cfg.fusion.carve_missing_depth = true;
  write_text(dir / "pipeline.json", to_json(cfg).dump(2) + "\n");
  files.push_back("pipeline.json");

  json doc;
  doc["points"] = cloud.size();
  doc["frames"] = poses.size();
  doc["trunk_diameter_mm"] = gt.trunk_diameter_mm();
  doc["branch_count"] = spec.branch_count;
  if (a.canopy_keep) {
    const LabeledPointCloud canopy = make_canopy_variant(cloud, *a.canopy_keep, a.canopy_clutter, a.canopy_seed);
    write_ply(dir / "canopy.ply", canopy, cfg.ply_format);
    files.push_back("canopy.ply");
    doc["canopy_points"] = canopy.size();
  }
  doc["files"] = files;
  return doc;
}

struct FuseArgs {
  std::string manifest;
  std::string out_dir;
  std::string tracking;
  bool dump_volume = false;
};

json run_fuse(const FuseArgs& a, const Io& io) {
  PipelineConfig cfg = load_config(io.common);
  if (!a.tracking.empty()) cfg.fusion.tracking = parse_tracking(a.tracking);
  cfg.fusion.validate();
  const Manifest manifest = load_manifest(a.manifest);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  const FusionResult result = fuse_sequence(manifest.frames, manifest.intrinsics, cfg.fusion);
  write_ply(dir / "model.ply", result.model, cfg.ply_format);
  json traj = json::array();
  for (const auto& pose : result.trajectory) traj.push_back(pose.row_major());
  write_text(dir / "trajectory.json", json{{"poses", traj}}.dump(2) + "\n");
  io.log("fuse: fused " + std::to_string(manifest.frames.size()) + " frames");
  for (const auto& w : result.warnings) io.err << "warning: " << w << '\n';

  json doc;
  doc["frames"] = manifest.frames.size();
  doc["tracking"] = std::string(tracking_name(cfg.fusion.tracking));
  doc["voxel_size_m"] = cfg.fusion.voxel_size;
  doc["observed_voxels"] = result.volume.observed_count();
  doc["model_points"] = result.model.size();
  doc["model_trunk_points"] = result.model.count(PointLabel::kTrunk);
  doc["model_branch_points"] = result.model.count(PointLabel::kBranch);
  doc["trajectory"] = traj;
  doc["warnings"] = result.warnings;
  json files = json::array({"model.ply", "trajectory.json"});
  if (a.dump_volume) {
    write_volume_dump(dir / "volume", result.volume);
    for (const char* f : {"volume.json", "volume.tsdf.f64", "volume.weight.f32", "volume.votes.u16"}) files.push_back(f);
  }
  doc["files"] = files;
  return doc;
}

struct RegisterArgs {
  std::string source;
  std::string target;
  std::string method;
  std::vector<double> init;
  bool trunk_only = false;
  std::string output;
};

json run_register(const RegisterArgs& a, const Io& io) {
  PipelineConfig cfg = load_config(io.common);
  RegistrationConfig& rc = cfg.registration;
  if (!a.method.empty()) rc.method = parse_method(a.method);
  if (a.trunk_only) rc.trunk_only = true;
  rc.validate();
  const LabeledPointCloud source = read_ply(a.source);
  const LabeledPointCloud target = read_ply(a.target);
  const RegistrationResult r = register_clouds(source, target, transform_arg(a.init), rc);
  io.log("register: " + std::to_string(r.iterations) + " iterations");
  if (!a.output.empty()) write_ply(a.output, apply_transform(r.transform, source), cfg.ply_format);

  json doc;
  doc["method"] = std::string(method_name(rc.method));
  doc["transform"] = r.transform.row_major();
  doc["rotation_deg"] = rotation_angle(r.transform.rotation()) * 180.0 / std::numbers::pi;
  doc["translation_m"] = r.transform.translation().norm();
  doc["fitness_m"] = optional_json(r.fitness);
  doc["mse_m2"] = optional_json(r.fitness_mse);
  doc["fitness_pairs"] = r.fitness_pairs;
  doc["max_correspondence_dist_m"] = rc.max_correspondence_dist;
  doc["iterations"] = r.iterations;
  doc["converged"] = r.converged;
  doc["final_cost"] = r.final_cost;
  doc["inlier_count"] = r.inlier_count;
  return doc;
}

struct MeasureArgs {
  std::string cloud;
  std::string output;
};

json run_measure(const MeasureArgs& a, const Io& io) {
  const PipelineConfig cfg = load_config(io.common);
  const MeasurementReport report = measure_tree(read_ply(a.cloud), cfg.measurement);
  const json doc = to_json(report);
  if (!a.output.empty()) write_text(a.output, doc.dump(2) + "\n");
  io.log("measure: " + std::to_string(report.branches.size()) + " branches");
  return doc;
}

struct EvalSegArgs {
  std::string pred;
  std::string truth;
};

json run_evalseg(const EvalSegArgs& a, const Io&) {
  return to_json(segmentation_metrics(read_mask_pgm(a.pred), read_mask_pgm(a.truth)));
}

struct EvalMeasArgs {
  std::string report;
  std::string truth;
  double match_radius = 0.05;
};

json run_evalmeas(const EvalMeasArgs& a, const Io&) {
  const MeasurementReport report = measurement_report_from_json(read_json(a.report));
  const GroundTruth gt = ground_truth_from_json(read_json(a.truth));
  json doc = to_json(compare_measurements(report, gt, a.match_radius));
  doc["match_radius_m"] = a.match_radius;
  return doc;
}

struct FitnessArgs {
  std::string source;
  std::string target;
  std::vector<double> transform;
  std::optional<double> max_dist;
};

json run_fitness(const FitnessArgs& a, const Io& io) {
  const PipelineConfig cfg = load_config(io.common);
  const double max_dist = a.max_dist.value_or(cfg.registration.max_correspondence_dist);
  const FitnessReport r = fitness_score(read_ply(a.target), read_ply(a.source), transform_arg(a.transform), max_dist);
  return to_json(r);
}

json error_json(std::string_view kind, std::string_view message) {
  return {{"error", {{"kind", kind}, {"message", message}}}};
}

}  // namespace

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fuse, register and measure orchard tree reconstructions", "orchardfuse"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_flag("--json", common.json_out, "Print one JSON document on stdout");
  app.add_flag("-v,--verbose", common.verbose, "Progress messages on stderr");
  app.add_option("--threads", common.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", common.config_path, "Pipeline configuration JSON");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic tree, its frames and ground truth");
  s->add_option("--spec", synth.spec, "Tree spec JSON")->required();
  s->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  s->add_option("--frames", synth.frames, "Number of rendered frames");
  s->add_option("--distance", synth.distance, "Camera distance from the trunk axis (m)");
  s->add_option("--canopy-keep", synth.canopy_keep, "Also write canopy.ply keeping this fraction of branches");
  s->add_option("--canopy-clutter", synth.canopy_clutter, "Clutter points per cubic meter of crown");
  s->add_option("--canopy-seed", synth.canopy_seed, "Seed for the canopy variant");

  FuseArgs fuse;
  auto* f = app.add_subcommand("fuse", "Fuse a manifest of depth/mask frames into a labeled model");
  f->add_option("--manifest", fuse.manifest, "Manifest JSON")->required();
  f->add_option("--out-dir", fuse.out_dir, "Output directory")->required();
  f->add_option("--tracking", fuse.tracking, "manifest or frame_to_model");
  f->add_flag("--dump-volume", fuse.dump_volume, "Write the TSDF volume as raw arrays");

  RegisterArgs reg;
  auto* r = app.add_subcommand("register", "Align a source cloud to a target cloud");
  r->add_option("--source", reg.source, "Source PLY")->required();
  r->add_option("--target", reg.target, "Target PLY")->required();
  r->add_option("--method", reg.method, "icp, gicp or fast_gicp");
  r->add_option("--init", reg.init, "Initial source-to-target transform, 16 row-major values")->expected(16);
  r->add_flag("--trunk-only", reg.trunk_only, "Use Trunk points only");
  r->add_option("--output", reg.output, "Write the aligned source cloud here");

  MeasureArgs meas;
  auto* m = app.add_subcommand("measure", "Measure trunk and branch structure of a labeled cloud");
  m->add_option("--cloud", meas.cloud, "Labeled PLY")->required();
  m->add_option("--output", meas.output, "Also write the report JSON here");

  EvalSegArgs seg;
  auto* es = app.add_subcommand("evalseg", "Per-class metrics of a predicted mask against a truth mask");
  es->add_option("--pred", seg.pred, "Predicted mask PGM")->required();
  es->add_option("--truth", seg.truth, "Ground-truth mask PGM")->required();

  EvalMeasArgs em;
  auto* e = app.add_subcommand("evalmeas", "Compare a measurement report with ground truth");
  e->add_option("--report", em.report, "Measurement report JSON")->required();
  e->add_option("--truth", em.truth, "Ground truth JSON")->required();
  e->add_option("--match-radius", em.match_radius, "Branch matching radius (m)");

  FitnessArgs fit;
  auto* fi = app.add_subcommand("fitness", "Fitness score of a source cloud under a transform");
  fi->add_option("--source", fit.source, "Source PLY")->required();
  fi->add_option("--target", fit.target, "Target PLY")->required();
  fi->add_option("--transform", fit.transform, "16 row-major values")->expected(16);
  fi->add_option("--max-dist", fit.max_dist, "Pairing distance (m)");

  std::vector<const char*> cargv;
  cargv.reserve(argv.size());
  for (const auto& a : argv) cargv.push_back(a.c_str());
  if (cargv.empty()) cargv.push_back("orchardfuse");

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& pe) {
    if (pe.get_exit_code() == 0) return app.exit(pe, out, err);
    err << error_json("validation", pe.what()).dump() << '\n';
    return 1;
  }

  try {
    set_thread_count(common.threads);
    const Io io{out, err, common};
    json doc;
    if (*s) doc = run_synth(synth, io);
    else if (*f) doc = run_fuse(fuse, io);
    else if (*r) doc = run_register(reg, io);
    else if (*m) doc = run_measure(meas, io);
    else if (*es) doc = run_evalseg(seg, io);
    else if (*e) doc = run_evalmeas(em, io);
    else if (*fi) doc = run_fitness(fit, io);
    io.emit(doc);
    return 0;
  } catch (const Error& ex) {
    const bool validation = ex.kind() == ErrorKind::kValidation;
    err << error_json(validation ? "validation" : "computation", ex.what()).dump() << '\n';
    return validation ? 1 : 2;
  } catch (const fs::filesystem_error& ex) {
    err << error_json("validation", ex.what()).dump() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    err << error_json("computation", ex.what()).dump() << '\n';
    return 2;
  }
}

int run_command(const std::vector<std::string>& argv) { return run_command(argv, std::cout, std::cerr); }

}  // namespace orchard::cli
