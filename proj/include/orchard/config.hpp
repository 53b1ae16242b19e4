// Copyright 2026 The orchardfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <json.hpp>

#include "orchard/fusion.hpp"
#include "orchard/ingest.hpp"
#include "orchard/measurement.hpp"
#include "orchard/registration.hpp"

namespace orchard {

/// Everything a pipeline run can be tuned with. Missing keys keep their
/// defaults; unknown keys are rejected with their full path.
struct PipelineConfig {
  FusionConfig fusion;
  RegistrationConfig registration;
  MeasurementConfig measurement;
  BackprojectOptions ingest;
  PlyFormat ply_format = PlyFormat::kBinaryLittleEndian;

  void validate() const;
};

PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& cfg);

nlohmann::json to_json(const RegistrationConfig& cfg);
RegistrationConfig registration_config_from_json(const nlohmann::json& j, const RegistrationConfig& base = {});

}  // namespace orchard
