#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "voxlift/fit.hpp"
#include "voxlift/scenes.hpp"

namespace voxlift {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Binary tensor format: a JSON sidecar header ("<base>.json") plus a raw
// little-endian blob ("<base>.bin"), row-major. dtype is "f32", "f64" or
// "u8"; occupancy headers document the FREE/IGNORE codes.

void save_scalar_field(const std::string& base, const ScalarFieldd& field,
                       const std::string& dtype = "f64");
ScalarFieldd load_scalar_field(const std::string& base);

void save_vector_field(const std::string& base, const VectorFieldd& field,
                       const std::string& dtype = "f64");
VectorFieldd load_vector_field(const std::string& base);

void save_occupancy(const std::string& base, const SemanticOccupancyd& occ);
SemanticOccupancyd load_occupancy(const std::string& base);

void save_feature_map(const std::string& base, const FeatureMapd& map,
                      const std::string& dtype = "f64");
FeatureMapd load_feature_map(const std::string& base);

// Head checkpoints: affine weight, bias, and optional conv kernel in one blob.
void save_head_params(const std::string& base, const HeadParamsd& params);
HeadParamsd load_head_params(const std::string& base);

// ---------------------------------------------------------------------------
// Camera rigs as JSON documents.

Json rig_to_json(const CameraRigd& rig);
CameraRigd rig_from_json(const Json& j);
void save_rig(const std::string& path, const CameraRigd& rig);
CameraRigd load_rig(const std::string& path);

// ---------------------------------------------------------------------------
// Scene and experiment configs.

Json scene_to_json(const SceneConfig& scene);
SceneConfig scene_from_json(const Json& j);
SceneConfig load_scene(const std::string& path);

struct ExperimentConfig {
  std::string scene_path;
  SceneConfig scene;
  FitConfig fit;
  double step_scale = 0.5;          // fixed step as a multiple of voxel_size
  std::vector<int> holdout_cameras; // camera ids excluded from training
  int render_width = 64, render_height = 64;
  int supersample = 1;
  std::string normal_source = "dense";  // dense | none
  std::string label_source = "dense";   // dense | lidar
  int lidar_beams = 16, lidar_azimuths = 256;
};

ExperimentConfig experiment_from_json(const Json& j,
                                      const std::string& base_dir);
ExperimentConfig load_experiment(const std::string& path);

// ---------------------------------------------------------------------------
// Image export.

void write_pfm(const std::string& path, const MatXd& map);
// Semantic argmax image with a fixed class palette (sky/FREE is black).
void write_semantic_ppm(const std::string& path, const std::vector<int>& labels,
                        int width, int height);
void write_normal_ppm(const std::string& path, const MatXd& normals, int width,
                      int height);
void write_rendered_maps(const std::string& dir, const std::string& prefix,
                         const RenderedMapsd& maps);

// ---------------------------------------------------------------------------
// Reports, CSV, plots.

void write_json(const std::string& path, const Json& value);
Json read_json(const std::string& path);

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct SvgSeries {
  std::string name;
  std::vector<double> y;
};

// Minimal line chart (one polyline per series) written as a standalone SVG.
void write_svg_line_chart(const std::string& path, const std::string& title,
                          const std::vector<double>& x,
                          const std::vector<SvgSeries>& series);

// ---------------------------------------------------------------------------
// Output schemas. Every CLI command validates its JSON output against the
// published schema before writing; `voxlift schema <name>` prints them.

const Json& schema(const std::string& name);
std::vector<std::string> schema_names();

// Structural validation for the schema subset used here (type, required,
// properties, items). Throws std::runtime_error with a JSON-pointer-ish path.
void validate_against_schema(const Json& value, const Json& schema,
                             const std::string& path = "$");

}  // namespace voxlift
