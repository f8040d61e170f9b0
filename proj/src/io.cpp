#include "voxlift/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace voxlift {

namespace fs = std::filesystem;

namespace {

void write_blob(const std::string& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(static_cast<const char*>(data), bytes);
  if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<char> read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<char> data(static_cast<std::size_t>(size));
  in.read(data.data(), size);
  if (!in) throw std::runtime_error("short read: " + path);
  return data;
}

void write_values(const std::string& base, const Json& header,
                  const double* values, Index count,
                  const std::string& dtype) {
  Json h = header;
  h["dtype"] = dtype;
  h["layout"] = "row-major";
  write_json(base + ".json", h);
  if (dtype == "f64") {
    write_blob(base + ".bin", values, count * sizeof(double));
  } else if (dtype == "f32") {
    std::vector<float> f(count);
    for (Index i = 0; i < count; ++i) f[i] = static_cast<float>(values[i]);
    write_blob(base + ".bin", f.data(), count * sizeof(float));
  } else {
    throw std::invalid_argument("unsupported dtype: " + dtype);
  }
}

VecXd read_values(const std::string& base, const Json& header, Index count) {
  const std::string dtype = header.at("dtype");
  const auto blob = read_blob(base + ".bin");
  VecXd values(count);
  if (dtype == "f64") {
    if (blob.size() != std::size_t(count) * sizeof(double))
      throw std::runtime_error("blob size mismatch: " + base);
    std::memcpy(values.data(), blob.data(), blob.size());
  } else if (dtype == "f32") {
    if (blob.size() != std::size_t(count) * sizeof(float))
      throw std::runtime_error("blob size mismatch: " + base);
    const float* f = reinterpret_cast<const float*>(blob.data());
    for (Index i = 0; i < count; ++i) values[i] = f[i];
  } else {
    throw std::runtime_error("unsupported dtype: " + dtype);
  }
  return values;
}

Json grid_header(const VoxelGridSpecd& spec) {
  return Json{{"min_corner", {spec.min_corner.x(), spec.min_corner.y(),
                              spec.min_corner.z()}},
              {"voxel_size", spec.voxel_size}};
}

VoxelGridSpecd grid_from_header(const Json& h, int expect_rank) {
  VoxelGridSpecd spec;
  const auto& dims = h.at("dims");
  if (static_cast<int>(dims.size()) != expect_rank)
    throw std::runtime_error("tensor rank mismatch");
  spec.dims = Eigen::Vector3i(dims[0].get<int>(), dims[1].get<int>(),
                              dims[2].get<int>());
  const auto& mc = h.at("min_corner");
  spec.min_corner = Vec3d(mc[0].get<double>(), mc[1].get<double>(),
                          mc[2].get<double>());
  spec.voxel_size = h.at("voxel_size").get<double>();
  spec.validate();
  return spec;
}

}  // namespace

void write_json(const std::string& path, const Json& value) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << value.dump(2) << "\n";
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  Json j;
  in >> j;
  return j;
}

// ---------------------------------------------------------------------------
// Tensors.

void save_scalar_field(const std::string& base, const ScalarFieldd& field,
                       const std::string& dtype) {
  Json h = grid_header(field.spec);
  h["dims"] = {field.spec.dims.x(), field.spec.dims.y(), field.spec.dims.z()};
  write_values(base, h, field.values.data(), field.values.size(), dtype);
}

ScalarFieldd load_scalar_field(const std::string& base) {
  const Json h = read_json(base + ".json");
  ScalarFieldd field;
  field.spec = grid_from_header(h, 3);
  field.values = read_values(base, h, field.spec.num_voxels());
  return field;
}

void save_vector_field(const std::string& base, const VectorFieldd& field,
                       const std::string& dtype) {
  Json h = grid_header(field.spec);
  h["dims"] = {field.spec.dims.x(), field.spec.dims.y(), field.spec.dims.z(),
               field.channels};
  write_values(base, h, field.values.data(), field.values.size(), dtype);
}

VectorFieldd load_vector_field(const std::string& base) {
  const Json h = read_json(base + ".json");
  VectorFieldd field;
  field.spec = grid_from_header(h, 4);
  field.channels = h.at("dims")[3].get<int>();
  const VecXd flat =
      read_values(base, h, field.spec.num_voxels() * field.channels);
  field.values =
      Eigen::Map<const MatXd>(flat.data(), field.spec.num_voxels(),
                              field.channels);
  return field;
}

void save_occupancy(const std::string& base, const SemanticOccupancyd& occ) {
  Json h = grid_header(occ.spec);
  h["dims"] = {occ.spec.dims.x(), occ.spec.dims.y(), occ.spec.dims.z()};
  h["dtype"] = "u8";
  h["layout"] = "row-major";
  h["num_classes"] = occ.num_classes;
  h["free"] = kFreeLabel;
  h["ignore"] = kIgnoreLabel;
  write_json(base + ".json", h);
  write_blob(base + ".bin", occ.labels.data(), occ.labels.size());
}

SemanticOccupancyd load_occupancy(const std::string& base) {
  const Json h = read_json(base + ".json");
  if (h.at("dtype") != "u8")
    throw std::runtime_error("occupancy must be u8: " + base);
  SemanticOccupancyd occ;
  occ.spec = grid_from_header(h, 3);
  occ.num_classes = h.at("num_classes").get<int>();
  const auto blob = read_blob(base + ".bin");
  if (blob.size() != std::size_t(occ.spec.num_voxels()))
    throw std::runtime_error("blob size mismatch: " + base);
  occ.labels.assign(blob.begin(), blob.end());
  return occ;
}

void save_head_params(const std::string& base, const HeadParamsd& params) {
  Json h{{"dims", {params.in_channels, params.out_channels()}},
         {"num_classes", params.num_classes},
         {"use_conv", params.use_conv},
         {"kind", "head_params"}};
  VecXd flat(params.weight.size() + params.bias.size() +
             params.conv_kernel.size());
  flat.head(params.weight.size()) =
      Eigen::Map<const VecXd>(params.weight.data(), params.weight.size());
  flat.segment(params.weight.size(), params.bias.size()) = params.bias;
  if (params.conv_kernel.size() > 0)
    flat.tail(params.conv_kernel.size()) = params.conv_kernel;
  write_values(base, h, flat.data(), flat.size(), "f64");
}

HeadParamsd load_head_params(const std::string& base) {
  const Json h = read_json(base + ".json");
  const int in_channels = h.at("dims")[0].get<int>();
  const int num_classes = h.at("num_classes").get<int>();
  const bool use_conv = h.value("use_conv", false);
  HeadParamsd params = HeadParamsd::zeros(in_channels, num_classes, use_conv);
  const Index total = params.weight.size() + params.bias.size() +
                      params.conv_kernel.size();
  const VecXd flat = read_values(base, h, total);
  Eigen::Map<VecXd>(params.weight.data(), params.weight.size()) =
      flat.head(params.weight.size());
  params.bias = flat.segment(params.weight.size(), params.bias.size());
  if (params.conv_kernel.size() > 0)
    params.conv_kernel = flat.tail(params.conv_kernel.size());
  return params;
}

void save_feature_map(const std::string& base, const FeatureMapd& map,
                      const std::string& dtype) {
  Json h{{"dims", {map.height_f, map.width_f, map.channels}},
         {"camera_id", map.camera_id},
         {"stride", map.stride}};
  write_values(base, h, map.values.data(), map.values.size(), dtype);
}

FeatureMapd load_feature_map(const std::string& base) {
  const Json h = read_json(base + ".json");
  FeatureMapd map;
  const auto& dims = h.at("dims");
  map.height_f = dims[0].get<int>();
  map.width_f = dims[1].get<int>();
  map.channels = dims[2].get<int>();
  map.camera_id = h.at("camera_id").get<int>();
  map.stride = h.at("stride").get<double>();
  const VecXd flat =
      read_values(base, h, Index(map.height_f) * map.width_f * map.channels);
  map.values = Eigen::Map<const MatXd>(
      flat.data(), Index(map.height_f) * map.width_f, map.channels);
  return map;
}

// ---------------------------------------------------------------------------
// Rigs.

Json rig_to_json(const CameraRigd& rig) {
  Json cams = Json::array();
  for (const auto& cam : rig.cameras) {
    Json row_major = Json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) row_major.push_back(cam.extrinsics.rotation(r, c));
    cams.push_back(Json{{"id", cam.id},
                        {"fx", cam.intrinsics.fx},
                        {"fy", cam.intrinsics.fy},
                        {"cx", cam.intrinsics.cx},
                        {"cy", cam.intrinsics.cy},
                        {"width", cam.intrinsics.width},
                        {"height", cam.intrinsics.height},
                        {"rotation", row_major},
                        {"translation",
                         {cam.extrinsics.translation.x(),
                          cam.extrinsics.translation.y(),
                          cam.extrinsics.translation.z()}}});
  }
  return cams;
}

CameraRigd rig_from_json(const Json& j) {
  CameraRigd rig;
  for (const auto& c : j) {
    Camerad cam;
    cam.id = c.at("id").get<int>();
    cam.intrinsics.fx = c.at("fx").get<double>();
    cam.intrinsics.fy = c.at("fy").get<double>();
    cam.intrinsics.cx = c.at("cx").get<double>();
    cam.intrinsics.cy = c.at("cy").get<double>();
    cam.intrinsics.width = c.at("width").get<int>();
    cam.intrinsics.height = c.at("height").get<int>();
    const auto& rot = c.at("rotation");
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col)
        cam.extrinsics.rotation(r, col) = rot[r * 3 + col].get<double>();
    const auto& t = c.at("translation");
    cam.extrinsics.translation =
        Vec3d(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    rig.cameras.push_back(cam);
  }
  rig.validate();  // asserts the world->camera convention invariants
  return rig;
}

void save_rig(const std::string& path, const CameraRigd& rig) {
  write_json(path, rig_to_json(rig));
}

CameraRigd load_rig(const std::string& path) {
  return rig_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// Scenes.

namespace {

Vec3d vec3_from_json(const Json& j) {
  return Vec3d(j.at(0).get<double>(), j.at(1).get<double>(),
               j.at(2).get<double>());
}

Json vec3_to_json(const Vec3d& v) { return Json{v.x(), v.y(), v.z()}; }

}  // namespace

Json scene_to_json(const SceneConfig& scene) {
  Json prims = Json::array();
  for (const auto& prim : scene.primitives) {
    if (const auto* s = std::get_if<Sphere>(&prim)) {
      prims.push_back(Json{{"kind", "sphere"},
                           {"center", vec3_to_json(s->center)},
                           {"radius", s->radius},
                           {"class_id", s->class_id}});
    } else if (const auto* b = std::get_if<Box>(&prim)) {
      prims.push_back(Json{{"kind", "box"},
                           {"min", vec3_to_json(b->lo)},
                           {"max", vec3_to_json(b->hi)},
                           {"class_id", b->class_id}});
    } else {
      const auto& g = std::get<GroundPlane>(prim);
      prims.push_back(Json{{"kind", "ground-plane"},
                           {"height", g.height},
                           {"class_id", g.class_id}});
    }
  }
  return Json{{"num_classes", scene.num_classes},
              {"tau_occ", scene.tau_occ},
              {"seed", scene.seed},
              {"grid",
               {{"min_corner", vec3_to_json(scene.spec.min_corner)},
                {"voxel_size", scene.spec.voxel_size},
                {"dims",
                 {scene.spec.dims.x(), scene.spec.dims.y(),
                  scene.spec.dims.z()}}}},
              {"rig", rig_to_json(scene.rig)},
              {"primitives", prims}};
}

SceneConfig scene_from_json(const Json& j) {
  SceneConfig scene;
  scene.num_classes = j.at("num_classes").get<int>();
  scene.tau_occ = j.value("tau_occ", 50.0);
  scene.seed = j.value("seed", std::uint64_t(0));
  const auto& grid = j.at("grid");
  scene.spec.min_corner = vec3_from_json(grid.at("min_corner"));
  scene.spec.voxel_size = grid.at("voxel_size").get<double>();
  const auto& dims = grid.at("dims");
  scene.spec.dims = Eigen::Vector3i(dims[0].get<int>(), dims[1].get<int>(),
                                    dims[2].get<int>());
  const auto& rig = j.at("rig");
  if (rig.is_array()) {
    scene.rig = rig_from_json(rig);
  } else {
    // Generator form: a surround ring.
    const auto& ring = rig.at("ring");
    Intrinsicsd intr;
    const auto& ij = ring.at("intrinsics");
    intr.fx = ij.at("fx").get<double>();
    intr.fy = ij.at("fy").get<double>();
    intr.cx = ij.at("cx").get<double>();
    intr.cy = ij.at("cy").get<double>();
    intr.width = ij.at("width").get<int>();
    intr.height = ij.at("height").get<int>();
    scene.rig = make_ring_rig(ring.at("cameras").get<int>(),
                              ring.at("radius").get<double>(),
                              ring.at("height").get<double>(),
                              vec3_from_json(ring.at("target")), intr);
  }
  for (const auto& p : j.at("primitives")) {
    const std::string kind = p.at("kind");
    if (kind == "sphere") {
      scene.primitives.push_back(Sphere{vec3_from_json(p.at("center")),
                                        p.at("radius").get<double>(),
                                        p.at("class_id").get<int>()});
    } else if (kind == "box") {
      scene.primitives.push_back(Box{vec3_from_json(p.at("min")),
                                     vec3_from_json(p.at("max")),
                                     p.at("class_id").get<int>()});
    } else if (kind == "ground-plane") {
      scene.primitives.push_back(GroundPlane{p.at("height").get<double>(),
                                             p.at("class_id").get<int>()});
    } else {
      throw std::runtime_error("unknown primitive kind: " + kind);
    }
  }
  scene.validate();
  return scene;
}

SceneConfig load_scene(const std::string& path) {
  return scene_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// Experiments.

ExperimentConfig experiment_from_json(const Json& j,
                                      const std::string& base_dir) {
  ExperimentConfig cfg;
  cfg.scene_path = j.at("scene").get<std::string>();
  fs::path scene_path(cfg.scene_path);
  if (scene_path.is_relative()) scene_path = fs::path(base_dir) / scene_path;
  cfg.scene = load_scene(scene_path.string());

  cfg.fit.seed = j.value("seed", std::uint64_t(0));
  cfg.fit.iterations = j.value("iterations", 500);
  cfg.fit.rays_per_iter = j.value("rays_per_iter", 4096);
  cfg.fit.trace_every = j.value("trace_every", 50);
  cfg.fit.num_classes = cfg.scene.num_classes;
  cfg.fit.supervision =
      supervision_from_string(j.value("supervision_mode", std::string("2d-only")));
  cfg.fit.opacity_min = j.value("opacity_min", kDefaultOpacityMin);
  cfg.fit.mask_depth_by_opacity = j.value("mask_depth_by_opacity", true);
  cfg.fit.sem_probabilities = j.value("sem_probabilities", false);
  cfg.fit.init_density = j.value("init_density", 0.05);
  if (j.value("lr_schedule", std::string("constant")) == "cosine")
    cfg.fit.lr_schedule = LrSchedule::cosine;

  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    const std::string strategy = s.value("strategy", std::string("fixed"));
    cfg.fit.sampler.strategy = strategy == "stratified"
                                   ? SamplerConfigd::Strategy::stratified
                                   : SamplerConfigd::Strategy::fixed;
    cfg.step_scale = s.value("step_scale", 0.5);
    if (s.contains("step_size"))
      cfg.fit.sampler.step_size = s.at("step_size").get<double>();
    cfg.fit.sampler.sample_count = s.value("sample_count", 64);
    cfg.fit.sampler.alpha = s.value("alpha", 1.0);
    cfg.fit.sampler.t_near = s.value("t_near", 0.0);
    cfg.fit.sampler.t_far = s.value("t_far", 1e9);
  }
  if (cfg.fit.sampler.step_size <= 0)
    cfg.fit.sampler.step_size = cfg.step_scale * cfg.scene.spec.voxel_size;

  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    cfg.fit.weights.lambda_d = w.value("lambda_d", 0.05);
    cfg.fit.weights.lambda_s = w.value("lambda_s", 0.05);
    cfg.fit.weights.lambda_n = w.value("lambda_n", 0.05);
    cfg.fit.weights.lambda_r = w.value("lambda_r", 0.005);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    cfg.fit.adam.lr = o.value("lr", 2e-4);
    cfg.fit.adam.beta1 = o.value("beta1", 0.9);
    cfg.fit.adam.beta2 = o.value("beta2", 0.999);
    cfg.fit.adam.eps = o.value("eps", 1e-8);
    cfg.fit.adam.weight_decay = o.value("weight_decay", 0.01);
  }
  if (j.contains("render")) {
    const auto& r = j.at("render");
    cfg.render_width = r.value("width", 64);
    cfg.render_height = r.value("height", 64);
    cfg.supersample = r.value("supersample", 1);
  }
  if (j.contains("holdout_cameras"))
    for (const auto& id : j.at("holdout_cameras"))
      cfg.holdout_cameras.push_back(id.get<int>());
  if (j.contains("labels")) {
    const auto& l = j.at("labels");
    cfg.label_source = l.value("source", std::string("dense"));
    cfg.normal_source = l.value("normal_source", std::string("dense"));
    cfg.lidar_beams = l.value("lidar_beams", 16);
    cfg.lidar_azimuths = l.value("lidar_azimuths", 256);
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  return experiment_from_json(read_json(path),
                              fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Image export.

void write_pfm(const std::string& path, const MatXd& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "Pf\n" << map.cols() << " " << map.rows() << "\n-1.0\n";
  // PFM scanlines run bottom to top.
  std::vector<float> row(map.cols());
  for (Index r = map.rows() - 1; r >= 0; --r) {
    for (Index c = 0; c < map.cols(); ++c)
      row[c] = static_cast<float>(map(r, c));
    out.write(reinterpret_cast<const char*>(row.data()),
              row.size() * sizeof(float));
  }
}

namespace {

constexpr std::uint8_t kPalette[20][3] = {
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
    {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
    {210, 245, 60},  {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
    {170, 110, 40},  {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
    {128, 128, 0},   {255, 215, 180}, {0, 0, 128},    {128, 128, 128}};

void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb,
               int width, int height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), rgb.size());
}

}  // namespace

void write_semantic_ppm(const std::string& path, const std::vector<int>& labels,
                        int width, int height) {
  std::vector<std::uint8_t> rgb(std::size_t(width) * height * 3, 0);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p] < 0) continue;
    const auto& color = kPalette[labels[p] % 20];
    rgb[p * 3 + 0] = color[0];
    rgb[p * 3 + 1] = color[1];
    rgb[p * 3 + 2] = color[2];
  }
  write_ppm(path, rgb, width, height);
}

void write_normal_ppm(const std::string& path, const MatXd& normals, int width,
                      int height) {
  std::vector<std::uint8_t> rgb(std::size_t(width) * height * 3, 0);
  for (Index p = 0; p < normals.rows(); ++p)
    for (int c = 0; c < 3; ++c)
      rgb[p * 3 + c] = static_cast<std::uint8_t>(
          std::clamp((normals(p, c) + 1.0) * 0.5, 0.0, 1.0) * 255.0);
  write_ppm(path, rgb, width, height);
}

void write_rendered_maps(const std::string& dir, const std::string& prefix,
                         const RenderedMapsd& maps) {
  fs::create_directories(dir);
  const std::string base = (fs::path(dir) / prefix).string();
  write_pfm(base + "_depth.pfm", maps.depth);
  write_pfm(base + "_opacity.pfm", maps.opacity);
  std::vector<int> argmax(maps.sem_logits.rows(), -1);
  for (Index p = 0; p < maps.sem_logits.rows(); ++p) {
    if (maps.opacity(p / maps.width, p % maps.width) <= kDefaultOpacityMin)
      continue;
    Index best;
    maps.sem_logits.row(p).maxCoeff(&best);
    // FREE channel renders as sky.
    if (best < maps.num_channels - 1) argmax[p] = static_cast<int>(best);
  }
  write_semantic_ppm(base + "_sem.ppm", argmax, maps.width, maps.height);
  write_normal_ppm(base + "_normal.ppm", maps.normal, maps.width, maps.height);
  // Raw logits in the binary-tensor format.
  Json h{{"dims", {maps.height, maps.width, maps.num_channels}},
         {"kind", "rendered_sem_logits"}};
  write_values(base + "_sem_logits", h, maps.sem_logits.data(),
               maps.sem_logits.size(), "f64");
}

// ---------------------------------------------------------------------------
// CSV and SVG.

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "\n");
}

void write_svg_line_chart(const std::string& path, const std::string& title,
                          const std::vector<double>& x,
                          const std::vector<SvgSeries>& series) {
  if (series.empty() || x.empty())
    throw std::invalid_argument("write_svg_line_chart: nothing to plot");
  const int width = 640, height = 420, margin = 60;
  double x_lo = x.front(), x_hi = x.front();
  for (double v : x) {
    x_lo = std::min(x_lo, v);
    x_hi = std::max(x_hi, v);
  }
  double y_lo = series[0].y.at(0), y_hi = y_lo;
  for (const auto& s : series)
    for (double v : s.y) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  if (x_hi == x_lo) x_hi = x_lo + 1;
  if (y_hi == y_lo) y_hi = y_lo + 1;
  const auto sx = [&](double v) {
    return margin + (v - x_lo) / (x_hi - x_lo) * (width - 2 * margin);
  };
  const auto sy = [&](double v) {
    return height - margin - (v - y_lo) / (y_hi - y_lo) * (height - 2 * margin);
  };
  const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << title
      << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"" << height - margin + 20
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << x_lo
      << "</text>\n";
  out << "<text x=\"" << width - margin << "\" y=\"" << height - margin + 20
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << x_hi << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << height - margin
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << y_lo << "</text>\n";
  out << "<text x=\"" << margin - 6 << "\" y=\"" << margin
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << y_hi << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << colors[s % 6]
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i)
      out << sx(x[i]) << "," << sy(series[s].y[i]) << " ";
    out << "\"/>\n";
    for (std::size_t i = 0; i < x.size() && i < series[s].y.size(); ++i)
      out << "<circle cx=\"" << sx(x[i]) << "\" cy=\"" << sy(series[s].y[i])
          << "\" r=\"3\" fill=\"" << colors[s % 6] << "\"/>\n";
    out << "<text x=\"" << width - margin + 4 << "\" y=\""
        << margin + 16 * (s + 1) << "\" font-family=\"sans-serif\" "
        << "font-size=\"11\" fill=\"" << colors[s % 6] << "\">"
        << series[s].name << "</text>\n";
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Schemas.

namespace {

Json number_schema() { return Json{{"type", "number"}}; }
Json integer_schema() { return Json{{"type", "integer"}}; }
Json string_schema() { return Json{{"type", "string"}}; }

Json make_breakdown_schema() {
  return Json{
      {"type", "object"},
      {"required", {"total", "sem3d", "depth", "sem2d", "normal", "reg"}},
      {"properties",
       {{"total", number_schema()},
        {"sem3d", number_schema()},
        {"depth", number_schema()},
        {"sem2d", number_schema()},
        {"normal", number_schema()},
        {"reg", number_schema()}}}};
}

Json make_schemas() {
  Json schemas;
  schemas["eval"] = Json{
      {"type", "object"},
      {"required",
       {"command", "miou", "per_class_iou", "precision", "recall", "fscore",
        "delta"}},
      {"properties",
       {{"command", string_schema()},
        {"miou", number_schema()},
        {"per_class_iou",
         Json{{"type", "array"}, {"items", Json{{"type", {"number", "null"}}}}}},
        {"precision", number_schema()},
        {"recall", number_schema()},
        {"fscore", number_schema()},
        {"delta", number_schema()}}}};
  schemas["macs"] = Json{
      {"type", "object"},
      {"required",
       {"command", "lifting_macs", "attention_macs", "ratio", "n_keys", "dims",
        "cameras", "channels"}},
      {"properties",
       {{"command", string_schema()},
        {"lifting_macs", integer_schema()},
        {"attention_macs", integer_schema()},
        {"ratio", number_schema()},
        {"n_keys", integer_schema()},
        {"dims", Json{{"type", "array"}, {"items", integer_schema()}}},
        {"cameras", integer_schema()},
        {"channels", integer_schema()}}}};
  schemas["gen-scene"] = Json{
      {"type", "object"},
      {"required",
       {"command", "num_voxels", "occupied_voxels", "cameras", "files"}},
      {"properties",
       {{"command", string_schema()},
        {"num_voxels", integer_schema()},
        {"occupied_voxels", integer_schema()},
        {"cameras", integer_schema()},
        {"files", Json{{"type", "array"}, {"items", string_schema()}}}}}};
  schemas["fit"] = Json{
      {"type", "object"},
      {"required",
       {"command", "seed", "iterations", "supervision", "final_loss",
        "geometry_iou", "semantic_miou", "depth_mae"}},
      {"properties",
       {{"command", string_schema()},
        {"seed", integer_schema()},
        {"iterations", integer_schema()},
        {"supervision", string_schema()},
        {"final_loss", make_breakdown_schema()},
        {"geometry_iou", number_schema()},
        {"semantic_miou", number_schema()},
        {"depth_mae", number_schema()}}}};
  schemas["train"] = Json{
      {"type", "object"},
      {"required",
       {"command", "seed", "iterations", "supervision", "final_loss",
        "train_miou", "holdout_miou"}},
      {"properties",
       {{"command", string_schema()},
        {"seed", integer_schema()},
        {"iterations", integer_schema()},
        {"supervision", string_schema()},
        {"final_loss", make_breakdown_schema()},
        {"train_miou", number_schema()},
        {"holdout_miou", number_schema()}}}};
  schemas["render"] = Json{
      {"type", "object"},
      {"required", {"command", "camera", "width", "height", "files"}},
      {"properties",
       {{"command", string_schema()},
        {"camera", integer_schema()},
        {"width", integer_schema()},
        {"height", integer_schema()},
        {"files", Json{{"type", "array"}, {"items", string_schema()}}}}}};
  schemas["lift"] = Json{
      {"type", "object"},
      {"required", {"command", "channels", "voxels", "mean_valid_count", "files"}},
      {"properties",
       {{"command", string_schema()},
        {"channels", integer_schema()},
        {"voxels", integer_schema()},
        {"mean_valid_count", number_schema()},
        {"files", Json{{"type", "array"}, {"items", string_schema()}}}}}};
  schemas["ablate"] = Json{
      {"type", "object"},
      {"required", {"command", "kind", "rows", "csv", "plot"}},
      {"properties",
       {{"command", string_schema()},
        {"kind", string_schema()},
        {"rows", Json{{"type", "array"}, {"items", Json{{"type", "object"}}}}},
        {"csv", string_schema()},
        {"plot", string_schema()}}}};
  return schemas;
}

}  // namespace

const Json& schema(const std::string& name) {
  static const Json schemas = make_schemas();
  const auto it = schemas.find(name);
  if (it == schemas.end())
    throw std::invalid_argument("unknown schema: " + name);
  return *it;
}

std::vector<std::string> schema_names() {
  static const Json schemas = make_schemas();
  std::vector<std::string> names;
  for (const auto& [key, value] : schemas.items()) names.push_back(key);
  return names;
}

namespace {

bool type_matches(const Json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "number") return value.is_number();
  if (type == "integer") return value.is_number_integer();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  throw std::runtime_error("schema: unknown type " + type);
}

}  // namespace

void validate_against_schema(const Json& value, const Json& schema,
                             const std::string& path) {
  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(value, t.get<std::string>());
    } else {
      for (const auto& alt : t)
        if (type_matches(value, alt.get<std::string>())) ok = true;
    }
    if (!ok)
      throw std::runtime_error("schema violation at " + path +
                               ": wrong type, got " + value.dump());
  }
  if (schema.contains("required")) {
    for (const auto& key : schema.at("required"))
      if (!value.contains(key.get<std::string>()))
        throw std::runtime_error("schema violation at " + path +
                                 ": missing key " + key.get<std::string>());
  }
  if (schema.contains("properties") && value.is_object()) {
    for (const auto& [key, sub] : schema.at("properties").items())
      if (value.contains(key))
        validate_against_schema(value.at(key), sub, path + "." + key);
  }
  if (schema.contains("items") && value.is_array()) {
    for (std::size_t i = 0; i < value.size(); ++i)
      validate_against_schema(value[i], schema.at("items"),
                              path + "[" + std::to_string(i) + "]");
  }
}

}  // namespace voxlift
