#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "voxlift/io.hpp"
#include "voxlift/scenes.hpp"

using namespace voxlift;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("voxlift_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const {
    return (path / name).string();
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VOXLIFT_CLI_PATH) + " " + args +
                          " > /dev/null 2> /dev/null";
  return std::system(cmd.c_str());
}

std::string write_small_scene(const TempDir& dir) {
  SceneConfig scene;
  scene.spec = {Vec3d(-2, -2, 0), 0.25, Eigen::Vector3i(16, 16, 8)};
  scene.num_classes = 2;
  scene.rig = make_ring_rig(3, 5.0, 1.2, Vec3d(0, 0, 0.6),
                            {16.0, 16.0, 8.0, 8.0, 16, 16});
  scene.primitives = {GroundPlane{0.25, 0},
                      Box{Vec3d(-0.8, -0.8, 0.25), Vec3d(0.8, 0.8, 1.25), 1}};
  const std::string path = dir / "scene.json";
  write_json(path, scene_to_json(scene));
  return path;
}

std::string write_experiment(const TempDir& dir, const std::string& scene_path,
                             int iterations) {
  Json exp{{"scene", scene_path},
           {"seed", 11},
           {"iterations", iterations},
           {"rays_per_iter", 512},
           {"supervision_mode", "2d-only"},
           {"sampler", {{"strategy", "fixed"}, {"step_scale", 0.5},
                        {"t_near", 0.05}}},
           {"optimizer", {{"lr", 0.05}, {"weight_decay", 0.0}}},
           {"render", {{"width", 16}, {"height", 16}}}};
  const std::string path = dir / "exp.json";
  write_json(path, exp);
  return path;
}

}  // namespace

TEST_CASE("cli: macs reports the closed-form counts") {
  TempDir dir;
  REQUIRE(run_cli("macs --dims 200 200 16 --cameras 6 --channels 256 --out " +
                  (dir / "macs")) == 0);
  const Json report = read_json(dir / "macs/macs_report.json");
  CHECK(report.at("lifting_macs").get<std::uint64_t>() == 3989760000ull);
  CHECK(report.at("ratio").get<double>() > 1.0);
  CHECK_NOTHROW(validate_against_schema(report, schema("macs")));
}

TEST_CASE("cli: gen-scene writes labeled artifacts") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 5);
  REQUIRE(run_cli("gen-scene --config " + exp + " --out " + (dir / "gen")) ==
          0);
  const Json report = read_json(dir / "gen/gen-scene_report.json");
  CHECK(report.at("num_voxels").get<int>() == 16 * 16 * 8);
  CHECK(report.at("occupied_voxels").get<int>() > 0);
  CHECK(fs::exists(dir / "gen/gt_occupancy.bin"));
  CHECK(fs::exists(dir / "gen/cam1_depth.pfm"));
  CHECK(fs::exists(dir / "gen/cam2_sem.ppm"));
}

TEST_CASE("cli: eval with pred == gt reports perfect scores") {
  TempDir dir;
  const std::string scene_path = write_small_scene(dir);
  const auto scene = load_scene(scene_path);
  const auto raster = rasterize_scene(scene);
  save_occupancy(dir / "occ", raster.occupancy);
  REQUIRE(run_cli("eval --pred " + (dir / "occ") + " --gt " + (dir / "occ") +
                  " --out " + (dir / "eval")) == 0);
  const Json report = read_json(dir / "eval/eval_report.json");
  CHECK(report.at("miou").get<double>() == doctest::Approx(1.0));
  CHECK(report.at("fscore").get<double>() == doctest::Approx(1.0));
  CHECK(report.at("delta").get<double>() == doctest::Approx(0.25));
  CHECK_NOTHROW(validate_against_schema(report, schema("eval")));
  CHECK(fs::exists(dir / "eval/eval_report.csv"));
}

TEST_CASE("cli: fit runs end to end and writes a valid report") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 30);
  REQUIRE(run_cli("fit --config " + exp + " --out " + (dir / "fit")) == 0);
  const Json report = read_json(dir / "fit/fit_report.json");
  CHECK_NOTHROW(validate_against_schema(report, schema("fit")));
  CHECK(fs::exists(dir / "fit/density.bin"));
  CHECK(fs::exists(dir / "fit/loss_trace.csv"));
  CHECK(fs::exists(dir / "fit/decoded_occupancy.bin"));
}

TEST_CASE("cli: identical config and seed give bit-identical artifacts") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 12);
  REQUIRE(run_cli("fit --config " + exp + " --out " + (dir / "a")) == 0);
  REQUIRE(run_cli("fit --config " + exp + " --out " + (dir / "b")) == 0);
  for (const std::string name :
       {"fit_report.json", "density.bin", "sem_logits.bin", "loss_trace.csv"}) {
    std::ifstream fa(dir / ("a/" + name), std::ios::binary);
    std::ifstream fb(dir / ("b/" + name), std::ios::binary);
    const std::string a((std::istreambuf_iterator<char>(fa)),
                        std::istreambuf_iterator<char>());
    const std::string b((std::istreambuf_iterator<char>(fb)),
                        std::istreambuf_iterator<char>());
    REQUIRE(!a.empty());
    CHECK(a == b);
  }
}

TEST_CASE("cli: render emits image artifacts") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 5);
  REQUIRE(run_cli("render --config " + exp + " --camera 2 --out " +
                  (dir / "render")) == 0);
  CHECK(fs::exists(dir / "render/cam2_depth.pfm"));
  CHECK(fs::exists(dir / "render/cam2_sem.ppm"));
  CHECK(fs::exists(dir / "render/cam2_normal.ppm"));
  const Json report = read_json(dir / "render/render_report.json");
  CHECK_NOTHROW(validate_against_schema(report, schema("render")));
}

TEST_CASE("cli: lift with generated maps reports coverage") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 5);
  REQUIRE(run_cli("lift --config " + exp + " --random-channels 4 --out " +
                  (dir / "lift")) == 0);
  const Json report = read_json(dir / "lift/lift_report.json");
  CHECK(report.at("channels").get<int>() == 4);
  CHECK(report.at("mean_valid_count").get<double>() > 0.0);
  CHECK(fs::exists(dir / "lift/feature_volume.bin"));
}

TEST_CASE("cli: errors are single-line machine-parseable JSON") {
  TempDir dir;
  const std::string cmd = std::string(VOXLIFT_CLI_PATH) +
                          " eval --pred /nonexistent --gt /nonexistent 2> " +
                          (dir / "err.txt") + " > /dev/null";
  CHECK(std::system(cmd.c_str()) != 0);
  std::ifstream err(dir / "err.txt");
  std::string line;
  std::getline(err, line);
  const Json parsed = Json::parse(line);
  CHECK(parsed.contains("error"));
  std::string extra;
  const bool has_more = bool(std::getline(err, extra)) && !extra.empty();
  CHECK_FALSE(has_more);
}

TEST_CASE("cli: unknown ablation kind is a domain error") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  const std::string exp = write_experiment(dir, scene, 5);
  CHECK(run_cli("ablate --kind nonsense --config " + exp + " --out " +
                (dir / "ab")) != 0);
}

TEST_CASE("cli: schema subcommand publishes the report schemas") {
  CHECK(run_cli("schema eval") == 0);
  CHECK(run_cli("schema") == 0);
}

TEST_CASE("cli: bundled slab fit reaches sub-voxel depth MAE in 500 iters") {
  TempDir dir;
  const std::string config =
      std::string(VOXLIFT_SOURCE_DIR) + "/configs/fit_slab.json";
  REQUIRE(run_cli("fit --config " + config + " --out " + (dir / "slab")) == 0);
  const Json report = read_json(dir / "slab/fit_report.json");
  CHECK(report.at("depth_mae").get<double>() < 0.25);  // voxel_size
  CHECK(report.at("iterations").get<int>() == 500);
}

TEST_CASE("cli: step-size ablation emits a monotone CSV and an SVG plot") {
  TempDir dir;
  // A reduced copy of the bundled ablation config keeps this test quick.
  SceneConfig scene = load_scene(std::string(VOXLIFT_SOURCE_DIR) +
                                 "/configs/scenes/slab.json");
  write_json(dir / "scene.json", scene_to_json(scene));
  Json exp{{"scene", "scene.json"},
           {"seed", 3},
           {"iterations", 120},
           {"rays_per_iter", 512},
           {"supervision_mode", "2d-only"},
           {"holdout_cameras", {3}},
           {"sampler", {{"strategy", "fixed"}, {"step_scale", 0.5},
                        {"t_near", 0.05}}},
           {"optimizer", {{"lr", 0.1}, {"weight_decay", 0.0}}},
           {"lr_schedule", "cosine"},
           {"init_density", 0.01},
           {"render", {{"width", 16}, {"height", 16}}}};
  write_json(dir / "exp.json", exp);
  REQUIRE(run_cli("ablate --kind step-size --config " + (dir / "exp.json") +
                  " --out " + (dir / "ab")) == 0);
  CHECK(fs::exists(dir / "ab/ablate_step-size.csv"));
  CHECK(fs::exists(dir / "ab/ablate_step-size.svg"));
  const Json report = read_json(dir / "ab/ablate_report.json");
  CHECK(report.at("rows").size() == 3);
  CHECK_NOTHROW(validate_against_schema(report, schema("ablate")));
}

TEST_CASE("cli: train saves a loadable head checkpoint") {
  TempDir dir;
  const std::string scene = write_small_scene(dir);
  Json exp{{"scene", scene},
           {"seed", 5},
           {"iterations", 24},
           {"rays_per_iter", 256},
           {"supervision_mode", "3d+2d"},
           {"sampler", {{"strategy", "fixed"}, {"step_scale", 0.5},
                        {"t_near", 0.05}}},
           {"optimizer", {{"lr", 0.02}, {"weight_decay", 0.0}}},
           {"render", {{"width", 16}, {"height", 16}}}};
  write_json(dir / "exp.json", exp);
  REQUIRE(run_cli("train --config " + (dir / "exp.json") +
                  " --train-frames 2 --holdout-frames 1 --out " +
                  (dir / "train")) == 0);
  const Json report = read_json(dir / "train/train_report.json");
  CHECK_NOTHROW(validate_against_schema(report, schema("train")));
  const auto head = load_head_params(dir / "train/head");
  CHECK(head.in_channels == 8);
}
