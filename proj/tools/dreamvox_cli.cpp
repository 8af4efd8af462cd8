// SPDX-License-Identifier: Apache-2.0
//
// dreamvox command-line entry point.
//
// Exit codes: 0 success, 2 usage or input error, 3 guidance transport
// failure, 4 numerical failure, 1 anything unexpected.

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dreamvox/camera.hpp"
#include "dreamvox/diffusion.hpp"
#include "dreamvox/errors.hpp"
#include "dreamvox/guidance.hpp"
#include "dreamvox/image.hpp"
#include "dreamvox/mesh_extract.hpp"
#include "dreamvox/optimizer.hpp"
#include "dreamvox/renderer.hpp"
#include "dreamvox/rng.hpp"
#include "dreamvox/sdf_prior.hpp"
#include "dreamvox/voxel_field.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dreamvox;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitTransport = 3;
constexpr int kExitNumerical = 4;

/// Input problems detected after argument parsing (missing files, bad combinations).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Write-then-rename so readers never observe a partial file.
void write_atomically(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw UsageError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path.string());
}

std::string file_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return std::string(magic, static_cast<std::size_t>(in.gcount()));
}

Vec3 to_vec3(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

Camera snapshot_camera(double azimuth, const PoseSampling& poses, int size) {
  return orbit_camera(azimuth, 25.0, poses.radius, poses.fov_y_deg, size, size);
}

// ---------------------------------------------------------------- make-prior

struct MakePriorArgs {
  std::string shape = "sphere";
  double radius = 0.5;
  std::vector<double> center{0, 0, 0};
  std::vector<double> half_extents{0.5, 0.5, 0.5};
  std::vector<double> a{0, 0, -0.5};
  std::vector<double> b{0, 0, 0.5};
  int dims = 64;
  double extent = 2.0;
  std::string op;
  std::vector<std::string> inputs;
  std::string out;
};

void add_make_prior(CLI::App& app, MakePriorArgs& args) {
  auto* cmd = app.add_subcommand("make-prior", "Build a primitive or CSG signed distance grid (SDFG)");
  cmd->add_option("--shape", args.shape, "Primitive: sphere, box or capsule")
      ->check(CLI::IsMember({"sphere", "box", "capsule"}))
      ->capture_default_str();
  cmd->add_option("--radius", args.radius, "Sphere or capsule radius")->capture_default_str();
  cmd->add_option("--center", args.center, "Sphere or box center x y z")->expected(3);
  cmd->add_option("--half-extents", args.half_extents, "Box half extents x y z")->expected(3);
  cmd->add_option("--a", args.a, "Capsule segment start x y z")->expected(3);
  cmd->add_option("--b", args.b, "Capsule segment end x y z")->expected(3);
  cmd->add_option("--dims", args.dims, "Samples per axis")->check(CLI::Range(2, 1024))->capture_default_str();
  cmd->add_option("--extent", args.extent, "Edge length of the centered cube")->capture_default_str();
  cmd->add_option("--op", args.op, "Combine --inputs instead of building a primitive")
      ->check(CLI::IsMember({"union", "intersection", "difference"}));
  cmd->add_option("--inputs", args.inputs, "Two SDFG files for --op")->expected(2);
  cmd->add_option("--out", args.out, "Output SDFG path")->required();
}

int run_make_prior(const MakePriorArgs& args) {
  SdfGrid grid;
  if (!args.op.empty()) {
    if (args.inputs.size() != 2) throw UsageError("--op needs exactly two --inputs");
    for (const auto& p : args.inputs) require_file(p, "input grid");
    const CsgOp op = args.op == "union" ? CsgOp::union_ : args.op == "intersection" ? CsgOp::intersection : CsgOp::difference;
    grid = csg_combine(load_sdf(args.inputs[0]), load_sdf(args.inputs[1]), op);
  } else {
    if (!args.inputs.empty()) throw UsageError("--inputs requires --op");
    PrimitiveSpec spec;
    if (args.shape == "sphere") spec = SpherePrimitive{to_vec3(args.center), args.radius};
    else if (args.shape == "box") spec = BoxPrimitive{to_vec3(args.center), to_vec3(args.half_extents)};
    else spec = CapsulePrimitive{to_vec3(args.a), to_vec3(args.b), args.radius};
    grid = make_primitive_sdf(spec, centered_cube_lattice(args.dims, args.extent));
  }
  save_sdf(args.out, grid);
  return kExitOk;
}

// ---------------------------------------------------------------- optimize

struct OptimizeArgs {
  std::string config_path;
  std::string prior;
  std::string guidance = "photometric";
  std::string reference;
  int views = 8;
  std::string endpoint;
  std::string prompt;
  double timeout = 30.0;
  int retries = 3;
  std::string out;
  bool resume = false;
  long snapshot_every = 0;
  int snapshot_size = 128;
  std::optional<long> steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> resolution;
  std::optional<double> lr_grid;
  std::optional<double> lr_mlp;
  std::optional<int> samples;
  std::optional<int> image_size;
  std::optional<double> w_prior;
  std::optional<double> w_transmittance;
  std::optional<std::string> background;
  std::optional<long> checkpoint_every;
};

void add_optimize(CLI::App& app, OptimizeArgs& args) {
  auto* cmd = app.add_subcommand("optimize", "Optimize a voxel field against photometric or remote guidance");
  cmd->add_option("--config", args.config_path, "JSON config; flags below override it")->check(CLI::ExistingFile);
  cmd->add_option("--prior", args.prior, "Shape prior SDFG used for initialization and the prior loss");
  cmd->add_option("--guidance", args.guidance, "photometric or remote")
      ->check(CLI::IsMember({"photometric", "remote"}))
      ->capture_default_str();
  cmd->add_option("--reference", args.reference, "Photometric targets: SDFG or VFLD to render target views from");
  cmd->add_option("--views", args.views, "Number of photometric target views")->check(CLI::Range(1, 360))->capture_default_str();
  cmd->add_option("--endpoint", args.endpoint, "Guidance service URL (default $DREAMVOX_GUIDANCE_ENDPOINT)");
  cmd->add_option("--prompt", args.prompt, "Text prompt for remote guidance");
  cmd->add_option("--timeout", args.timeout, "Per-request timeout in seconds")->capture_default_str();
  cmd->add_option("--retries", args.retries, "Retries per request")->check(CLI::Range(0, 100))->capture_default_str();
  cmd->add_option("--out", args.out, "Run directory")->required();
  cmd->add_flag("--resume", args.resume, "Continue from the checkpoint in the run directory");
  cmd->add_option("--snapshot-every", args.snapshot_every, "Snapshot cadence in steps (0: final only)")->capture_default_str();
  cmd->add_option("--snapshot-size", args.snapshot_size, "Snapshot edge length in pixels")->check(CLI::Range(1, 4096))->capture_default_str();
  cmd->add_option("--steps", args.steps, "Total steps");
  cmd->add_option("--seed", args.seed, "Random seed");
  cmd->add_option("--resolution", args.resolution, "Grid samples per axis (ignored with --prior)");
  cmd->add_option("--lr-grid", args.lr_grid, "Grid learning rate");
  cmd->add_option("--lr-mlp", args.lr_mlp, "Color MLP learning rate");
  cmd->add_option("--samples", args.samples, "Samples per ray");
  cmd->add_option("--image-size", args.image_size, "Training render edge length in pixels");
  cmd->add_option("--w-prior", args.w_prior, "Prior-preserving loss weight");
  cmd->add_option("--w-transmittance", args.w_transmittance, "Transmittance loss weight");
  cmd->add_option("--background", args.background, "solid_random, white, checkerboard or gaussian_noise");
  cmd->add_option("--checkpoint-every", args.checkpoint_every, "Checkpoint cadence in steps");
}

OptimConfig resolve_config(const OptimizeArgs& args) {
  OptimConfig config;
  if (args.guidance == "photometric") config.background = BackgroundMode::white;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    std::stringstream text;
    text << in.rdbuf();
    config = config_from_json(text.str(), config);
  }
  if (args.steps) config.steps = *args.steps;
  if (args.seed) config.seed = *args.seed;
  if (args.resolution) config.grid_resolution = *args.resolution;
  if (args.lr_grid) config.lr_grid = *args.lr_grid;
  if (args.lr_mlp) config.lr_mlp = *args.lr_mlp;
  if (args.samples) config.render.samples_per_ray = *args.samples;
  if (args.image_size) config.poses.width = config.poses.height = *args.image_size;
  if (args.w_prior) config.weights.prior = *args.w_prior;
  if (args.w_transmittance) config.weights.transmittance = *args.w_transmittance;
  if (args.background) config.background = parse_background_mode(*args.background);
  if (args.checkpoint_every) config.checkpoint_every = *args.checkpoint_every;
  // The prior loss needs a prior; without one it is simply off.
  if (args.prior.empty()) config.weights.prior = 0.0;
  validate_config(config);
  return config;
}

std::unique_ptr<GuidanceHandle> make_guidance(const OptimizeArgs& args, const OptimConfig& config) {
  if (args.guidance == "remote") {
    std::string url = args.endpoint;
    if (url.empty())
      if (const char* env = std::getenv("DREAMVOX_GUIDANCE_ENDPOINT")) url = env;
    if (url.empty()) throw UsageError("remote guidance needs --endpoint or DREAMVOX_GUIDANCE_ENDPOINT");
    if (args.prompt.empty()) throw UsageError("remote guidance needs --prompt");
    RemoteGuidanceOptions options;
    options.endpoint = Endpoint::parse(url);
    options.prompt = args.prompt;
    options.timeout_seconds = args.timeout;
    options.retries = args.retries;
    return std::make_unique<RemoteGuidance>(options);
  }
  if (args.reference.empty()) throw UsageError("photometric guidance needs --reference");
  require_file(args.reference, "reference");
  const VoxelField reference =
      file_magic(args.reference) == "SDFG"
          ? init_from_prior(load_sdf(args.reference), config.prior_beta, config.alpha_init, config.color, config.seed + 1)
          : load_field(args.reference);
  RenderSettings settings = config.render;
  settings.jitter = false;
  std::vector<PhotometricView> views;
  for (int v = 0; v < args.views; ++v) {
    const double azimuth = 360.0 * v / args.views;
    const double elevation = v % 2 == 0 ? 15.0 : 35.0;
    const Camera camera = orbit_camera(azimuth, elevation, config.poses.radius, config.poses.fov_y_deg,
                                       config.poses.width, config.poses.height);
    views.push_back({camera, render(reference, camera, settings).rgb});
  }
  return std::make_unique<PhotometricGuidance>(std::move(views));
}

void write_snapshots(const fs::path& dir, const VoxelField& field, const OptimConfig& config, int size, long step) {
  fs::create_directories(dir);
  RenderSettings settings = config.render;
  settings.jitter = false;
  settings.background = Eigen::Vector3d::Ones();
  for (int azimuth : {0, 90, 180, 270}) {
    char name[64];
    std::snprintf(name, sizeof name, "step%06ld_az%03d.png", step, azimuth);
    write_png(dir / name, render(field, snapshot_camera(azimuth, config.poses, size), settings).rgb);
  }
}

int run_optimize(const OptimizeArgs& args) {
  const std::string started = utc_now();
  const OptimConfig config = resolve_config(args);
  const fs::path dir = args.out;
  fs::create_directories(dir);
  const fs::path stem = dir / "checkpoint";

  std::optional<SdfGrid> prior;
  if (!args.prior.empty()) {
    require_file(args.prior, "prior");
    prior = load_sdf(args.prior);
  }

  OptimizerState state;
  if (args.resume) {
    fs::path vfld = stem;
    vfld += ".vfld";
    require_file(vfld, "checkpoint");
    state = load_checkpoint(stem);
  } else if (prior) {
    state = OptimizerState::fresh(init_from_prior(*prior, config.prior_beta, config.alpha_init, config.color, config.seed));
  } else {
    const Lattice lattice = centered_cube_lattice(config.grid_resolution, config.grid_extent);
    state = OptimizerState::fresh(init_transparent(lattice, config.alpha_init, lattice.voxel_size, config.color, config.seed));
  }

  const std::unique_ptr<GuidanceHandle> guidance = make_guidance(args, config);
  std::ofstream metrics(dir / "metrics.jsonl", args.resume ? std::ios::app : std::ios::trunc);
  std::vector<std::string> checkpoints;
  json final_metrics = json::object();

  OptimizeCallbacks callbacks;
  callbacks.on_step = [&](const StepReport& r) {
    final_metrics = {{"step", r.step},
                     {"loss", r.loss.total},
                     {"guidance", r.loss.guidance},
                     {"transmittance", r.loss.transmittance},
                     {"prior", r.loss.prior},
                     {"tau", r.tau},
                     {"mean_transmittance", r.mean_transmittance}};
    metrics << final_metrics.dump() << '\n' << std::flush;
    if (args.snapshot_every > 0 && (r.step + 1) % args.snapshot_every == 0)
      write_snapshots(dir / "snapshots", state.field, config, args.snapshot_size, r.step + 1);
  };
  callbacks.on_checkpoint = [&](const OptimizerState& s) {
    save_checkpoint(stem, s);
    checkpoints.push_back(stem.string() + "@" + std::to_string(s.step));
  };

  std::string status = "completed";
  std::string error;
  int code = kExitOk;
  try {
    optimize(state, *guidance, prior ? &*prior : nullptr, config, callbacks);
  } catch (const TransportError& e) {
    status = "transport_error";
    error = e.what();
    code = kExitTransport;
  } catch (const ProtocolError& e) {
    status = "protocol_error";
    error = e.what();
    code = kExitTransport;
  } catch (const NumericalError& e) {
    status = "numerical_error";
    error = e.what();
    code = kExitNumerical;
  }

  // On transport failure the state holds the last completed step and stays resumable.
  if (code != kExitNumerical) {
    save_checkpoint(stem, state);
    checkpoints.push_back(stem.string() + "@" + std::to_string(state.step));
    write_snapshots(dir / "snapshots", state.field, config, args.snapshot_size, state.step);
  }

  json manifest = {{"command", "optimize"},
                   {"status", status},
                   {"config", json::parse(config_to_json(config))},
                   {"seed", config.seed},
                   {"guidance", args.guidance},
                   {"prior", args.prior},
                   {"resumed", args.resume},
                   {"started", started},
                   {"finished", utc_now()},
                   {"final_step", state.step},
                   {"checkpoints", checkpoints},
                   {"final_metrics", final_metrics}};
  if (!error.empty()) manifest["error"] = error;
  write_atomically(dir / "manifest.json", manifest.dump(2) + "\n");
  if (!error.empty()) std::cerr << "error: " << error << '\n';
  return code;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
  std::string checkpoint;
  double azimuth = 0.0;
  double elevation = 25.0;
  double radius = 2.5;
  double fov = 40.0;
  int width = 128;
  int height = 128;
  int samples = 192;
  double near = 0.8;
  double far = 4.2;
  std::vector<double> background{1, 1, 1};
  std::string out;
};

void add_render(CLI::App& app, RenderArgs& args) {
  auto* cmd = app.add_subcommand("render", "Render a VFLD checkpoint to PNG");
  cmd->add_option("--checkpoint", args.checkpoint, "VFLD file")->required();
  cmd->add_option("--azimuth", args.azimuth, "Azimuth in degrees")->capture_default_str();
  cmd->add_option("--elevation", args.elevation, "Elevation in degrees")->capture_default_str();
  cmd->add_option("--radius", args.radius, "Camera distance from the origin")->capture_default_str();
  cmd->add_option("--fov", args.fov, "Vertical field of view in degrees")->capture_default_str();
  cmd->add_option("--width", args.width, "Image width")->capture_default_str();
  cmd->add_option("--height", args.height, "Image height")->capture_default_str();
  cmd->add_option("--samples", args.samples, "Samples per ray")->capture_default_str();
  cmd->add_option("--near", args.near, "Near plane distance")->capture_default_str();
  cmd->add_option("--far", args.far, "Far plane distance")->capture_default_str();
  cmd->add_option("--background", args.background, "Background color r g b in [0, 1]")->expected(3);
  cmd->add_option("--out", args.out, "Output PNG path")->required();
}

int run_render(const RenderArgs& args) {
  require_file(args.checkpoint, "checkpoint");
  const VoxelField field = load_field(args.checkpoint);
  RenderSettings settings;
  settings.samples_per_ray = args.samples;
  settings.near = args.near;
  settings.far = args.far;
  settings.background = Eigen::Vector3d(args.background[0], args.background[1], args.background[2]);
  const Camera camera = orbit_camera(args.azimuth, args.elevation, args.radius, args.fov, args.width, args.height);
  write_png(args.out, render(field, camera, settings).rgb);
  return kExitOk;
}

// ---------------------------------------------------------------- extract-mesh

struct ExtractArgs {
  std::string input;
  int resolution = 64;
  std::optional<double> iso;
  std::string out;
};

void add_extract(CLI::App& app, ExtractArgs& args) {
  auto* cmd = app.add_subcommand("extract-mesh", "Extract an OBJ surface from an SDFG or VFLD file");
  cmd->add_option("--input", args.input, "SDFG or VFLD file")->required();
  cmd->add_option("--resolution", args.resolution, "Opacity grid samples per axis for VFLD input")
      ->check(CLI::Range(2, 1024))
      ->capture_default_str();
  cmd->add_option("--iso", args.iso, "Iso level (default 0 for SDFG, 0.5 opacity for VFLD)");
  cmd->add_option("--out", args.out, "Output OBJ path")->required();
}

int run_extract(const ExtractArgs& args) {
  require_file(args.input, "input");
  const std::string magic = file_magic(args.input);
  TriangleMesh mesh;
  if (magic == "SDFG") {
    mesh = marching_cubes(load_sdf(args.input), args.iso.value_or(0.0), InsideSide::below);
  } else if (magic == "VFLD") {
    const SdfGrid opacity = field_to_opacity_grid(load_field(args.input), {args.resolution, args.resolution, args.resolution});
    mesh = marching_cubes(opacity, args.iso.value_or(0.5), InsideSide::above);
  } else {
    throw FormatError("unrecognized input format: " + args.input);
  }
  if (mesh.empty()) std::cerr << "warning: no surface crosses the iso level; writing an empty mesh\n";
  save_obj(args.out, mesh);
  return kExitOk;
}

// ---------------------------------------------------------------- diffusion

struct DiffusionTrainArgs {
  std::string data = "mixture2";
  long pairs = 20000;
  std::string preset = "desk";
  std::optional<long> steps;
  std::optional<int> batch;
  std::optional<double> lr;
  std::uint64_t seed = 0;
  long log_every = 100;
  std::string out;
};

struct DiffusionSampleArgs {
  std::string model;
  int label = 0;
  int count = 1000;
  std::uint64_t seed = 0;
  bool raw_weights = false;
  std::string reference;
  std::string out;
};

void add_diffusion(CLI::App& app, DiffusionTrainArgs& train_args, DiffusionSampleArgs& sample_args) {
  auto* cmd = app.add_subcommand("diffusion", "Train or sample the conditional diffusion prior");
  cmd->require_subcommand(1);
  auto* train_cmd = cmd->add_subcommand("train", "Train a denoiser and write an EDIF checkpoint");
  train_cmd->add_option("--data", train_args.data, "Synthetic generator (mixture2, rings) or EPRS dataset file")
      ->capture_default_str();
  train_cmd->add_option("--pairs", train_args.pairs, "Pairs drawn from a synthetic generator")->capture_default_str();
  train_cmd->add_option("--preset", train_args.preset, "Hyper-parameter preset: paper or desk")
      ->check(CLI::IsMember({"paper", "desk"}))
      ->capture_default_str();
  train_cmd->add_option("--steps", train_args.steps, "Override the preset step count");
  train_cmd->add_option("--batch", train_args.batch, "Override the preset batch size");
  train_cmd->add_option("--lr", train_args.lr, "Override the preset learning rate");
  train_cmd->add_option("--seed", train_args.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--log-every", train_args.log_every, "Loss line cadence in steps")->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--out", train_args.out, "Output EDIF path")->required();

  auto* sample_cmd = cmd->add_subcommand("sample", "Draw samples from an EDIF checkpoint");
  sample_cmd->add_option("--model", sample_args.model, "EDIF checkpoint")->required();
  sample_cmd->add_option("--label", sample_args.label, "Synthetic class label")->check(CLI::Range(0, 1))->capture_default_str();
  sample_cmd->add_option("--count", sample_args.count, "Number of samples")->check(CLI::Range(1, 10000000))->capture_default_str();
  sample_cmd->add_option("--seed", sample_args.seed, "Random seed")->capture_default_str();
  sample_cmd->add_flag("--raw-weights", sample_args.raw_weights, "Sample with the raw weights instead of the EMA");
  sample_cmd->add_option("--reference", sample_args.reference, "Synthetic generator to score against (sliced Wasserstein)");
  sample_cmd->add_option("--out", sample_args.out, "Output f32 dump (count x dim, little-endian)")->required();
}

int run_diffusion_train(const DiffusionTrainArgs& args) {
  const std::string started = utc_now();
  diffusion::TrainConfig config = args.preset == "paper" ? diffusion::paper_preset() : diffusion::desk_preset();
  if (args.steps) config.steps = *args.steps;
  if (args.batch) config.batch_size = *args.batch;
  if (args.lr) config.lr = *args.lr;
  config.seed = args.seed;

  diffusion::Dataset data;
  if (fs::is_regular_file(args.data)) {
    data = diffusion::load_dataset(args.data);
  } else {
    const diffusion::Synthetic kind = diffusion::parse_synthetic(args.data);
    Rng rng = Rng(args.seed).split("synthetic_data");
    data = diffusion::make_synthetic_dataset(kind, args.pairs, rng);
  }
  const diffusion::DenoiserConfig model_config = args.preset == "paper"
                                                     ? diffusion::paper_denoiser(data.data_dim(), data.cond_dim())
                                                     : diffusion::desk_denoiser(data.data_dim(), data.cond_dim());
  double last_loss = std::nan("");
  const diffusion::Trainer trainer = diffusion::train(data, model_config, config, [&](long step, double loss) {
    last_loss = loss;
    if (step % args.log_every == 0 || step + 1 == config.steps)
      std::cout << json{{"step", step}, {"loss", loss}}.dump() << '\n';
  });
  if (config.steps > 0 && !std::isfinite(last_loss)) throw NumericalError("non-finite training loss");
  diffusion::save_model(args.out, trainer);

  const json manifest = {{"command", "diffusion train"},
                         {"preset", args.preset},
                         {"data", args.data},
                         {"seed", args.seed},
                         {"timesteps", config.timesteps},
                         {"lr", config.lr},
                         {"weight_decay", config.weight_decay},
                         {"max_grad_norm", config.max_grad_norm},
                         {"batch_size", config.batch_size},
                         {"steps", config.steps},
                         {"ema_beta", config.ema_beta},
                         {"hidden_widths", model_config.hidden_widths},
                         {"time_dim", model_config.time_dim},
                         {"started", started},
                         {"finished", utc_now()},
                         {"checkpoints", {args.out}},
                         {"final_metrics", {{"loss", last_loss}}}};
  write_atomically(args.out + ".manifest.json", manifest.dump(2) + "\n");
  return kExitOk;
}

int run_diffusion_sample(const DiffusionSampleArgs& args) {
  require_file(args.model, "model");
  const diffusion::LoadedModel loaded = diffusion::load_model(args.model);
  const diffusion::Denoiser& model = args.raw_weights ? loaded.model : loaded.ema;
  if (model.config.cond_dim != 2) throw UsageError("--label needs a model with a 2-dim one-hot condition");
  const Eigen::VectorXd c = diffusion::synthetic_condition(args.label);
  const Eigen::MatrixXd cond = c.replicate(1, args.count);
  Rng rng = Rng(args.seed).split("sample");
  const Eigen::MatrixXd x = diffusion::sample(model, cond, loaded.schedule, rng);

  std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + args.out);
  for (Eigen::Index n = 0; n < x.cols(); ++n)
    for (Eigen::Index d = 0; d < x.rows(); ++d) {
      const float v = static_cast<float>(x(d, n));
      unsigned char bytes[4];
      std::memcpy(bytes, &v, 4);
      if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + 4);
      out.write(reinterpret_cast<const char*>(bytes), 4);
    }
  if (!out.flush()) throw UsageError("cannot write " + args.out);

  const Eigen::VectorXd mean = x.rowwise().mean();
  const Eigen::VectorXd stddev = ((x.colwise() - mean).array().square().rowwise().sum() / double(x.cols())).sqrt();
  json stats = {{"count", x.cols()},
                {"dim", x.rows()},
                {"label", args.label},
                {"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                {"std", std::vector<double>(stddev.data(), stddev.data() + stddev.size())}};
  if (!args.reference.empty()) {
    const diffusion::Synthetic kind = diffusion::parse_synthetic(args.reference);
    Rng ref_rng = Rng(args.seed).split("reference");
    const Eigen::MatrixXd truth = diffusion::sample_synthetic(kind, args.label, args.count, ref_rng);
    Rng proj_rng = Rng(args.seed).split("projections");
    stats["sliced_wasserstein"] = diffusion::sliced_wasserstein(x, truth, 256, proj_rng);
  }
  std::cout << stats.dump() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dreamvox: voxel radiance fields from shape priors and guidance"};
  app.require_subcommand(1);
  MakePriorArgs prior_args;
  OptimizeArgs optimize_args;
  RenderArgs render_args;
  ExtractArgs extract_args;
  DiffusionTrainArgs train_args;
  DiffusionSampleArgs sample_args;
  add_make_prior(app, prior_args);
  add_optimize(app, optimize_args);
  add_render(app, render_args);
  add_extract(app, extract_args);
  add_diffusion(app, train_args, sample_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("make-prior")) return run_make_prior(prior_args);
    if (app.got_subcommand("optimize")) return run_optimize(optimize_args);
    if (app.got_subcommand("render")) return run_render(render_args);
    if (app.got_subcommand("extract-mesh")) return run_extract(extract_args);
    const CLI::App* diff = app.get_subcommand("diffusion");
    if (diff->got_subcommand("train")) return run_diffusion_train(train_args);
    return run_diffusion_sample(sample_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TransportError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTransport;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTransport;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
