// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/optimizer.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dreamvox/binary_io.hpp"
#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

using json = nlohmann::json;

constexpr char kAdamMagic[] = "ADAM";
constexpr std::uint32_t kAdamVersion = 1;

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

void write_adam_state(std::ostream& out, const AdamState<float>& s) {
  io::write_u64(out, static_cast<std::uint64_t>(s.t));
  io::write_u64(out, s.m.size());
  io::write_f32_array(out, s.m);
  io::write_f32_array(out, s.v);
}

AdamState<float> read_adam_state(std::istream& in) {
  AdamState<float> s;
  s.t = static_cast<std::int64_t>(io::read_u64(in));
  const std::uint64_t n = io::read_u64(in);
  if (n > (1ull << 32)) throw FormatError("implausible optimizer state size");
  s.m = io::read_f32_array(in, n);
  s.v = io::read_f32_array(in, n);
  return s;
}

// Reads keys of `obj` into fields; throws on keys nobody consumed.
class JsonReader {
 public:
  explicit JsonReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ParameterError(where_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& value) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      value = obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ParameterError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.count(key)) throw ParameterError("unknown config key '" + where_ + "." + key + "'");
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

json vec_json(const Eigen::Vector3d& v) { return json::array({v[0], v[1], v[2]}); }

}  // namespace

void validate_config(const OptimConfig& c) {
  if (!(c.lr_grid > 0) || !(c.lr_mlp >= 0)) throw ParameterError("learning rates must be positive (lr_mlp may be 0 to freeze)");
  if (c.steps < 0) throw ParameterError("steps must be >= 0");
  if (!(c.lr_decay_final > 0)) throw ParameterError("lr_decay_final must be positive");
  if (c.checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
  validate_weights(c.weights);
  validate_settings(c.render);
}

OptimizerState OptimizerState::fresh(VoxelField field) {
  OptimizerState s;
  s.grid_adam = AdamState<float>::zeros(field.density.size());
  s.mlp_adam = AdamState<float>::zeros(field.color_mlp.parameter_count());
  s.field = std::move(field);
  return s;
}

void optimize(OptimizerState& state, GuidanceHandle& guidance, const SdfGrid* prior, const OptimConfig& config,
              const OptimizeCallbacks& callbacks) {
  validate_config(config);
  if (config.weights.prior > 0) {
    if (!prior) throw ParameterError("w_prior > 0 requires a shape prior");
    if (!(prior->lattice == state.field.lattice)) throw ParameterError("shape prior lattice does not match the field");
  }
  const Rng root(config.seed);
  for (long step = state.step; step < config.steps; ++step) {
    Rng camera_rng = root.split("camera", static_cast<std::uint64_t>(step));
    std::optional<Camera> camera = guidance.begin_step(step, camera_rng);
    if (!camera) camera = sample_camera_pose(camera_rng, config.poses);

    RenderSettings settings = config.render;
    settings.jitter_seed = root.split("ray_jitter", static_cast<std::uint64_t>(step)).next_u64();
    const RenderOutput output = render(state.field, *camera, settings);

    Rng background_rng = root.split("background", static_cast<std::uint64_t>(step));
    const ImageRgb background = make_background(config.background, output.width(), output.height(), background_rng);
    const ImageRgb image = composite_background(output, background);
    const GuidanceResult scored = guidance.evaluate(image, step);

    LossWeights weights = config.weights;
    if (config.anneal_tau) weights.tau_target = annealed_tau(step, config.tau_start, config.weights.tau_target, config.tau_ramp_steps);
    const TotalLoss loss = total_loss(state.field, output, scored, prior, weights);
    if (!std::isfinite(loss.breakdown.total)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    const FieldGradients grads = total_loss_backward(output, background, loss);

    const double decay = std::pow(config.lr_decay_final, config.steps > 0 ? double(step) / double(config.steps) : 0.0);
    const AdamHyper grid_hyper{config.lr_grid * decay, config.adam_beta1, config.adam_beta2, config.adam_eps, 0.0};
    const AdamHyper mlp_hyper{config.lr_mlp * decay, config.adam_beta1, config.adam_beta2, config.adam_eps, 0.0};
    adam_step<float>(std::span<float>(state.field.density), std::span<const double>(grads.density), state.grid_adam, grid_hyper);
    adam_step<float>(state.field.color_mlp.tensors(), grads.color.tensors(), state.mlp_adam, mlp_hyper);
    state.step = step + 1;

    if (callbacks.on_step) {
      double mean_T = 0;
      for (double T : output.transmittance) mean_T += T;
      mean_T /= static_cast<double>(output.transmittance.size());
      callbacks.on_step(StepReport{step, loss.breakdown, weights.tau_target, mean_T});
    }
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(state);
    }
    if (callbacks.should_stop && callbacks.should_stop(state)) break;
  }
}

VoxelField optimize(VoxelField field, GuidanceHandle& guidance, const SdfGrid* prior, const OptimConfig& config,
                    const OptimizeCallbacks& callbacks) {
  OptimizerState state = OptimizerState::fresh(std::move(field));
  optimize(state, guidance, prior, config, callbacks);
  return std::move(state.field);
}

void save_checkpoint(const std::filesystem::path& stem, const OptimizerState& state) {
  save_field(with_suffix(stem, ".vfld"), state.field);
  const auto path = with_suffix(stem, ".adam");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot open " + path.string() + " for writing");
  io::write_magic(out, kAdamMagic);
  io::write_u32(out, kAdamVersion);
  io::write_u64(out, static_cast<std::uint64_t>(state.step));
  write_adam_state(out, state.grid_adam);
  write_adam_state(out, state.mlp_adam);
  if (!out) throw FormatError("failed writing " + path.string());
}

OptimizerState load_checkpoint(const std::filesystem::path& stem) {
  OptimizerState state;
  state.field = load_field(with_suffix(stem, ".vfld"));
  const auto path = with_suffix(stem, ".adam");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  io::expect_magic(in, kAdamMagic);
  if (io::read_u32(in) != kAdamVersion) throw FormatError("unsupported ADAM version");
  state.step = static_cast<long>(io::read_u64(in));
  state.grid_adam = read_adam_state(in);
  state.mlp_adam = read_adam_state(in);
  if (state.grid_adam.m.size() != state.field.density.size() ||
      state.mlp_adam.m.size() != state.field.color_mlp.parameter_count()) {
    throw FormatError("optimizer state does not match the field checkpoint");
  }
  return state;
}

std::string config_to_json(const OptimConfig& c) {
  json j;
  j["lr_grid"] = c.lr_grid;
  j["lr_mlp"] = c.lr_mlp;
  j["steps"] = c.steps;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["lr_decay_final"] = c.lr_decay_final;
  j["seed"] = c.seed;
  j["weights"] = {{"guidance", c.weights.guidance},
                  {"transmittance", c.weights.transmittance},
                  {"prior", c.weights.prior},
                  {"tau_target", c.weights.tau_target}};
  j["anneal_tau"] = c.anneal_tau;
  j["tau_start"] = c.tau_start;
  j["tau_ramp_steps"] = c.tau_ramp_steps;
  j["poses"] = {{"azimuth", {c.poses.azimuth.lo, c.poses.azimuth.hi}},
                {"elevation", {c.poses.elevation.lo, c.poses.elevation.hi}},
                {"radius", c.poses.radius},
                {"fov_y_deg", c.poses.fov_y_deg},
                {"width", c.poses.width},
                {"height", c.poses.height},
                {"jitter_radius", c.poses.jitter.radius},
                {"jitter_look_at", c.poses.jitter.look_at}};
  j["render"] = {{"near", c.render.near},
                 {"far", c.render.far},
                 {"samples_per_ray", c.render.samples_per_ray},
                 {"background", vec_json(c.render.background)},
                 {"jitter", c.render.jitter},
                 {"threads", c.render.threads}};
  j["background"] = to_string(c.background);
  j["checkpoint_every"] = c.checkpoint_every;
  j["grid_resolution"] = c.grid_resolution;
  j["grid_extent"] = c.grid_extent;
  j["prior_beta"] = c.prior_beta;
  j["alpha_init"] = c.alpha_init;
  j["color"] = {{"encoding_levels", c.color.encoding_levels}, {"hidden_widths", c.color.hidden_widths}};
  return j.dump(2);
}

OptimConfig config_from_json(const std::string& text, const OptimConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParameterError(std::string("config is not valid JSON: ") + e.what());
  }
  OptimConfig c = base;
  JsonReader r(j, "config");
  r.get("lr_grid", c.lr_grid);
  r.get("lr_mlp", c.lr_mlp);
  r.get("steps", c.steps);
  r.get("adam_beta1", c.adam_beta1);
  r.get("adam_beta2", c.adam_beta2);
  r.get("adam_eps", c.adam_eps);
  r.get("lr_decay_final", c.lr_decay_final);
  r.get("seed", c.seed);
  if (const json* w = r.child("weights")) {
    JsonReader wr(*w, "config.weights");
    wr.get("guidance", c.weights.guidance);
    wr.get("transmittance", c.weights.transmittance);
    wr.get("prior", c.weights.prior);
    wr.get("tau_target", c.weights.tau_target);
    wr.finish();
  }
  r.get("anneal_tau", c.anneal_tau);
  r.get("tau_start", c.tau_start);
  r.get("tau_ramp_steps", c.tau_ramp_steps);
  if (const json* p = r.child("poses")) {
    JsonReader pr(*p, "config.poses");
    std::array<double, 2> az{c.poses.azimuth.lo, c.poses.azimuth.hi}, el{c.poses.elevation.lo, c.poses.elevation.hi};
    pr.get("azimuth", az);
    pr.get("elevation", el);
    c.poses.azimuth = {az[0], az[1]};
    c.poses.elevation = {el[0], el[1]};
    pr.get("radius", c.poses.radius);
    pr.get("fov_y_deg", c.poses.fov_y_deg);
    pr.get("width", c.poses.width);
    pr.get("height", c.poses.height);
    pr.get("jitter_radius", c.poses.jitter.radius);
    pr.get("jitter_look_at", c.poses.jitter.look_at);
    pr.finish();
  }
  if (const json* rs = r.child("render")) {
    JsonReader rr(*rs, "config.render");
    rr.get("near", c.render.near);
    rr.get("far", c.render.far);
    rr.get("samples_per_ray", c.render.samples_per_ray);
    std::array<double, 3> bg{c.render.background[0], c.render.background[1], c.render.background[2]};
    rr.get("background", bg);
    c.render.background = Eigen::Vector3d(bg[0], bg[1], bg[2]);
    rr.get("jitter", c.render.jitter);
    rr.get("threads", c.render.threads);
    rr.finish();
  }
  std::string background = to_string(c.background);
  r.get("background", background);
  c.background = parse_background_mode(background);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("grid_resolution", c.grid_resolution);
  r.get("grid_extent", c.grid_extent);
  r.get("prior_beta", c.prior_beta);
  r.get("alpha_init", c.alpha_init);
  if (const json* col = r.child("color")) {
    JsonReader cr(*col, "config.color");
    cr.get("encoding_levels", c.color.encoding_levels);
    cr.get("hidden_widths", c.color.hidden_widths);
    cr.finish();
  }
  r.finish();
  return c;
}

}  // namespace dreamvox
