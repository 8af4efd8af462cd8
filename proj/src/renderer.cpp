// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "dreamvox/activations.hpp"
#include "dreamvox/errors.hpp"
#include "dreamvox/parallel.hpp"

namespace dreamvox {
namespace {

constexpr std::size_t kRaysPerChunk = 64;

std::size_t chunk_count(std::size_t rays) { return (rays + kRaysPerChunk - 1) / kRaysPerChunk; }

Eigen::MatrixXd encode_samples(const RenderTape& tape, std::size_t first_ray, std::size_t last_ray) {
  const auto K = static_cast<std::size_t>(tape.samples_per_ray);
  Eigen::MatrixXd enc(encoding_width(tape.encoding_levels), static_cast<Eigen::Index>((last_ray - first_ray) * K));
  for (std::size_t r = first_ray; r < last_ray; ++r) {
    const Ray& ray = tape.rays[r];
    for (std::size_t i = 0; i < K; ++i) {
      const std::size_t s = r * K + i;
      const Vec3 x = ray.origin + tape.t[s] * ray.direction;
      positional_encoding_into(normalize_to_box(tape.lattice, x), tape.encoding_levels,
                               enc.col(static_cast<Eigen::Index>((r - first_ray) * K + i)).data());
    }
  }
  return enc;
}

}  // namespace

void validate_settings(const RenderSettings& settings) {
  if (!(settings.near > 0.0) || !(settings.far > settings.near)) throw ParameterError("render range needs 0 < near < far");
  if (settings.samples_per_ray < 2) throw ParameterError("samples_per_ray must be >= 2");
  if (!(settings.background.minCoeff() >= 0.0 && settings.background.maxCoeff() <= 1.0)) {
    throw ParameterError("background color must lie in [0, 1]");
  }
}

RenderOutput render(const VoxelField& field, const Camera& camera, const RenderSettings& settings) {
  validate_settings(settings);
  RenderOutput out;
  RenderTape& tape = out.tape;
  tape.rays = generate_rays(camera);
  tape.width = camera.width;
  tape.height = camera.height;
  tape.samples_per_ray = settings.samples_per_ray;
  tape.segment = (settings.far - settings.near) / settings.samples_per_ray;
  tape.background = settings.background;
  tape.lattice = field.lattice;
  tape.encoding_levels = field.encoding_levels;
  tape.color_net = std::make_shared<const MlpEvaluator>(field.color_mlp);
  tape.threads = settings.threads;

  const std::size_t n_rays = tape.rays.size();
  const auto K = static_cast<std::size_t>(settings.samples_per_ray);
  const std::size_t n_samples = n_rays * K;
  tape.t.resize(n_samples);
  tape.sigma.resize(n_samples);
  tape.alpha.resize(n_samples);
  tape.transmittance.resize(n_samples);
  tape.dsigma_draw.resize(n_samples);
  tape.color.resize(n_samples);
  out.rgb = ImageRgb(camera.width, camera.height);
  out.transmittance.assign(n_rays, 1.0);

  const double delta = tape.segment;
  const Rng jitter_root(settings.jitter_seed);
  parallel_for(chunk_count(n_rays), settings.threads, [&](std::size_t chunk) {
    const std::size_t first = chunk * kRaysPerChunk;
    const std::size_t last = std::min(n_rays, first + kRaysPerChunk);
    for (std::size_t r = first; r < last; ++r) {
      Rng jitter_rng = jitter_root.split("ray_jitter", r);
      const Ray& ray = tape.rays[r];
      for (std::size_t i = 0; i < K; ++i) {
        const std::size_t s = r * K + i;
        // Sample at the start of each segment, or uniformly inside it when jittered.
        const double u = settings.jitter ? jitter_rng.uniform() : 0.0;
        tape.t[s] = settings.near + (static_cast<double>(i) + u) * delta;
        const Vec3 x = ray.origin + tape.t[s] * ray.direction;
        const double z = query_raw_density(field, x) + field.bias;
        tape.sigma[s] = softplus(z);
        tape.dsigma_draw[s] = sigmoid(z);
        tape.alpha[s] = -std::expm1(-tape.sigma[s] * delta);
      }
    }
    const Eigen::MatrixXd colors = tape.color_net->forward(encode_samples(tape, first, last));
    for (std::size_t r = first; r < last; ++r) {
      double T = 1.0;
      Eigen::Vector3d c = Eigen::Vector3d::Zero();
      for (std::size_t i = 0; i < K; ++i) {
        const std::size_t s = r * K + i;
        tape.color[s] = colors.col(static_cast<Eigen::Index>((r - first) * K + i));
        tape.transmittance[s] = T;
        c += T * tape.alpha[s] * tape.color[s];
        T *= std::exp(-tape.sigma[s] * delta);
      }
      c += T * settings.background;
      out.transmittance[r] = T;
      for (int ch = 0; ch < 3; ++ch) out.rgb.data[r * 3 + ch] = c[ch];
    }
  });
  return out;
}

FieldGradients FieldGradients::zeros_like(const VoxelField& field) {
  return {std::vector<double>(field.density.size(), 0.0), MlpGradients::zeros_like(field.color_mlp)};
}

FieldGradients& FieldGradients::operator+=(const FieldGradients& other) {
  for (std::size_t n = 0; n < density.size(); ++n) density[n] += other.density[n];
  color += other.color;
  return *this;
}

FieldGradients render_backward(const RenderTape& tape, const ImageRgb& dL_drgb, std::span<const double> dL_dtransmittance) {
  const std::size_t n_rays = tape.rays.size();
  if (dL_drgb.width != tape.width || dL_drgb.height != tape.height) {
    throw ParameterError("render_backward: pixel adjoint shape does not match the tape");
  }
  if (dL_dtransmittance.size() != n_rays) throw ParameterError("render_backward: transmittance adjoint shape mismatch");
  if (!tape.color_net) throw ParameterError("render_backward: empty tape");

  const auto K = static_cast<std::size_t>(tape.samples_per_ray);
  const double delta = tape.segment;
  std::vector<double> dL_draw(n_rays * K, 0.0);
  const std::size_t n_chunks = chunk_count(n_rays);
  std::vector<MlpGradients> chunk_grads(n_chunks);

  parallel_for(n_chunks, tape.threads, [&](std::size_t chunk) {
    const std::size_t first = chunk * kRaysPerChunk;
    const std::size_t last = std::min(n_rays, first + kRaysPerChunk);
    Eigen::MatrixXd dL_dcolor(3, static_cast<Eigen::Index>((last - first) * K));
    for (std::size_t r = first; r < last; ++r) {
      const Eigen::Vector3d g(dL_drgb.data[r * 3], dL_drgb.data[r * 3 + 1], dL_drgb.data[r * 3 + 2]);
      const double T_final = tape.transmittance[r * K + K - 1] * std::exp(-tape.sigma[r * K + K - 1] * delta);
      // suffix = g · (Σ_{j>i} w_j c_j + T_{K+1} c_bg) + gT · T_{K+1}
      double suffix = g.dot(tape.background) * T_final + dL_dtransmittance[r] * T_final;
      for (std::size_t i = K; i-- > 0;) {
        const std::size_t s = r * K + i;
        const double T = tape.transmittance[s];
        const double w = T * tape.alpha[s];
        const double gc = g.dot(tape.color[s]);
        const double dL_dsigma = delta * (T * (1.0 - tape.alpha[s]) * gc - suffix);
        dL_draw[s] = dL_dsigma * tape.dsigma_draw[s];
        dL_dcolor.col(static_cast<Eigen::Index>((r - first) * K + i)) = w * g;
        suffix += w * gc;
      }
    }
    MlpEvaluator::Trace trace;
    tape.color_net->forward(encode_samples(tape, first, last), &trace);
    MlpGradients grads;
    for (std::size_t l = 0; l + 1 < trace.activations.size(); ++l) {
      grads.weight.push_back(Eigen::MatrixXd::Zero(trace.activations[l + 1].rows(), trace.activations[l].rows()));
      grads.bias.push_back(Eigen::VectorXd::Zero(trace.activations[l + 1].rows()));
    }
    tape.color_net->backward(trace, dL_dcolor, grads);
    chunk_grads[chunk] = std::move(grads);
  });

  FieldGradients out;
  out.density.assign(tape.lattice.size(), 0.0);
  // Sequential scatter in sample order keeps the result independent of threading.
  for (std::size_t r = 0; r < n_rays; ++r) {
    const Ray& ray = tape.rays[r];
    for (std::size_t i = 0; i < K; ++i) {
      const std::size_t s = r * K + i;
      if (dL_draw[s] == 0.0) continue;
      const TrilinearStencil st = trilinear_stencil(tape.lattice, ray.origin + tape.t[s] * ray.direction);
      for (int c = 0; c < 8; ++c) {
        if (st.index[c] != TrilinearStencil::npos) out.density[st.index[c]] += st.weight[c] * dL_draw[s];
      }
    }
  }
  out.color = std::move(chunk_grads.front());
  for (std::size_t c = 1; c < n_chunks; ++c) out.color += chunk_grads[c];
  return out;
}

BackgroundMode parse_background_mode(const std::string& name) {
  if (name == "solid_random") return BackgroundMode::solid_random;
  if (name == "white") return BackgroundMode::white;
  if (name == "checkerboard") return BackgroundMode::checkerboard;
  if (name == "gaussian_noise") return BackgroundMode::gaussian_noise;
  throw ParameterError("unknown background mode '" + name + "'");
}

std::string to_string(BackgroundMode mode) {
  switch (mode) {
    case BackgroundMode::solid_random: return "solid_random";
    case BackgroundMode::white: return "white";
    case BackgroundMode::checkerboard: return "checkerboard";
    case BackgroundMode::gaussian_noise: return "gaussian_noise";
  }
  return "unknown";
}

ImageRgb make_background(BackgroundMode mode, int width, int height, Rng& rng) {
  ImageRgb bg(width, height, 1.0);
  switch (mode) {
    case BackgroundMode::white: break;
    case BackgroundMode::solid_random: {
      const double c[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
      for (std::size_t p = 0; p < bg.pixel_count(); ++p)
        for (int ch = 0; ch < 3; ++ch) bg.data[p * 3 + ch] = c[ch];
      break;
    }
    case BackgroundMode::checkerboard: {
      constexpr int kCell = 8;
      double c[2][3];
      for (auto& color : c)
        for (double& v : color) v = rng.uniform();
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const int parity = ((x / kCell) + (y / kCell)) & 1;
          for (int ch = 0; ch < 3; ++ch) bg.at(x, y, ch) = c[parity][ch];
        }
      break;
    }
    case BackgroundMode::gaussian_noise:
      for (double& v : bg.data) v = std::clamp(0.5 + 0.25 * rng.normal(), 0.0, 1.0);
      break;
  }
  return bg;
}

ImageRgb composite_background(const RenderOutput& output, const ImageRgb& background) {
  if (!background.same_shape(output.rgb)) throw ParameterError("background shape does not match the render");
  ImageRgb image = output.rgb;
  const Eigen::Vector3d& c_bg = output.tape.background;
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    const double T = output.transmittance[p];
    for (int ch = 0; ch < 3; ++ch) image.data[p * 3 + ch] += T * (background.data[p * 3 + ch] - c_bg[ch]);
  }
  return image;
}

void composite_background_backward(const RenderOutput& output, const ImageRgb& background, const ImageRgb& dL_dimage,
                                   ImageRgb& dL_drgb, std::vector<double>& dL_dtransmittance) {
  if (!background.same_shape(output.rgb) || !dL_dimage.same_shape(output.rgb)) {
    throw ParameterError("composite_background_backward: shape mismatch");
  }
  dL_drgb = dL_dimage;
  dL_dtransmittance.assign(output.rgb.pixel_count(), 0.0);
  const Eigen::Vector3d& c_bg = output.tape.background;
  for (std::size_t p = 0; p < dL_dtransmittance.size(); ++p) {
    double acc = 0.0;
    for (int ch = 0; ch < 3; ++ch) acc += (background.data[p * 3 + ch] - c_bg[ch]) * dL_dimage.data[p * 3 + ch];
    dL_dtransmittance[p] = acc;
  }
}

ImageRgb background_augment(const RenderOutput& output, Rng& rng, BackgroundMode mode) {
  return composite_background(output, make_background(mode, output.width(), output.height(), rng));
}

}  // namespace dreamvox
