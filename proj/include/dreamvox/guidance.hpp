// SPDX-License-Identifier: Apache-2.0
//
// Image-space guidance. Only (loss, dL/dimage) crosses this boundary; the
// engine never sees embeddings or model internals.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dreamvox/camera.hpp"
#include "dreamvox/image.hpp"

namespace dreamvox {

struct GuidanceResult {
  double loss = 0.0;
  ImageRgb grad;  // dL/dimage, same shape as the scored image
};

/// Mean squared error against `target` and its gradient 2 (image − target) / (3HW).
GuidanceResult photometric_guidance(const ImageRgb& image, const ImageRgb& target);

class GuidanceHandle {
 public:
  virtual ~GuidanceHandle() = default;

  /// Called once at the start of each step. A handle that needs a particular
  /// viewpoint returns it; otherwise the optimizer samples a pose.
  virtual std::optional<Camera> begin_step(long step, Rng& rng) {
    (void)step;
    (void)rng;
    return std::nullopt;
  }

  virtual GuidanceResult evaluate(const ImageRgb& image, long step) = 0;
};

struct PhotometricView {
  Camera camera;
  ImageRgb target;
};

/// Scores renders against self-contained target views; each step picks one view uniformly.
class PhotometricGuidance : public GuidanceHandle {
 public:
  explicit PhotometricGuidance(std::vector<PhotometricView> views);

  std::optional<Camera> begin_step(long step, Rng& rng) override;
  GuidanceResult evaluate(const ImageRgb& image, long step) override;

  const std::vector<PhotometricView>& views() const { return views_; }

 private:
  std::vector<PhotometricView> views_;
  std::size_t current_ = 0;
};

/// http://host:port of a guidance service.
struct Endpoint {
  std::string host;
  int port = 80;

  static Endpoint parse(const std::string& url);
  std::string to_string() const;
};

/// Standard base64 (RFC 4648, padded).
std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

/// FNV-1a over the f32 little-endian byte stream of the image.
std::uint64_t image_hash(const ImageRgb& image);

/// One POST /v1/guidance round trip. Throws TransportError (unreachable,
/// timeout, HTTP 5xx, malformed body) or ProtocolError (HTTP 4xx, NaN or
/// shape mismatch in the answer).
GuidanceResult clip_guidance(const ImageRgb& image, const std::string& prompt, const Endpoint& endpoint, long step,
                             double timeout_seconds = 30.0);

/// POST /v1/embed_text and /v1/embed_image. Provided for tooling and the
/// embedding-diffusion demos; the optimizer does not use them.
std::vector<double> request_text_embedding(const Endpoint& endpoint, const std::string& prompt,
                                           double timeout_seconds = 30.0);
std::vector<double> request_image_embedding(const Endpoint& endpoint, const ImageRgb& image,
                                            double timeout_seconds = 30.0);

struct RemoteGuidanceOptions {
  Endpoint endpoint;
  std::string prompt;
  double timeout_seconds = 30.0;
  int retries = 3;
};

/// clip_guidance with retries and a per-step (image hash, prompt) cache.
class RemoteGuidance : public GuidanceHandle {
 public:
  explicit RemoteGuidance(RemoteGuidanceOptions options);

  GuidanceResult evaluate(const ImageRgb& image, long step) override;

  int requests_sent() const { return requests_sent_; }

 private:
  RemoteGuidanceOptions options_;
  long cache_step_ = -1;
  std::map<std::pair<std::uint64_t, std::string>, GuidanceResult> cache_;
  int requests_sent_ = 0;
};

}  // namespace dreamvox
