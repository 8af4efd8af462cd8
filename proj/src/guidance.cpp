// SPDX-License-Identifier: Apache-2.0
#include "dreamvox/guidance.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "dreamvox/errors.hpp"

namespace dreamvox {
namespace {

using json = nlohmann::json;

constexpr std::size_t kEmbeddingDim = 512;

httplib::Client make_client(const Endpoint& endpoint, double timeout_seconds) {
  httplib::Client client(endpoint.host, endpoint.port);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  return client;
}

json post_json(const Endpoint& endpoint, const std::string& path, const json& body, long step, double timeout_seconds) {
  auto client = make_client(endpoint, timeout_seconds);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw TransportError("guidance request to " + endpoint.to_string() + path + " failed: " + httplib::to_string(res.error()),
                         step);
  }
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::parse_error&) {
    if (res->status >= 400 && res->status < 500) throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + path);
    // Python's json module writes bare NaN/Infinity; that is a well-formed but non-finite reply.
    static const std::regex non_finite(R"(([:,\[]\s*)-?(NaN|Infinity)(?=\s*[,}\]]))");
    const std::string patched = std::regex_replace(res->body, non_finite, "$1null");
    if (patched != res->body && json::accept(patched)) throw ProtocolError("non-finite number in response from " + path);
    throw TransportError("malformed response body from " + path, step);
  }
  if (res->status >= 400 && res->status < 500) {
    const std::string msg = parsed.is_object() && parsed.contains("error") && parsed["error"].is_string()
                                ? parsed["error"].get<std::string>()
                                : std::string("no error message");
    throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + path + ": " + msg);
  }
  if (res->status != 200) throw TransportError("HTTP " + std::to_string(res->status) + " from " + path, step);
  if (!parsed.is_object()) throw TransportError("response from " + path + " is not a JSON object", step);
  return parsed;
}

std::vector<double> parse_embedding(const json& body) {
  if (!body.contains("embedding") || !body["embedding"].is_array()) throw ProtocolError("response lacks an embedding array");
  std::vector<double> e;
  for (const auto& v : body["embedding"]) {
    if (!v.is_number()) throw ProtocolError("embedding entries must be numbers");
    e.push_back(v.get<double>());
    if (!std::isfinite(e.back())) throw ProtocolError("non-finite embedding entry");
  }
  if (e.size() != kEmbeddingDim) throw ProtocolError("embedding has " + std::to_string(e.size()) + " entries, expected 512");
  return e;
}

}  // namespace

GuidanceResult photometric_guidance(const ImageRgb& image, const ImageRgb& target) {
  if (!image.same_shape(target)) throw ParameterError("photometric guidance: image and target shapes differ");
  GuidanceResult result{0.0, ImageRgb(image.width, image.height)};
  const double n = static_cast<double>(image.data.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    const double d = image.data[i] - target.data[i];
    sum += d * d;
    result.grad.data[i] = 2.0 * d / n;
  }
  result.loss = n > 0 ? sum / n : 0.0;
  return result;
}

PhotometricGuidance::PhotometricGuidance(std::vector<PhotometricView> views) : views_(std::move(views)) {
  if (views_.empty()) throw ParameterError("photometric guidance needs at least one view");
  for (const auto& v : views_) {
    validate_camera(v.camera);
    if (v.target.width != v.camera.width || v.target.height != v.camera.height) {
      throw ParameterError("photometric target does not match its camera resolution");
    }
  }
}

std::optional<Camera> PhotometricGuidance::begin_step(long, Rng& rng) {
  current_ = static_cast<std::size_t>(rng.below(views_.size()));
  return views_[current_].camera;
}

GuidanceResult PhotometricGuidance::evaluate(const ImageRgb& image, long) {
  return photometric_guidance(image, views_[current_].target);
}

Endpoint Endpoint::parse(const std::string& url) {
  static const std::regex pattern(R"(^(?:http://)?([A-Za-z0-9.\-]+|\[[0-9a-fA-F:]+\])(?::([0-9]{1,5}))?/?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) throw ParameterError("malformed guidance endpoint '" + url + "'");
  Endpoint e;
  e.host = m[1].str();
  e.port = m[2].matched ? std::stoi(m[2].str()) : 80;
  if (e.port <= 0 || e.port > 65535) throw ParameterError("guidance endpoint port out of range");
  return e;
}

std::string Endpoint::to_string() const { return "http://" + host + ":" + std::to_string(port); }

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ProtocolError("base64 payload length is not a multiple of 4");
  std::vector<unsigned char> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ProtocolError("invalid base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::uint64_t image_hash(const ImageRgb& image) {
  const auto bytes = to_f32_bytes(image);
  return fnv1a64(bytes.data(), bytes.size());
}

GuidanceResult clip_guidance(const ImageRgb& image, const std::string& prompt, const Endpoint& endpoint, long step,
                             double timeout_seconds) {
  if (prompt.empty()) throw ParameterError("guidance prompt must not be empty");
  const json request = {{"width", image.width},
                        {"height", image.height},
                        {"prompt", prompt},
                        {"image_b64", base64_encode(to_f32_bytes(image))}};
  const json body = post_json(endpoint, "/v1/guidance", request, step, timeout_seconds);
  if (!body.contains("loss") || !body.contains("grad_b64") || !body["grad_b64"].is_string()) {
    throw TransportError("guidance response lacks loss or grad_b64", step);
  }
  if (!body["loss"].is_number()) throw ProtocolError("guidance loss is not a finite number");
  GuidanceResult result;
  result.loss = body["loss"].get<double>();
  if (!std::isfinite(result.loss)) throw ProtocolError("guidance loss is not finite");
  const auto grad_bytes = base64_decode(body["grad_b64"].get<std::string>());
  if (grad_bytes.size() != image.data.size() * 4) throw ProtocolError("guidance gradient has the wrong byte length");
  result.grad = from_f32_bytes(grad_bytes, image.width, image.height);
  for (double g : result.grad.data) {
    if (!std::isfinite(g)) throw ProtocolError("guidance gradient contains NaN/Inf");
  }
  return result;
}

std::vector<double> request_text_embedding(const Endpoint& endpoint, const std::string& prompt, double timeout_seconds) {
  if (prompt.empty()) throw ParameterError("prompt must not be empty");
  return parse_embedding(post_json(endpoint, "/v1/embed_text", json{{"prompt", prompt}}, 0, timeout_seconds));
}

std::vector<double> request_image_embedding(const Endpoint& endpoint, const ImageRgb& image, double timeout_seconds) {
  const json request = {{"width", image.width}, {"height", image.height}, {"image_b64", base64_encode(to_f32_bytes(image))}};
  return parse_embedding(post_json(endpoint, "/v1/embed_image", request, 0, timeout_seconds));
}

RemoteGuidance::RemoteGuidance(RemoteGuidanceOptions options) : options_(std::move(options)) {
  if (options_.prompt.empty()) throw ParameterError("remote guidance needs a prompt");
  if (options_.retries < 0) throw ParameterError("retries must be >= 0");
}

GuidanceResult RemoteGuidance::evaluate(const ImageRgb& image, long step) {
  if (step != cache_step_) {
    cache_.clear();
    cache_step_ = step;
  }
  const auto key = std::make_pair(image_hash(image), options_.prompt);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  for (int attempt = 0;; ++attempt) {
    try {
      ++requests_sent_;
      GuidanceResult result = clip_guidance(image, options_.prompt, options_.endpoint, step, options_.timeout_seconds);
      cache_.emplace(key, result);
      return result;
    } catch (const TransportError&) {
      if (attempt >= options_.retries) throw;
    }
  }
}

}  // namespace dreamvox
