// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <functional>
#include <limits>
#include <set>
#include <thread>

#include "dreamvox/errors.hpp"
#include "dreamvox/guidance.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a `_res` macro.
#include <httplib.h>
#include <json.hpp>

using namespace dreamvox;
using nlohmann::json;

namespace {

/// In-process HTTP server on an ephemeral loopback port.
class StubServer {
 public:
  explicit StubServer(const std::function<void(httplib::Server&)>& routes) {
    routes(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  Endpoint endpoint() const { return Endpoint{"127.0.0.1", port_}; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ImageRgb test_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  ImageRgb img(w, h);
  for (double& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

void reply(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

TEST_CASE("photometric guidance: zero at target, single-term MSE, gradient") {
  const ImageRgb target = test_image(4, 3, 1);
  const GuidanceResult same = photometric_guidance(target, target);
  CHECK(same.loss == 0.0);
  for (double g : same.grad.data) CHECK(g == 0.0);

  ImageRgb img = target;
  img.at(2, 1, 1) += 0.25;
  const GuidanceResult r = photometric_guidance(img, target);
  CHECK(r.loss == doctest::Approx(0.0625 / 36.0).epsilon(1e-14));
  CHECK(r.grad.at(2, 1, 1) == doctest::Approx(2 * 0.25 / 36.0));

  const ImageRgb other = test_image(4, 3, 2);
  const GuidanceResult g = photometric_guidance(other, target);
  const double h = 1e-6;
  for (std::size_t n = 0; n < other.data.size(); ++n) {
    ImageRgb p = other, m = other;
    p.data[n] += h;
    m.data[n] -= h;
    const double fd = (photometric_guidance(p, target).loss - photometric_guidance(m, target).loss) / (2 * h);
    CHECK(testing::rel_err(g.grad.data[n], fd) < 1e-6);
  }
  CHECK_THROWS_AS(photometric_guidance(ImageRgb(3, 4), target), ParameterError);
}

TEST_CASE("photometric guidance minimum is unique") {
  const ImageRgb target = test_image(3, 3, 3);
  Rng rng(4);
  for (int n = 0; n < 100; ++n) {
    ImageRgb img = target;
    img.data[rng.below(img.data.size())] += rng.uniform(-1, 1) + 1e-3;
    CHECK(photometric_guidance(img, target).loss > 0.0);
  }
}

TEST_CASE("photometric handle picks one of its views") {
  std::vector<PhotometricView> views;
  for (int az : {0, 90, 180}) views.push_back({orbit_camera(az, 25, 2.5, 40, 4, 4), test_image(4, 4, az)});
  PhotometricGuidance handle(views);
  Rng rng(5);
  std::set<double> seen;
  for (long s = 0; s < 40; ++s) {
    const auto cam = handle.begin_step(s, rng);
    REQUIRE(cam.has_value());
    seen.insert(cam->position.y());
    const ImageRgb& target = std::find_if(views.begin(), views.end(), [&](const PhotometricView& v) {
                               return v.camera.position == cam->position;
                             })->target;
    CHECK(handle.evaluate(target, s).loss == 0.0);
  }
  CHECK(seen.size() == 3);
  CHECK_THROWS_AS(PhotometricGuidance({}), ParameterError);
  CHECK_THROWS_AS(PhotometricGuidance({{orbit_camera(0, 25, 2.5, 40, 4, 4), ImageRgb(3, 4)}}), ParameterError);
}

TEST_CASE("endpoint parsing") {
  const Endpoint e = Endpoint::parse("http://localhost:8765");
  CHECK(e.host == "localhost");
  CHECK(e.port == 8765);
  CHECK(Endpoint::parse("127.0.0.1:9000/").port == 9000);
  CHECK(Endpoint::parse("example.org").port == 80);
  CHECK(e.to_string() == "http://localhost:8765");
  CHECK_THROWS_AS(Endpoint::parse("ftp://x:1"), ParameterError);
  CHECK_THROWS_AS(Endpoint::parse("http://host:99999"), ParameterError);
  CHECK_THROWS_AS(Endpoint::parse(""), ParameterError);
}

TEST_CASE("base64 and image hashing") {
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_encode({}) == "");
  CHECK(base64_decode("TWE=") == std::vector<unsigned char>{'M', 'a'});
  CHECK_THROWS_AS(base64_decode("T*E="), ProtocolError);
  Rng rng(6);
  std::vector<unsigned char> bytes(1001);
  for (auto& b : bytes) b = static_cast<unsigned char>(rng.below(256));
  CHECK(base64_decode(base64_encode(bytes)) == bytes);

  const char a = 'a';
  CHECK(fnv1a64(&a, 1) == 0xaf63dc4c8601ec8cull);
  const ImageRgb img = test_image(5, 4, 7);
  const auto raw = to_f32_bytes(img);
  CHECK(raw.size() == 5 * 4 * 3 * 4);
  CHECK(image_hash(img) == fnv1a64(raw.data(), raw.size()));
  CHECK(from_f32_bytes(raw, 5, 4).data == img.data);
}

TEST_CASE("remote guidance against a stub service") {
  std::atomic<int> calls{0};
  StubServer server([&](httplib::Server& s) {
    s.Post("/v1/guidance", [&](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      const json body = json::parse(req.body);
      const int w = body["width"], h = body["height"];
      const auto pixels = base64_decode(body["image_b64"].get<std::string>());
      if (body["prompt"].get<std::string>().empty() || pixels.size() != std::size_t(w * h * 12)) {
        reply(res, {{"error", "bad request"}}, 400);
        return;
      }
      reply(res, {{"loss", 0.0}, {"grad_b64", base64_encode(std::vector<unsigned char>(pixels.size(), 0))}});
    });
  });
  const ImageRgb img = test_image(6, 5, 8);
  const GuidanceResult r = clip_guidance(img, "a chair", server.endpoint(), 3);
  CHECK(r.loss == 0.0);
  CHECK(r.grad.same_shape(img));
  for (double g : r.grad.data) CHECK(g == 0.0);
  CHECK(r.loss >= -1.0);
  CHECK(r.loss <= 1.0);
  CHECK_THROWS_AS(clip_guidance(img, "", server.endpoint(), 3), ParameterError);

  RemoteGuidance remote({server.endpoint(), "a chair", 5.0, 3});
  calls = 0;
  remote.evaluate(img, 0);
  remote.evaluate(img, 0);
  CHECK(calls == 1);
  remote.evaluate(test_image(6, 5, 9), 0);
  CHECK(calls == 2);
  remote.evaluate(img, 1);
  CHECK(calls == 3);
  CHECK(remote.requests_sent() == 3);
}

TEST_CASE("remote guidance error mapping") {
  StubServer server([](httplib::Server& s) {
    s.Post("/v1/guidance", [](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      const std::string mode = body["prompt"];
      const std::size_t n = std::size_t(body["width"].get<int>() * body["height"].get<int>() * 12);
      const std::string zeros = base64_encode(std::vector<unsigned char>(n, 0));
      if (mode == "server-error") {
        reply(res, {{"error", "encoder failed"}}, 500);
      } else if (mode == "client-error") {
        reply(res, {{"error", "bad image"}}, 400);
      } else if (mode == "garbage") {
        res.set_content("{not json", "application/json");
      } else if (mode == "nan-loss") {
        res.set_content(R"({"loss": NaN, "grad_b64": ")" + zeros + "\"}", "application/json");
      } else if (mode == "nan-grad") {
        std::vector<unsigned char> bytes(n, 0);
        const float nan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(bytes.data() + 8, &nan, 4);
        reply(res, {{"loss", -0.3}, {"grad_b64", base64_encode(bytes)}});
      } else if (mode == "short-grad") {
        reply(res, {{"loss", -0.3}, {"grad_b64", base64_encode(std::vector<unsigned char>(n - 4, 0))}});
      } else if (mode == "missing") {
        reply(res, {{"loss", -0.3}});
      }
    });
  });
  const ImageRgb img = test_image(3, 2, 10);
  auto call = [&](const std::string& mode) { return clip_guidance(img, mode, server.endpoint(), 17, 5.0); };
  try {
    call("server-error");
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(e.step() == 17);
  }
  CHECK_THROWS_AS(call("garbage"), TransportError);
  CHECK_THROWS_AS(call("missing"), TransportError);
  CHECK_THROWS_AS(call("client-error"), ProtocolError);
  CHECK_THROWS_AS(call("nan-loss"), ProtocolError);
  CHECK_THROWS_AS(call("nan-grad"), ProtocolError);
  CHECK_THROWS_AS(call("short-grad"), ProtocolError);

  // A port nobody listens on: bind, then close the server.
  Endpoint dead;
  {
    StubServer gone([](httplib::Server&) {});
    dead = gone.endpoint();
  }
  try {
    clip_guidance(img, "x", dead, 4, 2.0);
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(e.step() == 4);
  }
}

TEST_CASE("remote guidance retries transport failures") {
  std::atomic<int> calls{0};
  std::atomic<int> fail_first{2};
  StubServer server([&](httplib::Server& s) {
    s.Post("/v1/guidance", [&](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      if (calls <= fail_first) {
        reply(res, {{"error", "busy"}}, 503);
        return;
      }
      const json body = json::parse(req.body);
      const auto n = std::size_t(body["width"].get<int>() * body["height"].get<int>() * 12);
      reply(res, {{"loss", -0.25}, {"grad_b64", base64_encode(std::vector<unsigned char>(n, 0))}});
    });
  });
  const ImageRgb img = test_image(2, 2, 11);
  RemoteGuidance remote({server.endpoint(), "a lamp", 5.0, 3});
  CHECK(remote.evaluate(img, 0).loss == -0.25);
  CHECK(calls == 3);

  calls = 0;
  fail_first = 100;
  RemoteGuidance doomed({server.endpoint(), "a lamp", 5.0, 3});
  CHECK_THROWS_AS(doomed.evaluate(img, 9), TransportError);
  CHECK(calls == 4);
}

TEST_CASE("embedding endpoints") {
  StubServer server([](httplib::Server& s) {
    s.Post("/v1/embed_text", [](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      const std::size_t n = body["prompt"] == "short" ? 10 : 512;
      reply(res, {{"embedding", std::vector<double>(n, 1.0 / std::sqrt(512.0))}});
    });
    s.Post("/v1/embed_image", [](const httplib::Request&, httplib::Response& res) {
      reply(res, {{"embedding", std::vector<double>(512, 0.0)}});
    });
  });
  const auto e = request_text_embedding(server.endpoint(), "a chair");
  CHECK(e.size() == 512);
  CHECK_THROWS_AS(request_text_embedding(server.endpoint(), "short"), ProtocolError);
  CHECK(request_image_embedding(server.endpoint(), test_image(4, 4, 1)).size() == 512);
}
