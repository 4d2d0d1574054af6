#include "avatar_forge/guidance.hpp"
#include "support/json_schema.hpp"
#include "support/mock_guidance_server.hpp"
#include "support/test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace avatar_forge;
using namespace avatar_forge::testing;

namespace {

const std::string kFixtures = AVATAR_FORGE_SOURCE_DIR "/tests/fixtures/";
const std::string kSchemas = AVATAR_FORGE_SOURCE_DIR "/schemas/";

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Image random_unit_image(Rng& rng, int w, int h) {
    Image img(w, h);
    for (Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = rng.uniform();
    return img;
}

Vector to_vector(const nlohmann::json& a) {
    Vector v(static_cast<Index>(a.size()));
    for (size_t i = 0; i < a.size(); ++i) v(Index(i)) = a[i].get<double>();
    return v;
}

// Provider returning eps + scale * c, for residual-linearity checks.
struct OffsetProvider final : GuidanceProvider {
    Vector offset;
    Vector predict_noise(const GuidanceRequest& r) override { return *r.eps + offset; }
};

struct EchoProvider final : GuidanceProvider {
    Vector predict_noise(const GuidanceRequest& r) override { return *r.eps; }
};

}  // namespace

TEST_CASE("encoders on constant images") {
    const LatentImage z = encode(Image(16, 8, Vec3::Constant(0.5)), EncoderId::identity);
    CHECK(z.channels == 3);
    CHECK(z.height == 8);
    CHECK(z.width == 16);
    CHECK(z.data.isZero(0));
    const LatentImage p = encode(Image(16, 8, Vec3(0.25, 0.5, 1.0)), EncoderId::pool8);
    CHECK(p.height == 1);
    CHECK(p.width == 2);
    CHECK(p.data.segment(0, 2).isConstant(-0.5, 0));
    CHECK(p.data.segment(2, 2).isConstant(0.0, 0));
    CHECK(p.data.segment(4, 2).isConstant(1.0, 0));
    CHECK_THROWS_AS(encode(Image(12, 8), EncoderId::pool8), DimensionError);
}

TEST_CASE("encoder adjoints match finite differences") {
    Rng rng(2);
    for (EncoderId id : {EncoderId::identity, EncoderId::pool8}) {
        const Image img = random_unit_image(rng, 16, 16);
        LatentImage g = encode(img, id);
        for (Index i = 0; i < g.size(); ++i) g.data(i) = rng.normal();
        const Image adj = encode_adjoint(g);
        auto f = [&](const Vector& x) {
            Image im = img;
            im.pixels = unflatten(x);
            return encode(im, id).data.dot(g.data);
        };
        CHECK(relative_error(flatten(adj.pixels), central_differences(f, flatten(img.pixels), 1e-3)) < 1e-10);
    }
}

TEST_CASE("linear schedule matches an independent cumulative product") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    REQUIRE(s.T == 1000);
    for (int i = 1; i < s.T; ++i) REQUIRE(s.alpha_bar(i) < s.alpha_bar(i - 1));
    CHECK(s.abar(1) == doctest::Approx(0.9999).epsilon(1e-14));
    CHECK(s.abar(100) == doctest::Approx(0.89701814567496).epsilon(1e-12));
    CHECK(s.abar(500) == doctest::Approx(0.07858724288177824).epsilon(1e-12));
    CHECK(s.abar(900) == doctest::Approx(0.00027520591190339843).epsilon(1e-10));
    CHECK(s.abar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-10));
    CHECK_THROWS_AS(s.abar(0), DimensionError);
    CHECK_THROWS_AS(s.abar(1001), DimensionError);
    CHECK(s.t_min() == 20);
    CHECK(s.t_max() == 980);
}

TEST_CASE("add_noise endpoints and variance") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(4);
    const LatentImage z = encode(random_unit_image(rng, 8, 8), EncoderId::identity);
    const LatentImage a = add_noise(s, z, 300, Vector::Zero(z.size()));
    CHECK(a.data == (std::sqrt(s.abar(300)) * z.data));
    Vector eps(z.size());
    for (Index i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
    CHECK((add_noise(s, z, 1, eps).data - z.data).cwiseAbs().maxCoeff() < 0.05);
    CHECK_THROWS_AS(add_noise(s, z, 10, Vector::Zero(3)), DimensionError);

    // Elementwise variance over 1e5 draws, per element of a 2x2 latent.
    LatentImage small;
    small.height = small.width = 2;
    small.data = Vector::LinSpaced(12, -1, 1);
    const int t = 400, n = 100000;
    Vector sum = Vector::Zero(12), sq = Vector::Zero(12);
    for (int k = 0; k < n; ++k) {
        Vector e(12);
        for (Index i = 0; i < 12; ++i) e(i) = rng.normal();
        const Vector zt = add_noise(s, small, t, e).data;
        sum += zt;
        sq += zt.cwiseProduct(zt);
    }
    const Vector mean = sum / n;
    const Vector var = sq / n - mean.cwiseProduct(mean);
    for (Index i = 0; i < 12; ++i) CHECK(std::abs(var(i) / (1 - s.abar(t)) - 1) < 0.02);
}

TEST_CASE("noise draws respect the step range and are reproducible") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng a(9), b(9);
    int lo = 1000, hi = 0;
    for (int k = 0; k < 5000; ++k) {
        const NoiseDraw x = draw_noise(s, a, 4, 20, 980), y = draw_noise(s, b, 4, 20, 980);
        REQUIRE(x.t == y.t);
        REQUIRE(x.eps == y.eps);
        lo = std::min(lo, x.t);
        hi = std::max(hi, x.t);
        REQUIRE(x.eps.cast<float>().cast<double>() == x.eps);
    }
    CHECK(lo == 20);
    CHECK(hi == 980);
    CHECK_THROWS_AS(draw_noise(s, a, 4, 0, 980), ConfigError);
}

TEST_CASE("texture SDS vanishes for an echoing provider and at the oracle optimum") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(5);
    const Image img = random_unit_image(rng, 16, 16);
    EchoProvider echo;
    for (EncoderId id : {EncoderId::identity, EncoderId::pool8})
        CHECK(sds_texture_grad(s, echo, img, id, "p", rng).grad.pixels.isZero(0));
    AnalyticOracle oracle(s, encode(img, EncoderId::identity));
    CHECK(sds_texture_grad(s, oracle, img, EncoderId::identity, "p", rng).grad.pixels.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("texture SDS is linear in the residual") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(6);
    const Image img = random_unit_image(rng, 16, 16);
    const NoiseDraw draw = draw_noise(s, rng, 3 * 16 * 16, 20, 980);
    OffsetProvider p1, p2;
    p1.offset = Vector::Zero(draw.eps.size());
    for (Index i = 0; i < p1.offset.size(); ++i) p1.offset(i) = rng.normal();
    p2.offset = 3.0 * p1.offset;
    const Image g1 = sds_texture_grad(s, p1, img, EncoderId::identity, "p", draw, 0).grad;
    const Image g2 = sds_texture_grad(s, p2, img, EncoderId::identity, "p", draw, 0).grad;
    CHECK((g2.pixels - 3.0 * g1.pixels).norm() <= 1e-12 * g2.pixels.norm());
    DiffusionSchedule weighted = s;
    weighted.weight = [](int t) { return 0.5 + t / 1000.0; };
    const Image gw = sds_texture_grad(weighted, p1, img, EncoderId::identity, "p", draw, 0).grad;
    CHECK((gw.pixels - weighted.weight(draw.t) * g1.pixels).norm() <= 1e-12 * gw.pixels.norm());
}

TEST_CASE("oracle SDS is an unbiased estimate of the latent MSE gradient") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(7);
    const Image img = random_unit_image(rng, 8, 8), target = random_unit_image(rng, 8, 8);
    const LatentImage zt = encode(target, EncoderId::identity);
    AnalyticOracle oracle(s, zt);
    // d/dI of 0.5 |z(I) - z_target|^2 with z = 2I - 1.
    const PointCloud closed = encode_adjoint([&] {
                                  LatentImage d = encode(img, EncoderId::identity);
                                  d.data -= zt.data;
                                  return d;
                              }())
                                  .pixels;
    for (int t : {100, 500, 900}) {
        PointCloud mean = PointCloud::Zero(closed.rows(), 3);
        for (int k = 0; k < 1000; ++k) {
            NoiseDraw d = draw_noise(s, rng, 3 * 64, 20, 980);
            d.t = t;
            mean += sds_texture_grad(s, oracle, img, EncoderId::identity, "ignored", d, 0).grad.pixels;
        }
        mean /= 1000.0;
        CHECK((mean - closed).norm() / closed.norm() < 0.05);
    }
}

TEST_CASE("oracle SDS descent on a free latent converges") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(8);
    const Image target = random_unit_image(rng, 8, 8);
    AnalyticOracle oracle(s, encode(target, EncoderId::identity));
    Image img = random_unit_image(rng, 8, 8);
    LatentImage z = encode(img, EncoderId::identity);
    const LatentImage zt = encode(target, EncoderId::identity);
    const double mse0 = (z.data - zt.data).squaredNorm();
    for (int it = 0; it < 200; ++it) {
        img.pixels = unflatten(Vector::Zero(img.pixels.size()));
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) img.pixels(img.index(x, y), c) = 0.5 * (z.data((c * 8 + y) * 8 + x) + 1);
        z.data -= 0.5 * sds_texture_grad(s, oracle, img, EncoderId::identity, "p", rng).grad_latent.data;
    }
    CHECK((z.data - zt.data).squaredNorm() <= 0.01 * mse0);
}

TEST_CASE("consistency SDS contracts") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(10);
    const Image rgb = random_unit_image(rng, 16, 16), nrm = random_unit_image(rng, 16, 16);
    OffsetProvider p;
    p.offset = Vector::Zero(3 * 16 * 16);
    for (Index i = 0; i < p.offset.size(); ++i) p.offset(i) = rng.normal();
    const LatentImage zi = encode(rgb, EncoderId::identity), zn = encode(nrm, EncoderId::identity);
    const NoiseDraw draw = draw_noise(s, rng, zn.size(), 20, 980);

    const ConsistencyResult c0 = sds_consistency_grad(s, p, zi, zn, 0.0, "p", draw, 1);
    const SdsResult plain = sds_texture_grad(s, p, nrm, EncoderId::identity, "p", draw, 1);
    CHECK(c0.grad_normal.pixels == plain.grad.pixels);
    CHECK(c0.t == plain.t);

    const ConsistencyResult c1 = sds_consistency_grad(s, p, zi, zn, 1.0, "p", draw, 1);
    CHECK(c1.grad_normal.pixels.isZero(0));
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const ConsistencyResult c = sds_consistency_grad(s, p, zi, zn, alpha, "p", rng);
        CHECK(c.grad_rgb_latent.data.isZero(0));
        CHECK(c.grad_rgb_latent.same_shape(zi));
    }
    CHECK_THROWS_AS(sds_consistency_grad(s, p, zi, zn, 1.5, "p", rng), ConfigError);
}

TEST_CASE("consistency SDS with the oracle matches the closed form at alpha = 0.5") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(12);
    const Image rgb = random_unit_image(rng, 8, 8), nrm = random_unit_image(rng, 8, 8), tgt = random_unit_image(rng, 8, 8);
    const LatentImage zi = encode(rgb, EncoderId::identity), zn = encode(nrm, EncoderId::identity);
    const LatentImage target = encode(tgt, EncoderId::identity);
    AnalyticOracle oracle(s, target);
    const double alpha = 0.5;
    const Vector closed = (1 - alpha) * (interpolate_latents(zi, zn, alpha).data - target.data);
    Vector mean = Vector::Zero(closed.size());
    for (int k = 0; k < 1000; ++k) mean += sds_consistency_grad(s, oracle, zi, zn, alpha, "p", rng).grad_normal_latent.data;
    mean /= 1000.0;
    CHECK((mean - closed).norm() / closed.norm() < 0.05);
}

TEST_CASE("wire encoding matches the recorded fixtures") {
    const auto values = load_json(kFixtures + "predict_noise_values.json");
    LatentImage z;
    z.height = z.width = 2;
    z.data = to_vector(values["z_t"]);
    const Vector eps = to_vector(values["eps"]);
    GuidanceRequest req;
    req.z_t = &z;
    req.prompt = "a toy avatar";
    req.t = 500;
    req.eps = &eps;
    req.seed = 7;
    const std::string body = make_predict_request_body(req, true);
    CHECK(body == slurp(kFixtures + "predict_noise_request.json"));
    CHECK(schema_errors(nlohmann::json::parse(body), load_json(kSchemas + "predict_noise_request.schema.json")).empty());
    const std::string response = slurp(kFixtures + "predict_noise_response.json");
    CHECK(schema_errors(nlohmann::json::parse(response), load_json(kSchemas + "predict_noise_response.schema.json")).empty());
    CHECK(parse_predict_response(response, z) == to_vector(values["eps_hat"]));

    MockGuidanceServer server(MockMode::canned);
    server.set_canned(body, response);
    RemoteProvider remote(server.endpoint());
    CHECK(remote.predict_noise(req) == to_vector(values["eps_hat"]));
}

TEST_CASE("base64 float payloads round trip") {
    for (Index n : {0, 1, 2, 3, 7}) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v(i) = 0.5 * double(i) - 1.25;
        CHECK(decode_float32_base64(encode_float32_base64(v)) == v);
    }
    CHECK_THROWS_AS(decode_float32_base64("abc"), ProviderError);
    CHECK_THROWS_AS(decode_float32_base64("ab!d"), ProviderError);
}

TEST_CASE("remote provider against mock services") {
    const DiffusionSchedule s = DiffusionSchedule::linear();
    Rng rng(13);
    const Image img = random_unit_image(rng, 16, 16);
    const auto request_schema = load_json(kSchemas + "predict_noise_request.schema.json");

    SUBCASE("echo_eps gives exactly zero gradient") {
        MockGuidanceServer server(MockMode::echo_eps);
        RemoteProvider remote(server.endpoint());
        CHECK(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng).grad.pixels.isZero(0));
        const LatentImage z = encode(img, EncoderId::pool8);
        CHECK(sds_consistency_grad(s, remote, z, z, 0.3, "p", rng).grad_normal.pixels.isZero(0));
        CHECK(schema_errors(nlohmann::json::parse(server.last_body()), request_schema).empty());
    }
    SUBCASE("zero mode returns the pullback of -eps") {
        MockGuidanceServer server(MockMode::zero);
        RemoteProvider remote(server.endpoint());
        const NoiseDraw d = draw_noise(s, rng, 3 * 4, 20, 980);
        const SdsResult r = sds_texture_grad(s, remote, Image(16, 16, Vec3::Constant(0.5)), EncoderId::pool8, "p", d, 3);
        CHECK(r.grad_latent.data == -d.eps);
    }
    SUBCASE("constant mode with zero noise gives a constant residual") {
        MockGuidanceServer server(MockMode::constant, 0.75);
        RemoteProvider remote(server.endpoint());
        NoiseDraw d;
        d.t = 250;
        d.eps = Vector::Zero(3 * 16 * 16);
        const SdsResult r = sds_texture_grad(s, remote, img, EncoderId::identity, "p", d, 3);
        CHECK(r.grad_latent.data.isConstant(0.75, 0));
    }
    SUBCASE("wrong shape is a provider error") {
        MockGuidanceServer server(MockMode::wrong_shape);
        RemoteProvider remote(server.endpoint());
        CHECK_THROWS_AS(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng), ProviderError);
    }
    SUBCASE("malformed response is a provider error") {
        MockGuidanceServer server(MockMode::malformed);
        RemoteProvider remote(server.endpoint());
        CHECK_THROWS_AS(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng), ProviderError);
    }
    SUBCASE("persistent 503 fails after two retries") {
        MockGuidanceServer server(MockMode::unavailable);
        RemoteProvider remote(server.endpoint());
        CHECK_THROWS_AS(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng), ProviderError);
        CHECK(server.requests() == 3);
    }
    SUBCASE("transient 503 is retried") {
        MockGuidanceServer server(MockMode::flaky);
        RemoteProvider remote(server.endpoint());
        CHECK_NOTHROW(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng));
        CHECK(server.requests() == 3);
    }
    SUBCASE("422 is not retried") {
        MockGuidanceServer server(MockMode::unprocessable);
        RemoteProvider remote(server.endpoint());
        CHECK_THROWS_AS(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng), ProviderError);
        CHECK(server.requests() == 1);
    }
    SUBCASE("unreachable endpoint") {
        int port;
        {
            MockGuidanceServer server(MockMode::zero);
            port = std::stoi(server.endpoint().substr(server.endpoint().rfind(':') + 1));
        }
        RemoteOptions o;
        o.timeout_seconds = 0.5;
        RemoteProvider remote("http://127.0.0.1:" + std::to_string(port), o);
        CHECK_THROWS_AS(sds_texture_grad(s, remote, img, EncoderId::identity, "p", rng), ProviderError);
    }
    SUBCASE("concurrent requests over a connection pool") {
        MockGuidanceServer server(MockMode::echo_eps);
        RemoteOptions o;
        o.connections = 2;
        RemoteProvider remote(server.endpoint(), o);
        std::vector<std::thread> workers;
        std::atomic<int> zero{0};
        for (int w = 0; w < 4; ++w)
            workers.emplace_back([&, w] {
                Rng local(100 + w);
                for (int k = 0; k < 5; ++k)
                    if (sds_texture_grad(s, remote, img, EncoderId::pool8, "p", local).grad.pixels.isZero(0)) ++zero;
            });
        for (auto& t : workers) t.join();
        CHECK(zero == 20);
    }
    CHECK_THROWS_AS(RemoteProvider("ftp://nowhere"), ConfigError);
}
