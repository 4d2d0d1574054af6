#include "avatar_forge/guidance.hpp"

#include <httplib.h>
#include <json.hpp>

#include <bit>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <regex>

namespace avatar_forge {

using nlohmann::json;

const char* encoder_name(EncoderId id) { return id == EncoderId::pool8 ? "pool8" : "identity"; }

EncoderId parse_encoder(const std::string& name) {
    if (name == "identity") return EncoderId::identity;
    if (name == "pool8") return EncoderId::pool8;
    throw ConfigError("unknown encoder '" + name + "'");
}

LatentImage LatentImage::zeros_like(const LatentImage& z) {
    LatentImage out = z;
    out.data.setZero();
    return out;
}

LatentImage encode(const Image& image, EncoderId id) {
    LatentImage z;
    z.encoder = id;
    const int W = image.width, H = image.height;
    if (id == EncoderId::identity) {
        z.height = H;
        z.width = W;
        z.data.resize(z.size());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    z.data((Index(c) * H + y) * W + x) = 2.0 * image.pixels(image.index(x, y), c) - 1.0;
        return z;
    }
    if (W % 8 || H % 8) throw DimensionError("pool8 encoder needs image sides divisible by 8");
    z.height = H / 8;
    z.width = W / 8;
    z.data = Vector::Zero(z.size());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                z.data((Index(c) * z.height + y / 8) * z.width + x / 8) += 2.0 * image.pixels(image.index(x, y), c) - 1.0;
    z.data /= 64.0;
    return z;
}

Image encode_adjoint(const LatentImage& grad) {
    const int f = grad.encoder == EncoderId::pool8 ? 8 : 1;
    const double scale = 2.0 / (double(f) * f);
    Image img(grad.width * f, grad.height * f);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                img.pixels(img.index(x, y), c) = scale * grad.data((Index(c) * grad.height + y / f) * grad.width + x / f);
    return img;
}

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_1, double beta_T) {
    if (T < 2) throw ConfigError("diffusion schedule needs at least two steps");
    DiffusionSchedule s;
    s.T = T;
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double beta = beta_1 + (beta_T - beta_1) * i / (T - 1);
        prod *= 1.0 - beta;
        s.alpha_bar(i) = prod;
    }
    return s;
}

double DiffusionSchedule::abar(int t) const {
    if (t < 1 || t > T) throw DimensionError("diffusion step " + std::to_string(t) + " outside [1, T]");
    return alpha_bar(t - 1);
}

LatentImage add_noise(const DiffusionSchedule& sched, const LatentImage& z, int t, const Vector& eps) {
    if (eps.size() != z.size()) throw DimensionError("noise size does not match latent");
    const double a = sched.abar(t);
    LatentImage out = z;
    out.data = std::sqrt(a) * z.data + std::sqrt(1.0 - a) * eps;
    return out;
}

AnalyticOracle::AnalyticOracle(DiffusionSchedule sched, LatentImage target)
    : sched_(std::move(sched)), target_([target = std::move(target)](const GuidanceRequest&) { return target; }) {}

AnalyticOracle::AnalyticOracle(DiffusionSchedule sched, TargetFn target)
    : sched_(std::move(sched)), target_(std::move(target)) {}

Vector AnalyticOracle::predict_noise(const GuidanceRequest& request) {
    if (!request.z_t || !request.eps) throw ProviderError("analytic oracle needs z_t and the injected noise");
    const LatentImage target = target_(request);
    if (!target.same_shape(*request.z_t)) throw DimensionError("oracle target shape does not match z_t");
    const double a = sched_.abar(request.t);
    const Vector z0 = (request.z_t->data - std::sqrt(1.0 - a) * *request.eps) / std::sqrt(a);
    return *request.eps + (z0 - target.data);
}

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const std::uint32_t n = (std::uint8_t(in[i]) << 16) | (std::uint8_t(in[i + 1]) << 8) | std::uint8_t(in[i + 2]);
        for (int k = 3; k >= 0; --k) out.push_back(kAlphabet[(n >> (6 * k)) & 63]);
    }
    if (i < in.size()) {
        std::uint32_t n = std::uint8_t(in[i]) << 16;
        if (i + 1 < in.size()) n |= std::uint8_t(in[i + 1]) << 8;
        out.push_back(kAlphabet[(n >> 18) & 63]);
        out.push_back(kAlphabet[(n >> 12) & 63]);
        out.push_back(i + 1 < in.size() ? kAlphabet[(n >> 6) & 63] : '=');
        out.push_back('=');
    }
    return out;
}

std::string base64_decode(const std::string& in) {
    if (in.size() % 4) throw ProviderError("base64 payload length is not a multiple of 4");
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (size_t i = 0; i < in.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = in[i + size_t(k)];
            if (c == '=' && i + 4 == in.size() && k >= 2) {
                v[k] = 0;
                ++pad;
                continue;
            }
            if (pad) throw ProviderError("malformed base64 padding");
            v[k] = value(c);
            if (v[k] < 0) throw ProviderError("invalid base64 character");
        }
        const std::uint32_t n = (std::uint32_t(v[0]) << 18) | (std::uint32_t(v[1]) << 12) | (std::uint32_t(v[2]) << 6) |
                                std::uint32_t(v[3]);
        out.push_back(char((n >> 16) & 0xff));
        if (pad < 2) out.push_back(char((n >> 8) & 0xff));
        if (pad < 1) out.push_back(char(n & 0xff));
    }
    return out;
}

json shape_of(const LatentImage& z) { return json::array({z.channels, z.height, z.width}); }

}  // namespace

std::string encode_float32_base64(const Vector& values) {
    std::string bytes(static_cast<size_t>(values.size()) * 4, '\0');
    for (Index i = 0; i < values.size(); ++i) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(values(i)));
        for (int k = 0; k < 4; ++k) bytes[size_t(i) * 4 + size_t(k)] = char((u >> (8 * k)) & 0xff);
    }
    return base64_encode(bytes);
}

Vector decode_float32_base64(const std::string& text) {
    const std::string bytes = base64_decode(text);
    if (bytes.size() % 4) throw ProviderError("float32 payload length is not a multiple of 4");
    Vector out(static_cast<Index>(bytes.size() / 4));
    for (Index i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= std::uint32_t(std::uint8_t(bytes[size_t(i) * 4 + size_t(k)])) << (8 * k);
        out(i) = std::bit_cast<float>(u);
    }
    return out;
}

std::string make_predict_request_body(const GuidanceRequest& request, bool include_eps) {
    if (!request.z_t) throw ProviderError("request without z_t");
    json body;
    body["prompt"] = request.prompt;
    body["t"] = request.t;
    body["shape"] = shape_of(*request.z_t);
    body["z_t"] = encode_float32_base64(request.z_t->data);
    if (include_eps && request.eps) body["eps"] = encode_float32_base64(*request.eps);
    body["seed"] = request.seed;
    return body.dump();
}

Vector parse_predict_response(const std::string& body, const LatentImage& like) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::exception& e) {
        throw ProviderError(std::string("malformed response: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("eps_hat") || !doc.contains("shape") || !doc["eps_hat"].is_string())
        throw ProviderError("response lacks eps_hat/shape");
    if (doc["shape"] != shape_of(like)) throw ProviderError("response shape " + doc["shape"].dump() + " does not match request");
    Vector eps_hat = decode_float32_base64(doc["eps_hat"].get<std::string>());
    if (eps_hat.size() != like.size()) throw ProviderError("response payload size does not match its shape");
    if (!all_finite(eps_hat)) throw ProviderError("response contains non-finite values");
    return eps_hat;
}

struct RemoteProvider::Pool {
    std::string base;
    std::string prefix;
    std::mutex mutex;
    std::condition_variable ready;
    std::vector<std::unique_ptr<httplib::Client>> idle;
};

RemoteProvider::RemoteProvider(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options), pool_(std::make_unique<Pool>()) {
    static const std::regex url(R"(^(http://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(endpoint_, m, url)) throw ConfigError("unsupported guidance endpoint '" + endpoint_ + "'");
    pool_->base = m[1];
    pool_->prefix = m[2];
    while (!pool_->prefix.empty() && pool_->prefix.back() == '/') pool_->prefix.pop_back();
    const auto secs = static_cast<time_t>(options_.timeout_seconds);
    const auto usecs = static_cast<time_t>((options_.timeout_seconds - double(secs)) * 1e6);
    for (int i = 0; i < std::max(1, options_.connections); ++i) {
        auto client = std::make_unique<httplib::Client>(pool_->base);
        client->set_connection_timeout(secs, usecs);
        client->set_read_timeout(secs, usecs);
        client->set_write_timeout(secs, usecs);
        pool_->idle.push_back(std::move(client));
    }
}

RemoteProvider::~RemoteProvider() = default;

Vector RemoteProvider::predict_noise(const GuidanceRequest& request) {
    const std::string body = make_predict_request_body(request, options_.send_eps);
    std::unique_ptr<httplib::Client> client;
    {
        std::unique_lock lock(pool_->mutex);
        pool_->ready.wait(lock, [&] { return !pool_->idle.empty(); });
        client = std::move(pool_->idle.back());
        pool_->idle.pop_back();
    }
    struct Return {
        Pool& pool;
        std::unique_ptr<httplib::Client>& client;
        ~Return() {
            std::lock_guard lock(pool.mutex);
            pool.idle.push_back(std::move(client));
            pool.ready.notify_one();
        }
    } give_back{*pool_, client};

    std::string last_error;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        auto res = client->Post(pool_->prefix + "/v1/predict_noise", body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 503) {
            last_error = "service unavailable (503)";
            continue;
        }
        if (res->status != 200)
            throw ProviderError("guidance service returned HTTP " + std::to_string(res->status) + ": " + res->body);
        return parse_predict_response(res->body, *request.z_t);
    }
    throw ProviderError("guidance request to " + endpoint_ + " failed after " + std::to_string(options_.retries + 1) +
                        " attempts (" + last_error + ")");
}

NoiseDraw draw_noise(const DiffusionSchedule& sched, Rng& rng, Index size, int t_min, int t_max) {
    if (t_min < 1 || t_max > sched.T || t_min > t_max) throw ConfigError("invalid diffusion step range");
    NoiseDraw d;
    d.t = rng.uniform_int(t_min, t_max);
    d.eps.resize(size);
    // float32-representable so the wire protocol carries eps exactly
    for (Index i = 0; i < size; ++i) d.eps(i) = static_cast<float>(rng.normal());
    return d;
}

namespace {

std::uint64_t request_seed(Rng& rng) { return rng.next_u64() >> 33; }

Vector residual(const DiffusionSchedule& sched, GuidanceProvider& provider, const LatentImage& z,
                const NoiseDraw& draw, const std::string& prompt, std::uint64_t seed, const SdsOptions& options,
                double alpha) {
    const LatentImage z_t = add_noise(sched, z, draw.t, draw.eps);
    GuidanceRequest req;
    req.z_t = &z_t;
    req.prompt = prompt;
    req.t = draw.t;
    req.eps = &draw.eps;
    req.seed = seed;
    req.branch = options.branch;
    req.view = options.view;
    req.alpha = alpha;
    const Vector eps_hat = provider.predict_noise(req);
    if (eps_hat.size() != z.size()) throw ProviderError("provider returned a noise array of the wrong size");
    return sched.weight(draw.t) * (eps_hat - draw.eps);
}

}  // namespace

SdsResult sds_texture_grad(const DiffusionSchedule& sched, GuidanceProvider& provider, const Image& image,
                           EncoderId encoder, const std::string& prompt, const NoiseDraw& draw, std::uint64_t seed,
                           const SdsOptions& options) {
    const LatentImage z = encode(image, encoder);
    SdsResult out;
    out.t = draw.t;
    out.grad_latent = z;
    out.grad_latent.data = residual(sched, provider, z, draw, prompt, seed, options, 0.0);
    out.grad = encode_adjoint(out.grad_latent);
    return out;
}

SdsResult sds_texture_grad(const DiffusionSchedule& sched, GuidanceProvider& provider, const Image& image,
                           EncoderId encoder, const std::string& prompt, Rng& rng, const SdsOptions& options) {
    const Index size = Index(3) * (encoder == EncoderId::pool8 ? (image.width / 8) * (image.height / 8)
                                                               : Index(image.width) * image.height);
    const NoiseDraw draw = draw_noise(sched, rng, size, options.t_min, options.t_max);
    const std::uint64_t seed = request_seed(rng);
    return sds_texture_grad(sched, provider, image, encoder, prompt, draw, seed, options);
}

LatentImage interpolate_latents(const LatentImage& rgb, const LatentImage& normal, double alpha) {
    if (!rgb.same_shape(normal) || rgb.encoder != normal.encoder) throw DimensionError("latent shapes differ");
    LatentImage out = normal;
    out.data = alpha * rgb.data + (1.0 - alpha) * normal.data;
    return out;
}

ConsistencyResult sds_consistency_grad(const DiffusionSchedule& sched, GuidanceProvider& provider,
                                       const LatentImage& rgb_latent, const LatentImage& normal_latent, double alpha,
                                       const std::string& prompt, const NoiseDraw& draw, std::uint64_t seed,
                                       const SdsOptions& options) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    const LatentImage mixed = interpolate_latents(rgb_latent, normal_latent, alpha);
    SdsOptions opts = options;
    opts.branch = GuidanceBranch::consistency;
    ConsistencyResult out;
    out.t = draw.t;
    out.grad_normal_latent = normal_latent;
    out.grad_normal_latent.data = (1.0 - alpha) * residual(sched, provider, mixed, draw, prompt, seed, opts, alpha);
    out.grad_rgb_latent = LatentImage::zeros_like(rgb_latent);
    out.grad_normal = encode_adjoint(out.grad_normal_latent);
    return out;
}

ConsistencyResult sds_consistency_grad(const DiffusionSchedule& sched, GuidanceProvider& provider,
                                       const LatentImage& rgb_latent, const LatentImage& normal_latent, double alpha,
                                       const std::string& prompt, Rng& rng, const SdsOptions& options) {
    const NoiseDraw draw = draw_noise(sched, rng, normal_latent.size(), options.t_min, options.t_max);
    const std::uint64_t seed = request_seed(rng);
    return sds_consistency_grad(sched, provider, rgb_latent, normal_latent, alpha, prompt, draw, seed, options);
}

}  // namespace avatar_forge
