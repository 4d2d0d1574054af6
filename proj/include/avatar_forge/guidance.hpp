#pragma once

#include "avatar_forge/body_model.hpp"
#include "avatar_forge/core.hpp"
#include "avatar_forge/image.hpp"
#include "avatar_forge/renderer.hpp"
#include "avatar_forge/rng.hpp"

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace avatar_forge {

enum class EncoderId { identity, pool8 };
const char* encoder_name(EncoderId id);
EncoderId parse_encoder(const std::string& name);

// Channel-first latent; element (c, y, x) lives at data[(c*height + y)*width + x].
struct LatentImage {
    int channels = 3;
    int height = 0;
    int width = 0;
    EncoderId encoder = EncoderId::identity;
    Vector data;

    static LatentImage zeros_like(const LatentImage& z);
    Index size() const { return Index(channels) * height * width; }
    bool same_shape(const LatentImage& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Linear encoders: identity maps pixels p to 2p-1; pool8 averages 8x8 blocks of 2p-1.
LatentImage encode(const Image& image, EncoderId id);
// Adjoint of the linear part of encode: latent cotangent -> pixel cotangent.
Image encode_adjoint(const LatentImage& grad);

struct DiffusionSchedule {
    int T = 1000;
    Vector alpha_bar;  // alpha_bar(t - 1) for t = 1..T
    std::function<double(int)> weight = [](int) { return 1.0; };

    static DiffusionSchedule linear(int T = 1000, double beta_1 = 1e-4, double beta_T = 0.02);
    double abar(int t) const;
    int t_min(double fraction = 0.02) const { return static_cast<int>(std::lround(fraction * T)); }
    int t_max(double fraction = 0.98) const { return static_cast<int>(std::lround(fraction * T)); }
};

LatentImage add_noise(const DiffusionSchedule& sched, const LatentImage& z, int t, const Vector& eps);

enum class GuidanceBranch { texture, consistency };

// What the caller rendered for this request: the view and the animation frame.
struct ViewContext {
    CameraSpec camera;
    ViewMode mode = ViewMode::full_body;
    PoseParams pose;
    Vector psi_offset;  // additive expression override, may be empty
    int frame = -1;
};

struct GuidanceRequest {
    const LatentImage* z_t = nullptr;
    std::string prompt;
    int t = 0;
    const Vector* eps = nullptr;  // injected noise, for oracle-style providers
    std::uint64_t seed = 0;
    // Caller context; ignored by providers that do not need it.
    GuidanceBranch branch = GuidanceBranch::texture;
    const ViewContext* view = nullptr;
    double alpha = 0.0;
};

class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;
    // Returns the predicted noise, same size as request.z_t->data.
    virtual Vector predict_noise(const GuidanceRequest& request) = 0;
};

// ε̂ = eps + (ẑ0 - z_target) with ẑ0 the one-step denoised estimate, so the
// expected SDS residual is z - z_target. The prompt is ignored.
class AnalyticOracle final : public GuidanceProvider {
public:
    using TargetFn = std::function<LatentImage(const GuidanceRequest&)>;

    AnalyticOracle(DiffusionSchedule sched, LatentImage target);
    AnalyticOracle(DiffusionSchedule sched, TargetFn target);
    Vector predict_noise(const GuidanceRequest& request) override;

private:
    DiffusionSchedule sched_;
    TargetFn target_;
};

struct RemoteOptions {
    double timeout_seconds = 30.0;
    int retries = 2;
    int connections = 1;
    bool send_eps = true;
};

// Client for the HTTP noise-prediction protocol (POST /v1/predict_noise).
class RemoteProvider final : public GuidanceProvider {
public:
    explicit RemoteProvider(std::string endpoint, RemoteOptions options = {});
    ~RemoteProvider() override;
    Vector predict_noise(const GuidanceRequest& request) override;
    const std::string& endpoint() const { return endpoint_; }

private:
    struct Pool;
    std::string endpoint_;
    RemoteOptions options_;
    std::unique_ptr<Pool> pool_;
};

// Wire helpers, exposed for fixtures and tests.
std::string encode_float32_base64(const Vector& values);
Vector decode_float32_base64(const std::string& text);
std::string make_predict_request_body(const GuidanceRequest& request, bool include_eps);
// Parses a response body and checks it against the expected latent shape.
Vector parse_predict_response(const std::string& body, const LatentImage& like);

struct NoiseDraw {
    int t = 0;
    Vector eps;
};

NoiseDraw draw_noise(const DiffusionSchedule& sched, Rng& rng, Index size, int t_min, int t_max);

struct SdsOptions {
    int t_min = 20;
    int t_max = 980;
    GuidanceBranch branch = GuidanceBranch::texture;
    const ViewContext* view = nullptr;
};

struct SdsResult {
    Image grad;           // pixel cotangent
    LatentImage grad_latent;
    int t = 0;
};

// Texture-style SDS on an image: returns the encoder pullback of
// w(t)(ε̂(z_t) - eps).
SdsResult sds_texture_grad(const DiffusionSchedule& sched, GuidanceProvider& provider, const Image& image,
                           EncoderId encoder, const std::string& prompt, Rng& rng, const SdsOptions& options = {});
SdsResult sds_texture_grad(const DiffusionSchedule& sched, GuidanceProvider& provider, const Image& image,
                           EncoderId encoder, const std::string& prompt, const NoiseDraw& draw, std::uint64_t seed,
                           const SdsOptions& options = {});

struct ConsistencyResult {
    Image grad_normal;               // pixel cotangent of the normal image
    LatentImage grad_normal_latent;  // (1 - alpha) w(t)(ε̂ - eps)
    LatentImage grad_rgb_latent;     // detached branch: identically zero
    int t = 0;
};

// SDS on z̃ = alpha z^I + (1 - alpha) z^N with z^I held constant.
ConsistencyResult sds_consistency_grad(const DiffusionSchedule& sched, GuidanceProvider& provider,
                                       const LatentImage& rgb_latent, const LatentImage& normal_latent, double alpha,
                                       const std::string& prompt, Rng& rng, const SdsOptions& options = {});
ConsistencyResult sds_consistency_grad(const DiffusionSchedule& sched, GuidanceProvider& provider,
                                       const LatentImage& rgb_latent, const LatentImage& normal_latent, double alpha,
                                       const std::string& prompt, const NoiseDraw& draw, std::uint64_t seed,
                                       const SdsOptions& options = {});

LatentImage interpolate_latents(const LatentImage& rgb, const LatentImage& normal, double alpha);

}  // namespace avatar_forge
