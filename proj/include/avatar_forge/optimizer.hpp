#pragma once

#include "avatar_forge/animation.hpp"
#include "avatar_forge/array_file.hpp"
#include "avatar_forge/config.hpp"
#include "avatar_forge/guidance.hpp"
#include "avatar_forge/subdivision.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace avatar_forge {

// Template plus its partial subdivision; the subdivided model points into
// the shared template, so copies stay valid.
struct AvatarAssets {
    std::shared_ptr<const TemplateModel> model;
    std::shared_ptr<const SubdividedModel> sub;
    std::vector<bool> head_vertices;  // on the subdivided mesh

    static AvatarAssets build(TemplateModel model, int rounds);
    std::uint64_t fingerprint() const { return sub->fingerprint(); }
};

struct AvatarState {
    Vector beta;
    Vector psi;
    DisplacementLayer displacement;
    TextureMap texture;

    static AvatarState initial(const AvatarAssets& assets, int texture_resolution);
    BodyParams params(const TemplateModel& model, const PoseParams& pose, const Vector& psi_offset = {}) const;
    // Texture into [0,1]; per-vertex displacement norm at most cap.
    void clamp(double displacement_cap);
    std::uint64_t fingerprint() const;
};

void save_state(const AvatarState& state, const AvatarAssets& assets, const std::string& path);
AvatarState load_state(const std::string& path, const AvatarAssets& assets);

PosedMesh pose_state(const AvatarAssets& assets, const AvatarState& state, const PoseParams& pose,
                     const Vector& psi_offset = {});
RenderOutput render_state(const AvatarAssets& assets, const AvatarState& state, const PoseParams& pose,
                          const CameraSpec& camera, const RenderSettings& settings = {});

// Adaptive moment estimation with bias correction; one moment pair per block.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void begin_step() { ++t_; }
    void update(const std::string& block, double* x, const double* g, Index n, double lr);
    int steps() const { return t_; }

    void save(ArrayFile& file) const;
    void load(const ArrayFile& file);

private:
    struct Moments {
        Vector m, v;
    };
    double beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, Moments> blocks_;
};

struct BlockGrads {
    PointCloud texture;
    Vector beta;
    Vector psi;
    PointCloud D;

    static BlockGrads zeros(const AvatarState& state);
};

struct StepReport {
    int iteration = 0;
    ViewMode mode = ViewMode::full_body;
    int frame = -1;
    int t_texture = -1;
    int t_consistency = -1;
    int rgb_resolution = 0;
    int consistency_resolution = 0;
    double alpha = 0;
    double grad_texture = 0, grad_beta = 0, grad_psi = 0, grad_D = 0;
};

// Per-loss accumulation buffers, for verifying that each loss only reaches its own blocks.
struct StepBuffers {
    BlockGrads texture_loss;
    BlockGrads consistency_loss;
};

class Optimizer {
public:
    Optimizer(AvatarAssets assets, OptimConfig config, GuidanceProvider& provider, AnimationGallery gallery);

    StepReport step(StepBuffers* buffers = nullptr);
    int iteration() const { return iteration_; }
    AvatarState& state() { return state_; }
    const AvatarState& state() const { return state_; }
    const OptimConfig& config() const { return config_; }
    const AnimationGallery& gallery() const { return gallery_; }
    const DiffusionSchedule& schedule() const { return sched_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    AvatarAssets assets_;
    OptimConfig config_;
    GuidanceProvider* provider_;
    AnimationGallery gallery_;
    DiffusionSchedule sched_;
    AvatarState state_;
    Adam adam_;
    Rng rng_;
    int iteration_ = 0;
    PoseParams base_pose_;
    int jaw_ = 0;
};

AnimationGallery gallery_for(const OptimConfig& config, const TemplateModel& model);

struct RunOptions {
    bool resume = false;
    int stop_after = -1;  // stop once this many iterations are done (simulates interruption)
    std::function<void(const StepReport&)> on_step;
};

struct RunResult {
    AvatarState state;
    std::vector<StepReport> reports;  // steps executed by this call
    int iterations_done = 0;
};

// Run directory: config.json, log.csv, checkpoints/ckpt_NNNNNN.avf, state.avf.
RunResult run(const AvatarAssets& assets, const OptimConfig& config, GuidanceProvider& provider,
              const std::string& run_dir, const RunOptions& options = {});

std::string latest_checkpoint(const std::string& run_dir);
std::string checkpoint_path(const std::string& run_dir, int iteration);

// Smoothly painted texture and a smooth radial displacement: a reachable
// optimum for descent experiments on the toy body.
AvatarState toy_reference_state(const AvatarAssets& assets, int texture_size, double displacement_amplitude = 0.02);

// Oracle target that renders a reference avatar for each request's view.
AnalyticOracle::TargetFn reference_target(const AvatarAssets& assets, AvatarState reference,
                                          RenderSettings settings = {});
// Oracle target from a single image, resized to the request resolution.
AnalyticOracle::TargetFn image_target(Image image);

}  // namespace avatar_forge
