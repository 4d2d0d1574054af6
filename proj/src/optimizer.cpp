#include "avatar_forge/optimizer.hpp"

#include <chrono>
#include <numbers>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace avatar_forge {

namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

AvatarAssets AvatarAssets::build(TemplateModel model, int rounds) {
    validate(model);
    AvatarAssets a;
    auto owned = std::make_shared<TemplateModel>(std::move(model));
    a.model = owned;
    a.sub = std::make_shared<SubdividedModel>(subdivide_partial(*owned, rounds));
    a.head_vertices.resize(static_cast<size_t>(a.sub->n_verts()));
    for (size_t i = 0; i < a.head_vertices.size(); ++i) a.head_vertices[i] = is_head_region(a.sub->part_labels_up[i]);
    return a;
}

AvatarState AvatarState::initial(const AvatarAssets& assets, int texture_resolution) {
    AvatarState s;
    s.beta = Vector::Zero(assets.model->n_shape());
    s.psi = Vector::Zero(assets.model->n_expr());
    s.displacement = DisplacementLayer::zero(*assets.sub);
    s.texture = TextureMap::constant(texture_resolution, Vec3::Constant(0.5));
    return s;
}

BodyParams AvatarState::params(const TemplateModel& model, const PoseParams& pose, const Vector& psi_offset) const {
    BodyParams p = BodyParams::zero(model);
    p.beta = beta;
    p.psi = psi_offset.size() ? Vector(psi + psi_offset) : psi;
    p.theta = pose;
    return p;
}

void AvatarState::clamp(double displacement_cap) {
    texture.texels = texture.texels.cwiseMax(0.0).cwiseMin(1.0);
    for (Index v = 0; v < displacement.d.rows(); ++v) {
        const double n = displacement.d.row(v).norm();
        if (n > displacement_cap) displacement.d.row(v) *= displacement_cap / n;
    }
}

std::uint64_t AvatarState::fingerprint() const {
    return Fingerprint().add(beta).add(psi).add(displacement.d).add(texture.texels).value();
}

namespace {

void put_state(ArrayFile& f, const AvatarState& state, const AvatarAssets& assets) {
    f.set_meta("kind", "avatar_state");
    f.set_meta("asset_fingerprint", std::to_string(assets.fingerprint()));
    f.set_meta("texture_size", std::to_string(state.texture.size));
    f.set("beta", state.beta);
    f.set("psi", state.psi);
    f.set("displacement", state.displacement.d);
    f.set("texture", state.texture.texels);
}

AvatarState get_state(const ArrayFile& f, const AvatarAssets& assets) {
    if (f.require_meta("asset_fingerprint") != std::to_string(assets.fingerprint()))
        throw TopologyMismatchError("state was produced on different assets");
    AvatarState s;
    s.beta = f.matrix("beta", assets.model->n_shape(), 1).col(0);
    s.psi = f.matrix("psi", assets.model->n_expr(), 1).col(0);
    s.displacement.d = f.matrix("displacement", assets.sub->n_verts(), 3);
    const int size = std::stoi(f.require_meta("texture_size"));
    if (!is_power_of_two(size)) throw ParseError("texture size is not a power of two");
    s.texture.size = size;
    s.texture.texels = f.matrix("texture", Index(size) * size, 3);
    return s;
}

}  // namespace

void save_state(const AvatarState& state, const AvatarAssets& assets, const std::string& path) {
    ArrayFile f;
    put_state(f, state, assets);
    f.write(path);
}

AvatarState load_state(const std::string& path, const AvatarAssets& assets) {
    const ArrayFile f = ArrayFile::read(path);
    if (f.require_meta("kind") != "avatar_state" && f.require_meta("kind") != "checkpoint")
        throw ParseError("'" + path + "' is not an avatar state");
    return get_state(f, assets);
}

PosedMesh pose_state(const AvatarAssets& assets, const AvatarState& state, const PoseParams& pose,
                     const Vector& psi_offset) {
    return posed_avatar(*assets.sub, state.displacement, state.params(*assets.model, pose, psi_offset));
}

RenderOutput render_state(const AvatarAssets& assets, const AvatarState& state, const PoseParams& pose,
                          const CameraSpec& camera, const RenderSettings& settings) {
    const PosedMesh posed = pose_state(assets, state, pose);
    return render({posed.vertices, assets.sub->faces, assets.sub->uv_coords}, state.texture, camera, settings);
}

void Adam::update(const std::string& block, double* x, const double* g, Index n, double lr) {
    Moments& mo = blocks_[block];
    if (mo.m.size() != n) {
        mo.m = Vector::Zero(n);
        mo.v = Vector::Zero(n);
    }
    const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
    for (Index i = 0; i < n; ++i) {
        mo.m(i) = beta1_ * mo.m(i) + (1 - beta1_) * g[i];
        mo.v(i) = beta2_ * mo.v(i) + (1 - beta2_) * g[i] * g[i];
        x[i] -= lr * (mo.m(i) / c1) / (std::sqrt(mo.v(i) / c2) + eps_);
    }
}

void Adam::save(ArrayFile& file) const {
    file.set_meta("adam_step", std::to_string(t_));
    std::string names;
    for (const auto& [name, mo] : blocks_) {
        names += (names.empty() ? "" : ",") + name;
        file.set("adam_m_" + name, mo.m);
        file.set("adam_v_" + name, mo.v);
    }
    file.set_meta("adam_blocks", names);
}

void Adam::load(const ArrayFile& file) {
    t_ = std::stoi(file.require_meta("adam_step"));
    blocks_.clear();
    std::stringstream ss(file.require_meta("adam_blocks"));
    std::string name;
    while (std::getline(ss, name, ','))
        if (!name.empty())
            blocks_[name] = {file.matrix("adam_m_" + name, -1, 1).col(0), file.matrix("adam_v_" + name, -1, 1).col(0)};
}

BlockGrads BlockGrads::zeros(const AvatarState& state) {
    return {PointCloud::Zero(state.texture.texels.rows(), 3), Vector::Zero(state.beta.size()),
            Vector::Zero(state.psi.size()), PointCloud::Zero(state.displacement.d.rows(), 3)};
}

AnimationGallery gallery_for(const OptimConfig& config, const TemplateModel& model) {
    AnimationGallery g = config.gallery.empty()
                             ? AnimationGallery::jaw_poses(model, config.gallery_size, config.gallery_max_jaw)
                             : AnimationGallery::from_sequence(load_sequence(config.gallery, model));
    g.validate(model);
    return g;
}

Optimizer::Optimizer(AvatarAssets assets, OptimConfig config, GuidanceProvider& provider, AnimationGallery gallery)
    : assets_(std::move(assets)),
      config_(std::move(config)),
      provider_(&provider),
      gallery_(std::move(gallery)),
      sched_(DiffusionSchedule::linear()),
      adam_(config_.adam_beta1, config_.adam_beta2, config_.adam_eps),
      rng_(config_.seed) {
    config_.validate();
    gallery_.validate(*assets_.model);
    state_ = AvatarState::initial(assets_, config_.texture_resolution);
    base_pose_ = PoseParams::zero(assets_.model->n_joints());
    jaw_ = jaw_joint_index(*assets_.model);
}

namespace {

void require_finite(const char* block, double norm, int iteration) {
    if (!std::isfinite(norm))
        throw NonFiniteError(std::string("non-finite gradient in block '") + block + "' at iteration " +
                             std::to_string(iteration));
}

}  // namespace

StepReport Optimizer::step(StepBuffers* buffers) {
    const TemplateModel& model = *assets_.model;
    const SubdividedModel& sub = *assets_.sub;
    StepReport report;
    report.iteration = iteration_;
    report.rgb_resolution = config_.rgb_resolution(iteration_);
    report.consistency_resolution = config_.consistency_resolution;
    report.alpha = config_.alpha_at(iteration_);

    // (1) animation frame and camera
    report.frame = rng_.uniform_int(0, static_cast<int>(gallery_.size()) - 1);
    const AnimationFrame& frame = gallery_.frames[static_cast<size_t>(report.frame)];
    ViewContext view;
    view.frame = report.frame;
    if (config_.sample_body_pose) {
        view.pose = frame.pose;
    } else {
        view.pose = base_pose_;
        view.pose.body_pose.row(jaw_ - 1) = frame.pose.body_pose.row(jaw_ - 1);
    }
    if (config_.sample_expression && frame.psi.size()) view.psi_offset = frame.psi;

    // (2) pose the displaced, subdivided avatar
    const BodyParams params = state_.params(model, view.pose, view.psi_offset);
    const PosedMesh posed = posed_avatar(sub, state_.displacement, params);
    CameraSamplerConfig cam_cfg = config_.camera;
    cam_cfg.resolution = report.rgb_resolution;
    const CameraSample cam = sample_camera(rng_, cam_cfg, bounds_of(posed.vertices),
                                           bounds_of(posed.vertices, assets_.head_vertices));
    view.camera = cam.camera;
    view.mode = cam.mode;
    report.mode = cam.mode;
    const std::string& prompt = cam.mode == ViewMode::head ? config_.prompts.head : config_.prompts.full_body;

    RenderSettings rs;
    rs.threads = config_.threads;
    rs.antialias = config_.antialias;
    const SurfaceMesh mesh{posed.vertices, sub.faces, sub.uv_coords};
    const bool do_tex = config_.lambda_tex > 0, do_c = config_.lambda_c > 0;

    // (3) renders: scheduled resolution for the texture loss, fixed resolution for consistency
    CameraSpec cam_c = cam.camera;
    cam_c.width = cam_c.height = config_.consistency_resolution;
    std::optional<RenderOutput> out_t, out_c;
    if (do_tex) out_t = render(mesh, state_.texture, cam.camera, rs);
    if (do_c) {
        if (do_tex && report.rgb_resolution == config_.consistency_resolution) out_c = out_t;
        else out_c = render(mesh, state_.texture, cam_c, rs);
    }

    BlockGrads g_tex, g_c;
    if (buffers || do_tex) g_tex = BlockGrads::zeros(state_);
    if (buffers || do_c) g_c = BlockGrads::zeros(state_);

    // (4)-(5) texture SDS reaches only the texture
    std::optional<NoiseDraw> tex_draw;
    if (do_tex) {
        const Index size = Index(3) * (config_.encoder == EncoderId::pool8
                                           ? Index(report.rgb_resolution / 8) * (report.rgb_resolution / 8)
                                           : Index(report.rgb_resolution) * report.rgb_resolution);
        tex_draw = draw_noise(sched_, rng_, size, config_.t_min, config_.t_max);
        const std::uint64_t seed = rng_.next_u64() >> 33;
        SdsOptions o;
        o.t_min = config_.t_min;
        o.t_max = config_.t_max;
        o.view = &view;
        const SdsResult sds = sds_texture_grad(sched_, *provider_, out_t->rgb, config_.encoder, prompt, *tex_draw, seed, o);
        report.t_texture = sds.t;
        const RenderGrad rg = render_backward(out_t->tape, &sds.grad, nullptr, {true, false});
        g_tex.texture = config_.lambda_tex * rg.texture;
    }

    // consistency SDS reaches only beta, psi and D
    if (do_c) {
        const LatentImage zi = encode(out_c->rgb, config_.encoder), zn = encode(out_c->normal, config_.encoder);
        NoiseDraw draw;
        if (config_.share_noise_draw && tex_draw) {
            draw.t = tex_draw->t;
            if (tex_draw->eps.size() == zn.size()) {
                draw.eps = tex_draw->eps;
            } else {
                draw.eps.resize(zn.size());
                for (Index i = 0; i < zn.size(); ++i) draw.eps(i) = static_cast<float>(rng_.normal());
            }
        } else {
            draw = draw_noise(sched_, rng_, zn.size(), config_.t_min, config_.t_max);
        }
        const std::uint64_t seed = rng_.next_u64() >> 33;
        ViewContext view_c = view;
        view_c.camera = cam_c;
        SdsOptions o;
        o.t_min = config_.t_min;
        o.t_max = config_.t_max;
        o.view = &view_c;
        const ConsistencyResult cr =
            sds_consistency_grad(sched_, *provider_, zi, zn, report.alpha, prompt, draw, seed, o);
        report.t_consistency = cr.t;
        const RenderGrad rg = render_backward(out_c->tape, nullptr, &cr.grad_normal, {false, true});
        const BodyGrad bg = lbs_backward(posed.tape, rg.vertices);
        g_c.beta = config_.lambda_c * bg.beta;
        g_c.psi = config_.lambda_c * bg.psi;
        g_c.D = config_.lambda_c * bg.displacement;
    }

    report.grad_texture = do_tex ? g_tex.texture.norm() : 0.0;
    report.grad_beta = do_c ? g_c.beta.norm() : 0.0;
    report.grad_psi = do_c ? g_c.psi.norm() : 0.0;
    report.grad_D = do_c ? g_c.D.norm() : 0.0;
    require_finite("texture", report.grad_texture, iteration_);
    require_finite("beta", report.grad_beta, iteration_);
    require_finite("psi", report.grad_psi, iteration_);
    require_finite("D", report.grad_D, iteration_);

    // (6) one adaptive-moment update per block, (7) clamp
    adam_.begin_step();
    const LearningRates& lr = config_.learning_rates;
    if (do_tex && lr.texture > 0)
        adam_.update("texture", state_.texture.texels.data(), g_tex.texture.data(), g_tex.texture.size(), lr.texture);
    if (do_c) {
        if (lr.beta > 0) adam_.update("beta", state_.beta.data(), g_c.beta.data(), g_c.beta.size(), lr.beta);
        if (lr.psi > 0) adam_.update("psi", state_.psi.data(), g_c.psi.data(), g_c.psi.size(), lr.psi);
        if (lr.D > 0) adam_.update("D", state_.displacement.d.data(), g_c.D.data(), g_c.D.size(), lr.D);
    }
    if (do_tex || do_c) state_.clamp(config_.displacement_cap);

    if (buffers) {
        buffers->texture_loss = std::move(g_tex);
        buffers->consistency_loss = std::move(g_c);
    }
    ++iteration_;
    return report;
}

void Optimizer::save_checkpoint(const std::string& path) const {
    ArrayFile f;
    put_state(f, state_, assets_);
    f.set_meta("kind", "checkpoint");
    f.set_meta("iteration", std::to_string(iteration_));
    f.set_meta("rng_state", rng_.state());
    adam_.save(f);
    f.write(path);
}

void Optimizer::load_checkpoint(const std::string& path) {
    const ArrayFile f = ArrayFile::read(path);
    if (f.require_meta("kind") != "checkpoint") throw ParseError("'" + path + "' is not a checkpoint");
    AvatarState s = get_state(f, assets_);
    if (s.texture.size != config_.texture_resolution) throw ConfigError("checkpoint texture resolution differs from config");
    Adam adam(config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
    adam.load(f);
    state_ = std::move(s);
    adam_ = std::move(adam);
    rng_.set_state(f.require_meta("rng_state"));
    iteration_ = std::stoi(f.require_meta("iteration"));
}

std::string checkpoint_path(const std::string& run_dir, int iteration) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06d.avf", iteration);
    return (fs::path(run_dir) / "checkpoints" / name).string();
}

std::string latest_checkpoint(const std::string& run_dir) {
    const fs::path dir = fs::path(run_dir) / "checkpoints";
    if (!fs::exists(dir)) return {};
    static const std::regex pattern(R"(ckpt_(\d+)\.avf)");
    int best = -1;
    std::string path;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (!std::regex_match(name, m, pattern)) continue;
        const int it = std::stoi(m[1]);
        if (it > best) {
            best = it;
            path = entry.path().string();
        }
    }
    return path;
}

namespace {

const char* kLogHeader =
    "iteration,mode,frame,t_texture,t_consistency,rgb_resolution,consistency_resolution,alpha,grad_texture,grad_beta,"
    "grad_psi,grad_D,wall_time";

std::string log_row(const StepReport& r, double wall) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%s,%d,%d,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f", r.iteration,
                  view_mode_name(r.mode), r.frame, r.t_texture, r.t_consistency, r.rgb_resolution,
                  r.consistency_resolution, r.alpha, r.grad_texture, r.grad_beta, r.grad_psi, r.grad_D, wall);
    return buf;
}

// Keeps the header and rows for iterations below `keep`.
void truncate_log(const fs::path& log, int keep) {
    std::vector<std::string> lines;
    {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) {
            if (lines.empty()) {
                lines.push_back(line);
                continue;
            }
            if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < keep) lines.push_back(line);
        }
    }
    std::ofstream out(log, std::ios::trunc);
    if (lines.empty()) lines.push_back(kLogHeader);
    for (const auto& l : lines) out << l << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

RunResult run(const AvatarAssets& assets, const OptimConfig& config, GuidanceProvider& provider,
              const std::string& run_dir, const RunOptions& options) {
    config.validate();
    const fs::path dir(run_dir);
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create run directory '" + run_dir + "': " + ec.message());
    write_text(dir / "config.json", config_to_json(config) + "\n");

    Optimizer opt(assets, config, provider, gallery_for(config, *assets.model));
    const fs::path log = dir / "log.csv";
    if (options.resume) {
        const std::string ckpt = latest_checkpoint(run_dir);
        if (!ckpt.empty()) opt.load_checkpoint(ckpt);
        truncate_log(log, opt.iteration());
    } else {
        write_text(log, std::string(kLogHeader) + "\n");
    }
    std::ofstream log_out(log, std::ios::app);
    if (!log_out) throw IoError("cannot append to '" + log.string() + "'");

    RunResult result;
    const auto start = std::chrono::steady_clock::now();
    while (opt.iteration() < config.iters) {
        if (options.stop_after >= 0 && opt.iteration() >= options.stop_after) break;
        const StepReport r = opt.step();
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log_out << log_row(r, wall) << '\n';
        log_out.flush();
        result.reports.push_back(r);
        if (options.on_step) options.on_step(r);
        if (config.checkpoint_every > 0 && opt.iteration() % config.checkpoint_every == 0)
            opt.save_checkpoint(checkpoint_path(run_dir, opt.iteration()));
    }
    result.iterations_done = opt.iteration();
    if (opt.iteration() == config.iters) {
        opt.save_checkpoint(checkpoint_path(run_dir, opt.iteration()));
        save_state(opt.state(), assets, (dir / "state.avf").string());
    }
    result.state = opt.state();
    return result;
}

AvatarState toy_reference_state(const AvatarAssets& assets, int texture_size, double displacement_amplitude) {
    AvatarState s = AvatarState::initial(assets, texture_size);
    const int n = texture_size;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double u = (x + 0.5) / n, v = (y + 0.5) / n;
            s.texture.texels.row(s.texture.index(x, y)) << 0.5 + 0.4 * std::sin(2 * kPi * u),
                0.5 + 0.4 * std::cos(2 * kPi * v), 0.3 + 0.2 * u;
        }
    const PointCloud& rest = assets.sub->vertices_rest;
    for (Index i = 0; i < rest.rows(); ++i) {
        Vec3 radial(rest(i, 0), 0.0, rest(i, 2));
        if (radial.norm() > 1e-9) radial.normalize();
        s.displacement.d.row(i) = displacement_amplitude * std::sin(3 * rest(i, 1)) * radial.transpose();
    }
    return s;
}

namespace {

int encoder_factor(EncoderId id) { return id == EncoderId::pool8 ? 8 : 1; }

}  // namespace

AnalyticOracle::TargetFn reference_target(const AvatarAssets& assets, AvatarState reference, RenderSettings settings) {
    auto ref = std::make_shared<const AvatarState>(std::move(reference));
    return [assets, ref, settings](const GuidanceRequest& req) {
        if (!req.view) throw ProviderError("reference oracle needs the request's view context");
        const int f = encoder_factor(req.z_t->encoder);
        CameraSpec cam = req.view->camera;
        cam.width = req.z_t->width * f;
        cam.height = req.z_t->height * f;
        const PosedMesh posed = pose_state(assets, *ref, req.view->pose, req.view->psi_offset);
        const RenderOutput out =
            render({posed.vertices, assets.sub->faces, assets.sub->uv_coords}, ref->texture, cam, settings);
        const LatentImage zi = encode(out.rgb, req.z_t->encoder);
        if (req.branch == GuidanceBranch::texture) return zi;
        return interpolate_latents(zi, encode(out.normal, req.z_t->encoder), req.alpha);
    };
}

AnalyticOracle::TargetFn image_target(Image image) {
    auto img = std::make_shared<const Image>(std::move(image));
    return [img](const GuidanceRequest& req) {
        const int f = encoder_factor(req.z_t->encoder);
        return encode(resize_bilinear(*img, req.z_t->width * f, req.z_t->height * f), req.z_t->encoder);
    };
}

}  // namespace avatar_forge
