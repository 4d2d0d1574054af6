#include "avatar_forge/assets.hpp"
#include "avatar_forge/checks.hpp"
#include "avatar_forge/editing_export.hpp"
#include "avatar_forge/optimizer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

using namespace avatar_forge;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kProvider = 3 };

struct Common {
    std::string assets;
    std::string out;
    int threads = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

struct GenerateArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string guidance = "analytic";
    std::string endpoint;
    std::string target;
    bool resume = false;
};

// Loads the template from --assets, or builds the default toy body.
TemplateModel load_template(const Common& c, bool check_invariants = true) {
    if (c.assets.empty()) return make_toy_body(0, 8);
    if (!fs::exists(c.assets)) throw ConfigError("assets file '" + c.assets + "' does not exist");
    return load_model(c.assets, check_invariants);
}

void ensure_dir(const std::string& d) {
    if (d.empty()) throw ConfigError("--out is required");
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create '" + d + "': " + ec.message());
}

void write_invocation(const std::string& dir, const std::string& command, const nlohmann::json& args) {
    nlohmann::json doc{{"command", command}, {"arguments", args}};
    std::ofstream(fs::path(dir) / "invocation.json") << doc.dump(2) << '\n';
}

std::string resolve_endpoint(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("AVATAR_FORGE_ENDPOINT")) return env;
    throw ConfigError("remote guidance needs --endpoint or AVATAR_FORGE_ENDPOINT");
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int cmd_generate(const Common& c, const GenerateArgs& g) {
    std::vector<std::string> overrides = g.overrides;
    if (c.seed_set) overrides.push_back("seed=" + std::to_string(c.seed));
    if (c.threads > 0) overrides.push_back("threads=" + std::to_string(c.threads));
    const OptimConfig config = g.config.empty() ? parse_config("{}", overrides) : load_config(g.config, overrides);
    ensure_dir(c.out);
    const AvatarAssets assets = AvatarAssets::build(load_template(c), config.subdivision_rounds);

    std::unique_ptr<GuidanceProvider> provider;
    if (g.guidance == "analytic") {
        if (g.target.empty()) throw ConfigError("analytic guidance needs --target (a PNG image or a state file)");
        if (!fs::exists(g.target)) throw ConfigError("target '" + g.target + "' does not exist");
        AnalyticOracle::TargetFn target = has_suffix(g.target, ".png")
                                              ? image_target(read_png(g.target))
                                              : reference_target(assets, load_state(g.target, assets));
        provider = std::make_unique<AnalyticOracle>(DiffusionSchedule::linear(), target);
    } else if (g.guidance == "remote") {
        RemoteOptions opts;
        if (config.threads > 1) opts.connections = config.threads;
        provider = std::make_unique<RemoteProvider>(resolve_endpoint(g.endpoint), opts);
    } else {
        throw ConfigError("unknown guidance '" + g.guidance + "'");
    }

    RunOptions ro;
    ro.resume = g.resume;
    const RunResult result = run(assets, config, *provider, c.out, ro);
    export_avatar(result.state, assets, PoseParams::zero(assets.model->n_joints()), (fs::path(c.out) / "export").string());
    write_invocation(c.out, "generate",
                     {{"assets", c.assets}, {"config", g.config}, {"overrides", g.overrides}, {"guidance", g.guidance},
                      {"target", g.target}, {"resume", g.resume}});
    std::cout << "completed " << result.iterations_done << " iterations in " << c.out << "\n";
    return kOk;
}

int cmd_animate(const Common& c, const std::string& state_path, const std::string& sequence_path, bool skinned,
                int rounds) {
    ensure_dir(c.out);
    const AvatarAssets assets = AvatarAssets::build(load_template(c), rounds);
    const AvatarState state = load_state(state_path, assets);
    const AnimationSequence seq = load_sequence(sequence_path, *assets.model);
    AnimateOptions opts;
    opts.skinned = skinned;
    const auto bundles = animate(state, assets, seq, c.out, opts);
    write_invocation(c.out, "animate",
                     {{"assets", c.assets}, {"state", state_path}, {"sequence", sequence_path}, {"skinned", skinned}});
    std::cout << "exported " << seq.size() << " frames to " << c.out << "\n";
    (void)bundles;
    return kOk;
}

int cmd_edit(const Common& c, const std::string& a_path, const std::string& b_path, const std::string& part,
             int smoothing, int rounds) {
    ensure_dir(c.out);
    const AvatarAssets assets = AvatarAssets::build(load_template(c), rounds);
    const AvatarState a = load_state(a_path, assets), b = load_state(b_path, assets);
    const AvatarState r = part_swap(a, b, parse_part_label(part), assets, {smoothing});
    save_state(r, assets, (fs::path(c.out) / "state.avf").string());
    export_avatar(r, assets, PoseParams::zero(assets.model->n_joints()), (fs::path(c.out) / "export").string());
    write_invocation(c.out, "edit",
                     {{"assets", c.assets}, {"state", a_path}, {"donor", b_path}, {"part", part}, {"smooth", smoothing}});
    return kOk;
}

struct RenderArgs {
    std::string state;
    double polar = 80, azimuth = 0, fov = 45, jaw = 0;
    int resolution = 256;
    bool head = false;
    bool antialias = false;
    int rounds = 1;
};

int cmd_render(const Common& c, const RenderArgs& r) {
    ensure_dir(c.out);
    const AvatarAssets assets = AvatarAssets::build(load_template(c), r.rounds);
    const AvatarState state =
        r.state.empty() ? AvatarState::initial(assets, 512) : load_state(r.state, assets);
    PoseParams pose = PoseParams::zero(assets.model->n_joints());
    pose.body_pose(jaw_joint_index(*assets.model) - 1, 0) = r.jaw;
    const PosedMesh posed = pose_state(assets, state, pose);
    const Aabb box = r.head ? bounds_of(posed.vertices, assets.head_vertices) : bounds_of(posed.vertices);
    const CameraSpec cam = frame_bounds(box, r.polar, r.azimuth, r.fov, CameraSamplerConfig{}.fill, r.resolution);
    RenderSettings rs;
    rs.threads = std::max(1, c.threads);
    rs.antialias = r.antialias;
    const RenderOutput out = render({posed.vertices, assets.sub->faces, assets.sub->uv_coords}, state.texture, cam, rs);
    write_png((fs::path(c.out) / "rgb.png").string(), out.rgb);
    write_png((fs::path(c.out) / "normal.png").string(), out.normal);
    write_invocation(c.out, "render",
                     {{"assets", c.assets}, {"state", r.state}, {"polar", r.polar}, {"azimuth", r.azimuth},
                      {"fov", r.fov}, {"resolution", r.resolution}, {"head", r.head}, {"jaw", r.jaw},
                      {"antialias", r.antialias}});
    return kOk;
}

int cmd_check(const Common& c, const std::vector<std::string>& only) {
    const TemplateModel model = load_template(c, false);
    const auto results = run_checks(model, only, c.seed);
    std::cout << format_check_table(results);
    int failed = 0;
    for (const auto& r : results)
        if (!r.passed) {
            ++failed;
            std::cerr << "check failed: " << r.name << "\n";
        }
    std::cout << (failed ? std::to_string(failed) + " of " : "all ") << results.size() << " checks "
              << (failed ? "failed" : "passed") << "\n";
    return failed ? kFailure : kOk;
}

int cmd_make_toy_assets(const Common& c, int rings, int texture_size) {
    ensure_dir(c.out);
    const fs::path d(c.out);
    TemplateModel model = make_toy_body(c.seed, rings);
    save_model(model, (d / "toy_model.avf").string());
    const AvatarAssets assets = AvatarAssets::build(std::move(model), 1);
    const AvatarState ref = toy_reference_state(assets, texture_size);
    save_state(ref, assets, (d / "reference_state.avf").string());
    const PoseParams rest = PoseParams::zero(assets.model->n_joints());
    const PosedMesh posed = pose_state(assets, ref, rest);
    const CameraSpec cam = frame_bounds(bounds_of(posed.vertices), 80, 0, 45, CameraSamplerConfig{}.fill, 64);
    write_png((d / "reference.png").string(), render_state(assets, ref, rest, cam).rgb);
    save_sequence(jaw_sweep(*assets.model, 10, 0.4), (d / "jaw_sweep.json").string());
    nlohmann::json cfg{{"iters", 20},
                       {"texture_resolution", texture_size},
                       {"resolution_schedule", {{0, 32}, {10, 64}}},
                       {"consistency_resolution", 64},
                       {"encoder", "identity"},
                       {"checkpoint_every", 10}};
    std::ofstream(d / "toy_config.json") << cfg.dump(2) << '\n';
    write_invocation(c.out, "make-toy-assets", {{"rings", rings}, {"texture_size", texture_size}, {"seed", c.seed}});
    std::cout << "wrote toy assets to " << c.out << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-guided avatar optimization toolkit"};
    app.require_subcommand(1, 1);
    Common c;
    GenerateArgs g;

    auto common = [&](CLI::App* sub, bool with_out = true) {
        sub->add_option("--assets", c.assets, "template model file (default: built-in toy body)");
        if (with_out) sub->add_option("--out", c.out, "output directory")->required();
        sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", c.seed, "random seed");
    };

    CLI::App* gen = app.add_subcommand("generate", "optimize an avatar and export it");
    common(gen);
    gen->add_option("--config", g.config, "run configuration (JSON)");
    gen->add_option("--set", g.overrides, "override a config value, key.path=value")->take_all();
    gen->add_option("--guidance", g.guidance, "analytic or remote")->check(CLI::IsMember({"analytic", "remote"}));
    gen->add_option("--endpoint", g.endpoint, "remote guidance base URL");
    gen->add_option("--target", g.target, "analytic target: PNG image or reference state file");
    gen->add_flag("--resume", g.resume, "continue from the latest checkpoint in --out");

    std::string state, donor, sequence, part = "head";
    bool skinned = false;
    int smoothing = 0, rounds = 1, rings = 8, texture_size = 64;
    std::vector<std::string> only;

    CLI::App* anim = app.add_subcommand("animate", "export one mesh per animation frame");
    common(anim);
    anim->add_option("--state", state, "avatar state file")->required();
    anim->add_option("--sequence", sequence, "animation sequence (JSON)")->required();
    anim->add_flag("--skinned", skinned, "also write a single skinned animation file");
    anim->add_option("--subdivision-rounds", rounds, "rounds used when the state was created");

    CLI::App* edit = app.add_subcommand("edit", "swap one body part from a donor avatar");
    common(edit);
    edit->add_option("--state", state, "avatar to edit")->required();
    edit->add_option("--donor", donor, "avatar providing the part")->required();
    edit->add_option("--part", part, "part label");
    edit->add_option("--smooth", smoothing, "Laplacian passes near the part boundary")->check(CLI::NonNegativeNumber);
    edit->add_option("--subdivision-rounds", rounds, "rounds used when the states were created");

    RenderArgs ra;
    CLI::App* rend = app.add_subcommand("render", "render one view of an avatar");
    common(rend);
    rend->add_option("--state", ra.state, "avatar state file (default: gray initial state)");
    rend->add_option("--polar", ra.polar, "degrees from +Y");
    rend->add_option("--azimuth", ra.azimuth, "degrees about +Y, 0 faces +Z");
    rend->add_option("--fov", ra.fov, "vertical field of view in degrees");
    rend->add_option("--resolution", ra.resolution, "image size in pixels")->check(CLI::PositiveNumber);
    rend->add_option("--jaw", ra.jaw, "jaw opening in radians");
    rend->add_flag("--head", ra.head, "frame the head instead of the full body");
    rend->add_flag("--antialias", ra.antialias, "blend silhouette edges");
    rend->add_option("--subdivision-rounds", ra.rounds, "rounds used when the state was created");

    CLI::App* chk = app.add_subcommand("check", "run gradient checks and invariants on an asset");
    common(chk, false);
    chk->add_option("--only", only, "restrict to these suites")->take_all();

    CLI::App* toy = app.add_subcommand("make-toy-assets", "write the toy body, a reference avatar and a config");
    common(toy);
    toy->add_option("--rings", rings, "ring resolution of the toy body")->check(CLI::Range(4, 64));
    toy->add_option("--texture-size", texture_size, "reference texture size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    for (CLI::App* sub : {gen, anim, edit, rend, chk, toy})
        if (sub->count("--seed")) c.seed_set = true;

    try {
        if (*gen) return cmd_generate(c, g);
        if (*anim) return cmd_animate(c, state, sequence, skinned, rounds);
        if (*edit) return cmd_edit(c, state, donor, part, smoothing, rounds);
        if (*rend) return cmd_render(c, ra);
        if (*chk) return cmd_check(c, only);
        if (*toy) return cmd_make_toy_assets(c, rings, texture_size);
    } catch (const ProviderError& e) {
        std::cerr << "error: guidance provider: " << e.what() << "\n";
        return kProvider;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kConfig;
    } catch (const ParseError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return kConfig;
    } catch (const DimensionError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return kConfig;
    } catch (const TopologyMismatchError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
