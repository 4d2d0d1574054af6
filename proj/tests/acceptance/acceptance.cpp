// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include "avatar_forge/checks.hpp"
#include "avatar_forge/editing_export.hpp"
#include "avatar_forge/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace avatar_forge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass = o.ok && s < budget_s;
    if (!pass) ++failures;
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.2fs / %.0fs", s, budget_s);
    std::printf("%s %2d %-36s %-16s %s%s\n", pass ? "PASS" : "FAIL", id, title.c_str(), timing, o.detail.c_str(),
                o.ok && !pass ? " (over budget)" : "");
    std::fflush(stdout);
}

Outcome from_checks(std::initializer_list<CheckResult> rs) {
    Outcome o{true, ""};
    for (const auto& r : rs) {
        o.ok = o.ok && r.passed;
        if (!o.detail.empty()) o.detail += "; ";
        o.detail += r.name + ": " + r.detail;
    }
    return o;
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("avatar_forge_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) row.push_back(cell);
        rows.push_back(row);
    }
    return rows;
}

double image_mse(const Image& a, const Image& b) { return (a.pixels - b.pixels).squaredNorm() / double(a.pixels.size()); }

}  // namespace

int main() {
    const TemplateModel model = make_toy_body(0, 8);
    const std::uint64_t seed = 0;

    report(1, "parametric model identity", 1, [&] { return from_checks({check_lbs_identity(model)}); });
    report(2, "LBS rigid equivariance", 5, [&] { return from_checks({check_lbs_rigid(model, seed, 20)}); });
    report(3, "full backward vs finite differences", 60, [&] { return from_checks({check_lbs_backward(model, seed, 20)}); });
    report(4, "subdivision contract", 10, [&] { return from_checks({check_subdivision(model, seed)}); });
    report(5, "renderer gradient checks", 60,
           [&] { return from_checks({check_texel_gradients(model, seed), check_vertex_gradients(model, seed)}); });
    report(6, "camera sampler constants", 5, [&] { return from_checks({check_camera_sampler(model, seed, 10000)}); });
    report(7, "SDS oracle equivalence", 30, [&] { return from_checks({check_oracle_equivalence(seed, 1000)}); });
    report(8, "consistency loss contracts", 10, [&] { return from_checks({check_consistency_contracts(seed)}); });

    const AvatarAssets assets = AvatarAssets::build(model, 1);
    const PoseParams rest = PoseParams::zero(model.n_joints());
    const AvatarState reference = toy_reference_state(assets, 64);

    // Texture and displacement against a rendered reference; shape and
    // expression coefficients stay fixed.
    OptimConfig desk;
    desk.iters = 500;
    desk.texture_resolution = 64;
    desk.encoder = EncoderId::identity;
    desk.resolution_schedule = {{0, 64}};
    desk.alpha = 0.0;
    desk.antialias = true;
    desk.learning_rates.beta = 0;
    desk.learning_rates.psi = 0;
    desk.learning_rates.D = 1e-4;
    desk.learning_rates.texture = 1e-2;

    AvatarState converged = AvatarState::initial(assets, 64);
    report(9, "desk convergence", 300, [&] {
        AnalyticOracle oracle(DiffusionSchedule::linear(), reference_target(assets, reference));
        Optimizer opt(assets, desk, oracle, gallery_for(desk, model));
        const CameraSpec cam = frame_bounds(bounds_of(pose_state(assets, reference, rest).vertices), 80, 20, 45,
                                            CameraSamplerConfig{}.fill, 64);
        RenderSettings rs;
        rs.antialias = true;
        const Image target = render_state(assets, reference, rest, cam, rs).rgb;
        const double before = image_mse(render_state(assets, opt.state(), rest, cam, rs).rgb, target);
        while (opt.iteration() < desk.iters) opt.step();
        const double after = image_mse(render_state(assets, opt.state(), rest, cam, rs).rgb, target);
        converged = opt.state();
        const double reduction = 1.0 - after / before;
        char buf[160];
        std::snprintf(buf, sizeof buf, "reference-view MSE %.3e -> %.3e, reduction %.1f%% (need >= 90%%) in %d iterations",
                      before, after, 100 * reduction, desk.iters);
        return Outcome{reduction >= 0.9 && std::isfinite(after), buf};
    });

    report(10, "progressive schedule in run log", 600, [&] {
        OptimConfig c;
        c.iters = 10;
        c.texture_resolution = 64;
        c.consistency_resolution = 512;
        const fs::path dir = scratch("schedule");
        AnalyticOracle oracle(DiffusionSchedule::linear(), reference_target(assets, reference));
        run(assets, c, oracle, dir.string());
        const auto rows = read_csv(dir / "log.csv");
        if (rows.size() != size_t(c.iters) + 1) return Outcome{false, "log has " + std::to_string(rows.size()) + " lines"};
        const auto& h = rows[0];
        const auto col = [&](const char* name) { return size_t(std::find(h.begin(), h.end(), name) - h.begin()); };
        const size_t it = col("iteration"), rgb = col("rgb_resolution"), cons = col("consistency_resolution");
        bool fixed = true;
        for (size_t r = 1; r < rows.size(); ++r) fixed = fixed && rows[r][cons] == "512";
        const bool first = rows[1][it] == "0" && rows[1][rgb] == "32";
        const bool last = rows.back()[it] == std::to_string(c.iters - 1) && rows.back()[rgb] == "512";
        return Outcome{first && last && fixed, "rgb " + rows[1][rgb] + " at iteration 0, " + rows.back()[rgb] +
                                                   " at iteration " + rows.back()[it] + ", consistency " +
                                                   (fixed ? "512 on every row" : "varies")};
    });

    report(11, "jaw animation semantics", 60, [&] {
        const fs::path dir = scratch("jaw");
        const auto frames = animate(converged, assets, jaw_sweep(model, 20, 0.4), dir.string());
        const PointCloud rest_v = read_obj(frames.front().mesh).vertices;
        double prev = -1;
        bool monotonic = true;
        int nan_frames = 0;
        for (const auto& f : frames) {
            const PointCloud v = read_obj(f.mesh).vertices;
            if (!v.allFinite()) ++nan_frames;
            double sum = 0;
            int n = 0;
            for (Index i = 0; i < v.rows(); ++i)
                if (assets.sub->part_labels_up[size_t(i)] == PartLabel::jaw) {
                    sum += (v.row(i) - rest_v.row(i)).norm();
                    ++n;
                }
            const double mean = n ? sum / n : -1;
            monotonic = monotonic && n > 0 && mean > prev;
            prev = mean;
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu frames, mean jaw displacement at 0.4 rad %.4f, %s, %d NaN frames",
                      frames.size(), prev, monotonic ? "monotonic" : "not monotonic", nan_frames);
        return Outcome{monotonic && nan_frames == 0 && frames.size() == 20, buf};
    });

    report(12, "part swap locality and involution", 10, [&] {
        const AvatarState& a = converged;
        AvatarState b = toy_reference_state(assets, 64, 0.03);
        b.texture.texels = (1.0 - b.texture.texels.array()).matrix();
        b.beta.setConstant(0.3);
        const auto owner = texel_ownership(assets, 64);
        int parts = 0;
        bool ok = true;
        for (int p = 0; p < kPartLabelCount; ++p) {
            const auto part = PartLabel(p);
            const AvatarState s = part_swap(a, b, part, assets);
            for (Index v = 0; v < assets.sub->n_verts(); ++v) {
                const bool in = assets.sub->part_labels_up[size_t(v)] == part;
                ok = ok && s.displacement.d.row(v) == (in ? b : a).displacement.d.row(v);
            }
            for (size_t i = 0; i < owner.size(); ++i)
                ok = ok && s.texture.texels.row(Index(i)) == (owner[i] == part ? b : a).texture.texels.row(Index(i));
            ok = ok && s.beta == a.beta && s.psi == a.psi;
            const AvatarState back = part_swap(s, a, part, assets);
            ok = ok && back.displacement.d == a.displacement.d && back.texture.texels == a.texture.texels &&
                 back.beta == a.beta && back.psi == a.psi;
            ++parts;
        }
        return Outcome{ok, std::to_string(parts) + " part labels, complement and double swap " +
                               (ok ? "bit-exact" : "differ")};
    });

    report(13, "determinism", 600, [&] {
        OptimConfig c;
        c.iters = 30;
        c.texture_resolution = 64;
        c.resolution_schedule = {{0, 32}, {15, 64}};
        c.consistency_resolution = 128;
        c.sample_expression = true;
        c.checkpoint_every = 10;
        c.seed = 7;
        const fs::path a = scratch("determinism_a"), b = scratch("determinism_b");
        for (const fs::path& d : {a, b}) {
            AnalyticOracle oracle(DiffusionSchedule::linear(), reference_target(assets, reference));
            run(assets, c, oracle, d.string());
        }
        int compared = 0;
        bool same = true;
        for (const auto& e : fs::directory_iterator(a / "checkpoints")) {
            same = same && read_file(e.path()) == read_file(b / "checkpoints" / e.path().filename());
            ++compared;
        }
        same = same && read_file(a / "state.avf") == read_file(b / "state.avf");
        return Outcome{same && compared == 3, std::to_string(compared) + " checkpoints + final state " +
                                                  (same ? "bit-identical" : "differ")};
    });

    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
