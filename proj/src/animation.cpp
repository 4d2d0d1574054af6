#include "avatar_forge/animation.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace avatar_forge {

using nlohmann::json;

namespace {

Vec3 vec3_field(const json& frame, const char* key) {
    if (!frame.contains(key)) return Vec3::Zero();
    const json& a = frame[key];
    if (!a.is_array() || a.size() != 3) throw DimensionError(std::string("'") + key + "' must have 3 entries");
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace

AnimationSequence parse_sequence(const std::string& json_text, const TemplateModel& model) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("animation sequence: ") + e.what());
    }
    AnimationSequence seq;
    try {
        if (!doc.is_object()) throw ParseError("animation sequence must be a JSON object");
        seq.fps = doc.value("fps", 30.0);
        if (!(seq.fps > 0)) throw ParseError("fps must be positive");
        const Index K = model.n_joints();
        for (const json& f : doc.value("frames", json::array())) {
            AnimationFrame frame;
            frame.pose = PoseParams::zero(K);
            if (f.contains("body_pose")) {
                const json& bp = f["body_pose"];
                if (!bp.is_array() || Index(bp.size()) != K - 1)
                    throw DimensionError("body_pose has " + std::to_string(bp.size()) + " joints, model expects " +
                                         std::to_string(K - 1));
                for (Index j = 0; j < K - 1; ++j) {
                    if (!bp[size_t(j)].is_array() || bp[size_t(j)].size() != 3)
                        throw DimensionError("body_pose rows must have 3 entries");
                    for (int c = 0; c < 3; ++c) frame.pose.body_pose(j, c) = bp[size_t(j)][size_t(c)].get<double>();
                }
            }
            frame.pose.root_orient = vec3_field(f, "root_orient");
            frame.pose.root_transl = vec3_field(f, "root_transl");
            if (f.contains("psi")) {
                const json& p = f["psi"];
                if (!p.is_array() || Index(p.size()) != model.n_expr())
                    throw DimensionError("psi has " + std::to_string(p.size()) + " entries, model expects " +
                                         std::to_string(model.n_expr()));
                frame.psi.resize(model.n_expr());
                for (Index i = 0; i < model.n_expr(); ++i) frame.psi(i) = p[size_t(i)].get<double>();
            }
            if (!all_finite(frame.pose.body_pose) || !all_finite(frame.pose.root_orient) ||
                !all_finite(frame.pose.root_transl) || !all_finite(frame.psi))
                throw ParseError("animation frame contains non-finite values");
            seq.frames.push_back(std::move(frame));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("animation sequence: ") + e.what());
    }
    return seq;
}

AnimationSequence load_sequence(const std::string& path, const TemplateModel& model) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open animation sequence '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_sequence(ss.str(), model);
}

std::string sequence_to_json(const AnimationSequence& sequence) {
    json doc;
    doc["fps"] = sequence.fps;
    doc["frames"] = json::array();
    for (const AnimationFrame& f : sequence.frames) {
        json frame;
        json bp = json::array();
        for (Index j = 0; j < f.pose.body_pose.rows(); ++j)
            bp.push_back({f.pose.body_pose(j, 0), f.pose.body_pose(j, 1), f.pose.body_pose(j, 2)});
        frame["body_pose"] = bp;
        frame["root_orient"] = {f.pose.root_orient.x(), f.pose.root_orient.y(), f.pose.root_orient.z()};
        frame["root_transl"] = {f.pose.root_transl.x(), f.pose.root_transl.y(), f.pose.root_transl.z()};
        if (f.psi.size()) frame["psi"] = std::vector<double>(f.psi.data(), f.psi.data() + f.psi.size());
        doc["frames"].push_back(frame);
    }
    return doc.dump(1);
}

void save_sequence(const AnimationSequence& sequence, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << sequence_to_json(sequence) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

AnimationSequence jaw_sweep(const TemplateModel& model, int n, double max_angle) {
    if (n < 1) throw ConfigError("jaw sweep needs at least one frame");
    const int jaw = jaw_joint_index(model);
    AnimationSequence seq;
    for (int i = 0; i < n; ++i) {
        AnimationFrame f;
        f.pose = PoseParams::zero(model.n_joints());
        f.pose.body_pose(jaw - 1, 0) = n == 1 ? 0.0 : max_angle * i / (n - 1);
        seq.frames.push_back(std::move(f));
    }
    return seq;
}

AnimationGallery AnimationGallery::from_sequence(const AnimationSequence& sequence) {
    AnimationGallery g;
    g.frames = sequence.frames;
    return g;
}

AnimationGallery AnimationGallery::jaw_poses(const TemplateModel& model, int n, double max_angle) {
    return from_sequence(jaw_sweep(model, n, max_angle));
}

void AnimationGallery::validate(const TemplateModel& model) const {
    if (frames.empty()) throw ConfigError("animation gallery is empty");
    for (const AnimationFrame& f : frames) {
        if (f.pose.body_pose.rows() != model.n_joints() - 1) throw DimensionError("gallery frame joint count mismatch");
        if (f.psi.size() && f.psi.size() != model.n_expr()) throw DimensionError("gallery frame psi size mismatch");
        if (!all_finite(f.pose.body_pose) || !all_finite(f.pose.root_orient) || !all_finite(f.pose.root_transl) ||
            !all_finite(f.psi))
            throw NonFiniteError("gallery frame contains non-finite values");
    }
}

}  // namespace avatar_forge
