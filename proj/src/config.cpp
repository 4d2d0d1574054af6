#include "avatar_forge/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace avatar_forge {

using nlohmann::json;

std::vector<ResolutionPhase> OptimConfig::schedule() const {
    if (!resolution_schedule.empty()) return resolution_schedule;
    std::vector<ResolutionPhase> s;
    int res = 32;
    for (int k = 0; k < 5; ++k, res *= 2)
        s.push_back({static_cast<int>((static_cast<long long>(iters) * k) / 5), res});
    // Short runs collapse phases onto the same iteration; keep the last of each.
    std::vector<ResolutionPhase> out;
    for (const auto& p : s) {
        if (!out.empty() && out.back().iteration == p.iteration) out.back() = p;
        else out.push_back(p);
    }
    return out;
}

int OptimConfig::rgb_resolution(int iteration) const {
    int res = 0;
    for (const auto& p : schedule())
        if (p.iteration <= iteration) res = p.resolution;
    return res;
}

double OptimConfig::alpha_at(int iteration) const {
    if (!alpha_end || iters <= 1) return alpha;
    return alpha + (*alpha_end - alpha) * double(iteration) / double(iters - 1);
}

void OptimConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(lambda_tex >= 0) || !(lambda_c >= 0)) fail("loss weights must be non-negative");
    if (iters < 0) fail("iters must be non-negative");
    const auto s = schedule();
    if (s.empty() || s.front().iteration != 0) fail("resolution_schedule must start at iteration 0");
    for (size_t i = 0; i < s.size(); ++i) {
        if (i && s[i].iteration <= s[i - 1].iteration) fail("resolution_schedule iterations must increase strictly");
        if (!is_power_of_two(s[i].resolution) || s[i].resolution < 32 || s[i].resolution > 512)
            fail("schedule resolutions must be powers of two in [32, 512]");
    }
    if (!is_power_of_two(consistency_resolution) || consistency_resolution < 32 || consistency_resolution > 512)
        fail("consistency_resolution must be a power of two in [32, 512]");
    if (!(alpha >= 0 && alpha <= 1) || (alpha_end && !(*alpha_end >= 0 && *alpha_end <= 1)))
        fail("alpha must lie in [0, 1]");
    for (double lr : {learning_rates.beta, learning_rates.psi, learning_rates.D, learning_rates.texture})
        if (!(lr >= 0)) fail("learning rates must be non-negative");
    if (!is_power_of_two(texture_resolution)) fail("texture_resolution must be a power of two");
    if (subdivision_rounds < 1 || subdivision_rounds > 4) fail("subdivision_rounds must lie in [1, 4]");
    if (!(displacement_cap > 0)) fail("displacement_cap must be positive");
    if (!(camera.head_probability >= 0 && camera.head_probability <= 1)) fail("head_probability must lie in [0, 1]");
    if (!(camera.fill > 0 && camera.fill < 1)) fail("camera fill must lie in (0, 1)");
    if (t_min < 1 || t_max > 1000 || t_min > t_max) fail("t_range must satisfy 1 <= t_min <= t_max <= 1000");
    if (gallery_size < 1) fail("gallery_size must be positive");
    if (checkpoint_every < 0) fail("checkpoint_every must be non-negative");
    if (threads < 1) fail("threads must be at least 1");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0))
        fail("invalid adam parameters");
}

namespace {

json to_json(const OptimConfig& c) {
    json sched = json::array();
    for (const auto& p : c.schedule()) sched.push_back({p.iteration, p.resolution});
    return {
        {"lambda_tex", c.lambda_tex},
        {"lambda_c", c.lambda_c},
        {"iters", c.iters},
        {"resolution_schedule", sched},
        {"consistency_resolution", c.consistency_resolution},
        {"alpha", c.alpha},
        {"alpha_end", c.alpha_end ? json(*c.alpha_end) : json(nullptr)},
        {"learning_rates",
         {{"beta", c.learning_rates.beta},
          {"psi", c.learning_rates.psi},
          {"D", c.learning_rates.D},
          {"texture", c.learning_rates.texture}}},
        {"prompts", {{"full_body", c.prompts.full_body}, {"head", c.prompts.head}}},
        {"seed", c.seed},
        {"texture_resolution", c.texture_resolution},
        {"encoder", encoder_name(c.encoder)},
        {"subdivision_rounds", c.subdivision_rounds},
        {"displacement_cap", c.displacement_cap},
        {"camera",
         {{"head_probability", c.camera.head_probability},
          {"body_polar", {c.camera.body_polar_min, c.camera.body_polar_max}},
          {"body_azimuth", {c.camera.body_azimuth_min, c.camera.body_azimuth_max}},
          {"head_polar", {c.camera.head_polar_min, c.camera.head_polar_max}},
          {"head_azimuth", {c.camera.head_azimuth_min, c.camera.head_azimuth_max}},
          {"body_fov", c.camera.body_fov},
          {"head_fov", c.camera.head_fov},
          {"fill", c.camera.fill}}},
        {"t_range", {c.t_min, c.t_max}},
        {"share_noise_draw", c.share_noise_draw},
        {"sample_body_pose", c.sample_body_pose},
        {"sample_expression", c.sample_expression},
        {"gallery", c.gallery},
        {"gallery_size", c.gallery_size},
        {"gallery_max_jaw", c.gallery_max_jaw},
        {"checkpoint_every", c.checkpoint_every},
        {"threads", c.threads},
        {"antialias", c.antialias},
        {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
    };
}

// Reads `doc` against the shape of `reference`: every key must exist there.
void check_keys(const json& doc, const json& reference, const std::string& path) {
    for (const auto& [key, value] : doc.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!reference.contains(key)) throw ConfigError("unknown config key '" + here + "'");
        if (value.is_object() && reference[key].is_object()) check_keys(value, reference[key], here);
    }
}

template <class T>
void read(const json& doc, const char* key, T& out) {
    if (!doc.contains(key)) return;
    try {
        out = doc[key].get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

void read_range(const json& doc, const char* key, double& lo, double& hi) {
    if (!doc.contains(key)) return;
    const json& a = doc[key];
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number() || a[0].get<double>() > a[1].get<double>())
        throw ConfigError(std::string("config key '") + key + "' must be an ordered [lo, hi] pair");
    lo = a[0].get<double>();
    hi = a[1].get<double>();
}

OptimConfig from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    OptimConfig c;
    check_keys(doc, to_json(c), "");
    read(doc, "lambda_tex", c.lambda_tex);
    read(doc, "lambda_c", c.lambda_c);
    read(doc, "iters", c.iters);
    if (doc.contains("resolution_schedule")) {
        const json& s = doc["resolution_schedule"];
        if (!s.is_array()) throw ConfigError("resolution_schedule must be a list of [iteration, resolution]");
        for (const json& p : s) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer())
                throw ConfigError("resolution_schedule entries must be [iteration, resolution]");
            c.resolution_schedule.push_back({p[0].get<int>(), p[1].get<int>()});
        }
    }
    read(doc, "consistency_resolution", c.consistency_resolution);
    read(doc, "alpha", c.alpha);
    if (doc.contains("alpha_end") && !doc["alpha_end"].is_null()) {
        double a = 0;
        read(doc, "alpha_end", a);
        c.alpha_end = a;
    }
    if (doc.contains("learning_rates")) {
        const json& lr = doc["learning_rates"];
        read(lr, "beta", c.learning_rates.beta);
        read(lr, "psi", c.learning_rates.psi);
        read(lr, "D", c.learning_rates.D);
        read(lr, "texture", c.learning_rates.texture);
    }
    if (doc.contains("prompts")) {
        read(doc["prompts"], "full_body", c.prompts.full_body);
        read(doc["prompts"], "head", c.prompts.head);
    }
    read(doc, "seed", c.seed);
    read(doc, "texture_resolution", c.texture_resolution);
    if (doc.contains("encoder")) {
        std::string e;
        read(doc, "encoder", e);
        c.encoder = parse_encoder(e);
    }
    read(doc, "subdivision_rounds", c.subdivision_rounds);
    read(doc, "displacement_cap", c.displacement_cap);
    if (doc.contains("camera")) {
        const json& cam = doc["camera"];
        read(cam, "head_probability", c.camera.head_probability);
        read_range(cam, "body_polar", c.camera.body_polar_min, c.camera.body_polar_max);
        read_range(cam, "body_azimuth", c.camera.body_azimuth_min, c.camera.body_azimuth_max);
        read_range(cam, "head_polar", c.camera.head_polar_min, c.camera.head_polar_max);
        read_range(cam, "head_azimuth", c.camera.head_azimuth_min, c.camera.head_azimuth_max);
        read(cam, "body_fov", c.camera.body_fov);
        read(cam, "head_fov", c.camera.head_fov);
        read(cam, "fill", c.camera.fill);
    }
    if (doc.contains("t_range")) {
        double lo = c.t_min, hi = c.t_max;
        read_range(doc, "t_range", lo, hi);
        c.t_min = static_cast<int>(lo);
        c.t_max = static_cast<int>(hi);
    }
    read(doc, "share_noise_draw", c.share_noise_draw);
    read(doc, "sample_body_pose", c.sample_body_pose);
    read(doc, "sample_expression", c.sample_expression);
    read(doc, "gallery", c.gallery);
    read(doc, "gallery_size", c.gallery_size);
    read(doc, "gallery_max_jaw", c.gallery_max_jaw);
    read(doc, "checkpoint_every", c.checkpoint_every);
    read(doc, "threads", c.threads);
    read(doc, "antialias", c.antialias);
    if (doc.contains("adam")) {
        read(doc["adam"], "beta1", c.adam_beta1);
        read(doc["adam"], "beta2", c.adam_beta2);
        read(doc["adam"], "eps", c.adam_eps);
    }
    c.validate();
    return c;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;  // bare strings need no quoting
    }
    json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        json& next = (*node)[parts[i]];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ConfigError("override path '" + path + "' crosses a non-object value");
        node = &next;
    }
    (*node)[parts.back()] = value;
}

}  // namespace

OptimConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json_text.empty() ? json::object() : json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : overrides) apply_override(doc, o);
    return from_json(doc);
}

OptimConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), overrides);
}

std::string config_to_json(const OptimConfig& config) { return to_json(config).dump(2); }

}  // namespace avatar_forge
