#pragma once

#include "avatar_forge/guidance.hpp"
#include "avatar_forge/renderer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace avatar_forge {

struct LearningRates {
    double beta = 1e-3;
    double psi = 1e-3;
    double D = 1e-3;
    double texture = 1e-2;
};

struct Prompts {
    std::string full_body = "a 3D rendering of a person, full body";
    std::string head = "a 3D rendering of the head of a person";
};

struct ResolutionPhase {
    int iteration = 0;
    int resolution = 32;
};

struct OptimConfig {
    double lambda_tex = 1.0;
    double lambda_c = 1.0;
    int iters = 5000;
    std::vector<ResolutionPhase> resolution_schedule;  // empty: 32..512 in five equal phases
    int consistency_resolution = 512;
    double alpha = 0.5;
    std::optional<double> alpha_end;  // linear anneal from alpha to alpha_end over the run
    LearningRates learning_rates;
    Prompts prompts;
    std::uint64_t seed = 0;

    int texture_resolution = 512;
    EncoderId encoder = EncoderId::pool8;
    int subdivision_rounds = 1;
    double displacement_cap = 0.1;
    CameraSamplerConfig camera;
    int t_min = 20;
    int t_max = 980;
    bool share_noise_draw = false;
    bool sample_body_pose = false;
    bool sample_expression = false;
    std::string gallery;  // animation sequence file; empty selects the built-in jaw gallery
    int gallery_size = 9;
    double gallery_max_jaw = 0.4;
    int checkpoint_every = 0;
    int threads = 1;
    bool antialias = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // Schedule with the default filled in for the current iters.
    std::vector<ResolutionPhase> schedule() const;
    int rgb_resolution(int iteration) const;
    double alpha_at(int iteration) const;
    void validate() const;
};

// Applies dotted-path overrides ("learning_rates.D=0.01") before parsing.
// Unknown keys and ill-typed values raise ConfigError.
OptimConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
OptimConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
// Resolved configuration, every field explicit.
std::string config_to_json(const OptimConfig& config);

}  // namespace avatar_forge
