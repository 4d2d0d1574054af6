#pragma once

#include "avatar_forge/assets.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace avatar_forge {

struct CheckResult {
    std::string name;  // "<suite>.<check>"
    bool passed = false;
    double value = 0;       // measured error, frequency or count
    double threshold = 0;
    std::string detail;
    double seconds = 0;
};

// Gradient checks and invariants over one template model. Suites: assets,
// lbs, subdivision, renderer, camera, guidance.
CheckResult check_assets(const TemplateModel& model);
CheckResult check_lbs_identity(const TemplateModel& model);
CheckResult check_lbs_rigid(const TemplateModel& model, std::uint64_t seed, int trials = 20);
CheckResult check_lbs_backward(const TemplateModel& model, std::uint64_t seed, int trials = 20);
CheckResult check_subdivision(const TemplateModel& model, std::uint64_t seed);
CheckResult check_texel_gradients(const TemplateModel& model, std::uint64_t seed);
CheckResult check_vertex_gradients(const TemplateModel& model, std::uint64_t seed);
CheckResult check_camera_sampler(const TemplateModel& model, std::uint64_t seed, int samples = 10000);
CheckResult check_oracle_equivalence(std::uint64_t seed, int draws = 1000);
CheckResult check_consistency_contracts(std::uint64_t seed);

std::vector<std::string> check_suites();
// Runs every check whose suite is listed in `only` (all when empty); throws
// ConfigError for an unknown suite name.
std::vector<CheckResult> run_checks(const TemplateModel& model, const std::vector<std::string>& only = {},
                                    std::uint64_t seed = 0);

std::string format_check_table(const std::vector<CheckResult>& results);

}  // namespace avatar_forge
