#include "avatar_forge/checks.hpp"

#include <doctest.h>

using namespace avatar_forge;

TEST_CASE("all checks pass on the toy body") {
    const auto results = run_checks(make_toy_body(0, 6));
    CHECK(results.size() == 10);
    for (const auto& r : results) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.passed);
    }
}

TEST_CASE("suite filter and unknown suites") {
    const auto results = run_checks(make_toy_body(0, 6), {"subdivision", "camera"});
    REQUIRE(results.size() == 2);
    CHECK(results[0].name == "subdivision.contract");
    CHECK(results[1].name == "camera.sampler");
    CHECK_THROWS_AS(run_checks(make_toy_body(0, 6), {"nope"}), ConfigError);
}

TEST_CASE("corrupted skin weights are reported by name rather than thrown") {
    TemplateModel m = make_toy_body(0, 6);
    m.skin_weights.row(0) *= 2.0;
    const auto results = run_checks(m, {"assets", "lbs"});
    REQUIRE(results.size() == 4);
    CHECK_FALSE(results[0].passed);
    CHECK(results[0].detail.find("skin_weights") != std::string::npos);
    CHECK_FALSE(results[2].passed);
}

TEST_CASE("non-masked model fails the subdivision contract by name") {
    TemplateModel m = make_toy_body(0, 6);
    std::fill(m.subdivision_mask.begin(), m.subdivision_mask.end(), false);
    const auto r = check_subdivision(m, 0);
    CHECK_FALSE(r.passed);
    CHECK(r.detail.find("no subdivision-masked faces") != std::string::npos);
}

TEST_CASE("table lists one line per check") {
    std::vector<CheckResult> rs(2);
    rs[0].name = "a.b";
    rs[0].passed = true;
    rs[1].name = "c.d";
    const std::string t = format_check_table(rs);
    CHECK(t.find("PASS  a.b") != std::string::npos);
    CHECK(t.find("FAIL  c.d") != std::string::npos);
}
