#include "avatar_forge/animation.hpp"
#include "avatar_forge/assets.hpp"
#include "support/test_support.hpp"

#include <doctest.h>

using namespace avatar_forge;

namespace {

const TemplateModel& toy() {
    static const TemplateModel m = make_toy_body(0, 8);
    return m;
}

}  // namespace

TEST_CASE("missing fields default to zero") {
    const auto seq = parse_sequence(R"({"fps": 24, "frames": [{}, {"root_transl": [0, 1, 0]}]})", toy());
    CHECK(seq.fps == 24);
    REQUIRE(seq.size() == 2);
    CHECK(seq.frames[0].pose.body_pose.isZero(0));
    CHECK(seq.frames[0].psi.size() == 0);
    CHECK(seq.frames[1].pose.root_transl.y() == 1);
}

TEST_CASE("joint count and expression size are checked") {
    CHECK_THROWS_AS(parse_sequence(R"({"frames": [{"body_pose": [[0, 0, 0]]}]})", toy()), DimensionError);
    CHECK_THROWS_AS(parse_sequence(R"({"frames": [{"psi": [1]}]})", toy()), DimensionError);
    CHECK_THROWS_AS(parse_sequence(R"({"frames": [{"root_orient": [1, 2]}]})", toy()), DimensionError);
    CHECK_THROWS_AS(parse_sequence("[]", toy()), ParseError);
    CHECK_THROWS_AS(parse_sequence("{", toy()), ParseError);
    CHECK_THROWS_AS(load_sequence("/nonexistent/seq.json", toy()), IoError);
}

TEST_CASE("sequence JSON round trips") {
    AnimationSequence seq = jaw_sweep(toy(), 5, 0.4);
    seq.frames[2].psi = Vector::Constant(toy().n_expr(), 0.25);
    seq.frames[3].pose.root_orient = Vec3(0.1, -0.2, 0.3);
    const auto back = parse_sequence(sequence_to_json(seq), toy());
    REQUIRE(back.size() == seq.size());
    for (size_t i = 0; i < seq.size(); ++i) {
        CHECK(back.frames[i].pose.body_pose == seq.frames[i].pose.body_pose);
        CHECK(back.frames[i].pose.root_orient == seq.frames[i].pose.root_orient);
        CHECK(back.frames[i].psi.size() == seq.frames[i].psi.size());
    }
    CHECK(back.frames[2].psi == seq.frames[2].psi);
}

TEST_CASE("jaw gallery sweeps only the jaw joint") {
    const auto g = AnimationGallery::jaw_poses(toy(), 9, 0.4);
    g.validate(toy());
    REQUIRE(g.size() == 9);
    const int jaw = jaw_joint_index(toy());
    CHECK(g.frames.front().pose.body_pose.isZero(0));
    CHECK(g.frames.back().pose.body_pose(jaw - 1, 0) == doctest::Approx(0.4));
    for (const auto& f : g.frames) {
        PointCloud other = f.pose.body_pose;
        other.row(jaw - 1).setZero();
        CHECK(other.isZero(0));
    }
}

TEST_CASE("gallery validation") {
    AnimationGallery empty;
    CHECK_THROWS_AS(empty.validate(toy()), ConfigError);
    auto g = AnimationGallery::jaw_poses(toy(), 3, 0.4);
    g.frames[1].pose.root_transl(0) = std::nan("");
    CHECK_THROWS_AS(g.validate(toy()), NonFiniteError);
}
