#include "avatar_forge/assets.hpp"
#include "avatar_forge/editing_export.hpp"
#include "support/mock_guidance_server.hpp"
#include "support/test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace avatar_forge;
using namespace avatar_forge::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run cli(const std::string& args, const fs::path& scratch) {
    const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
    const std::string cmd = std::string("\"") + AVATAR_FORGE_CLI + "\" " + args + " >\"" + o.string() + "\" 2>\"" +
                            e.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(o), read_file(e)};
}

// Toy assets shared by the tests below, written once through the CLI itself.
const fs::path& toy_dir() {
    static const fs::path dir = [] {
        const fs::path d = temp_dir("cli_toy");
        const Run r = cli("make-toy-assets --out \"" + (d / "toy").string() + "\"", d);
        REQUIRE(r.code == 0);
        return d / "toy";
    }();
    return dir;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::string fast_generate(const fs::path& out) {
    const fs::path t = toy_dir();
    return "generate --assets " + q(t / "toy_model.avf") + " --config " + q(t / "toy_config.json") + " --target " +
           q(t / "reference.png") + " --set iters=6 --out " + q(out);
}

std::string log_without_time(const fs::path& p) {
    std::stringstream in(read_file(p)), out;
    std::string line;
    while (std::getline(in, line)) out << line.substr(0, line.rfind(',')) << '\n';
    return out.str();
}

}  // namespace

TEST_CASE("make-toy-assets writes a loadable bundle") {
    const fs::path t = toy_dir();
    for (const char* f : {"toy_model.avf", "reference_state.avf", "reference.png", "jaw_sweep.json", "toy_config.json",
                          "invocation.json"})
        CHECK(fs::exists(t / f));
    const TemplateModel m = load_model((t / "toy_model.avf").string());
    CHECK_NOTHROW(validate(m));
}

TEST_CASE("generate with analytic guidance populates the run directory") {
    const fs::path d = temp_dir("cli_generate");
    const Run r = cli(fast_generate(d / "run"), d);
    CHECK(r.code == 0);
    for (const char* f : {"config.json", "log.csv", "state.avf", "invocation.json", "checkpoints/ckpt_000006.avf",
                          "export/avatar.obj", "export/avatar.mtl", "export/avatar.png"})
        CHECK(fs::exists(d / "run" / f));
    std::ifstream log(d / "run" / "log.csv");
    int lines = 0;
    for (std::string l; std::getline(log, l);) ++lines;
    CHECK(lines == 7);
}

TEST_CASE("seeded generate is bit-reproducible") {
    const fs::path d = temp_dir("cli_repro");
    REQUIRE(cli(fast_generate(d / "a") + " --seed 9", d).code == 0);
    REQUIRE(cli(fast_generate(d / "b") + " --seed 9", d).code == 0);
    for (const char* f : {"state.avf", "config.json", "checkpoints/ckpt_000006.avf", "export/avatar.obj",
                          "export/avatar.png", "invocation.json"})
        CHECK(read_file(d / "a" / f) == read_file(d / "b" / f));
    CHECK(log_without_time(d / "a" / "log.csv") == log_without_time(d / "b" / "log.csv"));
}

TEST_CASE("resume continues from the latest checkpoint") {
    const fs::path d = temp_dir("cli_resume");
    REQUIRE(cli(fast_generate(d / "full") + " --set checkpoint_every=2", d).code == 0);
    REQUIRE(cli(fast_generate(d / "part") + " --set checkpoint_every=2 --set iters=4", d).code == 0);
    REQUIRE(cli(fast_generate(d / "part") + " --set checkpoint_every=2 --resume", d).code == 0);
    CHECK(read_file(d / "full" / "state.avf") == read_file(d / "part" / "state.avf"));
}

TEST_CASE("config errors exit 2 with a one-line diagnostic") {
    const fs::path d = temp_dir("cli_config");
    std::ofstream(d / "broken.json") << "{\"iters\": 5,";
    Run r = cli("generate --out " + q(d / "run") + " --config " + q(d / "broken.json"), d);
    CHECK(r.code == 2);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    r = cli(fast_generate(d / "run") + " --set learning_rate=1", d);
    CHECK(r.code == 2);
    CHECK(r.err.find("learning_rate") != std::string::npos);
    CHECK(cli("generate --out " + q(d / "x") + " --target " + q(d / "missing.png"), d).code == 2);
    CHECK(cli("generate --out " + q(d / "x") + " --no-such-flag", d).code == 2);
    CHECK(cli("", d).code == 2);
}

TEST_CASE("remote guidance: unreachable endpoint exits 3, mock service succeeds") {
    const fs::path d = temp_dir("cli_remote");
    const std::string args = "generate --guidance remote --set iters=2 --set texture_resolution=32 "
                             "--set consistency_resolution=32 --set resolution_schedule=[[0,32]] --set encoder=identity ";
    Run r = cli(args + "--endpoint http://127.0.0.1:9 --out " + q(d / "dead"), d);
    CHECK(r.code == 3);
    CHECK(r.err.find("127.0.0.1:9") != std::string::npos);

    MockGuidanceServer echo(MockMode::echo_eps);
    r = cli(args + "--endpoint " + echo.endpoint() + " --out " + q(d / "echo"), d);
    CHECK(r.code == 0);
    CHECK(echo.requests() == 4);
    // Echoed noise gives zero gradients, so the state stays at its initial value.
    const AvatarAssets assets = AvatarAssets::build(make_toy_body(0, 8), 1);
    CHECK(load_state((d / "echo" / "state.avf").string(), assets).fingerprint() ==
          AvatarState::initial(assets, 32).fingerprint());

    {
        MockGuidanceServer fallback(MockMode::zero);
        const std::string cmd = "AVATAR_FORGE_ENDPOINT=" + fallback.endpoint() + " \"" + AVATAR_FORGE_CLI + "\" " + args +
                                "--out " + q(d / "env") + " >/dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        CHECK(WEXITSTATUS(status) == 0);
        CHECK(fallback.requests() == 4);
    }
    CHECK(cli(args + "--out " + q(d / "none"), d).code == 2);
}

TEST_CASE("animate exports one bundle per frame, deterministically") {
    const fs::path d = temp_dir("cli_animate");
    const fs::path t = toy_dir();
    const std::string base = "animate --assets " + q(t / "toy_model.avf") + " --state " + q(t / "reference_state.avf") +
                             " --sequence " + q(t / "jaw_sweep.json");
    REQUIRE(cli(base + " --out " + q(d / "a"), d).code == 0);
    REQUIRE(cli(base + " --out " + q(d / "b"), d).code == 0);
    int frames = 0;
    for (const auto& e : fs::directory_iterator(d / "a"))
        if (e.path().extension() == ".obj") {
            ++frames;
            CHECK(read_file(e.path()) == read_file(d / "b" / e.path().filename()));
        }
    CHECK(frames == 10);

    std::ofstream(d / "bad.json") << R"({"frames": [{"body_pose": [[0, 0, 0]]}]})";
    const Run r = cli("animate --assets " + q(t / "toy_model.avf") + " --state " + q(t / "reference_state.avf") +
                          " --sequence " + q(d / "bad.json") + " --out " + q(d / "c"),
                      d);
    CHECK(r.code == 2);
}

TEST_CASE("edit swaps a part and rejects unknown labels") {
    const fs::path d = temp_dir("cli_edit");
    const fs::path t = toy_dir();
    const AvatarAssets assets = AvatarAssets::build(load_model((t / "toy_model.avf").string()), 1);
    save_state(AvatarState::initial(assets, 64), assets, (d / "gray.avf").string());
    const std::string base = "edit --assets " + q(t / "toy_model.avf") + " --state " + q(d / "gray.avf") + " --donor " +
                             q(t / "reference_state.avf");
    REQUIRE(cli(base + " --part head --out " + q(d / "out"), d).code == 0);
    const AvatarState edited = load_state((d / "out" / "state.avf").string(), assets);
    const AvatarState expected = part_swap(AvatarState::initial(assets, 64), load_state((t / "reference_state.avf").string(), assets),
                                           PartLabel::head, assets);
    CHECK(edited.fingerprint() == expected.fingerprint());
    CHECK(fs::exists(d / "out" / "export" / "avatar.obj"));
    CHECK(cli(base + " --part tail --out " + q(d / "bad"), d).code == 2);
}

TEST_CASE("render writes RGB and normal images") {
    const fs::path d = temp_dir("cli_render");
    const fs::path t = toy_dir();
    REQUIRE(cli("render --assets " + q(t / "toy_model.avf") + " --state " + q(t / "reference_state.avf") +
                    " --resolution 48 --head --out " + q(d / "img"),
                d)
                .code == 0);
    const Image rgb = read_png((d / "img" / "rgb.png").string());
    CHECK(rgb.width == 48);
    CHECK(fs::exists(d / "img" / "normal.png"));
}

TEST_CASE("check passes on pristine assets, names corruption, honours --only") {
    const fs::path d = temp_dir("cli_check");
    const fs::path t = toy_dir();
    Run r = cli("check --assets " + q(t / "toy_model.avf"), d);
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("renderer.vertex_gradients") != std::string::npos);

    TemplateModel m = load_model((t / "toy_model.avf").string());
    m.skin_weights.row(3) *= 1.7;
    save_model(m, (d / "corrupt.avf").string());
    r = cli("check --assets " + q(d / "corrupt.avf") + " --only assets lbs", d);
    CHECK(r.code == 1);
    CHECK(r.err.find("assets.invariants") != std::string::npos);
    CHECK(r.err.find("lbs.rigid_equivariance") != std::string::npos);

    r = cli("check --assets " + q(t / "toy_model.avf") + " --only lbs", d);
    CHECK(r.code == 0);
    CHECK(r.out.find("lbs.identity") != std::string::npos);
    CHECK(r.out.find("renderer.") == std::string::npos);
    CHECK(r.out.find("assets.") == std::string::npos);
    CHECK(cli("check --only physics", d).code == 2);
}
