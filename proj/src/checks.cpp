#include "avatar_forge/checks.hpp"

#include "avatar_forge/guidance.hpp"
#include "avatar_forge/renderer.hpp"
#include "avatar_forge/subdivision.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

namespace avatar_forge {

namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(const std::string& name, double threshold, const std::function<void(CheckResult&)>& body) {
    CheckResult r;
    r.name = name;
    r.threshold = threshold;
    const auto t0 = Clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

Vector flat(const PointCloud& p) { return Eigen::Map<const Vector>(p.data(), p.size()); }
PointCloud unflat(const Vector& v) { return Eigen::Map<const PointCloud>(v.data(), v.size() / 3, 3); }

PointCloud random_cloud(Rng& rng, Index n, double scale) {
    PointCloud p(n, 3);
    for (Index i = 0; i < p.size(); ++i) p.data()[i] = scale * rng.uniform(-1.0, 1.0);
    return p;
}

Vector random_vec(Rng& rng, Index n, double scale) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = scale * rng.uniform(-1.0, 1.0);
    return v;
}

BodyParams random_body(Rng& rng, const TemplateModel& m) {
    BodyParams p = BodyParams::zero(m);
    p.beta = random_vec(rng, m.n_shape(), 1.0);
    p.psi = random_vec(rng, m.n_expr(), 1.0);
    p.theta.body_pose = random_cloud(rng, m.n_joints() - 1, 0.5);
    p.theta.root_orient = random_vec(rng, 3, 0.5);
    p.theta.root_transl = random_vec(rng, 3, 0.3);
    return p;
}

double rel_error(const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

Vector central(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    Vector xp = x;
    for (Index i = 0; i < x.size(); ++i) {
        xp(i) = x(i) + h;
        const double fp = f(xp);
        xp(i) = x(i) - h;
        const double fm = f(xp);
        xp(i) = x(i);
        g(i) = (fp - fm) / (2 * h);
    }
    return g;
}

char buf[256];

std::string fmt(const char* f, double a, double b = 0) {
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

TextureMap smooth_texture(int size) {
    TextureMap t = TextureMap::constant(size, Vec3::Zero());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size, v = (y + 0.5) / size;
            t.texels.row(t.index(x, y)) << 0.5 + 0.4 * std::sin(6 * u + 0.4), 0.5 + 0.4 * std::cos(5 * v),
                0.5 + 0.3 * std::sin(4 * (u + v));
        }
    return t;
}

Image random_image(Rng& rng, int w, int h) {
    Image img(w, h);
    for (Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = rng.uniform(-1.0, 1.0);
    return img;
}

Mat3 rotation_matrix(const Vec3& r) {
    const double a = r.norm();
    if (a == 0) return Mat3::Identity();
    return Eigen::AngleAxisd(a, r / a).toRotationMatrix();
}

double contract(const Image& a, const Image& g) { return (a.pixels.array() * g.pixels.array()).sum(); }

std::vector<bool> head_mask(const TemplateModel& m) {
    std::vector<bool> h(static_cast<size_t>(m.n_verts()));
    for (size_t i = 0; i < h.size(); ++i) h[i] = is_head_region(m.part_labels[i]);
    return h;
}

}  // namespace

CheckResult check_assets(const TemplateModel& model) {
    return timed("assets.invariants", 0, [&](CheckResult& r) {
        validate(model);
        r.passed = true;
        r.detail = std::to_string(model.n_verts()) + " vertices, " + std::to_string(model.n_joints()) + " joints";
    });
}

CheckResult check_lbs_identity(const TemplateModel& model) {
    return timed("lbs.identity", 0, [&](CheckResult& r) {
        const PosedMesh posed = lbs_forward(model, BodyParams::zero(model));
        r.value = (posed.vertices - model.vertices).cwiseAbs().maxCoeff();
        r.passed = posed.vertices == model.vertices;
        r.detail = r.passed ? "bit-exact" : fmt("max deviation %.3g", r.value);
    });
}

CheckResult check_lbs_rigid(const TemplateModel& model, std::uint64_t seed, int trials) {
    return timed("lbs.rigid_equivariance", 1e-9, [&](CheckResult& r) {
        Rng rng(seed);
        double worst = 0;
        for (int trial = 0; trial < trials; ++trial) {
            BodyParams p = random_body(rng, model);
            p.theta.root_orient.setZero();
            p.theta.root_transl.setZero();
            const PosedMesh base = lbs_forward(model, p);
            const Vec3 root = base.joints_world.row(0).transpose();
            BodyParams q = p;
            q.theta.root_orient = random_vec(rng, 3, 2.0);
            q.theta.root_transl = random_vec(rng, 3, 1.0);
            const Mat3 R = rotation_matrix(q.theta.root_orient);
            const PosedMesh moved = lbs_forward(model, q);
            for (Index v = 0; v < model.n_verts(); ++v) {
                const Vec3 e = R * (Vec3(base.vertices.row(v)) - root) + root + q.theta.root_transl;
                worst = std::max(worst, (Vec3(moved.vertices.row(v)) - e).norm());
            }
        }
        r.value = worst;
        r.passed = worst < r.threshold;
        r.detail = fmt("max error %.3g over %g transforms", worst, trials);
    });
}

CheckResult check_lbs_backward(const TemplateModel& model, std::uint64_t seed, int trials) {
    return timed("lbs.backward", 1e-6, [&](CheckResult& r) {
        const SubdividedModel sub = subdivide_partial(model, 1);
        Rng rng(seed);
        const double h = 1e-5;
        double worst = 0;
        std::string worst_block;
        for (int trial = 0; trial < trials; ++trial) {
            const BodyParams p = random_body(rng, model);
            const DisplacementLayer d{random_cloud(rng, sub.n_verts(), 0.02)};
            const PointCloud G = random_cloud(rng, sub.n_verts(), 1.0);
            const BodyGrad g = lbs_backward(posed_avatar(sub, d, p).tape, G);
            auto loss = [&](const BodyParams& q, const DisplacementLayer& dd) {
                return (posed_avatar(sub, dd, q).vertices.array() * G.array()).sum();
            };
            auto note = [&](const char* block, double e) {
                if (e > worst) worst = e, worst_block = block;
            };
            note("beta", rel_error(g.beta, central([&](const Vector& x) { BodyParams q = p; q.beta = x; return loss(q, d); }, p.beta, h)));
            note("psi", rel_error(g.psi, central([&](const Vector& x) { BodyParams q = p; q.psi = x; return loss(q, d); }, p.psi, h)));
            note("body_pose", rel_error(flat(g.body_pose), central([&](const Vector& x) {
                                            BodyParams q = p;
                                            q.theta.body_pose = unflat(x);
                                            return loss(q, d);
                                        }, flat(p.theta.body_pose), h)));
            note("root_orient", rel_error(g.root_orient, central([&](const Vector& x) {
                                              BodyParams q = p;
                                              q.theta.root_orient = x;
                                              return loss(q, d);
                                          }, p.theta.root_orient, h)));
            note("root_transl", rel_error(g.root_transl, central([&](const Vector& x) {
                                              BodyParams q = p;
                                              q.theta.root_transl = x;
                                              return loss(q, d);
                                          }, p.theta.root_transl, h)));
            Vector a(60), n(60);
            for (int k = 0; k < 60; ++k) {
                const Index v = rng.uniform_int(0, static_cast<int>(sub.n_verts()) - 1);
                const int c = rng.uniform_int(0, 2);
                DisplacementLayer dp = d, dm = d;
                dp.d(v, c) += h;
                dm.d(v, c) -= h;
                n(k) = (loss(p, dp) - loss(p, dm)) / (2 * h);
                a(k) = g.displacement(v, c);
            }
            note("D", rel_error(a, n));
        }
        r.value = worst;
        r.passed = worst < r.threshold;
        r.detail = fmt("max relative error %.3g", worst) + " (" + worst_block + ")";
    });
}

CheckResult check_subdivision(const TemplateModel& model, std::uint64_t seed) {
    return timed("subdivision.contract", 1e-12, [&](CheckResult& r) {
        const SubdividedModel s = subdivide_partial(model, 1);
        std::vector<int> children(static_cast<size_t>(model.n_faces()), 0);
        for (int o : s.face_origin) ++children[size_t(o)];
        for (Index f = 0; f < model.n_faces(); ++f)
            if (model.subdivision_mask[size_t(f)] && children[size_t(f)] != 4)
                throw InvariantError("masked face " + std::to_string(f) + " has " + std::to_string(children[size_t(f)]) +
                                     " children");
        double weight_err = 0, mean_err = 0;
        for (Index v = 0; v < s.n_verts(); ++v) {
            const VertexParent& pm = s.parent_map[size_t(v)];
            weight_err = std::max(weight_err, std::abs(s.skin_weights_up.row(v).sum() - 1.0));
            if (pm.a == pm.b) continue;
            const auto mean_w = 0.5 * (s.skin_weights_up.row(pm.a) + s.skin_weights_up.row(pm.b));
            const auto mean_p = 0.5 * (s.vertices_rest.row(pm.a) + s.vertices_rest.row(pm.b));
            mean_err = std::max({mean_err, (s.skin_weights_up.row(v) - mean_w).cwiseAbs().maxCoeff(),
                                 (s.vertices_rest.row(v) - mean_p).cwiseAbs().maxCoeff()});
        }
        if (weight_err > 1e-9) throw InvariantError(fmt("skin weight rows sum to 1 +- %.3g", weight_err));
        if (mean_err > 1e-12) throw InvariantError(fmt("midpoint attributes deviate from endpoint means by %.3g", mean_err));
        Rng rng(seed);
        double worst = 0;
        int tested = 0, guard = 0;
        while (tested < 100 && guard++ < 100000) {
            const int f = rng.uniform_int(0, static_cast<int>(model.n_faces()) - 1);
            if (!model.subdivision_mask[size_t(f)]) continue;
            double u = rng.uniform(), w = rng.uniform();
            if (u + w > 1) u = 1 - u, w = 1 - w;
            const Vec3 bary(1 - u - w, u, w);
            Vec3 p_base = Vec3::Zero(), p_sub = Vec3::Zero(), cb;
            for (int k = 0; k < 3; ++k) p_base += bary(k) * Vec3(model.vertices.row(model.faces(f, k)));
            const int child = locate_in_refinement(s, f, bary, cb);
            if (child < 0) throw InvariantError("sample point not found in refinement");
            for (int k = 0; k < 3; ++k) p_sub += cb(k) * Vec3(s.vertices_rest.row(s.faces(child, k)));
            worst = std::max(worst, (p_sub - p_base).norm());
            ++tested;
        }
        if (tested < 100) throw InvariantError("model has no subdivision-masked faces");
        r.value = worst;
        r.passed = worst < r.threshold;
        r.detail = fmt("geometry drift %.3g at 100 samples; weight rows within %.3g", worst, weight_err);
    });
}

CheckResult check_texel_gradients(const TemplateModel& model, std::uint64_t seed) {
    return timed("renderer.texel_gradients", 1e-10, [&](CheckResult& r) {
        Rng rng(seed);
        const TextureMap tex = smooth_texture(16);
        const CameraSpec cam = frame_bounds(bounds_of(model.vertices), 80.0, 20.0, 45.0, 0.85, 32);
        const SurfaceMesh mesh{model.vertices, model.faces, model.uv_coords};
        const RenderOutput out = render(mesh, tex, cam);
        const Image w = random_image(rng, 32, 32);
        const RenderGrad g = render_backward(out.tape, &w, nullptr, {true, false});
        const Vector fd = central(
            [&](const Vector& x) {
                TextureMap t = tex;
                t.texels = unflat(x);
                return contract(render(mesh, t, cam).rgb, w);
            },
            flat(tex.texels), 1e-3);
        if (g.texture.cwiseAbs().sum() == 0) throw InvariantError("no texel receives gradient");
        r.value = rel_error(flat(g.texture), fd);
        r.passed = r.value < r.threshold;
        r.detail = fmt("relative error %.3g", r.value);
    });
}

CheckResult check_vertex_gradients(const TemplateModel& model, std::uint64_t seed) {
    return timed("renderer.vertex_gradients", 1e-3, [&](CheckResult& r) {
        Rng rng(seed);
        const TextureMap tex = smooth_texture(64);
        const CameraSpec cam = frame_bounds(bounds_of(model.vertices), 80.0, -35.0, 45.0, 0.85, 48);
        const PointCloud v0 = model.vertices;
        auto mesh = [&](const PointCloud& v) { return SurfaceMesh{v, model.faces, model.uv_coords}; };
        auto footprint = [](const RenderOutput& o, size_t p) {
            return o.tape.texture->footprint(o.tape.pixel_uv(Index(p), 0), o.tape.pixel_uv(Index(p), 1));
        };
        const RenderOutput out = render(mesh(v0), tex, cam);
        const Image wr = random_image(rng, 48, 48), wn = random_image(rng, 48, 48);
        const double h = 1e-4;
        Vector analytic(40), numeric(40);
        int tested = 0, guard = 0;
        while (tested < 40 && guard++ < 4000) {
            const Index vi = Index(rng.uniform_int(0, int(v0.rows()) - 1));
            const int c = rng.uniform_int(0, 2);
            PointCloud vp = v0, vm = v0;
            vp(vi, c) += h;
            vm(vi, c) -= h;
            const RenderOutput op = render(mesh(vp), tex, cam), om = render(mesh(vm), tex, cam);
            Image mr = wr, mn = wn;
            for (size_t p = 0; p < out.tape.face_id.size(); ++p) {
                bool same = op.tape.face_id[p] == out.tape.face_id[p] && om.tape.face_id[p] == out.tape.face_id[p];
                if (same && out.mask[p]) same = footprint(op, p) == footprint(out, p) && footprint(om, p) == footprint(out, p);
                if (!same) {
                    mr.pixels.row(Index(p)).setZero();
                    mn.pixels.row(Index(p)).setZero();
                }
            }
            const RenderGrad g = render_backward(out.tape, &mr, &mn, {false, true});
            const double a = g.vertices(vi, c);
            const double n =
                (contract(op.rgb, mr) + contract(op.normal, mn) - contract(om.rgb, mr) - contract(om.normal, mn)) / (2 * h);
            if (std::abs(a) < 1e-6 && std::abs(n) < 1e-6) continue;
            analytic(tested) = a;
            numeric(tested) = n;
            ++tested;
        }
        if (tested < 40) throw InvariantError("too few visible vertices");
        r.value = rel_error(analytic, numeric);
        r.passed = r.value < r.threshold;
        r.detail = fmt("relative error %.3g over %g stable-pixel vertex coordinates", r.value, tested);
    });
}

CheckResult check_camera_sampler(const TemplateModel& model, std::uint64_t seed, int samples) {
    return timed("camera.sampler", 0, [&](CheckResult& r) {
        const Aabb body = bounds_of(model.vertices), head = bounds_of(model.vertices, head_mask(model));
        const CameraSamplerConfig config;
        Rng rng(seed);
        int heads = 0, out_of_range = 0;
        for (int i = 0; i < samples; ++i) {
            const CameraSample c = sample_camera(rng, config, body, head);
            const double p = c.camera.polar, a = c.camera.azimuth;
            if (c.mode == ViewMode::head) {
                ++heads;
                out_of_range += !(p >= 75 && p <= 85 && a >= -30 && a <= 30);
            } else {
                out_of_range += !(p >= 60 && p <= 90 && a >= -180 && a <= 180);
            }
        }
        r.value = double(heads) / samples;
        r.passed = r.value >= 0.28 && r.value <= 0.32 && out_of_range == 0;
        r.detail = fmt("head frequency %.4f, %g samples out of range", r.value, out_of_range);
    });
}

CheckResult check_oracle_equivalence(std::uint64_t seed, int draws) {
    return timed("guidance.oracle_equivalence", 0.05, [&](CheckResult& r) {
        const DiffusionSchedule s = DiffusionSchedule::linear();
        Rng rng(seed);
        Image img(8, 8), target(8, 8);
        for (Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = rng.uniform();
        for (Index i = 0; i < target.pixels.size(); ++i) target.pixels.data()[i] = rng.uniform();
        const LatentImage zt = encode(target, EncoderId::identity);
        AnalyticOracle oracle(s, zt);
        LatentImage diff = encode(img, EncoderId::identity);
        diff.data -= zt.data;
        const PointCloud closed = encode_adjoint(diff).pixels;
        double worst = 0;
        std::string detail;
        for (int t : {100, 500, 900}) {
            PointCloud mean = PointCloud::Zero(closed.rows(), 3);
            for (int k = 0; k < draws; ++k) {
                NoiseDraw d = draw_noise(s, rng, diff.size(), t, t);
                mean += sds_texture_grad(s, oracle, img, EncoderId::identity, "", d, 0).grad.pixels;
            }
            mean /= double(draws);
            const double e = (mean - closed).norm() / closed.norm();
            worst = std::max(worst, e);
            detail += fmt("t=%g: %.3g  ", t, e);
        }
        r.value = worst;
        r.passed = worst < r.threshold;
        r.detail = detail;
    });
}

CheckResult check_consistency_contracts(std::uint64_t seed) {
    return timed("guidance.consistency", 0, [&](CheckResult& r) {
        struct Offset final : GuidanceProvider {
            Vector offset;
            Vector predict_noise(const GuidanceRequest& q) override { return *q.eps + offset; }
        } p;
        const DiffusionSchedule s = DiffusionSchedule::linear();
        Rng rng(seed);
        Image rgb(16, 16), nrm(16, 16);
        for (Index i = 0; i < rgb.pixels.size(); ++i) rgb.pixels.data()[i] = rng.uniform();
        for (Index i = 0; i < nrm.pixels.size(); ++i) nrm.pixels.data()[i] = rng.uniform();
        p.offset.resize(rgb.pixels.size());
        for (Index i = 0; i < p.offset.size(); ++i) p.offset(i) = rng.normal();
        const LatentImage zi = encode(rgb, EncoderId::identity), zn = encode(nrm, EncoderId::identity);
        const NoiseDraw draw = draw_noise(s, rng, zn.size(), 20, 980);
        const ConsistencyResult c0 = sds_consistency_grad(s, p, zi, zn, 0.0, "", draw, 1);
        const SdsResult plain = sds_texture_grad(s, p, nrm, EncoderId::identity, "", draw, 1);
        const bool a0 = c0.grad_normal.pixels == plain.grad.pixels;
        const bool a1 = sds_consistency_grad(s, p, zi, zn, 1.0, "", draw, 1).grad_normal.pixels.isZero(0);
        bool detached = true;
        for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0})
            detached &= sds_consistency_grad(s, p, zi, zn, alpha, "", rng).grad_rgb_latent.data.isZero(0);
        r.passed = a0 && a1 && detached;
        r.value = r.passed ? 0 : 1;
        r.detail = std::string("alpha=0 equals normal SDS: ") + (a0 ? "yes" : "no") +
                   "; alpha=1 zero: " + (a1 ? "yes" : "no") + "; RGB branch zero: " + (detached ? "yes" : "no");
    });
}

std::vector<std::string> check_suites() { return {"assets", "lbs", "subdivision", "renderer", "camera", "guidance"}; }

std::vector<CheckResult> run_checks(const TemplateModel& model, const std::vector<std::string>& only,
                                    std::uint64_t seed) {
    const auto suites = check_suites();
    for (const auto& s : only)
        if (std::find(suites.begin(), suites.end(), s) == suites.end())
            throw ConfigError("unknown check suite '" + s + "'");
    auto want = [&](const char* s) { return only.empty() || std::find(only.begin(), only.end(), s) != only.end(); };
    std::vector<CheckResult> out;
    if (want("assets")) out.push_back(check_assets(model));
    if (want("lbs")) {
        out.push_back(check_lbs_identity(model));
        out.push_back(check_lbs_rigid(model, seed + 1));
        out.push_back(check_lbs_backward(model, seed + 2));
    }
    if (want("subdivision")) out.push_back(check_subdivision(model, seed + 3));
    if (want("renderer")) {
        out.push_back(check_texel_gradients(model, seed + 4));
        out.push_back(check_vertex_gradients(model, seed + 5));
    }
    if (want("camera")) out.push_back(check_camera_sampler(model, seed + 6));
    if (want("guidance")) {
        out.push_back(check_oracle_equivalence(seed + 7));
        out.push_back(check_consistency_contracts(seed + 8));
    }
    return out;
}

std::string format_check_table(const std::vector<CheckResult>& results) {
    size_t width = 5;
    for (const auto& r : results) width = std::max(width, r.name.size());
    std::ostringstream os;
    char line[512];
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%-4s  %-*s  %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", int(width),
                      r.name.c_str(), r.seconds, r.detail.c_str());
        os << line;
    }
    return os.str();
}

}  // namespace avatar_forge
