#include "avatar_forge/renderer.hpp"

#include "avatar_forge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

namespace avatar_forge {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Projected {
    PointCloud cam;     // camera-space coordinates
    PointCloud2D screen;
    std::vector<bool> in_front;
};

Projected project(const CameraFrame& frame, const PointCloud& vertices, double near) {
    Projected p;
    const Index n = vertices.rows();
    p.cam.resize(n, 3);
    p.screen.resize(n, 2);
    p.in_front.assign(static_cast<size_t>(n), false);
    for (Index v = 0; v < n; ++v) {
        const Vec3 c = frame.to_camera(vertices.row(v).transpose());
        p.cam.row(v) = c.transpose();
        p.in_front[static_cast<size_t>(v)] = c.z() > near;
        if (c.z() > near) p.screen.row(v) << frame.cx + frame.focal * c.x() / c.z(), frame.cy - frame.focal * c.y() / c.z();
        else p.screen.row(v).setZero();
    }
    return p;
}

bool face_in_front(const Projected& p, const Triangles& faces, Index f) {
    for (int k = 0; k < 3; ++k)
        if (!p.in_front[static_cast<size_t>(faces(f, k))]) return false;
    return true;
}

// Ray/triangle intersection; returns false for misses and edge-on triangles.
bool intersect(const Vec3& origin, const Vec3& dir, const Vec3& p0, const Vec3& p1, const Vec3& p2, double& b1,
               double& b2, double& s) {
    const Vec3 e1 = p1 - p0, e2 = p2 - p0;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < 1e-300) return false;
    const double inv = 1.0 / det;
    const Vec3 tvec = origin - p0;
    b1 = tvec.dot(pvec) * inv;
    if (b1 < 0 || b1 > 1) return false;
    const Vec3 qvec = tvec.cross(e1);
    b2 = dir.dot(qvec) * inv;
    if (b2 < 0 || b1 + b2 > 1) return false;
    s = e2.dot(qvec) * inv;
    return true;
}

Vec3 row3(const PointCloud& m, Index i) { return m.row(i).transpose(); }

std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
}

// d(screen)/d(world) for a vertex in front of the camera: rows are (px, py).
Eigen::Matrix<double, 2, 3> screen_jacobian(const CameraFrame& frame, const Vec3& c) {
    Eigen::Matrix<double, 2, 3> J;
    const double iz = 1.0 / c.z();
    J.row(0) = frame.focal * (frame.right * iz - frame.forward * (c.x() * iz * iz)).transpose();
    J.row(1) = -frame.focal * (frame.up * iz - frame.forward * (c.y() * iz * iz)).transpose();
    return J;
}

// Crossing of the edge (a, b) with the pixel-center line through the pair;
// returns the coordinate along the pair axis, or NaN when the edge misses it.
double edge_crossing(const Eigen::Vector2d& a, const Eigen::Vector2d& b, bool horizontal, double line, double* t_out) {
    const int along = horizontal ? 0 : 1, across = horizontal ? 1 : 0;
    const double da = a(across) - line, db = b(across) - line;
    if (!(da * db < 0)) return std::numeric_limits<double>::quiet_NaN();
    const double t = da / (da - db);
    if (t_out) *t_out = t;
    return a(along) + t * (b(along) - a(along));
}

}  // namespace

Aabb bounds_of(const PointCloud& points) {
    if (points.rows() == 0) throw DimensionError("bounds of an empty point set");
    return {points.colwise().minCoeff().transpose(), points.colwise().maxCoeff().transpose()};
}

Aabb bounds_of(const PointCloud& points, const std::vector<bool>& select) {
    if (select.size() != static_cast<size_t>(points.rows())) throw DimensionError("bounds selection size mismatch");
    Aabb box{Vec3::Constant(kInf), Vec3::Constant(-kInf)};
    bool any = false;
    for (Index i = 0; i < points.rows(); ++i) {
        if (!select[static_cast<size_t>(i)]) continue;
        box.min = box.min.cwiseMin(row3(points, i));
        box.max = box.max.cwiseMax(row3(points, i));
        any = true;
    }
    if (!any) throw DimensionError("bounds selection is empty");
    return box;
}

void CameraSpec::validate() const {
    if (!(polar > 0 && polar < 180)) throw ConfigError("camera polar angle must lie in (0, 180)");
    if (!(fov_y > 10 && fov_y < 120)) throw ConfigError("camera fov_y must lie in (10, 120)");
    if (width < 8 || height < 8) throw ConfigError("camera resolution must be at least 8x8");
    if (!std::isfinite(radius) || !std::isfinite(azimuth) || !all_finite(look_at))
        throw ConfigError("camera parameters must be finite");
}

Vec3 CameraSpec::eye() const {
    const double th = polar * kDeg, ph = azimuth * kDeg;
    return look_at + radius * Vec3(std::sin(th) * std::sin(ph), std::cos(th), std::sin(th) * std::cos(ph));
}

CameraFrame CameraFrame::from(const CameraSpec& cam) {
    cam.validate();
    CameraFrame f;
    f.eye = cam.eye();
    const Vec3 dir = cam.look_at - f.eye;
    if (dir.norm() < 1e-12) throw DegenerateCameraError("camera eye coincides with look_at");
    f.forward = dir.normalized();
    const Vec3 right = f.forward.cross(Vec3::UnitY());
    if (right.norm() < 1e-12) throw DegenerateCameraError("view direction parallel to the up axis");
    f.right = right.normalized();
    f.up = f.right.cross(f.forward);
    f.width = cam.width;
    f.height = cam.height;
    f.cx = 0.5 * cam.width;
    f.cy = 0.5 * cam.height;
    f.focal = 0.5 * cam.height / std::tan(0.5 * cam.fov_y * kDeg);
    return f;
}

const char* view_mode_name(ViewMode m) { return m == ViewMode::head ? "head" : "full_body"; }

CameraSpec frame_bounds(const Aabb& bounds, double polar, double azimuth, double fov_y, double fill, int resolution) {
    CameraSpec cam;
    cam.polar = polar;
    cam.azimuth = azimuth;
    cam.fov_y = fov_y;
    cam.look_at = bounds.center();
    cam.width = cam.height = resolution;
    const double rho = std::max(0.5 * bounds.extent().norm(), 1e-6);
    cam.radius = rho / (fill * std::tan(0.5 * fov_y * kDeg));
    return cam;
}

CameraSample sample_camera(Rng& rng, const CameraSamplerConfig& config, const Aabb& body_bounds,
                           const Aabb& head_bounds) {
    CameraSample s;
    s.mode = rng.uniform() < config.head_probability ? ViewMode::head : ViewMode::full_body;
    const bool head = s.mode == ViewMode::head;
    const double polar = head ? rng.uniform(config.head_polar_min, config.head_polar_max)
                              : rng.uniform(config.body_polar_min, config.body_polar_max);
    const double azimuth = head ? rng.uniform(config.head_azimuth_min, config.head_azimuth_max)
                                : rng.uniform(config.body_azimuth_min, config.body_azimuth_max);
    s.camera = frame_bounds(head ? head_bounds : body_bounds, polar, azimuth, head ? config.head_fov : config.body_fov,
                            config.fill, config.resolution);
    return s;
}

PointCloud vertex_normals(const PointCloud& vertices, const Triangles& faces, Eigen::VectorXd* lengths) {
    PointCloud acc = PointCloud::Zero(vertices.rows(), 3);
    for (Index f = 0; f < faces.rows(); ++f) {
        const Vec3 p0 = row3(vertices, faces(f, 0)), p1 = row3(vertices, faces(f, 1)), p2 = row3(vertices, faces(f, 2));
        const Eigen::RowVector3d c = (p1 - p0).cross(p2 - p0).transpose();
        for (int k = 0; k < 3; ++k) acc.row(faces(f, k)) += c;
    }
    Eigen::VectorXd len = acc.rowwise().norm();
    for (Index v = 0; v < acc.rows(); ++v)
        if (len(v) > 0) acc.row(v) /= len(v);
    if (lengths) *lengths = std::move(len);
    return acc;
}

RenderOutput render(const SurfaceMesh& mesh, const TextureMap& texture, const CameraSpec& cam,
                    const RenderSettings& settings) {
    const Index nv = mesh.vertices.rows();
    if (mesh.uv.rows() != nv) throw DimensionError("uv count must match vertex count");
    if (mesh.faces.size() && (mesh.faces.minCoeff() < 0 || mesh.faces.maxCoeff() >= nv))
        throw DimensionError("face index out of range");
    if (!is_power_of_two(texture.size) || texture.texels.rows() != Index(texture.size) * texture.size)
        throw DimensionError("texture must be a square power-of-two grid");
    if (!all_finite(mesh.vertices)) throw NonFiniteError("mesh vertices are not finite");

    RenderOutput out;
    RenderTape& tape = out.tape;
    tape.frame = CameraFrame::from(cam);
    tape.settings = settings;
    tape.vertices = mesh.vertices;
    tape.faces = mesh.faces;
    tape.uv = mesh.uv;
    tape.vertex_normals = vertex_normals(mesh.vertices, mesh.faces, &tape.normal_lengths);
    tape.texture = &texture;
    tape.texture_fingerprint = texture.fingerprint();

    const CameraFrame& frame = tape.frame;
    const int W = cam.width, H = cam.height;
    const Index npix = Index(W) * H;
    const Projected proj = project(frame, mesh.vertices, settings.near);

    tape.face_id.assign(static_cast<size_t>(npix), -1);
    tape.bary = PointCloud::Zero(npix, 3);
    tape.pixel_uv = PointCloud2D::Zero(npix, 2);
    tape.raw_rgb.resize(npix, 3);
    tape.raw_normal.resize(npix, 3);
    std::vector<double> depth(static_cast<size_t>(npix), kInf);

    parallel_bands(H, settings.threads, [&](int y0, int y1, int) {
        for (Index f = 0; f < mesh.faces.rows(); ++f) {
            if (!face_in_front(proj, mesh.faces, f)) continue;
            const int i0 = mesh.faces(f, 0), i1 = mesh.faces(f, 1), i2 = mesh.faces(f, 2);
            const double minx = std::min({proj.screen(i0, 0), proj.screen(i1, 0), proj.screen(i2, 0)});
            const double maxx = std::max({proj.screen(i0, 0), proj.screen(i1, 0), proj.screen(i2, 0)});
            const double miny = std::min({proj.screen(i0, 1), proj.screen(i1, 1), proj.screen(i2, 1)});
            const double maxy = std::max({proj.screen(i0, 1), proj.screen(i1, 1), proj.screen(i2, 1)});
            const int xa = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
            const int xb = std::min(W - 1, static_cast<int>(std::floor(maxx - 0.5)));
            const int ya = std::max(y0, static_cast<int>(std::ceil(miny - 0.5)));
            const int yb = std::min(y1 - 1, static_cast<int>(std::floor(maxy - 0.5)));
            if (xa > xb || ya > yb) continue;
            const Vec3 p0 = row3(mesh.vertices, i0), p1 = row3(mesh.vertices, i1), p2 = row3(mesh.vertices, i2);
            for (int y = ya; y <= yb; ++y)
                for (int x = xa; x <= xb; ++x) {
                    double b1, b2, s;
                    if (!intersect(frame.eye, frame.ray(x + 0.5, y + 0.5), p0, p1, p2, b1, b2, s)) continue;
                    const Index pix = Index(y) * W + x;
                    if (s <= settings.near || !(s < depth[static_cast<size_t>(pix)])) continue;
                    depth[static_cast<size_t>(pix)] = s;
                    tape.face_id[static_cast<size_t>(pix)] = static_cast<int>(f);
                    tape.bary.row(pix) << 1 - b1 - b2, b1, b2;
                }
        }
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < W; ++x) {
                const Index pix = Index(y) * W + x;
                const int f = tape.face_id[static_cast<size_t>(pix)];
                if (f < 0) {
                    tape.raw_rgb.row(pix) = settings.clear_color.transpose();
                    tape.raw_normal.row(pix) = settings.clear_color.transpose();
                    continue;
                }
                const Vec3 b = tape.bary.row(pix).transpose();
                Eigen::Vector2d uv = Eigen::Vector2d::Zero();
                Vec3 n = Vec3::Zero();
                for (int k = 0; k < 3; ++k) {
                    uv += b(k) * mesh.uv.row(mesh.faces(f, k)).transpose();
                    n += b(k) * row3(tape.vertex_normals, mesh.faces(f, k));
                }
                if (n.norm() < 1e-12) {
                    const Vec3 p0 = row3(mesh.vertices, mesh.faces(f, 0));
                    n = (row3(mesh.vertices, mesh.faces(f, 1)) - p0).cross(row3(mesh.vertices, mesh.faces(f, 2)) - p0);
                }
                n.normalize();
                tape.pixel_uv.row(pix) = uv.transpose();
                tape.raw_rgb.row(pix) = texture.sample(uv(0), uv(1)).transpose();
                tape.raw_normal.row(pix) = (0.5 * (n + Vec3::Ones())).transpose();
            }
    });

    out.rgb = Image(W, H);
    out.normal = Image(W, H);
    out.rgb.pixels = tape.raw_rgb;
    out.normal.pixels = tape.raw_normal;
    out.mask.resize(static_cast<size_t>(npix));
    for (Index i = 0; i < npix; ++i) out.mask[static_cast<size_t>(i)] = tape.face_id[static_cast<size_t>(i)] >= 0;

    if (settings.antialias) {
        std::unordered_map<std::uint64_t, std::vector<int>> edge_faces;
        for (Index f = 0; f < mesh.faces.rows(); ++f)
            for (int k = 0; k < 3; ++k)
                edge_faces[edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3))].push_back(static_cast<int>(f));
        auto facing = [&](int f) {
            if (!face_in_front(proj, mesh.faces, f)) return 0;
            const Eigen::Vector2d a = proj.screen.row(mesh.faces(f, 0)).transpose();
            const Eigen::Vector2d e1 = proj.screen.row(mesh.faces(f, 1)).transpose() - a;
            const Eigen::Vector2d e2 = proj.screen.row(mesh.faces(f, 2)).transpose() - a;
            const double area = e1.x() * e2.y() - e1.y() * e2.x();
            return area > 0 ? 1 : (area < 0 ? -1 : 0);
        };
        auto silhouette = [&](int f, int a, int b) {
            const auto& adj = edge_faces.at(edge_key(a, b));
            if (adj.size() != 2) return true;
            const int g = adj[0] == f ? adj[1] : adj[0];
            return facing(g) != facing(f);
        };
        auto consider = [&](Index pa, Index pb, bool horizontal, double line, double center_a) {
            const int fa = tape.face_id[static_cast<size_t>(pa)], fb = tape.face_id[static_cast<size_t>(pb)];
            if (fa == fb) return;
            const double da = depth[static_cast<size_t>(pa)], db = depth[static_cast<size_t>(pb)];
            const bool a_near = da <= db;
            const Index pn = a_near ? pa : pb, pf = a_near ? pb : pa;
            const int f = a_near ? fa : fb;
            if (f < 0) return;
            const double sign = a_near ? 1.0 : -1.0;
            const double center_near = a_near ? center_a : center_a + 1.0;
            for (int k = 0; k < 3; ++k) {
                const int va = mesh.faces(f, k), vb = mesh.faces(f, (k + 1) % 3);
                const double cross = edge_crossing(proj.screen.row(va).transpose(), proj.screen.row(vb).transpose(),
                                                   horizontal, line, nullptr);
                if (std::isnan(cross)) continue;
                const double d = (cross - center_near) * sign;
                if (d < 0 || d > 1 || !silhouette(f, va, vb)) continue;
                EdgeBlend e;
                e.va = va;
                e.vb = vb;
                e.horizontal = horizontal;
                e.sign = sign;
                e.target_is_outer = d > 0.5;
                e.target = e.target_is_outer ? pf : pn;
                e.source = e.target_is_outer ? pn : pf;
                e.alpha = std::abs(d - 0.5);
                if (e.alpha > 0) tape.blends.push_back(e);
                return;
            }
        };
        for (int y = 0; y < H; ++y)
            for (int x = 0; x + 1 < W; ++x)
                consider(Index(y) * W + x, Index(y) * W + x + 1, true, y + 0.5, x + 0.5);
        for (int y = 0; y + 1 < H; ++y)
            for (int x = 0; x < W; ++x)
                consider(Index(y) * W + x, Index(y + 1) * W + x, false, x + 0.5, y + 0.5);
        for (const EdgeBlend& e : tape.blends) {
            out.rgb.pixels.row(e.target) += e.alpha * (tape.raw_rgb.row(e.source) - tape.raw_rgb.row(e.target));
            out.normal.pixels.row(e.target) +=
                e.alpha * (tape.raw_normal.row(e.source) - tape.raw_normal.row(e.target));
        }
    }
    return out;
}

RenderGrad render_backward(const RenderTape& tape, const Image* grad_rgb, const Image* grad_normal,
                           const RenderBackwardOptions& options) {
    if (!tape.texture || tape.texture->fingerprint() != tape.texture_fingerprint)
        throw StaleTapeError("texture changed since the render that produced this tape");
    const CameraFrame& frame = tape.frame;
    const int W = frame.width, H = frame.height;
    const Index npix = Index(W) * H;
    for (const Image* g : {grad_rgb, grad_normal})
        if (g && (g->width != W || g->height != H)) throw DimensionError("image gradient size mismatch");

    const TextureMap& texture = *tape.texture;
    const Index nv = tape.vertices.rows();
    RenderGrad grad;

    // Undo the antialiasing blends: gradients onto the raw images and the edge positions.
    PointCloud g_rgb = grad_rgb ? grad_rgb->pixels : PointCloud::Zero(npix, 3);
    PointCloud g_nrm = grad_normal ? grad_normal->pixels : PointCloud::Zero(npix, 3);
    PointCloud g_vert = PointCloud::Zero(options.vertices ? nv : 0, 3);
    if (!tape.blends.empty()) {
        const PointCloud out_rgb = g_rgb, out_nrm = g_nrm;
        for (const EdgeBlend& e : tape.blends) {
            g_rgb.row(e.source) += e.alpha * out_rgb.row(e.target);
            g_rgb.row(e.target) -= e.alpha * out_rgb.row(e.target);
            g_nrm.row(e.source) += e.alpha * out_nrm.row(e.target);
            g_nrm.row(e.target) -= e.alpha * out_nrm.row(e.target);
            if (!options.vertices) continue;
            const double g_alpha =
                out_rgb.row(e.target).dot(tape.raw_rgb.row(e.source) - tape.raw_rgb.row(e.target)) +
                out_nrm.row(e.target).dot(tape.raw_normal.row(e.source) - tape.raw_normal.row(e.target));
            const double g_d = g_alpha * (e.target_is_outer ? 1.0 : -1.0);
            const double g_cross = g_d * e.sign;
            const Vec3 ca = frame.to_camera(row3(tape.vertices, e.va)), cb = frame.to_camera(row3(tape.vertices, e.vb));
            const Eigen::Vector2d a(frame.cx + frame.focal * ca.x() / ca.z(), frame.cy - frame.focal * ca.y() / ca.z());
            const Eigen::Vector2d b(frame.cx + frame.focal * cb.x() / cb.z(), frame.cy - frame.focal * cb.y() / cb.z());
            const int along = e.horizontal ? 0 : 1, across = e.horizontal ? 1 : 0;
            const double D = b(across) - a(across);
            const double line = e.horizontal ? (e.target / W) + 0.5 : (e.target % W) + 0.5;
            const double t = (line - a(across)) / D;
            const double spread = b(along) - a(along);
            Eigen::Vector2d ga, gb;
            ga(along) = 1 - t;
            gb(along) = t;
            ga(across) = spread * (t - 1) / D;
            gb(across) = -spread * t / D;
            g_vert.row(e.va) += g_cross * (screen_jacobian(frame, ca).transpose() * ga).transpose();
            g_vert.row(e.vb) += g_cross * (screen_jacobian(frame, cb).transpose() * gb).transpose();
        }
    }

    const int bands = band_count(H, tape.settings.threads);
    std::vector<PointCloud> tex_parts(static_cast<size_t>(bands)), vert_parts(static_cast<size_t>(bands)),
        nrm_parts(static_cast<size_t>(bands));
    parallel_bands(H, tape.settings.threads, [&](int y0, int y1, int w) {
        PointCloud& gt = tex_parts[static_cast<size_t>(w)];
        PointCloud& gv = vert_parts[static_cast<size_t>(w)];
        PointCloud& gn = nrm_parts[static_cast<size_t>(w)];
        if (options.texture) gt = PointCloud::Zero(texture.texels.rows(), 3);
        if (options.vertices) {
            gv = PointCloud::Zero(nv, 3);
            gn = PointCloud::Zero(nv, 3);
        }
        for (int y = y0; y < y1; ++y)
            for (int x = 0; x < W; ++x) {
                const Index pix = Index(y) * W + x;
                const int f = tape.face_id[static_cast<size_t>(pix)];
                if (f < 0) continue;
                const Vec3 gc = g_rgb.row(pix).transpose();
                const Vec3 gnimg = g_nrm.row(pix).transpose();
                const double u = tape.pixel_uv(pix, 0), v = tape.pixel_uv(pix, 1);
                if (options.texture && gc.squaredNorm() != 0) {
                    Index idx[4];
                    double wt[4];
                    texture.bilinear_taps(u, v, idx, wt);
                    for (int k = 0; k < 4; ++k) gt.row(idx[k]) += wt[k] * gc.transpose();
                }
                if (!options.vertices) continue;
                const int vi[3] = {tape.faces(f, 0), tape.faces(f, 1), tape.faces(f, 2)};
                const Vec3 b = tape.bary.row(pix).transpose();
                Vec3 g_b = Vec3::Zero();
                if (gc.squaredNorm() != 0) {
                    Eigen::Matrix<double, 3, 2> J;
                    texture.sample(u, v, &J);
                    const Eigen::Vector2d g_uv = J.transpose() * gc;
                    for (int k = 0; k < 3; ++k) g_b(k) += tape.uv.row(vi[k]).dot(g_uv);
                }
                if (gnimg.squaredNorm() != 0) {
                    Vec3 nraw = Vec3::Zero();
                    for (int k = 0; k < 3; ++k) nraw += b(k) * row3(tape.vertex_normals, vi[k]);
                    const double len = nraw.norm();
                    if (len >= 1e-12) {
                        const Vec3 n = nraw / len;
                        const Vec3 g_n = 0.5 * gnimg;
                        const Vec3 g_raw = (g_n - n * n.dot(g_n)) / len;
                        for (int k = 0; k < 3; ++k) {
                            g_b(k) += row3(tape.vertex_normals, vi[k]).dot(g_raw);
                            gn.row(vi[k]) += b(k) * g_raw.transpose();
                        }
                    }
                }
                const Vec3 g_x(g_b(1) - g_b(0), g_b(2) - g_b(0), 0.0);
                if (g_x.squaredNorm() == 0) continue;
                const Vec3 p0 = row3(tape.vertices, vi[0]);
                Mat3 M;
                M.col(0) = row3(tape.vertices, vi[1]) - p0;
                M.col(1) = row3(tape.vertices, vi[2]) - p0;
                M.col(2) = -frame.ray(x + 0.5, y + 0.5);
                const Vec3 lambda = M.transpose().partialPivLu().solve(g_x);
                for (int k = 0; k < 3; ++k) gv.row(vi[k]) -= b(k) * lambda.transpose();
            }
    });

    if (options.texture) {
        grad.texture = PointCloud::Zero(texture.texels.rows(), 3);
        for (const auto& part : tex_parts) grad.texture += part;
    }
    if (options.vertices) {
        PointCloud g_nhat = PointCloud::Zero(nv, 3);
        for (int w = 0; w < bands; ++w) {
            g_vert += vert_parts[static_cast<size_t>(w)];
            g_nhat += nrm_parts[static_cast<size_t>(w)];
        }
        // Through the normalization and the area-weighted face-normal sums.
        PointCloud g_acc = PointCloud::Zero(nv, 3);
        for (Index v = 0; v < nv; ++v) {
            const double len = tape.normal_lengths(v);
            if (len <= 0) continue;
            const Vec3 n = row3(tape.vertex_normals, v), g = row3(g_nhat, v);
            g_acc.row(v) = ((g - n * n.dot(g)) / len).transpose();
        }
        for (Index f = 0; f < tape.faces.rows(); ++f) {
            const Vec3 gcf = row3(g_acc, tape.faces(f, 0)) + row3(g_acc, tape.faces(f, 1)) + row3(g_acc, tape.faces(f, 2));
            if (gcf.squaredNorm() == 0) continue;
            const Vec3 p0 = row3(tape.vertices, tape.faces(f, 0));
            const Vec3 e1 = row3(tape.vertices, tape.faces(f, 1)) - p0, e2 = row3(tape.vertices, tape.faces(f, 2)) - p0;
            const Vec3 g1 = e2.cross(gcf), g2 = gcf.cross(e1);
            g_vert.row(tape.faces(f, 1)) += g1.transpose();
            g_vert.row(tape.faces(f, 2)) += g2.transpose();
            g_vert.row(tape.faces(f, 0)) -= (g1 + g2).transpose();
        }
        grad.vertices = std::move(g_vert);
    }
    return grad;
}

}  // namespace avatar_forge
