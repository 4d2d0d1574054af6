#pragma once

#include "avatar_forge/core.hpp"
#include "avatar_forge/image.hpp"
#include "avatar_forge/rng.hpp"

#include <vector>

namespace avatar_forge {

struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
    bool contains(const Aabb& other) const {
        return (other.min.array() >= min.array()).all() && (other.max.array() <= max.array()).all();
    }
};

Aabb bounds_of(const PointCloud& points);
Aabb bounds_of(const PointCloud& points, const std::vector<bool>& select);

// Orbit camera around look_at. Up axis +Y, polar angle from +Y, azimuth 0
// looks from +Z, roll zero.
struct CameraSpec {
    double radius = 2.0;
    double polar = 90.0;
    double azimuth = 0.0;
    double fov_y = 45.0;
    Vec3 look_at = Vec3::Zero();
    int width = 64;
    int height = 64;

    void validate() const;
    Vec3 eye() const;
};

struct CameraFrame {
    Vec3 eye, right, up, forward;
    double focal = 0;  // pixels
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    static CameraFrame from(const CameraSpec& cam);
    // Camera-space coordinates (x right, y up, z forward).
    Vec3 to_camera(const Vec3& p) const {
        const Vec3 d = p - eye;
        return {d.dot(right), d.dot(up), d.dot(forward)};
    }
    // Ray direction through pixel coordinates (px, py); forward component 1.
    Vec3 ray(double px, double py) const { return forward + ((px - cx) / focal) * right - ((py - cy) / focal) * up; }
};

enum class ViewMode { full_body, head };
const char* view_mode_name(ViewMode m);

struct CameraSamplerConfig {
    double head_probability = 0.30;
    double body_polar_min = 60, body_polar_max = 90;
    double body_azimuth_min = -180, body_azimuth_max = 180;
    double head_polar_min = 75, head_polar_max = 85;
    double head_azimuth_min = -30, head_azimuth_max = 30;
    double body_fov = 45, head_fov = 30;
    double fill = 0.85;  // fraction of the frame height the target's bounding sphere spans
    int resolution = 64;
};

struct CameraSample {
    CameraSpec camera;
    ViewMode mode = ViewMode::full_body;
};

CameraSample sample_camera(Rng& rng, const CameraSamplerConfig& config, const Aabb& body_bounds,
                           const Aabb& head_bounds);
// Framing used by the sampler for a given mode and angles.
CameraSpec frame_bounds(const Aabb& bounds, double polar, double azimuth, double fov_y, double fill, int resolution);

struct RenderSettings {
    Vec3 clear_color = Vec3::Ones();
    double near = 1e-3;
    // Screen-space edge antialiasing; makes silhouette coverage differentiable.
    bool antialias = false;
    int threads = 1;
};

struct SurfaceMesh {
    const PointCloud& vertices;
    const Triangles& faces;
    const PointCloud2D& uv;
};

// One blend of a silhouette-straddling pixel pair: out[target] += alpha * (raw[source] - raw[target]).
struct EdgeBlend {
    Index target = 0, source = 0;
    int va = 0, vb = 0;  // silhouette edge endpoints
    bool horizontal = true;
    double sign = 1;  // +1 when the target lies in the +x / +y direction from the covered pixel
    bool target_is_outer = true;
    double alpha = 0;
};

struct RenderTape {
    CameraFrame frame;
    RenderSettings settings;
    PointCloud vertices;
    Triangles faces;
    PointCloud2D uv;
    PointCloud vertex_normals;       // unit, area weighted
    Eigen::VectorXd normal_lengths;  // length of the unnormalized sums
    std::vector<int> face_id;        // -1 for background
    PointCloud bary;                 // per pixel (b0, b1, b2)
    PointCloud2D pixel_uv;
    PointCloud raw_rgb, raw_normal;  // before antialiasing
    std::vector<EdgeBlend> blends;
    const TextureMap* texture = nullptr;
    std::uint64_t texture_fingerprint = 0;
};

struct RenderOutput {
    Image rgb;
    Image normal;
    std::vector<bool> mask;
    RenderTape tape;

    int width() const { return rgb.width; }
    int height() const { return rgb.height; }
};

RenderOutput render(const SurfaceMesh& mesh, const TextureMap& texture, const CameraSpec& cam,
                    const RenderSettings& settings = {});

struct RenderGrad {
    PointCloud texture;   // size*size x 3, empty unless requested
    PointCloud vertices;  // N x 3, empty unless requested
};

struct RenderBackwardOptions {
    bool texture = true;
    bool vertices = true;
};

// Either image gradient may be null (treated as zero).
RenderGrad render_backward(const RenderTape& tape, const Image* grad_rgb, const Image* grad_normal,
                           const RenderBackwardOptions& options = {});

// Area-weighted per-vertex normals (unit) and the lengths of the raw sums.
PointCloud vertex_normals(const PointCloud& vertices, const Triangles& faces, Eigen::VectorXd* lengths = nullptr);

}  // namespace avatar_forge
