#pragma once

#include "avatar_forge/optimizer.hpp"

#include <string>
#include <vector>

namespace avatar_forge {

struct ExportBundle {
    std::string mesh;      // .obj
    std::string material;  // .mtl
    std::string texture;   // .png
};

// Writes <dir>/<stem>.obj, <stem>.mtl and <stem>.png for the posed, displaced
// avatar. OBJ texture coordinates are flipped to the bottom-left convention.
ExportBundle export_avatar(const AvatarState& state, const AvatarAssets& assets, const PoseParams& pose,
                           const std::string& dir, const std::string& stem = "avatar");

// Minimal OBJ reader for the files written above (v, vt, vn, triangular f).
struct ObjMesh {
    PointCloud vertices;
    PointCloud2D uvs;
    PointCloud normals;
    Triangles faces;
    Triangles face_uvs;
    Triangles face_normals;
    std::string mtllib;
};
ObjMesh read_obj(const std::string& path);

struct AnimateOptions {
    bool per_frame = true;  // frame_NNNN.obj sharing one material and texture
    bool skinned = false;   // animation.json with rest mesh, weights and per-frame poses
};

// One bundle per frame; the skinned file, when requested, is reported as an
// extra bundle with only `mesh` set.
std::vector<ExportBundle> animate(const AvatarState& state, const AvatarAssets& assets,
                                  const AnimationSequence& sequence, const std::string& out_dir,
                                  const AnimateOptions& options = {});

// Part id whose UV triangle covers the largest area of each texel; texels no
// triangle touches are `other`.
std::vector<PartLabel> texel_ownership(const AvatarAssets& assets, int texture_size);

// Label of each subdivided face: majority of its corner labels, else the smallest id.
std::vector<PartLabel> face_labels(const SubdividedModel& sub);

struct SwapOptions {
    int smoothing_iterations = 0;  // Laplacian passes on D within two rings of the part boundary
};

AvatarState part_swap(const AvatarState& a, const AvatarState& b, PartLabel part, const AvatarAssets& assets,
                      const SwapOptions& options = {});

}  // namespace avatar_forge
