#pragma once

#include "avatar_forge/core.hpp"

#include <string>

namespace avatar_forge {

// Float RGB image, row-major pixels (row y*width + x).
struct Image {
    int width = 0;
    int height = 0;
    PointCloud pixels;

    Image() = default;
    Image(int w, int h, const Vec3& fill = Vec3::Zero()) : width(w), height(h), pixels(Index(w) * h, 3) {
        pixels.rowwise() = fill.transpose();
    }
    Index index(int x, int y) const { return Index(y) * width + x; }
    Eigen::RowVector3d at(int x, int y) const { return pixels.row(index(x, y)); }
};

// Square RGB texture Psi in [0,1]; texel (x, y) covers u in [x/S, (x+1)/S),
// v in [y/S, (y+1)/S). Sampling is bilinear between texel centers with
// clamp-to-edge addressing.
struct TextureMap {
    int size = 0;
    PointCloud texels;  // size*size x 3

    static TextureMap constant(int size, const Vec3& color);
    Index index(int x, int y) const { return Index(y) * size + x; }
    std::uint64_t fingerprint() const { return Fingerprint().add(texels).add_value(std::uint64_t(size)).value(); }

    // Bilinear lookup; optionally returns d(rgb)/d(u,v) as a 3x2 Jacobian.
    Vec3 sample(double u, double v, Eigen::Matrix<double, 3, 2>* duv = nullptr) const;
    // Four (texel index, weight) pairs used by sample().
    void bilinear_taps(double u, double v, Index idx[4], double w[4]) const;
    // Identifier of the bilinear cell containing (u, v); the lookup is smooth
    // in (u, v) only while this stays fixed.
    Index footprint(double u, double v) const;
};

bool is_power_of_two(int n);

// 8-bit lossless RGB export/import. Values are clamped to [0,1] and rounded.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);
void write_texture_png(const std::string& path, const TextureMap& texture);

// Area-average downsampling by an integer factor.
Image downsample(const Image& image, int factor);
// Bilinear resize, used to bring a target image to the render resolution.
Image resize_bilinear(const Image& image, int width, int height);

}  // namespace avatar_forge
