#include "avatar_forge/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace avatar_forge {

TextureMap TextureMap::constant(int size, const Vec3& color) {
    if (!is_power_of_two(size)) throw ConfigError("texture size must be a power of two");
    TextureMap t;
    t.size = size;
    t.texels.resize(Index(size) * size, 3);
    t.texels.rowwise() = color.transpose();
    return t;
}

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void TextureMap::bilinear_taps(double u, double v, Index idx[4], double w[4]) const {
    const double x = u * size - 0.5, y = v * size - 0.5;
    const double fx0 = std::floor(x), fy0 = std::floor(y);
    const double fx = x - fx0, fy = y - fy0;
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
    auto cx = [&](int i) { return std::clamp(i, 0, size - 1); };
    idx[0] = index(cx(x0), cx(y0));
    idx[1] = index(cx(x0 + 1), cx(y0));
    idx[2] = index(cx(x0), cx(y0 + 1));
    idx[3] = index(cx(x0 + 1), cx(y0 + 1));
    w[0] = (1 - fx) * (1 - fy);
    w[1] = fx * (1 - fy);
    w[2] = (1 - fx) * fy;
    w[3] = fx * fy;
}

Index TextureMap::footprint(double u, double v) const {
    const Index x0 = static_cast<Index>(std::floor(u * size - 0.5)), y0 = static_cast<Index>(std::floor(v * size - 0.5));
    return (std::clamp<Index>(y0, -1, size) + 1) * (size + 2) + std::clamp<Index>(x0, -1, size) + 1;
}

Vec3 TextureMap::sample(double u, double v, Eigen::Matrix<double, 3, 2>* duv) const {
    Index idx[4];
    double w[4];
    bilinear_taps(u, v, idx, w);
    const double x = u * size - 0.5, y = v * size - 0.5;
    const double fx = x - std::floor(x), fy = y - std::floor(y);
    const Vec3 t00 = texels.row(idx[0]), t10 = texels.row(idx[1]), t01 = texels.row(idx[2]), t11 = texels.row(idx[3]);
    // Lerp form: constant neighbourhoods reproduce the texel value exactly.
    const Vec3 top = t00 + fx * (t10 - t00), bottom = t01 + fx * (t11 - t01);
    const Vec3 c = top + fy * (bottom - top);
    if (duv) {
        duv->col(0) = size * ((1 - fy) * (t10 - t00) + fy * (t11 - t01));
        duv->col(1) = size * ((1 - fx) * (t01 - t00) + fx * (t11 - t10));
    }
    return c;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_rgb8(const std::string& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + size_t(y) * size_t(width) * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
    std::vector<std::uint8_t> rgb(static_cast<size_t>(image.pixels.size()));
    for (Index i = 0; i < image.pixels.size(); ++i) rgb[static_cast<size_t>(i)] = quantize(image.pixels.data()[i]);
    write_rgb8(path, image.width, image.height, rgb);
}

void write_texture_png(const std::string& path, const TextureMap& texture) {
    std::vector<std::uint8_t> rgb(static_cast<size_t>(texture.texels.size()));
    for (Index i = 0; i < texture.texels.size(); ++i)
        rgb[static_cast<size_t>(i)] = quantize(texture.texels.data()[i]);
    write_rgb8(path, texture.size, texture.size, rgb);
}

Image read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open '" + path + "'");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ParseError("'" + path + "' is not a PNG");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("corrupt PNG '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    Image img(w, h);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.pixels(img.index(x, y), c) = row[size_t(x) * 3 + size_t(c)] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image downsample(const Image& image, int factor) {
    if (factor < 1 || image.width % factor || image.height % factor)
        throw DimensionError("downsample factor must divide the image size");
    Image out(image.width / factor, image.height / factor);
    const double inv = 1.0 / (double(factor) * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) acc += image.at(x * factor + dx, y * factor + dy);
            out.pixels.row(out.index(x, y)) = acc * inv;
        }
    return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
    Image out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double sx = std::clamp((x + 0.5) * image.width / width - 0.5, 0.0, image.width - 1.0);
            const double sy = std::clamp((y + 0.5) * image.height / height - 0.5, 0.0, image.height - 1.0);
            const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
            const int x1 = std::min(x0 + 1, image.width - 1), y1 = std::min(y0 + 1, image.height - 1);
            const double fx = sx - x0, fy = sy - y0;
            out.pixels.row(out.index(x, y)) = (1 - fx) * (1 - fy) * image.at(x0, y0) + fx * (1 - fy) * image.at(x1, y0) +
                                              (1 - fx) * fy * image.at(x0, y1) + fx * fy * image.at(x1, y1);
        }
    return out;
}

}  // namespace avatar_forge
