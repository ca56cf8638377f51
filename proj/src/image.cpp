#include "dreamstory/image.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <memory>

#include <png.h>

#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"

namespace dreamstory {

Box Box::clipped(int w, int h) const {
    Box b = *this;
    b.x0 = std::clamp(b.x0, 0, w);
    b.x1 = std::clamp(b.x1, 0, w);
    b.y0 = std::clamp(b.y0, 0, h);
    b.y1 = std::clamp(b.y1, 0, h);
    return b;
}

double box_iou(const Box& a, const Box& b) {
    int ix0 = std::max(a.x0, b.x0);
    int iy0 = std::max(a.y0, b.y0);
    int ix1 = std::min(a.x1, b.x1);
    int iy1 = std::min(a.y1, b.y1);
    long long inter = 0;
    if (ix1 > ix0 && iy1 > iy0) inter = static_cast<long long>(ix1 - ix0) * (iy1 - iy0);
    long long uni = a.area() + b.area() - inter;
    return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void Image::fill_rect(const Box& box, const std::vector<uint8_t>& color) {
    Box b = box.clipped(width, height);
    for (int y = b.y0; y < b.y1; ++y)
        for (int x = b.x0; x < b.x1; ++x)
            for (int c = 0; c < channels; ++c)
                at(x, y, c) = color[c % color.size()];
}

Image Image::crop(const Box& box) const {
    Box b = box.clipped(width, height);
    if (b.empty()) return Image(0, 0, channels);
    Image out(b.width(), b.height(), channels);
    for (int y = 0; y < b.height(); ++y)
        for (int x = 0; x < b.width(); ++x)
            for (int c = 0; c < channels; ++c)
                out.at(x, y, c) = at(b.x0 + x, b.y0 + y, c);
    return out;
}

Image Image::resized(int new_w, int new_h) const {
    Image out(new_w, new_h, channels);
    if (empty() || new_w <= 0 || new_h <= 0) return out;
    for (int y = 0; y < new_h; ++y) {
        int sy = std::min(height - 1, y * height / new_h);
        for (int x = 0; x < new_w; ++x) {
            int sx = std::min(width - 1, x * width / new_w);
            for (int c = 0; c < channels; ++c) out.at(x, y, c) = at(sx, sy, c);
        }
    }
    return out;
}

uint64_t image_hash(const Image& img) {
    uint64_t h = fnv1a64(&img.width, sizeof(img.width));
    h = fnv1a64(&img.height, sizeof(img.height), h);
    h = fnv1a64(&img.channels, sizeof(img.channels), h);
    if (!img.data.empty()) h = fnv1a64(img.data.data(), img.data.size(), h);
    return h;
}

namespace {
struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.empty()) throw InputError("refusing to write empty image " + path.string());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());

    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IOError("cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IOError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IOError("libpng write failed for " + path.string());
    }
    png_init_io(png, fp.get());
    int color_type = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed settings so identical pixels give identical bytes.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(&img.data[static_cast<size_t>(y) * img.width * img.channels]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IOError("cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IOError("libpng read failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_packing(png);
    png_byte color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image img(static_cast<int>(png_get_image_width(png, info)),
              static_cast<int>(png_get_image_height(png, info)),
              static_cast<int>(png_get_channels(png, info)));
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = &img.data[static_cast<size_t>(y) * img.width * img.channels];
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace dreamstory
