#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dreamstory {

// Axis-aligned pixel box, [x0, x1) x [y0, y1).
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long area() const { return static_cast<long long>(width()) * height(); }
    bool empty() const { return width() <= 0 || height() <= 0; }
    Box clipped(int w, int h) const;
    bool operator==(const Box&) const = default;
};

double box_iou(const Box& a, const Box& b);

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image {
    int width = 0, height = 0, channels = 0;
    std::vector<uint8_t> data;

    Image() = default;
    Image(int w, int h, int c, uint8_t fill = 0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    bool empty() const { return width <= 0 || height <= 0 || channels <= 0; }
    uint8_t& at(int x, int y, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    uint8_t at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    void fill_rect(const Box& box, const std::vector<uint8_t>& color);
    Image crop(const Box& box) const;
    // Nearest-neighbour resize; deterministic.
    Image resized(int new_w, int new_h) const;

    bool operator==(const Image&) const = default;
};

uint64_t image_hash(const Image& img);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace dreamstory
