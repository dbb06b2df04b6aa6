#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bprom {

struct Geometry {
    int height = 0;
    int width = 0;
    int channels = 0;

    bool operator==(const Geometry&) const = default;
    long long pixel_count() const {
        return static_cast<long long>(height) * width * channels;
    }
};

std::string to_string(const Geometry& g);

// Dense H x W x C image, row-major with channels innermost, values in [0,1].
struct Image {
    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : geometry{h, w, c}, pixels(static_cast<size_t>(h) * w * c, fill) {}

    Geometry geometry;
    std::vector<float> pixels;

    float& at(int y, int x, int ch) {
        return pixels[(static_cast<size_t>(y) * geometry.width + x) * geometry.channels + ch];
    }
    float at(int y, int x, int ch) const {
        return pixels[(static_cast<size_t>(y) * geometry.width + x) * geometry.channels + ch];
    }
};

// Bilinear resize with half-pixel centers; returns a copy when sizes match.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Float image files (PFM: "PF" = 3 channel, "Pf" = 1 channel). Values
// round-trip exactly; used for trigger patterns, masks and prompts.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

uint64_t image_hash(const Image& img);

}  // namespace bprom
