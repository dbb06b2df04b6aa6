#include "bprom/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "bprom/common.hpp"

namespace bprom {

std::string to_string(const Geometry& g) {
    return std::to_string(g.height) + "x" + std::to_string(g.width) + "x" +
           std::to_string(g.channels);
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    const Geometry& g = src.geometry;
    if (out_h == g.height && out_w == g.width) return src;

    Image out(out_h, out_w, g.channels);
    const float sy = static_cast<float>(g.height) / out_h;
    const float sx = static_cast<float>(g.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        float fy = (y + 0.5f) * sy - 0.5f;
        fy = std::clamp(fy, 0.0f, static_cast<float>(g.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, g.height - 1);
        const float wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            float fx = (x + 0.5f) * sx - 0.5f;
            fx = std::clamp(fx, 0.0f, static_cast<float>(g.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, g.width - 1);
            const float wx = fx - x0;
            for (int c = 0; c < g.channels; ++c) {
                const float top = src.at(y0, x0, c) * (1.0f - wx) + src.at(y0, x1, c) * wx;
                const float bot = src.at(y1, x0, c) * (1.0f - wx) + src.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1.0f - wy) + bot * wy;
            }
        }
    }
    return out;
}

void write_pfm(const std::string& path, const Image& img) {
    if (img.geometry.channels != 1 && img.geometry.channels != 3) {
        throw Error(ErrorCategory::Geometry,
                    "pfm supports 1 or 3 channels, got " + to_string(img.geometry));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::Data, "cannot open for write: " + path);
    f << (img.geometry.channels == 3 ? "PF" : "Pf") << "\n"
      << img.geometry.width << " " << img.geometry.height << "\n"
      << "-1.0\n";
    // PFM stores rows bottom-up.
    const size_t row = static_cast<size_t>(img.geometry.width) * img.geometry.channels;
    for (int y = img.geometry.height - 1; y >= 0; --y) {
        f.write(reinterpret_cast<const char*>(img.pixels.data() + static_cast<size_t>(y) * row),
                static_cast<std::streamsize>(row * sizeof(float)));
    }
    if (!f) throw Error(ErrorCategory::Data, "short write: " + path);
}

Image read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::Data, "cannot open: " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    f >> magic >> w >> h >> scale;
    f.get();  // single whitespace after the header
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0) {
        throw Error(ErrorCategory::Data, "not a pfm file: " + path);
    }
    Image img(h, w, magic == "PF" ? 3 : 1);
    const size_t row = static_cast<size_t>(w) * img.geometry.channels;
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(img.pixels.data() + static_cast<size_t>(y) * row),
               static_cast<std::streamsize>(row * sizeof(float)));
    }
    if (!f) throw Error(ErrorCategory::Data, "truncated pfm: " + path);
    if (scale > 0) {
        // Big-endian file; byte-swap each float.
        for (float& v : img.pixels) {
            uint32_t u;
            std::memcpy(&u, &v, 4);
            u = __builtin_bswap32(u);
            std::memcpy(&v, &u, 4);
        }
    }
    return img;
}

uint64_t image_hash(const Image& img) {
    Fnv1a h;
    h.update_value(img.geometry.height);
    h.update_value(img.geometry.width);
    h.update_value(img.geometry.channels);
    h.update(img.pixels.data(), img.pixels.size() * sizeof(float));
    return h.digest();
}

}  // namespace bprom
