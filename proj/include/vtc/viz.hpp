#pragma once

// Seed/context assignment rendering: one panel per frame, non-seed patches
// dimmed, each seed patch filled with the mean input color of its context
// token's source patches and outlined in a per-context hue. Binary PPM (P6)
// output with an optional SVG twin.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/context.hpp"
#include "vtc/vision.hpp"

namespace vtc {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb& o) const { return r == o.r && g == o.g && b == o.b; }
};

inline Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h * 6.0, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (int(h * 6.0) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    auto q = [&](double u) { return std::uint8_t(std::lround(255.0 * (u + m))); };
    return {q(r), q(g), q(b)};
}

// Evenly spaced saturated hues, one per context token.
inline std::vector<Rgb> context_hues(std::size_t k) {
    std::vector<Rgb> hues(k);
    for (std::size_t j = 0; j < k; ++j) hues[j] = hsv_to_rgb(double(j) / double(k ? k : 1), 1.0, 1.0);
    return hues;
}

struct Image {
    std::size_t width = 0, height = 0;
    std::vector<Rgb> px;

    Rgb& at(std::size_t x, std::size_t y) { return px[y * width + x]; }
    const Rgb& at(std::size_t x, std::size_t y) const { return px[y * width + x]; }
};

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (const Rgb& p : img.px) {
        char buf[3] = {char(p.r), char(p.g), char(p.b)};
        os.write(buf, 3);
    }
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string magic;
    std::size_t w, h, maxval;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error("unsupported PPM in " + path);
    is.get();
    Image img;
    img.width = w;
    img.height = h;
    img.px.resize(w * h);
    for (Rgb& p : img.px) {
        char buf[3];
        is.read(buf, 3);
        p = {std::uint8_t(buf[0]), std::uint8_t(buf[1]), std::uint8_t(buf[2])};
    }
    if (!is) throw std::runtime_error("truncated PPM in " + path);
    return img;
}

// Mean input color per context token over all of its source patches.
inline std::vector<std::array<double, 3>> context_source_colors(
    const VideoClip& clip, std::size_t patch, const SeedSelection& seeds,
    const ContextSet& ctx) {
    const std::size_t gx = clip.width / patch;
    const std::size_t k = ctx.sizes.size();
    std::vector<std::array<double, 3>> acc(k, {0, 0, 0});
    std::vector<std::size_t> cnt(k, 0);
    std::size_t seed_pos = 0;
    for (std::size_t t = 0; t < seeds.per_frame.size(); ++t)
        for (int pi : seeds.per_frame[t]) {
            const int cid = ctx.assignment[seed_pos++];
            const std::size_t py = std::size_t(pi) / gx, px = std::size_t(pi) % gx;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        acc[cid][c] += clip.at(t, py * patch + y, px * patch + x, c);
            cnt[cid]++;
        }
    for (std::size_t j = 0; j < k; ++j)
        if (cnt[j])
            for (auto& c : acc[j]) c /= double(cnt[j]) * double(patch * patch);
    return acc;
}

// Renders `<stem>.ppm` (and `<stem>.svg` when requested); returns the PPM path.
inline std::string render_assignment_map(const VideoClip& clip, std::size_t patch,
                                         const SeedSelection& seeds, const ContextSet& ctx,
                                         const std::string& stem, bool also_svg = false) {
    if (seeds.per_frame.size() != clip.frames)
        throw std::invalid_argument("render_assignment_map: seed frames mismatch");
    const std::size_t scale = 6, gap = 4, border = 2;
    const std::size_t fw = clip.width * scale, fh = clip.height * scale;
    Image img;
    img.width = clip.frames * fw + (clip.frames - 1) * gap;
    img.height = fh;
    img.px.assign(img.width * img.height, Rgb{255, 255, 255});

    const std::size_t gx = clip.width / patch;
    const auto hues = context_hues(ctx.sizes.size());
    const auto fills = context_source_colors(clip, patch, seeds, ctx);

    auto to_byte = [](double v) {
        return std::uint8_t(std::lround(255.0 * std::min(1.0, std::max(0.0, v))));
    };

    // dimmed input everywhere
    for (std::size_t t = 0; t < clip.frames; ++t) {
        const std::size_t ox = t * (fw + gap);
        for (std::size_t y = 0; y < fh; ++y)
            for (std::size_t x = 0; x < fw; ++x) {
                const std::size_t sy = y / scale, sx = x / scale;
                img.at(ox + x, y) = Rgb{to_byte(0.35 * clip.at(t, sy, sx, 0)),
                                        to_byte(0.35 * clip.at(t, sy, sx, 1)),
                                        to_byte(0.35 * clip.at(t, sy, sx, 2))};
            }
    }

    // seed patches: context fill + hue outline
    std::size_t seed_pos = 0;
    std::string svg;
    if (also_svg)
        svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(img.width) +
              "\" height=\"" + std::to_string(img.height) + "\">\n";
    for (std::size_t t = 0; t < clip.frames; ++t) {
        const std::size_t ox = t * (fw + gap);
        for (int pi : seeds.per_frame[t]) {
            const int cid = ctx.assignment[seed_pos++];
            const std::size_t py = std::size_t(pi) / gx, px = std::size_t(pi) % gx;
            const std::size_t x0 = ox + px * patch * scale, y0 = py * patch * scale;
            const std::size_t side = patch * scale;
            const Rgb fill{to_byte(fills[cid][0]), to_byte(fills[cid][1]), to_byte(fills[cid][2])};
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x) {
                    const bool edge = x < border || y < border || x >= side - border ||
                                      y >= side - border;
                    img.at(x0 + x, y0 + y) = edge ? hues[cid] : fill;
                }
            if (also_svg) {
                char buf[256];
                std::snprintf(buf, sizeof(buf),
                              "<rect x=\"%zu\" y=\"%zu\" width=\"%zu\" height=\"%zu\" "
                              "fill=\"rgb(%d,%d,%d)\" stroke=\"rgb(%d,%d,%d)\" stroke-width=\"%zu\"/>\n",
                              x0, y0, side, side, fill.r, fill.g, fill.b, hues[cid].r,
                              hues[cid].g, hues[cid].b, border);
                svg += buf;
            }
        }
    }
    write_ppm(stem + ".ppm", img);
    if (also_svg) {
        svg += "</svg>\n";
        std::ofstream os(stem + ".svg");
        if (!os) throw std::runtime_error("cannot open " + stem + ".svg");
        os << svg;
    }
    return stem + ".ppm";
}

}  // namespace vtc
