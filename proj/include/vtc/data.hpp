#pragma once

// Synthetic moving-square clips. direction4 labels clips by dominant motion
// direction; reversal2 pairs every clip with its exact frame-order reversal
// under the opposite label, so the two labels share identical frame multisets.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/rng.hpp"
#include "vtc/vision.hpp"

namespace vtc {

struct SquareClipSpec {
    std::size_t frames = 8;
    std::size_t height = 32, width = 32;
    std::size_t square = 8;
    double start_row = 12.0, start_col = 2.0;
    double vel_row = 0.0, vel_col = 3.0;  // pixels per frame
    double square_value = 1.0;
    double background = 0.1;
    double noise = 0.02;
    std::uint64_t noise_seed = 0;
};

// direction4 labels
enum : int { kLabelRight = 0, kLabelLeft = 1, kLabelUp = 2, kLabelDown = 3 };
// reversal2 labels
enum : int { kLabelForward = 0, kLabelReversed = 1 };

inline int direction_label(const SquareClipSpec& spec) {
    if (std::abs(spec.vel_col) >= std::abs(spec.vel_row))
        return spec.vel_col >= 0.0 ? kLabelRight : kLabelLeft;
    return spec.vel_row >= 0.0 ? kLabelDown : kLabelUp;
}

// Bright square on a low-amplitude noise background, translating at the given
// velocity. Rejects trajectories that leave the grid at any frame.
inline VideoClip gen_moving_square(const SquareClipSpec& spec) {
    VideoClip clip;
    clip.frames = spec.frames;
    clip.height = spec.height;
    clip.width = spec.width;
    clip.pixels.assign(spec.frames * spec.height * spec.width * 3, 0.0);

    std::vector<std::pair<long, long>> pos(spec.frames);
    for (std::size_t t = 0; t < spec.frames; ++t) {
        long r = std::lround(spec.start_row + spec.vel_row * double(t));
        long c = std::lround(spec.start_col + spec.vel_col * double(t));
        if (r < 0 || c < 0 || r + long(spec.square) > long(spec.height) ||
            c + long(spec.square) > long(spec.width))
            throw std::invalid_argument("gen_moving_square: trajectory leaves grid at frame " +
                                        std::to_string(t));
        pos[t] = {r, c};
    }

    Rng rng(spec.noise_seed, 3);
    for (std::size_t t = 0; t < spec.frames; ++t)
        for (std::size_t y = 0; y < spec.height; ++y)
            for (std::size_t x = 0; x < spec.width; ++x) {
                double v = spec.background + spec.noise * rng.next_normal();
                v = std::min(1.0, std::max(0.0, v));
                for (std::size_t c = 0; c < 3; ++c)
                    clip.pixels[((t * spec.height + y) * spec.width + x) * 3 + c] = v;
            }
    for (std::size_t t = 0; t < spec.frames; ++t) {
        auto [r0, c0] = pos[t];
        for (long y = r0; y < r0 + long(spec.square); ++y)
            for (long x = c0; x < c0 + long(spec.square); ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    clip.pixels[((t * spec.height + std::size_t(y)) * spec.width +
                                 std::size_t(x)) * 3 + c] = spec.square_value;
    }
    clip.label = direction_label(spec);
    return clip;
}

// Frame t of the result equals frame T-1-t of the input, bit-exactly.
inline VideoClip reverse_clip(const VideoClip& in) {
    VideoClip out = in;
    const std::size_t fs = in.height * in.width * 3;
    for (std::size_t t = 0; t < in.frames; ++t)
        std::copy(in.pixels.begin() + (in.frames - 1 - t) * fs,
                  in.pixels.begin() + (in.frames - t) * fs, out.pixels.begin() + t * fs);
    return out;
}

struct DataConfig {
    std::string task = "reversal2";  // reversal2 | direction4
    std::size_t frames = 8, height = 32, width = 32, square = 8;
    double square_value = 1.0, background = 0.1, noise = 0.02;
    double vel_row = 0.0, vel_col = 3.0;
    double start_row = 12.0, start_col = 2.0;
    bool jitter_start_row = false;  // noise seeds already vary the clips
    std::size_t train_pairs = 128;
    std::size_t eval_pairs = 512;
};

inline SquareClipSpec base_spec(const DataConfig& d, Rng& rng) {
    SquareClipSpec s;
    s.frames = d.frames;
    s.height = d.height;
    s.width = d.width;
    s.square = d.square;
    s.square_value = d.square_value;
    s.background = d.background;
    s.noise = d.noise;
    s.vel_row = d.vel_row;
    s.vel_col = d.vel_col;
    s.start_row = d.start_row;
    s.start_col = d.start_col;
    if (d.jitter_start_row) {
        const long span = long(d.height) - long(d.square) -
                          long(std::ceil(std::abs(d.vel_row) * double(d.frames - 1)));
        if (span > 0) s.start_row = double(rng.next_below(std::uint64_t(span + 1)));
    }
    s.noise_seed = rng.next_u64();
    return s;
}

// Adjacent forward/reversed pairs: clips[2i] is forward (label 0), clips[2i+1]
// is its exact reversal (label 1).
inline std::vector<VideoClip> make_reversal_pairs(const DataConfig& d, std::uint64_t seed,
                                                  std::size_t pairs) {
    Rng rng(seed, 5);
    std::vector<VideoClip> out;
    out.reserve(2 * pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
        VideoClip fwd = gen_moving_square(base_spec(d, rng));
        fwd.label = kLabelForward;
        VideoClip rev = reverse_clip(fwd);
        rev.label = kLabelReversed;
        out.push_back(std::move(fwd));
        out.push_back(std::move(rev));
    }
    return out;
}

inline std::vector<VideoClip> make_direction_clips(const DataConfig& d, std::uint64_t seed,
                                                   std::size_t count) {
    Rng rng(seed, 7);
    std::vector<VideoClip> out;
    out.reserve(count);
    const double speed = std::max(std::abs(d.vel_col), std::abs(d.vel_row));
    for (std::size_t i = 0; i < count; ++i) {
        SquareClipSpec s = base_spec(d, rng);
        const double travel = speed * double(d.frames - 1);
        const double lo_c = travel, hi_c = double(d.width - d.square);
        const double lo_r = travel, hi_r = double(d.height - d.square);
        switch (int(rng.next_below(4))) {
            case kLabelRight: s.vel_col = speed; s.vel_row = 0; s.start_col = 0; break;
            case kLabelLeft: s.vel_col = -speed; s.vel_row = 0; s.start_col = lo_c <= hi_c ? lo_c : hi_c; break;
            case kLabelUp: s.vel_col = 0; s.vel_row = -speed; s.start_row = lo_r <= hi_r ? lo_r : hi_r; s.start_col = double((d.width - d.square) / 2); break;
            default: s.vel_col = 0; s.vel_row = speed; s.start_row = 0; s.start_col = double((d.width - d.square) / 2); break;
        }
        out.push_back(gen_moving_square(s));
    }
    return out;
}

}  // namespace vtc
