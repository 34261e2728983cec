#pragma once

// Synthetic retrieval benchmark: each group is one random scene (a color
// gradient blended with a noise-field color map, plus many small shapes
// under luminance texture) rendered four times, the first as the original
// and the rest under small zoom/shift and photometric jitter with fresh
// sensor noise. Stands in for UKbench-style data at desk scale.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "etcir/etc_cipher.hpp"
#include "etcir/image_io.hpp"

namespace etcir {

struct SynthConfig {
    int groups = 50;
    int per_group = 4;
    int width = 128;
    int height = 96;
    std::uint64_t seed = 2024;
    double jitter = 1.0;       ///< scales the geometric and photometric perturbation ranges
    double noise = 4.0;        ///< mean sensor-noise standard deviation, in 8-bit levels
    double object_scale = 0.25; ///< scales shape radii; shape count grows as it shrinks
    double texture = 0.3;      ///< amplitude of multiplicative fractal luminance texture
    double shading = 0.5;      ///< strength of radial shading on ellipses
    double tone_floor = 96.0;   ///< output levels are mapped affinely from [0, 255] onto [tone_floor, 255]
    double field = 0.8;        ///< blend weight of the noise-field color map in the background
};

struct SynthImage {
    std::string image_id;
    std::string group_id;
    std::string owner_id;
    ImageBuffer image;
};

namespace detail {

using Rgb = std::array<double, 3>;

struct Shape {
    enum Kind { ellipse, rect, stripes } kind;
    double cx, cy, rx, ry, angle;
    Rgb color;
    Rgb color2;
    double period;
};

struct Scene {
    Rgb bg0, bg1;
    std::array<Rgb, 4> stops{};
    double field = 0.0;
    std::uint64_t field_seed = 0;
    double gx, gy;
    std::vector<Shape> shapes;
    std::uint64_t texture_seed = 0;
    double texture = 0.0;
    double shading = 0.0;
};

/// Lattice value in [0, 1) hashed from integer coordinates.
inline double lattice(std::uint64_t seed, long x, long y)
{
    SplitMix64 h(seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                 (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL));
    h.next();
    return h.uniform();
}

inline double value_noise(std::uint64_t seed, double x, double y)
{
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const long ix = static_cast<long>(fx);
    const long iy = static_cast<long>(fy);
    const double tx = x - fx;
    const double ty = y - fy;
    const double sx = tx * tx * (3 - 2 * tx);
    const double sy = ty * ty * (3 - 2 * ty);
    const double a = lattice(seed, ix, iy);
    const double b = lattice(seed, ix + 1, iy);
    const double c = lattice(seed, ix, iy + 1);
    const double d = lattice(seed, ix + 1, iy + 1);
    return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

/// Four octaves starting at a 24-pixel period; roughly in [0, 1].
inline double fractal_noise(std::uint64_t seed, double x, double y)
{
    double sum = 0.0;
    double amp = 0.5;
    double freq = 1.0 / 24.0;
    for (int o = 0; o < 4; ++o) {
        sum += amp * value_noise(seed + static_cast<std::uint64_t>(o), x * freq, y * freq);
        amp *= 0.5;
        freq *= 2.0;
    }
    return sum / 0.9375;
}

struct Jitter {
    double zoom = 1.0;
    double dx = 0.0;
    double dy = 0.0;
    Rgb gain{1.0, 1.0, 1.0};
    Rgb bias{0.0, 0.0, 0.0};
    double noise = 0.0;
};

inline double in_range(SplitMix64& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline Rgb random_color(SplitMix64& rng)
{
    return {rng.uniform() * 255.0, rng.uniform() * 255.0, rng.uniform() * 255.0};
}

inline Scene random_scene(SplitMix64& rng, int w, int h, const SynthConfig& cfg)
{
    auto pick = [&] { return random_color(rng); };
    Scene s;
    s.bg0 = pick();
    s.bg1 = pick();
    const double a = in_range(rng, 0.0, 2.0 * M_PI);
    s.gx = std::cos(a) / w;
    s.gy = std::sin(a) / h;
    for (auto& c : s.stops) c = pick();
    s.field = cfg.field;
    s.field_seed = rng.next();
    s.texture_seed = rng.next();
    s.texture = cfg.texture;
    s.shading = cfg.shading;
    // smaller shapes come in proportionally larger numbers
    const int count = static_cast<int>((3 + rng.below(6)) / std::max(cfg.object_scale, 0.25));
    for (int i = 0; i < count; ++i) {
        Shape sh{};
        sh.kind = static_cast<Shape::Kind>(rng.below(3));
        sh.cx = in_range(rng, 0.0, w);
        sh.cy = in_range(rng, 0.0, h);
        sh.rx = in_range(rng, 0.08, 0.35) * cfg.object_scale * w;
        sh.ry = in_range(rng, 0.08, 0.35) * cfg.object_scale * h;
        sh.angle = in_range(rng, 0.0, M_PI);
        sh.color = pick();
        sh.color2 = pick();
        sh.period = in_range(rng, 4.0, 14.0);
        s.shapes.push_back(sh);
    }
    return s;
}

inline Rgb shade(const Scene& s, double x, double y, int w, int h)
{
    const double t = std::clamp(0.5 + (x - w / 2.0) * s.gx + (y - h / 2.0) * s.gy, 0.0, 1.0);
    Rgb c;
    for (int k = 0; k < 3; ++k) c[k] = s.bg0[k] * (1.0 - t) + s.bg1[k] * t;
    if (s.field > 0.0) {
        // gradient map of a noise field through four color stops
        const double f = std::clamp(fractal_noise(s.field_seed, x * 0.5, y * 0.5), 0.0, 1.0) * 3.0;
        const int i = std::min(static_cast<int>(f), 2);
        const double u = f - i;
        for (int k = 0; k < 3; ++k) {
            const double fc = s.stops[i][k] * (1.0 - u) + s.stops[i + 1][k] * u;
            c[k] = c[k] * (1.0 - s.field) + fc * s.field;
        }
    }
    for (const auto& sh : s.shapes) {
        const double ca = std::cos(sh.angle);
        const double sa = std::sin(sh.angle);
        const double u = ((x - sh.cx) * ca + (y - sh.cy) * sa) / sh.rx;
        const double v = (-(x - sh.cx) * sa + (y - sh.cy) * ca) / sh.ry;
        bool inside = false;
        switch (sh.kind) {
        case Shape::ellipse: inside = u * u + v * v <= 1.0; break;
        case Shape::rect:
        case Shape::stripes: inside = std::abs(u) <= 1.0 && std::abs(v) <= 1.0; break;
        }
        if (!inside) continue;
        if (sh.kind == Shape::stripes && std::fmod(std::abs(u * sh.rx), sh.period) < sh.period / 2) {
            c = sh.color2;
        } else {
            c = sh.color;
        }
        if (sh.kind == Shape::ellipse && s.shading > 0.0) {
            const double lit = 1.0 - s.shading * (u * u + v * v);
            for (auto& ch : c) ch *= lit;
        }
    }
    if (s.texture > 0.0) {
        const double t = 1.0 + s.texture * (2.0 * fractal_noise(s.texture_seed, x, y) - 1.0);
        for (auto& ch : c) ch *= t;
    }
    return c;
}

/// Box-Muller normal deviate.
inline double gaussian(SplitMix64& rng)
{
    const double u1 = std::max(rng.uniform(), 1e-300);
    const double u2 = rng.uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline ImageBuffer render(const Scene& s, const Jitter& j, int w, int h, double floor, SplitMix64& noise_rng)
{
    const double scale = (255.0 - floor) / 255.0;
    ImageBuffer img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // sample the scene through a zoom about the center plus a shift
            const double sx = (x - w / 2.0) / j.zoom + w / 2.0 + j.dx;
            const double sy = (y - h / 2.0) / j.zoom + h / 2.0 + j.dy;
            const Rgb c = shade(s, sx, sy, w, h);
            std::uint8_t* px = img.at(x, y);
            for (int k = 0; k < 3; ++k) {
                const double v = floor + scale * (c[k] * j.gain[k] + j.bias[k]) + j.noise * gaussian(noise_rng);
                px[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return img;
}

} // namespace detail

/// Deterministic in cfg. Image ids are `g<group>_<member>`; owners rotate
/// over five synthetic owner ids.
inline std::vector<SynthImage> generate_synthetic(const SynthConfig& cfg)
{
    detail::require(cfg.groups >= 1 && cfg.per_group >= 1, "synthetic dataset needs groups >= 1 and per_group >= 1");
    detail::require(cfg.width % kBlockSize == 0 && cfg.height % kBlockSize == 0 && cfg.width > 0 && cfg.height > 0,
                    "invalid dimensions: synthetic image size must be a positive multiple of 16");
    SplitMix64 rng(cfg.seed);
    std::vector<SynthImage> out;
    out.reserve(static_cast<std::size_t>(cfg.groups) * cfg.per_group);
    char buf[64];
    for (int g = 0; g < cfg.groups; ++g) {
        const detail::Scene scene = detail::random_scene(rng, cfg.width, cfg.height, cfg);
        for (int k = 0; k < cfg.per_group; ++k) {
            detail::Jitter j;
            const double a = cfg.jitter;
            j.noise = cfg.noise * detail::in_range(rng, 0.5, 1.5);
            if (k > 0) {
                j.zoom = 1.0 + detail::in_range(rng, 0.0, 0.15 * a);
                j.dx = detail::in_range(rng, -0.06, 0.06) * a * cfg.width;
                j.dy = detail::in_range(rng, -0.06, 0.06) * a * cfg.height;
                const double light = 1.0 + detail::in_range(rng, -0.15, 0.15) * a;
                for (int c = 0; c < 3; ++c) {
                    j.gain[c] = light * (1.0 + detail::in_range(rng, -0.05, 0.05) * a);
                    j.bias[c] = detail::in_range(rng, -12.0, 12.0) * a;
                }
            }
            SplitMix64 noise_rng(rng.next());
            std::snprintf(buf, sizeof buf, "g%03d_%d", g, k);
            std::string id = buf;
            std::snprintf(buf, sizeof buf, "group%03d", g);
            std::string group = buf;
            std::snprintf(buf, sizeof buf, "owner%d", g % 5);
            out.push_back({id, group, buf, detail::render(scene, j, cfg.width, cfg.height, cfg.tone_floor, noise_rng)});
        }
    }
    return out;
}

/// Writes PNGs, `manifest.csv` and `owners.json` under dir.
inline DatasetManifest write_synthetic(const std::vector<SynthImage>& images, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir / "images");
    DatasetManifest m;
    for (const auto& s : images) {
        const auto p = dir / "images" / (s.image_id + ".png");
        save_image(s.image, p);
        m.entries.push_back({s.image_id, p, s.group_id, s.owner_id});
        if (!m.owners.contains(s.owner_id)) {
            m.owners[s.owner_id] = {{"name", "Synthetic " + s.owner_id},
                                    {"contact", s.owner_id + "@example.org"}};
        }
    }
    save_manifest(m, dir / "manifest.csv");
    return m;
}

} // namespace etcir
