#pragma once

// Scalable-color-style patch descriptor: an HSV histogram of the 256 pixels
// of a 16x16 block, compacted by an orthonormal 1-D Haar transform. Only
// pixel colors enter the histogram, so the descriptor is invariant to any
// rearrangement of pixels inside the block.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "etcir/error.hpp"
#include "etcir/image_io.hpp"

namespace etcir {

struct Hsv {
    double h = 0.0; ///< degrees, [0, 360)
    double s = 0.0; ///< [0, 1]
    double v = 0.0; ///< [0, 1]
};

/// Hexcone conversion; hue is 0 for achromatic pixels.
inline Hsv rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8)
{
    const int mx = std::max({r8, g8, b8});
    const int mn = std::min({r8, g8, b8});
    Hsv out;
    out.v = mx / 255.0;
    if (mx == 0 || mx == mn) return out;
    const int delta = mx - mn;
    out.s = static_cast<double>(delta) / mx;
    double h = 0.0;
    if (mx == r8) {
        h = 60.0 * static_cast<double>(g8 - b8) / delta;
    } else if (mx == g8) {
        h = 60.0 * (2.0 + static_cast<double>(b8 - r8) / delta);
    } else {
        h = 60.0 * (4.0 + static_cast<double>(r8 - g8) / delta);
    }
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    out.h = h;
    return out;
}

struct ScdConfig {
    int h_bins = 16;
    int s_bins = 4;
    int v_bins = 4;
    int coeffs = 64;

    int total_bins() const { return h_bins * s_bins * v_bins; }

    void validate() const
    {
        auto pow2 = [](int x) { return x > 0 && std::has_single_bit(static_cast<unsigned>(x)); };
        detail::require(pow2(h_bins) && pow2(s_bins) && pow2(v_bins), "SCD bin counts must be powers of two");
        detail::require(coeffs >= 1 && coeffs <= total_bins(), "SCD coefficient count must be in [1, total bins]");
    }
};

using PatchDescriptor = std::vector<double>;

namespace detail {

/// Uniform bins, right-open except the last which is closed.
inline int quantize_unit(double x, int bins)
{
    return std::min(static_cast<int>(x * bins), bins - 1);
}

} // namespace detail

inline int hsv_bin(const Hsv& c, const ScdConfig& cfg)
{
    const int h = std::min(static_cast<int>(c.h / (360.0 / cfg.h_bins)), cfg.h_bins - 1);
    const int s = detail::quantize_unit(c.s, cfg.s_bins);
    const int v = detail::quantize_unit(c.v, cfg.v_bins);
    return h * (cfg.s_bins * cfg.v_bins) + s * cfg.v_bins + v;
}

/// Raw per-bin pixel counts of a block; sums to 256.
inline std::vector<int> hsv_histogram(const Block& patch, const ScdConfig& cfg)
{
    std::vector<int> counts(static_cast<std::size_t>(cfg.total_bins()), 0);
    for (std::size_t i = 0; i < patch.size(); i += 3) {
        ++counts[static_cast<std::size_t>(hsv_bin(rgb_to_hsv(patch[i], patch[i + 1], patch[i + 2]), cfg))];
    }
    return counts;
}

/// Full orthonormal Haar decomposition in place. Output layout is
/// [approximation, coarsest detail, ..., finest details]. Length must be a
/// power of two.
inline void haar_forward(std::vector<double>& x)
{
    detail::require(std::has_single_bit(x.size()), "Haar transform needs a power-of-two length");
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    std::vector<double> tmp(x.size());
    for (std::size_t len = x.size(); len > 1; len /= 2) {
        const std::size_t half = len / 2;
        for (std::size_t i = 0; i < half; ++i) {
            tmp[i] = (x[2 * i] + x[2 * i + 1]) * inv_sqrt2;
            tmp[half + i] = (x[2 * i] - x[2 * i + 1]) * inv_sqrt2;
        }
        std::copy_n(tmp.begin(), len, x.begin());
    }
}

inline PatchDescriptor compute_scd(const Block& patch, const ScdConfig& cfg = {})
{
    cfg.validate();
    const auto counts = hsv_histogram(patch, cfg);
    std::vector<double> hist(counts.size());
    const double total = kBlockSize * kBlockSize;
    for (std::size_t i = 0; i < counts.size(); ++i) hist[i] = counts[i] / total;
    haar_forward(hist);
    hist.resize(static_cast<std::size_t>(cfg.coeffs));
    return hist;
}

/// Checked entry point for callers holding a loose pixel buffer.
inline PatchDescriptor compute_scd(std::span<const std::uint8_t> patch_rgb, const ScdConfig& cfg = {})
{
    detail::require(patch_rgb.size() == kBlockBytes, "patch must be exactly 16x16 RGB");
    Block b;
    std::copy(patch_rgb.begin(), patch_rgb.end(), b.begin());
    return compute_scd(b, cfg);
}

/// One descriptor per 16x16 block, raster order.
inline std::vector<PatchDescriptor> extract_patches(const ImageBuffer& img, const ScdConfig& cfg = {})
{
    const BlockGrid grid = split_blocks(img);
    std::vector<PatchDescriptor> out;
    out.reserve(grid.size());
    for (const auto& b : grid.blocks) out.push_back(compute_scd(b, cfg));
    return out;
}

} // namespace etcir
