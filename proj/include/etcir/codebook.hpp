#pragma once

// Visual codebook: seeded k-means++ / Lloyd clustering of patch descriptors
// and nearest-word assignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <thread>
#include <vector>

#include "etcir/binary.hpp"
#include "etcir/error.hpp"
#include "etcir/etc_cipher.hpp"
#include "etcir/scd.hpp"

namespace etcir {

struct KMeansConfig {
    std::uint64_t seed = 0;
    int max_iter = 100;
    double tol = 1e-4;     ///< stop once the largest relative centroid shift drops below this
    unsigned threads = 1;  ///< assignment-step workers; output does not depend on it

    void validate() const
    {
        detail::require(max_iter >= 1, "k-means max_iter must be >= 1");
        detail::require(tol >= 0.0, "k-means tol must be >= 0");
    }
};

/// M centroids of dimension D, stored row-major.
struct Codebook {
    std::size_t m = 0;
    std::size_t dim = 0;
    std::uint64_t trained_on = 0;
    std::uint64_t seed = 0;
    std::vector<double> centroids;

    std::span<const double> centroid(std::size_t k) const { return {centroids.data() + k * dim, dim}; }

    bool operator==(const Codebook&) const = default;

    /// Hash over (M, D, centroid bits); the index file records it to pin the
    /// codebook it was built against.
    std::uint64_t content_hash() const
    {
        detail::Fnv1a h;
        h.update_u64(m);
        h.update_u64(dim);
        for (double c : centroids) h.update_u64(std::bit_cast<std::uint64_t>(c));
        return h.digest();
    }
};

/// Inertia after each assignment step, in order.
struct KMeansTrace {
    std::vector<double> inertia;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline std::size_t nearest(std::span<const double> x, const std::vector<double>& centroids, std::size_t m,
                           std::size_t dim, double* dist_out = nullptr)
{
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
        // partial sums are monotone, so a candidate can be dropped as soon as
        // it reaches the current best; survivors see the full, same-order sum
        const double* c = centroids.data() + k * dim;
        double d = 0.0;
        std::size_t i = 0;
        for (; i < dim; ++i) {
            const double t = x[i] - c[i];
            d += t * t;
            if (d >= best_d) break;
        }
        if (i == dim && d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (dist_out) *dist_out = best_d;
    return best;
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn)
{
    if (threads <= 1 || n < 2 * threads) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    // fixed contiguous chunks; the first exception by chunk order is rethrown
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t lo = t * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([lo, hi, &fn, &err = errors[t]] {
                try {
                    for (std::size_t i = lo; i < hi; ++i) fn(i);
                } catch (...) {
                    err = std::current_exception();
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace detail

/// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
inline std::size_t assign(std::span<const double> desc, const Codebook& cb)
{
    detail::require(desc.size() == cb.dim, "descriptor length " + std::to_string(desc.size()) +
                                               " does not match codebook dimension " + std::to_string(cb.dim));
    return detail::nearest(desc, cb.centroids, cb.m, cb.dim);
}

inline Codebook train_codebook(const std::vector<PatchDescriptor>& descriptors, std::size_t m,
                               const KMeansConfig& cfg = {}, KMeansTrace* trace = nullptr)
{
    cfg.validate();
    detail::require(m >= 2, "codebook size must be >= 2");
    const std::size_t n = descriptors.size();
    detail::require(n >= m, "need at least " + std::to_string(m) + " descriptors to train a codebook of size " +
                                std::to_string(m) + ", got " + std::to_string(n));
    const std::size_t dim = descriptors.front().size();
    detail::require(dim >= 1, "empty descriptors");
    for (const auto& d : descriptors) {
        detail::require(d.size() == dim, "descriptor dimension mismatch");
        for (double v : d) detail::require(std::isfinite(v), "non-finite descriptor value");
    }

    Codebook cb;
    cb.m = m;
    cb.dim = dim;
    cb.trained_on = n;
    cb.seed = cfg.seed;
    cb.centroids.assign(m * dim, 0.0);
    auto set_centroid = [&](std::size_t k, const PatchDescriptor& d) {
        std::copy(d.begin(), d.end(), cb.centroids.begin() + static_cast<std::ptrdiff_t>(k * dim));
    };

    // k-means++ seeding
    SplitMix64 rng(cfg.seed);
    std::vector<char> chosen(n, 0);
    std::size_t first = rng.below(n);
    chosen[first] = 1;
    set_centroid(0, descriptors[first]);
    std::vector<double> d2(n);
    detail::parallel_for(n, cfg.threads,
                         [&](std::size_t i) { d2[i] = detail::squared_distance(descriptors[i], cb.centroid(0)); });
    for (std::size_t k = 1; k < m; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += d2[i];
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                acc += d2[i];
                pick = i;
                if (acc > target) break;
            }
        } else {
            // every point coincides with a centroid already; take an unused one
            std::size_t remaining = 0;
            for (char c : chosen) remaining += c ? 0 : 1;
            std::size_t skip = rng.below(remaining);
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                if (skip-- == 0) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = 1;
        set_centroid(k, descriptors[pick]);
        detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
            d2[i] = std::min(d2[i], detail::squared_distance(descriptors[i], cb.centroid(k)));
        });
    }

    // Lloyd iterations
    std::vector<std::size_t> labels(n);
    std::vector<double> dist(n);
    std::vector<double> sums(m * dim);
    std::vector<std::size_t> counts(m);
    auto assign_all = [&] {
        detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
            labels[i] = detail::nearest(descriptors[i], cb.centroids, m, dim, &dist[i]);
        });
        double inertia = 0.0;
        for (double d : dist) inertia += d;
        if (trace) trace->inertia.push_back(inertia);
    };

    if (trace) *trace = {};
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        assign_all();
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = labels[i];
            ++counts[k];
            for (std::size_t c = 0; c < dim; ++c) sums[k * dim + c] += descriptors[i][c];
        }
        std::vector<double> next(m * dim);
        std::vector<char> reseeded(n, 0);
        for (std::size_t k = 0; k < m; ++k) {
            if (counts[k] > 0) {
                for (std::size_t c = 0; c < dim; ++c) next[k * dim + c] = sums[k * dim + c] / counts[k];
                continue;
            }
            // empty cluster: move it onto the point worst served by its centroid
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!reseeded[i] && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            reseeded[far] = 1;
            std::copy(descriptors[far].begin(), descriptors[far].end(),
                      next.begin() + static_cast<std::ptrdiff_t>(k * dim));
        }
        double max_shift = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const std::span<const double> old = cb.centroid(k);
            const std::span<const double> now{next.data() + k * dim, dim};
            double norm2 = 0.0;
            for (double v : old) norm2 += v * v;
            const double norm = std::sqrt(norm2);
            const double shift = std::sqrt(detail::squared_distance(old, now));
            max_shift = std::max(max_shift, shift / std::max(norm, std::numeric_limits<double>::min()));
        }
        cb.centroids = std::move(next);
        if (trace) trace->iterations = iter + 1;
        if (max_shift < cfg.tol) {
            if (trace) trace->converged = true;
            break;
        }
    }
    if (trace) assign_all();
    return cb;
}

// ---------------------------------------------------------------------------
// Codebook file: "ETCB1", M, D, seed, trained_on (u64 LE), then M*D f64 LE.

inline constexpr char kCodebookMagic[] = "ETCB";
inline constexpr char kCodebookVersion = '1';

inline void save_codebook(const Codebook& cb, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) detail::fail("cannot write codebook " + path.string());
    out.write(kCodebookMagic, 4);
    out.put(kCodebookVersion);
    detail::write_u64(out, cb.m);
    detail::write_u64(out, cb.dim);
    detail::write_u64(out, cb.seed);
    detail::write_u64(out, cb.trained_on);
    for (double c : cb.centroids) detail::write_f64(out, c);
    if (!out) detail::fail("write failed: " + path.string());
}

inline Codebook load_codebook(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail("cannot open codebook " + path.string());
    char magic[5] = {};
    if (!in.read(magic, 5) || std::string_view(magic, 4) != kCodebookMagic) {
        detail::fail("not a codebook: " + path.string());
    }
    if (magic[4] != kCodebookVersion) {
        detail::fail("codebook version mismatch: found '" + std::string(1, magic[4]) + "', expected '" +
                     std::string(1, kCodebookVersion) + "'");
    }
    Codebook cb;
    cb.m = detail::read_u64(in, "codebook");
    cb.dim = detail::read_u64(in, "codebook");
    cb.seed = detail::read_u64(in, "codebook");
    cb.trained_on = detail::read_u64(in, "codebook");
    detail::require(cb.m >= 2 && cb.dim >= 1 && cb.m <= (1u << 24) && cb.dim <= (1u << 16),
                    "corrupt codebook header");
    cb.centroids.resize(cb.m * cb.dim);
    for (auto& c : cb.centroids) {
        c = detail::read_f64(in, "codebook");
        detail::require(std::isfinite(c), "corrupt codebook: non-finite centroid");
    }
    if (in.peek() != std::ifstream::traits_type::eof()) detail::fail("corrupt codebook: trailing bytes");
    return cb;
}

} // namespace etcir
