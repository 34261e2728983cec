#pragma once

// Bag-of-visual-words image descriptors with tf-idf weighting, the stored
// descriptor index, and ranked cosine-similarity search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "etcir/binary.hpp"
#include "etcir/codebook.hpp"
#include "etcir/error.hpp"
#include "etcir/etc_cipher.hpp"
#include "etcir/image_io.hpp"
#include "etcir/scd.hpp"

namespace etcir {

/// tf(m) for one image: how many of its patches were assigned to word m.
struct RawHistogram {
    std::vector<std::uint64_t> counts;

    std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
    bool operator==(const RawHistogram&) const = default;
};

/// l2-normalized tf-idf vector, or all zeros when every component vanished.
using WeightedDescriptor = std::vector<double>;

inline RawHistogram build_histogram(const std::vector<PatchDescriptor>& patches, const Codebook& cb)
{
    detail::require(!patches.empty(), "cannot build a histogram from zero patches");
    RawHistogram h{std::vector<std::uint64_t>(cb.m, 0)};
    for (const auto& p : patches) ++h.counts[assign(p, cb)];
    return h;
}

/// df(m): number of histograms with a non-zero m-th component.
inline std::vector<std::uint64_t> compute_df(std::span<const RawHistogram> histograms)
{
    detail::require(!histograms.empty(), "cannot compute df over zero histograms");
    const std::size_t m = histograms.front().counts.size();
    std::vector<std::uint64_t> df(m, 0);
    for (const auto& h : histograms) {
        detail::require(h.counts.size() == m, "histogram length mismatch in df computation");
        for (std::size_t k = 0; k < m; ++k) df[k] += h.counts[k] > 0 ? 1 : 0;
    }
    return df;
}

/// (1 + ln tf) * ln(N / df), natural log. Zero when tf = 0 or df = 0.
inline double tfidf_component(std::uint64_t tf, std::uint64_t df, std::uint64_t n)
{
    if (tf == 0 || df == 0) return 0.0;
    return (1.0 + std::log(static_cast<double>(tf))) * std::log(static_cast<double>(n) / static_cast<double>(df));
}

inline void l2_normalize(std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s <= 0.0) return;
    const double inv = 1.0 / std::sqrt(s);
    for (double& x : v) x *= inv;
}

inline WeightedDescriptor tfidf_weight(const RawHistogram& h, std::span<const std::uint64_t> df, std::uint64_t n)
{
    detail::require(n >= 1, "tf-idf weighting needs N >= 1");
    detail::require(h.counts.size() == df.size(), "histogram and df lengths differ");
    WeightedDescriptor v(h.counts.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        detail::require(df[k] <= n, "df exceeds N");
        v[k] = tfidf_component(h.counts[k], df[k], n);
    }
    l2_normalize(v);
    return v;
}

struct IndexEntry {
    std::string image_id;
    std::string owner_id;
    WeightedDescriptor descriptor;

    bool operator==(const IndexEntry&) const = default;
};

/// Descriptors of the stored images plus the statistics (N, df) that query
/// weighting reuses. Immutable once built.
struct DescriptorIndex {
    std::uint64_t n = 0;
    std::vector<std::uint64_t> df;
    std::vector<IndexEntry> entries;
    Codebook codebook;
    ScdConfig scd;

    std::size_t m() const { return codebook.m; }
    bool operator==(const DescriptorIndex& o) const
    {
        return n == o.n && df == o.df && entries == o.entries && codebook == o.codebook;
    }
};

/// A stored image already in memory (plain or EtC; the pipeline is identical).
struct StoredImage {
    std::string image_id;
    std::string owner_id;
    ImageBuffer image;
};

struct IndexBuildOptions {
    unsigned threads = 1;
};

inline DescriptorIndex build_index(const std::vector<StoredImage>& images, const Codebook& cb,
                                   const ScdConfig& scd = {}, const IndexBuildOptions& opt = {})
{
    detail::require(!images.empty(), "empty dataset");
    detail::require(static_cast<std::size_t>(scd.coeffs) == cb.dim, "SCD coefficient count " +
                                                                         std::to_string(scd.coeffs) +
                                                                         " does not match codebook dimension");
    {
        std::set<std::string> ids;
        for (const auto& s : images) detail::require(ids.insert(s.image_id).second, "duplicate image id '" + s.image_id + "'");
    }
    std::vector<RawHistogram> hists(images.size());
    std::vector<std::string> errors(images.size());
    detail::parallel_for(images.size(), opt.threads, [&](std::size_t i) {
        try {
            hists[i] = build_histogram(extract_patches(images[i].image, scd), cb);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    std::string report;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!errors[i].empty()) report += "\n  " + images[i].image_id + ": " + errors[i];
    }
    if (!report.empty()) detail::fail("index build failed for:" + report);

    DescriptorIndex idx;
    idx.n = images.size();
    idx.df = compute_df(hists);
    idx.codebook = cb;
    idx.scd = scd;
    idx.entries.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        idx.entries.push_back({images[i].image_id, images[i].owner_id, tfidf_weight(hists[i], idx.df, idx.n)});
    }
    return idx;
}

/// Loads every manifest image and indexes it. Load failures are collected
/// per image id; no index is produced if any image fails.
inline DescriptorIndex build_index(const DatasetManifest& manifest, const Codebook& cb, const ScdConfig& scd = {},
                                   const IndexBuildOptions& opt = {})
{
    detail::require(!manifest.entries.empty(), "empty dataset");
    manifest.validate();
    std::vector<StoredImage> images;
    std::string report;
    for (const auto& e : manifest.entries) {
        try {
            auto img = load_image(e.path);
            require_block_aligned(img);
            images.push_back({e.image_id, e.owner_id, std::move(img)});
        } catch (const Error& err) {
            report += "\n  " + e.image_id + ": " + err.what();
        }
    }
    if (!report.empty()) detail::fail("index build failed for:" + report);
    return build_index(images, cb, scd, opt);
}

struct QueryOptions {
    /// Apply the alternating negative-positive transform before extraction.
    /// Only the no-NP evaluation baselines turn this off.
    bool canonicalize = true;
};

/// Query pipeline: canonicalize, extract patches, histogram against the
/// stored codebook, weight with the index's N and df. Plain and encrypted
/// queries go through exactly the same steps.
inline WeightedDescriptor make_query_descriptor(const ImageBuffer& img, const DescriptorIndex& idx,
                                                const QueryOptions& opt = {})
{
    const ImageBuffer q = opt.canonicalize ? canonicalize_query(img) : img;
    const RawHistogram h = build_histogram(extract_patches(q, idx.scd), idx.codebook);
    return tfidf_weight(h, idx.df, idx.n);
}

struct SearchHit {
    std::string image_id;
    std::string owner_id;
    double score = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Cosine similarity ranking: descending score, ties by ascending image id.
inline std::vector<SearchHit> search(const DescriptorIndex& idx, std::span<const double> q, std::size_t top_k)
{
    detail::require(top_k >= 1, "top_k must be >= 1");
    detail::require(q.size() == idx.m(), "query descriptor length " + std::to_string(q.size()) +
                                             " does not match index M=" + std::to_string(idx.m()));
    std::vector<SearchHit> hits;
    hits.reserve(idx.entries.size());
    for (const auto& e : idx.entries) hits.push_back({e.image_id, e.owner_id, dot(q, e.descriptor)});
    const std::size_t k = std::min(top_k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.image_id < b.image_id;
                      });
    hits.resize(k);
    return hits;
}

/// `rank,image_id,owner_id,score` lines, rank starting at 1.
inline void write_hits(std::ostream& out, const std::vector<SearchHit>& hits)
{
    const auto old_prec = out.precision(17);
    for (std::size_t i = 0; i < hits.size(); ++i) {
        out << (i + 1) << ',' << hits[i].image_id << ',' << hits[i].owner_id << ',' << hits[i].score << '\n';
    }
    out.precision(old_prec);
}

// ---------------------------------------------------------------------------
// Index file: "ETCI1", codebook hash, N, M, df[M] (u64 LE), then per entry
// image id, owner id (u32 length + bytes) and M f64 LE values.

inline constexpr char kIndexMagic[] = "ETCI";
inline constexpr char kIndexVersion = '1';

inline void save_index(const DescriptorIndex& idx, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) detail::fail("cannot write index " + path.string());
    out.write(kIndexMagic, 4);
    out.put(kIndexVersion);
    detail::write_u64(out, idx.codebook.content_hash());
    detail::write_u64(out, idx.n);
    detail::write_u64(out, idx.m());
    for (auto d : idx.df) detail::write_u64(out, d);
    for (const auto& e : idx.entries) {
        detail::write_str(out, e.image_id);
        detail::write_str(out, e.owner_id);
        for (double v : e.descriptor) detail::write_f64(out, v);
    }
    if (!out) detail::fail("write failed: " + path.string());
}

/// Checks df against the stored descriptors. Weighted components are
/// non-zero exactly when tf > 0 and 0 < df < N, so for those words the
/// non-zero count must equal df; words never seen, or seen everywhere, must
/// be zero in every entry.
inline void verify_df(const DescriptorIndex& idx)
{
    for (std::size_t k = 0; k < idx.m(); ++k) {
        detail::require(idx.df[k] <= idx.n, "df inconsistent: df exceeds N at word " + std::to_string(k));
        std::uint64_t nonzero = 0;
        for (const auto& e : idx.entries) nonzero += e.descriptor[k] != 0.0 ? 1 : 0;
        const bool ok = nonzero > 0 ? nonzero == idx.df[k] : (idx.df[k] == 0 || idx.df[k] == idx.n);
        detail::require(ok, "df inconsistent at word " + std::to_string(k));
    }
}

inline DescriptorIndex load_index(const std::filesystem::path& path, const Codebook& cb, const ScdConfig& scd = {})
{
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail("cannot open index " + path.string());
    char magic[5] = {};
    if (!in.read(magic, 5) || std::string_view(magic, 4) != kIndexMagic) detail::fail("not an index: " + path.string());
    if (magic[4] != kIndexVersion) detail::fail("index version mismatch");
    const std::uint64_t hash = detail::read_u64(in, "index");
    if (hash != cb.content_hash()) detail::fail("index was built with a different codebook (hash mismatch)");
    DescriptorIndex idx;
    idx.codebook = cb;
    idx.scd = scd;
    idx.n = detail::read_u64(in, "index");
    const std::uint64_t m = detail::read_u64(in, "index");
    detail::require(m == cb.m, "index M does not match codebook");
    detail::require(idx.n >= 1 && idx.n <= (1u << 26), "corrupt index: bad N");
    idx.df.resize(m);
    for (auto& d : idx.df) d = detail::read_u64(in, "index");
    idx.entries.resize(idx.n);
    for (auto& e : idx.entries) {
        e.image_id = detail::read_str(in, "index");
        e.owner_id = detail::read_str(in, "index");
        e.descriptor.resize(m);
        for (auto& v : e.descriptor) {
            v = detail::read_f64(in, "index");
            detail::require(std::isfinite(v), "corrupt index: non-finite descriptor value");
        }
    }
    if (in.peek() != std::ifstream::traits_type::eof()) detail::fail("corrupt index: trailing bytes");
    verify_df(idx);
    return idx;
}

} // namespace etcir
