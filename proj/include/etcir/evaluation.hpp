#pragma once

// Retrieval evaluation: average precision, the four stored/query pairings
// (plain or EtC stored images, plain / NP-canonicalized / encrypted
// queries), and codebook-size sweeps.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "etcir/codebook.hpp"
#include "etcir/error.hpp"
#include "etcir/etc_cipher.hpp"
#include "etcir/image_io.hpp"
#include "etcir/index.hpp"
#include "etcir/scd.hpp"

namespace etcir {

/// AP = (1/R) * sum over relevant hits of (hits so far / rank).
inline double average_precision(std::span<const std::string> ranked, const std::set<std::string>& relevant)
{
    detail::require(!relevant.empty(), "average precision needs a non-empty relevant set");
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (relevant.contains(ranked[i])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(relevant.size());
}

enum class EvalCondition { PlainVsPlain, EtcVsPlain, EtcVsPlainNp, EtcVsEtc };

inline constexpr std::array kAllConditions{EvalCondition::PlainVsPlain, EvalCondition::EtcVsPlain,
                                           EvalCondition::EtcVsPlainNp, EvalCondition::EtcVsEtc};

inline std::string_view to_string(EvalCondition c)
{
    switch (c) {
    case EvalCondition::PlainVsPlain: return "PLAIN_VS_PLAIN";
    case EvalCondition::EtcVsPlain: return "ETC_VS_PLAIN";
    case EvalCondition::EtcVsPlainNp: return "ETC_VS_PLAIN_NP";
    case EvalCondition::EtcVsEtc: return "ETC_VS_ETC";
    }
    return "?";
}

inline EvalCondition parse_condition(std::string_view s)
{
    for (auto c : kAllConditions) {
        if (to_string(c) == s) return c;
    }
    detail::fail("unknown condition '" + std::string(s) + "'");
}

inline bool stores_etc(EvalCondition c) { return c != EvalCondition::PlainVsPlain; }

/// Image id -> group id. Relevant set of a query: every stored id in its group.
struct GroundTruth {
    std::map<std::string, std::string> groups;

    std::set<std::string> relevant(const std::string& query_id) const
    {
        const auto it = groups.find(query_id);
        detail::require(it != groups.end(), "query '" + query_id + "' missing from ground truth");
        std::set<std::string> out;
        for (const auto& [id, g] : groups) {
            if (g == it->second) out.insert(id);
        }
        return out;
    }
};

/// Labeled dataset held in memory.
struct LabeledImage {
    std::string image_id;
    std::string group_id;
    std::string owner_id;
    ImageBuffer image;
};

using Dataset = std::vector<LabeledImage>;

inline GroundTruth ground_truth_from(const Dataset& ds)
{
    GroundTruth gt;
    for (const auto& d : ds) gt.groups[d.image_id] = d.group_id;
    return gt;
}

/// Reads `image_id,group_id` lines (blank and `#` lines skipped).
inline GroundTruth load_ground_truth(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) detail::fail("cannot open ground truth " + path.string());
    GroundTruth gt;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto f = detail::split_csv_line(t);
        detail::require(f.size() >= 2 && !f[1].empty(), "malformed ground truth line: " + t);
        if (f[0] == "image_id") continue;
        gt.groups[f[0]] = f[1];
    }
    return gt;
}

inline Dataset load_dataset(const DatasetManifest& m, bool center_crop = false)
{
    detail::require(!m.entries.empty(), "empty dataset");
    m.validate();
    Dataset ds;
    std::string report;
    for (const auto& e : m.entries) {
        try {
            auto img = load_image(e.path);
            if (center_crop) img = center_crop_to_blocks(img);
            require_block_aligned(img);
            ds.push_back({e.image_id, e.group_id, e.owner_id, std::move(img)});
        } catch (const Error& err) {
            report += "\n  " + e.image_id + ": " + err.what();
        }
    }
    if (!report.empty()) detail::fail("dataset load failed for:" + report);
    return ds;
}

/// First member of every group, in dataset order.
inline std::vector<std::size_t> query_indices(const Dataset& ds)
{
    std::set<std::string> seen;
    std::vector<std::size_t> q;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (seen.insert(ds[i].group_id).second) q.push_back(i);
    }
    return q;
}

struct EvalOptions {
    ScdConfig scd;
    int kmeans_max_iter = 100;
    double kmeans_tol = 1e-4;
    unsigned threads = 1;
    bool ukbench_mode = false; ///< require exactly four images per group
};

struct QueryAp {
    std::string query_id;
    double ap = 0.0;
};

struct EvalReport {
    EvalCondition condition = EvalCondition::PlainVsPlain;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    std::vector<QueryAp> aps;
    double map = 0.0;
    double seconds = 0.0;

    nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["condition"] = std::string(to_string(condition));
        j["M"] = m;
        j["seed"] = std::to_string(seed);
        j["mAP"] = map;
        j["seconds"] = seconds;
        auto& arr = j["queries"] = nlohmann::json::array();
        for (const auto& q : aps) arr.push_back({{"query_id", q.query_id}, {"ap", q.ap}});
        return j;
    }
};

namespace detail {

// Tags separating the independent streams expanded from one run seed.
inline constexpr std::uint64_t kOwnerKeyTag = 0x4f574e45524b4559ULL;
inline constexpr std::uint64_t kUserKeyTag = 0x555345524b455953ULL;
inline constexpr std::uint64_t kKMeansTag = 0x4b4d45414e535345ULL;

inline void validate_dataset(const Dataset& ds, const GroundTruth& gt, const EvalOptions& opt)
{
    require(!ds.empty(), "empty dataset");
    std::set<std::string> ids;
    std::map<std::string, int> group_sizes;
    for (const auto& d : ds) {
        require(ids.insert(d.image_id).second, "duplicate image id '" + d.image_id + "'");
        require(!d.group_id.empty(), "image '" + d.image_id + "' has empty group id");
        require_block_aligned(d.image);
        ++group_sizes[d.group_id];
    }
    for (const auto& d : ds) require(gt.groups.contains(d.image_id), "image '" + d.image_id + "' missing from ground truth");
    if (opt.ukbench_mode) {
        for (const auto& [g, n] : group_sizes) {
            require(n == 4, "group '" + g + "' has " + std::to_string(n) + " images, expected 4");
        }
    }
}

} // namespace detail

/// Stored-side state of one experiment: the (possibly encrypted) database,
/// its codebook and its index. Shared between conditions with the same
/// stored representation, M and seed.
struct StoredSide {
    bool etc = false;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    DescriptorIndex index;
};

/// Per-image owner keysets for a run, image i taking three consecutive draws.
inline std::vector<KeySet> owner_keysets(std::size_t count, std::uint64_t seed)
{
    SplitMix64 rng(seed ^ detail::kOwnerKeyTag);
    std::vector<KeySet> keys(count);
    for (auto& k : keys) k = {rng.next(), rng.next(), rng.next()};
    return keys;
}

inline std::vector<KeySet> user_keysets(std::size_t count, std::uint64_t seed)
{
    SplitMix64 rng(seed ^ detail::kUserKeyTag);
    std::vector<KeySet> keys(count);
    for (auto& k : keys) k = {rng.next(), rng.next(), rng.next()};
    return keys;
}

/// Stored images as the third party sees them: EtC-encrypted under fresh
/// per-image keys, or plain.
inline std::vector<StoredImage> stored_images(const Dataset& ds, bool etc, std::uint64_t seed)
{
    std::vector<StoredImage> out;
    out.reserve(ds.size());
    const auto keys = etc ? owner_keysets(ds.size(), seed) : std::vector<KeySet>{};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.push_back({ds[i].image_id, ds[i].owner_id, etc ? encrypt(ds[i].image, keys[i]) : ds[i].image});
    }
    return out;
}

/// Trains the codebook on the stored images only and indexes them.
inline StoredSide prepare_stored(const std::vector<StoredImage>& stored, bool etc, std::size_t m, std::uint64_t seed,
                                 const EvalOptions& opt)
{
    std::vector<PatchDescriptor> all;
    for (const auto& s : stored) {
        auto p = extract_patches(s.image, opt.scd);
        all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    detail::require(all.size() >= m, "M=" + std::to_string(m) + " exceeds the total patch count " +
                                         std::to_string(all.size()));
    KMeansConfig km;
    km.seed = SplitMix64(seed ^ detail::kKMeansTag).next();
    km.max_iter = opt.kmeans_max_iter;
    km.tol = opt.kmeans_tol;
    km.threads = opt.threads;
    const Codebook cb = train_codebook(all, m, km);
    return {etc, m, seed, build_index(stored, cb, opt.scd, {opt.threads})};
}

/// Runs every query of one condition against a prepared stored side.
/// Queries are independent; with threads > 1 they run concurrently and the
/// per-query results are kept in query order, so the report is identical.
inline EvalReport evaluate_queries(const Dataset& ds, const GroundTruth& gt, const StoredSide& side,
                                   EvalCondition condition, unsigned threads = 1)
{
    detail::require(side.etc == stores_etc(condition), "stored side does not match condition");
    const auto queries = query_indices(ds);
    const auto ukeys = user_keysets(ds.size(), side.seed);
    EvalReport r;
    r.condition = condition;
    r.m = side.m;
    r.seed = side.seed;
    r.aps.resize(queries.size());
    detail::parallel_for(queries.size(), threads, [&](std::size_t i) {
        const LabeledImage& q = ds[queries[i]];
        ImageBuffer img = q.image;
        QueryOptions qopt;
        switch (condition) {
        case EvalCondition::PlainVsPlain:
        case EvalCondition::EtcVsPlain: qopt.canonicalize = false; break;
        case EvalCondition::EtcVsPlainNp: break;
        case EvalCondition::EtcVsEtc: img = encrypt(img, ukeys[queries[i]]); break;
        }
        const auto desc = make_query_descriptor(img, side.index, qopt);
        std::vector<std::string> ranked;
        for (const auto& h : search(side.index, desc, side.index.entries.size())) ranked.push_back(h.image_id);
        r.aps[i] = {q.image_id, average_precision(ranked, gt.relevant(q.image_id))};
    });
    double sum = 0.0;
    for (const auto& a : r.aps) sum += a.ap;
    r.map = r.aps.empty() ? 0.0 : sum / static_cast<double>(r.aps.size());
    return r;
}

inline EvalReport run_condition(const Dataset& ds, const GroundTruth& gt, EvalCondition condition, std::size_t m,
                                std::uint64_t seed, const EvalOptions& opt = {})
{
    detail::require(m >= 2, "codebook size M must be >= 2");
    detail::validate_dataset(ds, gt, opt);
    const auto t0 = std::chrono::steady_clock::now();
    const bool etc = stores_etc(condition);
    const StoredSide side = prepare_stored(stored_images(ds, etc, seed), etc, m, seed, opt);
    EvalReport r = evaluate_queries(ds, gt, side, condition, opt.threads);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

struct SweepResult {
    std::vector<EvalReport> reports;
    std::vector<std::string> warnings;

    /// `condition,M,seed,mAP` with a header row; mAP printed to 6 decimals.
    std::string table() const
    {
        std::ostringstream out;
        out << "condition,M,seed,mAP\n";
        char buf[32];
        for (const auto& r : reports) {
            std::snprintf(buf, sizeof buf, "%.6f", r.map);
            out << to_string(r.condition) << ',' << r.m << ',' << r.seed << ',' << buf << '\n';
        }
        return out.str();
    }

    const EvalReport* find(EvalCondition c, std::size_t m, std::uint64_t seed) const
    {
        for (const auto& r : reports) {
            if (r.condition == c && r.m == m && r.seed == seed) return &r;
        }
        return nullptr;
    }
};

/// Cross product of conditions x M values x seeds, ordered by (seed, M,
/// condition). Stored sides are shared between conditions that agree on
/// (stored representation, M, seed). Duplicate entries are dropped with a
/// warning.
inline SweepResult sweep(const Dataset& ds, const GroundTruth& gt, std::vector<EvalCondition> conditions,
                         std::vector<std::size_t> m_values, std::vector<std::uint64_t> seeds,
                         const EvalOptions& opt = {})
{
    detail::require(!conditions.empty() && !m_values.empty() && !seeds.empty(), "sweep sets must be non-empty");
    SweepResult res;
    auto dedupe = [&res](auto& v, const char* what) {
        std::vector<std::decay_t<decltype(v[0])>> out;
        for (const auto& x : v) {
            if (std::find(out.begin(), out.end(), x) != out.end()) {
                std::ostringstream msg;
                if constexpr (std::is_same_v<std::decay_t<decltype(x)>, EvalCondition>) {
                    msg << "duplicate " << what << ' ' << to_string(x) << " ignored";
                } else {
                    msg << "duplicate " << what << ' ' << x << " ignored";
                }
                res.warnings.push_back(msg.str());
            } else {
                out.push_back(x);
            }
        }
        v = std::move(out);
    };
    dedupe(conditions, "condition");
    dedupe(m_values, "M value");
    dedupe(seeds, "seed");
    for (auto m : m_values) detail::require(m >= 2, "codebook size M must be >= 2");
    detail::validate_dataset(ds, gt, opt);

    for (auto seed : seeds) {
        std::optional<std::vector<StoredImage>> plain_store;
        std::optional<std::vector<StoredImage>> etc_store;
        for (auto m : m_values) {
            std::optional<StoredSide> plain_side;
            std::optional<StoredSide> etc_side;
            for (auto c : conditions) {
                const auto t0 = std::chrono::steady_clock::now();
                const bool etc = stores_etc(c);
                auto& store = etc ? etc_store : plain_store;
                auto& side = etc ? etc_side : plain_side;
                if (!store) store = stored_images(ds, etc, seed);
                if (!side) side = prepare_stored(*store, etc, m, seed, opt);
                EvalReport r = evaluate_queries(ds, gt, *side, c, opt.threads);
                r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                res.reports.push_back(std::move(r));
            }
        }
    }
    return res;
}

} // namespace etcir
