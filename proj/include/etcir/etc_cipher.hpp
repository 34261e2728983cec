#pragma once

// Block-scrambling EtC encryption: block permutation, per-block rotation /
// inversion, and per-block negative-positive transform, each keyed by its own
// 64-bit seed. Also hosts the key-independent alternating negative-positive
// transform applied to every query before descriptor extraction.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "etcir/error.hpp"
#include "etcir/image_io.hpp"

namespace etcir {

/// splitmix64; every keyed stream in the library is expanded from one of these.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next()
    {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Unbiased integer in [0, bound) by rejection.
    std::uint64_t below(std::uint64_t bound)
    {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

struct KeySet {
    std::uint64_t k_perm = 0;
    std::uint64_t k_rot = 0;
    std::uint64_t k_np = 0;

    bool operator==(const KeySet&) const = default;
};

/// Per-block randomness expanded from a KeySet. Rotation codes and NP bits
/// are indexed by output position, i.e. after permutation.
struct CipherStreams {
    std::vector<std::size_t> permutation;
    std::vector<std::uint8_t> d4_codes;
    std::vector<std::uint8_t> np_bits;

    bool operator==(const CipherStreams&) const = default;
};

inline CipherStreams derive_streams(const KeySet& keys, std::size_t n)
{
    detail::require(n >= 1, "empty image");
    CipherStreams s;
    s.permutation.resize(n);
    std::iota(s.permutation.begin(), s.permutation.end(), std::size_t{0});
    SplitMix64 perm_rng(keys.k_perm);
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(s.permutation[i], s.permutation[perm_rng.below(i + 1)]);
    }
    SplitMix64 rot_rng(keys.k_rot);
    SplitMix64 np_rng(keys.k_np);
    s.d4_codes.resize(n);
    s.np_bits.resize(n);
    for (std::size_t j = 0; j < n; ++j) s.d4_codes[j] = static_cast<std::uint8_t>(rot_rng.next() >> 61);
    for (std::size_t j = 0; j < n; ++j) s.np_bits[j] = static_cast<std::uint8_t>(np_rng.next() >> 63);
    return s;
}

inline std::vector<std::size_t> invert_permutation(std::span<const std::size_t> perm)
{
    std::vector<std::size_t> inv(perm.size(), perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j) {
        detail::require(perm[j] < perm.size() && inv[perm[j]] == perm.size(), "not a permutation");
        inv[perm[j]] = j;
    }
    return inv;
}

/// Input block j lands at output position perm[j].
inline BlockGrid permute_blocks(const BlockGrid& grid, std::span<const std::size_t> perm)
{
    detail::require(perm.size() == grid.size(), "permutation size does not match block count");
    invert_permutation(perm);
    BlockGrid out = grid;
    for (std::size_t j = 0; j < perm.size(); ++j) out.blocks[perm[j]] = grid.blocks[j];
    return out;
}

// ---------------------------------------------------------------------------
// Dihedral group on a 16x16 block. Codes 0-3 rotate clockwise by 0/90/180/270
// degrees; codes 4-7 mirror horizontally first, then rotate likewise.

inline Block rotate_cw(const Block& b)
{
    Block out;
    for (int y = 0; y < kBlockSize; ++y) {
        for (int x = 0; x < kBlockSize; ++x) {
            const std::uint8_t* src = block_px(b, y, kBlockSize - 1 - x);
            std::copy_n(src, 3, block_px(out, x, y));
        }
    }
    return out;
}

inline Block mirror_horizontal(const Block& b)
{
    Block out;
    for (int y = 0; y < kBlockSize; ++y) {
        for (int x = 0; x < kBlockSize; ++x) std::copy_n(block_px(b, kBlockSize - 1 - x, y), 3, block_px(out, x, y));
    }
    return out;
}

inline Block apply_d4(const Block& b, int code)
{
    detail::require(code >= 0 && code < 8, "rotation/inversion code out of range: " + std::to_string(code));
    Block out = code >= 4 ? mirror_horizontal(b) : b;
    for (int r = 0; r < code % 4; ++r) out = rotate_cw(out);
    return out;
}

/// Rotations invert to the opposite rotation; the mirrored elements are involutions.
constexpr int inverse_d4(int code) { return code < 4 ? (4 - code) % 4 : code; }

inline BlockGrid transform_blocks(const BlockGrid& grid, std::span<const std::uint8_t> codes)
{
    detail::require(codes.size() == grid.size(), "rotation code count does not match block count");
    BlockGrid out = grid;
    for (std::size_t j = 0; j < codes.size(); ++j) out.blocks[j] = apply_d4(grid.blocks[j], codes[j]);
    return out;
}

inline void negate_block(Block& b)
{
    for (auto& p : b) p = static_cast<std::uint8_t>(255 - p);
}

/// p' = 255 - p on every channel of block j when bits[j] is set.
inline BlockGrid np_transform(const BlockGrid& grid, std::span<const std::uint8_t> bits)
{
    detail::require(bits.size() == grid.size(), "NP bit count does not match block count");
    BlockGrid out = grid;
    for (std::size_t j = 0; j < bits.size(); ++j) {
        if (bits[j]) negate_block(out.blocks[j]);
    }
    return out;
}

inline ImageBuffer encrypt(const ImageBuffer& img, const KeySet& keys)
{
    BlockGrid grid = split_blocks(img);
    const CipherStreams s = derive_streams(keys, grid.size());
    grid = permute_blocks(grid, s.permutation);
    grid = transform_blocks(grid, s.d4_codes);
    grid = np_transform(grid, s.np_bits);
    return assemble_blocks(grid);
}

/// Inverse of encrypt. Wrong keys produce a valid but scrambled image; there
/// is no integrity check.
inline ImageBuffer decrypt(const ImageBuffer& etc, const KeySet& keys)
{
    BlockGrid grid = split_blocks(etc);
    const CipherStreams s = derive_streams(keys, grid.size());
    grid = np_transform(grid, s.np_bits);
    std::vector<std::uint8_t> inv_codes(s.d4_codes.size());
    for (std::size_t j = 0; j < inv_codes.size(); ++j) inv_codes[j] = static_cast<std::uint8_t>(inverse_d4(s.d4_codes[j]));
    grid = transform_blocks(grid, inv_codes);
    grid = permute_blocks(grid, invert_permutation(s.permutation));
    return assemble_blocks(grid);
}

/// Alternating negative-positive transform: odd raster-order blocks are
/// negated, even ones kept. Key-independent and an involution.
inline ImageBuffer canonicalize_query(const ImageBuffer& img)
{
    BlockGrid grid = split_blocks(img);
    for (std::size_t j = 1; j < grid.size(); j += 2) negate_block(grid.blocks[j]);
    return assemble_blocks(grid);
}

// ---------------------------------------------------------------------------
// Key files: JSON array of {key_id, k_perm, k_rot, k_np}, seeds as unsigned
// 64-bit decimal strings.

struct NamedKeySet {
    std::string key_id;
    KeySet keys;
};

inline KeySet random_keyset(std::mt19937_64& entropy) { return {entropy(), entropy(), entropy()}; }

inline void save_keys(const std::vector<NamedKeySet>& keys, const std::filesystem::path& path)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& k : keys) {
        arr.push_back({{"key_id", k.key_id},
                       {"k_perm", std::to_string(k.keys.k_perm)},
                       {"k_rot", std::to_string(k.keys.k_rot)},
                       {"k_np", std::to_string(k.keys.k_np)}});
    }
    std::ofstream out(path);
    if (!out) detail::fail("cannot write key file " + path.string());
    out << arr.dump(2) << '\n';
    if (!out) detail::fail("write failed: " + path.string());
}

namespace detail {

inline std::uint64_t parse_seed(const nlohmann::json& v, const char* field)
{
    require(v.is_string(), std::string("key field '") + field + "' must be a decimal string");
    const auto& s = v.get_ref<const std::string&>();
    require(!s.empty() && s.find_first_not_of("0123456789") == std::string::npos,
            std::string("key field '") + field + "' is not an unsigned decimal");
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
        x = std::stoull(s, &used, 10);
    } catch (const std::exception&) {
        fail(std::string("key field '") + field + "' out of 64-bit range");
    }
    return static_cast<std::uint64_t>(x);
}

} // namespace detail

inline std::vector<NamedKeySet> load_keys(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) detail::fail("cannot open key file " + path.string());
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        detail::fail("malformed key file: " + std::string(e.what()));
    }
    detail::require(arr.is_array(), "malformed key file: expected an array");
    std::vector<NamedKeySet> keys;
    for (const auto& r : arr) {
        detail::require(r.is_object() && r.contains("key_id") && r.contains("k_perm") && r.contains("k_rot") &&
                            r.contains("k_np"),
                        "malformed key file: record missing fields");
        detail::require(r.at("key_id").is_string(), "malformed key file: key_id must be a string");
        keys.push_back({r.at("key_id").get<std::string>(),
                        {detail::parse_seed(r.at("k_perm"), "k_perm"), detail::parse_seed(r.at("k_rot"), "k_rot"),
                         detail::parse_seed(r.at("k_np"), "k_np")}});
    }
    return keys;
}

} // namespace etcir
