#pragma once

// 8-bit RGB rasters, the 16x16 block grid, and dataset manifests.

#include <algorithm>
#include <array>
#include <csetjmp>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "json.hpp"

#include "etcir/error.hpp"

namespace etcir {

inline constexpr int kBlockSize = 16;
inline constexpr std::size_t kBlockBytes = kBlockSize * kBlockSize * 3;

/// Row-major interleaved RGB image, 8 bits per channel.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill)
    {
        detail::require(w > 0 && h > 0, "invalid dimensions: image must be non-empty");
    }

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* at(int x, int y) const
    {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    bool operator==(const ImageBuffer&) const = default;
};

/// One 16x16 RGB block, row-major, interleaved channels.
using Block = std::array<std::uint8_t, kBlockBytes>;

inline std::uint8_t* block_px(Block& b, int x, int y) { return b.data() + (y * kBlockSize + x) * 3; }
inline const std::uint8_t* block_px(const Block& b, int x, int y) { return b.data() + (y * kBlockSize + x) * 3; }

/// Image decomposed into non-overlapping 16x16 blocks. Block j sits at
/// row j / cols, column j % cols.
struct BlockGrid {
    int cols = 0;
    int rows = 0;
    std::vector<Block> blocks;

    std::size_t size() const { return blocks.size(); }
    bool operator==(const BlockGrid&) const = default;
};

inline bool is_block_aligned(const ImageBuffer& img)
{
    return img.width > 0 && img.height > 0 && img.width % kBlockSize == 0 && img.height % kBlockSize == 0;
}

inline void require_block_aligned(const ImageBuffer& img)
{
    if (!is_block_aligned(img)) {
        detail::fail("invalid dimensions: " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     " is not divisible by 16");
    }
}

inline BlockGrid split_blocks(const ImageBuffer& img)
{
    require_block_aligned(img);
    BlockGrid grid;
    grid.cols = img.width / kBlockSize;
    grid.rows = img.height / kBlockSize;
    grid.blocks.resize(static_cast<std::size_t>(grid.cols) * grid.rows);
    for (int by = 0; by < grid.rows; ++by) {
        for (int bx = 0; bx < grid.cols; ++bx) {
            Block& b = grid.blocks[static_cast<std::size_t>(by) * grid.cols + bx];
            for (int y = 0; y < kBlockSize; ++y) {
                const std::uint8_t* src = img.at(bx * kBlockSize, by * kBlockSize + y);
                std::copy_n(src, kBlockSize * 3, block_px(b, 0, y));
            }
        }
    }
    return grid;
}

inline ImageBuffer assemble_blocks(const BlockGrid& grid)
{
    detail::require(grid.cols > 0 && grid.rows > 0 &&
                        grid.blocks.size() == static_cast<std::size_t>(grid.cols) * grid.rows,
                    "malformed block grid");
    ImageBuffer img(grid.cols * kBlockSize, grid.rows * kBlockSize);
    for (int by = 0; by < grid.rows; ++by) {
        for (int bx = 0; bx < grid.cols; ++bx) {
            const Block& b = grid.blocks[static_cast<std::size_t>(by) * grid.cols + bx];
            for (int y = 0; y < kBlockSize; ++y) {
                std::copy_n(block_px(b, 0, y), kBlockSize * 3, img.at(bx * kBlockSize, by * kBlockSize + y));
            }
        }
    }
    return img;
}

/// Crops to the largest centered region whose sides are multiples of 16.
inline ImageBuffer center_crop_to_blocks(const ImageBuffer& img)
{
    const int w = img.width / kBlockSize * kBlockSize;
    const int h = img.height / kBlockSize * kBlockSize;
    detail::require(w > 0 && h > 0, "invalid dimensions: image smaller than one block");
    const int x0 = (img.width - w) / 2;
    const int y0 = (img.height - h) / 2;
    ImageBuffer out(w, h);
    for (int y = 0; y < h; ++y) std::copy_n(img.at(x0, y0 + y), w * 3, out.at(0, y));
    return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageBuffer decode_pnm(const std::vector<std::uint8_t>& data)
{
    std::size_t pos = 2;
    auto skip_space = [&] {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> long {
        skip_space();
        if (pos >= data.size() || !std::isdigit(data[pos])) fail("malformed image: bad PNM header");
        long v = 0;
        while (pos < data.size() && std::isdigit(data[pos])) {
            v = v * 10 + (data[pos++] - '0');
            if (v > (1L << 24)) fail("malformed image: PNM dimension too large");
        }
        return v;
    };
    const bool gray = data[1] == '5';
    const long w = read_uint();
    const long h = read_uint();
    const long maxval = read_uint();
    if (w <= 0 || h <= 0) fail("malformed image: zero dimension");
    if (maxval != 255) fail("unsupported bit depth: PNM maxval " + std::to_string(maxval));
    if (pos >= data.size() || !std::isspace(data[pos])) fail("malformed image: bad PNM header");
    ++pos;

    const std::size_t channels = gray ? 1 : 3;
    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (data.size() - pos < need) fail("malformed image: truncated pixel data");

    ImageBuffer img(static_cast<int>(w), static_cast<int>(h));
    if (gray) {
        for (std::size_t i = 0; i < need; ++i) {
            std::fill_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, data[pos + i]);
        }
    } else {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
    }
    return img;
}

inline ImageBuffer decode_png(const std::vector<std::uint8_t>& data)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, data.data(), data.size())) {
        fail(std::string("malformed image: ") + png.message);
    }
    if (png.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&png);
        fail("unsupported bit depth: 16-bit PNG");
    }
    png.format = PNG_FORMAT_RGB;
    ImageBuffer img(static_cast<int>(png.width), static_cast<int>(png.height));
    if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = png.message;
        png_image_free(&png);
        fail("malformed image: " + msg);
    }
    return img;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Decoded into a plain byte vector first so no destructors are skipped by longjmp.
inline bool decode_jpeg_raw(const std::vector<std::uint8_t>& data, int& w, int& h, std::vector<std::uint8_t>& out,
                            std::string& message)
{
    jpeg_decompress_struct cinfo{};
    JpegErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        message = err.message;
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    w = static_cast<int>(cinfo.output_width);
    h = static_cast<int>(cinfo.output_height);
    out.resize(static_cast<std::size_t>(w) * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

inline ImageBuffer decode_jpeg(const std::vector<std::uint8_t>& data)
{
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> px;
    std::string message;
    if (!decode_jpeg_raw(data, w, h, px, message)) fail("malformed image: " + message);
    ImageBuffer img(w, h);
    img.pixels = std::move(px);
    return img;
}

inline std::string lower_ext(const std::filesystem::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

} // namespace detail

/// Reads PPM (P6/P5), PNG or JPEG; the format is sniffed from the content.
/// Grayscale is promoted to RGB by channel replication.
inline ImageBuffer load_image(const std::filesystem::path& path)
{
    const auto data = detail::read_file_bytes(path);
    if (data.size() >= 2 && data[0] == 'P' && (data[1] == '6' || data[1] == '5')) return detail::decode_pnm(data);
    if (data.size() >= 8 && png_sig_cmp(data.data(), 0, 8) == 0) return detail::decode_png(data);
    if (data.size() >= 3 && data[0] == 0xFF && data[1] == 0xD8 && data[2] == 0xFF) return detail::decode_jpeg(data);
    detail::fail("malformed image: unrecognized format in " + path.string());
}

/// Writes a lossless file; the format follows the extension (.ppm or .png).
inline void save_image(const ImageBuffer& img, const std::filesystem::path& path)
{
    detail::require(img.width > 0 && img.height > 0 &&
                        img.pixels.size() == static_cast<std::size_t>(img.width) * img.height * 3,
                    "malformed image buffer");
    const std::string ext = detail::lower_ext(path);
    if (ext == ".ppm") {
        std::ofstream out(path, std::ios::binary);
        if (!out) detail::fail("cannot write " + path.string());
        out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        if (!out) detail::fail("write failed: " + path.string());
    } else if (ext == ".png") {
        png_image png{};
        png.version = PNG_IMAGE_VERSION;
        png.width = static_cast<png_uint_32>(img.width);
        png.height = static_cast<png_uint_32>(img.height);
        png.format = PNG_FORMAT_RGB;
        if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
            detail::fail("cannot write " + path.string() + ": " + png.message);
        }
    } else {
        detail::fail("unsupported output format '" + ext + "' (use .ppm or .png)");
    }
}

// ---------------------------------------------------------------------------
// Dataset manifests

struct ManifestEntry {
    std::string image_id;
    std::filesystem::path path;
    std::string group_id;
    std::string owner_id;
};

/// Image list with group labels and owner metadata. Relative paths are
/// resolved against the manifest's directory at load time.
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::map<std::string, nlohmann::json> owners;
    bool ukbench_mode = false;

    void validate() const
    {
        std::set<std::string> seen;
        for (const auto& e : entries) {
            detail::require(!e.image_id.empty(), "manifest entry with empty image id");
            detail::require(seen.insert(e.image_id).second, "duplicate image id '" + e.image_id + "'");
            detail::require(!e.group_id.empty(), "image '" + e.image_id + "' has empty group id");
        }
    }
};

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    return out;
}

} // namespace detail

/// Parses `image_id,path,group_id,owner_id` lines. Blank lines and `#`
/// comments are skipped; the directive `# mode: ukbench` turns on the
/// four-images-per-group check. Owner records are read from an `owners.json`
/// object next to the manifest when present.
inline DatasetManifest load_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) detail::fail("cannot open manifest " + path.string());
    DatasetManifest m;
    const auto base = path.parent_path();
    std::string line;
    int lineno = 0;
    bool first_record = true;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            if (detail::trim(t.substr(1)) == "mode: ukbench") m.ukbench_mode = true;
            continue;
        }
        auto f = detail::split_csv_line(t);
        if (f.size() == 3) f.emplace_back();
        if (f.size() != 4) {
            detail::fail("manifest line " + std::to_string(lineno) + ": expected image_id,path,group_id,owner_id");
        }
        const bool header = first_record && f[0] == "image_id";
        first_record = false;
        if (header) continue;
        std::filesystem::path p = f[1];
        if (p.is_relative()) p = base / p;
        m.entries.push_back({f[0], p, f[2], f[3]});
    }
    const auto owners_path = base / "owners.json";
    if (std::filesystem::exists(owners_path)) {
        std::ifstream oin(owners_path);
        nlohmann::json j;
        try {
            oin >> j;
        } catch (const nlohmann::json::exception& e) {
            detail::fail("malformed owners.json: " + std::string(e.what()));
        }
        detail::require(j.is_object(), "owners.json must be an object keyed by owner id");
        for (auto it = j.begin(); it != j.end(); ++it) m.owners[it.key()] = it.value();
    }
    m.validate();
    return m;
}

/// Writes a manifest with paths relative to the manifest directory where possible.
inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) detail::fail("cannot write manifest " + path.string());
    if (m.ukbench_mode) out << "# mode: ukbench\n";
    out << "image_id,path,group_id,owner_id\n";
    const auto base = path.parent_path();
    for (const auto& e : m.entries) {
        auto rel = e.path.lexically_relative(base.empty() ? std::filesystem::path(".") : base);
        if (rel.empty() || *rel.begin() == "..") rel = e.path;
        out << e.image_id << ',' << rel.generic_string() << ',' << e.group_id << ',' << e.owner_id << '\n';
    }
    if (!m.owners.empty()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : m.owners) j[k] = v;
        std::ofstream o(base / "owners.json");
        o << j.dump(2) << '\n';
    }
}

} // namespace etcir
