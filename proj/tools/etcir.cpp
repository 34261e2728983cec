// etcir: key generation, EtC encryption, indexing, querying and evaluation
// from the command line.
//
// Exit status: 0 success, 1 usage error, 2 data error. Results go to stdout,
// diagnostics to stderr.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "etcir/etcir.hpp"

namespace fs = std::filesystem;
using namespace etcir;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Settings shared by all subcommands. Loaded from a JSON file, then
/// overridden by flags.
struct CliConfig {
    ScdConfig scd;
    KMeansConfig kmeans;
    std::size_t m = 256;
    std::size_t top_k = 10;
    std::uint64_t seed = 1;
    std::string keys;
    std::string codebook;
    std::string index;

    void validate() const
    {
        try {
            scd.validate();
            kmeans.validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        if (m < 2) throw UsageError("M must be >= 2");
        if (top_k < 1) throw UsageError("top_k must be >= 1");
    }
};

CliConfig load_config(const std::string& path)
{
    CliConfig c;
    if (path.empty()) return c;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
        if (!j.is_object()) throw UsageError("config file must hold a JSON object");
        if (j.contains("scd")) {
            const auto& s = j["scd"];
            c.scd.h_bins = s.value("h_bins", c.scd.h_bins);
            c.scd.s_bins = s.value("s_bins", c.scd.s_bins);
            c.scd.v_bins = s.value("v_bins", c.scd.v_bins);
            c.scd.coeffs = s.value("coeffs", c.scd.coeffs);
        }
        if (j.contains("kmeans")) {
            const auto& k = j["kmeans"];
            c.kmeans.max_iter = k.value("max_iter", c.kmeans.max_iter);
            c.kmeans.tol = k.value("tol", c.kmeans.tol);
            c.kmeans.threads = k.value("threads", c.kmeans.threads);
        }
        c.m = j.value("M", c.m);
        c.top_k = j.value("top_k", c.top_k);
        if (j.contains("seed")) {
            const auto& s = j["seed"];
            c.seed = s.is_string() ? std::stoull(s.get<std::string>()) : s.get<std::uint64_t>();
        }
        c.keys = j.value("keys", c.keys);
        c.codebook = j.value("codebook", c.codebook);
        c.index = j.value("index", c.index);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("malformed config file " + path + ": " + e.what());
    } catch (const std::logic_error& e) {
        throw UsageError("malformed seed in config file " + path);
    }
    return c;
}

bool is_image_file(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> image_files(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

template <typename T>
std::string join(const std::vector<T>& v)
{
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
}

// --------------------------------------------------------------------------

int cmd_genkeys(int count, const std::string& out, const std::string& prefix)
{
    if (count < 1) throw UsageError("--count must be >= 1");
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
    std::mt19937_64 entropy(seq);
    std::vector<NamedKeySet> keys;
    char buf[32];
    for (int i = 0; i < count; ++i) {
        std::snprintf(buf, sizeof buf, "%s%04d", prefix.c_str(), i);
        keys.push_back({buf, random_keyset(entropy)});
    }
    save_keys(keys, out);
    std::cout << "wrote " << count << " keysets to " << out << '\n';
    return 0;
}

/// Shared by encrypt and decrypt: keyset i goes with the i-th image in
/// sorted filename order. Failures are reported per file; the rest proceed.
int cmd_cipher(bool forward, const fs::path& in_dir, const std::string& key_file, const fs::path& out_dir)
{
    if (key_file.empty()) throw UsageError("a key file is required (--keys or config 'keys')");
    const auto files = image_files(in_dir);
    const auto keys = load_keys(key_file);
    fs::create_directories(out_dir);
    int failed = 0;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const auto& f = files[i];
        try {
            if (i >= keys.size()) {
                detail::fail("missing key: " + std::to_string(keys.size()) + " keysets for " +
                             std::to_string(files.size()) + " images");
            }
            const ImageBuffer img = load_image(f);
            const ImageBuffer out = forward ? encrypt(img, keys[i].keys) : decrypt(img, keys[i].keys);
            const fs::path dest = out_dir / (f.stem().string() + ".png");
            save_image(out, dest);
            std::cout << f.filename().string() << ',' << keys[i].key_id << ',' << dest.string() << '\n';
        } catch (const Error& e) {
            std::cerr << "error: " << f.filename().string() << ": " << e.what() << '\n';
            ++failed;
        }
    }
    if (files.empty()) std::cerr << "warning: no images in " << in_dir.string() << '\n';
    return failed == 0 ? 0 : kExitData;
}

int cmd_index(const CliConfig& cfg, const std::string& manifest_path, bool center_crop)
{
    if (cfg.codebook.empty() || cfg.index.empty()) throw UsageError("--codebook and --index output paths are required");
    const DatasetManifest manifest = load_manifest(manifest_path);
    detail::require(!manifest.entries.empty(), "empty dataset");

    std::vector<StoredImage> stored;
    std::string report;
    for (const auto& e : manifest.entries) {
        try {
            ImageBuffer img = load_image(e.path);
            if (center_crop) img = center_crop_to_blocks(img);
            require_block_aligned(img);
            stored.push_back({e.image_id, e.owner_id, std::move(img)});
        } catch (const Error& err) {
            report += "\n  " + e.image_id + ": " + err.what();
        }
    }
    if (!report.empty()) detail::fail("cannot index:" + report);

    std::vector<PatchDescriptor> patches;
    for (const auto& s : stored) {
        auto p = extract_patches(s.image, cfg.scd);
        patches.insert(patches.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    }
    detail::require(patches.size() >= cfg.m, "M=" + std::to_string(cfg.m) + " exceeds the total patch count " +
                                                 std::to_string(patches.size()));
    KMeansConfig km = cfg.kmeans;
    km.seed = cfg.seed;
    const Codebook cb = train_codebook(patches, cfg.m, km);
    const DescriptorIndex idx = build_index(stored, cb, cfg.scd, {cfg.kmeans.threads});
    save_codebook(cb, cfg.codebook);
    save_index(idx, cfg.index);

    std::size_t unused = 0;
    std::size_t everywhere = 0;
    double mean_df = 0.0;
    for (auto d : idx.df) {
        unused += d == 0;
        everywhere += d == idx.n;
        mean_df += static_cast<double>(d);
    }
    mean_df /= static_cast<double>(idx.df.size());
    std::cout << "N=" << idx.n << " M=" << idx.m() << " patches=" << patches.size() << '\n'
              << "df: unused=" << unused << " in_every_image=" << everywhere << " mean=" << mean_df << '\n'
              << "codebook=" << cfg.codebook << " index=" << cfg.index << '\n';
    return 0;
}

int cmd_query(const CliConfig& cfg, const std::string& image_path, bool encrypted_mode, bool center_crop)
{
    if (cfg.codebook.empty() || cfg.index.empty()) throw UsageError("--codebook and --index are required");
    const Codebook cb = load_codebook(cfg.codebook);
    const DescriptorIndex idx = load_index(cfg.index, cb, cfg.scd);
    ImageBuffer img = load_image(image_path);
    if (center_crop) img = center_crop_to_blocks(img);
    // the mode only labels the audit line; processing is the same for both
    std::cerr << "query mode=" << (encrypted_mode ? "encrypted" : "plain") << " image=" << image_path
              << " N=" << idx.n << " M=" << idx.m() << '\n';
    const auto desc = make_query_descriptor(img, idx);
    write_hits(std::cout, search(idx, desc, cfg.top_k));
    return 0;
}

int cmd_evaluate(const CliConfig& cfg, const std::string& manifest_path, const std::string& gt_path,
                 const std::vector<std::string>& condition_names, std::vector<std::size_t> m_values,
                 std::vector<std::uint64_t> seeds, const std::string& out, const std::string& report_path,
                 bool center_crop)
{
    if (!gt_path.empty() && !fs::exists(gt_path)) throw UsageError("ground truth file not found: " + gt_path);
    std::vector<EvalCondition> conditions;
    for (const auto& n : condition_names) {
        try {
            conditions.push_back(parse_condition(n));
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (conditions.empty()) conditions.assign(kAllConditions.begin(), kAllConditions.end());
    if (m_values.empty()) m_values.push_back(cfg.m);
    if (seeds.empty()) seeds.push_back(cfg.seed);
    for (auto m : m_values) {
        if (m < 2) throw UsageError("M values must be >= 2");
    }

    const DatasetManifest manifest = load_manifest(manifest_path);
    const Dataset ds = load_dataset(manifest, center_crop);
    const GroundTruth gt = gt_path.empty() ? ground_truth_from(ds) : load_ground_truth(gt_path);
    EvalOptions opt;
    opt.scd = cfg.scd;
    opt.kmeans_max_iter = cfg.kmeans.max_iter;
    opt.kmeans_tol = cfg.kmeans.tol;
    opt.threads = cfg.kmeans.threads;
    opt.ukbench_mode = manifest.ukbench_mode;

    const SweepResult res = sweep(ds, gt, conditions, m_values, seeds, opt);
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    const std::string table = res.table();
    if (out.empty() || out == "-") {
        std::cout << table;
    } else {
        std::ofstream f(out);
        if (!f) detail::fail("cannot write " + out);
        f << table;
        std::cout << "wrote " << res.reports.size() << " rows to " << out << '\n';
    }
    if (!report_path.empty()) {
        nlohmann::json j;
        j["images"] = ds.size();
        j["queries"] = query_indices(ds).size();
        auto& runs = j["runs"] = nlohmann::json::array();
        for (const auto& r : res.reports) {
            auto rj = r.to_json();
            rj.erase("seconds"); // keep the report byte-stable across runs
            runs.push_back(std::move(rj));
        }
        j["warnings"] = res.warnings;
        std::ofstream f(report_path);
        if (!f) detail::fail("cannot write " + report_path);
        f << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_synth(const SynthConfig& sc, const fs::path& out)
{
    const auto imgs = generate_synthetic(sc);
    write_synthetic(imgs, out);
    std::cout << "wrote " << imgs.size() << " images in " << sc.groups << " groups to " << out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Retrieval over encryption-then-compression images"};
    app.require_subcommand(1);

    std::string config_path;
    if (const char* env = std::getenv("ETCIR_CONFIG")) config_path = env;
    app.add_option("--config", config_path, "JSON config file (default: $ETCIR_CONFIG)");

    // flag overrides, applied on top of the config file
    std::optional<std::size_t> m_flag;
    std::optional<std::size_t> topk_flag;
    std::optional<std::uint64_t> seed_flag;
    std::optional<unsigned> threads_flag;
    std::string keys_flag, codebook_flag, index_flag;
    bool center_crop = false;

    auto* genkeys = app.add_subcommand("genkeys", "Generate fresh random keysets");
    int count = 0;
    std::string keys_out;
    std::string prefix = "key";
    genkeys->add_option("--count", count, "Number of keysets")->required();
    genkeys->add_option("--out", keys_out, "Output key file")->required();
    genkeys->add_option("--prefix", prefix, "key_id prefix");

    auto* enc = app.add_subcommand("encrypt", "EtC-encrypt every image in a directory");
    auto* dec = app.add_subcommand("decrypt", "Decrypt every image in a directory");
    std::string in_dir, out_dir;
    for (auto* sub : {enc, dec}) {
        sub->add_option("--in", in_dir, "Input directory")->required();
        sub->add_option("--out", out_dir, "Output directory")->required();
        sub->add_option("--keys", keys_flag, "Key file; keyset i goes with the i-th file in name order");
    }

    auto* index = app.add_subcommand("index", "Train a codebook and index the stored images of a manifest");
    std::string manifest;
    index->add_option("--manifest", manifest, "Dataset manifest")->required();
    index->add_option("--M", m_flag, "Codebook size");
    index->add_option("--seed", seed_flag, "k-means seed");
    index->add_option("--threads", threads_flag, "Worker threads");
    index->add_option("--codebook", codebook_flag, "Codebook output path");
    index->add_option("--index", index_flag, "Index output path");
    index->add_flag("--center-crop", center_crop, "Crop images to a multiple of 16 instead of rejecting them");

    auto* query = app.add_subcommand("query", "Rank the indexed images against one query image");
    std::string image;
    bool encrypted = false;
    bool plain = false;
    query->add_option("--image", image, "Query image")->required();
    query->add_option("--index", index_flag, "Index file");
    query->add_option("--codebook", codebook_flag, "Codebook file");
    query->add_option("--top-k", topk_flag, "Number of results");
    auto* enc_flag = query->add_flag("--encrypted", encrypted, "Query is an EtC image (audit label only)");
    query->add_flag("--plain", plain, "Query is a plain image (audit label only)")->excludes(enc_flag);
    query->add_flag("--center-crop", center_crop, "Crop the query to a multiple of 16");

    auto* evaluate = app.add_subcommand("evaluate", "Run a retrieval sweep and write the mAP table");
    std::string gt, table_out, report_out;
    std::vector<std::string> conditions;
    std::vector<std::size_t> m_values;
    std::vector<std::uint64_t> seeds;
    evaluate->add_option("--manifest", manifest, "Dataset manifest")->required();
    evaluate->add_option("--gt", gt, "Ground truth CSV (image_id,group_id); default: manifest groups");
    evaluate->add_option("--conditions", conditions, "Conditions (default: all four)")->delimiter(',');
    evaluate->add_option("--M", m_values, "Codebook sizes")->delimiter(',');
    evaluate->add_option("--seeds", seeds, "Run seeds")->delimiter(',');
    evaluate->add_option("--out", table_out, "Sweep table output (default: stdout)");
    evaluate->add_option("--report", report_out, "Per-query JSON report");
    evaluate->add_option("--threads", threads_flag, "Worker threads");
    evaluate->add_flag("--center-crop", center_crop, "Crop images to a multiple of 16 instead of rejecting them");

    auto* synth = app.add_subcommand("synth-dataset", "Write the synthetic benchmark (PNGs + manifest)");
    SynthConfig sc;
    std::string synth_out;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--groups", sc.groups, "Number of groups");
    synth->add_option("--per-group", sc.per_group, "Images per group");
    synth->add_option("--width", sc.width, "Image width (multiple of 16)");
    synth->add_option("--height", sc.height, "Image height (multiple of 16)");
    synth->add_option("--seed", sc.seed, "Generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        CliConfig cfg = load_config(config_path);
        if (m_flag) cfg.m = *m_flag;
        if (topk_flag) cfg.top_k = *topk_flag;
        if (seed_flag) cfg.seed = *seed_flag;
        if (threads_flag) cfg.kmeans.threads = std::max(1u, *threads_flag);
        if (!keys_flag.empty()) cfg.keys = keys_flag;
        if (!codebook_flag.empty()) cfg.codebook = codebook_flag;
        if (!index_flag.empty()) cfg.index = index_flag;
        cfg.validate();

        if (*genkeys) return cmd_genkeys(count, keys_out, prefix);
        if (*enc) return cmd_cipher(true, in_dir, cfg.keys, out_dir);
        if (*dec) return cmd_cipher(false, in_dir, cfg.keys, out_dir);
        if (*index) return cmd_index(cfg, manifest, center_crop);
        if (*query) return cmd_query(cfg, image, encrypted, center_crop);
        if (*evaluate) {
            return cmd_evaluate(cfg, manifest, gt, conditions, m_values, seeds, table_out, report_out, center_crop);
        }
        if (*synth) return cmd_synth(sc, synth_out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
