#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace etcir;
using etcir::test::TempDir;

namespace {

Codebook codebook_for(const std::vector<StoredImage>& imgs, std::size_t m, std::uint64_t seed = 1)
{
    std::vector<PatchDescriptor> all;
    for (const auto& s : imgs) {
        const auto p = extract_patches(s.image);
        all.insert(all.end(), p.begin(), p.end());
    }
    KMeansConfig cfg;
    cfg.seed = seed;
    return train_codebook(all, m, cfg);
}

std::vector<StoredImage> blocky_images(std::mt19937_64& rng, int count)
{
    // each block one random flat color, so patches cluster cleanly
    std::vector<StoredImage> out;
    std::uniform_int_distribution<int> byte(0, 255);
    for (int i = 0; i < count; ++i) {
        ImageBuffer img(64, 48);
        auto grid = split_blocks(img);
        for (auto& b : grid.blocks) {
            const std::uint8_t r = static_cast<std::uint8_t>(byte(rng));
            const std::uint8_t g = static_cast<std::uint8_t>(byte(rng));
            const std::uint8_t bl = static_cast<std::uint8_t>(byte(rng));
            for (std::size_t k = 0; k < b.size(); k += 3) {
                b[k] = r;
                b[k + 1] = g;
                b[k + 2] = bl;
            }
        }
        out.push_back({"img" + std::to_string(100 + i), "owner", assemble_blocks(grid)});
    }
    return out;
}

RawHistogram hist(std::initializer_list<std::uint64_t> c) { return {std::vector<std::uint64_t>(c)}; }

/// EtC encryption with the negative-positive step left out.
ImageBuffer scramble_without_np(const ImageBuffer& img, const KeySet& k)
{
    auto grid = split_blocks(img);
    const auto s = derive_streams(k, grid.size());
    grid = permute_blocks(grid, s.permutation);
    grid = transform_blocks(grid, s.d4_codes);
    return assemble_blocks(grid);
}

} // namespace

TEST(Histogram, CountsAssignments)
{
    Codebook cb;
    cb.m = 3;
    cb.dim = 1;
    cb.centroids = {0.0, 10.0, 20.0};
    const std::vector<PatchDescriptor> patches{{0.1}, {9.0}, {11.0}, {19.0}, {-5.0}};
    const auto h = build_histogram(patches, cb);
    EXPECT_EQ(h.counts, (std::vector<std::uint64_t>{2, 2, 1}));
    EXPECT_EQ(h.total(), 5u);
    EXPECT_THROW(build_histogram({}, cb), Error);
}

TEST(Df, CountsImagesContainingEachWord)
{
    const std::vector<RawHistogram> hs{hist({3, 0, 1}), hist({0, 0, 5}), hist({1, 0, 1}), hist({2, 0, 0})};
    EXPECT_EQ(compute_df(hs), (std::vector<std::uint64_t>{3, 0, 3}));
    const std::vector<RawHistogram> ragged{hist({1, 2}), hist({1})};
    EXPECT_THROW(compute_df(ragged), Error);
}

TEST(TfIdf, HandComputedValues)
{
    EXPECT_NEAR(tfidf_component(1, 2, 4), 0.6931471805599453, 1e-12);
    EXPECT_NEAR(tfidf_component(3, 1, 4), 2.909294381957509, 1e-12);
    EXPECT_NEAR(tfidf_component(2, 3, 10), 2.0385031591153098, 1e-12);
}

TEST(TfIdf, DegenerateConventions)
{
    EXPECT_EQ(tfidf_component(0, 2, 4), 0.0);  // word absent from the image
    EXPECT_EQ(tfidf_component(5, 0, 4), 0.0);  // word absent from the database
    EXPECT_EQ(tfidf_component(5, 4, 4), 0.0);  // word in every image
    const std::vector<std::uint64_t> df{4, 4};
    const auto v = tfidf_weight(hist({2, 3}), df, 4);
    EXPECT_EQ(v, (std::vector<double>{0.0, 0.0})); // all-zero vector stays zero
}

TEST(TfIdf, WeightedVectorIsNormalized)
{
    const std::vector<std::uint64_t> df{1, 2, 0};
    const auto v = tfidf_weight(hist({3, 1, 7}), df, 4);
    EXPECT_NEAR(v[0], 0.9727716949227873, 1e-12);
    EXPECT_NEAR(v[1], 0.2317654623904255, 1e-12);
    EXPECT_EQ(v[2], 0.0);
    const std::vector<std::uint64_t> too_big{5, 0, 0};
    EXPECT_THROW(tfidf_weight(hist({1, 0, 0}), too_big, 4), Error);
    const std::vector<std::uint64_t> short_df{1};
    EXPECT_THROW(tfidf_weight(hist({1, 0, 0}), short_df, 4), Error);
}

TEST(Index, ScramblingWithoutNpLeavesDescriptorsBitExact)
{
    std::mt19937_64 rng(1);
    std::vector<StoredImage> plain;
    for (int i = 0; i < 6; ++i) plain.push_back({"p" + std::to_string(i), "o", test::random_image(rng, 64, 64)});
    const auto cb = codebook_for(plain, 16);
    const auto idx = build_index(plain, cb);
    for (const auto& s : plain) {
        const auto scrambled = scramble_without_np(s.image, test::random_keys(rng));
        const QueryOptions raw{false};
        EXPECT_EQ(make_query_descriptor(scrambled, idx, raw), make_query_descriptor(s.image, idx, raw));
    }
}

TEST(Index, NpChangesDescriptorsOfColorfulImages)
{
    std::mt19937_64 rng(2);
    auto imgs = blocky_images(rng, 6);
    const auto cb = codebook_for(imgs, 24);
    const auto idx = build_index(imgs, cb);
    const QueryOptions raw{false};
    int differ = 0;
    for (const auto& s : imgs) {
        differ += make_query_descriptor(encrypt(s.image, test::random_keys(rng)), idx, raw) !=
                  make_query_descriptor(s.image, idx, raw);
    }
    EXPECT_EQ(differ, 6);
}

TEST(Index, GrayQueryConcentratesOnAtMostTwoWords)
{
    std::mt19937_64 rng(3);
    const auto imgs = blocky_images(rng, 5);
    const auto idx = build_index(imgs, codebook_for(imgs, 16));
    const auto q = make_query_descriptor(ImageBuffer(64, 48, 90), idx);
    std::size_t nonzero = 0;
    for (double v : q) nonzero += v != 0.0;
    EXPECT_LE(nonzero, 2u);
}

TEST(Index, CanonicalizationIsTheOnlyQueryPreprocessing)
{
    std::mt19937_64 rng(4);
    const auto imgs = blocky_images(rng, 5);
    const auto idx = build_index(imgs, codebook_for(imgs, 16));
    const auto q = test::random_image(rng, 64, 48);
    EXPECT_EQ(make_query_descriptor(q, idx), make_query_descriptor(canonicalize_query(q), idx, {false}));
    EXPECT_EQ(make_query_descriptor(canonicalize_query(q), idx), make_query_descriptor(q, idx, {false}));
}

TEST(Index, BuildRejectsEmptyAndDuplicateInput)
{
    std::mt19937_64 rng(5);
    auto imgs = blocky_images(rng, 3);
    const auto cb = codebook_for(imgs, 8);
    EXPECT_THROW(build_index(std::vector<StoredImage>{}, cb), Error);
    imgs[2].image_id = imgs[0].image_id;
    EXPECT_THROW(build_index(imgs, cb), Error);
    DatasetManifest empty;
    try {
        build_index(empty, cb);
        FAIL() << "empty manifest accepted";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
    }
}

TEST(Index, ManifestFailuresNameEveryBadImage)
{
    std::mt19937_64 rng(6);
    TempDir dir("index");
    const auto imgs = blocky_images(rng, 2);
    save_image(imgs[0].image, dir / "ok.png");
    save_image(ImageBuffer(20, 16), dir / "odd.png");
    DatasetManifest m;
    m.entries = {{"ok", dir / "ok.png", "g", "o"},
                 {"odd", dir / "odd.png", "g", "o"},
                 {"gone", dir / "gone.png", "g", "o"}};
    try {
        build_index(m, codebook_for(imgs, 8));
        FAIL() << "bad images accepted";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("odd:"), std::string::npos);
        EXPECT_NE(msg.find("gone:"), std::string::npos);
        EXPECT_EQ(msg.find("ok:"), std::string::npos);
    }
}

TEST(Search, TiesBrokenByImageId)
{
    DescriptorIndex idx;
    idx.codebook.m = 2;
    idx.codebook.dim = 1;
    idx.n = 3;
    idx.df = {1, 1};
    idx.entries = {{"c", "o", {1.0, 0.0}}, {"a", "o", {1.0, 0.0}}, {"b", "o", {0.0, 1.0}}};
    const std::vector<double> q{1.0, 0.0};
    const auto hits = search(idx, q, 3);
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].image_id, "a");
    EXPECT_EQ(hits[1].image_id, "c");
    EXPECT_EQ(hits[2].image_id, "b");
    EXPECT_EQ(search(idx, q, 1).size(), 1u);
    EXPECT_EQ(search(idx, q, 10).size(), 3u);
    EXPECT_THROW(search(idx, q, 0), Error);
    const std::vector<double> wrong{1.0};
    EXPECT_THROW(search(idx, wrong, 1), Error);
}

TEST(Search, AgreesWithBruteForceRanking)
{
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> coarse(0, 3); // few distinct values force ties
    for (std::size_t n : {1u, 5u, 50u, 1000u}) {
        DescriptorIndex idx;
        idx.codebook.m = 4;
        idx.codebook.dim = 1;
        idx.n = n;
        idx.df = {1, 1, 1, 1};
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> d(4);
            for (auto& v : d) v = coarse(rng);
            l2_normalize(d);
            idx.entries.push_back({"id" + std::to_string(rng() % 100000), "o", d});
        }
        std::vector<double> q(4);
        for (auto& v : q) v = coarse(rng);
        l2_normalize(q);
        // oracle: full scores, then a plain sort on (-score, id)
        std::vector<std::pair<double, std::string>> ref;
        for (const auto& e : idx.entries) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += q[k] * e.descriptor[k];
            ref.emplace_back(-s, e.image_id);
        }
        std::sort(ref.begin(), ref.end());
        const std::size_t top = std::min<std::size_t>(n, 25);
        const auto hits = search(idx, q, top);
        ASSERT_EQ(hits.size(), top);
        for (std::size_t i = 0; i < top; ++i) {
            EXPECT_EQ(hits[i].image_id, ref[i].second) << "n=" << n << " rank " << i;
            EXPECT_EQ(hits[i].score, -ref[i].first);
        }
    }
}

TEST(Search, SelfMatchScoresOne)
{
    std::mt19937_64 rng(8);
    const auto imgs = blocky_images(rng, 8);
    const auto idx = build_index(imgs, codebook_for(imgs, 32));
    for (const auto& s : imgs) {
        const auto hits = search(idx, make_query_descriptor(s.image, idx, {false}), 1);
        EXPECT_EQ(hits[0].image_id, s.image_id);
        EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
    }
}

TEST(Search, WriteHitsFormat)
{
    std::ostringstream out;
    write_hits(out, {{"a", "o1", 0.5}, {"b", "o2", 0.25}});
    EXPECT_EQ(out.str(), "1,a,o1,0.5\n2,b,o2,0.25\n");
}

TEST(IndexFile, RoundTrip)
{
    std::mt19937_64 rng(9);
    const auto imgs = blocky_images(rng, 5);
    const auto cb = codebook_for(imgs, 16);
    const auto idx = build_index(imgs, cb);
    TempDir dir("index");
    save_index(idx, dir / "i.bin");
    EXPECT_EQ(load_index(dir / "i.bin", cb), idx);
}

TEST(IndexFile, TamperedDfAndWrongCodebookDetected)
{
    std::mt19937_64 rng(10);
    const auto imgs = blocky_images(rng, 6);
    const auto cb = codebook_for(imgs, 16);
    auto idx = build_index(imgs, cb);
    TempDir dir("index");

    std::size_t k = 0;
    while (k < idx.m() && (idx.df[k] == 0 || idx.df[k] == idx.n)) ++k;
    ASSERT_LT(k, idx.m()) << "fixture needs a word with 0 < df < N";
    auto tampered = idx;
    tampered.df[k] += 1;
    save_index(tampered, dir / "t.bin");
    try {
        load_index(dir / "t.bin", cb);
        FAIL() << "tampered df accepted";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("df inconsistent"), std::string::npos);
    }

    save_index(idx, dir / "i.bin");
    const auto other = codebook_for(imgs, 16, 99);
    ASSERT_NE(other.content_hash(), cb.content_hash());
    EXPECT_THROW(load_index(dir / "i.bin", other), Error);

    const std::string good = test::read_text(dir / "i.bin");
    test::write_text(dir / "short.bin", good.substr(0, good.size() - 3));
    EXPECT_THROW(load_index(dir / "short.bin", cb), Error);
    test::write_text(dir / "junk.bin", "ETCB1");
    EXPECT_THROW(load_index(dir / "junk.bin", cb), Error);
}
