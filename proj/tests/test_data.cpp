#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "exitgrid/data.hpp"

using namespace exitgrid;

namespace {

DatasetManifest small_manifest() {
    DatasetManifest m;
    m.seed = 11;
    m.num_classes = 4; // one of each family: 1 static, 1 motion pair, 1 texture
    m.n_train = 8;
    m.n_val = 4;
    m.n_test = 4;
    m.video_length = 12;
    m.channels = 2;
    m.height = 8;
    m.width = 8;
    m.noise = 0.02;
    return m;
}

double mean_abs_diff(const std::vector<float>& a, const std::vector<float>& b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
    return acc / static_cast<double>(n);
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("class layout partitions every class count") {
    ClassLayout l2 = ClassLayout::for_classes(2);
    REQUIRE(l2.n_static == 0);
    REQUIRE(l2.n_pairs == 1);
    REQUIRE(l2.n_texture == 0);

    ClassLayout l3 = ClassLayout::for_classes(3);
    REQUIRE(l3.n_static == 1);
    REQUIRE(l3.n_pairs == 1);
    REQUIRE(l3.n_texture == 0);

    ClassLayout l4 = ClassLayout::for_classes(4);
    REQUIRE(l4.n_static == 1);
    REQUIRE(l4.n_pairs == 1);
    REQUIRE(l4.n_texture == 1);

    ClassLayout l10 = ClassLayout::for_classes(10);
    REQUIRE(l10.n_static == 4);
    REQUIRE(l10.n_pairs == 2);
    REQUIRE(l10.n_texture == 2);

    for (int c = 2; c <= 24; ++c) {
        ClassLayout l = ClassLayout::for_classes(c);
        REQUIRE(l.n_static + 2 * l.n_pairs + l.n_texture == c);
        REQUIRE(l.n_pairs >= 1);
    }
    REQUIRE_THROWS_AS(ClassLayout::for_classes(1), ConfigError);
}

TEST_CASE("class layout maps labels to families") {
    ClassLayout l = ClassLayout::for_classes(10);
    for (int label = 0; label < 4; ++label)
        REQUIRE(l.family_of(label) == ClassFamily::StaticPattern);
    for (int label = 4; label < 8; ++label)
        REQUIRE(l.family_of(label) == ClassFamily::MotionDirection);
    for (int label = 8; label < 10; ++label)
        REQUIRE(l.family_of(label) == ClassFamily::FineTexture);

    REQUIRE(l.pair_index(4) == 0);
    REQUIRE(l.pair_index(6) == 1);
    REQUIRE_FALSE(l.is_mirrored(4));
    REQUIRE(l.is_mirrored(5));
    REQUIRE(l.pair_partner(4) == 5);
    REQUIRE(l.pair_partner(7) == 6);

    REQUIRE_THROWS_AS(l.family_of(10), ConfigError);
    REQUIRE_THROWS_AS(l.pair_index(0), ConfigError); // not a motion class
}

TEST_CASE("manifest validation") {
    DatasetManifest m = small_manifest();
    REQUIRE_NOTHROW(m.validate());
    m.num_classes = 1;
    REQUIRE_THROWS_AS(m.validate(), ConfigError);
    m = small_manifest();
    m.video_length = 0;
    REQUIRE_THROWS_AS(m.validate(), ConfigError);
    m = small_manifest();
    m.noise = -0.1;
    REQUIRE_THROWS_AS(m.validate(), ConfigError);
    m = small_manifest();
    m.n_train = -1;
    REQUIRE_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("video generation is deterministic in all its keys") {
    DatasetManifest m = small_manifest();
    SyntheticVideo a = generate_video(m, 1, 3, 3);
    SyntheticVideo b = generate_video(m, 1, 3, 3);
    REQUIRE(a.pixels == b.pixels);
    REQUIRE(a.difficulty.temporal_extent == b.difficulty.temporal_extent);

    REQUIRE(generate_video(m, 2, 3, 3).pixels != a.pixels); // split changes the draw
    REQUIRE(generate_video(m, 1, 4, 3).pixels != a.pixels); // index changes the draw
    DatasetManifest m2 = m;
    m2.seed = 12;
    REQUIRE(generate_video(m2, 1, 3, 3).pixels != a.pixels); // seed changes the draw
}

TEST_CASE("pixels stay inside the unit interval") {
    DatasetManifest m = small_manifest();
    m.noise = 0.05;
    for (int label = 0; label < m.num_classes; ++label) {
        SyntheticVideo v = generate_video(m, 1, label, label);
        for (float p : v.pixels) {
            REQUIRE(p >= 0.0f);
            REQUIRE(p <= 1.0f);
        }
    }
}

TEST_CASE("labels cycle round-robin through the splits") {
    DatasetManifest m = small_manifest();
    Dataset ds = generate_dataset(m);
    REQUIRE(ds.train.size() == 8);
    REQUIRE(ds.val.size() == 4);
    REQUIRE(ds.test.size() == 4);
    for (size_t i = 0; i < ds.train.size(); ++i)
        REQUIRE(ds.train[i].label == static_cast<int>(i) % m.num_classes);
    // the same index in different splits draws different content
    REQUIRE(ds.train[0].pixels != ds.val[0].pixels);
    REQUIRE(ds.val[0].pixels != ds.test[0].pixels);
}

TEST_CASE("static classes are constant in time and separable") {
    DatasetManifest m = small_manifest();
    m.num_classes = 10;
    m.noise = 0.0;
    const size_t fe = static_cast<size_t>(m.channels) * m.height * m.width;

    std::vector<SyntheticVideo> vids;
    for (int label = 0; label < 4; ++label) {
        SyntheticVideo v = generate_video(m, 1, label, label);
        REQUIRE(v.difficulty.feature_depth == FeatureDepth::Shallow);
        REQUIRE(v.difficulty.temporal_extent == 1.0 / m.video_length);
        for (int t = 1; t < m.video_length; ++t)
            REQUIRE(std::equal(v.pixels.begin(), v.pixels.begin() + fe,
                               v.pixels.begin() + static_cast<size_t>(t) * fe));
        vids.push_back(std::move(v));
    }
    for (size_t a = 0; a < vids.size(); ++a)
        for (size_t b = a + 1; b < vids.size(); ++b)
            REQUIRE(mean_abs_diff(vids[a].pixels, vids[b].pixels, fe) > 0.02);
}

TEST_CASE("motion pairs are exact time mirrors") {
    DatasetManifest m = small_manifest();
    m.num_classes = 10;
    m.noise = 0.0;
    const size_t fe = static_cast<size_t>(m.channels) * m.height * m.width;

    MotionPair mp = make_motion_pair(m, 0, 5);
    REQUIRE(mp.window_begin + mp.window_end == m.video_length);
    REQUIRE(mp.window_end - mp.window_begin >= 2);
    REQUIRE(mp.left.label == 4);
    REQUIRE(mp.right.label == 5);
    REQUIRE(mp.left.difficulty.temporal_extent ==
            static_cast<double>(mp.window_end - mp.window_begin) / m.video_length);

    for (int t = 0; t < m.video_length; ++t) {
        const float* lt = mp.left.pixels.data() + static_cast<size_t>(t) * fe;
        const float* rt =
            mp.right.pixels.data() + static_cast<size_t>(m.video_length - 1 - t) * fe;
        REQUIRE(std::equal(lt, lt + fe, rt));
    }
    // out-of-window frames are pure background, so mirroring leaves them alone
    for (int t = 0; t < mp.window_begin; ++t) {
        const float* lt = mp.left.pixels.data() + static_cast<size_t>(t) * fe;
        const float* rt = mp.right.pixels.data() + static_cast<size_t>(t) * fe;
        REQUIRE(std::equal(lt, lt + fe, rt));
    }
    // inside the window the blob sits at different positions per direction
    // (any off-center frame maps to a different slot under reversal)
    int mid = (mp.window_begin + mp.window_end) / 2 - 1;
    {
        const float* lt = mp.left.pixels.data() + static_cast<size_t>(mid) * fe;
        const float* rt = mp.right.pixels.data() + static_cast<size_t>(mid) * fe;
        REQUIRE_FALSE(std::equal(lt, lt + fe, rt));
    }

    // the full generator agrees: a mirrored label is the exact reversal of its
    // partner drawn at the same (split, index)
    SyntheticVideo left = generate_video(m, 2, 7, 4);
    SyntheticVideo right = generate_video(m, 2, 7, 5);
    for (int t = 0; t < m.video_length; ++t) {
        const float* lt = left.pixels.data() + static_cast<size_t>(t) * fe;
        const float* rt = right.pixels.data() + static_cast<size_t>(m.video_length - 1 - t) * fe;
        REQUIRE(std::equal(lt, lt + fe, rt));
    }

    REQUIRE_THROWS_AS(make_motion_pair(m, 5, 0), ConfigError); // pair index out of range
}

TEST_CASE("texture classes differ per pixel but share coarse structure") {
    DatasetManifest m = small_manifest();
    m.num_classes = 10;
    m.noise = 0.0;
    m.height = m.width = 16;
    const size_t fe = static_cast<size_t>(m.channels) * m.height * m.width;

    SyntheticVideo a = generate_video(m, 1, 0, 8);
    SyntheticVideo b = generate_video(m, 1, 0, 9);
    REQUIRE(a.difficulty.feature_depth == FeatureDepth::Deep);
    REQUIRE(b.difficulty.feature_depth == FeatureDepth::Deep);
    for (int t = 1; t < m.video_length; ++t)
        REQUIRE(std::equal(a.pixels.begin(), a.pixels.begin() + fe,
                           a.pixels.begin() + static_cast<size_t>(t) * fe));

    double pixel_diff = mean_abs_diff(a.pixels, b.pixels, fe);
    REQUIRE(pixel_diff > 0.03);

    // 4x4 block means: the per-class pattern is zero-mean high-frequency, so
    // averaging mostly cancels it and the shared background dominates
    double block_diff = 0.0;
    int blocks = 0;
    for (int c = 0; c < m.channels; ++c)
        for (int by = 0; by < m.height; by += 4)
            for (int bx = 0; bx < m.width; bx += 4) {
                double sa = 0.0, sb = 0.0;
                for (int y = by; y < by + 4; ++y)
                    for (int x = bx; x < bx + 4; ++x) {
                        size_t i = (static_cast<size_t>(c) * m.height + y) * m.width + x;
                        sa += a.pixels[i];
                        sb += b.pixels[i];
                    }
                block_diff += std::abs(sa - sb) / 16.0;
                ++blocks;
            }
    block_diff /= blocks;
    REQUIRE(pixel_diff > 3.0 * block_diff);
}

TEST_CASE("frame accessors") {
    DatasetManifest m = small_manifest();
    SyntheticVideo v = generate_video(m, 1, 0, 0);
    Tensor f = v.frame_tensor(3);
    REQUIRE(f.shape() == std::vector<int>{m.channels, m.height, m.width});
    const size_t fe = v.frame_elems();
    for (size_t i = 0; i < fe; ++i)
        REQUIRE(f[i] == static_cast<double>(v.pixels[3 * fe + i]));
    REQUIRE(v.all_frames().size() == static_cast<size_t>(m.video_length));
    REQUIRE_THROWS_AS(v.frame_tensor(-1), ConfigError);
    REQUIRE_THROWS_AS(v.frame_tensor(m.video_length), ConfigError);
}

TEST_CASE("dataset files round-trip") {
    DatasetManifest m = small_manifest();
    Dataset ds = generate_dataset(m);
    TempFile tmp("test_data_roundtrip.bin");
    save_dataset(tmp.path, ds);

    REQUIRE(load_manifest(tmp.path) == m);
    Dataset back = load_dataset(tmp.path);
    REQUIRE(back.manifest == m);
    for (const std::string split : {"train", "val", "test"}) {
        const auto& x = ds.split(split);
        const auto& y = back.split(split);
        REQUIRE(x.size() == y.size());
        for (size_t i = 0; i < x.size(); ++i) {
            REQUIRE(x[i].label == y[i].label);
            REQUIRE(x[i].pixels == y[i].pixels);
            REQUIRE(x[i].difficulty.temporal_extent == y[i].difficulty.temporal_extent);
            REQUIRE(x[i].difficulty.feature_depth == y[i].difficulty.feature_depth);
        }
    }
    REQUIRE_THROWS_AS(ds.split("holdout"), ConfigError);
}

TEST_CASE("dataset file corruption is reported") {
    DatasetManifest m = small_manifest();
    m.n_train = 2;
    m.n_val = 1;
    m.n_test = 1;
    Dataset ds = generate_dataset(m);
    TempFile tmp("test_data_corrupt.bin");
    save_dataset(tmp.path, ds);

    std::ifstream in(tmp.path, std::ios::binary | std::ios::ate);
    std::vector<char> bytes(static_cast<size_t>(in.tellg()));
    in.seekg(0);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    in.close();

    TempFile cut("test_data_truncated.bin");
    {
        std::ofstream out(cut.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 25));
    }
    REQUIRE_THROWS_AS(load_dataset(cut.path), IoError);

    TempFile garbled("test_data_garbled.bin");
    {
        bytes[0] = 'X';
        std::ofstream out(garbled.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    REQUIRE_THROWS_AS(load_dataset(garbled.path), IoError);
}
