#pragma once

// Synthetic video classification data with controlled difficulty families:
//   - static-pattern classes: one frame identifies the class;
//   - motion-direction pairs: two classes sharing appearance, separated only
//     by the direction a blob travels during the middle third of the video
//     (the right-mover is the exact time-mirror of a left-mover);
//   - fine-texture classes: shared coarse background, distinguished by a
//     pixel-scale pattern.
// Pixels are float32 in [0,1]; every video derives from its own seeded
// stream, so splits are disjoint and regeneration is reproducible.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "exitgrid/io.hpp"
#include "exitgrid/rng.hpp"
#include "exitgrid/tensor.hpp"

namespace exitgrid {

enum class ClassFamily { StaticPattern, MotionDirection, FineTexture };
enum class FeatureDepth : uint8_t { Shallow = 0, Deep = 1 };

struct Difficulty {
    double temporal_extent = 0.0; // fraction of the video needed to classify
    FeatureDepth feature_depth = FeatureDepth::Shallow;
};

// How the label space is carved up: statics first, then motion pairs
// (left-mover on the even offset), then textures.
struct ClassLayout {
    int num_classes = 0;
    int n_static = 0;
    int n_pairs = 0;   // motion classes = 2 * n_pairs
    int n_texture = 0;

    static ClassLayout for_classes(int c) {
        if (c < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(c));
        ClassLayout l;
        l.num_classes = c;
        if (c == 2) {
            l.n_pairs = 1;
        } else if (c == 3) {
            l.n_static = 1;
            l.n_pairs = 1;
        } else {
            l.n_pairs = std::max(1, c / 5);
            l.n_texture = std::max(1, c / 5);
            l.n_static = c - 2 * l.n_pairs - l.n_texture;
        }
        return l;
    }

    ClassFamily family_of(int label) const {
        check(label);
        if (label < n_static) return ClassFamily::StaticPattern;
        if (label < n_static + 2 * n_pairs) return ClassFamily::MotionDirection;
        return ClassFamily::FineTexture;
    }
    // For motion labels: which pair, and whether this is the time-mirrored
    // (rightward) member.
    int pair_index(int label) const {
        require_motion(label);
        return (label - n_static) / 2;
    }
    bool is_mirrored(int label) const {
        require_motion(label);
        return (label - n_static) % 2 == 1;
    }
    int pair_partner(int label) const {
        require_motion(label);
        return is_mirrored(label) ? label - 1 : label + 1;
    }

private:
    void check(int label) const {
        if (label < 0 || label >= num_classes)
            throw ConfigError("label " + std::to_string(label) + " out of range");
    }
    void require_motion(int label) const {
        if (family_of(label) != ClassFamily::MotionDirection)
            throw ConfigError("label " + std::to_string(label) + " is not a motion class");
    }
};

struct DatasetManifest {
    uint64_t seed = 7;
    int num_classes = 10;
    int n_train = 2000;
    int n_val = 500;
    int n_test = 500;
    int video_length = 32;
    int channels = 3;
    int height = 32;
    int width = 32;
    double noise = 0.02;

    void validate() const {
        ClassLayout::for_classes(num_classes);
        if (n_train < 0 || n_val < 0 || n_test < 0) throw ConfigError("split sizes must be >= 0");
        if (video_length < 9)
            throw ConfigError("video_length " + std::to_string(video_length) +
                              " too short for the motion construction (need >= 9)");
        if (channels < 1) throw ConfigError("channels must be >= 1");
        if (height < 8 || width < 8)
            throw ConfigError("frames must be at least 8x8, got " + std::to_string(height) + "x" +
                              std::to_string(width));
        if (noise < 0.0 || noise > 0.5)
            throw ConfigError("noise must be in [0, 0.5], got " + std::to_string(noise));
    }
    bool operator==(const DatasetManifest&) const = default;
};

struct SyntheticVideo {
    int label = 0;
    Difficulty difficulty;
    int video_length = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels; // [T, C, H, W]

    size_t frame_elems() const {
        return static_cast<size_t>(channels) * height * width;
    }
    Tensor frame_tensor(int t) const {
        if (t < 0 || t >= video_length)
            throw ConfigError("frame " + std::to_string(t) + " out of range (length " +
                              std::to_string(video_length) + ")");
        const size_t n = frame_elems();
        std::vector<double> d(n);
        const float* src = pixels.data() + static_cast<size_t>(t) * n;
        for (size_t i = 0; i < n; ++i) d[i] = static_cast<double>(src[i]);
        return Tensor::from_data({channels, height, width}, std::move(d));
    }
    std::vector<Tensor> all_frames() const {
        std::vector<Tensor> out;
        out.reserve(static_cast<size_t>(video_length));
        for (int t = 0; t < video_length; ++t) out.push_back(frame_tensor(t));
        return out;
    }
};

namespace detail {

// Stream tags. Class-level appearance keys are split-independent so the same
// class looks the same in every split; instance keys never collide with them.
enum : uint64_t {
    kStreamStaticClass = 100,
    kStreamPairClass = 101,
    kStreamTextureShared = 102,
    kStreamTextureClass = 103,
};

inline float* frame_ptr(SyntheticVideo& v, int t) {
    return v.pixels.data() + static_cast<size_t>(t) * v.frame_elems();
}

inline void add_noise_and_clamp(SyntheticVideo& v, double noise, SplitMix64& rng) {
    for (float& p : v.pixels) {
        double x = p;
        if (noise > 0.0) x += rng.uniform(-noise, noise);
        p = static_cast<float>(std::min(1.0, std::max(0.0, x)));
    }
}

// Low-frequency cosine plaid; frequencies derive from the class index, phases
// from the class key.
inline void render_static(SyntheticVideo& v, const DatasetManifest& man, int label,
                          SplitMix64& inst) {
    SplitMix64 cls(stream_key(man.seed, kStreamStaticClass, static_cast<uint64_t>(label), 0));
    const int fx = 1 + label % 3;
    const int fy = 1 + (label / 3) % 3;
    std::vector<double> phase(static_cast<size_t>(v.channels));
    for (auto& p : phase) p = cls.uniform(0.0, 2.0 * std::numbers::pi);

    const double amp = inst.uniform(0.28, 0.40);
    const double jitter = inst.uniform(-0.3, 0.3);
    float* f0 = frame_ptr(v, 0);
    for (int c = 0; c < v.channels; ++c)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                double arg = 2.0 * std::numbers::pi * (fx * static_cast<double>(x) / v.width +
                                           fy * static_cast<double>(y) / v.height) +
                             phase[static_cast<size_t>(c)] + jitter;
                f0[(static_cast<size_t>(c) * v.height + y) * v.width + x] =
                    static_cast<float>(0.5 + amp * std::cos(arg));
            }
    for (int t = 1; t < v.video_length; ++t)
        std::copy(f0, f0 + v.frame_elems(), frame_ptr(v, t));
    v.difficulty = {1.0 / v.video_length, FeatureDepth::Shallow};
}

struct MotionWindow {
    int begin = 0;
    int end = 0; // exclusive; begin + end == video_length
};

// Canonical (leftward) mover: blob slides right-to-left across the window,
// background only elsewhere. The window is centered so that reversing the
// frame order maps it onto itself.
inline MotionWindow render_motion_canonical(SyntheticVideo& v, const DatasetManifest& man,
                                            int pair, SplitMix64& inst) {
    SplitMix64 cls(stream_key(man.seed, kStreamPairClass, static_cast<uint64_t>(pair), 0));
    std::vector<double> base(static_cast<size_t>(v.channels)), sx(base.size()), sy(base.size()),
        blob_w(base.size());
    for (size_t c = 0; c < base.size(); ++c) {
        base[c] = cls.uniform(0.30, 0.45);
        sx[c] = cls.uniform(-0.10, 0.10);
        sy[c] = cls.uniform(-0.10, 0.10);
        blob_w[c] = cls.uniform(0.75, 1.0);
    }

    const int w0 = (v.video_length + 2) / 3; // ceil(T/3)
    const int w1 = v.video_length - w0;
    const int max_shrink = std::min(2, (w1 - w0 - 4) / 2);
    const int shrink = max_shrink > 0 ? static_cast<int>(inst.below(static_cast<uint64_t>(max_shrink + 1))) : 0;
    MotionWindow win{w0 + shrink, w1 - shrink};

    // The travel is kept short and the blob large so that consecutive sampled
    // frames overlap heavily: the direction signal then lands inside a small
    // conv kernel's receptive field even after spatial downsampling.
    const double span = inst.uniform(0.30, 0.42) * v.width;
    const double center = inst.uniform(0.38, 0.62) * v.width;
    const double x_hi = center + span / 2.0;
    const double x_lo = center - span / 2.0;
    const double y0 = inst.uniform(0.35, 0.65) * v.height;
    const double sigma = inst.uniform(3.0, 4.0) * (std::min(v.height, v.width) / 32.0);
    const double amp = inst.uniform(0.55, 0.70);

    for (int t = 0; t < v.video_length; ++t) {
        float* f = frame_ptr(v, t);
        const bool in_window = t >= win.begin && t < win.end;
        double pos = 0.0;
        if (in_window) {
            const double u = win.end - win.begin > 1
                                 ? static_cast<double>(t - win.begin) / (win.end - 1 - win.begin)
                                 : 0.0;
            pos = x_hi + (x_lo - x_hi) * u;
        }
        for (int c = 0; c < v.channels; ++c)
            for (int y = 0; y < v.height; ++y)
                for (int x = 0; x < v.width; ++x) {
                    double val = base[static_cast<size_t>(c)] +
                                 sx[static_cast<size_t>(c)] * (static_cast<double>(x) / v.width - 0.5) +
                                 sy[static_cast<size_t>(c)] * (static_cast<double>(y) / v.height - 0.5);
                    if (in_window) {
                        const double dx = x - pos, dy = y - y0;
                        val += blob_w[static_cast<size_t>(c)] * amp *
                               std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    }
                    f[(static_cast<size_t>(c) * v.height + y) * v.width + x] = static_cast<float>(val);
                }
    }
    v.difficulty = {static_cast<double>(win.end - win.begin) / v.video_length, FeatureDepth::Shallow};
    return win;
}

inline void reverse_frames(SyntheticVideo& v) {
    const size_t n = v.frame_elems();
    std::vector<float> tmp(n);
    for (int t = 0; t < v.video_length / 2; ++t) {
        float* a = frame_ptr(v, t);
        float* b = frame_ptr(v, v.video_length - 1 - t);
        std::copy(a, a + n, tmp.data());
        std::copy(b, b + n, a);
        std::copy(tmp.data(), tmp.data() + n, b);
    }
}

// Shared smooth background plus a frozen per-class pixel-scale pattern.
inline void render_texture(SyntheticVideo& v, const DatasetManifest& man, int texture_index,
                           SplitMix64& inst) {
    SplitMix64 shared(stream_key(man.seed, kStreamTextureShared, 0, 0));
    std::vector<double> base(static_cast<size_t>(v.channels)), sx(base.size()), sy(base.size());
    for (size_t c = 0; c < base.size(); ++c) {
        base[c] = shared.uniform(0.40, 0.60);
        sx[c] = shared.uniform(-0.15, 0.15);
        sy[c] = shared.uniform(-0.15, 0.15);
    }
    SplitMix64 cls(stream_key(man.seed, kStreamTextureClass, static_cast<uint64_t>(texture_index), 0));
    std::vector<double> pattern(v.frame_elems());
    for (auto& p : pattern) p = cls.uniform(-0.09, 0.09);

    const double scale = inst.uniform(0.8, 1.2);
    float* f0 = frame_ptr(v, 0);
    size_t i = 0;
    for (int c = 0; c < v.channels; ++c)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x, ++i) {
                double val = base[static_cast<size_t>(c)] +
                             sx[static_cast<size_t>(c)] * (static_cast<double>(x) / v.width - 0.5) +
                             sy[static_cast<size_t>(c)] * (static_cast<double>(y) / v.height - 0.5) +
                             scale * pattern[i];
                f0[i] = static_cast<float>(val);
            }
    for (int t = 1; t < v.video_length; ++t)
        std::copy(f0, f0 + v.frame_elems(), frame_ptr(v, t));
    v.difficulty = {1.0 / v.video_length, FeatureDepth::Deep};
}

} // namespace detail

// One video, fully determined by (manifest, split_tag, index).
inline SyntheticVideo generate_video(const DatasetManifest& man, uint64_t split_tag, int index,
                                     int label) {
    man.validate();
    const ClassLayout layout = ClassLayout::for_classes(man.num_classes);
    SyntheticVideo v;
    v.label = label;
    v.video_length = man.video_length;
    v.channels = man.channels;
    v.height = man.height;
    v.width = man.width;
    v.pixels.assign(static_cast<size_t>(man.video_length) * v.frame_elems(), 0.0f);

    SplitMix64 inst(stream_key(man.seed, split_tag, static_cast<uint64_t>(index), 1));
    switch (layout.family_of(label)) {
        case ClassFamily::StaticPattern:
            detail::render_static(v, man, label, inst);
            break;
        case ClassFamily::MotionDirection: {
            detail::render_motion_canonical(v, man, layout.pair_index(label), inst);
            if (layout.is_mirrored(label)) detail::reverse_frames(v);
            break;
        }
        case ClassFamily::FineTexture:
            detail::render_texture(v, man, label - layout.n_static - 2 * layout.n_pairs, inst);
            break;
    }
    detail::add_noise_and_clamp(v, man.noise, inst);
    return v;
}

// A matched (left-mover, time-mirrored right-mover) pair built from one draw:
// the right video is frame-for-frame the reverse of the left one.
struct MotionPair {
    SyntheticVideo left;
    SyntheticVideo right;
    int window_begin = 0;
    int window_end = 0;
};

inline MotionPair make_motion_pair(const DatasetManifest& man, int pair, uint64_t key) {
    man.validate();
    const ClassLayout layout = ClassLayout::for_classes(man.num_classes);
    if (pair < 0 || pair >= layout.n_pairs)
        throw ConfigError("motion pair " + std::to_string(pair) + " out of range");
    MotionPair mp;
    SyntheticVideo& v = mp.left;
    v.label = layout.n_static + 2 * pair;
    v.video_length = man.video_length;
    v.channels = man.channels;
    v.height = man.height;
    v.width = man.width;
    v.pixels.assign(static_cast<size_t>(man.video_length) * v.frame_elems(), 0.0f);
    SplitMix64 inst(stream_key(man.seed, 999, key, 1));
    auto win = detail::render_motion_canonical(v, man, pair, inst);
    mp.window_begin = win.begin;
    mp.window_end = win.end;
    detail::add_noise_and_clamp(v, man.noise, inst);
    mp.right = mp.left;
    mp.right.label = v.label + 1;
    detail::reverse_frames(mp.right);
    return mp;
}

struct Dataset {
    DatasetManifest manifest;
    std::vector<SyntheticVideo> train;
    std::vector<SyntheticVideo> val;
    std::vector<SyntheticVideo> test;

    const std::vector<SyntheticVideo>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
    }
};

inline Dataset generate_dataset(const DatasetManifest& man) {
    man.validate();
    Dataset ds;
    ds.manifest = man;
    auto fill = [&man](std::vector<SyntheticVideo>& out, uint64_t split_tag, int count) {
        out.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i)
            out.push_back(generate_video(man, split_tag, i, i % man.num_classes));
    };
    fill(ds.train, 1, man.n_train);
    fill(ds.val, 2, man.n_val);
    fill(ds.test, 3, man.n_test);
    return ds;
}

namespace detail {
constexpr char kDatasetMagic[8] = {'E', 'X', 'G', 'D', 'S', 'E', 'T', '1'};

inline void write_video(ByteWriter& w, const SyntheticVideo& v) {
    w.u32(static_cast<uint32_t>(v.label));
    w.f64(v.difficulty.temporal_extent);
    w.u8(static_cast<uint8_t>(v.difficulty.feature_depth));
    for (float p : v.pixels) w.f32(p);
}

inline SyntheticVideo read_video(ByteReader& r, const DatasetManifest& man) {
    SyntheticVideo v;
    v.label = static_cast<int>(r.u32());
    v.difficulty.temporal_extent = r.f64();
    uint8_t depth = r.u8();
    if (depth > 1) throw IoError("bad feature depth byte in dataset");
    v.difficulty.feature_depth = static_cast<FeatureDepth>(depth);
    v.video_length = man.video_length;
    v.channels = man.channels;
    v.height = man.height;
    v.width = man.width;
    v.pixels.resize(static_cast<size_t>(man.video_length) * v.frame_elems());
    for (float& p : v.pixels) p = r.f32();
    return v;
}

inline void write_manifest(ByteWriter& w, const DatasetManifest& m) {
    w.u64(m.seed);
    w.u32(static_cast<uint32_t>(m.num_classes));
    w.u32(static_cast<uint32_t>(m.n_train));
    w.u32(static_cast<uint32_t>(m.n_val));
    w.u32(static_cast<uint32_t>(m.n_test));
    w.u32(static_cast<uint32_t>(m.video_length));
    w.u32(static_cast<uint32_t>(m.channels));
    w.u32(static_cast<uint32_t>(m.height));
    w.u32(static_cast<uint32_t>(m.width));
    w.f64(m.noise);
}

inline DatasetManifest read_manifest_body(ByteReader& r) {
    DatasetManifest m;
    m.seed = r.u64();
    m.num_classes = static_cast<int>(r.u32());
    m.n_train = static_cast<int>(r.u32());
    m.n_val = static_cast<int>(r.u32());
    m.n_test = static_cast<int>(r.u32());
    m.video_length = static_cast<int>(r.u32());
    m.channels = static_cast<int>(r.u32());
    m.height = static_cast<int>(r.u32());
    m.width = static_cast<int>(r.u32());
    m.noise = r.f64();
    return m;
}

inline ByteReader open_dataset(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kDatasetMagic, sizeof magic) != 0)
        throw IoError("not a dataset file: " + path);
    uint32_t version = r.u32();
    if (version != 1) throw IoError("unsupported dataset version " + std::to_string(version));
    return r;
}
} // namespace detail

inline void save_dataset(const std::string& path, const Dataset& ds) {
    ByteWriter w;
    w.bytes(detail::kDatasetMagic, sizeof detail::kDatasetMagic);
    w.u32(1);
    detail::write_manifest(w, ds.manifest);
    for (const auto& v : ds.train) detail::write_video(w, v);
    for (const auto& v : ds.val) detail::write_video(w, v);
    for (const auto& v : ds.test) detail::write_video(w, v);
    w.write_file(path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    ByteReader r = detail::open_dataset(path);
    return detail::read_manifest_body(r);
}

inline Dataset load_dataset(const std::string& path) {
    ByteReader r = detail::open_dataset(path);
    Dataset ds;
    ds.manifest = detail::read_manifest_body(r);
    ds.manifest.validate();
    ds.train.reserve(static_cast<size_t>(ds.manifest.n_train));
    for (int i = 0; i < ds.manifest.n_train; ++i)
        ds.train.push_back(detail::read_video(r, ds.manifest));
    ds.val.reserve(static_cast<size_t>(ds.manifest.n_val));
    for (int i = 0; i < ds.manifest.n_val; ++i) ds.val.push_back(detail::read_video(r, ds.manifest));
    ds.test.reserve(static_cast<size_t>(ds.manifest.n_test));
    for (int i = 0; i < ds.manifest.n_test; ++i)
        ds.test.push_back(detail::read_video(r, ds.manifest));
    if (!r.at_end()) throw IoError("trailing bytes in dataset file: " + path);
    return ds;
}

} // namespace exitgrid
