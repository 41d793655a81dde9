#pragma once

// Model parameters for a checkpoint grid, their seeded initialization, and
// the binary checkpoint format.

#include <cmath>
#include <string>
#include <vector>

#include "exitgrid/grid.hpp"
#include "exitgrid/rng.hpp"

namespace exitgrid {

struct ModelParams {
    std::vector<Tensor> block_w; // [Cout, Cin, Kh, Kw] per block
    std::vector<Tensor> block_b; // [Cout] per block
    std::vector<Tensor> norm_g;  // [Cout] per block: normalization gain
    std::vector<Tensor> norm_b;  // [Cout] per block: normalization bias
    std::vector<Tensor> head_w;  // [classes, feature_dim] per head
    std::vector<Tensor> head_b;  // [classes] per head

    size_t count() const {
        size_t n = 0;
        for (const auto& t : block_w) n += t.size();
        for (const auto& t : block_b) n += t.size();
        for (const auto& t : norm_g) n += t.size();
        for (const auto& t : norm_b) n += t.size();
        for (const auto& t : head_w) n += t.size();
        for (const auto& t : head_b) n += t.size();
        return n;
    }

    void check_shapes(const CheckpointGrid& grid) const {
        if (block_w.size() != grid.blocks.size() || block_b.size() != grid.blocks.size() ||
            norm_g.size() != grid.blocks.size() || norm_b.size() != grid.blocks.size() ||
            head_w.size() != grid.heads.size() || head_b.size() != grid.heads.size())
            throw ConfigError("model parameters do not match grid layout");
        for (size_t m = 0; m < grid.blocks.size(); ++m) {
            const auto& b = grid.blocks[m];
            std::vector<int> w_shape{b.out_channels, b.in_channels, b.kernel_h, b.kernel_w};
            const std::vector<int> c_shape{b.out_channels};
            if (block_w[m].shape() != w_shape || block_b[m].shape() != c_shape ||
                norm_g[m].shape() != c_shape || norm_b[m].shape() != c_shape)
                throw ConfigError("block " + std::to_string(m) + " parameter shapes do not match the grid");
        }
        for (size_t k = 0; k < grid.heads.size(); ++k) {
            const auto& h = grid.heads[k];
            if (head_w[k].shape() != std::vector<int>{h.num_classes, h.feature_dim} ||
                head_b[k].shape() != std::vector<int>{h.num_classes})
                throw ConfigError("head " + std::to_string(k) + " parameter shapes do not match the grid");
        }
    }
};

// Fan-in scaled gaussian init: conv weights use sqrt(2/fan_in) (ReLU gain),
// head weights sqrt(1/fan_in); biases start at zero; normalization starts at
// the identity affine (gain 1, bias 0). Each tensor draws from its own keyed
// stream so layer count changes do not reshuffle others.
inline ModelParams init_params(const CheckpointGrid& grid, uint64_t seed) {
    grid.require_valid();
    ModelParams p;
    for (size_t m = 0; m < grid.blocks.size(); ++m) {
        const auto& b = grid.blocks[m];
        SplitMix64 rng(stream_key(seed, 1, static_cast<uint64_t>(m), 0));
        const double fan_in = static_cast<double>(b.in_channels) * b.kernel_h * b.kernel_w;
        const double std_dev = std::sqrt(2.0 / fan_in);
        Tensor w({b.out_channels, b.in_channels, b.kernel_h, b.kernel_w});
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.gaussian() * std_dev;
        p.block_w.push_back(std::move(w));
        p.block_b.emplace_back(std::vector<int>{b.out_channels});
        Tensor g({b.out_channels});
        for (size_t i = 0; i < g.size(); ++i) g[i] = 1.0;
        p.norm_g.push_back(std::move(g));
        p.norm_b.emplace_back(std::vector<int>{b.out_channels});
    }
    for (size_t k = 0; k < grid.heads.size(); ++k) {
        const auto& h = grid.heads[k];
        SplitMix64 rng(stream_key(seed, 2, static_cast<uint64_t>(k), 0));
        const double std_dev = std::sqrt(1.0 / static_cast<double>(h.feature_dim));
        Tensor w({h.num_classes, h.feature_dim});
        for (size_t i = 0; i < w.size(); ++i) w[i] = rng.gaussian() * std_dev;
        p.head_w.push_back(std::move(w));
        p.head_b.emplace_back(std::vector<int>{h.num_classes});
    }
    return p;
}

namespace detail {
constexpr char kModelMagic[8] = {'E', 'X', 'G', 'M', 'O', 'D', 'L', '1'};
inline void write_tensor(ByteWriter& w, const Tensor& t) {
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) w.i32(t.dim(i));
    for (size_t i = 0; i < t.size(); ++i) w.f64(t[i]);
}
inline Tensor read_tensor(ByteReader& r) {
    uint32_t rank = r.u32();
    if (rank > 8) throw IoError("implausible tensor rank in model file");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = r.i32();
    Tensor t(shape);
    for (size_t i = 0; i < t.size(); ++i) t[i] = r.f64();
    return t;
}
} // namespace detail

inline void save_model(const std::string& path, const CheckpointGrid& grid,
                       const ModelParams& params) {
    params.check_shapes(grid);
    ByteWriter w;
    w.bytes(detail::kModelMagic, sizeof detail::kModelMagic);
    w.u32(2); // version
    serialize_grid(w, grid);
    for (const auto& t : params.block_w) detail::write_tensor(w, t);
    for (const auto& t : params.block_b) detail::write_tensor(w, t);
    for (const auto& t : params.norm_g) detail::write_tensor(w, t);
    for (const auto& t : params.norm_b) detail::write_tensor(w, t);
    for (const auto& t : params.head_w) detail::write_tensor(w, t);
    for (const auto& t : params.head_b) detail::write_tensor(w, t);
    w.write_file(path);
}

struct LoadedModel {
    CheckpointGrid grid;
    ModelParams params;
};

inline LoadedModel load_model(const std::string& path) {
    ByteReader r = ByteReader::from_file(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, detail::kModelMagic, sizeof magic) != 0)
        throw IoError("not a model file: " + path);
    uint32_t version = r.u32();
    if (version != 2) throw IoError("unsupported model file version " + std::to_string(version));
    LoadedModel m;
    m.grid = deserialize_grid(r);
    m.grid.require_valid();
    const size_t n_blocks = m.grid.blocks.size(), n_heads = m.grid.heads.size();
    for (size_t i = 0; i < n_blocks; ++i) m.params.block_w.push_back(detail::read_tensor(r));
    for (size_t i = 0; i < n_blocks; ++i) m.params.block_b.push_back(detail::read_tensor(r));
    for (size_t i = 0; i < n_blocks; ++i) m.params.norm_g.push_back(detail::read_tensor(r));
    for (size_t i = 0; i < n_blocks; ++i) m.params.norm_b.push_back(detail::read_tensor(r));
    for (size_t i = 0; i < n_heads; ++i) m.params.head_w.push_back(detail::read_tensor(r));
    for (size_t i = 0; i < n_heads; ++i) m.params.head_b.push_back(detail::read_tensor(r));
    if (!r.at_end()) throw IoError("trailing bytes in model file: " + path);
    m.params.check_shapes(m.grid);
    for (const auto& t : m.params.block_w) require_finite(t, "model weights");
    for (const auto& t : m.params.norm_g) require_finite(t, "model weights");
    for (const auto& t : m.params.head_w) require_finite(t, "model weights");
    return m;
}

} // namespace exitgrid
