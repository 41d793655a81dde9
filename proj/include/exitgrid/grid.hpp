#pragma once

// The checkpoint grid: an N x M lattice of (frame-set, block) nodes with K
// exit checkpoints along a monotone route. This header covers the static
// side — configuration, validation, dependency closure, and the exact
// per-checkpoint cost table. Execution lives in engine.hpp.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <set>
#include <string>
#include <vector>

#include "exitgrid/io.hpp"
#include "exitgrid/nn.hpp"
#include "exitgrid/temporal.hpp"

namespace exitgrid {

enum class RouteKind { DepthWise, InputWise, Joint };

inline std::string route_name(RouteKind r) {
    switch (r) {
        case RouteKind::DepthWise: return "depth";
        case RouteKind::InputWise: return "input";
        case RouteKind::Joint: return "joint";
    }
    throw ConfigError("route_name: bad route kind");
}

inline RouteKind route_from_name(const std::string& s) {
    if (s == "depth") return RouteKind::DepthWise;
    if (s == "input") return RouteKind::InputWise;
    if (s == "joint") return RouteKind::Joint;
    throw ConfigError("unknown route '" + s + "' (expected depth|input|joint)");
}

// A lattice coordinate: frame-set row `set`, block column `block`.
struct GridCoord {
    int set = 0;
    int block = 0;
    friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

struct CheckpointGrid {
    int n_sets = 0;
    int set_size = 1;
    int frame_channels = 0;
    int frame_h = 0;
    int frame_w = 0;
    std::vector<ConvBlockSpec> blocks;
    ShiftSpec shift;
    std::vector<GridCoord> checkpoints;
    std::vector<HeadSpec> heads;
    RouteKind route = RouteKind::Joint;
    bool permute_inputs = true;

    int n_blocks() const { return static_cast<int>(blocks.size()); }
    int n_checkpoints() const { return static_cast<int>(checkpoints.size()); }
    int n_frames() const { return n_sets * set_size; }
    int num_classes() const { return heads.empty() ? 0 : heads[0].num_classes; }

    // Spatial dims entering block m (all frames share them).
    int block_in_h(int m) const {
        int h = frame_h;
        for (int i = 0; i < m; ++i) h = blocks[static_cast<size_t>(i)].out_h(h);
        return h;
    }
    int block_in_w(int m) const {
        int w = frame_w;
        for (int i = 0; i < m; ++i) w = blocks[static_cast<size_t>(i)].out_w(w);
        return w;
    }
    int block_out_h(int m) const { return blocks[static_cast<size_t>(m)].out_h(block_in_h(m)); }
    int block_out_w(int m) const { return blocks[static_cast<size_t>(m)].out_w(block_in_w(m)); }

    std::vector<std::string> validate() const;
    void require_valid() const {
        auto errs = validate();
        if (errs.empty()) return;
        std::string all = "invalid grid:";
        for (const auto& e : errs) all += "\n  - " + e;
        throw ConfigError(all);
    }
};

inline std::vector<std::string> CheckpointGrid::validate() const {
    std::vector<std::string> errs;
    auto fail = [&errs](std::string msg) { errs.push_back(std::move(msg)); };

    if (n_sets < 1) fail("n_sets must be >= 1");
    if (set_size < 1) fail("set_size must be >= 1");
    if (frame_channels < 1 || frame_h < 1 || frame_w < 1)
        fail("frame dims must be positive, got [" + std::to_string(frame_channels) + "," +
             std::to_string(frame_h) + "," + std::to_string(frame_w) + "]");
    if (blocks.empty()) fail("need at least one block");

    int h = frame_h, w = frame_w, c = frame_channels;
    for (size_t m = 0; m < blocks.size(); ++m) {
        const auto& b = blocks[m];
        const std::string where = "block " + std::to_string(m);
        if (b.in_channels != c)
            fail(where + ": in_channels " + std::to_string(b.in_channels) + " != incoming " +
                 std::to_string(c));
        try {
            b.validate(h, w, where);
            h = b.out_h(h);
            w = b.out_w(w);
        } catch (const ConfigError& e) {
            fail(e.what());
            break; // downstream dims are garbage now
        }
        c = b.out_channels;
    }

    try {
        shift.validate();
    } catch (const ConfigError& e) {
        fail(e.what());
    }
    for (int m : shift.enabled_blocks)
        if (m < 0 || m >= n_blocks()) fail("shift enabled at out-of-range block " + std::to_string(m));

    if (checkpoints.empty()) fail("need at least one checkpoint");
    if (checkpoints.size() != heads.size())
        fail(std::to_string(checkpoints.size()) + " checkpoints but " + std::to_string(heads.size()) +
             " heads");
    for (size_t k = 0; k < checkpoints.size(); ++k) {
        const auto& cp = checkpoints[k];
        const std::string where = "checkpoint " + std::to_string(k);
        if (cp.set < 0 || cp.set >= n_sets || cp.block < 0 || cp.block >= n_blocks()) {
            fail(where + ": (" + std::to_string(cp.set) + "," + std::to_string(cp.block) +
                 ") out of range");
            continue;
        }
        if (k > 0) {
            const auto& prev = checkpoints[k - 1];
            if (cp.set < prev.set || cp.block < prev.block)
                fail(where + ": route must be non-decreasing in both axes");
            else if (cp.set == prev.set && cp.block == prev.block)
                fail(where + ": duplicates checkpoint " + std::to_string(k - 1));
        }
    }
    if (!checkpoints.empty() &&
        (checkpoints.back().set != n_sets - 1 || checkpoints.back().block != n_blocks() - 1))
        fail("last checkpoint must sit at the full-computation corner (" +
             std::to_string(n_sets - 1) + "," + std::to_string(n_blocks() - 1) + ")");

    if (route == RouteKind::DepthWise)
        for (const auto& cp : checkpoints)
            if (cp.set != n_sets - 1) fail("depth-wise route requires all checkpoints at the last frame-set");
    if (route == RouteKind::InputWise)
        for (const auto& cp : checkpoints)
            if (cp.block != n_blocks() - 1) fail("input-wise route requires all checkpoints at the last block");

    for (size_t k = 0; k < heads.size() && k < checkpoints.size(); ++k) {
        const auto& cp = checkpoints[k];
        if (cp.block < 0 || cp.block >= n_blocks()) continue;
        const std::string where = "head " + std::to_string(k);
        try {
            heads[k].validate(where);
        } catch (const ConfigError& e) {
            fail(e.what());
            continue;
        }
        int want = blocks[static_cast<size_t>(cp.block)].out_channels;
        if (heads[k].feature_dim != want)
            fail(where + ": feature_dim " + std::to_string(heads[k].feature_dim) +
                 " != block output channels " + std::to_string(want));
        if (heads[k].num_classes != heads[0].num_classes)
            fail(where + ": num_classes differs from head 0");
    }
    return errs;
}

// Heads attached from checkpoint coordinates: feature_dim mirrors the block's
// output channels.
inline std::vector<HeadSpec> default_heads(const std::vector<ConvBlockSpec>& blocks,
                                           const std::vector<GridCoord>& checkpoints,
                                           int num_classes) {
    std::vector<HeadSpec> heads;
    heads.reserve(checkpoints.size());
    for (const auto& cp : checkpoints) {
        if (cp.block < 0 || static_cast<size_t>(cp.block) >= blocks.size())
            throw ConfigError("default_heads: checkpoint block out of range");
        heads.push_back(HeadSpec{blocks[static_cast<size_t>(cp.block)].out_channels, num_classes});
    }
    return heads;
}

// Every node checkpoint k depends on, in execution (set-major) order.
// Requirements: the head reads (n, j_k) for all n <= i_k; a node needs its
// same-set predecessor (n, m-1); and when shift is enabled at block m it also
// needs the previous set's node (n-1, m).
inline std::vector<GridCoord> nodes_required(const CheckpointGrid& grid, int k) {
    if (k < 0 || k >= grid.n_checkpoints())
        throw ConfigError("nodes_required: checkpoint " + std::to_string(k) + " out of range");
    const GridCoord cp = grid.checkpoints[static_cast<size_t>(k)];
    const int M = grid.n_blocks();
    std::vector<char> seen(static_cast<size_t>(grid.n_sets) * M, 0);
    std::deque<GridCoord> queue;
    auto push = [&](int n, int m) {
        size_t idx = static_cast<size_t>(n) * M + m;
        if (!seen[idx]) {
            seen[idx] = 1;
            queue.push_back(GridCoord{n, m});
        }
    };
    for (int n = 0; n <= cp.set; ++n) push(n, cp.block);
    while (!queue.empty()) {
        GridCoord node = queue.front();
        queue.pop_front();
        if (node.block > 0) push(node.set, node.block - 1);
        if (node.set > 0 && grid.shift.enabled_at(node.block)) push(node.set - 1, node.block);
    }
    std::vector<GridCoord> out;
    for (int n = 0; n < grid.n_sets; ++n)
        for (int m = 0; m < M; ++m)
            if (seen[static_cast<size_t>(n) * M + m]) out.push_back(GridCoord{n, m});
    return out;
}

// FLOPs to evaluate one node (set row) at block m: E frames through the conv.
inline uint64_t node_flops(const CheckpointGrid& grid, int m) {
    return static_cast<uint64_t>(grid.set_size) *
           conv_flops(grid.blocks[static_cast<size_t>(m)], grid.block_in_h(m), grid.block_in_w(m));
}

// FLOPs for checkpoint k's head: one add per pooled element across the
// (i_k+1) sets feeding it, plus the 2*feature_dim*num_classes linear layer.
inline uint64_t head_flops(const CheckpointGrid& grid, int k) {
    const GridCoord cp = grid.checkpoints[static_cast<size_t>(k)];
    const HeadSpec& head = grid.heads[static_cast<size_t>(k)];
    const uint64_t pooled = static_cast<uint64_t>(grid.set_size) *
                            static_cast<uint64_t>(cp.set + 1) *
                            static_cast<uint64_t>(grid.blocks[static_cast<size_t>(cp.block)].out_channels) *
                            static_cast<uint64_t>(grid.block_out_h(cp.block)) *
                            static_cast<uint64_t>(grid.block_out_w(cp.block));
    return pooled + 2ull * static_cast<uint64_t>(head.feature_dim) *
                        static_cast<uint64_t>(head.num_classes);
}

// G_k: total FLOPs spent when a sample exits exactly at checkpoint k — every
// node in the dependency closure plus that one head. Heads passed through
// without exiting are not counted.
inline std::vector<uint64_t> flops_table(const CheckpointGrid& grid) {
    std::vector<uint64_t> table;
    table.reserve(static_cast<size_t>(grid.n_checkpoints()));
    for (int k = 0; k < grid.n_checkpoints(); ++k) {
        uint64_t total = head_flops(grid, k);
        for (const GridCoord& node : nodes_required(grid, k)) total += node_flops(grid, node.block);
        table.push_back(total);
    }
    return table;
}

// Canonical byte serialization of the configuration; the same bytes back the
// model-file grid table and the grid hash.
inline void serialize_grid(ByteWriter& w, const CheckpointGrid& grid) {
    w.i32(grid.n_sets);
    w.i32(grid.set_size);
    w.i32(grid.frame_channels);
    w.i32(grid.frame_h);
    w.i32(grid.frame_w);
    w.u32(static_cast<uint32_t>(grid.blocks.size()));
    for (const auto& b : grid.blocks) {
        w.i32(b.in_channels);
        w.i32(b.out_channels);
        w.i32(b.kernel_h);
        w.i32(b.kernel_w);
        w.i32(b.stride);
        w.i32(b.padding);
        w.u8(b.has_relu ? 1 : 0);
    }
    w.i32(grid.shift.fraction_num);
    w.i32(grid.shift.fraction_den);
    w.u32(static_cast<uint32_t>(grid.shift.enabled_blocks.size()));
    for (int m : grid.shift.enabled_blocks) w.i32(m);
    w.u32(static_cast<uint32_t>(grid.checkpoints.size()));
    for (const auto& cp : grid.checkpoints) {
        w.i32(cp.set);
        w.i32(cp.block);
    }
    for (const auto& h : grid.heads) {
        w.i32(h.feature_dim);
        w.i32(h.num_classes);
    }
    w.u8(static_cast<uint8_t>(grid.route));
    w.u8(grid.permute_inputs ? 1 : 0);
}

inline CheckpointGrid deserialize_grid(ByteReader& r) {
    CheckpointGrid g;
    g.n_sets = r.i32();
    g.set_size = r.i32();
    g.frame_channels = r.i32();
    g.frame_h = r.i32();
    g.frame_w = r.i32();
    uint32_t n_blocks = r.u32();
    g.blocks.resize(n_blocks);
    for (auto& b : g.blocks) {
        b.in_channels = r.i32();
        b.out_channels = r.i32();
        b.kernel_h = r.i32();
        b.kernel_w = r.i32();
        b.stride = r.i32();
        b.padding = r.i32();
        b.has_relu = r.u8() != 0;
    }
    g.shift.fraction_num = r.i32();
    g.shift.fraction_den = r.i32();
    uint32_t n_shift = r.u32();
    for (uint32_t i = 0; i < n_shift; ++i) g.shift.enabled_blocks.insert(r.i32());
    uint32_t n_cp = r.u32();
    g.checkpoints.resize(n_cp);
    for (auto& cp : g.checkpoints) {
        cp.set = r.i32();
        cp.block = r.i32();
    }
    g.heads.resize(n_cp);
    for (auto& h : g.heads) {
        h.feature_dim = r.i32();
        h.num_classes = r.i32();
    }
    uint8_t route = r.u8();
    if (route > 2) throw IoError("bad route kind in serialized grid");
    g.route = static_cast<RouteKind>(route);
    g.permute_inputs = r.u8() != 0;
    return g;
}

inline uint64_t grid_hash(const CheckpointGrid& grid) {
    ByteWriter w;
    serialize_grid(w, grid);
    return fnv1a(w.buffer());
}

} // namespace exitgrid
