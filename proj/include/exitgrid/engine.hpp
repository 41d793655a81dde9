#pragma once

// Execution over the checkpoint grid: a caching executor that evaluates only
// the dependency closure of each checkpoint, the progressive (early-exit)
// runner with its exact FLOPs meter, and a deliberately simple full forward
// pass kept free of the caching machinery for cross-checking.

#include <cstdint>
#include <vector>

#include "exitgrid/grid.hpp"
#include "exitgrid/model.hpp"
#include "exitgrid/policy.hpp"

namespace exitgrid {

struct NodeCache {
    int n_sets = 0;
    int n_blocks = 0;
    std::vector<std::vector<Tensor>> features; // node -> set_size tensors; empty = not computed
    uint64_t flops_spent = 0;
    uint64_t nodes_evaluated = 0;

    bool has(int set, int block) const {
        return !features[static_cast<size_t>(set) * n_blocks + block].empty();
    }
    const std::vector<Tensor>& at(int set, int block) const {
        const auto& f = features[static_cast<size_t>(set) * n_blocks + block];
        if (f.empty())
            throw StateError("node (" + std::to_string(set) + "," + std::to_string(block) +
                             ") has not been evaluated");
        return f;
    }
};

class LatticeExecutor {
public:
    // `sets` must be in feeding order (plan order when permuting) and outlive
    // the executor.
    LatticeExecutor(const CheckpointGrid& grid, const ModelParams& params,
                    const std::vector<FrameSet>& sets)
        : grid_(&grid), params_(&params), sets_(&sets) {
        grid.require_valid();
        params.check_shapes(grid);
        if (static_cast<int>(sets.size()) != grid.n_sets)
            throw ConfigError("executor: got " + std::to_string(sets.size()) + " frame-sets for a " +
                              std::to_string(grid.n_sets) + "-row grid");
        const std::vector<int> frame_shape{grid.frame_channels, grid.frame_h, grid.frame_w};
        for (const auto& fs : sets) {
            if (static_cast<int>(fs.frames.size()) != grid.set_size)
                throw ConfigError("executor: frame-set with " + std::to_string(fs.frames.size()) +
                                  " frames, expected " + std::to_string(grid.set_size));
            for (const auto& f : fs.frames)
                if (f.shape() != frame_shape)
                    throw ConfigError("executor: frame shape " + f.shape_string() + " != expected " +
                                      Tensor::shape_string(frame_shape));
        }
        cache_.n_sets = grid.n_sets;
        cache_.n_blocks = grid.n_blocks();
        cache_.features.resize(static_cast<size_t>(grid.n_sets) * grid.n_blocks());
    }

    // Evaluate (in set-major order) every node checkpoint k needs that is not
    // cached yet.
    void ensure_checkpoint(int k) {
        for (const GridCoord& node : nodes_required(*grid_, k)) ensure_node(node.set, node.block);
    }

    // Logits of head k, reading cached features only. Throws StateError if a
    // required node has not been evaluated.
    Tensor head_logits(int k) const {
        if (k < 0 || k >= grid_->n_checkpoints())
            throw ConfigError("head_logits: checkpoint " + std::to_string(k) + " out of range");
        const GridCoord cp = grid_->checkpoints[static_cast<size_t>(k)];
        // Aggregate in source-set order so the result is independent of the
        // feeding order whenever the features themselves are.
        std::vector<int> rows(static_cast<size_t>(cp.set) + 1);
        for (int n = 0; n <= cp.set; ++n) rows[static_cast<size_t>(n)] = n;
        std::sort(rows.begin(), rows.end(), [&](int a, int b) {
            return (*sets_)[static_cast<size_t>(a)].set_index < (*sets_)[static_cast<size_t>(b)].set_index;
        });
        std::vector<const Tensor*> feats;
        feats.reserve(rows.size() * static_cast<size_t>(grid_->set_size));
        for (int n : rows)
            for (const Tensor& f : cache_.at(n, cp.block)) feats.push_back(&f);
        return head_forward(feats, grid_->heads[static_cast<size_t>(k)],
                            params_->head_w[static_cast<size_t>(k)],
                            params_->head_b[static_cast<size_t>(k)]);
    }

    Tensor logits_at(int k) {
        ensure_checkpoint(k);
        return head_logits(k);
    }

    const NodeCache& cache() const { return cache_; }
    // Meter value for a sample that exits at checkpoint k right now.
    uint64_t flops_if_exiting(int k) const { return cache_.flops_spent + head_flops(*grid_, k); }

private:
    // Dataflow inputs of frame t at block m: the frame's own column
    // predecessor, and (when shift is on) the previous frame's input at the
    // same block — which lives in column m-1 of the previous set row.
    void ensure_node(int n, int m) {
        if (cache_.has(n, m)) return;
        if (m > 0) {
            ensure_node(n, m - 1);
            if (grid_->shift.enabled_at(m) && n > 0) ensure_node(n - 1, m - 1);
        }
        const auto& spec = grid_->blocks[static_cast<size_t>(m)];
        const Tensor& w = params_->block_w[static_cast<size_t>(m)];
        const Tensor& b = params_->block_b[static_cast<size_t>(m)];
        const Tensor& ng = params_->norm_g[static_cast<size_t>(m)];
        const Tensor& nb = params_->norm_b[static_cast<size_t>(m)];
        const int E = grid_->set_size;
        const uint64_t per_frame = conv_flops(spec, grid_->block_in_h(m), grid_->block_in_w(m));
        std::vector<Tensor> outs;
        outs.reserve(static_cast<size_t>(E));
        for (int e = 0; e < E; ++e) {
            const Tensor* cur_in = block_input(n, e, m);
            if (grid_->shift.enabled_at(m)) {
                const Tensor* prev_in = nullptr;
                if (n > 0 || e > 0) {
                    const int pn = e > 0 ? n : n - 1;
                    const int pe = e > 0 ? e - 1 : E - 1;
                    prev_in = block_input(pn, pe, m);
                }
                outs.push_back(
                    block_forward(online_shift(prev_in, *cur_in, grid_->shift), spec, w, b, ng, nb));
            } else {
                outs.push_back(block_forward(*cur_in, spec, w, b, ng, nb));
            }
            cache_.flops_spent += per_frame;
        }
        cache_.features[static_cast<size_t>(n) * cache_.n_blocks + m] = std::move(outs);
        cache_.nodes_evaluated++;
    }

    const Tensor* block_input(int n, int e, int m) const {
        if (m == 0) return &(*sets_)[static_cast<size_t>(n)].frames[static_cast<size_t>(e)];
        return &cache_.at(n, m - 1)[static_cast<size_t>(e)];
    }

    const CheckpointGrid* grid_;
    const ModelParams* params_;
    const std::vector<FrameSet>* sets_;
    NodeCache cache_;
};

struct Decision {
    int label = -1;
    int exit_checkpoint = -1;
    Tensor scores;  // softmax over classes at the exit head
    uint64_t flops = 0;
};

inline int argmax(const Tensor& t) {
    int best = 0;
    for (size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[best]) best = static_cast<int>(i);
    return best;
}

// Walk the checkpoints in order, computing only each one's closure delta, and
// exit at the first k whose max score clears T_k (the last always exits).
inline Decision run_progressive(const CheckpointGrid& grid, const ModelParams& params,
                                const std::vector<FrameSet>& sets, const ExitPolicy& policy) {
    if (policy.n_checkpoints() != grid.n_checkpoints())
        throw ConfigError("policy has " + std::to_string(policy.n_checkpoints()) +
                          " thresholds for a " + std::to_string(grid.n_checkpoints()) +
                          "-checkpoint grid");
    LatticeExecutor exec(grid, params, sets);
    for (int k = 0; k < grid.n_checkpoints(); ++k) {
        exec.ensure_checkpoint(k);
        Tensor scores = softmax(exec.head_logits(k));
        if (decide_exit(scores, k, policy)) {
            Decision d;
            d.label = argmax(scores);
            d.exit_checkpoint = k;
            d.scores = std::move(scores);
            d.flops = exec.flops_if_exiting(k);
            return d;
        }
    }
    throw StateError("run_progressive: no checkpoint exited"); // unreachable: last always exits
}

// Logits of every head with no early exit (confidence collection).
struct CheckpointOutputs {
    std::vector<Tensor> logits;
    uint64_t full_flops = 0; // meter after computing the final checkpoint's closure + its head
};

inline CheckpointOutputs run_all_checkpoints(const CheckpointGrid& grid, const ModelParams& params,
                                             const std::vector<FrameSet>& sets) {
    LatticeExecutor exec(grid, params, sets);
    CheckpointOutputs out;
    for (int k = 0; k < grid.n_checkpoints(); ++k) out.logits.push_back(exec.logits_at(k));
    out.full_flops = exec.flops_if_exiting(grid.n_checkpoints() - 1);
    return out;
}

// Straight-line forward pass over all frames and blocks, written without the
// cache or closure machinery. Must agree bit-for-bit with the final
// checkpoint of the progressive path.
inline Tensor run_full(const CheckpointGrid& grid, const ModelParams& params,
                       const std::vector<FrameSet>& sets) {
    grid.require_valid();
    params.check_shapes(grid);
    const int E = grid.set_size;
    const int M = grid.n_blocks();
    // prev_inputs[m]: the (pre-shift) input the previous frame consumed at
    // block m; starts empty for the first frame.
    std::vector<Tensor> prev_inputs(static_cast<size_t>(M));
    std::vector<bool> have_prev(static_cast<size_t>(M), false);
    std::vector<std::vector<Tensor>> final_feats(sets.size());

    for (size_t n = 0; n < sets.size(); ++n) {
        for (int e = 0; e < E; ++e) {
            Tensor x = sets[n].frames[static_cast<size_t>(e)];
            std::vector<Tensor> inputs_here(static_cast<size_t>(M));
            for (int m = 0; m < M; ++m) {
                inputs_here[static_cast<size_t>(m)] = x;
                if (grid.shift.enabled_at(m)) {
                    const Tensor* prev =
                        have_prev[static_cast<size_t>(m)] ? &prev_inputs[static_cast<size_t>(m)] : nullptr;
                    x = online_shift(prev, x, grid.shift);
                }
                x = block_forward(x, grid.blocks[static_cast<size_t>(m)],
                                  params.block_w[static_cast<size_t>(m)],
                                  params.block_b[static_cast<size_t>(m)],
                                  params.norm_g[static_cast<size_t>(m)],
                                  params.norm_b[static_cast<size_t>(m)]);
            }
            for (int m = 0; m < M; ++m) {
                prev_inputs[static_cast<size_t>(m)] = std::move(inputs_here[static_cast<size_t>(m)]);
                have_prev[static_cast<size_t>(m)] = true;
            }
            final_feats[n].push_back(std::move(x));
        }
    }

    std::vector<size_t> rows(sets.size());
    for (size_t i = 0; i < sets.size(); ++i) rows[i] = i;
    std::sort(rows.begin(), rows.end(),
              [&](size_t a, size_t b) { return sets[a].set_index < sets[b].set_index; });
    std::vector<const Tensor*> feats;
    for (size_t n : rows)
        for (const Tensor& f : final_feats[n]) feats.push_back(&f);
    const size_t last = static_cast<size_t>(grid.n_checkpoints()) - 1;
    return head_forward(feats, grid.heads[last], params.head_w[last], params.head_b[last]);
}

} // namespace exitgrid
