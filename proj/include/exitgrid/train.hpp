#pragma once

// Training: every head is supervised at once (summed cross-entropy), with
// plain momentum SGD over batch-accumulated tape gradients. The forward pass
// is built from the same kernels the inference engine uses, in the same
// order, so a trained model evaluates identically at deployment.

#include <future>
#include <ostream>
#include <vector>

#include "exitgrid/autodiff.hpp"
#include "exitgrid/data.hpp"
#include "exitgrid/engine.hpp"

namespace exitgrid {

// Feeding plan for a grid: the fixed two-group order when permuting 8 sets,
// identity otherwise. Permutation of other set counts is not defined.
inline PermutationPlan plan_for_grid(const CheckpointGrid& grid) {
    if (!grid.permute_inputs) return PermutationPlan::identity_plan(grid.n_sets, grid.set_size);
    if (grid.n_sets != 8)
        throw ConfigError("the input permutation is defined for 8 frame-sets; got " +
                          std::to_string(grid.n_sets) + " (disable permutation or use 8 sets)");
    return PermutationPlan::two_group_plan(grid.set_size);
}

// Uniformly sample the frames the grid consumes and arrange them into
// frame-sets in feeding order.
inline std::vector<FrameSet> video_frame_sets(const SyntheticVideo& video,
                                              const CheckpointGrid& grid,
                                              const PermutationPlan& plan) {
    const int l = grid.n_frames();
    std::vector<int> idx = sample_frames(video.video_length, l);
    std::vector<Tensor> frames;
    frames.reserve(static_cast<size_t>(l));
    for (int i : idx) frames.push_back(video.frame_tensor(i));
    return permute(frames, plan);
}

struct TrainConfig {
    int epochs = 3;
    int batch_size = 16;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    uint64_t seed = 1;
    int threads = 1;
};

struct EpochStats {
    double mean_loss = 0.0;
    std::vector<double> head_accuracy; // per checkpoint, on the training split
};

struct TrainStats {
    std::vector<EpochStats> epochs;
    bool aborted = false;
    std::string abort_reason;
};

// Everything the trainer needs to reach back into one video's tape.
struct TapeForward {
    std::vector<VarId> block_w, block_b, norm_g, norm_b, head_w, head_b;
    std::vector<VarId> head_logits;
    VarId loss = kNoVar;
};

// Mirror of the lattice dataflow on the tape: frames advance in feeding
// order, each block's input is the previous block's output, and the shifted
// slice comes from the previous frame's (pre-shift) input at that block.
inline TapeForward build_training_graph(Tape& tape, const CheckpointGrid& grid,
                                        const ModelParams& params,
                                        const std::vector<FrameSet>& sets, int label) {
    grid.require_valid();
    params.check_shapes(grid);
    if (static_cast<int>(sets.size()) != grid.n_sets)
        throw ConfigError("training graph: got " + std::to_string(sets.size()) +
                          " frame-sets, expected " + std::to_string(grid.n_sets));
    TapeForward tf;
    const int M = grid.n_blocks();
    const int E = grid.set_size;
    const int T = grid.n_frames();
    for (int m = 0; m < M; ++m) {
        tf.block_w.push_back(tape.param(params.block_w[static_cast<size_t>(m)]));
        tf.block_b.push_back(tape.param(params.block_b[static_cast<size_t>(m)]));
        tf.norm_g.push_back(tape.param(params.norm_g[static_cast<size_t>(m)]));
        tf.norm_b.push_back(tape.param(params.norm_b[static_cast<size_t>(m)]));
    }
    for (int k = 0; k < grid.n_checkpoints(); ++k) {
        tf.head_w.push_back(tape.param(params.head_w[static_cast<size_t>(k)]));
        tf.head_b.push_back(tape.param(params.head_b[static_cast<size_t>(k)]));
    }

    // inputs[t][m]: the (pre-shift) input frame t feeds into block m.
    std::vector<std::vector<VarId>> inputs(static_cast<size_t>(T),
                                           std::vector<VarId>(static_cast<size_t>(M), kNoVar));
    std::vector<std::vector<VarId>> outputs = inputs; // block outputs per frame
    for (int t = 0; t < T; ++t) {
        const int n = t / E, e = t % E;
        VarId cur = tape.input(sets[static_cast<size_t>(n)].frames[static_cast<size_t>(e)]);
        for (int m = 0; m < M; ++m) {
            inputs[static_cast<size_t>(t)][static_cast<size_t>(m)] = cur;
            VarId x = cur;
            if (grid.shift.enabled_at(m)) {
                VarId prev = t > 0 ? inputs[static_cast<size_t>(t - 1)][static_cast<size_t>(m)] : kNoVar;
                x = tape.shift(prev, cur, grid.shift);
            }
            ConvBlockSpec lin = grid.blocks[static_cast<size_t>(m)];
            lin.has_relu = false;
            cur = tape.conv_block(x, lin, tf.block_w[static_cast<size_t>(m)],
                                  tf.block_b[static_cast<size_t>(m)]);
            cur = tape.norm(cur, tf.norm_g[static_cast<size_t>(m)],
                            tf.norm_b[static_cast<size_t>(m)],
                            grid.blocks[static_cast<size_t>(m)].has_relu);
            outputs[static_cast<size_t>(t)][static_cast<size_t>(m)] = cur;
        }
    }

    std::vector<VarId> losses;
    for (int k = 0; k < grid.n_checkpoints(); ++k) {
        const GridCoord cp = grid.checkpoints[static_cast<size_t>(k)];
        std::vector<int> rows(static_cast<size_t>(cp.set) + 1);
        for (int n = 0; n <= cp.set; ++n) rows[static_cast<size_t>(n)] = n;
        std::sort(rows.begin(), rows.end(), [&sets](int a, int b) {
            return sets[static_cast<size_t>(a)].set_index < sets[static_cast<size_t>(b)].set_index;
        });
        std::vector<VarId> feats;
        for (int n : rows)
            for (int e = 0; e < E; ++e)
                feats.push_back(outputs[static_cast<size_t>(n * E + e)][static_cast<size_t>(cp.block)]);
        VarId logits = tape.head(std::move(feats), grid.heads[static_cast<size_t>(k)],
                                 tf.head_w[static_cast<size_t>(k)], tf.head_b[static_cast<size_t>(k)]);
        tf.head_logits.push_back(logits);
        losses.push_back(tape.cross_entropy_loss(logits, label));
    }
    tf.loss = tape.add_scalars(std::move(losses));
    return tf;
}

namespace detail {

struct GradAccum {
    std::vector<Tensor> block_w, block_b, norm_g, norm_b, head_w, head_b;
    double loss_sum = 0.0;
    std::vector<uint64_t> head_correct;
    int count = 0;

    explicit GradAccum(const ModelParams& p) {
        auto zeros = [](const std::vector<Tensor>& src) {
            std::vector<Tensor> out;
            out.reserve(src.size());
            for (const auto& t : src) out.emplace_back(t.shape());
            return out;
        };
        block_w = zeros(p.block_w);
        block_b = zeros(p.block_b);
        norm_g = zeros(p.norm_g);
        norm_b = zeros(p.norm_b);
        head_w = zeros(p.head_w);
        head_b = zeros(p.head_b);
        head_correct.assign(p.head_w.size(), 0);
    }

    void merge(const GradAccum& other) {
        auto add = [](std::vector<Tensor>& dst, const std::vector<Tensor>& src) {
            for (size_t i = 0; i < dst.size(); ++i)
                for (size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
        };
        add(block_w, other.block_w);
        add(block_b, other.block_b);
        add(norm_g, other.norm_g);
        add(norm_b, other.norm_b);
        add(head_w, other.head_w);
        add(head_b, other.head_b);
        loss_sum += other.loss_sum;
        for (size_t k = 0; k < head_correct.size(); ++k) head_correct[k] += other.head_correct[k];
        count += other.count;
    }
};

inline void accumulate_video(GradAccum& acc, const CheckpointGrid& grid, const ModelParams& params,
                             const SyntheticVideo& video, const PermutationPlan& plan) {
    std::vector<FrameSet> sets = video_frame_sets(video, grid, plan);
    Tape tape;
    TapeForward tf = build_training_graph(tape, grid, params, sets, video.label);
    const double loss = tape.value(tf.loss)[0];
    if (!std::isfinite(loss))
        throw NumericError("non-finite training loss (" + std::to_string(loss) + ")");
    tape.backward(tf.loss);
    auto add = [&tape](std::vector<Tensor>& dst, const std::vector<VarId>& ids) {
        for (size_t i = 0; i < dst.size(); ++i) {
            const Tensor& g = tape.grad(ids[i]);
            for (size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += g[j];
        }
    };
    add(acc.block_w, tf.block_w);
    add(acc.block_b, tf.block_b);
    add(acc.norm_g, tf.norm_g);
    add(acc.norm_b, tf.norm_b);
    add(acc.head_w, tf.head_w);
    add(acc.head_b, tf.head_b);
    acc.loss_sum += loss;
    for (size_t k = 0; k < tf.head_logits.size(); ++k)
        if (argmax(tape.value(tf.head_logits[k])) == video.label) acc.head_correct[k]++;
    acc.count++;
}

} // namespace detail

// Momentum SGD over the summed-head loss. Batches accumulate per-video
// gradients in fixed-size chunks that are folded in chunk order; the chunk
// boundaries define the floating-point summation tree and do not depend on
// the thread count, so any thread count produces bit-identical results. A
// non-finite loss aborts the run and restores the parameters from the end of
// the last completed epoch.
inline TrainStats train_model(const CheckpointGrid& grid, ModelParams& params,
                              const std::vector<SyntheticVideo>& videos, const TrainConfig& cfg,
                              std::ostream* log = nullptr) {
    grid.require_valid();
    params.check_shapes(grid);
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
    if (videos.empty() && cfg.epochs > 0) throw ConfigError("no training videos");

    const PermutationPlan plan = plan_for_grid(grid);
    TrainStats stats;
    ModelParams last_good = params;
    ModelParams velocity; // same shapes, zero-init
    for (const auto& t : params.block_w) velocity.block_w.emplace_back(t.shape());
    for (const auto& t : params.block_b) velocity.block_b.emplace_back(t.shape());
    for (const auto& t : params.norm_g) velocity.norm_g.emplace_back(t.shape());
    for (const auto& t : params.norm_b) velocity.norm_b.emplace_back(t.shape());
    for (const auto& t : params.head_w) velocity.head_w.emplace_back(t.shape());
    for (const auto& t : params.head_b) velocity.head_b.emplace_back(t.shape());

    SplitMix64 shuffle_rng(stream_key(cfg.seed, 77, 0, 0));
    std::vector<size_t> order(videos.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = shuffle_rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        detail::GradAccum epoch_acc(params);
        try {
            for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
                const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
                detail::GradAccum batch(params);
                constexpr size_t kChunkVideos = 4; // summation granularity, fixed
                const size_t n_chunks = (end - start + kChunkVideos - 1) / kChunkVideos;
                auto run_chunk = [&](size_t c) {
                    detail::GradAccum chunk(params);
                    const size_t lo = start + c * kChunkVideos;
                    const size_t hi = std::min(end, lo + kChunkVideos);
                    for (size_t i = lo; i < hi; ++i)
                        detail::accumulate_video(chunk, grid, params, videos[order[i]], plan);
                    return chunk;
                };
                if (cfg.threads == 1 || n_chunks == 1) {
                    for (size_t c = 0; c < n_chunks; ++c) batch.merge(run_chunk(c));
                } else {
                    for (size_t c0 = 0; c0 < n_chunks; c0 += static_cast<size_t>(cfg.threads)) {
                        const size_t c1 = std::min(n_chunks, c0 + static_cast<size_t>(cfg.threads));
                        std::vector<std::future<detail::GradAccum>> futures;
                        for (size_t c = c0; c < c1; ++c)
                            futures.push_back(std::async(std::launch::async, run_chunk, c));
                        for (auto& f : futures) batch.merge(f.get());
                    }
                }

                const double inv = 1.0 / static_cast<double>(batch.count);
                auto step = [&](std::vector<Tensor>& p, const std::vector<Tensor>& g,
                                std::vector<Tensor>& v, double wd) {
                    for (size_t i = 0; i < p.size(); ++i) {
                        Tensor mean_g(g[i].shape());
                        for (size_t j = 0; j < mean_g.size(); ++j) mean_g[j] = g[i][j] * inv;
                        sgd_step(p[i], mean_g, v[i], cfg.lr, cfg.momentum, wd);
                    }
                };
                step(params.block_w, batch.block_w, velocity.block_w, cfg.weight_decay);
                step(params.block_b, batch.block_b, velocity.block_b, cfg.weight_decay);
                // No decay on the normalization affine: shrinking gains toward
                // zero would silence whole channels rather than regularize.
                step(params.norm_g, batch.norm_g, velocity.norm_g, 0.0);
                step(params.norm_b, batch.norm_b, velocity.norm_b, 0.0);
                step(params.head_w, batch.head_w, velocity.head_w, cfg.weight_decay);
                step(params.head_b, batch.head_b, velocity.head_b, cfg.weight_decay);
                epoch_acc.loss_sum += batch.loss_sum;
                for (size_t k = 0; k < batch.head_correct.size(); ++k)
                    epoch_acc.head_correct[k] += batch.head_correct[k];
                epoch_acc.count += batch.count;
            }
        } catch (const NumericError& e) {
            params = last_good;
            stats.aborted = true;
            stats.abort_reason = e.what();
            if (log) *log << "training aborted in epoch " << epoch + 1 << ": " << e.what()
                          << " (parameters restored)\n";
            return stats;
        }

        EpochStats es;
        es.mean_loss = epoch_acc.loss_sum / static_cast<double>(epoch_acc.count);
        for (uint64_t c : epoch_acc.head_correct)
            es.head_accuracy.push_back(static_cast<double>(c) / static_cast<double>(epoch_acc.count));
        stats.epochs.push_back(es);
        last_good = params;
        if (log) {
            *log << "epoch " << epoch + 1 << "/" << cfg.epochs << "  loss " << es.mean_loss
                 << "  head acc";
            for (double a : es.head_accuracy) *log << " " << a;
            *log << "\n"
                 << std::flush;
        }
    }
    return stats;
}

} // namespace exitgrid
