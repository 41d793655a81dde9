#pragma once

// Frame sampling, frame-set permutation, temporal coverage / stride analysis
// and the forward-only (causal) channel shift between consecutive frames.

#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "exitgrid/tensor.hpp"

namespace exitgrid {

// Exact rational, for coverage values that tests compare without rounding.
struct Fraction {
    long long num = 0;
    long long den = 1;

    Fraction() = default;
    Fraction(long long n, long long d) : num(n), den(d) {
        if (den == 0) throw ConfigError("fraction with zero denominator");
        long long g = std::gcd(num < 0 ? -num : num, den < 0 ? -den : den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        if (den < 0) {
            num = -num;
            den = -den;
        }
    }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Fraction&) const = default;
};

// Evenly spaced sampling: index_i = floor((i + 0.5) * video_length / l).
// Duplicates are expected when video_length < l.
inline std::vector<int> sample_frames(int video_length, int l) {
    if (video_length < 1) throw ConfigError("sample_frames: video_length must be >= 1");
    if (l < 1) throw ConfigError("sample_frames: l must be >= 1");
    std::vector<int> idx(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i)
        idx[static_cast<size_t>(i)] =
            static_cast<int>((2LL * i + 1) * video_length / (2LL * l));
    return idx;
}

// Ordering of the frame-sets fed to the grid, with its two-group structure.
// The eight-set plan is [0,3,5,6,1,2,4,7]; both groups stay in source order
// and contain the stride multiset {1,2,3}.
struct PermutationPlan {
    int n_sets = 0;
    int set_size = 1;
    std::vector<int> order;                  // plan position -> source set index
    std::vector<std::vector<int>> groups;    // source set indices, two groups

    static PermutationPlan two_group_plan(int set_size = 1) {
        PermutationPlan p;
        p.n_sets = 8;
        p.set_size = set_size;
        p.order = {0, 3, 5, 6, 1, 2, 4, 7};
        p.groups = {{0, 3, 5, 6}, {1, 2, 4, 7}};
        p.validate();
        return p;
    }

    static PermutationPlan identity_plan(int n_sets, int set_size = 1) {
        PermutationPlan p;
        p.n_sets = n_sets;
        p.set_size = set_size;
        p.order.resize(static_cast<size_t>(n_sets));
        std::iota(p.order.begin(), p.order.end(), 0);
        int half = (n_sets + 1) / 2;
        p.groups.resize(2);
        for (int i = 0; i < n_sets; ++i) p.groups[i < half ? 0 : 1].push_back(i);
        p.validate();
        return p;
    }

    void validate() const {
        if (set_size < 1) throw ConfigError("permutation plan: set_size must be >= 1");
        std::vector<bool> seen(static_cast<size_t>(n_sets), false);
        if (static_cast<int>(order.size()) != n_sets)
            throw ConfigError("permutation plan: order length != n_sets");
        for (int s : order) {
            if (s < 0 || s >= n_sets || seen[static_cast<size_t>(s)])
                throw ConfigError("permutation plan: order is not a permutation of 0..N-1");
            seen[static_cast<size_t>(s)] = true;
        }
        size_t covered = 0;
        for (const auto& g : groups) {
            for (size_t i = 0; i + 1 < g.size(); ++i)
                if (g[i] >= g[i + 1])
                    throw ConfigError("permutation plan: group indices must be strictly increasing");
            covered += g.size();
        }
        if (covered != static_cast<size_t>(n_sets))
            throw ConfigError("permutation plan: groups must cover all sets");
    }

    // source set index -> plan position
    std::vector<int> inverse() const {
        std::vector<int> inv(order.size());
        for (size_t pos = 0; pos < order.size(); ++pos)
            inv[static_cast<size_t>(order[pos])] = static_cast<int>(pos);
        return inv;
    }
};

struct FrameSet {
    int set_index = 0;                    // source set index
    std::vector<Tensor> frames;           // E tensors [C,H,W]
    std::vector<int> source_positions;    // original indices of those frames
};

// Split l == n_sets*E frames into consecutive sets and reorder them per plan.
inline std::vector<FrameSet> permute(const std::vector<Tensor>& frames,
                                     const PermutationPlan& plan) {
    const int E = plan.set_size;
    if (static_cast<int>(frames.size()) != plan.n_sets * E)
        throw ConfigError("permute: got " + std::to_string(frames.size()) + " frames, plan needs " +
                          std::to_string(plan.n_sets) + "x" + std::to_string(E));
    std::vector<FrameSet> out;
    out.reserve(static_cast<size_t>(plan.n_sets));
    for (int pos = 0; pos < plan.n_sets; ++pos) {
        FrameSet fs;
        fs.set_index = plan.order[static_cast<size_t>(pos)];
        for (int e = 0; e < E; ++e) {
            int src = fs.set_index * E + e;
            fs.frames.push_back(frames[static_cast<size_t>(src)]);
            fs.source_positions.push_back(src);
        }
        out.push_back(std::move(fs));
    }
    return out;
}

inline std::vector<FrameSet> permute(const std::vector<Tensor>& frames, int set_size) {
    return permute(frames, PermutationPlan::two_group_plan(set_size));
}

// Fraction of the sampled duration spanned by a prefix of source indices.
inline Fraction temporal_coverage(const std::vector<int>& prefix, int n) {
    if (prefix.empty()) throw ConfigError("temporal_coverage: empty prefix");
    int lo = prefix[0], hi = prefix[0];
    for (int v : prefix) {
        if (v < 0 || v >= n)
            throw ConfigError("temporal_coverage: index " + std::to_string(v) + " outside 0.." +
                              std::to_string(n - 1));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return Fraction(hi - lo + 1, n);
}

// Multiset of consecutive gaps within one (ascending) group.
inline std::multiset<int> strides_of_group(const std::vector<int>& group) {
    std::multiset<int> out;
    for (size_t i = 0; i + 1 < group.size(); ++i) {
        if (group[i + 1] <= group[i])
            throw ConfigError("strides_of_group: group must be strictly ascending");
        out.insert(group[i + 1] - group[i]);
    }
    return out;
}

// Portion of channels carried over from the previous frame, and the blocks
// whose inputs receive the shift. fraction 0 disables the module.
struct ShiftSpec {
    int fraction_num = 0;
    int fraction_den = 1;
    std::set<int> enabled_blocks;

    static ShiftSpec disabled() { return ShiftSpec{}; }
    static ShiftSpec everywhere(int n_blocks, int num = 1, int den = 8) {
        ShiftSpec s;
        s.fraction_num = num;
        s.fraction_den = den;
        for (int m = 0; m < n_blocks; ++m) s.enabled_blocks.insert(m);
        return s;
    }

    void validate() const {
        if (fraction_den <= 0) throw ConfigError("shift: fraction denominator must be positive");
        if (fraction_num < 0 || fraction_num >= fraction_den)
            throw ConfigError("shift: fraction must be in [0,1)");
    }

    bool enabled_at(int block) const {
        return fraction_num > 0 && enabled_blocks.count(block) > 0;
    }
    bool any_enabled() const { return fraction_num > 0 && !enabled_blocks.empty(); }

    // floor(fraction * C)
    int shifted_channels(int c) const {
        return static_cast<int>((static_cast<long long>(c) * fraction_num) / fraction_den);
    }

    bool operator==(const ShiftSpec&) const = default;
};

// Forward-only shift: the first floor(fraction*C) channels of the output come
// from the previous frame (zeros when there is none), the rest from the
// current frame. Never looks at any later frame.
inline Tensor online_shift(const Tensor* prev, const Tensor& cur, const ShiftSpec& spec) {
    spec.validate();
    if (prev && !prev->same_shape(cur))
        throw ConfigError("online_shift: prev shape " + prev->shape_string() + " != cur shape " +
                          cur.shape_string());
    const int C = cur.dim(0);
    const int k = spec.shifted_channels(C);
    Tensor out = cur;
    if (k == 0) return out;
    const size_t plane = cur.size() / static_cast<size_t>(C);
    const size_t head = static_cast<size_t>(k) * plane;
    if (prev) {
        std::copy(prev->data(), prev->data() + head, out.data());
    } else {
        std::fill(out.data(), out.data() + head, 0.0);
    }
    return out;
}

// Gradient routing for online_shift: the slice taken from prev flows back to
// prev, the rest to cur. grad_prev may be null (first frame).
inline void online_shift_backward(const Tensor& grad_out, int channels, const ShiftSpec& spec,
                                  Tensor* grad_prev, Tensor& grad_cur) {
    const int k = spec.shifted_channels(channels);
    const size_t plane = grad_out.size() / static_cast<size_t>(channels);
    const size_t head = static_cast<size_t>(k) * plane;
    if (grad_prev)
        for (size_t i = 0; i < head; ++i) (*grad_prev)[i] += grad_out[i];
    for (size_t i = head; i < grad_out.size(); ++i) grad_cur[i] += grad_out[i];
}

} // namespace exitgrid
