#pragma once

// Reverse-mode tape covering exactly the ops the grid needs. Forward values
// are produced by the same kernels the inference engine calls, so a training
// forward pass is bit-identical to the deployed one.

#include <functional>
#include <vector>

#include "exitgrid/nn.hpp"
#include "exitgrid/temporal.hpp"

namespace exitgrid {

using VarId = int;
constexpr VarId kNoVar = -1;

class Tape {
public:
    VarId input(Tensor v) { return push(std::move(v), {}); }
    VarId param(Tensor v) { return push(std::move(v), {}); }

    const Tensor& value(VarId id) const { return node(id).value; }

    const Tensor& grad(VarId id) const {
        if (!grads_ready_)
            throw StateError("gradient requested before backward() ran");
        return node(id).grad;
    }

    VarId conv_block(VarId x, const ConvBlockSpec& spec, VarId w, VarId b) {
        Tensor out = conv2d(value(x), spec, value(w), value(b));
        VarId id = push(std::move(out), [x, w, b, spec](Tape& t, VarId self) {
            conv2d_backward(t.value(x), spec, t.value(w), t.value(self), t.node(self).grad,
                            t.node(x).grad, t.node(w).grad, t.node(b).grad);
        });
        return id;
    }

    // relu folds the block's nonlinearity into the normalization output.
    VarId norm(VarId x, VarId gain, VarId bias, bool relu) {
        Tensor out = spatial_norm(value(x), value(gain), value(bias), relu);
        return push(std::move(out), [x, gain, bias, relu](Tape& t, VarId self) {
            spatial_norm_backward(t.value(x), t.value(gain), relu, t.value(self),
                                  t.node(self).grad, t.node(x).grad, t.node(gain).grad,
                                  t.node(bias).grad);
        });
    }

    // prev = kNoVar for the first frame (the shifted slice reads zeros).
    VarId shift(VarId prev, VarId cur, const ShiftSpec& spec) {
        const Tensor* prev_t = prev == kNoVar ? nullptr : &value(prev);
        Tensor out = online_shift(prev_t, value(cur), spec);
        const int channels = value(cur).dim(0);
        return push(std::move(out), [prev, cur, spec, channels](Tape& t, VarId self) {
            Tensor* gp = prev == kNoVar ? nullptr : &t.node(prev).grad;
            online_shift_backward(t.node(self).grad, channels, spec, gp, t.node(cur).grad);
        });
    }

    VarId head(std::vector<VarId> features, const HeadSpec& spec, VarId w, VarId b) {
        std::vector<const Tensor*> feats;
        feats.reserve(features.size());
        for (VarId f : features) feats.push_back(&value(f));
        Tensor logits = head_forward(feats, spec, value(w), value(b));
        // Pooled features are cheap to rebuild in the backward pass.
        return push(std::move(logits), [features, spec, w, b](Tape& t, VarId self) {
            Tensor pooled({spec.feature_dim});
            for (VarId f : features) {
                Tensor p = global_avg_pool(t.value(f));
                for (int c = 0; c < spec.feature_dim; ++c) pooled[c] += p[c];
            }
            const double n_feats = static_cast<double>(features.size());
            for (int c = 0; c < spec.feature_dim; ++c) pooled[c] /= n_feats;

            const Tensor& g = t.node(self).grad;
            const Tensor& wt = t.value(w);
            Tensor& gw = t.node(w).grad;
            Tensor& gb = t.node(b).grad;
            Tensor gp({spec.feature_dim});
            for (int o = 0; o < spec.num_classes; ++o) {
                gb[static_cast<size_t>(o)] += g[static_cast<size_t>(o)];
                for (int i = 0; i < spec.feature_dim; ++i) {
                    gp[static_cast<size_t>(i)] += wt.at(o, i) * g[static_cast<size_t>(o)];
                    gw.at(o, i) += g[static_cast<size_t>(o)] * pooled[static_cast<size_t>(i)];
                }
            }
            for (VarId f : features) {
                Tensor& gf = t.node(f).grad;
                const Tensor& fv = t.value(f);
                const size_t hw = static_cast<size_t>(fv.dim(1)) * fv.dim(2);
                const double scale = 1.0 / (n_feats * static_cast<double>(hw));
                for (int c = 0; c < spec.feature_dim; ++c) {
                    double gc = gp[static_cast<size_t>(c)] * scale;
                    double* plane = gf.data() + static_cast<size_t>(c) * hw;
                    for (size_t i = 0; i < hw; ++i) plane[i] += gc;
                }
            }
        });
    }

    VarId cross_entropy_loss(VarId logits, int label) {
        Tensor out({1});
        out[0] = cross_entropy(value(logits), label);
        return push(std::move(out), [logits, label](Tape& t, VarId self) {
            Tensor ce = cross_entropy_grad(t.value(logits), label);
            const double g = t.node(self).grad[0];
            Tensor& gl = t.node(logits).grad;
            for (size_t i = 0; i < ce.size(); ++i) gl[i] += g * ce[i];
        });
    }

    VarId add_scalars(std::vector<VarId> xs) {
        if (xs.empty()) throw ConfigError("add_scalars: empty list");
        Tensor out({1});
        for (VarId x : xs) {
            if (value(x).size() != 1) throw ConfigError("add_scalars: non-scalar operand");
            out[0] += value(x)[0];
        }
        return push(std::move(out), [xs](Tape& t, VarId self) {
            const double g = t.node(self).grad[0];
            for (VarId x : xs) t.node(x).grad[0] += g;
        });
    }

    // Reverse sweep from `loss` (a scalar). Grads of every var on the tape
    // are zeroed first, so backward may be re-run after adding nodes.
    void backward(VarId loss) {
        if (nodes_.empty()) throw StateError("backward() on an empty tape: run a forward pass first");
        if (loss < 0 || static_cast<size_t>(loss) >= nodes_.size())
            throw StateError("backward(): unknown variable " + std::to_string(loss));
        if (node(loss).value.size() != 1)
            throw ConfigError("backward(): loss must be scalar, got shape " +
                              node(loss).value.shape_string());
        for (auto& n : nodes_) {
            n.grad = Tensor(n.value.shape());
        }
        grads_ready_ = true;
        node(loss).grad[0] = 1.0;
        for (VarId id = loss; id >= 0; --id) {
            const auto& fn = nodes_[static_cast<size_t>(id)].backward;
            if (fn) fn(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }
    bool grads_ready() const { return grads_ready_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&, VarId)> backward;
    };

    Node& node(VarId id) { return nodes_.at(static_cast<size_t>(id)); }
    const Node& node(VarId id) const { return nodes_.at(static_cast<size_t>(id)); }

    VarId push(Tensor value, std::function<void(Tape&, VarId)> backward) {
        nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward)});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    bool grads_ready_ = false;
};

} // namespace exitgrid
