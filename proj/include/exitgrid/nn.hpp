#pragma once

// Block / head specs and the numeric kernels behind them: 2-D convolution
// (cross-correlation), global average pooling, the linear classifier head,
// softmax, cross-entropy and momentum SGD. Forward and backward kernels are
// plain loops over row-major tensors; everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "exitgrid/tensor.hpp"

namespace exitgrid {

struct ConvBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_h = 0;
    int kernel_w = 0;
    int stride = 1;
    int padding = 0;
    bool has_relu = true;

    int out_h(int in_h) const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
    int out_w(int in_w) const { return (in_w + 2 * padding - kernel_w) / stride + 1; }

    void validate(int in_h, int in_w, const std::string& where) const {
        if (in_channels <= 0 || out_channels <= 0)
            throw ConfigError(where + ": channel counts must be positive");
        if (kernel_h <= 0 || kernel_w <= 0)
            throw ConfigError(where + ": kernel dims must be positive");
        if (stride <= 0) throw ConfigError(where + ": stride must be positive");
        if (padding < 0) throw ConfigError(where + ": padding must be non-negative");
        if (out_h(in_h) < 1)
            throw ConfigError(where + ": output height " + std::to_string(out_h(in_h)) +
                              " < 1 for input height " + std::to_string(in_h));
        if (out_w(in_w) < 1)
            throw ConfigError(where + ": output width " + std::to_string(out_w(in_w)) +
                              " < 1 for input width " + std::to_string(in_w));
    }

    bool operator==(const ConvBlockSpec&) const = default;
};

struct HeadSpec {
    int feature_dim = 0;
    int num_classes = 0;

    void validate(const std::string& where) const {
        if (feature_dim <= 0) throw ConfigError(where + ": feature_dim must be positive");
        if (num_classes < 2) throw ConfigError(where + ": num_classes must be >= 2");
    }

    bool operator==(const HeadSpec&) const = default;
};

// FLOPs of one conv application, counted as 2 x multiply-add.
inline uint64_t conv_flops(const ConvBlockSpec& s, int in_h, int in_w) {
    return 2ULL * s.kernel_h * s.kernel_w * s.in_channels * s.out_channels *
           static_cast<uint64_t>(s.out_h(in_h)) * static_cast<uint64_t>(s.out_w(in_w));
}

namespace detail {
// Output rows/cols for which tap k stays inside the input, intersected with [0,n_out).
inline void tap_range(int k, int pad, int stride, int in_dim, int n_out, int& lo, int& hi) {
    int num = pad - k;
    lo = num > 0 ? (num + stride - 1) / stride : 0;
    int top = in_dim - 1 + pad - k;
    hi = top < 0 ? 0 : std::min(n_out, top / stride + 1);
    if (hi < lo) hi = lo;
}
} // namespace detail

// Standard cross-correlation; ReLU applied in place when spec.has_relu.
// input [C_in,H,W], weights [C_out,C_in,kh,kw], bias [C_out] -> [C_out,H',W']
inline Tensor conv2d(const Tensor& input, const ConvBlockSpec& spec, const Tensor& weights,
                     const Tensor& bias) {
    if (input.rank() != 3 || input.dim(0) != spec.in_channels)
        throw ConfigError("conv2d: input shape " + input.shape_string() + " does not provide " +
                          std::to_string(spec.in_channels) + " channels");
    const std::vector<int> wshape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
    if (weights.shape() != wshape)
        throw ConfigError("conv2d: weight shape " + weights.shape_string() + " != expected " +
                          Tensor::shape_string(wshape));
    if (bias.shape() != std::vector<int>{spec.out_channels})
        throw ConfigError("conv2d: bias shape " + bias.shape_string() + " != expected [" +
                          std::to_string(spec.out_channels) + "]");
    const int H = input.dim(1), W = input.dim(2);
    spec.validate(H, W, "conv2d");
    const int Ho = spec.out_h(H), Wo = spec.out_w(W);
    const int s = spec.stride, p = spec.padding;

    Tensor out({spec.out_channels, Ho, Wo});
    const double* in = input.data();
    const double* w = weights.data();
    double* o = out.data();
    for (int co = 0; co < spec.out_channels; ++co) {
        double* oplane = o + static_cast<size_t>(co) * Ho * Wo;
        std::fill(oplane, oplane + static_cast<size_t>(Ho) * Wo, bias[co]);
        for (int ci = 0; ci < spec.in_channels; ++ci) {
            const double* iplane = in + static_cast<size_t>(ci) * H * W;
            for (int kh = 0; kh < spec.kernel_h; ++kh) {
                int oh_lo, oh_hi;
                detail::tap_range(kh, p, s, H, Ho, oh_lo, oh_hi);
                for (int kw = 0; kw < spec.kernel_w; ++kw) {
                    int ow_lo, ow_hi;
                    detail::tap_range(kw, p, s, W, Wo, ow_lo, ow_hi);
                    const double wv =
                        w[((static_cast<size_t>(co) * spec.in_channels + ci) * spec.kernel_h + kh) *
                              spec.kernel_w +
                          kw];
                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                        const double* irow = iplane + static_cast<size_t>(oh * s - p + kh) * W;
                        double* orow = oplane + static_cast<size_t>(oh) * Wo;
                        int iw = ow_lo * s - p + kw;
                        for (int ow = ow_lo; ow < ow_hi; ++ow, iw += s) orow[ow] += wv * irow[iw];
                    }
                }
            }
        }
    }
    if (spec.has_relu)
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

// Reverse-mode of conv2d. grad_out is the gradient at the (post-ReLU) output;
// when the block has ReLU the mask is recovered from the stored output.
inline void conv2d_backward(const Tensor& input, const ConvBlockSpec& spec, const Tensor& weights,
                            const Tensor& output, const Tensor& grad_out, Tensor& grad_in,
                            Tensor& grad_w, Tensor& grad_b) {
    const int H = input.dim(1), W = input.dim(2);
    const int Ho = spec.out_h(H), Wo = spec.out_w(W);
    const int s = spec.stride, p = spec.padding;

    Tensor g = grad_out;
    if (spec.has_relu) {
        for (size_t i = 0; i < g.size(); ++i)
            if (output[i] <= 0.0) g[i] = 0.0;
    }

    if (grad_in.shape() != input.shape()) grad_in = Tensor(input.shape());
    if (grad_w.shape() != weights.shape()) grad_w = Tensor(weights.shape());
    if (grad_b.shape() != std::vector<int>{spec.out_channels})
        grad_b = Tensor({spec.out_channels});

    const double* in = input.data();
    const double* w = weights.data();
    const double* go = g.data();
    for (int co = 0; co < spec.out_channels; ++co) {
        const double* gplane = go + static_cast<size_t>(co) * Ho * Wo;
        double acc = 0.0;
        for (size_t i = 0; i < static_cast<size_t>(Ho) * Wo; ++i) acc += gplane[i];
        grad_b[co] += acc;
        for (int ci = 0; ci < spec.in_channels; ++ci) {
            const double* iplane = in + static_cast<size_t>(ci) * H * W;
            double* giplane = grad_in.data() + static_cast<size_t>(ci) * H * W;
            for (int kh = 0; kh < spec.kernel_h; ++kh) {
                int oh_lo, oh_hi;
                detail::tap_range(kh, p, s, H, Ho, oh_lo, oh_hi);
                for (int kw = 0; kw < spec.kernel_w; ++kw) {
                    int ow_lo, ow_hi;
                    detail::tap_range(kw, p, s, W, Wo, ow_lo, ow_hi);
                    const size_t widx =
                        ((static_cast<size_t>(co) * spec.in_channels + ci) * spec.kernel_h + kh) *
                            spec.kernel_w +
                        kw;
                    const double wv = w[widx];
                    double wacc = 0.0;
                    for (int oh = oh_lo; oh < oh_hi; ++oh) {
                        const double* irow = iplane + static_cast<size_t>(oh * s - p + kh) * W;
                        double* girow = giplane + static_cast<size_t>(oh * s - p + kh) * W;
                        const double* grow = gplane + static_cast<size_t>(oh) * Wo;
                        int iw = ow_lo * s - p + kw;
                        for (int ow = ow_lo; ow < ow_hi; ++ow, iw += s) {
                            wacc += grow[ow] * irow[iw];
                            girow[iw] += grow[ow] * wv;
                        }
                    }
                    grad_w[widx] += wacc;
                }
            }
        }
    }
}

constexpr double kSpatialNormEps = 1e-5;

// Per-channel normalization over the spatial plane with a learned affine,
// optionally ReLU'd in place:
//   y_c = gain_c * (x_c - mean_c) / sqrt(var_c + eps) + bias_c
// Statistics are taken within the single [C,H,W] tensor, so the op never
// couples different frames or videos (unlike batch statistics).
inline Tensor spatial_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, bool relu) {
    if (x.rank() != 3) throw ConfigError("spatial_norm: expected [C,H,W], got " + x.shape_string());
    const int C = x.dim(0);
    if (gain.shape() != std::vector<int>{C} || bias.shape() != std::vector<int>{C})
        throw ConfigError("spatial_norm: gain/bias must be [" + std::to_string(C) + "], got " +
                          gain.shape_string() + " / " + bias.shape_string());
    const size_t hw = static_cast<size_t>(x.dim(1)) * x.dim(2);
    Tensor out(x.shape());
    for (int c = 0; c < C; ++c) {
        const double* in = x.data() + static_cast<size_t>(c) * hw;
        double* o = out.data() + static_cast<size_t>(c) * hw;
        double mean = 0.0;
        for (size_t i = 0; i < hw; ++i) mean += in[i];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (size_t i = 0; i < hw; ++i) {
            const double d = in[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + kSpatialNormEps);
        const double g = gain[c], b = bias[c];
        for (size_t i = 0; i < hw; ++i) {
            double v = g * (in[i] - mean) * inv + b;
            o[i] = relu && v < 0.0 ? 0.0 : v;
        }
    }
    return out;
}

// Reverse-mode of spatial_norm. grad_out arrives at the (post-ReLU) output;
// when relu was applied the mask is recovered from the stored output.
inline void spatial_norm_backward(const Tensor& x, const Tensor& gain, bool relu,
                                  const Tensor& output, const Tensor& grad_out, Tensor& grad_in,
                                  Tensor& grad_gain, Tensor& grad_bias) {
    const int C = x.dim(0);
    const size_t hw = static_cast<size_t>(x.dim(1)) * x.dim(2);
    if (grad_in.shape() != x.shape()) grad_in = Tensor(x.shape());
    if (grad_gain.shape() != std::vector<int>{C}) grad_gain = Tensor({C});
    if (grad_bias.shape() != std::vector<int>{C}) grad_bias = Tensor({C});

    for (int c = 0; c < C; ++c) {
        const double* in = x.data() + static_cast<size_t>(c) * hw;
        const double* out = output.data() + static_cast<size_t>(c) * hw;
        const double* go = grad_out.data() + static_cast<size_t>(c) * hw;
        double* gi = grad_in.data() + static_cast<size_t>(c) * hw;

        double mean = 0.0;
        for (size_t i = 0; i < hw; ++i) mean += in[i];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (size_t i = 0; i < hw; ++i) {
            const double d = in[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(hw);
        const double inv = 1.0 / std::sqrt(var + kSpatialNormEps);
        const double g = gain[c];

        // For y = g * xhat + b:  dx = (g*inv) * (dy - mean(dy) - xhat*mean(dy*xhat))
        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t i = 0; i < hw; ++i) {
            const double dy = relu && out[i] <= 0.0 ? 0.0 : go[i];
            const double xhat = (in[i] - mean) * inv;
            sum_g += dy;
            sum_gx += dy * xhat;
        }
        grad_bias[c] += sum_g;
        grad_gain[c] += sum_gx;
        const double mean_g = sum_g / static_cast<double>(hw);
        const double mean_gx = sum_gx / static_cast<double>(hw);
        for (size_t i = 0; i < hw; ++i) {
            const double dy = relu && out[i] <= 0.0 ? 0.0 : go[i];
            const double xhat = (in[i] - mean) * inv;
            gi[i] += g * inv * (dy - mean_g - xhat * mean_gx);
        }
    }
}

// One grid block: convolution, then normalization carrying the block's
// nonlinearity. The conv itself runs linear; spec.has_relu moves to the norm.
inline Tensor block_forward(const Tensor& input, const ConvBlockSpec& spec, const Tensor& w,
                            const Tensor& b, const Tensor& norm_gain, const Tensor& norm_bias) {
    ConvBlockSpec linear = spec;
    linear.has_relu = false;
    return spatial_norm(conv2d(input, linear, w, b), norm_gain, norm_bias, spec.has_relu);
}

// Spatial mean of a [C,H,W] map -> [C].
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3) throw ConfigError("global_avg_pool: expected [C,H,W], got " + x.shape_string());
    const int C = x.dim(0);
    const size_t hw = static_cast<size_t>(x.dim(1)) * x.dim(2);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        const double* plane = x.data() + c * hw;
        double acc = 0.0;
        for (size_t i = 0; i < hw; ++i) acc += plane[i];
        out[c] = acc / static_cast<double>(hw);
    }
    return out;
}

// Prediction head: pool each feature map, average across the list, affine map.
// weights [num_classes, feature_dim], bias [num_classes] -> logits [num_classes].
inline Tensor head_forward(const std::vector<const Tensor*>& features, const HeadSpec& head,
                           const Tensor& weights, const Tensor& bias) {
    if (features.empty()) throw ConfigError("head_forward: empty feature list");
    head.validate("head_forward");
    if (weights.shape() != std::vector<int>{head.num_classes, head.feature_dim})
        throw ConfigError("head_forward: weight shape " + weights.shape_string() + " != expected [" +
                          std::to_string(head.num_classes) + "," + std::to_string(head.feature_dim) + "]");
    Tensor pooled({head.feature_dim});
    for (const Tensor* f : features) {
        if (f->shape() != features[0]->shape())
            throw ConfigError("head_forward: feature shape mismatch " + f->shape_string() + " vs " +
                              features[0]->shape_string());
        Tensor p = global_avg_pool(*f);
        if (p.dim(0) != head.feature_dim)
            throw ConfigError("head_forward: pooled dim " + std::to_string(p.dim(0)) +
                              " != feature_dim " + std::to_string(head.feature_dim));
        for (int c = 0; c < head.feature_dim; ++c) pooled[c] += p[c];
    }
    for (int c = 0; c < head.feature_dim; ++c) pooled[c] /= static_cast<double>(features.size());

    Tensor logits({head.num_classes});
    for (int o = 0; o < head.num_classes; ++o) {
        double acc = bias[o];
        for (int i = 0; i < head.feature_dim; ++i) acc += weights.at(o, i) * pooled[i];
        logits[o] = acc;
    }
    return logits;
}

// Numerically stabilized softmax; output entries in (0,1), summing to 1.
inline Tensor softmax(const Tensor& logits) {
    Tensor out(logits.shape());
    double mx = logits[0];
    for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] /= sum;
    return out;
}

// log(sum(exp(logits))) with max-subtraction.
inline double log_sum_exp(const Tensor& logits) {
    double mx = logits[0];
    for (size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - mx);
    return mx + std::log(sum);
}

inline double cross_entropy(const Tensor& logits, int label) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size())
        throw ConfigError("cross_entropy: label " + std::to_string(label) + " out of range");
    return log_sum_exp(logits) - logits[label];
}

// d(cross_entropy)/d(logits) = softmax(logits) - onehot(label)
inline Tensor cross_entropy_grad(const Tensor& logits, int label) {
    Tensor g = softmax(logits);
    g[label] -= 1.0;
    return g;
}

// Classic momentum SGD with L2 weight decay folded into the gradient:
//   g' = g + wd * p;  v = momentum * v + g';  p -= lr * v
inline void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, double lr,
                     double momentum, double weight_decay) {
    if (lr <= 0.0) throw ConfigError("sgd_step: lr must be positive");
    if (!param.same_shape(grad))
        throw ConfigError("sgd_step: param shape " + param.shape_string() + " != grad shape " +
                          grad.shape_string());
    if (velocity.shape() != param.shape()) velocity = Tensor(param.shape());
    for (size_t i = 0; i < param.size(); ++i) {
        if (!std::isfinite(grad[i]))
            throw NumericError("sgd_step: non-finite gradient at element " + std::to_string(i) +
                               " (value " + std::to_string(grad[i]) + ")");
        double g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * velocity[i];
    }
}

} // namespace exitgrid
