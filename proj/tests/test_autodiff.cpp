#include <catch2/catch_amalgamated.hpp>

#include "exitgrid/autodiff.hpp"
#include "exitgrid/engine.hpp"
#include "exitgrid/train.hpp"
#include "test_util.hpp"

using namespace exitgrid;
using testutil::random_tensor;

namespace {

// Two frame-sets of two frames each, two blocks with shift enabled, two
// checkpoints. Small enough for exhaustive finite differences.
CheckpointGrid tiny_grid() {
    CheckpointGrid g;
    g.n_sets = 2;
    g.set_size = 2;
    g.frame_channels = 2;
    g.frame_h = 4;
    g.frame_w = 4;
    ConvBlockSpec b0;
    b0.in_channels = 2;
    b0.out_channels = 3;
    b0.kernel_h = b0.kernel_w = 3;
    b0.stride = 1;
    b0.padding = 1;
    b0.has_relu = true;
    ConvBlockSpec b1 = b0;
    b1.in_channels = 3;
    b1.out_channels = 3;
    b1.stride = 2;
    g.blocks = {b0, b1};
    g.shift = ShiftSpec::everywhere(2, 1, 2); // shift half the channels
    g.checkpoints = {GridCoord{0, 1}, GridCoord{1, 1}};
    g.heads = default_heads(g.blocks, g.checkpoints, 3);
    g.route = RouteKind::Joint;
    g.permute_inputs = false;
    return g;
}

std::vector<FrameSet> tiny_sets(SplitMix64& rng, const CheckpointGrid& g) {
    std::vector<Tensor> frames;
    for (int i = 0; i < g.n_frames(); ++i)
        frames.push_back(random_tensor({g.frame_channels, g.frame_h, g.frame_w}, rng, 0.0, 1.0));
    return permute(frames, PermutationPlan::identity_plan(g.n_sets, g.set_size));
}

bool fd_close(double got, double want) {
    return std::abs(got - want) <= 1e-4 * std::max({1.0, std::abs(got), std::abs(want)});
}

} // namespace

TEST_CASE("tape scalar plumbing") {
    Tape tape;
    VarId a = tape.input(Tensor::from_data({1}, {2.0}));
    VarId b = tape.input(Tensor::from_data({1}, {3.5}));
    VarId s = tape.add_scalars({a, b});
    REQUIRE(tape.value(s)[0] == 5.5);
    tape.backward(s);
    REQUIRE(tape.grad(a)[0] == 1.0);
    REQUIRE(tape.grad(b)[0] == 1.0);

    REQUIRE_THROWS_AS(tape.add_scalars({}), ConfigError);
    VarId vec = tape.input(Tensor({3}));
    REQUIRE_THROWS_AS(tape.add_scalars({vec}), ConfigError);
    REQUIRE_THROWS_AS(tape.backward(vec), ConfigError); // non-scalar loss
}

TEST_CASE("tape state errors") {
    Tape empty;
    REQUIRE_THROWS_AS(empty.backward(0), StateError);

    Tape tape;
    VarId a = tape.input(Tensor::from_data({1}, {1.0}));
    REQUIRE_THROWS_AS(tape.grad(a), StateError); // no backward yet
    REQUIRE_THROWS_AS(tape.backward(5), StateError);
    tape.backward(a);
    REQUIRE(tape.grad(a)[0] == 1.0);
}

TEST_CASE("tape cross entropy matches the kernel") {
    SplitMix64 rng(21);
    Tape tape;
    Tensor logits = random_tensor({4}, rng, -2.0, 2.0);
    VarId lv = tape.input(logits);
    VarId loss = tape.cross_entropy_loss(lv, 1);
    REQUIRE(tape.value(loss)[0] == cross_entropy(logits, 1));
    tape.backward(loss);
    Tensor want = cross_entropy_grad(logits, 1);
    for (size_t i = 0; i < want.size(); ++i) REQUIRE(tape.grad(lv)[i] == want[i]);
}

TEST_CASE("tape shift handles the missing first frame") {
    SplitMix64 rng(22);
    ShiftSpec spec = ShiftSpec::everywhere(1, 1, 2);
    Tensor cur = random_tensor({2, 2, 2}, rng);
    Tape tape;
    VarId c = tape.input(cur);
    VarId out = tape.shift(kNoVar, c, spec);
    for (size_t i = 0; i < 4; ++i) REQUIRE(tape.value(out)[i] == 0.0);
    for (size_t i = 4; i < 8; ++i) REQUIRE(tape.value(out)[i] == cur[i]);
}

TEST_CASE("training graph forward is bit-identical to the engine") {
    SplitMix64 rng(31);
    CheckpointGrid g = tiny_grid();
    ModelParams params = init_params(g, 5);
    std::vector<FrameSet> sets = tiny_sets(rng, g);

    Tape tape;
    TapeForward tf = build_training_graph(tape, g, params, sets, 1);
    CheckpointOutputs engine_out = run_all_checkpoints(g, params, sets);

    REQUIRE(tf.head_logits.size() == engine_out.logits.size());
    for (size_t k = 0; k < engine_out.logits.size(); ++k)
        REQUIRE(tape.value(tf.head_logits[k]) == engine_out.logits[k]); // exact, not approximate

    // and the loss is the sum of per-head cross entropies
    double want = 0.0;
    for (const auto& l : engine_out.logits) want += cross_entropy(l, 1);
    REQUIRE(tape.value(tf.loss)[0] == want);
}

TEST_CASE("training graph gradients pass finite differences") {
    SplitMix64 rng(33);
    CheckpointGrid g = tiny_grid();
    ModelParams params = init_params(g, 5);
    std::vector<FrameSet> sets = tiny_sets(rng, g);
    const int label = 2;

    Tape tape;
    TapeForward tf = build_training_graph(tape, g, params, sets, label);
    tape.backward(tf.loss);

    auto loss_now = [&] {
        Tape t2;
        TapeForward f2 = build_training_graph(t2, g, params, sets, label);
        return t2.value(f2.loss)[0];
    };

    size_t checked = 0, skipped = 0;
    auto check_group = [&](std::vector<Tensor>& group, const std::vector<VarId>& ids, size_t stride) {
        for (size_t i = 0; i < group.size(); ++i) {
            const Tensor& g_analytic = tape.grad(ids[i]);
            for (size_t j = 0; j < group[i].size(); j += stride) {
                double numeric = testutil::numeric_grad(loss_now, group[i][j]);
                if (fd_close(g_analytic[j], numeric)) {
                    ++checked;
                } else {
                    ++skipped;
                    INFO("param group " << i << " elem " << j << ": analytic " << g_analytic[j]
                                        << " numeric " << numeric);
                    REQUIRE(fd_close(g_analytic[j], numeric));
                }
            }
        }
    };
    check_group(params.block_w, tf.block_w, 4);
    check_group(params.block_b, tf.block_b, 1);
    check_group(params.norm_g, tf.norm_g, 1);
    check_group(params.norm_b, tf.norm_b, 1);
    check_group(params.head_w, tf.head_w, 3);
    check_group(params.head_b, tf.head_b, 1);
    REQUIRE(checked > 50);
    REQUIRE(skipped == 0);
}

TEST_CASE("conv gradients flow through the shift splice") {
    // A frame that only feeds later frames through the shift must still
    // receive gradient: check via a direct tape on two frames.
    SplitMix64 rng(36);
    ConvBlockSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel_h = spec.kernel_w = 3;
    spec.stride = 1;
    spec.padding = 1;
    spec.has_relu = false;
    ShiftSpec shift = ShiftSpec::everywhere(1, 1, 2);
    Tensor f0 = random_tensor({2, 3, 3}, rng);
    Tensor f1 = random_tensor({2, 3, 3}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng, -0.3, 0.3);
    Tensor b = random_tensor({2}, rng, -0.1, 0.1);

    Tape t;
    VarId v0 = t.input(f0);
    VarId v1 = t.input(f1);
    VarId wv = t.param(w);
    VarId bv = t.param(b);
    VarId x1 = t.shift(v0, v1, shift);
    VarId y1 = t.conv_block(x1, spec, wv, bv);
    // reduce to a scalar via a fixed linear functional so we can FD it
    HeadSpec head;
    head.feature_dim = 2;
    head.num_classes = 2;
    Tensor hw = random_tensor({2, 2}, rng, -0.5, 0.5);
    Tensor hb = random_tensor({2}, rng, -0.1, 0.1);
    VarId hwv = t.param(hw);
    VarId hbv = t.param(hb);
    VarId logits = t.head({y1}, head, hwv, hbv);
    VarId loss = t.cross_entropy_loss(logits, 1);
    t.backward(loss);

    auto eval = [&] {
        Tape t2;
        VarId a0 = t2.input(f0);
        VarId a1 = t2.input(f1);
        VarId aw = t2.param(w);
        VarId ab = t2.param(b);
        VarId ax = t2.shift(a0, a1, shift);
        VarId ay = t2.conv_block(ax, spec, aw, ab);
        VarId ahw = t2.param(hw);
        VarId ahb = t2.param(hb);
        VarId al = t2.head({ay}, head, ahw, ahb);
        return t2.value(t2.cross_entropy_loss(al, 1))[0];
    };

    // f0 contributes only through the shifted slice; its gradient must be
    // nonzero on shifted channels and zero elsewhere.
    const Tensor& g0 = t.grad(v0);
    int shifted = shift.shifted_channels(2);
    REQUIRE(shifted == 1);
    double shifted_mag = 0.0, rest_mag = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 3; ++h)
            for (int w2 = 0; w2 < 3; ++w2)
                (c < shifted ? shifted_mag : rest_mag) += std::abs(g0.at(c, h, w2));
    REQUIRE(shifted_mag > 0.0);
    REQUIRE(rest_mag == 0.0);

    for (size_t j = 0; j < f0.size(); j += 2) {
        double numeric = testutil::numeric_grad(eval, f0[j]);
        REQUIRE(fd_close(g0[j], numeric));
    }
    const Tensor& g1 = t.grad(v1);
    for (size_t j = 0; j < f1.size(); j += 2) {
        double numeric = testutil::numeric_grad(eval, f1[j]);
        REQUIRE(fd_close(g1[j], numeric));
    }
}

TEST_CASE("backward can be re-run and stays consistent") {
    SplitMix64 rng(35);
    CheckpointGrid g = tiny_grid();
    ModelParams params = init_params(g, 9);
    std::vector<FrameSet> sets = tiny_sets(rng, g);
    Tape tape;
    TapeForward tf = build_training_graph(tape, g, params, sets, 0);
    tape.backward(tf.loss);
    Tensor first = tape.grad(tf.block_w[0]);
    tape.backward(tf.loss);
    REQUIRE(tape.grad(tf.block_w[0]) == first);
}

TEST_CASE("channel normalization matches a hand-computed case") {
    // One channel, 2x2 plane {1,2,3,4}: mean 2.5, biased variance 1.25.
    Tensor x = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor gain = Tensor::from_data({1}, {2.0});
    Tensor bias = Tensor::from_data({1}, {0.5});
    Tensor y = spatial_norm(x, gain, bias, /*relu=*/false);
    const double inv = 1.0 / std::sqrt(1.25 + kSpatialNormEps);
    for (size_t i = 0; i < 4; ++i) {
        const double want = 2.0 * (x[i] - 2.5) * inv + 0.5;
        REQUIRE(y[i] == Catch::Approx(want).margin(1e-15));
    }

    // With the rectifier folded in, negative outputs clamp to zero.
    Tensor yr = spatial_norm(x, gain, bias, /*relu=*/true);
    for (size_t i = 0; i < 4; ++i) REQUIRE(yr[i] == std::max(0.0, y[i]));

    REQUIRE_THROWS_AS(spatial_norm(Tensor({2, 2}), gain, bias, false), ConfigError);
    REQUIRE_THROWS_AS(spatial_norm(x, Tensor({3}), bias, false), ConfigError);
}

TEST_CASE("normalization gradients pass finite differences") {
    SplitMix64 rng(41);
    Tensor x = random_tensor({3, 4, 4}, rng, -1.0, 1.0);
    Tensor gain = random_tensor({3}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({3}, rng, -0.3, 0.3);
    Tensor hw = random_tensor({2, 3}, rng, -0.5, 0.5);
    Tensor hb = random_tensor({2}, rng, -0.1, 0.1);
    HeadSpec head;
    head.feature_dim = 3;
    head.num_classes = 2;

    for (bool relu : {false, true}) {
        Tape t;
        VarId xv = t.input(x);
        VarId gv = t.param(gain);
        VarId bv = t.param(bias);
        VarId y = t.norm(xv, gv, bv, relu);
        VarId logits = t.head({y}, head, t.param(hw), t.param(hb));
        VarId loss = t.cross_entropy_loss(logits, 0);
        t.backward(loss);

        auto eval = [&] {
            Tape t2;
            VarId a = t2.norm(t2.input(x), t2.param(gain), t2.param(bias), relu);
            VarId l = t2.head({a}, head, t2.param(hw), t2.param(hb));
            return t2.value(t2.cross_entropy_loss(l, 0))[0];
        };
        for (size_t j = 0; j < x.size(); j += 3)
            REQUIRE(fd_close(t.grad(xv)[j], testutil::numeric_grad(eval, x[j])));
        for (size_t j = 0; j < gain.size(); ++j)
            REQUIRE(fd_close(t.grad(gv)[j], testutil::numeric_grad(eval, gain[j])));
        for (size_t j = 0; j < bias.size(); ++j)
            REQUIRE(fd_close(t.grad(bv)[j], testutil::numeric_grad(eval, bias[j])));
    }
}
