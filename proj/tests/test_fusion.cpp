#include <doctest.h>

#include "reflexsplit/common.hpp"
#include "reflexsplit/fusion.hpp"
#include "reflexsplit/gradcheck.hpp"
#include "reflexsplit/oracle_bridge.hpp"
#include "test_support.hpp"

using namespace reflexsplit;
using namespace reflexsplit::testing;

TEST_CASE("zero semantic and texture collapse both gated paths") {
    ParamRegistry reg;
    Rng rng(1);
    CrossScaleGatedFusion fusion(reg, "f", 8, rng);
    const Var ctx = ad::constant(Tensor::uniform({4, 4, 8}, -1, 1, rng));
    const Var zero = ad::constant(Tensor({4, 4, 8}));
    const Tensor out = fusion.forward(ctx, zero, zero)->value;

    // raw == ctx, so main == aux and the softmax mixes two identical paths
    // through phi1/phi2.
    const auto w = oracle::extract_crgf(fusion);
    const Tensor gated_t = oracle::split_gate(ctx->value, w.g1);
    const Tensor gated_c = oracle::split_gate(ctx->value, w.g2);
    Tensor prod(ctx->value.shape());
    for (std::int64_t i = 0; i < prod.size(); ++i) prod[i] = gated_t[i] * gated_c[i];
    const Tensor p1 = oracle::conv1x1(prod, w.phi1_w, &w.phi1_b);
    const Tensor p2 = oracle::conv1x1(prod, w.phi2_w, &w.phi2_b);
    Tensor want(ctx->value.shape());
    for (std::int64_t i = 0; i < want.size(); ++i) want[i] = 0.5 * p1[i] + 0.5 * p2[i];
    CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("saturated mixing logits select the first projection exactly") {
    ParamRegistry reg;
    Rng rng(2);
    CrossScaleGatedFusion fusion(reg, "f", 8, rng);
    const Var ctx = ad::constant(Tensor::uniform({3, 3, 8}, -1, 1, rng));
    const Var sem = ad::constant(Tensor::uniform({3, 3, 8}, -1, 1, rng));
    const Var tex = ad::constant(Tensor::uniform({3, 3, 8}, -1, 1, rng));

    fusion.mix_logits()->value[0] = std::numeric_limits<double>::infinity();
    fusion.mix_logits()->value[1] = -std::numeric_limits<double>::infinity();
    const Tensor saturated = fusion.forward(ctx, sem, tex)->value;
    CHECK(saturated.all_finite());

    // Weights are exactly (1, 0): the second term of the softmax underflows
    // to zero for a gap of 2000 as well, so both runs take the identical
    // phi1-only path.
    fusion.mix_logits()->value[0] = 1000.0;
    fusion.mix_logits()->value[1] = -1000.0;
    const Tensor finite_gap = fusion.forward(ctx, sem, tex)->value;
    CHECK(bit_equal(saturated, finite_gap));

    // And that path is phi1(main) alone, per the straight-line oracle.
    const auto w = oracle::extract_crgf(fusion);
    const Tensor raw = [&] {
        Tensor r(ctx->value.shape());
        for (std::int64_t i = 0; i < r.size(); ++i)
            r[i] = ctx->value[i] + sem->value[i] + tex->value[i];
        return r;
    }();
    const Tensor g1_raw = oracle::split_gate(raw, w.g1);
    const Tensor g2_ctx = oracle::split_gate(ctx->value, w.g2);
    Tensor main_path(raw.shape());
    for (std::int64_t i = 0; i < main_path.size(); ++i) main_path[i] = g1_raw[i] * g2_ctx[i];
    const Tensor want = oracle::conv1x1(main_path, w.phi1_w, &w.phi1_b);
    CHECK(max_abs_diff(saturated, want) < 1e-12);
}

TEST_CASE("cross-scale fusion matches the straight-line oracle on random fixtures") {
    for (int seed = 0; seed < 5; ++seed) {
        ParamRegistry reg;
        Rng rng(static_cast<std::uint64_t>(seed) + 100);
        CrossScaleGatedFusion fusion(reg, "f", 8, rng);
        fusion.mix_logits()->value[0] = rng.uniform(-1, 1);
        fusion.mix_logits()->value[1] = rng.uniform(-1, 1);
        const Var ctx = ad::constant(Tensor::uniform({4, 5, 8}, -1, 1, rng));
        const Var sem = ad::constant(Tensor::uniform({4, 5, 8}, -1, 1, rng));
        const Var tex = ad::constant(Tensor::uniform({4, 5, 8}, -1, 1, rng));
        const Tensor got = fusion.forward(ctx, sem, tex)->value;
        const Tensor want =
            oracle::crgf(ctx->value, sem->value, tex->value, oracle::extract_crgf(fusion));
        CHECK(max_rel_diff(got, want) < 1e-6);
    }
}

TEST_CASE("identity gates and identity projections reduce to raw .* ctx") {
    ParamRegistry reg;
    Rng rng(3);
    CrossScaleGatedFusion fusion(reg, "f", 6, rng);
    fusion.use_identity_gates();
    fusion.make_projections_identity();
    // logits are zero-initialized: weights are exactly (0.5, 0.5)
    const Var ctx = ad::constant(Tensor::uniform({3, 4, 6}, -1, 1, rng));
    const Var sem = ad::constant(Tensor::uniform({3, 4, 6}, -1, 1, rng));
    const Var tex = ad::constant(Tensor::uniform({3, 4, 6}, -1, 1, rng));
    const Tensor out = fusion.forward(ctx, sem, tex)->value;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double raw = ctx->value[i] + sem->value[i] + tex->value[i];
        CHECK(out[i] == doctest::Approx(raw * ctx->value[i]).epsilon(1e-12));
    }
}

TEST_CASE("softmax mixing weights stay on the simplex") {
    ParamRegistry reg;
    Rng rng(4);
    CrossScaleGatedFusion fusion(reg, "f", 4, rng);
    for (int k = 0; k < 20; ++k) {
        fusion.mix_logits()->value[0] = rng.uniform(-30, 30);
        fusion.mix_logits()->value[1] = rng.uniform(-30, 30);
        const Tensor w = ad::softmax_last(fusion.mix_logits())->value;
        CHECK(w[0] > 0.0);
        CHECK(w[1] > 0.0);
        CHECK(w[0] + w[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fusion gradients match finite differences for all three inputs") {
    ParamRegistry reg;
    Rng rng(5);
    CrossScaleGatedFusion fusion(reg, "f", 8, rng);
    const Var ctx = ad::leaf(Tensor::uniform({4, 4, 8}, -1, 1, rng), true);
    const Var sem = ad::leaf(Tensor::uniform({4, 4, 8}, -1, 1, rng), true);
    const Var tex = ad::leaf(Tensor::uniform({4, 4, 8}, -1, 1, rng), true);
    const GradCheckResult r = finite_diff_check(
        [&] { return random_readout(fusion.forward(ctx, sem, tex), 55); }, {ctx, sem, tex});
    CAPTURE(r.max_rel_err);
    CHECK(r.ok(1e-3));
}

TEST_CASE("fusion rejects shape mismatches among its inputs") {
    ParamRegistry reg;
    Rng rng(6);
    CrossScaleGatedFusion fusion(reg, "f", 4, rng);
    CHECK_THROWS_AS(fusion.forward(ad::constant(Tensor({3, 3, 4})),
                                   ad::constant(Tensor({3, 2, 4})),
                                   ad::constant(Tensor({3, 3, 4}))),
                    ShapeError);
}

TEST_CASE("direct aggregation is an elementwise sum") {
    Rng rng(7);
    const Var x = ad::constant(Tensor::uniform({5, 5, 3}, -1, 1, rng));
    const Var zero = ad::constant(Tensor({5, 5, 3}));
    CHECK(bit_equal(direct_aggregate(x, zero)->value, x->value));
    const Var nx = ad::neg(x);
    CHECK(direct_aggregate(x, nx)->value.abs_max() == 0.0);
    const Var y = ad::constant(Tensor::uniform({5, 5, 3}, -1, 1, rng));
    const Tensor sum = direct_aggregate(x, y)->value;
    for (std::int64_t i = 0; i < sum.size(); ++i) {
        CHECK(sum[i] == x->value[i] + y->value[i]);
    }
    CHECK_THROWS_AS(direct_aggregate(x, ad::constant(Tensor({5, 4, 3}))), ShapeError);
}
