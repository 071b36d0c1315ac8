#include <doctest.h>

#include "reflexsplit/common.hpp"
#include <cmath>

#include "reflexsplit/gradcheck.hpp"
#include "reflexsplit/lfsb.hpp"
#include "reflexsplit/oracle_bridge.hpp"
#include "test_support.hpp"

using namespace reflexsplit;
using namespace reflexsplit::testing;

namespace {

CurriculumState mid_curriculum() {
    CurriculumState cur;
    cur.epoch = 12;
    cur.warmup_epochs = 30;
    cur.lambda_diff = lambda_warmup(12, 30);
    cur.mode = LambdaMode::kLearnable;
    return cur;
}

} // namespace

TEST_CASE("early fusion selecting one block of the weight passes a stream through") {
    ParamRegistry reg;
    Rng rng(1);
    EarlyFusion ef(reg, "ef", 4, rng);
    const Var t = ad::constant(Tensor::uniform({3, 5, 4}, -1, 1, rng));
    const Var r = ad::constant(Tensor::uniform({3, 5, 4}, -1, 1, rng));

    // Wt = [I | 0]: t' == t
    ef.w_t->value.fill(0.0);
    for (int i = 0; i < 4; ++i) ef.w_t->value.at(i, i) = 1.0;
    DualStream out = ef.forward({t, r});
    CHECK(bit_equal(out.t->value, t->value));

    // Wt = [0 | I]: t' == r (the second block of [t || r])
    ef.w_t->value.fill(0.0);
    for (int i = 0; i < 4; ++i) ef.w_t->value.at(4 + i, i) = 1.0;
    out = ef.forward({t, r});
    CHECK(bit_equal(out.t->value, r->value));
}

TEST_CASE("early fusion matches the dense linear-algebra oracle") {
    ParamRegistry reg;
    Rng rng(2);
    EarlyFusion ef(reg, "ef", 6, rng);
    const Var t = ad::constant(Tensor::uniform({4, 4, 6}, -1, 1, rng));
    const Var r = ad::constant(Tensor::uniform({4, 4, 6}, -1, 1, rng));
    const DualStream out = ef.forward({t, r});
    const auto want = oracle::early_fusion(t->value, r->value, ef.w_t->value, ef.w_r->value);
    CHECK(max_rel_diff(out.t->value, want.first) < 1e-6);
    CHECK(max_rel_diff(out.r->value, want.second) < 1e-6);
}

TEST_CASE("window partitioning: counts, order and exact crop-back") {
    Rng rng(3);
    const Var m24 = ad::constant(Tensor::uniform({24, 24, 2}, -1, 1, rng));
    CHECK(ad::window_partition(m24, 12)->value.shape() == std::vector<int>{4, 144, 2});
    const Var m12 = ad::constant(Tensor::uniform({12, 12, 2}, -1, 1, rng));
    CHECK(ad::window_partition(m12, 12)->value.dim(0) == 1);
    const Var m13 = ad::constant(Tensor::uniform({13, 13, 2}, -1, 1, rng));
    const Var seq = ad::window_partition(m13, 12);
    CHECK(seq->value.shape() == std::vector<int>{4, 144, 2});
    CHECK(bit_equal(ad::window_reverse(seq, 13, 13, 12)->value, m13->value));

    // row-major token order within each window
    const Var tiny = ad::constant([&] {
        Tensor t({2, 2, 1});
        t.at(0, 0, 0) = 1;
        t.at(0, 1, 0) = 2;
        t.at(1, 0, 0) = 3;
        t.at(1, 1, 0) = 4;
        return t;
    }());
    const Tensor tokens = ad::window_partition(tiny, 2)->value;
    CHECK(tokens.at(0, 0, 0) == 1);
    CHECK(tokens.at(0, 1, 0) == 2);
    CHECK(tokens.at(0, 2, 0) == 3);
    CHECK(tokens.at(0, 3, 0) == 4);
}

TEST_CASE("dual-dimensional attention: identical streams give identical outputs") {
    ParamRegistry reg;
    Rng rng(4);
    MultiHeadAttention sa(reg, "sa", 8, 2, rng);
    MultiHeadAttention ca(reg, "ca", 8, 2, rng);
    const Var tok = ad::constant(Tensor::uniform({3, 9, 8}, -1, 1, rng));
    const DualAttention a = dual_dimensional_attention(tok, tok, sa, ca);
    CHECK(max_abs_diff(a.t_sa->value, a.r_sa->value) < 1e-14);
    CHECK(max_abs_diff(a.t_ca->value, a.r_ca->value) < 1e-14);
}

TEST_CASE("single token: self-attention reduces to the value+output projection") {
    ParamRegistry reg;
    Rng rng(5);
    MultiHeadAttention sa(reg, "sa", 4, 1, rng);
    const Var tok = ad::constant(Tensor::uniform({1, 1, 4}, -1, 1, rng));
    const Tensor got = sa.forward(tok)->value;
    // softmax over one element is 1, so out = O(V(token))
    const auto w = oracle::extract_attention(sa);
    const Tensor token2d = tok->value.alias({1, 4});
    const Tensor v = oracle::linear(token2d, w.vw, &w.vb);
    const Tensor want = oracle::linear(v, w.ow, &w.ob);
    CHECK(max_abs_diff(got.alias({1, 4}), want) < 1e-12);
}

TEST_CASE("two tokens, one head: matches a hand-coded softmax attention oracle") {
    ParamRegistry reg;
    Rng rng(6);
    MultiHeadAttention sa(reg, "sa", 2, 1, rng);
    // hand-set projections
    auto set = [](const Var& v, std::initializer_list<double> vals) {
        std::size_t i = 0;
        for (double x : vals) v->value[static_cast<std::int64_t>(i++)] = x;
    };
    set(sa.q().weight(), {0.5, -0.25, 1.0, 0.75});
    set(sa.q().bias(), {0.1, -0.2});
    set(sa.k().weight(), {-0.6, 0.4, 0.2, -0.1});
    set(sa.k().bias(), {0.0, 0.3});
    set(sa.v().weight(), {0.9, 0.05, -0.3, 0.6});
    set(sa.v().bias(), {-0.1, 0.25});
    set(sa.o().weight(), {1.0, 0.0, 0.0, 1.0});
    set(sa.o().bias(), {0.0, 0.0});
    const Var tok = ad::constant(Tensor::from_values({1, 2, 2}, {0.3, -0.7, 1.1, 0.4}));
    const Tensor got = sa.forward(tok)->value;

    // scalar re-computation with explicit loops
    const double x[2][2] = {{0.3, -0.7}, {1.1, 0.4}};
    double q[2][2], k[2][2], v[2][2];
    const double qw[2][2] = {{0.5, -0.25}, {1.0, 0.75}}, qb[2] = {0.1, -0.2};
    const double kw[2][2] = {{-0.6, 0.4}, {0.2, -0.1}}, kb[2] = {0.0, 0.3};
    const double vw[2][2] = {{0.9, 0.05}, {-0.3, 0.6}}, vb[2] = {-0.1, 0.25};
    for (int i = 0; i < 2; ++i) {
        for (int c = 0; c < 2; ++c) {
            q[i][c] = x[i][0] * qw[0][c] + x[i][1] * qw[1][c] + qb[c];
            k[i][c] = x[i][0] * kw[0][c] + x[i][1] * kw[1][c] + kb[c];
            v[i][c] = x[i][0] * vw[0][c] + x[i][1] * vw[1][c] + vb[c];
        }
    }
    const double scale = 1.0 / std::sqrt(2.0);
    for (int i = 0; i < 2; ++i) {
        double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) * scale;
        double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) * scale;
        const double mx = std::max(s0, s1);
        const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
        const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        for (int c = 0; c < 2; ++c) {
            const double want = p0 * v[0][c] + p1 * v[1][c]; // identity output proj
            CHECK(got.at(0, i, c) == doctest::Approx(want).epsilon(1e-10));
        }
    }
}

TEST_CASE("differential separation follows the sigmoid-scaled subtraction") {
    Rng rng(7);
    const Var tsa = ad::constant(Tensor::uniform({2, 4, 3}, -1, 1, rng));
    const Var rsa = ad::constant(Tensor::uniform({2, 4, 3}, -1, 1, rng));
    const Var tca = ad::constant(Tensor::uniform({2, 4, 3}, -1, 1, rng));
    const Var rca = ad::constant(Tensor::uniform({2, 4, 3}, -1, 1, rng));

    // lambda -> -inf: sigma -> 0, plain aggregation of both attention maps
    {
        const auto [t, r] = differential_separation(tsa, rsa, tca, rca, -745.0);
        for (std::int64_t i = 0; i < t->value.size(); ++i) {
            CHECK(t->value[i] ==
                  doctest::Approx(tsa->value[i] + tca->value[i]).epsilon(1e-12));
        }
        (void)r;
    }
    // identical stream sums: both outputs equal (1 - sigma) * S
    {
        const auto [t, r] = differential_separation(tsa, rsa, tca, rca, 0.8);
        (void)t;
        (void)r;
        const auto [t2, r2] = differential_separation(tsa, tsa, tca, tca, 0.8);
        const double s = 1.0 / (1.0 + std::exp(-0.8));
        for (std::int64_t i = 0; i < t2->value.size(); ++i) {
            const double sum = tsa->value[i] + tca->value[i];
            CHECK(t2->value[i] == doctest::Approx((1.0 - s) * sum).epsilon(1e-12));
            CHECK(r2->value[i] == doctest::Approx((1.0 - s) * sum).epsilon(1e-12));
        }
    }
    // lambda = 0: sigma = 0.5; element-wise oracle
    {
        const auto [t, r] = differential_separation(tsa, rsa, tca, rca, 0.0);
        for (std::int64_t i = 0; i < t->value.size(); ++i) {
            const double st = tsa->value[i] + tca->value[i];
            const double sr = rsa->value[i] + rca->value[i];
            CHECK(t->value[i] == doctest::Approx(st - 0.5 * sr).epsilon(1e-9));
            CHECK(r->value[i] == doctest::Approx(sr - 0.5 * st).epsilon(1e-9));
        }
    }
    CHECK_THROWS_AS(differential_separation(tsa, rsa, tca,
                                            ad::constant(Tensor({2, 4, 4})), 0.0),
                    ShapeError);
}

TEST_CASE("block with zeroed feed-forward output is the identity") {
    ParamRegistry reg;
    Rng rng(8);
    LayerFusionSeparationBlock block(reg, "b", 8, 1, 2, 4, rng);
    block.ffn_t().down().weight()->value.fill(0.0);
    block.ffn_t().down().bias()->value.fill(0.0);
    block.ffn_r().down().weight()->value.fill(0.0);
    block.ffn_r().down().bias()->value.fill(0.0);
    const DualStream in{ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng)),
                        ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng))};
    const DualStream out = block.forward(in, mid_curriculum());
    CHECK(bit_equal(out.t->value, in.t->value));
    CHECK(bit_equal(out.r->value, in.r->value));
}

TEST_CASE("stream-swap equivariance with symmetrized weights is exact") {
    ParamRegistry reg;
    Rng rng(9);
    LayerFusionSeparationBlock block(reg, "b", 8, 2, 2, 4, rng);
    block.symmetrize_streams();
    const Var a = ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng));
    const Var b = ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng));
    const CurriculumState cur = mid_curriculum();
    const DualStream fwd = block.forward({a, b}, cur);
    const DualStream swapped = block.forward({b, a}, cur);
    CHECK(bit_equal(fwd.t->value, swapped.r->value));
    CHECK(bit_equal(fwd.r->value, swapped.t->value));
}

TEST_CASE("full block matches the monolithic straight-line oracle") {
    ParamRegistry reg;
    Rng rng(10);
    LayerFusionSeparationBlock block(reg, "b", 16, 2, 4, 6, rng);
    const CurriculumState cur = mid_curriculum();
    const Var t = ad::constant(Tensor::uniform({12, 12, 16}, -1, 1, rng));
    const Var r = ad::constant(Tensor::uniform({12, 12, 16}, -1, 1, rng));
    const DualStream out = block.forward({t, r}, cur);
    const auto want = oracle::lfsb(t->value, r->value, oracle::extract_lfsb(block, 6, cur));
    CHECK(max_rel_diff(out.t->value, want.first) < 1e-5);
    CHECK(max_rel_diff(out.r->value, want.second) < 1e-5);
}

TEST_CASE("block gradients: input and raw lambda match finite differences") {
    ParamRegistry reg;
    Rng rng(11);
    LayerFusionSeparationBlock block(reg, "b", 4, 1, 2, 3, rng);
    const CurriculumState cur = mid_curriculum();
    const Var t = ad::leaf(Tensor::uniform({6, 6, 4}, -1, 1, rng), true);
    const Var r = ad::leaf(Tensor::uniform({6, 6, 4}, -1, 1, rng), true);
    const GradCheckResult g = finite_diff_check(
        [&] {
            const DualStream out = block.forward({t, r}, cur);
            return ad::add(random_readout(out.t, 71), random_readout(out.r, 72));
        },
        {t, r, block.raw_lambda()}, 1e-5, 96);
    CAPTURE(g.max_rel_err);
    CHECK(g.ok(1e-3));
}

TEST_CASE("learnable-mode coefficient is sigma(raw) * warmup factor") {
    ParamRegistry reg;
    Rng rng(12);
    LayerFusionSeparationBlock block(reg, "b", 4, 3, 2, 4, rng);
    CurriculumState cur = mid_curriculum();
    const double raw = block.raw_lambda()->value[0];
    const double expect = 1.0 / (1.0 + std::exp(-raw)) * cur.lambda_diff;
    CHECK(block.coefficient_value(cur) == doctest::Approx(expect).epsilon(1e-12));
    // at epoch 0 the raw parameter sits at logit(lambda_init(depth))
    CHECK(1.0 / (1.0 + std::exp(-raw)) == doctest::Approx(lambda_init(3)).epsilon(1e-12));

    cur.mode = LambdaMode::kSchedule;
    const double scheduled = lambda_init(3) * cur.lambda_diff;
    CHECK(block.coefficient_value(cur) ==
          doctest::Approx(1.0 / (1.0 + std::exp(-scheduled))).epsilon(1e-12));
}

TEST_CASE("relative position bias: zero table matches the default path, gradients flow") {
    Rng rng(14);
    const Var t = ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng));
    const Var r = ad::constant(Tensor::uniform({8, 8, 8}, -1, 1, rng));
    const CurriculumState cur = mid_curriculum();

    LfsbOptions with_bias;
    with_bias.position_bias = true;
    ParamRegistry reg_a;
    Rng ra(15);
    LayerFusionSeparationBlock biased(reg_a, "b", 8, 1, 2, 4, ra, with_bias);
    ParamRegistry reg_b;
    Rng rb(15);
    LayerFusionSeparationBlock plain(reg_b, "b", 8, 1, 2, 4, rb);

    // same construction stream except for the extra table, so align weights
    for (const auto& p : reg_b.items()) {
        const ParamInfo* twin = reg_a.find(p.name);
        REQUIRE(twin != nullptr);
        copy_value(twin->var, p.var);
    }
    biased.position_bias_table()->value.fill(0.0);
    const DualStream out_biased = biased.forward({t, r}, cur);
    const DualStream out_plain = plain.forward({t, r}, cur);
    CHECK(max_abs_diff(out_biased.t->value, out_plain.t->value) < 1e-12);
    CHECK(max_abs_diff(out_biased.r->value, out_plain.r->value) < 1e-12);

    // bias table participates in the gradient
    Rng rc(16);
    Tensor::uniform({1}, 0, 1, rc); // keep rng use explicit
    biased.position_bias_table()->value =
        Tensor::uniform(biased.position_bias_table()->value.shape(), -0.05, 0.05, rc);
    const GradCheckResult g = finite_diff_check(
        [&] {
            const DualStream out = biased.forward({t, r}, cur);
            return ad::add(random_readout(out.t, 74), random_readout(out.r, 75));
        },
        {biased.position_bias_table()}, 1e-5, 48);
    CAPTURE(g.max_rel_err);
    CHECK(g.ok(1e-3));
}

TEST_CASE("raising the subtraction strength drives the streams apart") {
    // Constructed fixtures: non-parallel, positively correlated sums.
    Rng rng(13);
    Tensor st = Tensor::uniform({40}, 0.2, 1.0, rng);
    Tensor sr(st.shape());
    for (std::int64_t i = 0; i < sr.size(); ++i) {
        sr[i] = 0.55 * st[i] + ((i % 2) ? 0.35 : -0.27);
    }
    double dot = 0;
    for (std::int64_t i = 0; i < st.size(); ++i) dot += st[i] * sr[i];
    REQUIRE(dot > 0.0);

    double prev = 2.0;
    for (const double s : {0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95}) {
        const auto [dt, dr] = differential_mix(ad::constant(st), ad::constant(sr),
                                               ad::constant(Tensor::full({1}, s)));
        const double cs = cosine_similarity(dt->value, dr->value);
        CHECK(cs < prev);
        prev = cs;
    }
}
