#include <doctest.h>

#include "reflexsplit/common.hpp"
#include <cmath>

#include "reflexsplit/gradcheck.hpp"
#include "reflexsplit/losses.hpp"
#include "reflexsplit/oracles.hpp"
#include "test_support.hpp"

using namespace reflexsplit;
using namespace reflexsplit::testing;

TEST_CASE("charbonnier: epsilon floor, frozen value, L1 limit") {
    Rng rng(1);
    const Var a = ad::constant(Tensor::uniform({6, 6, 3}, 0.0, 1.0, rng));
    CHECK(charbonnier(a, a, 1e-6)->value[0] == doctest::Approx(1e-6).epsilon(1e-12));

    const Var b = ad::constant([&] {
        Tensor t = a->value.clone();
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] += 3e-6;
        return t;
    }());
    // sqrt(9e-12 + 1e-12), 20-digit evaluation frozen ahead of the build
    CHECK(charbonnier(b, a, 1e-6)->value[0] ==
          doctest::Approx(3.162277660168379332e-6).epsilon(1e-9));

    const Var c = ad::constant(Tensor::uniform({6, 6, 3}, 0.0, 1.0, rng));
    const double l1 = reflection_l1(a, c)->value[0];
    CHECK(std::abs(charbonnier(a, c, 1e-12)->value[0] - l1) < 1e-9);
    CHECK_THROWS_AS((void)charbonnier(a, c, 0.0), ConfigError);
    CHECK_THROWS_AS((void)charbonnier(a, ad::constant(Tensor({3, 3, 3})), 1e-6), ShapeError);
}

TEST_CASE("reflection L1: zero, constant offset, loop oracle") {
    Rng rng(2);
    const Var a = ad::constant(Tensor::uniform({5, 7, 3}, 0.0, 1.0, rng));
    CHECK(reflection_l1(a, a)->value[0] == 0.0);
    const Var b = ad::constant([&] {
        Tensor t = a->value.clone();
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] += 0.25;
        return t;
    }());
    CHECK(reflection_l1(b, a)->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    const Var c = ad::constant(Tensor::uniform({5, 7, 3}, 0.0, 1.0, rng));
    double want = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i)
        want += std::abs(a->value[i] - c->value[i]);
    want /= static_cast<double>(a->value.size());
    CHECK(reflection_l1(a, c)->value[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("perceptual term: zero at equality, straight-line tap sum, nonnegative") {
    Rng rng(3);
    StubPerceptualExtractor stub(17);
    const Var a = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    CHECK(perceptual(a, a, stub)->value[0] == 0.0);

    const Var b = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    const double got = perceptual(a, b, stub)->value[0];
    CHECK(got >= 0.0);
    const auto ta = stub.features(a);
    const auto tb = stub.features(b);
    REQUIRE(ta.size() == 5);
    double want = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        double l1 = 0.0;
        for (std::int64_t j = 0; j < ta[i]->value.size(); ++j)
            l1 += std::abs(ta[i]->value[j] - tb[i]->value[j]);
        want += 0.2 * l1 / static_cast<double>(ta[i]->value.size());
    }
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("exclusion: constant layer, orthogonal supports, loop oracle, c^2 scaling") {
    Rng rng(4);
    const Var constant_t = ad::constant(Tensor::full({16, 16, 3}, 0.42));
    const Var any_r = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    CHECK(exclusion(constant_t, any_r)->value[0] == 0.0);

    // T varies only along x, R only along y
    Tensor tx({16, 16, 3}), ry({16, 16, 3});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                tx.at(y, x, c) = std::sin(0.4 * x);
                ry.at(y, x, c) = std::cos(0.3 * y);
            }
    CHECK(exclusion(ad::constant(tx), ad::constant(ry))->value[0] ==
          doctest::Approx(0.0).epsilon(1e-12));

    const Var t = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    const Var r = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    const double got = exclusion(t, r)->value[0];
    CHECK(got == doctest::Approx(oracle::exclusion(t->value, r->value)).epsilon(1e-6));

    const double c = 1.7;
    const Var tc = ad::scale(t, c);
    const Var rc = ad::scale(r, c);
    CHECK(exclusion(tc, rc)->value[0] == doctest::Approx(c * c * got).epsilon(1e-9));

    CHECK_THROWS_AS((void)exclusion(ad::constant(Tensor({6, 6, 3})),
                                    ad::constant(Tensor({6, 6, 3}))),
                    ShapeError);
}

TEST_CASE("reconstruction consistency: exact decompositions vanish") {
    Rng rng(5);
    const Var t = ad::constant(Tensor::uniform({6, 6, 3}, 0.0, 0.4, rng));
    const Var r = ad::constant(Tensor::uniform({6, 6, 3}, 0.0, 0.4, rng));
    const Var i = ad::constant(Tensor::uniform({6, 6, 3}, 0.0, 1.0, rng));
    const Var rr = ad::sub(i, ad::add(t, r));
    CHECK(reconstruction_consistency(t, r, rr, i)->value[0] ==
          doctest::Approx(0.0).epsilon(1e-15));

    const Var rr2 = ad::constant(Tensor::uniform({6, 6, 3}, -0.5, 0.5, rng));
    double want = 0.0;
    for (std::int64_t k = 0; k < t->value.size(); ++k) {
        want += std::abs(t->value[k] + r->value[k] + rr2->value[k] - i->value[k]);
    }
    want /= static_cast<double>(t->value.size());
    CHECK(reconstruction_consistency(t, r, rr2, i)->value[0] ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("color consistency: identity, permutation invariance, constant shift") {
    Rng rng(6);
    const Var a = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 0.5, rng));
    CHECK(color_consistency(a, a)->value[0] == 0.0);

    // spatial permutation preserves the channel statistics
    Tensor shuffled = a->value.clone();
    Rng perm_rng(7);
    for (int k = 63; k > 0; --k) {
        const int j = perm_rng.uniform_int(0, k);
        for (int c = 0; c < 3; ++c) {
            std::swap(shuffled[static_cast<std::int64_t>(k) * 3 + c],
                      shuffled[static_cast<std::int64_t>(j) * 3 + c]);
        }
    }
    CHECK(color_consistency(ad::constant(shuffled), a)->value[0] ==
          doctest::Approx(0.0).epsilon(1e-9));

    // +0.1 constant: mean gap 0.1 per channel, std gap 0 -> total 0.3
    const Var b = ad::constant([&] {
        Tensor t = a->value.clone();
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] += 0.1;
        return t;
    }());
    CHECK(color_consistency(b, a)->value[0] == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("total objective: floor at perfection, zero weights, weighted dot product") {
    Rng rng(8);
    // Orthogonal-gradient ground truth makes every term except the
    // Charbonnier floor vanish at perfect predictions.
    Tensor t_img({16, 16, 3}), r_img({16, 16, 3});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) {
                t_img.at(y, x, c) = 0.25 + 0.2 * std::sin(0.5 * x);
                r_img.at(y, x, c) = 0.25 + 0.2 * std::cos(0.4 * y);
            }
    const Var gt_t = ad::constant(t_img);
    const Var gt_r = ad::constant(r_img);
    const Var input = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    StubPerceptualExtractor stub(3);
    LossWeights w;

    SeparationOutput perfect{gt_t, gt_r, ad::sub(input, ad::add(gt_t, gt_r))};
    const TotalLoss at_perfection = total_loss(perfect, gt_t, gt_r, input, w, &stub, 1e-6);
    CHECK(at_perfection.report.total == doctest::Approx(w.rec * 1e-6).epsilon(1e-9));

    SeparationOutput arbitrary{ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng)),
                               ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng)),
                               ad::constant(Tensor::uniform({16, 16, 3}, -0.5, 0.5, rng))};
    LossWeights zero{};
    zero.rec = zero.refl = zero.vgg = zero.exclu = zero.recons = zero.color = 0.0;
    const TotalLoss zeroed = total_loss(arbitrary, gt_t, gt_r, input, zero, &stub, 1e-6);
    CHECK(zeroed.report.total == 0.0);

    const TotalLoss full = total_loss(arbitrary, gt_t, gt_r, input, w, &stub, 1e-6);
    const double dot = w.rec * full.report.rec + w.refl * full.report.refl +
                       w.vgg * full.report.vgg + w.exclu * full.report.exclu +
                       w.recons * full.report.recons + w.color * full.report.color;
    CHECK(full.report.total == doctest::Approx(dot).epsilon(1e-9));
    CHECK(std::abs(full.report.total - dot) < 1e-9);
}

TEST_CASE("missing extractor: fatal unless the vgg weight is zero") {
    Rng rng(9);
    const Var img = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    SeparationOutput pred{img, img, ad::constant(Tensor({16, 16, 3}))};
    LossWeights w;
    CHECK_THROWS_AS((void)total_loss(pred, img, img, img, w, nullptr, 1e-6), ConfigError);
    w.vgg = 0.0;
    const TotalLoss ok = total_loss(pred, img, img, img, w, nullptr, 1e-6);
    CHECK(ok.report.vgg == 0.0);
    CHECK(ok.report.vgg_skipped);
}

TEST_CASE("a NaN term aborts naming the term") {
    Rng rng(10);
    Tensor poisoned = Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng);
    poisoned[0] = std::numeric_limits<double>::quiet_NaN();
    const Var gt = ad::constant(Tensor::uniform({16, 16, 3}, 0.0, 1.0, rng));
    SeparationOutput pred{ad::constant(poisoned), gt, ad::constant(Tensor({16, 16, 3}))};
    StubPerceptualExtractor stub(4);
    LossWeights w;
    CHECK_THROWS_WITH_AS((void)total_loss(pred, gt, gt, gt, w, &stub, 1e-6),
                         doctest::Contains("rec"), NumericalError);
}

TEST_CASE("every loss term passes its finite-difference gradient check") {
    Rng rng(11);
    const Var pt = ad::param(Tensor::uniform({8, 8, 3}, 0.05, 0.95, rng));
    const Var pr = ad::param(Tensor::uniform({8, 8, 3}, 0.05, 0.95, rng));
    const Var rr = ad::param(Tensor::uniform({8, 8, 3}, -0.3, 0.3, rng));
    const Var gt = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    const Var gr = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    const Var in = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    StubPerceptualExtractor stub(5);

    auto check = [&](const char* what, const std::function<Var()>& f,
                     const std::vector<Var>& leaves) {
        for (const auto& l : leaves) ad::clear_grad(l);
        const GradCheckResult r = finite_diff_check(f, leaves, 1e-6, 64);
        CAPTURE(what);
        CAPTURE(r.max_rel_err);
        CHECK(r.ok(1e-3));
    };
    check("charbonnier", [&] { return charbonnier(pt, gt, 1e-6); }, {pt});
    check("l1", [&] { return reflection_l1(pr, gr); }, {pr});
    check("perceptual", [&] { return perceptual(pt, gt, stub); }, {pt});
    check("exclusion", [&] { return exclusion(pt, pr); }, {pt, pr});
    check("recons", [&] { return reconstruction_consistency(pt, pr, rr, in); }, {pt, pr, rr});
    check("color", [&] { return color_consistency(pr, gr); }, {pr});
}
