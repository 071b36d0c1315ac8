#include <doctest.h>

#include "reflexsplit/common.hpp"
#include "reflexsplit/encoders.hpp"
#include "reflexsplit/gradcheck.hpp"
#include "reflexsplit/oracle_bridge.hpp"
#include "reflexsplit/synth.hpp"
#include "test_support.hpp"

using namespace reflexsplit;
using namespace reflexsplit::testing;

namespace {

ModelConfig tiny_config() {
    ModelConfig c = ModelConfig::desk();
    c.image_size = 32;
    c.base_width = 2;
    c.heads = {1, 1, 1, 1, 1, 1};
    c.window_size = 4;
    c.lfsb_depth = {1, 1, 1, 1, 1};
    return validate_config(c);
}

} // namespace

TEST_CASE("stub global encoder obeys the pyramid shape law") {
    const ModelConfig config = validate_config(ModelConfig::desk());
    ParamRegistry reg;
    Rng rng(1);
    const auto enc = make_global_encoder(reg, config, rng);
    Rng img_rng(2);
    const Var image = ad::constant(procedural_image(96, 96, img_rng));
    const FeaturePyramid pyr = enc->forward(image);
    CHECK(pyr.levels.size() == 4);
    CHECK(pyr.levels.at(2)->value.shape() == std::vector<int>{24, 24, 32});
    CHECK(pyr.levels.at(5)->value.shape() == std::vector<int>{3, 3, 256});
    CHECK_NOTHROW(validate_pyramid(pyr, config, 96, 96, "test"));
}

namespace {

// Deliberately violates the channel schedule at level 3.
class BadEncoder : public GlobalFeatureEncoder {
public:
    explicit BadEncoder(const ModelConfig& config) : config_(config) {}
    FeaturePyramid forward(const Var& image) const override {
        FeaturePyramid pyr;
        pyr.source = PyramidSource::kGlobal;
        const int h = image->value.dim(0), w = image->value.dim(1);
        for (int level = 2; level <= 5; ++level) {
            const int c = channel_at(config_, level) + (level == 3 ? 1 : 0);
            pyr.levels[level] = ad::constant(Tensor({h >> level, w >> level, c}));
        }
        return pyr;
    }

private:
    ModelConfig config_;
};

} // namespace

TEST_CASE("the adapter rejects a backbone that violates the shape law") {
    ModelConfig config = validate_config(ModelConfig::desk());
    register_global_encoder("bad-for-test",
                            [](ParamRegistry&, const ModelConfig& c, Rng&) {
                                return std::make_unique<BadEncoder>(c);
                            });
    config.gfeb_backend = "external:bad-for-test";
    ParamRegistry reg;
    Rng rng(1);
    const auto enc = make_global_encoder(reg, config, rng);
    Rng img_rng(2);
    const Var image = ad::constant(procedural_image(96, 96, img_rng));
    CHECK_THROWS_WITH_AS((void)enc->forward(image), doctest::Contains("level 3"), ShapeError);
    ModelConfig unknown = config;
    unknown.gfeb_backend = "external:never-registered";
    ParamRegistry reg2;
    CHECK_THROWS_AS((void)make_global_encoder(reg2, unknown, rng), ConfigError);
}

TEST_CASE("mutual gating: zeroed feature path is the identity") {
    ParamRegistry reg;
    Rng rng(3);
    MutualGatedInteraction mugi(reg, "m", 4, rng);
    mugi.feature_t().weight()->value.fill(0.0);
    mugi.feature_t().bias()->value.fill(0.0);
    mugi.feature_r().weight()->value.fill(0.0);
    mugi.feature_r().bias()->value.fill(0.0);
    const DualStream in{ad::constant(Tensor::uniform({5, 5, 4}, -1, 1, rng)),
                        ad::constant(Tensor::uniform({5, 5, 4}, -1, 1, rng))};
    const DualStream out = mugi.forward(in);
    CHECK(bit_equal(out.t->value, in.t->value));
    CHECK(bit_equal(out.r->value, in.r->value));
}

TEST_CASE("mutual gating: symmetric weights swap outputs under swapped inputs") {
    ParamRegistry reg;
    Rng rng(4);
    MutualGatedInteraction mugi(reg, "m", 4, rng);
    mugi.symmetrize_streams();
    const Var a = ad::constant(Tensor::uniform({4, 6, 4}, -1, 1, rng));
    const Var b = ad::constant(Tensor::uniform({4, 6, 4}, -1, 1, rng));
    const DualStream fwd = mugi.forward({a, b});
    const DualStream swapped = mugi.forward({b, a});
    CHECK(bit_equal(fwd.t->value, swapped.r->value));
    CHECK(bit_equal(fwd.r->value, swapped.t->value));
}

TEST_CASE("mutual gating smoke: finite outputs across 100 seeds") {
    for (int seed = 0; seed < 100; ++seed) {
        ParamRegistry reg;
        Rng rng(static_cast<std::uint64_t>(seed) + 1000);
        MutualGatedInteraction mugi(reg, "m", 4, rng);
        const DualStream in{ad::constant(Tensor::uniform({3, 3, 4}, -2, 2, rng)),
                            ad::constant(Tensor::uniform({3, 3, 4}, -2, 2, rng))};
        const DualStream out = mugi.forward(in);
        CHECK(out.t->value.all_finite());
        CHECK(out.r->value.all_finite());
        CHECK(out.t->value.same_shape(in.t->value));
    }
}

TEST_CASE("mutual gating matches the straight-line oracle") {
    ParamRegistry reg;
    Rng rng(5);
    MutualGatedInteraction mugi(reg, "m", 6, rng);
    const Var t = ad::constant(Tensor::uniform({4, 4, 6}, -1, 1, rng));
    const Var r = ad::constant(Tensor::uniform({4, 4, 6}, -1, 1, rng));
    const DualStream out = mugi.forward({t, r});
    const auto want = oracle::mugi(t->value, r->value, oracle::extract_mugi(mugi));
    CHECK(max_abs_diff(out.t->value, want.first) < 1e-10);
    CHECK(max_abs_diff(out.r->value, want.second) < 1e-10);
}

TEST_CASE("mutual gating rejects mismatched streams") {
    ParamRegistry reg;
    Rng rng(6);
    MutualGatedInteraction mugi(reg, "m", 4, rng);
    CHECK_THROWS_AS(mugi.forward({ad::constant(Tensor({3, 3, 4})),
                                  ad::constant(Tensor({3, 4, 4}))}),
                    ShapeError);
}

TEST_CASE("local encoder produces the full texture pyramid deterministically") {
    const ModelConfig config = tiny_config();
    ParamRegistry reg;
    Rng rng(config.seed);
    LocalFeatureEncoder lfeb(reg, config, rng);
    Rng img_rng(9);
    const Var image = ad::constant(procedural_image(32, 32, img_rng));
    const auto [pt, pr] = lfeb.forward(image);
    CHECK(pt.levels.size() == 6);
    CHECK(pr.levels.size() == 6);
    CHECK_NOTHROW(validate_pyramid(pt, config, 32, 32, "t"));
    CHECK_NOTHROW(validate_pyramid(pr, config, 32, 32, "r"));
    CHECK(pt.levels.at(0)->value.shape() == std::vector<int>{32, 32, 2});
    CHECK(pt.levels.at(3)->value.shape() == std::vector<int>{4, 4, 16});

    const auto [qt, qr] = lfeb.forward(image);
    for (int l = 0; l <= 5; ++l) {
        CHECK(bit_equal(pt.levels.at(l)->value, qt.levels.at(l)->value));
        CHECK(bit_equal(pr.levels.at(l)->value, qr.levels.at(l)->value));
    }
}

TEST_CASE("desk-scale texture pyramid matches the architecture table shapes") {
    const ModelConfig config = validate_config(ModelConfig::desk());
    ParamRegistry reg;
    Rng rng(config.seed);
    LocalFeatureEncoder lfeb(reg, config, rng);
    Rng img_rng(10);
    const Var image = ad::constant(procedural_image(96, 96, img_rng));
    const auto [pt, pr] = lfeb.forward(image);
    CHECK(pt.levels.at(0)->value.shape() == std::vector<int>{96, 96, 8});
    CHECK(pt.levels.at(5)->value.shape() == std::vector<int>{3, 3, 256});
}

TEST_CASE("encoder taps differentiate with respect to the input image") {
    const ModelConfig config = tiny_config();
    ParamRegistry reg;
    Rng rng(config.seed);
    LocalFeatureEncoder lfeb(reg, config, rng);
    Rng img_rng(11);
    const Var image = ad::leaf(procedural_image(32, 32, img_rng), true);
    for (const int level : {0, 3, 5}) {
        ad::clear_grad(image);
        const GradCheckResult r = finite_diff_check(
            [&] {
                const auto [pt, pr] = lfeb.forward(image);
                return random_readout(ad::add(pt.levels.at(level), pr.levels.at(level)),
                                      static_cast<std::uint64_t>(level) + 31);
            },
            {image}, 1e-5, 24);
        CAPTURE(level);
        CAPTURE(r.max_rel_err);
        CHECK(r.ok(1e-3));
    }
}

TEST_CASE("stub encoder output differentiates with respect to the input") {
    const ModelConfig config = tiny_config();
    ParamRegistry reg;
    Rng rng(1);
    StubGlobalEncoder enc(reg, config, rng, true);
    Rng img_rng(12);
    const Var image = ad::leaf(procedural_image(32, 32, img_rng), true);
    const GradCheckResult r = finite_diff_check(
        [&] {
            const FeaturePyramid pyr = enc.forward(image);
            return random_readout(pyr.levels.at(4), 77);
        },
        {image}, 1e-5, 24);
    CHECK(r.ok(1e-3));
}
