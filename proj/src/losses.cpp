#include "reflexsplit/losses.hpp"

#include <cmath>
#include <iostream>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

StubPerceptualExtractor::StubPerceptualExtractor(std::uint64_t seed) {
    Rng rng(seed);
    // Five taps at mixed strides so small fixtures keep nonzero extents.
    const int widths[6] = {3, 8, 16, 16, 32, 32};
    const int strides[5] = {1, 2, 1, 2, 1};
    for (int i = 0; i < 5; ++i) {
        convs_.emplace_back(params_, "tap" + std::to_string(i), 3, widths[i], widths[i + 1],
                            strides[i], 1, rng, true, /*trainable=*/false);
    }
}

std::vector<Var> StubPerceptualExtractor::features(const Var& image) const {
    std::vector<Var> taps;
    Var x = image;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        x = convs_[i].forward(x);
        taps.push_back(x);
        x = ad::gelu(x);
    }
    return taps;
}

Var charbonnier(const Var& pred, const Var& gt, double eps) {
    require_same_shape(pred->value, gt->value, "charbonnier");
    if (eps <= 0) throw ConfigError("charbonnier: eps must be positive");
    const Var d = ad::sub(pred, gt);
    return ad::mean_all(ad::sqrt_val(ad::add_scalar(ad::mul(d, d), eps * eps)));
}

Var reflection_l1(const Var& pred, const Var& gt) {
    require_same_shape(pred->value, gt->value, "reflection_l1");
    return ad::mean_all(ad::abs_val(ad::sub(pred, gt)));
}

Var perceptual(const Var& pred, const Var& gt, const PerceptualExtractor& extractor) {
    require_same_shape(pred->value, gt->value, "perceptual");
    const auto tp = extractor.features(pred);
    const auto tg = extractor.features(gt);
    if (tp.size() != tg.size() || tp.empty()) {
        throw NumericalError("perceptual: extractor returned inconsistent tap lists");
    }
    const double w = 1.0 / static_cast<double>(tp.size());
    Var acc;
    for (std::size_t i = 0; i < tp.size(); ++i) {
        const Var term = ad::scale(ad::mean_all(ad::abs_val(ad::sub(tp[i], tg[i]))), w);
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

namespace {

// Forward differences along x and y of an {H,W,C} map.
std::pair<Var, Var> spatial_gradients(const Var& map) {
    const int h = map->value.dim(0), w = map->value.dim(1);
    const Var gx = ad::sub(ad::slice(map, 1, 1, w - 1), ad::slice(map, 1, 0, w - 1));
    const Var gy = ad::sub(ad::slice(map, 0, 1, h - 1), ad::slice(map, 0, 0, h - 1));
    return {gx, gy};
}

} // namespace

Var exclusion(const Var& pred_t, const Var& pred_r) {
    require_same_shape(pred_t->value, pred_r->value, "exclusion");
    const int h = pred_t->value.dim(0), w = pred_t->value.dim(1);
    // Forward differences need at least 2 pixels per axis at the coarsest
    // (quarter-resolution) scale.
    if (h / 4 < 2 || w / 4 < 2) {
        throw ShapeError("exclusion: image " + pred_t->value.shape_str() +
                         " too small for 3 scales (coarsest needs 2x2)");
    }
    Var t = pred_t, r = pred_r, acc;
    for (int scale = 0; scale < 3; ++scale) {
        if (scale > 0) {
            t = ad::avg_pool2(t);
            r = ad::avg_pool2(r);
        }
        const auto [tx, ty] = spatial_gradients(t);
        const auto [rx, ry] = spatial_gradients(r);
        const Var term = ad::add(ad::mean_all(ad::abs_val(ad::mul(tx, rx))),
                                 ad::mean_all(ad::abs_val(ad::mul(ty, ry))));
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

Var reconstruction_consistency(const Var& pred_t, const Var& pred_r, const Var& pred_rr,
                               const Var& input) {
    require_same_shape(pred_t->value, pred_r->value, "reconstruction_consistency");
    require_same_shape(pred_t->value, pred_rr->value, "reconstruction_consistency");
    require_same_shape(pred_t->value, input->value, "reconstruction_consistency");
    const Var sum = ad::add(ad::add(pred_t, pred_r), pred_rr);
    return ad::mean_all(ad::abs_val(ad::sub(sum, input)));
}

Var color_consistency(const Var& pred_r, const Var& gt_r) {
    require_same_shape(pred_r->value, gt_r->value, "color_consistency");
    auto stats = [](const Var& img) {
        const Var mu = ad::mean_hw(img);
        const Var centered = ad::add_channel(img, ad::neg(mu));
        const Var var = ad::mean_hw(ad::mul(centered, centered));
        return std::make_pair(mu, ad::sqrt_val(var));
    };
    const auto [mu_p, sd_p] = stats(pred_r);
    const auto [mu_g, sd_g] = stats(gt_r);
    return ad::add(ad::sum_all(ad::abs_val(ad::sub(mu_p, mu_g))),
                   ad::sum_all(ad::abs_val(ad::sub(sd_p, sd_g))));
}

TotalLoss total_loss(const SeparationOutput& pred, const Var& gt_t, const Var& gt_r,
                     const Var& input, const LossWeights& weights,
                     const PerceptualExtractor* extractor, double charbonnier_eps) {
    TotalLoss out;
    const Var rec = charbonnier(pred.transmission, gt_t, charbonnier_eps);
    const Var refl = reflection_l1(pred.reflection, gt_r);
    Var vgg;
    if (extractor) {
        vgg = perceptual(pred.transmission, gt_t, *extractor);
    } else if (weights.vgg == 0.0) {
        std::cerr << "warning: perceptual extractor missing; vgg term reported as 0\n";
        out.report.vgg_skipped = true;
        vgg = ad::constant(Tensor({1}));
    } else {
        throw ConfigError("total_loss: vgg weight is nonzero but no perceptual extractor is set");
    }
    const Var exclu = exclusion(pred.transmission, pred.reflection);
    const Var recons =
        reconstruction_consistency(pred.transmission, pred.reflection, pred.residue, input);
    const Var color = color_consistency(pred.reflection, gt_r);

    out.report.rec = rec->value[0];
    out.report.refl = refl->value[0];
    out.report.vgg = vgg->value[0];
    out.report.exclu = exclu->value[0];
    out.report.recons = recons->value[0];
    out.report.color = color->value[0];
    const struct {
        const char* name;
        double v;
    } terms[] = {{"rec", out.report.rec},     {"refl", out.report.refl},
                 {"vgg", out.report.vgg},     {"exclu", out.report.exclu},
                 {"recons", out.report.recons}, {"color", out.report.color}};
    for (const auto& t : terms) {
        if (std::isnan(t.v)) {
            throw NumericalError(std::string("total_loss: term '") + t.name + "' is NaN");
        }
    }

    Var total = ad::scale(rec, weights.rec);
    total = ad::add(total, ad::scale(refl, weights.refl));
    total = ad::add(total, ad::scale(vgg, weights.vgg));
    total = ad::add(total, ad::scale(exclu, weights.exclu));
    total = ad::add(total, ad::scale(recons, weights.recons));
    total = ad::add(total, ad::scale(color, weights.color));
    out.total = total;
    out.report.total = total->value[0];
    return out;
}

} // namespace reflexsplit
