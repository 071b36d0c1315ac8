#include "reflexsplit/fusion.hpp"

#include "reflexsplit/common.hpp"

namespace reflexsplit {

SplitGate::SplitGate(ParamRegistry& reg, const std::string& name, int channels, bool first_half,
                     Rng& rng)
    : gate_(reg, name + ".gate", channels / 2, channels / 2, rng),
      expand_(reg, name + ".expand", channels / 2, channels, rng),
      channels_(channels),
      first_half_(first_half) {
    if (channels % 2 != 0) {
        throw ShapeError("SplitGate: channel count " + std::to_string(channels) + " must be even");
    }
}

Var SplitGate::apply(const Var& x) const {
    if (x->value.dim(2) != channels_) {
        throw ShapeError("SplitGate: expected " + std::to_string(channels_) + " channels, got " +
                         x->value.shape_str());
    }
    const int half = channels_ / 2;
    const Var part = ad::slice(x, 2, first_half_ ? 0 : half, half);
    return expand_.forward(ad::sigmoid(gate_.forward(part)));
}

CrossScaleGatedFusion::CrossScaleGatedFusion(ParamRegistry& reg, const std::string& name,
                                             int channels, Rng& rng)
    : g1_(std::make_unique<SplitGate>(reg, name + ".g1", channels, true, rng)),
      g2_(std::make_unique<SplitGate>(reg, name + ".g2", channels, false, rng)),
      phi1_(reg, name + ".phi1", channels, channels, rng),
      phi2_(reg, name + ".phi2", channels, channels, rng),
      channels_(channels),
      name_(name) {
    mix_logits_ = reg.add(name + ".mix", Tensor({2}));
}

Var CrossScaleGatedFusion::forward(const Var& decoder_ctx, const Var& semantic,
                                   const Var& texture) const {
    require_same_shape(decoder_ctx->value, semantic->value, "crgf_fuse(ctx, semantic)");
    require_same_shape(decoder_ctx->value, texture->value, "crgf_fuse(ctx, texture)");
    const Var raw = ad::add(ad::add(decoder_ctx, semantic), texture);
    const Var main_path = ad::mul(g1_->apply(raw), g2_->apply(decoder_ctx));
    const Var aux_path = ad::mul(g1_->apply(decoder_ctx), g2_->apply(raw));
    const Var w = ad::softmax_last(mix_logits_);
    const Var w1 = ad::slice(w, 0, 0, 1);
    const Var w2 = ad::slice(w, 0, 1, 1);
    return ad::add(ad::mul_scalar_var(phi1_.forward(main_path), w1),
                   ad::mul_scalar_var(phi2_.forward(aux_path), w2));
}

void CrossScaleGatedFusion::use_identity_gates() {
    g1_ = std::make_unique<IdentityGate>();
    g2_ = std::make_unique<IdentityGate>();
}

void CrossScaleGatedFusion::make_projections_identity() const {
    for (const Conv1x1* phi : {&phi1_, &phi2_}) {
        Tensor& w = phi->weight()->value;
        Tensor& b = phi->bias()->value;
        w.fill(0.0);
        for (int c = 0; c < channels_; ++c) w.at(c, c) = 1.0;
        b.fill(0.0);
    }
}

void CrossScaleGatedFusion::copy_from(const CrossScaleGatedFusion& other) const {
    auto* a1 = dynamic_cast<SplitGate*>(g1_.get());
    auto* a2 = dynamic_cast<SplitGate*>(g2_.get());
    auto* b1 = dynamic_cast<SplitGate*>(other.g1_.get());
    auto* b2 = dynamic_cast<SplitGate*>(other.g2_.get());
    if (a1 && b1) {
        copy_value(a1->gate_conv().weight(), b1->gate_conv().weight());
        copy_value(a1->gate_conv().bias(), b1->gate_conv().bias());
        copy_value(a1->expand_conv().weight(), b1->expand_conv().weight());
        copy_value(a1->expand_conv().bias(), b1->expand_conv().bias());
    }
    if (a2 && b2) {
        copy_value(a2->gate_conv().weight(), b2->gate_conv().weight());
        copy_value(a2->gate_conv().bias(), b2->gate_conv().bias());
        copy_value(a2->expand_conv().weight(), b2->expand_conv().weight());
        copy_value(a2->expand_conv().bias(), b2->expand_conv().bias());
    }
    copy_value(phi1_.weight(), other.phi1_.weight());
    copy_value(phi1_.bias(), other.phi1_.bias());
    copy_value(phi2_.weight(), other.phi2_.weight());
    copy_value(phi2_.bias(), other.phi2_.bias());
    copy_value(mix_logits_, other.mix_logits_);
}

Var direct_aggregate(const Var& decoder_ctx, const Var& texture) {
    require_same_shape(decoder_ctx->value, texture->value, "direct_aggregate");
    return ad::add(decoder_ctx, texture);
}

} // namespace reflexsplit
