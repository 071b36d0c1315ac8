#pragma once

#include <memory>
#include <string>

#include "reflexsplit/nn.hpp"

namespace reflexsplit {

// Gating strategy used inside the cross-scale fusion. The learned default
// selects one half of the channels; tests may plug the identity variant.
class ChannelGate {
public:
    virtual ~ChannelGate() = default;
    virtual Var apply(const Var& x) const = 0;
};

// Slice one channel half -> 1x1 conv -> sigmoid -> 1x1 conv back to full
// width, so the elementwise product downstream is shape-compatible.
class SplitGate : public ChannelGate {
public:
    SplitGate(ParamRegistry& reg, const std::string& name, int channels, bool first_half,
              Rng& rng);
    Var apply(const Var& x) const override;
    Conv1x1& gate_conv() { return gate_; }
    Conv1x1& expand_conv() { return expand_; }
    const Conv1x1& gate_conv() const { return gate_; }
    const Conv1x1& expand_conv() const { return expand_; }
    bool first_half() const { return first_half_; }

private:
    Conv1x1 gate_, expand_;
    int channels_ = 0;
    bool first_half_ = true;
};

class IdentityGate : public ChannelGate {
public:
    Var apply(const Var& x) const override { return x; }
};

// Bidirectional gated aggregation of decoder context, semantic prior and
// texture detail at one decoder level:
//   raw  = ctx + semantic + texture
//   main = G1(raw) . G2(ctx);  aux = G1(ctx) . G2(raw)
//   out  = w1 * phi1(main) + w2 * phi2(aux),  w = softmax(logits)
class CrossScaleGatedFusion {
public:
    CrossScaleGatedFusion(ParamRegistry& reg, const std::string& name, int channels, Rng& rng);

    Var forward(const Var& decoder_ctx, const Var& semantic, const Var& texture) const;

    // Test hooks: swap gating strategy / make projections exact identities.
    void use_identity_gates();
    void make_projections_identity() const;
    Var mix_logits() const { return mix_logits_; }
    void copy_from(const CrossScaleGatedFusion& other) const;

    const ChannelGate* gate1() const { return g1_.get(); }
    const ChannelGate* gate2() const { return g2_.get(); }
    const Conv1x1& phi1() const { return phi1_; }
    const Conv1x1& phi2() const { return phi2_; }

private:
    std::unique_ptr<ChannelGate> g1_, g2_;
    Conv1x1 phi1_, phi2_;
    Var mix_logits_;
    int channels_ = 0;
    std::string name_;
};

// Level {1,0} aggregation: plain elementwise sum.
Var direct_aggregate(const Var& decoder_ctx, const Var& texture);

} // namespace reflexsplit
