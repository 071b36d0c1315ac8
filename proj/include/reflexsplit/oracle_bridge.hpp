#pragma once

#include "reflexsplit/fusion.hpp"
#include "reflexsplit/lfsb.hpp"
#include "reflexsplit/oracles.hpp"

// Weight extraction glue: copies module parameters into the plain-tensor
// structs the straight-line oracles consume. Reading weights keeps the
// oracle compute path independent of the layer implementations.
namespace reflexsplit::oracle {

inline GateWeights extract_gate(const SplitGate& g) {
    GateWeights w;
    w.gate_w = g.gate_conv().weight()->value;
    w.gate_b = g.gate_conv().bias()->value;
    w.expand_w = g.expand_conv().weight()->value;
    w.expand_b = g.expand_conv().bias()->value;
    w.first_half = g.first_half();
    return w;
}

inline CrgfWeights extract_crgf(const CrossScaleGatedFusion& f) {
    CrgfWeights w;
    const auto* g1 = dynamic_cast<const SplitGate*>(f.gate1());
    const auto* g2 = dynamic_cast<const SplitGate*>(f.gate2());
    if (!g1 || !g2) throw std::logic_error("extract_crgf: expected split gates");
    w.g1 = extract_gate(*g1);
    w.g2 = extract_gate(*g2);
    w.phi1_w = f.phi1().weight()->value;
    w.phi1_b = f.phi1().bias()->value;
    w.phi2_w = f.phi2().weight()->value;
    w.phi2_b = f.phi2().bias()->value;
    w.mix_logits = f.mix_logits()->value;
    return w;
}

inline AttentionWeights extract_attention(const MultiHeadAttention& a) {
    AttentionWeights w;
    w.qw = a.q().weight()->value;
    w.qb = a.q().bias()->value;
    w.kw = a.k().weight()->value;
    w.kb = a.k().bias()->value;
    w.vw = a.v().weight()->value;
    w.vb = a.v().bias()->value;
    w.ow = a.o().weight()->value;
    w.ob = a.o().bias()->value;
    w.heads = a.heads();
    return w;
}

inline FfnWeights extract_ffn(const FeedForward& f) {
    FfnWeights w;
    w.up_w = f.up().weight()->value;
    w.up_b = f.up().bias()->value;
    w.down_w = f.down().weight()->value;
    w.down_b = f.down().bias()->value;
    return w;
}

inline LfsbWeights extract_lfsb(LayerFusionSeparationBlock& block, int window,
                                const CurriculumState& curriculum) {
    LfsbWeights w;
    w.wt = block.early().w_t->value;
    w.wr = block.early().w_r->value;
    w.sa = extract_attention(block.sa());
    w.ca = extract_attention(block.ca());
    w.ffn_t = extract_ffn(block.ffn_t());
    w.ffn_r = extract_ffn(block.ffn_r());
    w.coefficient = block.coefficient_value(curriculum);
    w.window = window;
    return w;
}

inline MugiWeights extract_mugi(MutualGatedInteraction& m) {
    MugiWeights w;
    w.feat_t_w = m.feature_t().weight()->value;
    w.feat_t_b = m.feature_t().bias()->value;
    w.feat_r_w = m.feature_r().weight()->value;
    w.feat_r_b = m.feature_r().bias()->value;
    w.gate_t_w = m.gate_for_t().weight()->value;
    w.gate_t_b = m.gate_for_t().bias()->value;
    w.gate_r_w = m.gate_for_r().weight()->value;
    w.gate_r_b = m.gate_for_r().bias()->value;
    return w;
}

} // namespace reflexsplit::oracle
