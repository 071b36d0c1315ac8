#pragma once

#include <utility>

#include "reflexsplit/tensor.hpp"

// Independent reference implementations, written as plain scalar loops
// over raw weight tensors. They never touch the autodiff engine or the
// layer classes, so equivalence checks against them exercise a genuinely
// separate code path.
namespace reflexsplit::oracle {

double screen_blend_pixel(double t, double r, double gamma1, double gamma2);

Tensor matmul(const Tensor& x, const Tensor& w);                 // {N,in}x{in,out}
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b);
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor* b);
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor* b); // zero pad 1

struct GateWeights {
    Tensor gate_w, gate_b;     // {C/2, C/2}, {C/2}
    Tensor expand_w, expand_b; // {C/2, C}, {C}
    bool first_half = true;
};

Tensor split_gate(const Tensor& x, const GateWeights& g);

struct CrgfWeights {
    GateWeights g1, g2;
    Tensor phi1_w, phi1_b, phi2_w, phi2_b;
    Tensor mix_logits; // {2}
};

Tensor crgf(const Tensor& ctx, const Tensor& semantic, const Tensor& texture,
            const CrgfWeights& w);

struct AttentionWeights {
    Tensor qw, qb, kw, kb, vw, vb, ow, ob;
    int heads = 1;
};

// Softmax attention over {N,C} tokens with straight loops.
Tensor attention_tokens(const Tensor& tokens, const AttentionWeights& w);

struct MugiWeights {
    Tensor feat_t_w, feat_t_b, feat_r_w, feat_r_b;   // 3x3
    Tensor gate_t_w, gate_t_b, gate_r_w, gate_r_b;   // 1x1, gate for t reads r
};

std::pair<Tensor, Tensor> mugi(const Tensor& t, const Tensor& r, const MugiWeights& w);

struct FfnWeights {
    Tensor up_w, up_b, down_w, down_b;
};

struct LfsbWeights {
    Tensor wt, wr; // {2C, C}
    AttentionWeights sa, ca;
    FfnWeights ffn_t, ffn_r;
    double coefficient = 0.5; // post-sigmoid multiplier
    int window = 1;
};

std::pair<Tensor, Tensor> early_fusion(const Tensor& t, const Tensor& r, const Tensor& wt,
                                       const Tensor& wr);

std::pair<Tensor, Tensor> lfsb(const Tensor& t, const Tensor& r, const LfsbWeights& w);

double exclusion(const Tensor& t, const Tensor& r);

} // namespace reflexsplit::oracle
