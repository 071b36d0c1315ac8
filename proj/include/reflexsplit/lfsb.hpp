#pragma once

#include <limits>
#include <string>
#include <utility>

#include "reflexsplit/curriculum.hpp"
#include "reflexsplit/encoders.hpp"
#include "reflexsplit/nn.hpp"

namespace reflexsplit {

// Bidirectional cross-stream projection: t' = Wt [t || r], r' = Wr [r || t].
// Weights stored as {2C, C} so the map is a plain right-multiply.
struct EarlyFusion {
    EarlyFusion() = default;
    EarlyFusion(ParamRegistry& reg, const std::string& name, int channels, Rng& rng);
    DualStream forward(const DualStream& in) const;
    Var w_t, w_r;
};

// Windowed multi-head softmax attention over {B, N, C} token blocks.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParamRegistry& reg, const std::string& name, int channels, int heads,
                       Rng& rng);
    Var forward(const Var& tokens) const; // {B,N,C} -> {B,N,C}
    // Joint attention over the union of two equally-shaped token blocks;
    // every token attends across both. Block-symmetric by construction:
    // swapping the arguments swaps the outputs bit-exactly.
    std::pair<Var, Var> forward_pair(const Var& a_tokens, const Var& b_tokens) const;
    Linear& q() { return q_; }
    Linear& k() { return k_; }
    Linear& v() { return v_; }
    Linear& o() { return o_; }
    const Linear& q() const { return q_; }
    const Linear& k() const { return k_; }
    const Linear& v() const { return v_; }
    const Linear& o() const { return o_; }
    int heads() const { return heads_; }

private:
    Linear q_, k_, v_, o_;
    int heads_ = 1;
    int channels_ = 0;
};

// Four attended feature blocks of one dual-stream state.
struct DualAttention {
    Var t_sa, r_sa, t_ca, r_ca;
};

// Self-attention: the two streams are stacked along the batch axis, so
// each attends over its own N tokens with shared weights. Cross-attention:
// streams are concatenated along the token axis, so every token attends
// over the 2N tokens of both.
DualAttention dual_dimensional_attention(const Var& t_tokens, const Var& r_tokens,
                                         const MultiHeadAttention& sa,
                                         const MultiHeadAttention& ca);

// Spec-level op: s = sigmoid(lambda_eff), then
//   t_diff = (t_sa + t_ca) - s*(r_sa + r_ca) and symmetrically for r.
std::pair<Var, Var> differential_separation(const Var& t_sa, const Var& r_sa, const Var& t_ca,
                                            const Var& r_ca, double lambda_eff);

// Core of the above with the multiplier supplied as a scalar Var so the
// learnable-lambda path is differentiable.
std::pair<Var, Var> differential_mix(const Var& sum_t, const Var& sum_r, const Var& coefficient);

// Ablation switches; the full block enables everything.
struct LfsbOptions {
    bool early_fusion = true;
    bool self_attention = true;
    bool cross_attention = true;
    bool differential = true;
    bool late_ffn = true;
    // Swin-style learned relative position bias on the self-attention
    // scores; off by default (parity-experiment flag).
    bool position_bias = false;
    // NaN means "use lambda_init(depth)".
    double lambda_init_override = std::numeric_limits<double>::quiet_NaN();
};

class LayerFusionSeparationBlock {
public:
    LayerFusionSeparationBlock(ParamRegistry& reg, const std::string& name, int channels,
                               int depth, int heads, int window, Rng& rng,
                               const LfsbOptions& options = {});

    DualStream forward(const DualStream& in, const CurriculumState& curriculum) const;

    // Differential multiplier actually applied at the given curriculum
    // state (value of the Var used in forward).
    double coefficient_value(const CurriculumState& curriculum) const;

    Var raw_lambda() const { return raw_lambda_; }
    Var position_bias_table() const { return bias_table_; }
    int depth() const { return depth_; }
    void symmetrize_streams() const;

    EarlyFusion& early() { return early_; }
    MultiHeadAttention& sa() { return sa_; }
    MultiHeadAttention& ca() { return ca_; }
    FeedForward& ffn_t() { return ffn_t_; }
    FeedForward& ffn_r() { return ffn_r_; }

private:
    Var coefficient(const CurriculumState& curriculum) const;
    Var biased_self_attention(const Var& tokens) const;

    EarlyFusion early_;
    MultiHeadAttention sa_, ca_;
    FeedForward ffn_t_, ffn_r_;
    Var raw_lambda_;
    Var bias_table_;                 // {(2w-1)^2, heads} when position_bias
    std::vector<int> bias_indices_;  // token-pair -> table row
    int channels_ = 0, depth_ = 0, heads_ = 1, window_ = 1;
    double lambda_init_value_ = 0.0;
    LfsbOptions options_;
};

} // namespace reflexsplit
