#include "reflexsplit/lfsb.hpp"

#include <cmath>
#include <tuple>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

EarlyFusion::EarlyFusion(ParamRegistry& reg, const std::string& name, int channels, Rng& rng) {
    w_t = reg.add(name + ".wt", xavier_uniform({2 * channels, channels}, 2 * channels, channels, rng));
    w_r = reg.add(name + ".wr", xavier_uniform({2 * channels, channels}, 2 * channels, channels, rng));
}

DualStream EarlyFusion::forward(const DualStream& in) const {
    require_dual_shapes(in, "early_fusion");
    const int h = in.t->value.dim(0), w = in.t->value.dim(1), c = in.t->value.dim(2);
    const Var t_flat = ad::reshape(in.t, {h * w, c});
    const Var r_flat = ad::reshape(in.r, {h * w, c});
    const Var tr = ad::concat({t_flat, r_flat}, 1);
    const Var rt = ad::concat({r_flat, t_flat}, 1);
    const Var t_out = ad::matmul(tr, w_t);
    const Var r_out = ad::matmul(rt, w_r);
    return {ad::reshape(t_out, {h, w, c}), ad::reshape(r_out, {h, w, c})};
}

MultiHeadAttention::MultiHeadAttention(ParamRegistry& reg, const std::string& name, int channels,
                                       int heads, Rng& rng)
    : q_(reg, name + ".q", channels, channels, rng),
      k_(reg, name + ".k", channels, channels, rng),
      v_(reg, name + ".v", channels, channels, rng),
      o_(reg, name + ".o", channels, channels, rng),
      heads_(heads),
      channels_(channels) {
    if (channels % heads != 0) {
        throw ShapeError("attention: heads " + std::to_string(heads) + " do not divide channels " +
                         std::to_string(channels));
    }
}

namespace {

// {B,N,C} -> {B*heads, N, d}
Var split_heads(const Var& tokens, int heads) {
    const int b = tokens->value.dim(0), n = tokens->value.dim(1), c = tokens->value.dim(2);
    const int d = c / heads;
    return ad::reshape(ad::permute(ad::reshape(tokens, {b, n, heads, d}), {0, 2, 1, 3}),
                       {b * heads, n, d});
}

Var merge_heads(const Var& ctx, int b, int heads) {
    const int n = ctx->value.dim(1), d = ctx->value.dim(2);
    return ad::reshape(ad::permute(ad::reshape(ctx, {b, heads, n, d}), {0, 2, 1, 3}),
                       {b * n, heads * d});
}

} // namespace

Var MultiHeadAttention::forward(const Var& tokens) const {
    if (tokens->value.rank() != 3 || tokens->value.dim(2) != channels_) {
        throw ShapeError("attention: expected {B,N," + std::to_string(channels_) + "}, got " +
                         tokens->value.shape_str());
    }
    const int b = tokens->value.dim(0), n = tokens->value.dim(1), c = tokens->value.dim(2);
    const int d = c / heads_;
    const Var flat = ad::reshape(tokens, {b * n, c});

    auto project = [&](const Linear& lin) {
        return split_heads(ad::reshape(lin.forward(flat), {b, n, c}), heads_);
    };
    const Var ctx = ad::attention(project(q_), project(k_), project(v_),
                                  1.0 / std::sqrt(static_cast<double>(d)));
    return ad::reshape(o_.forward(merge_heads(ctx, b, heads_)), {b, n, c});
}

std::pair<Var, Var> MultiHeadAttention::forward_pair(const Var& a_tokens,
                                                     const Var& b_tokens) const {
    require_same_shape(a_tokens->value, b_tokens->value, "attention pair");
    if (a_tokens->value.rank() != 3 || a_tokens->value.dim(2) != channels_) {
        throw ShapeError("attention pair: expected {B,N," + std::to_string(channels_) + "}, got " +
                         a_tokens->value.shape_str());
    }
    const int b = a_tokens->value.dim(0), n = a_tokens->value.dim(1), c = channels_;
    const int d = c / heads_;

    auto project = [&](const Linear& lin, const Var& tokens) {
        const Var flat = ad::reshape(tokens, {b * n, c});
        return split_heads(ad::reshape(lin.forward(flat), {b, n, c}), heads_);
    };
    // Each stream queries through its own identically-shaped call: the
    // two-block op is commutative in its key/value blocks, so swapping
    // the streams swaps the outputs bit-exactly.
    const Var qa = project(q_, a_tokens);
    const Var qb = project(q_, b_tokens);
    const Var ka = project(k_, a_tokens);
    const Var va = project(v_, a_tokens);
    const Var kb = project(k_, b_tokens);
    const Var vb = project(v_, b_tokens);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const Var ctx_a = ad::attention_two_block(qa, ka, va, kb, vb, scale);
    const Var ctx_b = ad::attention_two_block(qb, ka, va, kb, vb, scale);
    const Var out_a = ad::reshape(o_.forward(merge_heads(ctx_a, b, heads_)), {b, n, c});
    const Var out_b = ad::reshape(o_.forward(merge_heads(ctx_b, b, heads_)), {b, n, c});
    return {out_a, out_b};
}

DualAttention dual_dimensional_attention(const Var& t_tokens, const Var& r_tokens,
                                         const MultiHeadAttention& sa,
                                         const MultiHeadAttention& ca) {
    require_same_shape(t_tokens->value, r_tokens->value, "dual_dimensional_attention");
    const int b = t_tokens->value.dim(0), n = t_tokens->value.dim(1);

    DualAttention out;
    {
        const Var batched = ad::concat({t_tokens, r_tokens}, 0); // {2B, N, C}
        const Var attended = sa.forward(batched);
        out.t_sa = ad::slice(attended, 0, 0, b);
        out.r_sa = ad::slice(attended, 0, b, b);
    }
    {
        // token-axis join: every token attends across both streams
        std::tie(out.t_ca, out.r_ca) = ca.forward_pair(t_tokens, r_tokens);
        (void)n;
    }
    return out;
}

std::pair<Var, Var> differential_mix(const Var& sum_t, const Var& sum_r, const Var& coefficient) {
    require_same_shape(sum_t->value, sum_r->value, "differential_mix");
    const Var t_diff = ad::sub(sum_t, ad::mul_scalar_var(sum_r, coefficient));
    const Var r_diff = ad::sub(sum_r, ad::mul_scalar_var(sum_t, coefficient));
    return {t_diff, r_diff};
}

std::pair<Var, Var> differential_separation(const Var& t_sa, const Var& r_sa, const Var& t_ca,
                                            const Var& r_ca, double lambda_eff) {
    require_same_shape(t_sa->value, r_sa->value, "differential_separation");
    require_same_shape(t_sa->value, t_ca->value, "differential_separation");
    require_same_shape(t_sa->value, r_ca->value, "differential_separation");
    const double s = 1.0 / (1.0 + std::exp(-lambda_eff));
    const Var sum_t = ad::add(t_sa, t_ca);
    const Var sum_r = ad::add(r_sa, r_ca);
    return differential_mix(sum_t, sum_r, ad::constant(Tensor::full({1}, s)));
}

LayerFusionSeparationBlock::LayerFusionSeparationBlock(ParamRegistry& reg, const std::string& name,
                                                       int channels, int depth, int heads,
                                                       int window, Rng& rng,
                                                       const LfsbOptions& options)
    : early_(reg, name + ".early", channels, rng),
      sa_(reg, name + ".sa", channels, heads, rng),
      ca_(reg, name + ".ca", channels, heads, rng),
      ffn_t_(reg, name + ".ffn_t", channels, rng),
      ffn_r_(reg, name + ".ffn_r", channels, rng),
      channels_(channels),
      depth_(depth),
      heads_(heads),
      window_(window),
      options_(options) {
    lambda_init_value_ = std::isnan(options.lambda_init_override) ? lambda_init(depth)
                                                                  : options.lambda_init_override;
    // raw lambda lives in logit space so sigma(raw) starts at the
    // depth-scheduled value.
    const double p = lambda_init_value_;
    const double raw0 = std::log(p / (1.0 - p));
    raw_lambda_ = reg.add(name + ".raw_lambda", Tensor::full({1}, raw0));
    if (options.position_bias) {
        const int span = 2 * window - 1;
        bias_table_ = reg.add(name + ".pos_bias",
                              Tensor::uniform({span * span, heads}, -0.02, 0.02, rng));
        const int tokens = window * window;
        bias_indices_.reserve(static_cast<std::size_t>(tokens) * tokens);
        for (int i = 0; i < tokens; ++i) {
            const int yi = i / window, xi = i % window;
            for (int j = 0; j < tokens; ++j) {
                const int dy = yi - j / window + window - 1;
                const int dx = xi - j % window + window - 1;
                bias_indices_.push_back(dy * span + dx);
            }
        }
    }
}

// Unfused route used only with the position-bias flag: materializes the
// score tensor so the per-pair bias can be added before the softmax.
Var LayerFusionSeparationBlock::biased_self_attention(const Var& tokens) const {
    const int b = tokens->value.dim(0), n = tokens->value.dim(1), c = channels_;
    const int d = c / heads_;
    const Var flat = ad::reshape(tokens, {b * n, c});
    auto project = [&](const Linear& lin) {
        return ad::reshape(
            ad::permute(ad::reshape(ad::reshape(lin.forward(flat), {b, n, c}),
                                    {b, n, heads_, d}),
                        {0, 2, 1, 3}),
            {b * heads_, n, d});
    };
    const Var qh = project(sa_.q());
    const Var kh = project(sa_.k());
    const Var vh = project(sa_.v());
    Var scores = ad::scale(ad::bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(d)));
    const Var bias = ad::permute(
        ad::reshape(ad::gather_rows(bias_table_, bias_indices_), {n, n, heads_}), {2, 0, 1});
    std::vector<Var> copies(static_cast<std::size_t>(b), bias);
    scores = ad::add(scores, ad::concat(copies, 0));
    const Var ctx = ad::bmm(ad::softmax_last(scores), vh);
    const Var merged = ad::reshape(
        ad::permute(ad::reshape(ctx, {b, heads_, n, d}), {0, 2, 1, 3}), {b * n, c});
    return ad::reshape(sa_.o().forward(merged), {b, n, c});
}

Var LayerFusionSeparationBlock::coefficient(const CurriculumState& curriculum) const {
    if (curriculum.mode == LambdaMode::kLearnable) {
        return ad::scale(ad::sigmoid(raw_lambda_), curriculum.lambda_diff);
    }
    const double scheduled = lambda_init_value_ * curriculum.lambda_diff;
    const double s = 1.0 / (1.0 + std::exp(-scheduled));
    return ad::constant(Tensor::full({1}, s));
}

double LayerFusionSeparationBlock::coefficient_value(const CurriculumState& curriculum) const {
    ad::NoGrad ng;
    return coefficient(curriculum)->value[0];
}

DualStream LayerFusionSeparationBlock::forward(const DualStream& in,
                                               const CurriculumState& curriculum) const {
    require_dual_shapes(in, "lfsb_forward");
    const bool any_attention = options_.self_attention || options_.cross_attention;
    if (!options_.early_fusion && !any_attention && !options_.differential && !options_.late_ffn) {
        return in;
    }
    const int h = in.t->value.dim(0), w = in.t->value.dim(1), c = in.t->value.dim(2);

    DualStream fused = options_.early_fusion ? early_.forward(in) : in;

    Var t_tok = ad::window_partition(fused.t, window_);
    Var r_tok = ad::window_partition(fused.r, window_);

    Var sum_t, sum_r;
    if (options_.self_attention && options_.cross_attention && !options_.position_bias) {
        const DualAttention a = dual_dimensional_attention(t_tok, r_tok, sa_, ca_);
        sum_t = ad::add(a.t_sa, a.t_ca);
        sum_r = ad::add(a.r_sa, a.r_ca);
    } else if (options_.self_attention && options_.cross_attention) {
        const int b = t_tok->value.dim(0);
        const Var attended = biased_self_attention(ad::concat({t_tok, r_tok}, 0));
        const auto [t_ca, r_ca] = ca_.forward_pair(t_tok, r_tok);
        sum_t = ad::add(ad::slice(attended, 0, 0, b), t_ca);
        sum_r = ad::add(ad::slice(attended, 0, b, b), r_ca);
    } else if (options_.self_attention) {
        const int b = t_tok->value.dim(0);
        const Var attended = options_.position_bias
                                 ? biased_self_attention(ad::concat({t_tok, r_tok}, 0))
                                 : sa_.forward(ad::concat({t_tok, r_tok}, 0));
        sum_t = ad::slice(attended, 0, 0, b);
        sum_r = ad::slice(attended, 0, b, b);
    } else if (options_.cross_attention) {
        std::tie(sum_t, sum_r) = ca_.forward_pair(t_tok, r_tok);
    } else {
        sum_t = t_tok;
        sum_r = r_tok;
    }

    if (options_.differential) {
        const Var coeff = coefficient(curriculum);
        std::tie(sum_t, sum_r) = differential_mix(sum_t, sum_r, coeff);
    }

    Var map_t = ad::window_reverse(sum_t, h, w, window_);
    Var map_r = ad::window_reverse(sum_r, h, w, window_);

    if (options_.late_ffn) {
        map_t = ad::reshape(ffn_t_.forward(ad::reshape(map_t, {h * w, c})), {h, w, c});
        map_r = ad::reshape(ffn_r_.forward(ad::reshape(map_r, {h * w, c})), {h, w, c});
    }
    return {ad::add(in.t, map_t), ad::add(in.r, map_r)};
}

void LayerFusionSeparationBlock::symmetrize_streams() const {
    copy_value(early_.w_r, early_.w_t);
    copy_value(ffn_r_.up().weight(), ffn_t_.up().weight());
    copy_value(ffn_r_.up().bias(), ffn_t_.up().bias());
    copy_value(ffn_r_.down().weight(), ffn_t_.down().weight());
    copy_value(ffn_r_.down().bias(), ffn_t_.down().bias());
}

} // namespace reflexsplit
