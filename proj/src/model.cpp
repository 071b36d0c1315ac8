#include "reflexsplit/model.hpp"

#include <cmath>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

ResidueModule::ResidueModule(ParamRegistry& reg, const std::string& name, int channels, Rng& rng,
                             bool use_sin)
    : a_(reg, name + ".a", 3, channels, channels, 1, 1, rng),
      b_(reg, name + ".b", 3, channels, channels, 1, 1, rng),
      head_(reg, name + ".head", 3, channels, 3, 1, 1, rng),
      use_sin_(use_sin) {}

Var ResidueModule::forward(const Var& features) const {
    const Var inner = a_.forward(features);
    const Var activated = use_sin_ ? ad::sin_act(inner) : ad::gelu(inner);
    const Var block = ad::add(features, b_.forward(activated));
    return ad::tanh_act(head_.forward(block));
}

ReflexSplitNet::ReflexSplitNet(const ModelConfig& config, const BuildOptions& options)
    : config_(validate_config(config)), options_(options) {
    options_.lfsb.position_bias = options.lfsb.position_bias || config_.position_bias;
    Rng rng(config_.seed);

    lfeb_ = std::make_unique<LocalFeatureEncoder>(params_, config_, rng);
    gfeb_ = make_global_encoder(params_, config_, rng);

    const int mix_c = lfsb_channels(config_, 5);
    mix5_ = std::make_unique<LayerFusionSeparationBlock>(
        params_, "mix.lfsb5", mix_c, 5, config_.heads[5], config_.window_size, rng,
        options_.lfsb);
    mix_expand_t_.emplace(params_, "mix.expand_t", mix_c, channel_at(config_, 4), rng);
    mix_expand_r_.emplace(params_, "mix.expand_r", mix_c, channel_at(config_, 4), rng);
    mix4_ = std::make_unique<LayerFusionSeparationBlock>(
        params_, "mix.lfsb4", channel_at(config_, 4), 4, config_.heads[4], config_.window_size,
        rng, options_.lfsb);

    stacks_.resize(5);
    refiners_.resize(5);
    fusion_.resize(3);
    for (int level = 4; level >= 0; --level) {
        const int c = channel_at(config_, level);
        const std::string prefix = "dec" + std::to_string(level);
        if (level >= 2) {
            LevelFusion& f = fusion_[static_cast<std::size_t>(level - 2)];
            if (options_.fusion_mode == FusionMode::kCrgf) {
                f.crgf_t = std::make_unique<CrossScaleGatedFusion>(params_, prefix + ".crgf_t", c,
                                                                   rng);
                f.crgf_r = std::make_unique<CrossScaleGatedFusion>(params_, prefix + ".crgf_r", c,
                                                                   rng);
            } else if (options_.fusion_mode == FusionMode::kConcat) {
                f.concat_t.emplace(params_, prefix + ".concat_t", 3 * c, c, rng);
                f.concat_r.emplace(params_, prefix + ".concat_r", 3 * c, c, rng);
            }
        }
        auto& stack = stacks_[static_cast<std::size_t>(level)];
        const int depth_count = config_.lfsb_depth[static_cast<std::size_t>(level)];
        stack.reserve(static_cast<std::size_t>(depth_count));
        for (int k = 0; k < depth_count; ++k) {
            stack.emplace_back(params_, prefix + ".lfsb" + std::to_string(k), c, level,
                               config_.heads[static_cast<std::size_t>(level)],
                               config_.window_size, rng, options_.lfsb);
        }
        LevelRefiner& ref = refiners_[static_cast<std::size_t>(level)];
        const int rc = level >= 1 ? c / 4 : c;
        for (int k = 0; k < 2; ++k) {
            ref.mugi.emplace_back(params_, prefix + ".mugi" + std::to_string(k), rc, rng);
        }
        if (level >= 1) {
            ref.expand_t.emplace(params_, prefix + ".expand_t", rc, channel_at(config_, level - 1),
                                 rng);
            ref.expand_r.emplace(params_, prefix + ".expand_r", rc, channel_at(config_, level - 1),
                                 rng);
        }
    }
    head_t_.emplace(params_, "head.t", 3, channel_at(config_, 0), 3, 1, 1, rng);
    head_r_.emplace(params_, "head.r", 3, channel_at(config_, 0), 3, 1, 1, rng);
    lrm_ = std::make_unique<ResidueModule>(params_, "lrm", channel_at(config_, 0), rng,
                                           config_.sin_block_activation == "sin");
}

DualStream ReflexSplitNet::fuse_level(int level, const DualStream& ctx, const Var& semantic,
                                      const Var& texture_t, const Var& texture_r) const {
    const LevelFusion& f = fusion_[static_cast<std::size_t>(level - 2)];
    switch (options_.fusion_mode) {
        case FusionMode::kCrgf:
            return {f.crgf_t->forward(ctx.t, semantic, texture_t),
                    f.crgf_r->forward(ctx.r, semantic, texture_r)};
        case FusionMode::kDirect:
            return {direct_aggregate(ctx.t, texture_t), direct_aggregate(ctx.r, texture_r)};
        case FusionMode::kAdd:
            return {ad::add(ad::add(ctx.t, semantic), texture_t),
                    ad::add(ad::add(ctx.r, semantic), texture_r)};
        case FusionMode::kConcat:
            return {f.concat_t->forward(ad::concat({ctx.t, semantic, texture_t}, 2)),
                    f.concat_r->forward(ad::concat({ctx.r, semantic, texture_r}, 2))};
    }
    throw ConfigError("unknown fusion mode");
}

SeparationOutput ReflexSplitNet::forward(const Var& image, const CurriculumState& curriculum,
                                         ForwardTrace* trace, LevelTaps* taps) const {
    if (image->value.rank() != 3 || image->value.dim(2) != 3 ||
        image->value.dim(0) != config_.image_size || image->value.dim(1) != config_.image_size) {
        throw ShapeError("forward: expected {" + std::to_string(config_.image_size) + "," +
                         std::to_string(config_.image_size) + ",3} input, got " +
                         image->value.shape_str());
    }

    auto [et, er] = lfeb_->forward(image, trace);
    const FeaturePyramid priors = gfeb_->forward(image);
    if (trace) {
        for (int level = 2; level <= 5; ++level) {
            trace->record("gfeb.p" + std::to_string(level),
                          priors.levels.at(level)->value.shape());
        }
    }

    // Feature mixing: level-5 seed is the texture tap plus the shared
    // semantic prior, lifted to the level-4 grid.
    const Var& p5 = priors.levels.at(5);
    DualStream s{ad::pixel_shuffle(ad::add(et.levels.at(5), p5), 2),
                 ad::pixel_shuffle(ad::add(er.levels.at(5), p5), 2)};
    if (trace) trace->record("stage2.shuffle", s.t->value.shape());
    s = mix5_->forward(s, curriculum);
    if (trace) trace->record("stage2.lfsb5", s.t->value.shape());
    s = {mix_expand_t_->forward(s.t), mix_expand_r_->forward(s.r)};
    if (trace) trace->record("stage2.expand", s.t->value.shape());
    s = mix4_->forward(s, curriculum);
    if (trace) trace->record("stage2.lfsb4", s.t->value.shape());

    for (int level = 4; level >= 0; --level) {
        const std::string prefix = "dec" + std::to_string(level);
        if (level >= 2) {
            s = fuse_level(level, s, priors.levels.at(level), et.levels.at(level),
                           er.levels.at(level));
            if (trace) trace->record(prefix + ".fuse", s.t->value.shape());
        } else {
            s = {direct_aggregate(s.t, et.levels.at(level)),
                 direct_aggregate(s.r, er.levels.at(level))};
            if (trace) trace->record(prefix + ".agg", s.t->value.shape());
        }
        for (const auto& block : stacks_[static_cast<std::size_t>(level)]) {
            s = block.forward(s, curriculum);
        }
        if (trace) trace->record(prefix + ".lfsb", s.t->value.shape());
        if (taps) taps->by_level[level] = {s.t->value, s.r->value};

        const LevelRefiner& ref = refiners_[static_cast<std::size_t>(level)];
        if (level >= 1) {
            s = {ad::pixel_shuffle(s.t, 2), ad::pixel_shuffle(s.r, 2)};
            if (trace) trace->record(prefix + ".shuffle", s.t->value.shape());
        }
        s = ref.mugi[0].forward(s);
        s = ref.mugi[1].forward(s);
        if (trace) trace->record(prefix + ".mugi", s.t->value.shape());
        if (level >= 1) {
            s = {ref.expand_t->forward(s.t), ref.expand_r->forward(s.r)};
            if (trace) trace->record(prefix + ".expand", s.t->value.shape());
        }
    }

    SeparationOutput out;
    out.transmission = head_t_->forward(s.t);
    out.reflection = head_r_->forward(s.r);
    out.residue = lrm_->forward(ad::add(s.t, s.r));
    if (trace) {
        trace->record("head.t", out.transmission->value.shape());
        trace->record("head.r", out.reflection->value.shape());
        trace->record("lrm.rr", out.residue->value.shape());
    }
    return out;
}

void ReflexSplitNet::symmetrize_streams() {
    lfeb_->symmetrize_streams();
    mix5_->symmetrize_streams();
    mix4_->symmetrize_streams();
    copy_value(mix_expand_r_->weight(), mix_expand_t_->weight());
    copy_value(mix_expand_r_->bias(), mix_expand_t_->bias());
    for (auto& f : fusion_) {
        if (f.crgf_t && f.crgf_r) f.crgf_r->copy_from(*f.crgf_t);
        if (f.concat_t && f.concat_r) {
            copy_value(f.concat_r->weight(), f.concat_t->weight());
            copy_value(f.concat_r->bias(), f.concat_t->bias());
        }
    }
    for (auto& stack : stacks_) {
        for (auto& block : stack) block.symmetrize_streams();
    }
    for (auto& ref : refiners_) {
        for (auto& m : ref.mugi) m.symmetrize_streams();
        if (ref.expand_t && ref.expand_r) {
            copy_value(ref.expand_r->weight(), ref.expand_t->weight());
            copy_value(ref.expand_r->bias(), ref.expand_t->bias());
        }
    }
    copy_value(head_r_->weight(), head_t_->weight());
    copy_value(head_r_->bias(), head_t_->bias());
}

} // namespace reflexsplit
