#include "reflexsplit/encoders.hpp"

#include "reflexsplit/common.hpp"

namespace reflexsplit {

void require_dual_shapes(const DualStream& s, const char* where) {
    require_same_shape(s.t->value, s.r->value, where);
}

void validate_pyramid(const FeaturePyramid& pyr, const ModelConfig& config, int image_h,
                      int image_w, const char* where) {
    const bool global = pyr.source == PyramidSource::kGlobal;
    const int lo = global ? 2 : 0;
    for (int level = lo; level <= 5; ++level) {
        const auto it = pyr.levels.find(level);
        if (it == pyr.levels.end()) {
            throw ShapeError(std::string(where) + ": missing pyramid level " +
                             std::to_string(level));
        }
        const Tensor& v = it->second->value;
        const int eh = image_h >> level, ew = image_w >> level;
        const int ec = channel_at(config, level);
        if (v.rank() != 3 || v.dim(0) != eh || v.dim(1) != ew || v.dim(2) != ec) {
            throw ShapeError(std::string(where) + ": level " + std::to_string(level) +
                             " violates the shape law, expected {" + std::to_string(eh) + "," +
                             std::to_string(ew) + "," + std::to_string(ec) + "}, got " +
                             v.shape_str());
        }
    }
    for (const auto& [level, _] : pyr.levels) {
        if (level < lo || level > 5) {
            throw ShapeError(std::string(where) + ": unexpected pyramid level " +
                             std::to_string(level));
        }
    }
}

MutualGatedInteraction::MutualGatedInteraction(ParamRegistry& reg, const std::string& name,
                                               int channels, Rng& rng, bool trainable)
    : feat_t_(reg, name + ".feat_t", 3, channels, channels, 1, 1, rng, true, trainable),
      feat_r_(reg, name + ".feat_r", 3, channels, channels, 1, 1, rng, true, trainable),
      gate_for_t_(reg, name + ".gate_t", channels, channels, rng, true, trainable),
      gate_for_r_(reg, name + ".gate_r", channels, channels, rng, true, trainable) {}

DualStream MutualGatedInteraction::forward(const DualStream& in) const {
    require_dual_shapes(in, "MutualGatedInteraction");
    const Var gate_t = ad::sigmoid(gate_for_t_.forward(in.r));
    const Var gate_r = ad::sigmoid(gate_for_r_.forward(in.t));
    const Var out_t = ad::add(in.t, ad::mul(feat_t_.forward(in.t), gate_t));
    const Var out_r = ad::add(in.r, ad::mul(feat_r_.forward(in.r), gate_r));
    return {out_t, out_r};
}

void MutualGatedInteraction::symmetrize_streams() const {
    copy_value(feat_r_.weight(), feat_t_.weight());
    copy_value(feat_r_.bias(), feat_t_.bias());
    copy_value(gate_for_r_.weight(), gate_for_t_.weight());
    copy_value(gate_for_r_.bias(), gate_for_t_.bias());
}

LocalFeatureEncoder::LocalFeatureEncoder(ParamRegistry& reg, const ModelConfig& config, Rng& rng)
    : stem_t_(reg, "lfeb.stem_t", 3, 3, channel_at(config, 0), 1, 1, rng),
      stem_r_(reg, "lfeb.stem_r", 3, 3, channel_at(config, 0), 1, 1, rng) {
    for (int level = 0; level <= 4; ++level) {
        const int c = channel_at(config, level);
        for (int k = 0; k < 2; ++k) {
            mugi_.emplace_back(reg,
                               "lfeb.l" + std::to_string(level) + ".mugi" + std::to_string(k), c,
                               rng);
        }
        down_t_.emplace_back(reg, "lfeb.l" + std::to_string(level + 1) + ".down_t", 2, c, 2 * c, 2,
                             0, rng);
        down_r_.emplace_back(reg, "lfeb.l" + std::to_string(level + 1) + ".down_r", 2, c, 2 * c, 2,
                             0, rng);
    }
}

std::pair<FeaturePyramid, FeaturePyramid> LocalFeatureEncoder::forward(const Var& image,
                                                                       ForwardTrace* trace) const {
    FeaturePyramid pt, pr;
    pt.source = PyramidSource::kLocal;
    pr.source = PyramidSource::kLocal;
    DualStream s{stem_t_.forward(image), stem_r_.forward(image)};
    pt.levels[0] = s.t;
    pr.levels[0] = s.r;
    if (trace) trace->record("lfeb.e0", s.t->value.shape());
    for (int level = 0; level <= 4; ++level) {
        s = mugi_[static_cast<std::size_t>(2 * level)].forward(s);
        s = mugi_[static_cast<std::size_t>(2 * level + 1)].forward(s);
        if (trace) trace->record("lfeb.l" + std::to_string(level) + ".mugi", s.t->value.shape());
        s = DualStream{down_t_[static_cast<std::size_t>(level)].forward(s.t),
                       down_r_[static_cast<std::size_t>(level)].forward(s.r)};
        pt.levels[level + 1] = s.t;
        pr.levels[level + 1] = s.r;
        if (trace) trace->record("lfeb.e" + std::to_string(level + 1), s.t->value.shape());
    }
    return {pt, pr};
}

void LocalFeatureEncoder::symmetrize_streams() const {
    copy_value(stem_r_.weight(), stem_t_.weight());
    copy_value(stem_r_.bias(), stem_t_.bias());
    for (const auto& m : mugi_) m.symmetrize_streams();
    for (std::size_t i = 0; i < down_t_.size(); ++i) {
        copy_value(down_r_[i].weight(), down_t_[i].weight());
        copy_value(down_r_[i].bias(), down_t_[i].bias());
    }
}

StubGlobalEncoder::StubGlobalEncoder(ParamRegistry& reg, const ModelConfig& config, Rng& rng,
                                     bool trainable)
    : stem_(reg, "gfeb.stem", 3, 3, channel_at(config, 1), 2, 1, rng, true, trainable) {
    for (int level = 2; level <= 5; ++level) {
        stages_.emplace_back(reg, "gfeb.stage" + std::to_string(level), 3,
                             channel_at(config, level - 1), channel_at(config, level), 2, 1, rng,
                             true, trainable);
    }
}

FeaturePyramid StubGlobalEncoder::forward(const Var& image) const {
    FeaturePyramid pyr;
    pyr.source = PyramidSource::kGlobal;
    Var x = ad::gelu(stem_.forward(image));
    for (int level = 2; level <= 5; ++level) {
        x = stages_[static_cast<std::size_t>(level - 2)].forward(x);
        pyr.levels[level] = x;
        if (level < 5) x = ad::gelu(x);
    }
    return pyr;
}

ShapeCheckedEncoder::ShapeCheckedEncoder(std::unique_ptr<GlobalFeatureEncoder> inner,
                                         ModelConfig config)
    : inner_(std::move(inner)), config_(std::move(config)) {}

FeaturePyramid ShapeCheckedEncoder::forward(const Var& image) const {
    FeaturePyramid pyr = inner_->forward(image);
    validate_pyramid(pyr, config_, image->value.dim(0), image->value.dim(1),
                     "global encoder adapter");
    return pyr;
}

namespace {

std::map<std::string, GlobalEncoderFactory>& encoder_registry() {
    static std::map<std::string, GlobalEncoderFactory> reg;
    return reg;
}

} // namespace

void register_global_encoder(const std::string& name, GlobalEncoderFactory factory) {
    encoder_registry()[name] = std::move(factory);
}

std::unique_ptr<GlobalFeatureEncoder> make_global_encoder(ParamRegistry& reg,
                                                          const ModelConfig& config, Rng& rng) {
    std::unique_ptr<GlobalFeatureEncoder> inner;
    if (config.gfeb_backend == "stub") {
        inner = std::make_unique<StubGlobalEncoder>(reg, config, rng, !config.gfeb_freeze);
    } else if (config.gfeb_backend.rfind("external:", 0) == 0) {
        const std::string name = config.gfeb_backend.substr(9);
        auto it = encoder_registry().find(name);
        if (it == encoder_registry().end()) {
            throw ConfigError("no registered global encoder backend named '" + name + "'");
        }
        inner = it->second(reg, config, rng);
    } else {
        throw ConfigError("gfeb.backend must be 'stub' or 'external:<name>', got '" +
                          config.gfeb_backend + "'");
    }
    return std::make_unique<ShapeCheckedEncoder>(std::move(inner), config);
}

} // namespace reflexsplit
