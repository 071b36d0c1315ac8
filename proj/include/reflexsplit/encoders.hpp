#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "reflexsplit/config.hpp"
#include "reflexsplit/nn.hpp"
#include "reflexsplit/trace.hpp"

namespace reflexsplit {

enum class PyramidSource { kGlobal, kLocal, kDecoder };

struct FeaturePyramid {
    PyramidSource source = PyramidSource::kLocal;
    std::map<int, Var> levels;
};

struct DualStream {
    Var t;
    Var r;
};

void require_dual_shapes(const DualStream& s, const char* where);

// Shape law H_l = H / 2^l with the channel schedule; throws ShapeError on
// the first violating level.
void validate_pyramid(const FeaturePyramid& pyr, const ModelConfig& config, int image_h,
                      int image_w, const char* where);

// Cross-stream channel gating: each stream's 3x3 feature path is modulated
// by a sigmoid gate computed from the other stream, residual around the
// whole block.
class MutualGatedInteraction {
public:
    MutualGatedInteraction() = default;
    MutualGatedInteraction(ParamRegistry& reg, const std::string& name, int channels, Rng& rng,
                           bool trainable = true);
    DualStream forward(const DualStream& in) const;
    void symmetrize_streams() const; // copy t-side weights onto the r side
    Conv2d& feature_t() { return feat_t_; }
    Conv2d& feature_r() { return feat_r_; }
    Conv1x1& gate_for_t() { return gate_for_t_; }
    Conv1x1& gate_for_r() { return gate_for_r_; }

private:
    Conv2d feat_t_, feat_r_;
    Conv1x1 gate_for_t_, gate_for_r_;
};

// Local texture pyramid: stem conv to E_0, then (MuGI x2, strided 2x2 conv
// doubling channels) up to E_5, separate weights per stream.
class LocalFeatureEncoder {
public:
    LocalFeatureEncoder(ParamRegistry& reg, const ModelConfig& config, Rng& rng);
    // Pyramids with levels {0..5}; taps are the conv outputs.
    std::pair<FeaturePyramid, FeaturePyramid> forward(const Var& image,
                                                      ForwardTrace* trace = nullptr) const;
    void symmetrize_streams() const;

private:
    Conv2d stem_t_, stem_r_;
    std::vector<MutualGatedInteraction> mugi_; // 2 per level 0..4
    std::vector<Conv2d> down_t_, down_r_;      // levels 1..5
};

// Behavior contract for the global semantic pyramid (levels {2..5}).
class GlobalFeatureEncoder {
public:
    virtual ~GlobalFeatureEncoder() = default;
    virtual FeaturePyramid forward(const Var& image) const = 0;
};

// Strided-conv pyramid standing in for a pretrained transformer backbone.
class StubGlobalEncoder : public GlobalFeatureEncoder {
public:
    StubGlobalEncoder(ParamRegistry& reg, const ModelConfig& config, Rng& rng, bool trainable);
    FeaturePyramid forward(const Var& image) const override;

private:
    Conv2d stem_;
    std::vector<Conv2d> stages_;
};

// Adapter that re-validates the shape law on every forward; any plugged
// backbone violating it is rejected here.
class ShapeCheckedEncoder : public GlobalFeatureEncoder {
public:
    ShapeCheckedEncoder(std::unique_ptr<GlobalFeatureEncoder> inner, ModelConfig config);
    FeaturePyramid forward(const Var& image) const override;

private:
    std::unique_ptr<GlobalFeatureEncoder> inner_;
    ModelConfig config_;
};

using GlobalEncoderFactory = std::function<std::unique_ptr<GlobalFeatureEncoder>(
    ParamRegistry&, const ModelConfig&, Rng&)>;

// Name-keyed backend registry; "stub" is pre-registered. Config selects
// via gfeb.backend = stub | external:<name>.
void register_global_encoder(const std::string& name, GlobalEncoderFactory factory);
std::unique_ptr<GlobalFeatureEncoder> make_global_encoder(ParamRegistry& reg,
                                                          const ModelConfig& config, Rng& rng);

} // namespace reflexsplit
