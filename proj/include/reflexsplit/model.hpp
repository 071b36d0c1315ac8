#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "reflexsplit/curriculum.hpp"
#include "reflexsplit/encoders.hpp"
#include "reflexsplit/fusion.hpp"
#include "reflexsplit/lfsb.hpp"
#include "reflexsplit/trace.hpp"

namespace reflexsplit {

struct SeparationOutput {
    Var transmission; // T-hat, raw head output
    Var reflection;   // R-hat
    Var residue;      // RR-hat in (-1,1)
};

// Residue head: feature sum -> residual conv block with sin (or gelu)
// activation -> 3x3 conv -> tanh.
class ResidueModule {
public:
    ResidueModule(ParamRegistry& reg, const std::string& name, int channels, Rng& rng,
                  bool use_sin);
    Var forward(const Var& features) const;
    Conv2d& conv_a() { return a_; }
    Conv2d& conv_b() { return b_; }
    Conv2d& head() { return head_; }

private:
    Conv2d a_, b_, head_;
    bool use_sin_ = true;
};

enum class FusionMode { kCrgf, kDirect, kConcat, kAdd };

struct BuildOptions {
    FusionMode fusion_mode = FusionMode::kCrgf;
    LfsbOptions lfsb;
};

// Full dual-stream network: dual-branch encoders, feature mixing, the
// hierarchical decoder with gated fusion and fusion-separation stacks,
// output heads and the residue module.
class ReflexSplitNet {
public:
    explicit ReflexSplitNet(const ModelConfig& config) : ReflexSplitNet(config, BuildOptions{}) {}
    ReflexSplitNet(const ModelConfig& config, const BuildOptions& options);

    SeparationOutput forward(const Var& image, const CurriculumState& curriculum,
                             ForwardTrace* trace = nullptr, LevelTaps* taps = nullptr) const;

    const ModelConfig& config() const { return config_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    // Copies every t-side weight onto its r-side twin (test hook).
    void symmetrize_streams();

    std::vector<LayerFusionSeparationBlock>& stack_at(int level) {
        return stacks_[static_cast<std::size_t>(level)];
    }
    LayerFusionSeparationBlock& mixing_block_depth5() { return *mix5_; }
    LayerFusionSeparationBlock& mixing_block_depth4() { return *mix4_; }
    ResidueModule& residue_module() { return *lrm_; }

private:
    struct LevelRefiner {
        std::vector<MutualGatedInteraction> mugi;
        std::optional<Conv1x1> expand_t, expand_r;
    };
    struct LevelFusion {
        std::unique_ptr<CrossScaleGatedFusion> crgf_t, crgf_r;
        std::optional<Conv1x1> concat_t, concat_r;
    };

    DualStream fuse_level(int level, const DualStream& ctx, const Var& semantic,
                          const Var& texture_t, const Var& texture_r) const;

    ModelConfig config_;
    BuildOptions options_;
    ParamRegistry params_;

    std::unique_ptr<LocalFeatureEncoder> lfeb_;
    std::unique_ptr<GlobalFeatureEncoder> gfeb_;
    std::optional<Conv1x1> mix_expand_t_, mix_expand_r_;
    std::unique_ptr<LayerFusionSeparationBlock> mix5_, mix4_;
    std::vector<LevelFusion> fusion_;                          // levels 2..4, index level-2
    std::vector<std::vector<LayerFusionSeparationBlock>> stacks_; // per level 0..4
    std::vector<LevelRefiner> refiners_;                       // per level 0..4
    std::optional<Conv2d> head_t_, head_r_;
    std::unique_ptr<ResidueModule> lrm_;
};

// ---- checkpoints ----
// Versioned binary container: config snapshot, structural hash, epoch,
// data-stream seed, named parameter blobs, optional Adam moments.
struct AdamStateView {
    std::int64_t step = 0;
    std::vector<std::pair<const Tensor*, const Tensor*>> moments; // (m, v) per trainable param
};

struct CheckpointMeta {
    ModelConfig config;
    int epoch = 0;
    std::uint64_t structural_hash = 0;
};

void save_checkpoint(const std::string& path, const ReflexSplitNet& net, int epoch,
                     const AdamStateView* adam = nullptr);
CheckpointMeta read_checkpoint_meta(const std::string& path);
// Returns the stored epoch; adam_out (if given) must have matching layout.
int load_checkpoint(const std::string& path, ReflexSplitNet& net,
                    std::vector<std::pair<Tensor, Tensor>>* adam_moments = nullptr,
                    std::int64_t* adam_step = nullptr);

} // namespace reflexsplit
