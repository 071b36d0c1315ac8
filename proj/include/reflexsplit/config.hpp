#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>

namespace reflexsplit {

enum class LambdaMode { kLearnable, kSchedule };

struct LossWeights {
    double rec = 1.0;
    double refl = 0.5;
    double vgg = 0.1;
    double exclu = 1.0;
    double recons = 0.2;
    double color = 0.1;
};

struct OptimizerSpec {
    double lr = 1e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int t_max = 10;          // cosine period, in epochs
    double eta_min = 8e-6;   // cosine floor
    int checkpoint_every = 10;
};

// Full run configuration. The channel schedule is derived, not stored:
// channel_at(l) = base_width * 2^l for l in [0,5]. Serialized as a flat
// key-value file; unknown keys are a hard error.
struct ModelConfig {
    int image_size = 96;
    int base_width = 8;
    int window_size = 12;
    bool window_padding = true;
    // Attention heads indexed by block depth 0..5.
    std::array<int, 6> heads{2, 2, 4, 8, 8, 8};
    // LFSB stack length per decoder level 0..4 (the two feature-mixing
    // blocks at depths 5 and 4 are structural and always present).
    std::array<int, 5> lfsb_depth{1, 1, 2, 2, 2};
    int warmup_epochs = 30;
    int total_epochs = 200;
    LambdaMode lambda_mode = LambdaMode::kLearnable;
    std::string gfeb_backend = "stub";
    bool gfeb_freeze = false;
    std::string sin_block_activation = "sin"; // or "gelu"
    bool position_bias = false;               // Swin-parity experiment flag

    LossWeights loss;
    double charbonnier_eps = 1e-6;

    OptimizerSpec opt;

    int pairs_per_epoch = 5000;
    double ratio_synthetic = 0.6;
    double ratio_real = 0.2;
    double ratio_nature = 0.2;
    bool augment = false;
    bool reflection_blur = false;

    std::uint64_t seed = 20240; // global determinism root

    static ModelConfig desk();
    static ModelConfig reference();
};

// Returns the config unchanged if every invariant holds; otherwise throws
// ConfigError naming the failing constraint (and level, where applicable).
ModelConfig validate_config(ModelConfig config);

int channel_at(const ModelConfig& config, int level);

// Channel count seen by an LFSB stack of the given depth index 0..5.
// Depth 5 runs after the stage-two pixel shuffle at a quarter of C_5.
int lfsb_channels(const ModelConfig& config, int depth);

ModelConfig load_config(const std::string& path);
ModelConfig parse_config(std::istream& in, const std::string& origin);
void write_config(const ModelConfig& config, std::ostream& out);
// "key=value" override, same key set as the config file.
void apply_override(ModelConfig& config, const std::string& assignment);

} // namespace reflexsplit
