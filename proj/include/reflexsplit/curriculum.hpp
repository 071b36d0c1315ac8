#pragma once

#include <iosfwd>

#include "reflexsplit/config.hpp"

namespace reflexsplit {

// Depth-dependent initial separation strength: 0.8 - 0.6 * exp(-0.3 * level).
double lambda_init(int level);

// Epoch-wise warmup factor: 0.1 + 0.9 * e / warmup below the warmup
// horizon, 1.0 from then on.
double lambda_warmup(int epoch, int warmup);

// Product schedule lambda_level(e) = lambda_init(level) * lambda_warmup(e).
double lambda_effective(int level, int epoch, int warmup);

// Per-epoch snapshot handed to every separation block during a forward
// pass. In learnable mode the block multiplies sigma(raw_lambda) by
// lambda_diff; in schedule mode it uses sigma(lambda_effective) directly.
struct CurriculumState {
    int epoch = 0;
    int warmup_epochs = 30;
    double lambda_diff = 0.1;
    LambdaMode mode = LambdaMode::kLearnable;

    static CurriculumState at_epoch(const ModelConfig& config, int epoch);
};

// CSV rows (epoch, level, value) over the given ranges.
void dump_schedule_csv(std::ostream& out, int max_level, int max_epoch, int warmup);

} // namespace reflexsplit
