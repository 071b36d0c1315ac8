#include "reflexsplit/curriculum.hpp"

#include <cmath>
#include <ostream>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

double lambda_init(int level) {
    if (level < 0) throw ConfigError("lambda_init: negative level " + std::to_string(level));
    return 0.8 - 0.6 * std::exp(-0.3 * static_cast<double>(level));
}

double lambda_warmup(int epoch, int warmup) {
    if (epoch < 0) throw ConfigError("lambda_warmup: negative epoch");
    if (warmup < 1) throw ConfigError("lambda_warmup: warmup must be >= 1");
    if (epoch >= warmup) return 1.0;
    return 0.1 + 0.9 * static_cast<double>(epoch) / static_cast<double>(warmup);
}

double lambda_effective(int level, int epoch, int warmup) {
    return lambda_init(level) * lambda_warmup(epoch, warmup);
}

CurriculumState CurriculumState::at_epoch(const ModelConfig& config, int epoch) {
    CurriculumState s;
    s.epoch = epoch;
    s.warmup_epochs = config.warmup_epochs;
    s.lambda_diff = lambda_warmup(epoch, config.warmup_epochs);
    s.mode = config.lambda_mode;
    return s;
}

void dump_schedule_csv(std::ostream& out, int max_level, int max_epoch, int warmup) {
    out << "epoch,level,value\n";
    out.precision(12);
    for (int e = 0; e <= max_epoch; ++e) {
        for (int l = 0; l <= max_level; ++l) {
            out << e << ',' << l << ',' << lambda_effective(l, e, warmup) << '\n';
        }
    }
}

} // namespace reflexsplit
