#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "reflexsplit/config.hpp"

namespace reflexsplit {

struct AblationRow {
    std::string variant;
    bool failed = false;
    std::string error;
    double final_loss = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

// Row labels per axis, in table order.
std::vector<std::string> ablation_variants(const std::string& axis);

// Trains every variant of the axis at the given (desk-scale) config on
// procedurally blended data and evaluates on a small held-out set. A
// failing variant is recorded in its row; the table is still produced.
// epochs == 0 emits the structure only (no training).
std::vector<AblationRow> run_ablation(const ModelConfig& config, const std::string& axis,
                                      int epochs, int pairs_per_epoch, int eval_items);

void print_ablation_table(std::ostream& out, const std::string& axis,
                          const std::vector<AblationRow>& rows);

} // namespace reflexsplit
