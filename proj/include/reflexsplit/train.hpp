#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reflexsplit/losses.hpp"
#include "reflexsplit/metrics.hpp"
#include "reflexsplit/model.hpp"
#include "reflexsplit/synth.hpp"

namespace reflexsplit {

// First-order adaptive optimizer over the trainable registry entries.
class Adam {
public:
    Adam(ParamRegistry& registry, const OptimizerSpec& spec);
    void step(double lr);
    void zero_grad();
    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t s) { step_ = s; }
    AdamStateView state_view() const;
    std::vector<std::pair<Tensor, Tensor>>& moments() { return moments_; }
    const std::vector<Var>& trainable() const { return trainable_; }

private:
    std::vector<Var> trainable_;
    std::vector<std::pair<Tensor, Tensor>> moments_; // (m, v)
    OptimizerSpec spec_;
    std::int64_t step_ = 0;
};

// Closed-form cosine with period t_max epochs: lr_max at each period
// start, eta_min at the half-period trough.
double cosine_lr(int epoch, double lr_max, double eta_min, int t_max);

struct EvalItem {
    std::string id;
    Tensor mixed, transmission, reflection;
};

struct TrainOptions {
    int epochs = 2;
    std::string out_dir;           // checkpoints + log live here
    bool log_to_stdout = false;
    std::optional<double> lambda_diff_override; // pins the warmup factor for every epoch
    // When non-empty: evaluated each epoch, best mean PSNR checkpointed.
    std::vector<EvalItem> validation;
};

struct TrainResult {
    std::vector<std::string> checkpoints;
    std::string last_checkpoint;
    std::string best_checkpoint; // only with a validation set
    double best_psnr = 0.0;
    std::string log_path;
    double first_loss = 0.0;
    double last_loss = 0.0;
    int steps = 0;
};

// Per the training algorithm: every epoch rebuilds its sample list, runs
// batch-size-1 steps with the epoch's curriculum factor applied to every
// separation block, then advances the cosine schedule. A NaN loss aborts
// with a NumericalError naming the last good checkpoint.
TrainResult train(ReflexSplitNet& net, const DataSources& sources, const EpochSampler& sampler,
                  const TrainOptions& options, const PerceptualExtractor* extractor);

// ---- evaluation ----
struct EvalRow {
    std::string id;
    PsnrResult psnr;
    double ssim = 0.0;
    std::vector<double> ncc_by_level; // levels 0..4; NaN when unavailable
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::string> errors; // unreadable inputs, listed not fatal
    double mean_psnr = 0.0;          // over finite entries
    double mean_ssim = 0.0;
};

using Separator = std::function<SeparationOutput(const EvalItem&, LevelTaps*)>;

// Wraps a trained net as a Separator (no-grad forward at config size).
Separator net_separator(const ReflexSplitNet& net);

EvalReport evaluate(const Separator& model, const std::vector<EvalItem>& items, int window_size,
                    bool collect_ncc);
std::vector<EvalItem> load_eval_items(const std::string& dir, std::vector<std::string>* errors,
                                      int resize_to = 0);
void write_metrics_csv(const EvalReport& report, std::ostream& out);
EvalReport parse_metrics_csv(std::istream& in);

} // namespace reflexsplit
