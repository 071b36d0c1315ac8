#pragma once

#include <memory>
#include <vector>

#include "reflexsplit/config.hpp"
#include "reflexsplit/model.hpp"
#include "reflexsplit/nn.hpp"

namespace reflexsplit {

// Frozen feature extractor contract for the perceptual term. The desk
// implementation below is a fixed random-conv stack with five taps; a
// pretrained backbone adapter can be plugged through the same interface.
class PerceptualExtractor {
public:
    virtual ~PerceptualExtractor() = default;
    virtual std::vector<Var> features(const Var& image) const = 0;
    virtual int tap_count() const = 0;
};

class StubPerceptualExtractor : public PerceptualExtractor {
public:
    explicit StubPerceptualExtractor(std::uint64_t seed = 0x9E11);
    std::vector<Var> features(const Var& image) const override;
    int tap_count() const override { return 5; }

private:
    ParamRegistry params_; // frozen weights, never trained
    std::vector<Conv2d> convs_;
};

// All reductions are means over elements so the weights transfer across
// resolutions; color statistics are summed over the three channels.
Var charbonnier(const Var& pred, const Var& gt, double eps);
Var reflection_l1(const Var& pred, const Var& gt);
Var perceptual(const Var& pred, const Var& gt, const PerceptualExtractor& extractor);
Var exclusion(const Var& pred_t, const Var& pred_r); // 3 scales, 2x downsample between
Var reconstruction_consistency(const Var& pred_t, const Var& pred_r, const Var& pred_rr,
                               const Var& input);
Var color_consistency(const Var& pred_r, const Var& gt_r);

struct LossReport {
    double rec = 0, refl = 0, vgg = 0, exclu = 0, recons = 0, color = 0;
    double total = 0;
    bool vgg_skipped = false;
};

struct TotalLoss {
    Var total;
    LossReport report;
};

// Weighted objective. A missing extractor is fatal unless the vgg weight
// is zero, in which case the term reports 0 with a warning flag.
TotalLoss total_loss(const SeparationOutput& pred, const Var& gt_t, const Var& gt_r,
                     const Var& input, const LossWeights& weights,
                     const PerceptualExtractor* extractor, double charbonnier_eps);

} // namespace reflexsplit
