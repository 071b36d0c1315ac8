#include "reflexsplit/ablate.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/train.hpp"

namespace reflexsplit {

std::vector<std::string> ablation_variants(const std::string& axis) {
    if (axis == "fusion") {
        return {"(a) No Fusion (Direct Aggregation)", "(b) Simple Concatenation",
                "(c) Element-wise Addition", "(d) CrGF (Ours)"};
    }
    if (axis == "lfsb") {
        return {"(a) Baseline",  "(b) + Early Fusion",  "(c) + SA",
                "(d) + SA + CA", "(e) + Diff Sep",      "(f) Full LFSB (Ours)"};
    }
    if (axis == "schedule") {
        return {"Fixed λ (=0.5)", "Warmup only", "Depth-init only", "Full strategy (Ours)"};
    }
    throw ConfigError("unknown ablation axis '" + axis + "' (expected fusion|lfsb|schedule)");
}

namespace {

struct VariantSetup {
    BuildOptions build;
    TrainOptions train;
};

VariantSetup variant_setup(const std::string& axis, int index) {
    VariantSetup v;
    if (axis == "fusion") {
        const FusionMode modes[] = {FusionMode::kDirect, FusionMode::kConcat, FusionMode::kAdd,
                                    FusionMode::kCrgf};
        v.build.fusion_mode = modes[index];
    } else if (axis == "lfsb") {
        LfsbOptions& o = v.build.lfsb;
        o.early_fusion = index >= 1;
        o.self_attention = index >= 2;
        o.cross_attention = index >= 3;
        o.differential = index >= 4;
        o.late_ffn = index == 0 || index >= 5; // (a) strips the whole block
        if (index == 0) {
            o.early_fusion = o.self_attention = o.cross_attention = o.differential = o.late_ffn =
                false;
        }
    } else if (axis == "schedule") {
        switch (index) {
            case 0: // fixed lambda
                v.build.lfsb.lambda_init_override = 0.5;
                v.train.lambda_diff_override = 1.0;
                break;
            case 1: // warmup only
                v.build.lfsb.lambda_init_override = 0.5;
                break;
            case 2: // depth-init only
                v.train.lambda_diff_override = 1.0;
                break;
            default: break; // full strategy
        }
    }
    return v;
}

} // namespace

std::vector<AblationRow> run_ablation(const ModelConfig& config, const std::string& axis,
                                      int epochs, int pairs_per_epoch, int eval_items) {
    const auto names = ablation_variants(axis);
    std::vector<AblationRow> rows;
    for (std::size_t vi = 0; vi < names.size(); ++vi) {
        AblationRow row;
        row.variant = names[vi];
        if (epochs <= 0) {
            rows.push_back(std::move(row));
            continue;
        }
        try {
            VariantSetup setup = variant_setup(axis, static_cast<int>(vi));
            ReflexSplitNet net(config, setup.build);

            Rng data_rng(Rng::mix(config.seed, 0xAB1A7E, vi));
            DataSources sources;
            for (int i = 0; i < 6; ++i) {
                ImagePair pair;
                pair.transmission =
                    procedural_image(config.image_size, config.image_size, data_rng);
                pair.reflection =
                    procedural_image(config.image_size, config.image_size, data_rng);
                sources.synthesis.push_back(std::move(pair));
            }
            EpochSampler sampler;
            sampler.pairs_per_epoch = pairs_per_epoch;
            sampler.ratio = {1.0, 0.0, 0.0};
            sampler.seed = Rng::mix(config.seed, 0xDA7A, vi);

            setup.train.epochs = epochs;
            setup.train.out_dir = (std::filesystem::temp_directory_path() /
                                   ("ablate_" + axis + "_" + std::to_string(vi)))
                                      .string();
            StubPerceptualExtractor stub(config.seed);
            const TrainResult tr = train(net, sources, sampler, setup.train, &stub);
            row.final_loss = tr.last_loss;

            std::vector<EvalItem> items;
            for (int i = 0; i < eval_items; ++i) {
                EvalItem item;
                item.id = "eval" + std::to_string(i);
                item.transmission =
                    procedural_image(config.image_size, config.image_size, data_rng);
                item.reflection =
                    procedural_image(config.image_size, config.image_size, data_rng);
                item.mixed = screen_blend(item.transmission, item.reflection,
                                          sample_coefficients(data_rng));
                items.push_back(std::move(item));
            }
            const EvalReport report =
                evaluate(net_separator(net), items, config.window_size, false);
            row.psnr = report.mean_psnr;
            row.ssim = report.mean_ssim;
        } catch (const std::exception& e) {
            row.failed = true;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void print_ablation_table(std::ostream& out, const std::string& axis,
                          const std::vector<AblationRow>& rows) {
    out << "ablation axis: " << axis << "\n";
    out << std::left << std::setw(38) << "variant" << std::right << std::setw(12) << "final_loss"
        << std::setw(10) << "psnr" << std::setw(10) << "ssim" << "\n";
    for (const auto& row : rows) {
        out << std::left << std::setw(38) << row.variant;
        if (row.failed) {
            out << "  FAILED: " << row.error << "\n";
            continue;
        }
        out << std::right << std::fixed << std::setprecision(4) << std::setw(12) << row.final_loss
            << std::setw(10) << std::setprecision(2) << row.psnr << std::setw(10)
            << std::setprecision(4) << row.ssim << "\n";
        out.unsetf(std::ios::fixed);
    }
}

} // namespace reflexsplit
