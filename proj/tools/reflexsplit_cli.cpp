#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "reflexsplit/ablate.hpp"
#include "reflexsplit/common.hpp"
#include "reflexsplit/curriculum.hpp"
#include "reflexsplit/image.hpp"
#include "reflexsplit/losses.hpp"
#include "reflexsplit/metrics.hpp"
#include "reflexsplit/model.hpp"
#include "reflexsplit/selfcheck.hpp"
#include "reflexsplit/svg.hpp"
#include "reflexsplit/synth.hpp"
#include "reflexsplit/train.hpp"

namespace fs = std::filesystem;
using namespace reflexsplit;

namespace {

// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool has_seed = false;
};

ModelConfig resolve_config(const CommonOpts& opts) {
    ModelConfig config = opts.config_path.empty() ? ModelConfig::desk()
                                                  : load_config(opts.config_path);
    for (const auto& kv : opts.overrides) apply_override(config, kv);
    if (opts.has_seed) config.seed = opts.seed;
    return validate_config(config);
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Configuration file (defaults to desk scale)");
    cmd->add_option("--set", opts.overrides, "Override a config key, key=value (repeatable)");
    cmd->add_option("--seed", opts.seed, "Override the config seed")
        ->each([&opts](const std::string&) { opts.has_seed = true; });
}

DataSources procedural_sources(const ModelConfig& config, int pair_count) {
    DataSources sources;
    Rng rng(Rng::mix(config.seed, 0x9D));
    for (int i = 0; i < pair_count; ++i) {
        ImagePair pair;
        pair.transmission = procedural_image(config.image_size, config.image_size, rng);
        pair.reflection = procedural_image(config.image_size, config.image_size, rng);
        sources.synthesis.push_back(std::move(pair));
    }
    return sources;
}

int cmd_synth(const CommonOpts& common, const std::string& out_dir, int count,
              const std::string& source_dir, bool procedural) {
    const ModelConfig config = resolve_config(common);
    fs::create_directories(out_dir);
    std::vector<ImagePair> pool;
    if (procedural) {
        Rng rng(Rng::mix(config.seed, 0x9D));
        for (int i = 0; i < std::max(count, 1); ++i) {
            ImagePair pair;
            pair.transmission = procedural_image(config.image_size, config.image_size, rng);
            pair.reflection = procedural_image(config.image_size, config.image_size, rng);
            pool.push_back(std::move(pair));
        }
    } else if (!source_dir.empty()) {
        pool = load_synthesis_manifest(source_dir);
        if (pool.empty()) throw DataError("source manifest lists no pairs: " + source_dir);
    } else if (count > 0) {
        throw ConfigError("synth: supply --source DIR or --procedural");
    }

    const std::string manifest_path = out_dir + "/triplets.tsv";
    std::ofstream manifest(manifest_path);
    if (!manifest) throw DataError("cannot write manifest: " + manifest_path);
    manifest << "# mixed\ttransmission\treflection\n";
    std::ofstream coeffs(out_dir + "/coefficients.tsv");
    coeffs << "# index\tgamma1\tgamma2\n";
    coeffs.precision(17);
    for (int i = 0; i < count; ++i) {
        Rng rng(Rng::mix(config.seed, 0x51, static_cast<std::uint64_t>(i)));
        const auto& pair =
            pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
        Tensor t = bilinear_resize(pair.transmission, config.image_size, config.image_size);
        Tensor r = bilinear_resize(pair.reflection, config.image_size, config.image_size);
        if (config.reflection_blur) r = gaussian_blur(r, rng.uniform(0.5, 2.0));
        const BlendCoefficients bc = sample_coefficients(rng);
        const Tensor mixed = screen_blend(t, r, bc);
        char name[64];
        std::snprintf(name, sizeof(name), "%05d", i);
        save_png(mixed, out_dir + "/I_" + name + ".png");
        save_png(t, out_dir + "/T_" + name + ".png");
        save_png(r, out_dir + "/R_" + name + ".png");
        manifest << "I_" << name << ".png\tT_" << name << ".png\tR_" << name << ".png\n";
        coeffs << i << '\t' << bc.gamma1 << '\t' << bc.gamma2 << '\n';
    }
    std::cout << "wrote " << count << " triplets to " << out_dir << "\n";
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& out_dir, int epochs,
              const std::string& synthetic_dir, const std::string& real_dir,
              const std::string& nature_dir, const std::string& val_dir, int procedural,
              int pairs_per_epoch) {
    const ModelConfig config = resolve_config(common);
    DataSources sources;
    EpochSampler sampler;
    sampler.seed = config.seed;
    sampler.pairs_per_epoch = pairs_per_epoch > 0 ? pairs_per_epoch : config.pairs_per_epoch;
    if (procedural > 0) {
        sources = procedural_sources(config, procedural);
        sampler.ratio = {1.0, 0.0, 0.0};
    } else {
        if (!synthetic_dir.empty()) sources.synthesis = load_synthesis_manifest(synthetic_dir);
        if (!real_dir.empty())
            sources.real = load_triplet_manifest(real_dir, TripletOrigin::kReal);
        if (!nature_dir.empty())
            sources.nature = load_triplet_manifest(nature_dir, TripletOrigin::kNature);
        sampler.ratio = {config.ratio_synthetic, config.ratio_real, config.ratio_nature};
    }

    ReflexSplitNet net(config);
    StubPerceptualExtractor extractor(config.seed);
    TrainOptions options;
    options.epochs = epochs > 0 ? epochs : config.total_epochs;
    options.out_dir = out_dir;
    options.log_to_stdout = true;
    if (!val_dir.empty()) {
        std::vector<std::string> errors;
        options.validation = load_eval_items(val_dir, &errors);
        for (const auto& e : errors) std::cerr << "validation skipped: " << e << "\n";
    }
    const TrainResult result = train(net, sources, sampler, options, &extractor);
    std::cout << "trained " << result.steps << " steps; first loss " << result.first_loss
              << ", last loss " << result.last_loss << "\n";
    std::cout << "log: " << result.log_path << "\n";
    for (const auto& c : result.checkpoints) std::cout << "checkpoint: " << c << "\n";
    if (!result.best_checkpoint.empty()) {
        std::cout << "best checkpoint: " << result.best_checkpoint << " (psnr " << result.best_psnr
                  << " dB)\n";
    }
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_csv, bool with_ncc, const std::string& pca_svg) {
    ModelConfig config;
    if (!checkpoint.empty()) {
        config = read_checkpoint_meta(checkpoint).config;
        for (const auto& kv : common.overrides) apply_override(config, kv);
        config = validate_config(config);
    } else {
        config = resolve_config(common);
    }
    ReflexSplitNet net(config);
    if (!checkpoint.empty()) load_checkpoint(checkpoint, net);

    std::vector<std::string> errors;
    const auto items = load_eval_items(data_dir, &errors);
    if (items.empty()) throw DataError("no evaluation triplets found in " + data_dir);
    EvalReport report = evaluate(net_separator(net), items, config.window_size, with_ncc);
    for (const auto& e : errors) report.errors.push_back(e);

    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw DataError("cannot write csv: " + out_csv);
        write_metrics_csv(report, out);
    } else {
        write_metrics_csv(report, std::cout);
    }
    std::cout << "mean psnr " << report.mean_psnr << " dB, mean ssim " << report.mean_ssim
              << " over " << report.rows.size() << " images\n";
    for (const auto& e : report.errors) std::cerr << "skipped: " << e << "\n";

    if (!pca_svg.empty()) {
        // Cumulative explained variance of window-pooled level-0 decoder
        // features across the evaluation set, per stream.
        std::vector<Tensor> samples_t, samples_r;
        const Separator sep = net_separator(net);
        for (const auto& item : items) {
            LevelTaps taps;
            sep(item, &taps);
            const auto it = taps.by_level.find(0);
            if (it == taps.by_level.end()) continue;
            Tensor pt = pool_window_mean(it->second.first, config.window_size);
            Tensor pr = pool_window_mean(it->second.second, config.window_size);
            samples_t.push_back(pt.alias({static_cast<int>(pt.size())}));
            samples_r.push_back(pr.alias({static_cast<int>(pr.size())}));
        }
        if (samples_t.size() >= 2) {
            const PcaCurve ct = pca_cumulative_variance(samples_t);
            const PcaCurve cr = pca_cumulative_variance(samples_r);
            SvgSeries st{"transmission", {}, {}}, sr{"reflection", {}, {}};
            for (std::size_t i = 0; i < ct.cumulative.size(); ++i) {
                st.x.push_back(static_cast<double>(i + 1));
                st.y.push_back(ct.cumulative[i]);
            }
            for (std::size_t i = 0; i < cr.cumulative.size(); ++i) {
                sr.x.push_back(static_cast<double>(i + 1));
                sr.y.push_back(cr.cumulative[i]);
            }
            write_svg_chart(pca_svg, "cumulative explained variance (level-0 features)", {st, sr});
            std::cout << "pca curve: " << pca_svg << " (95% at " << ct.components_for_95 << "/"
                      << cr.components_for_95 << " components)\n";
        } else {
            std::cerr << "pca curve skipped: need at least 2 evaluable items\n";
        }
    }
    return 0;
}

int cmd_ablate_run(const CommonOpts& common, const std::string& axis, int epochs,
                   int pairs_per_epoch, const std::string& out_path) {
    const ModelConfig config = resolve_config(common);
    const auto rows = run_ablation(config, axis, epochs, pairs_per_epoch, 4);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        if (!out) throw DataError("cannot write table: " + out_path);
        print_ablation_table(out, axis, rows);
    }
    print_ablation_table(std::cout, axis, rows);
    return 0;
}

int cmd_schedule_dump(const CommonOpts& common, const std::string& out_csv,
                      const std::string& out_svg, int epochs, int levels) {
    const ModelConfig config = resolve_config(common);
    const int max_epoch = epochs > 0 ? epochs : config.total_epochs;
    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out) throw DataError("cannot write csv: " + out_csv);
        dump_schedule_csv(out, levels, max_epoch, config.warmup_epochs);
    } else {
        dump_schedule_csv(std::cout, levels, max_epoch, config.warmup_epochs);
    }
    if (!out_svg.empty()) {
        std::vector<SvgSeries> series;
        for (int l = 0; l <= levels; ++l) {
            SvgSeries s;
            s.label = "level " + std::to_string(l);
            for (int e = 0; e <= max_epoch; ++e) {
                s.x.push_back(e);
                s.y.push_back(lambda_effective(l, e, config.warmup_epochs));
            }
            series.push_back(std::move(s));
        }
        write_svg_chart(out_svg, "differential strength schedule", series);
    }
    return 0;
}

int cmd_selfcheck_run(const std::string& inject_fault) {
    const auto results = run_selfcheck(inject_fault);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name;
        if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
        std::cout << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : kExitNumerical;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-stream reflection separation toolkit"};
    app.require_subcommand(1);

    CommonOpts synth_common, train_common, eval_common, ablate_common, sched_common;

    auto* synth = app.add_subcommand("synth", "Generate blended triplets + manifest");
    add_common(synth, synth_common);
    std::string synth_out = "synth_out", synth_source;
    int synth_count = 16;
    bool synth_procedural = false;
    synth->add_option("--out", synth_out, "Output directory");
    synth->add_option("--count", synth_count, "Number of triplets");
    synth->add_option("--source", synth_source, "Directory with a (T,R) pairs.tsv manifest");
    synth->add_flag("--procedural", synth_procedural, "Generate source images procedurally");

    auto* train_cmd = app.add_subcommand("train", "Train the separator");
    add_common(train_cmd, train_common);
    std::string train_out = "train_out", dir_syn, dir_real, dir_nat, dir_val;
    int train_epochs = 0, train_procedural = 0, train_pairs = 0;
    train_cmd->add_option("--out", train_out, "Output directory (checkpoints, log)");
    train_cmd->add_option("--epochs", train_epochs, "Epochs (default: config total_epochs)");
    train_cmd->add_option("--synthetic-dir", dir_syn, "Synthesis sources (pairs.tsv)");
    train_cmd->add_option("--real-dir", dir_real, "Real triplets (triplets.tsv)");
    train_cmd->add_option("--nature-dir", dir_nat, "Nature triplets (triplets.tsv)");
    train_cmd->add_option("--val-dir", dir_val, "Validation triplets for best-checkpoint tracking");
    train_cmd->add_option("--procedural", train_procedural,
                          "Use N procedural synthesis pairs instead of datasets");
    train_cmd->add_option("--pairs-per-epoch", train_pairs, "Samples per epoch");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate on a triplet directory");
    add_common(eval_cmd, eval_common);
    std::string eval_ckpt, eval_data, eval_csv, eval_pca;
    bool eval_ncc = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to load");
    eval_cmd->add_option("--data", eval_data, "Directory with triplets.tsv")->required();
    eval_cmd->add_option("--out", eval_csv, "Metrics CSV path (default: stdout)");
    eval_cmd->add_flag("--ncc", eval_ncc, "Report per-level inter-stream correlation");
    eval_cmd->add_option("--pca-svg", eval_pca, "Write cumulative-variance chart here");

    auto* ablate = app.add_subcommand("ablate", "Run an ablation axis");
    add_common(ablate, ablate_common);
    std::string ablate_axis, ablate_out;
    int ablate_epochs = 1, ablate_pairs = 4;
    ablate->add_option("--axis", ablate_axis, "fusion | lfsb | schedule")->required();
    ablate->add_option("--epochs", ablate_epochs,
                       "Training epochs per variant (0 = structure only)");
    ablate->add_option("--pairs-per-epoch", ablate_pairs, "Samples per epoch");
    ablate->add_option("--out", ablate_out, "Also write the table to this file");

    auto* sched = app.add_subcommand("schedule-dump", "Dump the separation-strength schedule");
    add_common(sched, sched_common);
    std::string sched_csv, sched_svg;
    int sched_epochs = 40, sched_levels = 5;
    sched->add_option("--out", sched_csv, "CSV path (default: stdout)");
    sched->add_option("--svg", sched_svg, "SVG chart path");
    sched->add_option("--epochs", sched_epochs, "Epoch range");
    sched->add_option("--levels", sched_levels, "Deepest level");

    auto* selfcheck = app.add_subcommand("selfcheck", "Run the built-in oracle/invariant suite");
    std::string fault;
    selfcheck->add_option("--inject-fault", fault,
                          "Deliberately break one named check (harness verification)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(synth_common, synth_out, synth_count, synth_source, synth_procedural);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train_common, train_out, train_epochs, dir_syn, dir_real, dir_nat,
                             dir_val, train_procedural, train_pairs);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_common, eval_ckpt, eval_data, eval_csv, eval_ncc, eval_pca);
        }
        if (ablate->parsed()) {
            return cmd_ablate_run(ablate_common, ablate_axis, ablate_epochs, ablate_pairs,
                                  ablate_out);
        }
        if (sched->parsed()) {
            return cmd_schedule_dump(sched_common, sched_csv, sched_svg, sched_epochs,
                                     sched_levels);
        }
        if (selfcheck->parsed()) {
            return cmd_selfcheck_run(fault);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitUsage;
}
