#include "reflexsplit/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/image.hpp"

namespace reflexsplit {

Adam::Adam(ParamRegistry& registry, const OptimizerSpec& spec) : spec_(spec) {
    for (const auto& p : registry.items()) {
        if (!p.trainable) continue;
        trainable_.push_back(p.var);
        moments_.emplace_back(Tensor(p.var->value.shape()), Tensor(p.var->value.shape()));
    }
}

void Adam::step(double lr) {
    ++step_;
    const double b1 = spec_.beta1, b2 = spec_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
        Var& p = trainable_[i];
        if (!p->grad_ready) continue;
        Tensor& m = moments_[i].first;
        Tensor& v = moments_[i].second;
        const std::int64_t n = p->value.size();
        for (std::int64_t j = 0; j < n; ++j) {
            double g = p->grad[j];
            if (spec_.weight_decay != 0.0) g += spec_.weight_decay * p->value[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p->value[j] -= lr * mhat / (std::sqrt(vhat) + spec_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (const auto& p : trainable_) ad::clear_grad(p);
}

AdamStateView Adam::state_view() const {
    AdamStateView view;
    view.step = step_;
    for (const auto& [m, v] : moments_) view.moments.emplace_back(&m, &v);
    return view;
}

double cosine_lr(int epoch, double lr_max, double eta_min, int t_max) {
    const int phase = ((epoch % t_max) + t_max) % t_max;
    const double frac = static_cast<double>(phase) / static_cast<double>(t_max);
    return eta_min + (lr_max - eta_min) * 0.5 * (1.0 + std::cos(2.0 * M_PI * frac));
}

TrainResult train(ReflexSplitNet& net, const DataSources& sources, const EpochSampler& sampler,
                  const TrainOptions& options, const PerceptualExtractor* extractor) {
    const ModelConfig& config = net.config();
    std::filesystem::create_directories(options.out_dir);
    TrainResult result;
    result.log_path = options.out_dir + "/train_log.jsonl";
    std::ofstream log(result.log_path);
    if (!log) throw DataError("cannot open training log: " + result.log_path);

    Adam adam(net.params(), config.opt);
    SynthOptions synth_opts;
    synth_opts.image_size = config.image_size;
    synth_opts.augment = config.augment;
    synth_opts.reflection_blur = config.reflection_blur;

    int global_step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        CurriculumState curriculum = CurriculumState::at_epoch(config, epoch);
        if (options.lambda_diff_override) {
            curriculum.lambda_diff = *options.lambda_diff_override;
        }
        const double lr = cosine_lr(epoch, config.opt.lr, config.opt.eta_min, config.opt.t_max);

        EpochSampler epoch_sampler = sampler;
        epoch_sampler.seed = Rng::mix(sampler.seed, static_cast<std::uint64_t>(epoch));
        const auto triplets = build_epoch(epoch_sampler, sources, synth_opts);

        for (std::size_t i = 0; i < triplets.size(); ++i) {
            const auto& trip = triplets[i];
            const Var input = ad::constant(trip.mixed);
            const Var gt_t = ad::constant(trip.transmission);
            const Var gt_r = ad::constant(trip.reflection);

            adam.zero_grad();
            const SeparationOutput pred = net.forward(input, curriculum);
            TotalLoss loss;
            try {
                loss = total_loss(pred, gt_t, gt_r, input, config.loss, extractor,
                                  config.charbonnier_eps);
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + "; last good checkpoint: " +
                                     (result.last_checkpoint.empty() ? "<none>"
                                                                     : result.last_checkpoint));
            }
            ad::backward(loss.total);
            adam.step(lr);

            if (global_step == 0) result.first_loss = loss.report.total;
            result.last_loss = loss.report.total;
            ++global_step;

            nlohmann::json rec{{"step", global_step},
                               {"epoch", epoch},
                               {"lr", lr},
                               {"lambda_diff", curriculum.lambda_diff},
                               {"origin", origin_name(trip.origin)},
                               {"loss",
                                {{"rec", loss.report.rec},
                                 {"refl", loss.report.refl},
                                 {"vgg", loss.report.vgg},
                                 {"exclu", loss.report.exclu},
                                 {"recons", loss.report.recons},
                                 {"color", loss.report.color},
                                 {"total", loss.report.total}}}};
            log << rec.dump() << '\n';
            if (options.log_to_stdout && (i + 1 == triplets.size())) {
                std::cout << "epoch " << epoch << " step " << global_step << " lr " << lr
                          << " lambda_diff " << curriculum.lambda_diff << " loss "
                          << loss.report.total << "\n";
            }
        }
        if ((epoch + 1) % config.opt.checkpoint_every == 0 || epoch + 1 == options.epochs) {
            const std::string path =
                options.out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".bin";
            const AdamStateView view = adam.state_view();
            save_checkpoint(path, net, epoch + 1, &view);
            result.checkpoints.push_back(path);
            result.last_checkpoint = path;
        }
        if (!options.validation.empty()) {
            const EvalReport report = evaluate(net_separator(net), options.validation,
                                               config.window_size, false);
            if (result.best_checkpoint.empty() || report.mean_psnr > result.best_psnr) {
                result.best_psnr = report.mean_psnr;
                result.best_checkpoint = options.out_dir + "/checkpoint_best.bin";
                const AdamStateView view = adam.state_view();
                save_checkpoint(result.best_checkpoint, net, epoch + 1, &view);
            }
        }
    }
    result.steps = global_step;
    return result;
}

Separator net_separator(const ReflexSplitNet& net) {
    return [&net](const EvalItem& item, LevelTaps* taps) {
        ad::NoGrad ng;
        const CurriculumState curriculum =
            CurriculumState::at_epoch(net.config(), net.config().total_epochs);
        Tensor input = item.mixed;
        if (input.dim(0) != net.config().image_size || input.dim(1) != net.config().image_size) {
            input = bilinear_resize(input, net.config().image_size, net.config().image_size);
        }
        return net.forward(ad::constant(std::move(input)), curriculum, nullptr, taps);
    };
}

EvalReport evaluate(const Separator& model, const std::vector<EvalItem>& items, int window_size,
                    bool collect_ncc) {
    EvalReport report;
    double psnr_acc = 0.0, ssim_acc = 0.0;
    int psnr_n = 0, ssim_n = 0;
    for (const auto& item : items) {
        EvalRow row;
        row.id = item.id;
        LevelTaps taps;
        SeparationOutput out;
        try {
            out = model(item, collect_ncc ? &taps : nullptr);
        } catch (const std::exception& e) {
            report.errors.push_back(item.id + ": " + e.what());
            continue;
        }
        Tensor pred_t = clamp01(out.transmission->value);
        if (!pred_t.same_shape(item.transmission)) {
            pred_t = bilinear_resize(pred_t, item.transmission.dim(0), item.transmission.dim(1));
        }
        row.psnr = psnr(pred_t, item.transmission);
        row.ssim = ssim(pred_t, item.transmission);
        if (collect_ncc) {
            row.ncc_by_level.assign(5, std::numeric_limits<double>::quiet_NaN());
            for (const auto& [level, pair] : taps.by_level) {
                if (level < 0 || level > 4) continue;
                const Tensor pt = pool_window_mean(pair.first, window_size);
                const Tensor pr = pool_window_mean(pair.second, window_size);
                row.ncc_by_level[static_cast<std::size_t>(level)] = ncc(pt, pr).value;
            }
        }
        if (!row.psnr.infinite) {
            psnr_acc += row.psnr.db;
            ++psnr_n;
        }
        ssim_acc += row.ssim;
        ++ssim_n;
        report.rows.push_back(std::move(row));
    }
    report.mean_psnr = psnr_n ? psnr_acc / psnr_n : 0.0;
    report.mean_ssim = ssim_n ? ssim_acc / ssim_n : 0.0;
    return report;
}

std::vector<EvalItem> load_eval_items(const std::string& dir, std::vector<std::string>* errors,
                                      int resize_to) {
    const std::string manifest_path = dir + "/triplets.tsv";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest: " + manifest_path);
    std::vector<EvalItem> items;
    std::string line;
    int line_no = 0, index = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> fields;
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        const std::string id = "item" + std::to_string(index++);
        if (fields.size() != 3) {
            if (errors) {
                errors->push_back(manifest_path + ":" + std::to_string(line_no) +
                                  ": expected 3 tab-separated fields");
            }
            continue;
        }
        // Unreadable entries are listed and skipped; the run continues.
        try {
            EvalItem item;
            item.id = id;
            item.mixed = load_png(dir + "/" + fields[0]);
            item.transmission = load_png(dir + "/" + fields[1]);
            item.reflection = load_png(dir + "/" + fields[2]);
            if (!item.mixed.same_shape(item.transmission) ||
                !item.mixed.same_shape(item.reflection)) {
                throw DataError("triplet images disagree in size");
            }
            if (resize_to > 0) {
                item.mixed = bilinear_resize(item.mixed, resize_to, resize_to);
                item.transmission = bilinear_resize(item.transmission, resize_to, resize_to);
                item.reflection = bilinear_resize(item.reflection, resize_to, resize_to);
            }
            items.push_back(std::move(item));
        } catch (const std::exception& e) {
            if (errors) errors->push_back(id + " (" + fields[0] + "): " + e.what());
        }
    }
    return items;
}

void write_metrics_csv(const EvalReport& report, std::ostream& out) {
    out << "image_id,psnr_db,ssim,ncc_l0,ncc_l1,ncc_l2,ncc_l3,ncc_l4\n";
    out.precision(10);
    for (const auto& row : report.rows) {
        out << row.id << ',';
        if (row.psnr.infinite) {
            out << "inf";
        } else {
            out << row.psnr.db;
        }
        out << ',' << row.ssim;
        for (int l = 0; l < 5; ++l) {
            out << ',';
            if (l < static_cast<int>(row.ncc_by_level.size()) &&
                std::isfinite(row.ncc_by_level[static_cast<std::size_t>(l)])) {
                out << row.ncc_by_level[static_cast<std::size_t>(l)];
            }
        }
        out << '\n';
    }
}

EvalReport parse_metrics_csv(std::istream& in) {
    EvalReport report;
    std::string line;
    if (!std::getline(in, line)) throw DataError("metrics csv: missing header");
    if (line.rfind("image_id,psnr_db,ssim", 0) != 0) {
        throw DataError("metrics csv: unexpected header '" + line + "'");
    }
    double psnr_acc = 0.0, ssim_acc = 0.0;
    int psnr_n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        EvalRow row;
        std::getline(ss, field, ',');
        row.id = field;
        std::getline(ss, field, ',');
        if (field == "inf") {
            row.psnr.infinite = true;
            row.psnr.db = std::numeric_limits<double>::infinity();
        } else {
            row.psnr.db = std::stod(field);
        }
        std::getline(ss, field, ',');
        row.ssim = std::stod(field);
        while (std::getline(ss, field, ',')) {
            row.ncc_by_level.push_back(field.empty()
                                           ? std::numeric_limits<double>::quiet_NaN()
                                           : std::stod(field));
        }
        if (!row.psnr.infinite) {
            psnr_acc += row.psnr.db;
            ++psnr_n;
        }
        ssim_acc += row.ssim;
        report.rows.push_back(std::move(row));
    }
    report.mean_psnr = psnr_n ? psnr_acc / psnr_n : 0.0;
    report.mean_ssim = report.rows.empty() ? 0.0 : ssim_acc / report.rows.size();
    return report;
}

} // namespace reflexsplit
