#include "reflexsplit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/image.hpp"

namespace reflexsplit {

const char* origin_name(TripletOrigin origin) {
    switch (origin) {
        case TripletOrigin::kSynthetic: return "synthetic";
        case TripletOrigin::kReal: return "real";
        case TripletOrigin::kNature: return "nature";
    }
    return "?";
}

Tensor screen_blend(const Tensor& t, const Tensor& r, const BlendCoefficients& coeffs) {
    require_same_shape(t, r, "screen_blend");
    Tensor out(t.shape());
    const double g1 = coeffs.gamma1, g2 = coeffs.gamma2, g12 = coeffs.gamma1 * coeffs.gamma2;
    const std::int64_t n = out.size();
    // Grouped so the (t,g1)<->(r,g2) swap is bit-exact.
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = g1 * t[i] + g2 * r[i] - g12 * (t[i] * r[i]);
        out[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

BlendCoefficients sample_coefficients(Rng& rng) {
    BlendCoefficients c;
    c.gamma1 = rng.uniform(0.8, 1.0);
    c.gamma2 = rng.uniform(0.4, 1.0);
    return c;
}

std::array<int, 3> apportion_counts(int n, const std::array<double, 3>& ratio) {
    std::array<int, 3> counts{};
    std::array<double, 3> remainder{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratio[static_cast<std::size_t>(i)] * n;
        counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact));
        remainder[static_cast<std::size_t>(i)] = exact - counts[static_cast<std::size_t>(i)];
        assigned += counts[static_cast<std::size_t>(i)];
    }
    int leftover = n - assigned;
    // Largest remainder wins; equal remainders resolve in origin order.
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return remainder[static_cast<std::size_t>(a)] > remainder[static_cast<std::size_t>(b)];
    });
    for (int k = 0; k < leftover; ++k) {
        counts[static_cast<std::size_t>(order[static_cast<std::size_t>(k % 3)])] += 1;
    }
    return counts;
}

namespace {

Tensor prepare_source(const Tensor& src, const SynthOptions& options, Rng& rng) {
    Tensor img = src;
    if (options.augment) {
        const int h = img.dim(0), w = img.dim(1);
        const int target = options.image_size > 0 ? options.image_size : std::min(h, w);
        if (h > target && w > target) {
            const int oy = rng.uniform_int(0, h - target);
            const int ox = rng.uniform_int(0, w - target);
            Tensor crop({target, target, 3});
            for (int y = 0; y < target; ++y)
                for (int x = 0; x < target; ++x)
                    for (int c = 0; c < 3; ++c) crop.at(y, x, c) = img.at(oy + y, ox + x, c);
            img = std::move(crop);
        }
        if (rng.uniform() < 0.5) {
            const int hh = img.dim(0), ww = img.dim(1);
            Tensor flip({hh, ww, 3});
            for (int y = 0; y < hh; ++y)
                for (int x = 0; x < ww; ++x)
                    for (int c = 0; c < 3; ++c) flip.at(y, x, c) = img.at(y, ww - 1 - x, c);
            img = std::move(flip);
        }
    }
    if (options.image_size > 0 &&
        (img.dim(0) != options.image_size || img.dim(1) != options.image_size)) {
        img = bilinear_resize(img, options.image_size, options.image_size);
    }
    return img;
}

TrainingTriplet resize_triplet(const TrainingTriplet& t, int image_size) {
    if (image_size <= 0 || (t.mixed.dim(0) == image_size && t.mixed.dim(1) == image_size)) {
        return t;
    }
    TrainingTriplet out;
    out.mixed = bilinear_resize(t.mixed, image_size, image_size);
    out.transmission = bilinear_resize(t.transmission, image_size, image_size);
    out.reflection = bilinear_resize(t.reflection, image_size, image_size);
    out.origin = t.origin;
    return out;
}

} // namespace

std::vector<TrainingTriplet> build_epoch(const EpochSampler& sampler, const DataSources& sources,
                                         const SynthOptions& options) {
    const double rsum = sampler.ratio[0] + sampler.ratio[1] + sampler.ratio[2];
    if (sampler.ratio[0] < 0 || sampler.ratio[1] < 0 || sampler.ratio[2] < 0 ||
        std::abs(rsum - 1.0) > 1e-9) {
        throw ConfigError("build_epoch: ratios must be non-negative and sum to 1");
    }
    if (sampler.pairs_per_epoch < 0) throw ConfigError("build_epoch: negative pairs_per_epoch");
    const auto counts = apportion_counts(sampler.pairs_per_epoch, sampler.ratio);
    if (counts[0] > 0 && sources.synthesis.empty()) {
        throw DataError("build_epoch: synthetic ratio is nonzero but no synthesis pairs supplied");
    }
    if (counts[1] > 0 && sources.real.empty()) {
        throw DataError("build_epoch: real ratio is nonzero but no real triplets supplied");
    }
    if (counts[2] > 0 && sources.nature.empty()) {
        throw DataError("build_epoch: nature ratio is nonzero but no nature triplets supplied");
    }

    std::vector<TrainingTriplet> epoch;
    epoch.reserve(static_cast<std::size_t>(sampler.pairs_per_epoch));
    int index = 0;
    for (int k = 0; k < counts[0]; ++k, ++index) {
        Rng rng(Rng::mix(sampler.seed, 0x51, static_cast<std::uint64_t>(index)));
        const auto& pair =
            sources.synthesis[static_cast<std::size_t>(rng.uniform_int(
                0, static_cast<int>(sources.synthesis.size()) - 1))];
        TrainingTriplet t;
        t.origin = TripletOrigin::kSynthetic;
        t.transmission = prepare_source(pair.transmission, options, rng);
        Tensor refl = prepare_source(pair.reflection, options, rng);
        if (options.reflection_blur) refl = gaussian_blur(refl, rng.uniform(0.5, 2.0));
        t.reflection = std::move(refl);
        t.mixed = screen_blend(t.transmission, t.reflection, sample_coefficients(rng));
        epoch.push_back(std::move(t));
    }
    for (int k = 0; k < counts[1]; ++k, ++index) {
        Rng rng(Rng::mix(sampler.seed, 0x52, static_cast<std::uint64_t>(index)));
        const auto& src = sources.real[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(sources.real.size()) - 1))];
        epoch.push_back(resize_triplet(src, options.image_size));
    }
    for (int k = 0; k < counts[2]; ++k, ++index) {
        Rng rng(Rng::mix(sampler.seed, 0x53, static_cast<std::uint64_t>(index)));
        const auto& src = sources.nature[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<int>(sources.nature.size()) - 1))];
        epoch.push_back(resize_triplet(src, options.image_size));
    }
    return epoch;
}

Tensor procedural_image(int height, int width, Rng& rng) {
    Tensor img({height, width, 3});
    // A few random low-frequency waves plus soft blobs per channel.
    for (int c = 0; c < 3; ++c) {
        const double fx = rng.uniform(0.5, 3.0), fy = rng.uniform(0.5, 3.0);
        const double px = rng.uniform(0.0, 2.0 * M_PI), py = rng.uniform(0.0, 2.0 * M_PI);
        const double bx = rng.uniform(0.2, 0.8) * width, by = rng.uniform(0.2, 0.8) * height;
        const double br = rng.uniform(0.1, 0.4) * std::min(width, height);
        const double amp = rng.uniform(0.2, 0.5);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double wave =
                    std::sin(2.0 * M_PI * fx * x / width + px) *
                    std::sin(2.0 * M_PI * fy * y / height + py);
                const double d2 = ((x - bx) * (x - bx) + (y - by) * (y - by)) / (br * br);
                const double blob = std::exp(-d2);
                img.at(y, x, c) = 0.5 + amp * 0.5 * wave + 0.3 * blob - 0.15;
            }
        }
    }
    return clamp01(std::move(img));
}

namespace {

std::vector<std::vector<std::string>> read_manifest(const std::string& dir,
                                                    const std::string& manifest_name,
                                                    std::size_t fields) {
    const std::string path = dir + "/" + manifest_name;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    std::vector<std::vector<std::string>> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) parts.push_back(field);
        if (parts.size() != fields) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(fields) + " tab-separated fields, got " +
                            std::to_string(parts.size()));
        }
        records.push_back(std::move(parts));
    }
    return records;
}

} // namespace

std::vector<ImagePair> load_synthesis_manifest(const std::string& dir,
                                               const std::string& manifest_name) {
    std::vector<ImagePair> pairs;
    for (const auto& rec : read_manifest(dir, manifest_name, 2)) {
        ImagePair p;
        p.transmission = load_png(dir + "/" + rec[0]);
        p.reflection = load_png(dir + "/" + rec[1]);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::vector<TrainingTriplet> load_triplet_manifest(const std::string& dir, TripletOrigin origin,
                                                   const std::string& manifest_name) {
    std::vector<TrainingTriplet> triplets;
    for (const auto& rec : read_manifest(dir, manifest_name, 3)) {
        TrainingTriplet t;
        t.origin = origin;
        t.mixed = load_png(dir + "/" + rec[0]);
        t.transmission = load_png(dir + "/" + rec[1]);
        t.reflection = load_png(dir + "/" + rec[2]);
        if (!t.mixed.same_shape(t.transmission) || !t.mixed.same_shape(t.reflection)) {
            throw DataError("triplet images disagree in size: " + rec[0]);
        }
        triplets.push_back(std::move(t));
    }
    return triplets;
}

} // namespace reflexsplit
