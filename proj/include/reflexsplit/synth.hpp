#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "reflexsplit/rng.hpp"
#include "reflexsplit/tensor.hpp"

namespace reflexsplit {

// Attenuation pair for the nonlinear screen-blend model.
struct BlendCoefficients {
    double gamma1 = 1.0; // transmission, sampled from [0.8, 1.0]
    double gamma2 = 1.0; // reflection, sampled from [0.4, 1.0]
};

enum class TripletOrigin { kSynthetic, kReal, kNature };

const char* origin_name(TripletOrigin origin);

struct TrainingTriplet {
    Tensor mixed;        // I
    Tensor transmission; // T
    Tensor reflection;   // R
    TripletOrigin origin = TripletOrigin::kSynthetic;
};

struct EpochSampler {
    int pairs_per_epoch = 5000;
    std::array<double, 3> ratio{0.6, 0.2, 0.2}; // synthetic : real : nature
    std::uint64_t seed = 0;
};

struct SynthOptions {
    int image_size = 0;          // 0 = keep source size
    bool augment = false;        // random crop + horizontal flip before blending
    bool reflection_blur = false;
};

struct ImagePair {
    Tensor transmission;
    Tensor reflection;
};

// In-memory source pools; loaders below fill them from manifest
// directories, tests fill them procedurally.
struct DataSources {
    std::vector<ImagePair> synthesis;       // blended fresh every epoch
    std::vector<TrainingTriplet> real;
    std::vector<TrainingTriplet> nature;
};

// I = g1*t + g2*r - g1*g2*(t.*r), clamped to [0,1].
Tensor screen_blend(const Tensor& t, const Tensor& r, const BlendCoefficients& coeffs);

BlendCoefficients sample_coefficients(Rng& rng);

// Largest-remainder apportionment of n into the three origins; ties break
// toward the earlier origin (synthetic first).
std::array<int, 3> apportion_counts(int n, const std::array<double, 3>& ratio);

// Exactly pairs_per_epoch triplets; per-triplet RNG streams derive from
// (seed, index) so the result is independent of construction order.
std::vector<TrainingTriplet> build_epoch(const EpochSampler& sampler, const DataSources& sources,
                                         const SynthOptions& options = {});

// Smooth random test image in [0,1]; shared by tests, cmd_synth
// --procedural and training smoke runs.
Tensor procedural_image(int height, int width, Rng& rng);

// ---- manifest I/O ----
// Synthesis manifest: "T-path<TAB>R-path" per line, '#' comments.
// Triplet manifest:   "I-path<TAB>T-path<TAB>R-path" per line.
std::vector<ImagePair> load_synthesis_manifest(const std::string& dir,
                                               const std::string& manifest_name = "pairs.tsv");
std::vector<TrainingTriplet> load_triplet_manifest(const std::string& dir, TripletOrigin origin,
                                                   const std::string& manifest_name = "triplets.tsv");

} // namespace reflexsplit
