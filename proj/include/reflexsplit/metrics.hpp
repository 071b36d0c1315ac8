#pragma once

#include <vector>

#include "reflexsplit/tensor.hpp"

namespace reflexsplit {

struct PsnrResult {
    double db = 0.0;
    bool infinite = false; // identical inputs
};

// 10*log10(1/MSE) over [0,1] images.
PsnrResult psnr(const Tensor& a, const Tensor& b);

// Mean local SSIM on the luminance channel; 11x11 Gaussian window with
// sigma 1.5, K1=0.01, K2=0.03, L=1, valid-region convolution.
double ssim(const Tensor& a, const Tensor& b);

struct NccResult {
    double value = 0.0;
    bool degenerate = false; // a zero-variance input; value pinned to 0
};

// Pearson correlation of the mean-centered flattened tensors.
NccResult ncc(const Tensor& a, const Tensor& b);

// Non-overlapping cell means over a {H,W,C} map (ceil grid; edge cells
// average their actual extent).
Tensor pool_window_mean(const Tensor& map, int window);

struct PcaCurve {
    std::vector<double> cumulative; // non-decreasing, reaches 1 at full rank
    int components_for_95 = 0;
};

// Eigen-decomposition of the sample covariance of flattened samples.
PcaCurve pca_cumulative_variance(const std::vector<Tensor>& samples);

} // namespace reflexsplit
