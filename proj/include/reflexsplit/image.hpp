#pragma once

#include <string>

#include "reflexsplit/tensor.hpp"

namespace reflexsplit {

// Images are {H, W, 3} tensors with values in [0,1]. PNG conversion to and
// from 8-bit happens only here, at the I/O boundary.
Tensor load_png(const std::string& path);
void save_png(const Tensor& image, const std::string& path);

void check_image(const Tensor& image, const char* where);

Tensor clamp01(Tensor image);
Tensor bilinear_resize(const Tensor& image, int out_h, int out_w);
Tensor luminance(const Tensor& image); // {H,W}, Rec.601 weights

// Separable Gaussian blur, reflect boundary; used by the optional
// reflection pre-blur in synthesis.
Tensor gaussian_blur(const Tensor& image, double sigma);

} // namespace reflexsplit
