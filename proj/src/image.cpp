#include "reflexsplit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "reflexsplit/autodiff.hpp"
#include "reflexsplit/common.hpp"

namespace reflexsplit {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

Tensor load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng info init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t row_bytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(row_bytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({static_cast<int>(height), static_cast<int>(width), 3});
    for (png_uint_32 y = 0; y < height; ++y) {
        const png_byte* row = buffer.data() + y * row_bytes;
        for (png_uint_32 x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.at(static_cast<int>(y), static_cast<int>(x), c) =
                    static_cast<double>(row[3 * x + c]) / 255.0;
            }
        }
    }
    return out;
}

void save_png(const Tensor& image, const std::string& path) {
    check_image(image, "save_png");
    const int h = image.dim(0), w = image.dim(1);

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng info init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed to encode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
                row[static_cast<std::size_t>(3 * x + c)] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void check_image(const Tensor& image, const char* where) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw ShapeError(std::string(where) + ": expected {H,W,3} image, got " +
                         image.shape_str());
    }
    if (!image.all_finite()) {
        throw NumericalError(std::string(where) + ": image contains non-finite values");
    }
}

Tensor clamp01(Tensor image) {
    double* p = image.data();
    const std::int64_t n = image.size();
    for (std::int64_t i = 0; i < n; ++i) p[i] = std::clamp(p[i], 0.0, 1.0);
    return image;
}

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w) {
    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (out_h == h && out_w == w) return image;
    Tensor out({out_h, out_w, c});
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int k = 0; k < c; ++k) {
                const double top = (1 - wx) * image.at(y0, x0, k) + wx * image.at(y0, x1, k);
                const double bot = (1 - wx) * image.at(y1, x0, k) + wx * image.at(y1, x1, k);
                out.at(y, x, k) = (1 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

Tensor luminance(const Tensor& image) {
    check_image(image, "luminance");
    const int h = image.dim(0), w = image.dim(1);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.at(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                           0.114 * image.at(y, x, 2);
        }
    }
    return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    if (sigma <= 0) return image;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (auto& v : kernel) v /= total;

    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor tmp({h, w, c});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int k = 0; k < c; ++k) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           image.at(y, ad::reflect_index(x + i, w), k);
                }
                tmp.at(y, x, k) = acc;
            }
        }
    }
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int k = 0; k < c; ++k) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           tmp.at(ad::reflect_index(y + i, h), x, k);
                }
                out.at(y, x, k) = acc;
            }
        }
    }
    return out;
}

} // namespace reflexsplit
