#include "reflexsplit/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "reflexsplit/common.hpp"
#include "reflexsplit/image.hpp"

namespace reflexsplit {

PsnrResult psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    const std::int64_t n = a.size();
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    PsnrResult r;
    if (mse == 0.0) {
        r.infinite = true;
        r.db = std::numeric_limits<double>::infinity();
        return r;
    }
    r.db = 10.0 * std::log10(1.0 / mse);
    return r;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::vector<double> ssim_kernel() {
    std::vector<double> k(kSsimWindow * kSsimWindow);
    const int r = kSsimWindow / 2;
    double total = 0.0;
    for (int y = -r; y <= r; ++y) {
        for (int x = -r; x <= r; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * kSsimSigma * kSsimSigma));
            k[static_cast<std::size_t>((y + r) * kSsimWindow + (x + r))] = v;
            total += v;
        }
    }
    for (auto& v : k) v /= total;
    return k;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ssim");
    const Tensor ya = a.rank() == 3 ? luminance(a) : a;
    const Tensor yb = b.rank() == 3 ? luminance(b) : b;
    const int h = ya.dim(0), w = ya.dim(1);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw ShapeError("ssim: image smaller than the 11x11 window");
    }
    static const std::vector<double> kernel = ssim_kernel();
    constexpr double c1 = 0.01 * 0.01; // (K1*L)^2
    constexpr double c2 = 0.03 * 0.03;
    const int r = kSsimWindow / 2;
    double acc = 0.0;
    int count = 0;
    for (int y = r; y < h - r; ++y) {
        for (int x = r; x < w - r; ++x) {
            double mu_a = 0, mu_b = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const double kv = kernel[static_cast<std::size_t>((dy + r) * kSsimWindow +
                                                                      (dx + r))];
                    mu_a += kv * ya.at(y + dy, x + dx);
                    mu_b += kv * yb.at(y + dy, x + dx);
                }
            }
            double var_a = 0, var_b = 0, cov = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    const double kv = kernel[static_cast<std::size_t>((dy + r) * kSsimWindow +
                                                                      (dx + r))];
                    const double da = ya.at(y + dy, x + dx) - mu_a;
                    const double db = yb.at(y + dy, x + dx) - mu_b;
                    var_a += kv * da * da;
                    var_b += kv * db * db;
                    cov += kv * da * db;
                }
            }
            const double num = (2 * mu_a * mu_b + c1) * (2 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / count;
}

NccResult ncc(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "ncc");
    const std::int64_t n = a.size();
    const double ma = a.mean(), mb = b.mean();
    double saa = 0, sbb = 0, sab = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    NccResult r;
    if (saa == 0.0 || sbb == 0.0) {
        r.degenerate = true;
        r.value = 0.0;
        return r;
    }
    r.value = sab / std::sqrt(saa * sbb);
    return r;
}

Tensor pool_window_mean(const Tensor& map, int window) {
    if (map.rank() != 3) throw ShapeError("pool_window_mean: expected {H,W,C}");
    if (window <= 0) throw ShapeError("pool_window_mean: window must be positive");
    const int h = map.dim(0), w = map.dim(1), c = map.dim(2);
    const int gh = (h + window - 1) / window, gw = (w + window - 1) / window;
    Tensor out({gh, gw, c});
    for (int gy = 0; gy < gh; ++gy) {
        const int y0 = gy * window, y1 = std::min(h, y0 + window);
        for (int gx = 0; gx < gw; ++gx) {
            const int x0 = gx * window, x1 = std::min(w, x0 + window);
            const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
            for (int k = 0; k < c; ++k) {
                double acc = 0.0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) acc += map.at(y, x, k);
                }
                out.at(gy, gx, k) = acc * inv;
            }
        }
    }
    return out;
}

PcaCurve pca_cumulative_variance(const std::vector<Tensor>& samples) {
    if (samples.size() < 2) {
        throw DataError("pca_cumulative_variance: need at least 2 samples");
    }
    const std::int64_t d = samples[0].size();
    const int n = static_cast<int>(samples.size());
    for (const auto& s : samples) {
        if (s.size() != d) throw ShapeError("pca_cumulative_variance: inconsistent sample sizes");
    }
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) x(i, j) = samples[static_cast<std::size_t>(i)][j];
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    x.rowwise() -= mean;
    const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    Eigen::VectorXd ev = solver.eigenvalues(); // ascending
    std::vector<double> lambdas(static_cast<std::size_t>(ev.size()));
    for (int i = 0; i < ev.size(); ++i) {
        lambdas[static_cast<std::size_t>(i)] = std::max(0.0, ev(ev.size() - 1 - i));
    }
    double total = 0.0;
    for (double v : lambdas) total += v;
    PcaCurve curve;
    if (total <= 0.0) {
        // All samples identical; a single flat direction carries everything.
        curve.cumulative.assign(lambdas.size(), 1.0);
        curve.components_for_95 = 1;
        return curve;
    }
    double acc = 0.0;
    curve.components_for_95 = 0;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        acc += lambdas[i];
        curve.cumulative.push_back(acc / total);
        if (curve.components_for_95 == 0 && acc / total >= 0.95) {
            curve.components_for_95 = static_cast<int>(i) + 1;
        }
    }
    curve.cumulative.back() = 1.0;
    return curve;
}

} // namespace reflexsplit
