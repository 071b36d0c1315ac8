#include "reflexsplit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace reflexsplit {

GradCheckResult finite_diff_check(const std::function<Var()>& rebuild,
                                  const std::vector<Var>& leaves, double h,
                                  int max_coords_per_leaf, std::uint64_t probe_seed) {
    GradCheckResult result;

    for (const auto& leaf : leaves) ad::clear_grad(leaf);
    const Var root = rebuild();
    ad::backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) analytic.push_back(ad::grad_of(leaf));

    Rng rng(probe_seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        const Var& leaf = leaves[li];
        const std::int64_t n = leaf->value.size();
        std::vector<std::int64_t> coords;
        if (n <= max_coords_per_leaf) {
            coords.resize(static_cast<std::size_t>(n));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            for (int k = 0; k < max_coords_per_leaf; ++k) {
                coords.push_back(static_cast<std::int64_t>(rng.next_u64() %
                                                           static_cast<std::uint64_t>(n)));
            }
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (const std::int64_t idx : coords) {
            const double saved = leaf->value[idx];
            auto central = [&](double step) {
                ad::NoGrad ng;
                leaf->value[idx] = saved + step;
                const double plus = rebuild()->value[0];
                leaf->value[idx] = saved - step;
                const double minus = rebuild()->value[0];
                leaf->value[idx] = saved;
                return (plus - minus) / (2.0 * step);
            };
            // Richardson extrapolation of the central difference: O(h^4).
            const double d_full = central(h);
            const double d_half = central(0.5 * h);
            const double numeric = (4.0 * d_half - d_full) / 3.0;
            const double a = analytic[li][idx];
            const double denom = std::max(std::abs(a), std::abs(numeric));
            if (denom < 1e-7) {
                ++result.coords_checked;
                continue;
            }
            result.max_rel_err = std::max(result.max_rel_err, std::abs(a - numeric) / denom);
            ++result.coords_checked;
        }
    }
    return result;
}

Var random_readout(const Var& output, std::uint64_t seed) {
    Rng rng(seed);
    const Var weights = ad::constant(Tensor::uniform(output->value.shape(), -1.0, 1.0, rng));
    return ad::sum_all(ad::mul(output, weights));
}

} // namespace reflexsplit
