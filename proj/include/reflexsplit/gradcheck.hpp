#pragma once

#include <functional>
#include <vector>

#include "reflexsplit/autodiff.hpp"
#include "reflexsplit/rng.hpp"

namespace reflexsplit {

struct GradCheckResult {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    bool ok(double tol = 1e-3) const { return coords_checked > 0 && max_rel_err <= tol; }
};

// Central finite differences of a scalar-valued rebuild against the
// analytic gradients of one backward pass. `rebuild` must recompute the
// value from the leaves' current contents. When a leaf has more entries
// than max_coords_per_leaf, a deterministic random subset is probed.
GradCheckResult finite_diff_check(const std::function<Var()>& rebuild,
                                  const std::vector<Var>& leaves, double h = 1e-5,
                                  int max_coords_per_leaf = 256, std::uint64_t probe_seed = 7);

// Fixed random linear readout turning a tensor output into a scalar, so
// whole blocks can be gradient-checked.
Var random_readout(const Var& output, std::uint64_t seed);

} // namespace reflexsplit
