#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "reflexsplit/tensor.hpp"

namespace reflexsplit {

// Named shape records collected along a forward pass; drives the
// architecture-table conformance checks.
struct ForwardTrace {
    std::vector<std::pair<std::string, std::vector<int>>> stages;

    void record(const std::string& name, const std::vector<int>& shape) {
        stages.emplace_back(name, shape);
    }
    const std::vector<int>* find(const std::string& name) const {
        for (const auto& [n, s] : stages) {
            if (n == name) return &s;
        }
        return nullptr;
    }
};

// Detached per-level copies of the post-stack decoder streams, for the
// inter-stream correlation diagnostic.
struct LevelTaps {
    std::map<int, std::pair<Tensor, Tensor>> by_level;
};

} // namespace reflexsplit
