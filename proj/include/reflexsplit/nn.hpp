#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "reflexsplit/autodiff.hpp"
#include "reflexsplit/rng.hpp"

namespace reflexsplit {

struct ParamInfo {
    std::string name;
    Var var;
    bool trainable = true;
};

// Ordered, name-addressed parameter store. Construction order is the
// canonical order for checkpoints and the structural hash.
class ParamRegistry {
public:
    Var add(std::string name, Tensor init, bool trainable = true);

    const std::vector<ParamInfo>& items() const { return items_; }
    std::vector<ParamInfo>& items() { return items_; }
    const ParamInfo* find(const std::string& name) const;
    std::int64_t parameter_count(bool trainable_only = true) const;
    std::uint64_t structural_hash() const;
    void zero_grads() const;

private:
    std::vector<ParamInfo> items_;
};

void copy_value(const Var& dst, const Var& src);

Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng,
           bool bias = true, bool trainable = true);
    Var forward(const Var& x) const; // {N,in} -> {N,out}
    Var weight() const { return w_; }
    Var bias() const { return b_; }

private:
    Var w_, b_;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParamRegistry& reg, const std::string& name, int kernel, int cin, int cout, int stride,
           int pad, Rng& rng, bool bias = true, bool trainable = true);
    Var forward(const Var& x) const; // {H,W,Cin}
    Var weight() const { return w_; }
    Var bias() const { return b_; }

private:
    Var w_, b_;
    int stride_ = 1, pad_ = 0;
};

// 1x1 convolution as a per-pixel linear map.
class Conv1x1 {
public:
    Conv1x1() = default;
    Conv1x1(ParamRegistry& reg, const std::string& name, int cin, int cout, Rng& rng,
            bool bias = true, bool trainable = true);
    Var forward(const Var& x) const; // {H,W,Cin} -> {H,W,Cout}
    Var weight() const { return lin_.weight(); }
    Var bias() const { return lin_.bias(); }

private:
    Linear lin_;
};

// Two linear layers with GELU, hidden width = 4*C.
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParamRegistry& reg, const std::string& name, int channels, Rng& rng,
                bool trainable = true);
    Var forward(const Var& x) const; // {N,C} -> {N,C}
    Linear& up() { return up_; }
    Linear& down() { return down_; }
    const Linear& up() const { return up_; }
    const Linear& down() const { return down_; }

private:
    Linear up_, down_;
};

} // namespace reflexsplit
