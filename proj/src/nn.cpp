#include "reflexsplit/nn.hpp"

#include <cmath>
#include <cstring>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

Var ParamRegistry::add(std::string name, Tensor init, bool trainable) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    Var v = ad::leaf(std::move(init), trainable);
    items_.push_back(ParamInfo{std::move(name), v, trainable});
    return items_.back().var;
}

const ParamInfo* ParamRegistry::find(const std::string& name) const {
    for (const auto& p : items_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::int64_t ParamRegistry::parameter_count(bool trainable_only) const {
    std::int64_t n = 0;
    for (const auto& p : items_) {
        if (!trainable_only || p.trainable) n += p.var->value.size();
    }
    return n;
}

std::uint64_t ParamRegistry::structural_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : items_) {
        feed(p.name.data(), p.name.size());
        for (int d : p.var->value.shape()) feed(&d, sizeof(d));
        const char t = p.trainable ? 1 : 0;
        feed(&t, 1);
    }
    return h;
}

void ParamRegistry::zero_grads() const {
    for (const auto& p : items_) ad::clear_grad(p.var);
}

void copy_value(const Var& dst, const Var& src) {
    require_same_shape(dst->value, src->value, "copy_value");
    std::memcpy(dst->value.data(), src->value.data(),
                static_cast<std::size_t>(src->value.size()) * sizeof(double));
}

Tensor xavier_uniform(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::uniform(std::move(shape), -limit, limit, rng);
}

Linear::Linear(ParamRegistry& reg, const std::string& name, int in, int out, Rng& rng, bool bias,
               bool trainable) {
    w_ = reg.add(name + ".w", xavier_uniform({in, out}, in, out, rng), trainable);
    if (bias) b_ = reg.add(name + ".b", Tensor({out}), trainable);
}

Var Linear::forward(const Var& x) const { return ad::linear(x, w_, b_); }

Conv2d::Conv2d(ParamRegistry& reg, const std::string& name, int kernel, int cin, int cout,
               int stride, int pad, Rng& rng, bool bias, bool trainable)
    : stride_(stride), pad_(pad) {
    const int fan_in = kernel * kernel * cin;
    const int fan_out = kernel * kernel * cout;
    w_ = reg.add(name + ".w", xavier_uniform({kernel, kernel, cin, cout}, fan_in, fan_out, rng),
                 trainable);
    if (bias) b_ = reg.add(name + ".b", Tensor({cout}), trainable);
}

Var Conv2d::forward(const Var& x) const { return ad::conv2d(x, w_, b_, stride_, pad_); }

Conv1x1::Conv1x1(ParamRegistry& reg, const std::string& name, int cin, int cout, Rng& rng,
                 bool bias, bool trainable)
    : lin_(reg, name, cin, cout, rng, bias, trainable) {}

Var Conv1x1::forward(const Var& x) const {
    const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    const Var flat = ad::reshape(x, {h * w, c});
    const Var y = lin_.forward(flat);
    return ad::reshape(y, {h, w, y->value.dim(1)});
}

FeedForward::FeedForward(ParamRegistry& reg, const std::string& name, int channels, Rng& rng,
                         bool trainable)
    : up_(reg, name + ".up", channels, 4 * channels, rng, true, trainable),
      down_(reg, name + ".down", 4 * channels, channels, rng, true, trainable) {}

Var FeedForward::forward(const Var& x) const {
    return down_.forward(ad::gelu(up_.forward(x)));
}

} // namespace reflexsplit
