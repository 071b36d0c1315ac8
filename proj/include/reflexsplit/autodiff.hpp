#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "reflexsplit/tensor.hpp"

namespace reflexsplit {

// Reverse-mode autodiff over Tensor. Every op records a node with a
// backprop closure; backward() replays the tape in reverse creation
// order. With gradients disabled (NoGrad) ops keep no parents, so
// intermediates are freed as soon as the last Var referencing them dies.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
};

using Var = std::shared_ptr<Node>;

namespace ad {

bool grad_enabled();

struct NoGrad {
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad);
inline Var param(Tensor value) { return leaf(std::move(value), true); }

const Tensor& val(const Var& v);
// Gradient of the last backward() pass; zeros if the leaf was unreachable.
Tensor grad_of(const Var& v);
void clear_grad(const Var& v);

// root must hold exactly one element; seeds d(root)/d(root) = 1.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
// a * s where s holds a single element; gradient flows to both.
Var mul_scalar_var(const Var& a, const Var& s);
Var sigmoid(const Var& a);
Var tanh_act(const Var& a);
Var sin_act(const Var& a);
Var gelu(const Var& a);
Var abs_val(const Var& a);
Var sqrt_val(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                  // {m,k}x{k,n}
Var bmm(const Var& a, const Var& b);                     // {B,m,k}x{B,k,n}
Var bmm_nt(const Var& a, const Var& b);                  // {B,m,k}x{B,n,k}^T
Var linear(const Var& x, const Var& w, const Var& b);    // {n,in}x{in,out}+b

// Fused softmax(q k^T * scale) v over per-head batches {B,N,D}/{B,M,D}.
// Score matrices live in per-batch scratch and are recomputed during
// backward, so no N^2 tensor is ever materialized on the tape.
Var attention(const Var& q, const Var& k, const Var& v, double scale);

// Attention over the union of two key/value blocks. The per-row softmax
// statistics of the blocks are combined with commutative max/add, so
// exchanging (k1,v1) with (k2,v2) gives bit-identical output — the
// property the cross-stream swap tests rely on.
Var attention_two_block(const Var& q, const Var& k1, const Var& v1, const Var& k2, const Var& v2,
                        double scale);

// ---- shape ----
Var reshape(const Var& a, std::vector<int> shape);
Var permute(const Var& a, std::vector<int> perm);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int start, int len);

// ---- reductions / broadcasts ----
Var sum_all(const Var& a);    // -> {1}
Var mean_all(const Var& a);   // -> {1}
Var mean_hw(const Var& a);    // {H,W,C} -> {C}
Var add_channel(const Var& a, const Var& b);  // {...,C} + {C}
Var mul_channel(const Var& a, const Var& s);  // {...,C} * {C}
Var softmax_last(const Var& a);

// ---- structured image ops ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var pixel_shuffle(const Var& x, int factor);
Var pixel_unshuffle(const Var& x, int factor);
Var avg_pool2(const Var& x);

// out[i] = table[indices[i]] over rows of a {T, C} table; backward
// scatter-adds. Serves the relative-position-bias lookup.
Var gather_rows(const Var& table, std::vector<int> indices);

// Reflect-pads to the next multiple of `window` (bottom/right), then
// partitions into row-major windows of row-major tokens: {P, window^2, C}.
Var window_partition(const Var& x, int window);
// Inverse: reads each pixel's own token, cropping any padding.
Var window_reverse(const Var& seq, int height, int width, int window);

int reflect_index(int i, int n);

} // namespace ad
} // namespace reflexsplit
