#include "reflexsplit/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

#include "reflexsplit/common.hpp"

namespace reflexsplit {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

Tensor& Node::ensure_grad() {
    if (!grad_ready) {
        grad = Tensor(value.shape());
        grad_ready = true;
    }
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& dst = ensure_grad();
    ArrMap(dst.data(), dst.size()) += ConstArrMap(g.data(), g.size());
}

namespace ad {

namespace {

std::atomic<std::uint64_t> g_seq{1};
thread_local int g_nograd_depth = 0;

// Above this element count, embarrassingly parallel loops use OpenMP.
constexpr std::int64_t kParallelCutoff = 1 << 15;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    bool needs = false;
    if (g_nograd_depth == 0) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backprop = std::move(fn);
    }
    return node;
}

void check_rank(const Var& v, int rank, const char* where) {
    if (v->value.rank() != rank) {
        throw ShapeError(std::string(where) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + v->value.shape_str());
    }
}

std::int64_t outer_size(const std::vector<int>& shape, int axis) {
    std::int64_t n = 1;
    for (int i = 0; i < axis; ++i) n *= shape[static_cast<std::size_t>(i)];
    return n;
}

std::int64_t inner_size(const std::vector<int>& shape, int axis) {
    std::int64_t n = 1;
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i)
        n *= shape[static_cast<std::size_t>(i)];
    return n;
}

} // namespace

bool grad_enabled() { return g_nograd_depth == 0; }

NoGrad::NoGrad() { ++g_nograd_depth; }
NoGrad::~NoGrad() { --g_nograd_depth; }

Var constant(Tensor value) { return make_node(std::move(value), {}, nullptr); }

Var leaf(Tensor value, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    node->requires_grad = requires_grad;
    return node;
}

const Tensor& val(const Var& v) { return v->value; }

Tensor grad_of(const Var& v) {
    if (v->grad_ready) return v->grad;
    return Tensor(v->value.shape());
}

void clear_grad(const Var& v) {
    v->grad = Tensor();
    v->grad_ready = false;
}

void backward(const Var& root) {
    if (root->value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
    }
    // Collect the reachable graph, then run closures in reverse creation
    // order so every node's grad is complete before it propagates.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });
    root->ensure_grad();
    root->grad.fill(1.0);
    for (Node* n : order) {
        if (n->backprop && n->grad_ready) n->backprop(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) +
                                     ConstArrMap(b->value.data(), out.size());
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) -
                                     ConstArrMap(b->value.data(), out.size());
    return make_node(std::move(out), {a, b}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            ArrMap(g.data(), g.size()) -= ConstArrMap(self.grad.data(), g.size());
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) *
                                     ConstArrMap(b->value.data(), out.size());
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const std::int64_t n = self.grad.size();
        ConstArrMap g(self.grad.data(), n);
        if (self.parents[0]->requires_grad) {
            Tensor& ga = self.parents[0]->ensure_grad();
            ArrMap(ga.data(), n) += g * ConstArrMap(self.parents[1]->value.data(), n);
        }
        if (self.parents[1]->requires_grad) {
            Tensor& gb = self.parents[1]->ensure_grad();
            ArrMap(gb.data(), n) += g * ConstArrMap(self.parents[0]->value.data(), n);
        }
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) * c;
    return make_node(std::move(out), {a}, [c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        ArrMap(g.data(), g.size()) += ConstArrMap(self.grad.data(), g.size()) * c;
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) + c;
    return make_node(std::move(out), {a}, [](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    });
}

Var mul_scalar_var(const Var& a, const Var& s) {
    if (s->value.size() != 1) {
        throw ShapeError("mul_scalar_var: scalar operand must hold one element");
    }
    const double sv = s->value[0];
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), out.size()) * sv;
    return make_node(std::move(out), {a, s}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const double sv = self.parents[1]->value[0];
        const std::int64_t n = self.grad.size();
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            ArrMap(g.data(), n) += ConstArrMap(self.grad.data(), n) * sv;
        }
        if (self.parents[1]->requires_grad) {
            const double acc =
                (ConstArrMap(self.grad.data(), n) * ConstArrMap(av.data(), n)).sum();
            self.parents[1]->ensure_grad()[0] += acc;
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) =
        1.0 / (1.0 + (-ConstArrMap(a->value.data(), a->value.size())).exp());
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        ConstArrMap y(self.value.data(), n);
        ArrMap(g.data(), n) += ConstArrMap(self.grad.data(), n) * y * (1.0 - y);
    });
}

Var tanh_act(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), a->value.size()).tanh();
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        ConstArrMap y(self.value.data(), n);
        ArrMap(g.data(), n) += ConstArrMap(self.grad.data(), n) * (1.0 - y * y);
    });
}

Var sin_act(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), a->value.size()).sin();
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const Tensor& x = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        ArrMap(g.data(), n) +=
            ConstArrMap(self.grad.data(), n) * ConstArrMap(x.data(), n).cos();
    });
}

Var gelu(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    const std::int64_t n = a->value.size();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double* x = a->value.data();
    double* y = out.data();
#pragma omp parallel for if (n > kParallelCutoff)
    for (std::int64_t i = 0; i < n; ++i) {
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
    }
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        const Tensor& x = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        const double* xv = x.data();
        const double* gv = self.grad.data();
        double* gd = g.data();
#pragma omp parallel for if (n > kParallelCutoff)
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            gd[i] += gv[i] * (cdf + v * pdf);
        }
    });
}

Var abs_val(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), a->value.size()).abs();
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        const Tensor& x = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        ArrMap(g.data(), n) +=
            ConstArrMap(self.grad.data(), n) * ConstArrMap(x.data(), n).sign();
    });
}

Var sqrt_val(const Var& a) {
    Tensor out = Tensor::uninit(a->value.shape());
    ArrMap(out.data(), out.size()) = ConstArrMap(a->value.data(), a->value.size()).sqrt();
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t n = g.size();
        ConstArrMap y(self.value.data(), n);
        ArrMap(g.data(), n) += ConstArrMap(self.grad.data(), n) * 0.5 / y.max(1e-300);
    });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    check_rank(a, 2, "matmul lhs");
    check_rank(b, 2, "matmul rhs");
    const int m = a->value.dim(0), k = a->value.dim(1);
    const int k2 = b->value.dim(0), n = b->value.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dims differ " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
    Tensor out = Tensor::uninit({m, n});
    MatMap(out.data(), m, n).noalias() =
        ConstMatMap(a->value.data(), m, k) * ConstMatMap(b->value.data(), k, n);
    return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
        ConstMatMap g(self.grad.data(), m, n);
        if (self.parents[0]->requires_grad) {
            Tensor& ga = self.parents[0]->ensure_grad();
            MatMap(ga.data(), m, k).noalias() +=
                g * ConstMatMap(self.parents[1]->value.data(), k, n).transpose();
        }
        if (self.parents[1]->requires_grad) {
            Tensor& gb = self.parents[1]->ensure_grad();
            MatMap(gb.data(), k, n).noalias() +=
                ConstMatMap(self.parents[0]->value.data(), m, k).transpose() * g;
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    check_rank(a, 3, "bmm lhs");
    check_rank(b, 3, "bmm rhs");
    const int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    if (b->value.dim(0) != bs || b->value.dim(1) != k) {
        throw ShapeError("bmm: incompatible " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
    const int n = b->value.dim(2);
    Tensor out = Tensor::uninit({bs, m, n});
    {
        const double* ap = a->value.data();
        const double* bp = b->value.data();
        double* op = out.data();
#pragma omp parallel for if (static_cast<std::int64_t>(bs) * m * n > kParallelCutoff)
        for (int i = 0; i < bs; ++i) {
            MatMap(op + static_cast<std::int64_t>(i) * m * n, m, n).noalias() =
                ConstMatMap(ap + static_cast<std::int64_t>(i) * m * k, m, k) *
                ConstMatMap(bp + static_cast<std::int64_t>(i) * k * n, k, n);
        }
    }
    return make_node(std::move(out), {a, b}, [bs, m, k, n](Node& self) {
        const bool need_a = self.parents[0]->requires_grad;
        const bool need_b = self.parents[1]->requires_grad;
        const double* gp = self.grad.data();
        const double* ap = self.parents[0]->value.data();
        const double* bp = self.parents[1]->value.data();
        double* gap = need_a ? self.parents[0]->ensure_grad().data() : nullptr;
        double* gbp = need_b ? self.parents[1]->ensure_grad().data() : nullptr;
#pragma omp parallel for if (static_cast<std::int64_t>(bs) * m * n > kParallelCutoff)
        for (int i = 0; i < bs; ++i) {
            ConstMatMap g(gp + static_cast<std::int64_t>(i) * m * n, m, n);
            if (need_a) {
                MatMap(gap + static_cast<std::int64_t>(i) * m * k, m, k).noalias() +=
                    g * ConstMatMap(bp + static_cast<std::int64_t>(i) * k * n, k, n).transpose();
            }
            if (need_b) {
                MatMap(gbp + static_cast<std::int64_t>(i) * k * n, k, n).noalias() +=
                    ConstMatMap(ap + static_cast<std::int64_t>(i) * m * k, m, k).transpose() * g;
            }
        }
    });
}

Var bmm_nt(const Var& a, const Var& b) {
    check_rank(a, 3, "bmm_nt lhs");
    check_rank(b, 3, "bmm_nt rhs");
    const int bs = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    if (b->value.dim(0) != bs || b->value.dim(2) != k) {
        throw ShapeError("bmm_nt: incompatible " + a->value.shape_str() + " vs " +
                         b->value.shape_str());
    }
    const int n = b->value.dim(1);
    Tensor out = Tensor::uninit({bs, m, n});
    {
        const double* ap = a->value.data();
        const double* bp = b->value.data();
        double* op = out.data();
#pragma omp parallel for if (static_cast<std::int64_t>(bs) * m * n > kParallelCutoff)
        for (int i = 0; i < bs; ++i) {
            MatMap(op + static_cast<std::int64_t>(i) * m * n, m, n).noalias() =
                ConstMatMap(ap + static_cast<std::int64_t>(i) * m * k, m, k) *
                ConstMatMap(bp + static_cast<std::int64_t>(i) * n * k, n, k).transpose();
        }
    }
    return make_node(std::move(out), {a, b}, [bs, m, k, n](Node& self) {
        const bool need_a = self.parents[0]->requires_grad;
        const bool need_b = self.parents[1]->requires_grad;
        const double* gp = self.grad.data();
        const double* ap = self.parents[0]->value.data();
        const double* bp = self.parents[1]->value.data();
        double* gap = need_a ? self.parents[0]->ensure_grad().data() : nullptr;
        double* gbp = need_b ? self.parents[1]->ensure_grad().data() : nullptr;
#pragma omp parallel for if (static_cast<std::int64_t>(bs) * m * n > kParallelCutoff)
        for (int i = 0; i < bs; ++i) {
            ConstMatMap g(gp + static_cast<std::int64_t>(i) * m * n, m, n);
            if (need_a) {
                MatMap(gap + static_cast<std::int64_t>(i) * m * k, m, k).noalias() +=
                    g * ConstMatMap(bp + static_cast<std::int64_t>(i) * n * k, n, k);
            }
            if (need_b) {
                MatMap(gbp + static_cast<std::int64_t>(i) * n * k, n, k).noalias() +=
                    g.transpose() *
                    ConstMatMap(ap + static_cast<std::int64_t>(i) * m * k, m, k);
            }
        }
    });
}

namespace {

// Rowwise stable softmax of an {n,m} scratch matrix, in place.
void softmax_rows_inplace(double* s, int n, int m) {
    for (int i = 0; i < n; ++i) {
        ArrMap row(s + static_cast<std::int64_t>(i) * m, m);
        row -= row.maxCoeff();
        row = row.exp();
        row /= row.sum();
    }
}

} // namespace

Var attention(const Var& q, const Var& k, const Var& v, double scale) {
    check_rank(q, 3, "attention q");
    check_rank(k, 3, "attention k");
    check_rank(v, 3, "attention v");
    const int bs = q->value.dim(0), n = q->value.dim(1), d = q->value.dim(2);
    const int m = k->value.dim(1);
    if (k->value.dim(0) != bs || v->value.dim(0) != bs || k->value.dim(2) != d ||
        v->value.dim(1) != m || v->value.dim(2) != d) {
        throw ShapeError("attention: incompatible " + q->value.shape_str() + " / " +
                         k->value.shape_str() + " / " + v->value.shape_str());
    }
    Tensor out = Tensor::uninit({bs, n, d});
    {
        const double* qp = q->value.data();
        const double* kp = k->value.data();
        const double* vp = v->value.data();
        double* op = out.data();
#pragma omp parallel if (static_cast<std::int64_t>(bs) * n * m > kParallelCutoff)
        {
            Tensor scratch = Tensor::uninit({n, m});
#pragma omp for
            for (int b = 0; b < bs; ++b) {
                MatMap s(scratch.data(), n, m);
                s.noalias() = ConstMatMap(qp + static_cast<std::int64_t>(b) * n * d, n, d) *
                              ConstMatMap(kp + static_cast<std::int64_t>(b) * m * d, m, d)
                                  .transpose() *
                              scale;
                softmax_rows_inplace(scratch.data(), n, m);
                MatMap(op + static_cast<std::int64_t>(b) * n * d, n, d).noalias() =
                    s * ConstMatMap(vp + static_cast<std::int64_t>(b) * m * d, m, d);
            }
        }
    }
    return make_node(std::move(out), {q, k, v}, [bs, n, m, d, scale](Node& self) {
        const Var& qv = self.parents[0];
        const Var& kv = self.parents[1];
        const Var& vv = self.parents[2];
        const bool need_q = qv->requires_grad;
        const bool need_k = kv->requires_grad;
        const bool need_v = vv->requires_grad;
        const double* qp = qv->value.data();
        const double* kp = kv->value.data();
        const double* vp = vv->value.data();
        const double* gp = self.grad.data();
        double* gq = need_q ? qv->ensure_grad().data() : nullptr;
        double* gk = need_k ? kv->ensure_grad().data() : nullptr;
        double* gv = need_v ? vv->ensure_grad().data() : nullptr;
#pragma omp parallel if (static_cast<std::int64_t>(bs) * n * m > kParallelCutoff)
        {
            Tensor p_mem = Tensor::uninit({n, m});
            Tensor dp_mem = Tensor::uninit({n, m});
            double* p_buf = p_mem.data();
            double* dp_buf = dp_mem.data();
#pragma omp for
            for (int b = 0; b < bs; ++b) {
                ConstMatMap qb(qp + static_cast<std::int64_t>(b) * n * d, n, d);
                ConstMatMap kb(kp + static_cast<std::int64_t>(b) * m * d, m, d);
                ConstMatMap vb(vp + static_cast<std::int64_t>(b) * m * d, m, d);
                ConstMatMap go(gp + static_cast<std::int64_t>(b) * n * d, n, d);
                MatMap p(p_buf, n, m);
                p.noalias() = qb * kb.transpose() * scale;
                softmax_rows_inplace(p_buf, n, m);
                if (need_v) {
                    MatMap(gv + static_cast<std::int64_t>(b) * m * d, m, d).noalias() +=
                        p.transpose() * go;
                }
                if (need_q || need_k) {
                    MatMap dp(dp_buf, n, m);
                    dp.noalias() = go * vb.transpose();
                    for (int i = 0; i < n; ++i) {
                        ArrMap dp_row(dp_buf + static_cast<std::int64_t>(i) * m, m);
                        ConstArrMap p_row(p_buf + static_cast<std::int64_t>(i) * m, m);
                        const double dot = (dp_row * p_row).sum();
                        dp_row = (dp_row - dot) * p_row * scale;
                    }
                    if (need_q) {
                        MatMap(gq + static_cast<std::int64_t>(b) * n * d, n, d).noalias() +=
                            dp * kb;
                    }
                    if (need_k) {
                        MatMap(gk + static_cast<std::int64_t>(b) * m * d, m, d).noalias() +=
                            dp.transpose() * qb;
                    }
                }
            }
        }
    });
}

namespace {

// Joint softmax over two key blocks; p1/p2 receive the normalized
// probabilities. Cross-block statistics combine with commutative max/add.
void two_block_softmax(double* s1, double* s2, int rows, int n1, int n2) {
    for (int i = 0; i < rows; ++i) {
        ArrMap r1(s1 + static_cast<std::int64_t>(i) * n1, n1);
        ArrMap r2(s2 + static_cast<std::int64_t>(i) * n2, n2);
        const double m = std::max(r1.maxCoeff(), r2.maxCoeff());
        r1 = (r1 - m).exp();
        r2 = (r2 - m).exp();
        const double z = r1.sum() + r2.sum();
        r1 /= z;
        r2 /= z;
    }
}

} // namespace

Var attention_two_block(const Var& q, const Var& k1, const Var& v1, const Var& k2, const Var& v2,
                        double scale) {
    check_rank(q, 3, "attention_two_block q");
    const int bs = q->value.dim(0), m = q->value.dim(1), d = q->value.dim(2);
    const int n1 = k1->value.dim(1), n2 = k2->value.dim(1);
    for (const Var* t : {&k1, &v1, &k2, &v2}) {
        if ((*t)->value.rank() != 3 || (*t)->value.dim(0) != bs || (*t)->value.dim(2) != d) {
            throw ShapeError("attention_two_block: incompatible block shapes");
        }
    }
    if (v1->value.dim(1) != n1 || v2->value.dim(1) != n2) {
        throw ShapeError("attention_two_block: key/value token counts differ");
    }
    Tensor out = Tensor::uninit({bs, m, d});
    {
        const double* qp = q->value.data();
        const double* k1p = k1->value.data();
        const double* v1p = v1->value.data();
        const double* k2p = k2->value.data();
        const double* v2p = v2->value.data();
        double* op = out.data();
#pragma omp parallel if (static_cast<std::int64_t>(bs) * m * (n1 + n2) > kParallelCutoff)
        {
            Tensor s1 = Tensor::uninit({m, n1});
            Tensor s2 = Tensor::uninit({m, n2});
            Tensor o1 = Tensor::uninit({m, d});
            Tensor o2 = Tensor::uninit({m, d});
#pragma omp for
            for (int b = 0; b < bs; ++b) {
                ConstMatMap qb(qp + static_cast<std::int64_t>(b) * m * d, m, d);
                MatMap(s1.data(), m, n1).noalias() =
                    qb * ConstMatMap(k1p + static_cast<std::int64_t>(b) * n1 * d, n1, d)
                             .transpose() *
                    scale;
                MatMap(s2.data(), m, n2).noalias() =
                    qb * ConstMatMap(k2p + static_cast<std::int64_t>(b) * n2 * d, n2, d)
                             .transpose() *
                    scale;
                two_block_softmax(s1.data(), s2.data(), m, n1, n2);
                MatMap(o1.data(), m, d).noalias() =
                    ConstMatMap(s1.data(), m, n1) *
                    ConstMatMap(v1p + static_cast<std::int64_t>(b) * n1 * d, n1, d);
                MatMap(o2.data(), m, d).noalias() =
                    ConstMatMap(s2.data(), m, n2) *
                    ConstMatMap(v2p + static_cast<std::int64_t>(b) * n2 * d, n2, d);
                // one commutative elementwise add keeps the block swap exact
                MatMap(op + static_cast<std::int64_t>(b) * m * d, m, d) =
                    ConstMatMap(o1.data(), m, d) + ConstMatMap(o2.data(), m, d);
            }
        }
    }
    return make_node(
        std::move(out), {q, k1, v1, k2, v2}, [bs, m, d, n1, n2, scale](Node& self) {
            const Var& qv = self.parents[0];
            const Var& k1v = self.parents[1];
            const Var& v1v = self.parents[2];
            const Var& k2v = self.parents[3];
            const Var& v2v = self.parents[4];
            const bool need_q = qv->requires_grad;
            const bool need_k1 = k1v->requires_grad, need_v1 = v1v->requires_grad;
            const bool need_k2 = k2v->requires_grad, need_v2 = v2v->requires_grad;
            const double* qp = qv->value.data();
            const double* k1p = k1v->value.data();
            const double* v1p = v1v->value.data();
            const double* k2p = k2v->value.data();
            const double* v2p = v2v->value.data();
            const double* gp = self.grad.data();
            double* gq = need_q ? qv->ensure_grad().data() : nullptr;
            double* gk1 = need_k1 ? k1v->ensure_grad().data() : nullptr;
            double* gv1 = need_v1 ? v1v->ensure_grad().data() : nullptr;
            double* gk2 = need_k2 ? k2v->ensure_grad().data() : nullptr;
            double* gv2 = need_v2 ? v2v->ensure_grad().data() : nullptr;
#pragma omp parallel if (static_cast<std::int64_t>(bs) * m * (n1 + n2) > kParallelCutoff)
            {
                Tensor p1 = Tensor::uninit({m, n1});
                Tensor p2 = Tensor::uninit({m, n2});
                Tensor dp1 = Tensor::uninit({m, n1});
                Tensor dp2 = Tensor::uninit({m, n2});
#pragma omp for
                for (int b = 0; b < bs; ++b) {
                    ConstMatMap qb(qp + static_cast<std::int64_t>(b) * m * d, m, d);
                    ConstMatMap k1b(k1p + static_cast<std::int64_t>(b) * n1 * d, n1, d);
                    ConstMatMap v1b(v1p + static_cast<std::int64_t>(b) * n1 * d, n1, d);
                    ConstMatMap k2b(k2p + static_cast<std::int64_t>(b) * n2 * d, n2, d);
                    ConstMatMap v2b(v2p + static_cast<std::int64_t>(b) * n2 * d, n2, d);
                    ConstMatMap go(gp + static_cast<std::int64_t>(b) * m * d, m, d);
                    MatMap(p1.data(), m, n1).noalias() = qb * k1b.transpose() * scale;
                    MatMap(p2.data(), m, n2).noalias() = qb * k2b.transpose() * scale;
                    two_block_softmax(p1.data(), p2.data(), m, n1, n2);
                    if (need_v1) {
                        MatMap(gv1 + static_cast<std::int64_t>(b) * n1 * d, n1, d).noalias() +=
                            ConstMatMap(p1.data(), m, n1).transpose() * go;
                    }
                    if (need_v2) {
                        MatMap(gv2 + static_cast<std::int64_t>(b) * n2 * d, n2, d).noalias() +=
                            ConstMatMap(p2.data(), m, n2).transpose() * go;
                    }
                    if (!(need_q || need_k1 || need_k2)) continue;
                    MatMap(dp1.data(), m, n1).noalias() = go * v1b.transpose();
                    MatMap(dp2.data(), m, n2).noalias() = go * v2b.transpose();
                    for (int i = 0; i < m; ++i) {
                        ArrMap d1(dp1.data() + static_cast<std::int64_t>(i) * n1, n1);
                        ArrMap d2(dp2.data() + static_cast<std::int64_t>(i) * n2, n2);
                        ConstArrMap r1(p1.data() + static_cast<std::int64_t>(i) * n1, n1);
                        ConstArrMap r2(p2.data() + static_cast<std::int64_t>(i) * n2, n2);
                        const double dot = (d1 * r1).sum() + (d2 * r2).sum();
                        d1 = (d1 - dot) * r1 * scale;
                        d2 = (d2 - dot) * r2 * scale;
                    }
                    if (need_q) {
                        MatMap gqb(gq + static_cast<std::int64_t>(b) * m * d, m, d);
                        gqb.noalias() += ConstMatMap(dp1.data(), m, n1) * k1b;
                        gqb.noalias() += ConstMatMap(dp2.data(), m, n2) * k2b;
                    }
                    if (need_k1) {
                        MatMap(gk1 + static_cast<std::int64_t>(b) * n1 * d, n1, d).noalias() +=
                            ConstMatMap(dp1.data(), m, n1).transpose() * qb;
                    }
                    if (need_k2) {
                        MatMap(gk2 + static_cast<std::int64_t>(b) * n2 * d, n2, d).noalias() +=
                            ConstMatMap(dp2.data(), m, n2).transpose() * qb;
                    }
                }
            }
        });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    check_rank(x, 2, "linear input");
    check_rank(w, 2, "linear weight");
    const int n = x->value.dim(0), in = x->value.dim(1);
    if (w->value.dim(0) != in) {
        throw ShapeError("linear: weight rows != input cols, " + x->value.shape_str() + " vs " +
                         w->value.shape_str());
    }
    const int out_dim = w->value.dim(1);
    if (b && b->value.size() != out_dim) {
        throw ShapeError("linear: bias size mismatch");
    }
    Tensor out = Tensor::uninit({n, out_dim});
    MatMap om(out.data(), n, out_dim);
    om.noalias() = ConstMatMap(x->value.data(), n, in) * ConstMatMap(w->value.data(), in, out_dim);
    if (b) {
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), out_dim);
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(out), std::move(parents), [n, in, out_dim](Node& self) {
        ConstMatMap g(self.grad.data(), n, out_dim);
        if (self.parents[0]->requires_grad) {
            MatMap(self.parents[0]->ensure_grad().data(), n, in).noalias() +=
                g * ConstMatMap(self.parents[1]->value.data(), in, out_dim).transpose();
        }
        if (self.parents[1]->requires_grad) {
            MatMap(self.parents[1]->ensure_grad().data(), in, out_dim).noalias() +=
                ConstMatMap(self.parents[0]->value.data(), n, in).transpose() * g;
        }
        if (self.parents.size() == 3 && self.parents[2]->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->ensure_grad().data(), out_dim) +=
                g.colwise().sum();
        }
    });
}

// ------------------------------------------------------------------- shape

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.alias(std::move(shape)); // zero-copy view
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        self.parents[0]->accumulate(self.grad); // flat accumulate, same size
    });
}

namespace {

// out[i] = in[perm_map[i]] for a permutation of axes.
std::vector<std::int64_t> permutation_map(const std::vector<int>& in_shape,
                                          const std::vector<int>& perm) {
    const int r = static_cast<int>(in_shape.size());
    std::vector<std::int64_t> in_strides(r, 1);
    for (int i = r - 2; i >= 0; --i)
        in_strides[i] = in_strides[i + 1] * in_shape[static_cast<std::size_t>(i + 1)];
    std::vector<int> out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
    const std::int64_t total = Tensor::shape_size(out_shape);
    std::vector<std::int64_t> map(static_cast<std::size_t>(total));
    std::vector<int> idx(r, 0);
    for (std::int64_t o = 0; o < total; ++o) {
        std::int64_t src = 0;
        for (int i = 0; i < r; ++i) src += in_strides[static_cast<std::size_t>(perm[i])] * idx[i];
        map[static_cast<std::size_t>(o)] = src;
        for (int i = r - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return map;
}

} // namespace

Var permute(const Var& a, std::vector<int> perm) {
    const auto& in_shape = a->value.shape();
    if (perm.size() != in_shape.size()) {
        throw ShapeError("permute: rank mismatch");
    }
    std::vector<int> out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
    auto map = permutation_map(in_shape, perm);
    Tensor out = Tensor::uninit(out_shape);
    const double* src = a->value.data();
    double* dst = out.data();
    const std::int64_t total = out.size();
#pragma omp parallel for if (total > kParallelCutoff)
    for (std::int64_t i = 0; i < total; ++i) dst[i] = src[map[static_cast<std::size_t>(i)]];
    return make_node(std::move(out), {a}, [map = std::move(map)](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        const std::int64_t total = self.grad.size();
        for (std::int64_t i = 0; i < total; ++i)
            g[map[static_cast<std::size_t>(i)]] += self.grad[i];
    });
}

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& base = parts[0]->value.shape();
    int axis_total = 0;
    for (const auto& p : parts) {
        const auto& s = p->value.shape();
        if (s.size() != base.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis && s[i] != base[i]) {
                throw ShapeError("concat: shape mismatch off-axis " + p->value.shape_str());
            }
        }
        axis_total += s[static_cast<std::size_t>(axis)];
    }
    std::vector<int> out_shape = base;
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    Tensor out = Tensor::uninit(out_shape);
    const std::int64_t outer = outer_size(out_shape, axis);
    const std::int64_t inner = inner_size(out_shape, axis);
    const std::int64_t out_block = static_cast<std::int64_t>(axis_total) * inner;
    std::int64_t offset = 0;
    std::vector<std::int64_t> part_blocks;
    for (const auto& p : parts) {
        const std::int64_t blk = static_cast<std::int64_t>(p->value.dim(axis)) * inner;
        part_blocks.push_back(blk);
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(out.data() + o * out_block + offset, p->value.data() + o * blk,
                        static_cast<std::size_t>(blk) * sizeof(double));
        }
        offset += blk;
    }
    return make_node(std::move(out), parts,
                     [outer, out_block, part_blocks = std::move(part_blocks)](Node& self) {
                         std::int64_t offset = 0;
                         for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                             const std::int64_t blk = part_blocks[pi];
                             if (self.parents[pi]->requires_grad) {
                                 Tensor& g = self.parents[pi]->ensure_grad();
                                 for (std::int64_t o = 0; o < outer; ++o) {
                                     const double* src = self.grad.data() + o * out_block + offset;
                                     double* dst = g.data() + o * blk;
                                     for (std::int64_t i = 0; i < blk; ++i) dst[i] += src[i];
                                 }
                             }
                             offset += blk;
                         }
                     });
}

Var slice(const Var& a, int axis, int start, int len) {
    const auto& shape = a->value.shape();
    if (axis < 0 || axis >= static_cast<int>(shape.size()) || start < 0 || len <= 0 ||
        start + len > shape[static_cast<std::size_t>(axis)]) {
        throw ShapeError("slice: bad range");
    }
    std::vector<int> out_shape = shape;
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor out = Tensor::uninit(out_shape);
    const std::int64_t outer = outer_size(shape, axis);
    const std::int64_t inner = inner_size(shape, axis);
    const std::int64_t in_block =
        static_cast<std::int64_t>(shape[static_cast<std::size_t>(axis)]) * inner;
    const std::int64_t out_block = static_cast<std::int64_t>(len) * inner;
    const std::int64_t skip = static_cast<std::int64_t>(start) * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(out.data() + o * out_block, a->value.data() + o * in_block + skip,
                    static_cast<std::size_t>(out_block) * sizeof(double));
    }
    return make_node(std::move(out), {a}, [outer, in_block, out_block, skip](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + o * out_block;
            double* dst = g.data() + o * in_block + skip;
            for (std::int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
        }
    });
}

// --------------------------------------------------- reductions / broadcasts

Var sum_all(const Var& a) {
    Tensor out({1});
    out[0] = a->value.sum();
    return make_node(std::move(out), {a}, [](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        ArrMap(g.data(), g.size()) += self.grad[0];
    });
}

Var mean_all(const Var& a) {
    Tensor out({1});
    out[0] = a->value.mean();
    const double inv = 1.0 / static_cast<double>(a->value.size());
    return make_node(std::move(out), {a}, [inv](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        ArrMap(g.data(), g.size()) += self.grad[0] * inv;
    });
}

Var mean_hw(const Var& a) {
    check_rank(a, 3, "mean_hw");
    const int h = a->value.dim(0), w = a->value.dim(1), c = a->value.dim(2);
    Tensor out({c});
    const double* src = a->value.data();
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (std::int64_t p = 0; p < hw; ++p) {
        for (int k = 0; k < c; ++k) out[k] += src[p * c + k];
    }
    const double inv = 1.0 / static_cast<double>(hw);
    for (int k = 0; k < c; ++k) out[k] *= inv;
    return make_node(std::move(out), {a}, [hw, c, inv](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::int64_t p = 0; p < hw; ++p) {
            for (int k = 0; k < c; ++k) g[p * c + k] += self.grad[k] * inv;
        }
    });
}

Var add_channel(const Var& a, const Var& b) {
    const int c = a->value.dim(a->value.rank() - 1);
    if (b->value.rank() != 1 || b->value.dim(0) != c) {
        throw ShapeError("add_channel: channel mismatch");
    }
    Tensor out = Tensor::uninit(a->value.shape());
    const std::int64_t rows = a->value.size() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (int k = 0; k < c; ++k) out[r * c + k] = a->value[r * c + k] + b->value[k];
    }
    return make_node(std::move(out), {a, b}, [rows, c](Node& self) {
        if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                for (int k = 0; k < c; ++k) g[k] += self.grad[r * c + k];
            }
        }
    });
}

Var mul_channel(const Var& a, const Var& s) {
    const int c = a->value.dim(a->value.rank() - 1);
    if (s->value.rank() != 1 || s->value.dim(0) != c) {
        throw ShapeError("mul_channel: channel mismatch");
    }
    Tensor out = Tensor::uninit(a->value.shape());
    const std::int64_t rows = a->value.size() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (int k = 0; k < c; ++k) out[r * c + k] = a->value[r * c + k] * s->value[k];
    }
    return make_node(std::move(out), {a, s}, [rows, c](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& sv = self.parents[1]->value;
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                for (int k = 0; k < c; ++k) g[r * c + k] += self.grad[r * c + k] * sv[k];
            }
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                for (int k = 0; k < c; ++k) g[k] += self.grad[r * c + k] * av[r * c + k];
            }
        }
    });
}

Var softmax_last(const Var& a) {
    const int m = a->value.dim(a->value.rank() - 1);
    const std::int64_t rows = a->value.size() / m;
    Tensor out = Tensor::uninit(a->value.shape());
    const double* xp = a->value.data();
    double* yp = out.data();
#pragma omp parallel for if (rows * m > kParallelCutoff)
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = xp + r * m;
        double* y = yp + r * m;
        const double mx = ConstArrMap(x, m).maxCoeff();
        if (std::isinf(mx) && mx > 0) {
            // Saturated logits: all mass on the +inf entries.
            int k = 0;
            for (int i = 0; i < m; ++i) k += (x[i] == mx) ? 1 : 0;
            for (int i = 0; i < m; ++i) y[i] = (x[i] == mx) ? 1.0 / k : 0.0;
            continue;
        }
        ArrMap ya(y, m);
        ya = (ConstArrMap(x, m) - mx).exp();
        ya /= ya.sum();
    }
    return make_node(std::move(out), {a}, [rows, m](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        const double* yp = self.value.data();
        const double* dyp = self.grad.data();
        double* gp = g.data();
#pragma omp parallel for if (rows * m > kParallelCutoff)
        for (std::int64_t r = 0; r < rows; ++r) {
            ConstArrMap y(yp + r * m, m);
            ConstArrMap dy(dyp + r * m, m);
            const double dot = (dy * y).sum();
            ArrMap(gp + r * m, m) += (dy - dot) * y;
        }
    });
}

// ------------------------------------------------------ structured image ops

namespace {

constexpr std::int64_t kConvTileBytes = 8LL << 20;

void fill_im2col(const Tensor& x, int kh, int kw, int stride, int pad, int wo, int cin, int r0,
                 int rows, double* m) {
    const int h = x.dim(0), w = x.dim(1);
    const int k2c = kh * kw * cin;
    std::memset(m, 0, static_cast<std::size_t>(rows) * wo * k2c * sizeof(double));
#pragma omp parallel for if (static_cast<std::int64_t>(rows) * wo * k2c > kParallelCutoff)
    for (int oy = 0; oy < rows; ++oy) {
        const int iy0 = (r0 + oy) * stride - pad;
        for (int ox = 0; ox < wo; ++ox) {
            const int ix0 = ox * stride - pad;
            double* row = m + (static_cast<std::int64_t>(oy) * wo + ox) * k2c;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= w) continue;
                    std::memcpy(row + (static_cast<std::int64_t>(ky) * kw + kx) * cin,
                                x.data() + (static_cast<std::int64_t>(iy) * w + ix) * cin,
                                static_cast<std::size_t>(cin) * sizeof(double));
                }
            }
        }
    }
}

} // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    check_rank(x, 3, "conv2d input");
    if (w->value.rank() != 4) throw ShapeError("conv2d weight must be {KH,KW,Cin,Cout}");
    const int h = x->value.dim(0), wd = x->value.dim(1), cin = x->value.dim(2);
    const int kh = w->value.dim(0), kw = w->value.dim(1);
    if (w->value.dim(2) != cin) {
        throw ShapeError("conv2d: weight Cin " + std::to_string(w->value.dim(2)) +
                         " != input channels " + std::to_string(cin));
    }
    const int cout = w->value.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");
    const int k2c = kh * kw * cin;
    const int tile = std::max<int>(
        1, static_cast<int>(kConvTileBytes / (static_cast<std::int64_t>(wo) * k2c * 8 + 1)));

    Tensor out = Tensor::uninit({ho, wo, cout});
    {
        Tensor m = Tensor::uninit({std::min(tile, ho) * wo, k2c});
        ConstMatMap wm(w->value.data(), k2c, cout);
        for (int r0 = 0; r0 < ho; r0 += tile) {
            const int rows = std::min(tile, ho - r0);
            fill_im2col(x->value, kh, kw, stride, pad, wo, cin, r0, rows, m.data());
            MatMap(out.data() + static_cast<std::int64_t>(r0) * wo * cout,
                   static_cast<std::int64_t>(rows) * wo, cout)
                .noalias() = ConstMatMap(m.data(), static_cast<std::int64_t>(rows) * wo, k2c) * wm;
        }
        if (b) {
            MatMap(out.data(), static_cast<std::int64_t>(ho) * wo, cout).rowwise() +=
                Eigen::Map<const Eigen::RowVectorXd>(b->value.data(), cout);
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(
        std::move(out), std::move(parents),
        [h, wd, cin, kh, kw, cout, ho, wo, stride, pad, k2c, tile](Node& self) {
            const Var& xv = self.parents[0];
            const Var& wv = self.parents[1];
            const bool need_x = xv->requires_grad;
            const bool need_w = wv->requires_grad;
            const bool has_b = self.parents.size() == 3;
            Tensor m = Tensor::uninit({std::min(tile, ho) * wo, k2c});
            Tensor gcols = Tensor::uninit({std::min(tile, ho) * wo, k2c});
            for (int r0 = 0; r0 < ho; r0 += tile) {
                const int rows = std::min(tile, ho - r0);
                const std::int64_t nrows = static_cast<std::int64_t>(rows) * wo;
                ConstMatMap g(self.grad.data() + static_cast<std::int64_t>(r0) * wo * cout, nrows,
                              cout);
                if (need_w) {
                    fill_im2col(xv->value, kh, kw, stride, pad, wo, cin, r0, rows, m.data());
                    MatMap(wv->ensure_grad().data(), k2c, cout).noalias() +=
                        ConstMatMap(m.data(), nrows, k2c).transpose() * g;
                }
                if (need_x) {
                    MatMap(gcols.data(), nrows, k2c).noalias() =
                        g * ConstMatMap(wv->value.data(), k2c, cout).transpose();
                    Tensor& gx = xv->ensure_grad();
                    for (int oy = 0; oy < rows; ++oy) {
                        const int iy0 = (r0 + oy) * stride - pad;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix0 = ox * stride - pad;
                            const double* row =
                                gcols.data() + (static_cast<std::int64_t>(oy) * wo + ox) * k2c;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = iy0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ix0 + kx;
                                    if (ix < 0 || ix >= wd) continue;
                                    double* dst =
                                        gx.data() +
                                        (static_cast<std::int64_t>(iy) * wd + ix) * cin;
                                    const double* src =
                                        row + (static_cast<std::int64_t>(ky) * kw + kx) * cin;
                                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                                }
                            }
                        }
                    }
                }
            }
            if (has_b && self.parents[2]->requires_grad) {
                Eigen::Map<Eigen::RowVectorXd>(self.parents[2]->ensure_grad().data(), cout) +=
                    ConstMatMap(self.grad.data(), static_cast<std::int64_t>(ho) * wo, cout)
                        .colwise()
                        .sum();
            }
        });
}

Var pixel_shuffle(const Var& x, int factor) {
    check_rank(x, 3, "pixel_shuffle");
    const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    const int f2 = factor * factor;
    if (c % f2 != 0) {
        throw ShapeError("pixel_shuffle: channels " + std::to_string(c) +
                         " not divisible by factor^2 " + std::to_string(f2));
    }
    const int co = c / f2;
    Tensor out = Tensor::uninit({h * factor, w * factor, co});
#pragma omp parallel for if (out.size() > kParallelCutoff)
    for (int y = 0; y < h * factor; ++y) {
        const int yi = y / factor, dy = y % factor;
        for (int xo = 0; xo < w * factor; ++xo) {
            const int xi = xo / factor, dx = xo % factor;
            const double* src = x->value.data() + ((static_cast<std::int64_t>(yi) * w + xi) * c);
            double* dst = out.data() + ((static_cast<std::int64_t>(y) * w * factor + xo) * co);
            for (int k = 0; k < co; ++k) dst[k] = src[k * f2 + dy * factor + dx];
        }
    }
    return make_node(std::move(out), {x}, [h, w, c, co, factor, f2](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int y = 0; y < h * factor; ++y) {
            const int yi = y / factor, dy = y % factor;
            for (int xo = 0; xo < w * factor; ++xo) {
                const int xi = xo / factor, dx = xo % factor;
                double* dst = g.data() + ((static_cast<std::int64_t>(yi) * w + xi) * c);
                const double* src =
                    self.grad.data() + ((static_cast<std::int64_t>(y) * w * factor + xo) * co);
                for (int k = 0; k < co; ++k) dst[k * f2 + dy * factor + dx] += src[k];
            }
        }
    });
}

Var pixel_unshuffle(const Var& x, int factor) {
    check_rank(x, 3, "pixel_unshuffle");
    const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    if (h % factor != 0 || w % factor != 0) {
        throw ShapeError("pixel_unshuffle: spatial size not divisible by factor");
    }
    const int ho = h / factor, wo = w / factor, co = c * factor * factor;
    Tensor out = Tensor::uninit({ho, wo, co});
    for (int y = 0; y < h; ++y) {
        const int yo = y / factor, dy = y % factor;
        for (int xx = 0; xx < w; ++xx) {
            const int xo = xx / factor, dx = xx % factor;
            const double* src = x->value.data() + (static_cast<std::int64_t>(y) * w + xx) * c;
            double* dst = out.data() + (static_cast<std::int64_t>(yo) * wo + xo) * co;
            for (int k = 0; k < c; ++k) dst[k * factor * factor + dy * factor + dx] = src[k];
        }
    }
    return make_node(std::move(out), {x}, [h, w, c, wo, co, factor](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int y = 0; y < h; ++y) {
            const int yo = y / factor, dy = y % factor;
            for (int xx = 0; xx < w; ++xx) {
                const int xo = xx / factor, dx = xx % factor;
                double* dst = g.data() + (static_cast<std::int64_t>(y) * w + xx) * c;
                const double* src =
                    self.grad.data() + (static_cast<std::int64_t>(yo) * wo + xo) * co;
                for (int k = 0; k < c; ++k) dst[k] += src[k * factor * factor + dy * factor + dx];
            }
        }
    });
}

Var avg_pool2(const Var& x) {
    check_rank(x, 3, "avg_pool2");
    const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    const int ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw ShapeError("avg_pool2: input too small");
    Tensor out({ho, wo, c});
    for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
            double* dst = out.data() + (static_cast<std::int64_t>(y) * wo + xx) * c;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    const double* src =
                        x->value.data() +
                        ((static_cast<std::int64_t>(2 * y + dy)) * w + (2 * xx + dx)) * c;
                    for (int k = 0; k < c; ++k) dst[k] += 0.25 * src[k];
                }
            }
        }
    }
    return make_node(std::move(out), {x}, [w, c, ho, wo](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int y = 0; y < ho; ++y) {
            for (int xx = 0; xx < wo; ++xx) {
                const double* src = self.grad.data() + (static_cast<std::int64_t>(y) * wo + xx) * c;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        double* dst =
                            g.data() +
                            ((static_cast<std::int64_t>(2 * y + dy)) * w + (2 * xx + dx)) * c;
                        for (int k = 0; k < c; ++k) dst[k] += 0.25 * src[k];
                    }
                }
            }
        }
    });
}

Var gather_rows(const Var& table, std::vector<int> indices) {
    check_rank(table, 2, "gather_rows");
    const int rows = table->value.dim(0), c = table->value.dim(1);
    for (int idx : indices) {
        if (idx < 0 || idx >= rows) throw ShapeError("gather_rows: index out of range");
    }
    const int n = static_cast<int>(indices.size());
    Tensor out = Tensor::uninit({n, c});
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * c,
                    table->value.data() +
                        static_cast<std::int64_t>(indices[static_cast<std::size_t>(i)]) * c,
                    static_cast<std::size_t>(c) * sizeof(double));
    }
    return make_node(std::move(out), {table}, [indices = std::move(indices), c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* src = self.grad.data() + static_cast<std::int64_t>(i) * c;
            double* dst = g.data() + static_cast<std::int64_t>(indices[i]) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
    });
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

Var window_partition(const Var& x, int window) {
    check_rank(x, 3, "window_partition");
    if (window <= 0) throw ShapeError("window_partition: window must be positive");
    const int h = x->value.dim(0), w = x->value.dim(1), c = x->value.dim(2);
    const int gh = (h + window - 1) / window, gw = (w + window - 1) / window;
    const int p = gh * gw, tokens = window * window;
    // src pixel for each (window, token); reflect handles any pad amount.
    std::vector<std::int64_t> map(static_cast<std::size_t>(p) * tokens);
    for (int wi = 0; wi < p; ++wi) {
        const int wy = wi / gw, wx = wi % gw;
        for (int t = 0; t < tokens; ++t) {
            const int py = wy * window + t / window;
            const int px = wx * window + t % window;
            const int sy = reflect_index(py, h);
            const int sx = reflect_index(px, w);
            map[static_cast<std::size_t>(wi) * tokens + t] =
                (static_cast<std::int64_t>(sy) * w + sx) * c;
        }
    }
    Tensor out = Tensor::uninit({p, tokens, c});
    const std::int64_t entries = static_cast<std::int64_t>(map.size());
#pragma omp parallel for if (entries * c > kParallelCutoff)
    for (std::int64_t i = 0; i < entries; ++i) {
        std::memcpy(out.data() + i * c, x->value.data() + map[static_cast<std::size_t>(i)],
                    static_cast<std::size_t>(c) * sizeof(double));
    }
    return make_node(std::move(out), {x}, [map = std::move(map), c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double* src = self.grad.data() + static_cast<std::int64_t>(i) * c;
            double* dst = g.data() + map[i];
            for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
    });
}

Var window_reverse(const Var& seq, int height, int width, int window) {
    check_rank(seq, 3, "window_reverse");
    const int gh = (height + window - 1) / window, gw = (width + window - 1) / window;
    const int p = gh * gw, tokens = window * window;
    if (seq->value.dim(0) != p || seq->value.dim(1) != tokens) {
        throw ShapeError("window_reverse: sequence " + seq->value.shape_str() +
                         " does not partition " + std::to_string(height) + "x" +
                         std::to_string(width) + " with window " + std::to_string(window));
    }
    const int c = seq->value.dim(2);
    std::vector<std::int64_t> map(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const int wi = (y / window) * gw + (x / window);
            const int t = (y % window) * window + (x % window);
            map[static_cast<std::size_t>(y) * width + x] =
                (static_cast<std::int64_t>(wi) * tokens + t) * c;
        }
    }
    Tensor out = Tensor::uninit({height, width, c});
    const std::int64_t entries = static_cast<std::int64_t>(map.size());
#pragma omp parallel for if (entries * c > kParallelCutoff)
    for (std::int64_t i = 0; i < entries; ++i) {
        std::memcpy(out.data() + i * c, seq->value.data() + map[static_cast<std::size_t>(i)],
                    static_cast<std::size_t>(c) * sizeof(double));
    }
    return make_node(std::move(out), {seq}, [map = std::move(map), c](Node& self) {
        if (!self.parents[0]->requires_grad) return;
        Tensor& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < map.size(); ++i) {
            const double* src = self.grad.data() + static_cast<std::int64_t>(i) * c;
            double* dst = g.data() + map[i];
            for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
    });
}

} // namespace ad
} // namespace reflexsplit
