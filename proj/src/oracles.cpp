#include "reflexsplit/oracles.hpp"

#include <cmath>
#include <vector>

#include "reflexsplit/common.hpp"

namespace reflexsplit::oracle {

double screen_blend_pixel(double t, double r, double gamma1, double gamma2) {
    const double v = gamma1 * t + gamma2 * r - (gamma1 * gamma2) * (t * r);
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

Tensor matmul(const Tensor& x, const Tensor& w) {
    const int n = x.dim(0), in = x.dim(1), out = w.dim(1);
    Tensor y({n, out});
    for (int i = 0; i < n; ++i) {
        for (int o = 0; o < out; ++o) {
            double acc = 0.0;
            for (int a = 0; a < in; ++a) acc += x.at(i, a) * w.at(a, o);
            y.at(i, o) = acc;
        }
    }
    return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* b) {
    Tensor y = matmul(x, w);
    if (b) {
        for (int i = 0; i < y.dim(0); ++i) {
            for (int o = 0; o < y.dim(1); ++o) y.at(i, o) += (*b)[o];
        }
    }
    return y;
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor* b) {
    const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(1);
    Tensor y({h, wd, cout});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            for (int o = 0; o < cout; ++o) {
                double acc = b ? (*b)[o] : 0.0;
                for (int c = 0; c < cin; ++c) acc += x.at(i, j, c) * w.at(c, o);
                y.at(i, j, o) = acc;
            }
        }
    }
    return y;
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor* b) {
    const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(3);
    Tensor y({h, wd, cout});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            for (int o = 0; o < cout; ++o) {
                double acc = b ? (*b)[o] : 0.0;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int yy = i + ky - 1, xx = j + kx - 1;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                        for (int c = 0; c < cin; ++c) {
                            acc += x.at(yy, xx, c) *
                                   w[((static_cast<std::int64_t>(ky) * 3 + kx) * cin + c) * cout +
                                     o];
                        }
                    }
                }
                y.at(i, j, o) = acc;
            }
        }
    }
    return y;
}

namespace {

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double gelu_s(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

} // namespace

Tensor split_gate(const Tensor& x, const GateWeights& g) {
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int half = c / 2;
    Tensor sliced({h, w, half});
    const int offset = g.first_half ? 0 : half;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < half; ++k) sliced.at(i, j, k) = x.at(i, j, offset + k);
    Tensor gated = conv1x1(sliced, g.gate_w, &g.gate_b);
    for (std::int64_t i = 0; i < gated.size(); ++i) gated[i] = sigmoid_s(gated[i]);
    return conv1x1(gated, g.expand_w, &g.expand_b);
}

Tensor crgf(const Tensor& ctx, const Tensor& semantic, const Tensor& texture,
            const CrgfWeights& w) {
    Tensor raw(ctx.shape());
    for (std::int64_t i = 0; i < raw.size(); ++i) raw[i] = ctx[i] + semantic[i] + texture[i];
    const Tensor g1_raw = split_gate(raw, w.g1);
    const Tensor g2_ctx = split_gate(ctx, w.g2);
    const Tensor g1_ctx = split_gate(ctx, w.g1);
    const Tensor g2_raw = split_gate(raw, w.g2);
    Tensor main_path(ctx.shape()), aux_path(ctx.shape());
    for (std::int64_t i = 0; i < main_path.size(); ++i) {
        main_path[i] = g1_raw[i] * g2_ctx[i];
        aux_path[i] = g1_ctx[i] * g2_raw[i];
    }
    const double m = std::max(w.mix_logits[0], w.mix_logits[1]);
    const double e1 = std::exp(w.mix_logits[0] - m), e2 = std::exp(w.mix_logits[1] - m);
    const double w1 = e1 / (e1 + e2), w2 = e2 / (e1 + e2);
    const Tensor p1 = conv1x1(main_path, w.phi1_w, &w.phi1_b);
    const Tensor p2 = conv1x1(aux_path, w.phi2_w, &w.phi2_b);
    Tensor out(ctx.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = w1 * p1[i] + w2 * p2[i];
    return out;
}

Tensor attention_tokens(const Tensor& tokens, const AttentionWeights& w) {
    const int n = tokens.dim(0), c = tokens.dim(1);
    const int heads = w.heads, d = c / heads;
    const Tensor q = linear(tokens, w.qw, &w.qb);
    const Tensor k = linear(tokens, w.kw, &w.kb);
    const Tensor v = linear(tokens, w.vw, &w.vb);
    Tensor ctx({n, c});
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int h = 0; h < heads; ++h) {
        const int off = h * d;
        for (int i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int a = 0; a < d; ++a) s += q.at(i, off + a) * k.at(j, off + a);
                scores[static_cast<std::size_t>(j)] = s * scale;
                mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (int j = 0; j < n; ++j) {
                scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                z += scores[static_cast<std::size_t>(j)];
            }
            for (int a = 0; a < d; ++a) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j)
                    acc += scores[static_cast<std::size_t>(j)] * v.at(j, off + a);
                ctx.at(i, off + a) = acc / z;
            }
        }
    }
    return linear(ctx, w.ow, &w.ob);
}

std::pair<Tensor, Tensor> mugi(const Tensor& t, const Tensor& r, const MugiWeights& w) {
    Tensor gate_t = conv1x1(r, w.gate_t_w, &w.gate_t_b);
    Tensor gate_r = conv1x1(t, w.gate_r_w, &w.gate_r_b);
    for (std::int64_t i = 0; i < gate_t.size(); ++i) {
        gate_t[i] = sigmoid_s(gate_t[i]);
        gate_r[i] = sigmoid_s(gate_r[i]);
    }
    const Tensor ft = conv3x3(t, w.feat_t_w, &w.feat_t_b);
    const Tensor fr = conv3x3(r, w.feat_r_w, &w.feat_r_b);
    Tensor out_t(t.shape()), out_r(r.shape());
    for (std::int64_t i = 0; i < out_t.size(); ++i) {
        out_t[i] = t[i] + ft[i] * gate_t[i];
        out_r[i] = r[i] + fr[i] * gate_r[i];
    }
    return {out_t, out_r};
}

std::pair<Tensor, Tensor> early_fusion(const Tensor& t, const Tensor& r, const Tensor& wt,
                                       const Tensor& wr) {
    const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
    Tensor out_t(t.shape()), out_r(r.shape());
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            for (int o = 0; o < c; ++o) {
                double acc_t = 0.0, acc_r = 0.0;
                for (int a = 0; a < c; ++a) {
                    acc_t += t.at(i, j, a) * wt.at(a, o) + r.at(i, j, a) * wt.at(c + a, o);
                    acc_r += r.at(i, j, a) * wr.at(a, o) + t.at(i, j, a) * wr.at(c + a, o);
                }
                out_t.at(i, j, o) = acc_t;
                out_r.at(i, j, o) = acc_r;
            }
        }
    }
    return {out_t, out_r};
}

namespace {

Tensor ffn_pointwise(const Tensor& map, const FfnWeights& w) {
    const int h = map.dim(0), wd = map.dim(1), c = map.dim(2);
    const int hidden = w.up_w.dim(1);
    Tensor out(map.shape());
    std::vector<double> mid(static_cast<std::size_t>(hidden));
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < wd; ++j) {
            for (int m = 0; m < hidden; ++m) {
                double acc = w.up_b[m];
                for (int a = 0; a < c; ++a) acc += map.at(i, j, a) * w.up_w.at(a, m);
                mid[static_cast<std::size_t>(m)] = gelu_s(acc);
            }
            for (int o = 0; o < c; ++o) {
                double acc = w.down_b[o];
                for (int m = 0; m < hidden; ++m)
                    acc += mid[static_cast<std::size_t>(m)] * w.down_w.at(m, o);
                out.at(i, j, o) = acc;
            }
        }
    }
    return out;
}

} // namespace

std::pair<Tensor, Tensor> lfsb(const Tensor& t, const Tensor& r, const LfsbWeights& w) {
    const int h = t.dim(0), wd = t.dim(1), c = t.dim(2);
    const auto [ft, fr] = early_fusion(t, r, w.wt, w.wr);

    const int win = w.window;
    const int gh = (h + win - 1) / win, gw = (wd + win - 1) / win;
    const int tokens = win * win;

    Tensor sum_t({gh * gw, tokens, c}), sum_r({gh * gw, tokens, c});
    for (int wy = 0; wy < gh; ++wy) {
        for (int wx = 0; wx < gw; ++wx) {
            Tensor tt({tokens, c}), rt({tokens, c});
            for (int ti = 0; ti < tokens; ++ti) {
                const int sy = reflect(wy * win + ti / win, h);
                const int sx = reflect(wx * win + ti % win, wd);
                for (int k = 0; k < c; ++k) {
                    tt.at(ti, k) = ft.at(sy, sx, k);
                    rt.at(ti, k) = fr.at(sy, sx, k);
                }
            }
            // Self-attention: each stream over its own tokens.
            const Tensor at_sa = attention_tokens(tt, w.sa);
            const Tensor ar_sa = attention_tokens(rt, w.sa);
            // Cross-attention: both streams joined along the token axis.
            Tensor joined({2 * tokens, c});
            for (int ti = 0; ti < tokens; ++ti) {
                for (int k = 0; k < c; ++k) {
                    joined.at(ti, k) = tt.at(ti, k);
                    joined.at(tokens + ti, k) = rt.at(ti, k);
                }
            }
            const Tensor ca_out = attention_tokens(joined, w.ca);
            const int p = wy * gw + wx;
            for (int ti = 0; ti < tokens; ++ti) {
                for (int k = 0; k < c; ++k) {
                    const double st = at_sa.at(ti, k) + ca_out.at(ti, k);
                    const double sr = ar_sa.at(ti, k) + ca_out.at(tokens + ti, k);
                    sum_t.at(p, ti, k) = st - w.coefficient * sr;
                    sum_r.at(p, ti, k) = sr - w.coefficient * st;
                }
            }
        }
    }

    Tensor map_t({h, wd, c}), map_r({h, wd, c});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < wd; ++x) {
            const int p = (y / win) * gw + (x / win);
            const int ti = (y % win) * win + (x % win);
            for (int k = 0; k < c; ++k) {
                map_t.at(y, x, k) = sum_t.at(p, ti, k);
                map_r.at(y, x, k) = sum_r.at(p, ti, k);
            }
        }
    }
    const Tensor yt = ffn_pointwise(map_t, w.ffn_t);
    const Tensor yr = ffn_pointwise(map_r, w.ffn_r);
    Tensor out_t(t.shape()), out_r(r.shape());
    for (std::int64_t i = 0; i < out_t.size(); ++i) {
        out_t[i] = t[i] + yt[i];
        out_r[i] = r[i] + yr[i];
    }
    return {out_t, out_r};
}

double exclusion(const Tensor& t, const Tensor& r) {
    Tensor ct = t, cr = r;
    double total = 0.0;
    for (int scale = 0; scale < 3; ++scale) {
        if (scale > 0) {
            auto down = [](const Tensor& x) {
                const int h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
                Tensor y({h, w, c});
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        for (int k = 0; k < c; ++k)
                            y.at(i, j, k) = 0.25 * (x.at(2 * i, 2 * j, k) + x.at(2 * i, 2 * j + 1, k) +
                                                    x.at(2 * i + 1, 2 * j, k) +
                                                    x.at(2 * i + 1, 2 * j + 1, k));
                return y;
            };
            ct = down(ct);
            cr = down(cr);
        }
        const int h = ct.dim(0), w = ct.dim(1), c = ct.dim(2);
        double sx = 0.0, sy = 0.0;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j + 1 < w; ++j)
                for (int k = 0; k < c; ++k)
                    sx += std::abs((ct.at(i, j + 1, k) - ct.at(i, j, k)) *
                                   (cr.at(i, j + 1, k) - cr.at(i, j, k)));
        for (int i = 0; i + 1 < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int k = 0; k < c; ++k)
                    sy += std::abs((ct.at(i + 1, j, k) - ct.at(i, j, k)) *
                                   (cr.at(i + 1, j, k) - cr.at(i, j, k)));
        total += sx / (static_cast<double>(h) * (w - 1) * c) +
                 sy / (static_cast<double>(h - 1) * w * c);
    }
    return total;
}

} // namespace reflexsplit::oracle
