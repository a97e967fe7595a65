// Reverse-mode automatic differentiation over 4-D tensors.
//
// A Tape records one computation; ops append backward closures that scatter
// upstream gradients into per-node buffers. One training step builds and
// consumes exactly one tape on one thread. Ops called with a null tape (or
// with untracked inputs) run as pure forward functions.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace sir {

class Tape {
public:
    // Register a tensor as a tape node; leaves call this directly.
    int track(Tensor& t) {
        t.node = static_cast<int>(shapes_.size());
        shapes_.push_back(t.shape);
        grads_.emplace_back(t.numel(), 0.0);
        return t.node;
    }

    Tensor leaf(Tensor t) {
        track(t);
        return t;
    }

    void record(std::function<void(Tape&)> backward_fn) {
        records_.push_back(std::move(backward_fn));
    }

    std::vector<double>& grad_buf(int node) { return grads_[node]; }

    Tensor grad(const Tensor& t) const {
        if (t.node < 0) fail(ErrorKind::state, "grad: tensor is not tracked on this tape");
        return Tensor(t.shape, grads_[t.node]);
    }

    // Seed the root with gradient 1 and run all recorded rules in reverse.
    void backward(const Tensor& root) {
        if (root.node < 0) fail(ErrorKind::state, "backward: root is not tracked on this tape");
        if (root.numel() != 1) fail(ErrorKind::shape, "backward: root must be a scalar");
        grads_[root.node][0] = 1.0;
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(*this);
    }

private:
    std::vector<Shape> shapes_;
    std::vector<std::vector<double>> grads_;
    std::vector<std::function<void(Tape&)>> records_;
};

namespace detail {

inline bool tracked(const Tensor& t) { return t.node >= 0; }

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, weight layout [co, ci, kh, kw], bias [1,co,1,1].
// ---------------------------------------------------------------------------

inline Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride, int padding) {
    const Shape is = input.shape, ws = weight.shape;
    const int co = ws.n, ci = ws.c, kh = ws.h, kw = ws.w;
    if (is.c != ci)
        fail(ErrorKind::shape, "conv2d: input channels " + std::to_string(is.c) +
                                   " do not match weight channels " + std::to_string(ci) +
                                   " (input " + is.str() + ", weight " + ws.str() + ")");
    if (bias.numel() != static_cast<std::size_t>(co))
        fail(ErrorKind::shape, "conv2d: bias length must equal output channels");
    if (is.h + 2 * padding < kh || is.w + 2 * padding < kw)
        fail(ErrorKind::shape, "conv2d: kernel larger than padded input");
    const int oh = detail::conv_out_extent(is.h, kh, stride, padding);
    const int ow = detail::conv_out_extent(is.w, kw, stride, padding);

    Tensor out(Shape{is.n, co, oh, ow});
    for (int n = 0; n < is.n; ++n)
        for (int c = 0; c < co; ++c) {
            double* orow = &out.data[out.index(n, c, 0, 0)];
            const double b = bias.data[c];
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) orow[i] = b;
        }
    for (int n = 0; n < is.n; ++n)
        for (int c = 0; c < co; ++c)
            for (int ic = 0; ic < ci; ++ic)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = weight.at(c, ic, ky, kx);
                        for (int y = 0; y < oh; ++y) {
                            const int iy = y * stride - padding + ky;
                            if (iy < 0 || iy >= is.h) continue;
                            const double* in_row = &input.data[input.index(n, ic, iy, 0)];
                            double* out_row = &out.data[out.index(n, c, y, 0)];
                            for (int x = 0; x < ow; ++x) {
                                const int ix = x * stride - padding + kx;
                                if (ix < 0 || ix >= is.w) continue;
                                out_row[x] += wv * in_row[ix];
                            }
                        }
                    }

    if (tape && (detail::tracked(input) || detail::tracked(weight) || detail::tracked(bias))) {
        tape->track(out);
        Tensor in_copy = input, w_copy = weight;
        int out_node = out.node, in_node = input.node, w_node = weight.node, b_node = bias.node;
        tape->record([in_copy, w_copy, out_node, in_node, w_node, b_node, stride, padding,
                      oh, ow](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            const Shape is2 = in_copy.shape, ws2 = w_copy.shape;
            const int co2 = ws2.n, ci2 = ws2.c, kh2 = ws2.h, kw2 = ws2.w;
            Tensor go(Shape{is2.n, co2, oh, ow}, gout);
            std::vector<double>* gin = in_node >= 0 ? &tp.grad_buf(in_node) : nullptr;
            std::vector<double>* gw = w_node >= 0 ? &tp.grad_buf(w_node) : nullptr;
            std::vector<double>* gb = b_node >= 0 ? &tp.grad_buf(b_node) : nullptr;
            if (gb) {
                for (int n = 0; n < is2.n; ++n)
                    for (int c = 0; c < co2; ++c) {
                        double acc = 0.0;
                        const double* row = &go.data[go.index(n, c, 0, 0)];
                        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += row[i];
                        (*gb)[c] += acc;
                    }
            }
            if (!gin && !gw) return;
            for (int n = 0; n < is2.n; ++n)
                for (int c = 0; c < co2; ++c)
                    for (int ic = 0; ic < ci2; ++ic)
                        for (int ky = 0; ky < kh2; ++ky)
                            for (int kx = 0; kx < kw2; ++kx) {
                                const double wv = w_copy.at(c, ic, ky, kx);
                                double wacc = 0.0;
                                for (int y = 0; y < oh; ++y) {
                                    const int iy = y * stride - padding + ky;
                                    if (iy < 0 || iy >= is2.h) continue;
                                    const double* go_row = &go.data[go.index(n, c, y, 0)];
                                    const double* in_row = &in_copy.data[in_copy.index(n, ic, iy, 0)];
                                    double* gin_row = gin ? &(*gin)[in_copy.index(n, ic, iy, 0)] : nullptr;
                                    for (int x = 0; x < ow; ++x) {
                                        const int ix = x * stride - padding + kx;
                                        if (ix < 0 || ix >= is2.w) continue;
                                        const double g = go_row[x];
                                        if (gin_row) gin_row[ix] += wv * g;
                                        wacc += in_row[ix] * g;
                                    }
                                }
                                if (gw) (*gw)[w_copy.index(c, ic, ky, kx)] += wacc;
                            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d: scatter-add (gradient-of-conv semantics), weight layout
// [ci, co, kh, kw], bias [1,co,1,1].
// ---------------------------------------------------------------------------

inline Tensor conv_transpose2d(Tape* tape, const Tensor& input, const Tensor& weight,
                               const Tensor& bias, int stride, int padding) {
    const Shape is = input.shape, ws = weight.shape;
    const int ci = ws.n, co = ws.c, kh = ws.h, kw = ws.w;
    if (is.c != ci)
        fail(ErrorKind::shape, "conv_transpose2d: input channels " + std::to_string(is.c) +
                                   " do not match weight channels " + std::to_string(ci));
    if (bias.numel() != static_cast<std::size_t>(co))
        fail(ErrorKind::shape, "conv_transpose2d: bias length must equal output channels");
    const int oh = (is.h - 1) * stride - 2 * padding + kh;
    const int ow = (is.w - 1) * stride - 2 * padding + kw;
    if (oh <= 0 || ow <= 0)
        fail(ErrorKind::shape, "conv_transpose2d: non-positive output extent " +
                                   std::to_string(oh) + "x" + std::to_string(ow));

    Tensor out(Shape{is.n, co, oh, ow});
    for (int n = 0; n < is.n; ++n)
        for (int c = 0; c < co; ++c) {
            double* orow = &out.data[out.index(n, c, 0, 0)];
            const double b = bias.data[c];
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) orow[i] = b;
        }
    for (int n = 0; n < is.n; ++n)
        for (int ic = 0; ic < ci; ++ic)
            for (int c = 0; c < co; ++c)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = weight.at(ic, c, ky, kx);
                        for (int y = 0; y < is.h; ++y) {
                            const int oy = y * stride - padding + ky;
                            if (oy < 0 || oy >= oh) continue;
                            const double* in_row = &input.data[input.index(n, ic, y, 0)];
                            double* out_row = &out.data[out.index(n, c, oy, 0)];
                            for (int x = 0; x < is.w; ++x) {
                                const int ox = x * stride - padding + kx;
                                if (ox < 0 || ox >= ow) continue;
                                out_row[ox] += wv * in_row[x];
                            }
                        }
                    }

    if (tape && (detail::tracked(input) || detail::tracked(weight) || detail::tracked(bias))) {
        tape->track(out);
        Tensor in_copy = input, w_copy = weight;
        int out_node = out.node, in_node = input.node, w_node = weight.node, b_node = bias.node;
        tape->record([in_copy, w_copy, out_node, in_node, w_node, b_node, stride, padding,
                      oh, ow](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            const Shape is2 = in_copy.shape, ws2 = w_copy.shape;
            const int ci2 = ws2.n, co2 = ws2.c, kh2 = ws2.h, kw2 = ws2.w;
            Tensor go(Shape{is2.n, co2, oh, ow}, gout);
            std::vector<double>* gin = in_node >= 0 ? &tp.grad_buf(in_node) : nullptr;
            std::vector<double>* gw = w_node >= 0 ? &tp.grad_buf(w_node) : nullptr;
            std::vector<double>* gb = b_node >= 0 ? &tp.grad_buf(b_node) : nullptr;
            if (gb) {
                for (int n = 0; n < is2.n; ++n)
                    for (int c = 0; c < co2; ++c) {
                        double acc = 0.0;
                        const double* row = &go.data[go.index(n, c, 0, 0)];
                        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += row[i];
                        (*gb)[c] += acc;
                    }
            }
            if (!gin && !gw) return;
            for (int n = 0; n < is2.n; ++n)
                for (int ic = 0; ic < ci2; ++ic)
                    for (int c = 0; c < co2; ++c)
                        for (int ky = 0; ky < kh2; ++ky)
                            for (int kx = 0; kx < kw2; ++kx) {
                                const double wv = w_copy.at(ic, c, ky, kx);
                                double wacc = 0.0;
                                for (int y = 0; y < is2.h; ++y) {
                                    const int oy = y * stride - padding + ky;
                                    if (oy < 0 || oy >= oh) continue;
                                    const double* go_row = &go.data[go.index(n, c, oy, 0)];
                                    const double* in_row = &in_copy.data[in_copy.index(n, ic, y, 0)];
                                    double* gin_row = gin ? &(*gin)[in_copy.index(n, ic, y, 0)] : nullptr;
                                    for (int x = 0; x < is2.w; ++x) {
                                        const int ox = x * stride - padding + kx;
                                        if (ox < 0 || ox >= ow) continue;
                                        const double g = go_row[ox];
                                        if (gin_row) gin_row[x] += wv * g;
                                        wacc += in_row[x] * g;
                                    }
                                }
                                if (gw) (*gw)[w_copy.index(ic, c, ky, kx)] += wacc;
                            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.
// ---------------------------------------------------------------------------

// max(x, slope*x); the subgradient at exactly 0 takes the negative branch.
inline Tensor leaky_relu(Tape* tape, const Tensor& input, double slope) {
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        const double v = input.data[i];
        out.data[i] = v > 0.0 ? v : slope * v;
    }
    if (tape && detail::tracked(input)) {
        tape->track(out);
        Tensor in_copy = input;
        int out_node = out.node, in_node = input.node;
        tape->record([in_copy, out_node, in_node, slope](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            std::vector<double>& gin = tp.grad_buf(in_node);
            for (std::size_t i = 0; i < gin.size(); ++i)
                gin[i] += gout[i] * (in_copy.data[i] > 0.0 ? 1.0 : slope);
        });
    }
    return out;
}

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    if (tape && (detail::tracked(a) || detail::tracked(b))) {
        tape->track(out);
        int out_node = out.node, a_node = a.node, b_node = b.node;
        tape->record([out_node, a_node, b_node](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            if (a_node >= 0) {
                std::vector<double>& ga = tp.grad_buf(a_node);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
            }
            if (b_node >= 0) {
                std::vector<double>& gb = tp.grad_buf(b_node);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i];
            }
        });
    }
    return out;
}

// Per spatial location: 1 - <a,b> / (max(|a|,eps) * max(|b|,eps)) over the
// channel axis. Output shape [n,1,h,w], values in [0,2].
inline Tensor cosine_distance_map(Tape* tape, const Tensor& a, const Tensor& b, double epsilon) {
    check_same_shape(a, b, "cosine_distance_map");
    if (!(epsilon > 0.0)) fail(ErrorKind::shape, "cosine_distance_map: epsilon must be positive");
    const Shape s = a.shape;
    Tensor out(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                for (int c = 0; c < s.c; ++c) {
                    const double av = a.at(n, c, y, x), bv = b.at(n, c, y, x);
                    dot += av * bv;
                    na2 += av * av;
                    nb2 += bv * bv;
                }
                const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                const double ta = na > epsilon ? na : epsilon;
                const double tb = nb > epsilon ? nb : epsilon;
                out.at(n, 0, y, x) = 1.0 - dot / (ta * tb);
            }
    if (tape && (detail::tracked(a) || detail::tracked(b))) {
        tape->track(out);
        Tensor a_copy = a, b_copy = b;
        int out_node = out.node, a_node = a.node, b_node = b.node;
        tape->record([a_copy, b_copy, out_node, a_node, b_node, epsilon](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            const Shape s2 = a_copy.shape;
            std::vector<double>* ga = a_node >= 0 ? &tp.grad_buf(a_node) : nullptr;
            std::vector<double>* gb = b_node >= 0 ? &tp.grad_buf(b_node) : nullptr;
            Tensor go(Shape{s2.n, 1, s2.h, s2.w}, gout);
            for (int n = 0; n < s2.n; ++n)
                for (int y = 0; y < s2.h; ++y)
                    for (int x = 0; x < s2.w; ++x) {
                        const double g = go.at(n, 0, y, x);
                        if (g == 0.0) continue;
                        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                        for (int c = 0; c < s2.c; ++c) {
                            const double av = a_copy.at(n, c, y, x), bv = b_copy.at(n, c, y, x);
                            dot += av * bv;
                            na2 += av * av;
                            nb2 += bv * bv;
                        }
                        const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                        const double ta = na > epsilon ? na : epsilon;
                        const double tb = nb > epsilon ? nb : epsilon;
                        const double inv = 1.0 / (ta * tb);
                        for (int c = 0; c < s2.c; ++c) {
                            const double av = a_copy.at(n, c, y, x), bv = b_copy.at(n, c, y, x);
                            if (ga) {
                                // d(dot/(ta*tb))/da, the norm term active only off the eps clamp
                                double ds = bv * inv;
                                if (na > epsilon) ds -= dot * av / (na2 * ta * tb);
                                (*ga)[a_copy.index(n, c, y, x)] += -g * ds;
                            }
                            if (gb) {
                                double ds = av * inv;
                                if (nb > epsilon) ds -= dot * bv / (nb2 * ta * tb);
                                (*gb)[b_copy.index(n, c, y, x)] += -g * ds;
                            }
                        }
                    }
        });
    }
    return out;
}

// Elementwise min(x, cap). The subgradient at x == cap takes the clamped
// branch (zero), mirroring the leaky_relu convention.
inline Tensor clamp_max(Tape* tape, const Tensor& input, double cap) {
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.data.size(); ++i)
        out.data[i] = input.data[i] < cap ? input.data[i] : cap;
    if (tape && detail::tracked(input)) {
        tape->track(out);
        Tensor in_copy = input;
        int out_node = out.node, in_node = input.node;
        tape->record([in_copy, out_node, in_node, cap](Tape& tp) {
            const std::vector<double>& gout = tp.grad_buf(out_node);
            std::vector<double>& gin = tp.grad_buf(in_node);
            for (std::size_t i = 0; i < gin.size(); ++i)
                if (in_copy.data[i] < cap) gin[i] += gout[i];
        });
    }
    return out;
}

// Arithmetic mean of all elements, returned as a 1x1x1x1 tensor.
inline Tensor mean_all(Tape* tape, const Tensor& input) {
    if (input.numel() == 0) fail(ErrorKind::shape, "mean_all: empty tensor");
    double acc = 0.0;
    for (double v : input.data) acc += v;
    Tensor out(Shape{1, 1, 1, 1});
    out.data[0] = acc / static_cast<double>(input.numel());
    if (tape && detail::tracked(input)) {
        tape->track(out);
        int out_node = out.node, in_node = input.node;
        const double inv = 1.0 / static_cast<double>(input.numel());
        tape->record([out_node, in_node, inv](Tape& tp) {
            const double g = tp.grad_buf(out_node)[0] * inv;
            std::vector<double>& gin = tp.grad_buf(in_node);
            for (double& v : gin) v += g;
        });
    }
    return out;
}

// Weighted mean over the batch axis of per-sample means: sum_n w[n] *
// mean_{c,h,w}(t[n]). With uniform weights 1/n this equals mean_all exactly,
// which lets a trainer collapse duplicate batch entries without changing the
// loss or its gradients.
inline Tensor batch_weighted_mean(Tape* tape, const Tensor& input, const std::vector<double>& weights) {
    const Shape s = input.shape;
    if (static_cast<int>(weights.size()) != s.n)
        fail(ErrorKind::shape, "batch_weighted_mean: weights length must equal batch extent");
    if (input.numel() == 0) fail(ErrorKind::shape, "batch_weighted_mean: empty tensor");
    const std::size_t per = input.numel() / s.n;
    Tensor out(Shape{1, 1, 1, 1});
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
        double sub = 0.0;
        const double* p = &input.data[per * n];
        for (std::size_t i = 0; i < per; ++i) sub += p[i];
        acc += weights[n] * sub / static_cast<double>(per);
    }
    out.data[0] = acc;
    if (tape && detail::tracked(input)) {
        tape->track(out);
        int out_node = out.node, in_node = input.node;
        std::vector<double> w = weights;
        tape->record([out_node, in_node, w, per](Tape& tp) {
            const double g = tp.grad_buf(out_node)[0];
            std::vector<double>& gin = tp.grad_buf(in_node);
            for (std::size_t n = 0; n < w.size(); ++n) {
                const double gn = g * w[n] / static_cast<double>(per);
                double* p = &gin[per * n];
                for (std::size_t i = 0; i < per; ++i) p[i] += gn;
            }
        });
    }
    return out;
}

} // namespace sir
