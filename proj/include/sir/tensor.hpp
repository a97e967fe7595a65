// Dense 4-D tensor (batch, channel, height, width), row-major doubles.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sir {

// Error category, mapped to CLI exit codes at the surface.
enum class ErrorKind { usage, config, io, data, shape, state };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + "]";
    }
};

struct Tensor {
    Shape shape{};
    std::vector<double> data;
    bool requires_grad = false;
    int node = -1; // id on the recording tape, -1 when untracked

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), data(s.numel(), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
        if (data.size() != shape.numel())
            fail(ErrorKind::shape, "tensor data length " + std::to_string(data.size()) +
                                       " does not match shape " + shape.str());
    }

    std::size_t numel() const { return shape.numel(); }

    std::size_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * shape.c + ic) * shape.h + ih) * shape.w + iw;
    }
    double& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
    double at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!(a.shape == b.shape))
        fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + a.shape.str() + " vs " + b.shape.str());
}

// ---------------------------------------------------------------------------
// Inference-only spatial ops (no gradients; scoring path).
// ---------------------------------------------------------------------------

// Half-pixel-center bilinear resize with edge clamping. Constant maps stay
// constant and output values never leave the input's [min, max] range.
inline Tensor bilinear_upsample(const Tensor& input, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        fail(ErrorKind::shape, "bilinear_upsample: output extents must be >= 1");
    const Shape s = input.shape;
    Tensor out(Shape{s.n, s.c, out_h, out_w});
    const double sy = static_cast<double>(s.h) / out_h;
    const double sx = static_cast<double>(s.w) / out_w;
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < out_h; ++oy) {
                double fy = (oy + 0.5) * sy - 0.5;
                if (fy < 0.0) fy = 0.0;
                if (fy > s.h - 1) fy = s.h - 1;
                int y0 = static_cast<int>(fy);
                int y1 = y0 + 1 < s.h ? y0 + 1 : y0;
                double wy = fy - y0;
                for (int ox = 0; ox < out_w; ++ox) {
                    double fx = (ox + 0.5) * sx - 0.5;
                    if (fx < 0.0) fx = 0.0;
                    if (fx > s.w - 1) fx = s.w - 1;
                    int x0 = static_cast<int>(fx);
                    int x1 = x0 + 1 < s.w ? x0 + 1 : x0;
                    double wx = fx - x0;
                    double v = (1 - wy) * ((1 - wx) * input.at(n, c, y0, x0) + wx * input.at(n, c, y0, x1)) +
                               wy * ((1 - wx) * input.at(n, c, y1, x0) + wx * input.at(n, c, y1, x1));
                    out.at(n, c, oy, ox) = v;
                }
            }
    return out;
}

// Discrete Gaussian kernel of radius ceil(3*sigma), renormalized to sum 1.
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) fail(ErrorKind::shape, "gaussian_kernel: sigma must be positive");
    int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[i + radius] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable Gaussian blur, replicate padding at borders.
inline Tensor gaussian_smooth(const Tensor& input, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const Shape s = input.shape;
    Tensor tmp(s), out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            // horizontal pass
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d) {
                        int xx = x + d;
                        if (xx < 0) xx = 0;
                        if (xx >= s.w) xx = s.w - 1;
                        acc += k[d + radius] * input.at(n, c, y, xx);
                    }
                    tmp.at(n, c, y, x) = acc;
                }
            // vertical pass
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    double acc = 0.0;
                    for (int d = -radius; d <= radius; ++d) {
                        int yy = y + d;
                        if (yy < 0) yy = 0;
                        if (yy >= s.h) yy = s.h - 1;
                        acc += k[d + radius] * tmp.at(n, c, yy, x);
                    }
                    out.at(n, c, y, x) = acc;
                }
        }
    return out;
}

} // namespace sir
