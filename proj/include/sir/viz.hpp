// Percentile normalization and jet-colormap overlays for anomaly maps.

#pragma once

#include <array>
#include <vector>

#include "scoring.hpp"
#include "tensor.hpp"

namespace sir {

struct RenderSpec {
    double p_lo = 20.0;
    double p_hi = 95.0;
    double alpha = 0.5; // colormap blend weight
    std::string colormap = "jet";
};

// Clamp-normalizes all maps against global percentiles of the whole
// collection; a degenerate range (P_hi == P_lo) maps everything to 0.
inline std::vector<Tensor> normalize_maps(const std::vector<Tensor>& maps, const RenderSpec& spec) {
    if (maps.empty()) fail(ErrorKind::data, "normalize_maps: empty map collection");
    if (!(spec.p_lo < spec.p_hi)) fail(ErrorKind::config, "normalize_maps: p_lo must be below p_hi");
    std::vector<double> all;
    for (const Tensor& m : maps) all.insert(all.end(), m.data.begin(), m.data.end());
    const double lo = percentile(all, spec.p_lo);
    const double hi = percentile(all, spec.p_hi);
    std::vector<Tensor> out;
    out.reserve(maps.size());
    for (const Tensor& m : maps) {
        Tensor t(m.shape);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            double v = hi > lo ? (m.data[i] - lo) / (hi - lo) : 0.0;
            if (v < 0.0) v = 0.0;
            if (v > 1.0) v = 1.0;
            t.data[i] = v;
        }
        out.push_back(std::move(t));
    }
    return out;
}

// Piecewise-linear jet: 0 -> (0,0,0.5), 0.125 -> (0,0,1), 0.375 -> (0,1,1),
// 0.625 -> (1,1,0), 0.875 -> (1,0,0), 1 -> (0.5,0,0).
inline std::array<double, 3> jet(double v) {
    struct Knot { double t, r, g, b; };
    static constexpr Knot knots[] = {
        {0.0, 0.0, 0.0, 0.5}, {0.125, 0.0, 0.0, 1.0}, {0.375, 0.0, 1.0, 1.0},
        {0.625, 1.0, 1.0, 0.0}, {0.875, 1.0, 0.0, 0.0}, {1.0, 0.5, 0.0, 0.0},
    };
    if (v <= 0.0) return {knots[0].r, knots[0].g, knots[0].b};
    if (v >= 1.0) return {knots[5].r, knots[5].g, knots[5].b};
    for (int i = 1; i < 6; ++i) {
        if (v <= knots[i].t) {
            const double f = (v - knots[i - 1].t) / (knots[i].t - knots[i - 1].t);
            return {knots[i - 1].r + f * (knots[i].r - knots[i - 1].r),
                    knots[i - 1].g + f * (knots[i].g - knots[i - 1].g),
                    knots[i - 1].b + f * (knots[i].b - knots[i - 1].b)};
        }
    }
    return {0.5, 0.0, 0.0};
}

// alpha * colormap(map) + (1-alpha) * grayscale(image), as a [1,3,h,w] raster.
inline Tensor render_overlay(const Tensor& image, const Tensor& normalized_map, const RenderSpec& spec) {
    const Shape is = image.shape, ms = normalized_map.shape;
    if (is.h != ms.h || is.w != ms.w)
        fail(ErrorKind::shape, "render_overlay: image " + is.str() + " and map " + ms.str() +
                                   " differ in spatial size");
    if (spec.alpha < 0.0 || spec.alpha > 1.0) fail(ErrorKind::config, "render_overlay: alpha must be in [0,1]");
    Tensor out(Shape{1, 3, is.h, is.w});
    for (int y = 0; y < is.h; ++y)
        for (int x = 0; x < is.w; ++x) {
            double gray;
            if (is.c == 3)
                gray = 0.299 * image.at(0, 0, y, x) + 0.587 * image.at(0, 1, y, x) + 0.114 * image.at(0, 2, y, x);
            else
                gray = image.at(0, 0, y, x);
            const std::array<double, 3> rgb = jet(normalized_map.at(0, 0, y, x));
            for (int c = 0; c < 3; ++c)
                out.at(0, c, y, x) = spec.alpha * rgb[c] + (1.0 - spec.alpha) * gray;
        }
    return out;
}

} // namespace sir
