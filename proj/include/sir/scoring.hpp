// Inference-time anomaly maps, cross-loop fusion, AUROC and percentiles.

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace sir {

struct AnomalyResult {
    std::vector<Tensor> per_loop_maps;  // L fused two-scale maps A^l at image resolution
    std::vector<Tensor> per_scale_maps; // 2L maps: f3-only then phi-only per loop
    Tensor final_map;                   // sum of per_loop_maps
    double score = 0.0;                 // max(final_map)
};

// Upsample-then-smooth one cosine-distance map to image resolution.
inline Tensor scale_map(const Tensor& dist_map, int out_h, int out_w, double sigma) {
    return gaussian_smooth(bilinear_upsample(dist_map, out_h, out_w), sigma);
}

// Maps from already-computed features; the scoring path used both by the
// model wrapper below and by tests that inject teacher features directly.
inline AnomalyResult anomaly_maps_from_features(const std::vector<LoopOutput>& loops,
                                                const Tensor& f3_t, const Tensor& phi_t,
                                                double epsilon, double sigma, int out_h, int out_w) {
    AnomalyResult res;
    for (const LoopOutput& lo : loops) {
        // distances capped at 1 as in the loss, so A_final stays within [0, 2L]
        Tensor m_f3 = scale_map(clamp_max(nullptr, cosine_distance_map(nullptr, lo.f3_s, f3_t, epsilon), 1.0),
                                out_h, out_w, sigma);
        Tensor m_phi = scale_map(clamp_max(nullptr, cosine_distance_map(nullptr, lo.phi_s, phi_t, epsilon), 1.0),
                                 out_h, out_w, sigma);
        Tensor fused(m_f3.shape);
        for (std::size_t i = 0; i < fused.data.size(); ++i)
            fused.data[i] = m_f3.data[i] + m_phi.data[i];
        res.per_scale_maps.push_back(std::move(m_f3));
        res.per_scale_maps.push_back(std::move(m_phi));
        res.per_loop_maps.push_back(std::move(fused));
    }
    res.final_map = Tensor(res.per_loop_maps.front().shape);
    for (const Tensor& m : res.per_loop_maps)
        for (std::size_t i = 0; i < m.data.size(); ++i) res.final_map.data[i] += m.data[i];
    res.score = *std::max_element(res.final_map.data.begin(), res.final_map.data.end());
    return res;
}

// A^l = smooth(up(1-cos(f3_s_l, f3_t))) + smooth(up(1-cos(phi_s_l, phi_t)));
// A_final = sum_l A^l; score = max(A_final).
inline AnomalyResult anomaly_maps(const SirModel& m, const Tensor& x, double sigma) {
    if (x.shape.n != 1) fail(ErrorKind::shape, "anomaly_maps: expects a single image (batch 1)");
    TeacherFeatures tf = teacher_forward(m, x);
    std::vector<LoopOutput> loops = loop_forward(nullptr, m, tf.phi);
    return anomaly_maps_from_features(loops, tf.f3, tf.phi, m.epsilon, sigma, x.shape.h, x.shape.w);
}

// Mann-Whitney AUROC by rank summation with average ranks for ties:
// P(score_anom > score_norm) + 0.5 * P(tie). Both classes must be present.
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& anomalous) {
    if (scores.size() != anomalous.size())
        fail(ErrorKind::shape, "auroc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (bool a : anomalous) n_pos += a ? 1 : 0;
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        fail(ErrorKind::data, "auroc: undefined AUROC, both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // rank sum of the anomalous class, doubled so ties stay integral
    long long rank2_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        // tied block occupies ranks i+1..j, average rank doubled = (i+1)+(j)
        const long long avg2 = static_cast<long long>(i + 1) + static_cast<long long>(j);
        for (std::size_t k = i; k < j; ++k)
            if (anomalous[order[k]]) rank2_pos += avg2;
        i = j;
    }
    const long long u2 = rank2_pos - static_cast<long long>(n_pos) * (n_pos + 1);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Linear-interpolation percentile on sorted values: rank = p/100*(n-1).
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) fail(ErrorKind::data, "percentile: empty input");
    if (p < 0.0 || p > 100.0) fail(ErrorKind::data, "percentile: p must be in [0,100]");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const std::size_t hi = lo + 1 < values.size() ? lo + 1 : lo;
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

} // namespace sir
