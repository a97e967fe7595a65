// Teacher encoder, up-then-down student decoder, iterative refinement loop
// and the summed per-loop cosine reconstruction loss.
//
// Feedback note: the recurrence feeds the student's own high-level output of
// loop k-1 back as the input of loop k (loop 1 consumes the teacher's
// compressed feature). Feeding the unchanged teacher feature back each loop
// would make every loop identical and the recurrence vacuous.

#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sir {

struct ConvLayer {
    Tensor weight; // conv: [co,ci,kh,kw]; transposed conv: [ci,co,kh,kw]
    Tensor bias;   // [1,co,1,1]
    int stride = 1;
    int padding = 0;
};

inline ConvLayer make_conv(Rng& rng, int ci, int co, int k, int stride, int padding,
                           bool transposed, bool trainable) {
    ConvLayer layer;
    layer.weight = Tensor(transposed ? Shape{ci, co, k, k} : Shape{co, ci, k, k});
    layer.bias = Tensor(Shape{1, co, 1, 1});
    const double std = std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
    for (double& v : layer.weight.data) v = std * rng.normal();
    layer.weight.requires_grad = trainable;
    layer.bias.requires_grad = trainable;
    layer.stride = stride;
    layer.padding = padding;
    return layer;
}

// Four stride-2 conv+leaky stages; channel plan c_in -> b -> 2b -> 4b -> 8b.
// Parameters are frozen (requires_grad false, never registered with the
// optimizer, never tracked on a tape).
struct TeacherEncoder {
    std::array<ConvLayer, 4> stages;
};

// Up path: conv_transpose(8b -> 4b, k4 s2 p1) + leaky + conv(4b -> 4b, k3 s1
// p1) produces f3_s. Down path: conv(4b -> 8b, k3 s2 p1) + leaky + conv(8b ->
// 8b, k3 s1 p1) produces phi_s. Parameter count is independent of the loop
// count.
struct StudentDecoder {
    ConvLayer up;
    ConvLayer up_refine;
    ConvLayer down;
    ConvLayer down_refine;
};

struct SirModel {
    TeacherEncoder teacher;
    StudentDecoder student;
    int loops = 3;
    double epsilon = 1e-8;
    double slope = 0.1;
    int in_channels = 1;
    int base_channels = 16;
};

inline SirModel make_model(std::uint64_t seed, int in_channels, int base_channels, int loops,
                           double epsilon = 1e-8, double slope = 0.1) {
    SirModel m;
    m.loops = loops;
    m.epsilon = epsilon;
    m.slope = slope;
    m.in_channels = in_channels;
    m.base_channels = base_channels;
    const int b = base_channels;
    Rng trng(Rng::derive(seed, "teacher_init"));
    m.teacher.stages[0] = make_conv(trng, in_channels, b, 3, 2, 1, false, false);
    m.teacher.stages[1] = make_conv(trng, b, 2 * b, 3, 2, 1, false, false);
    m.teacher.stages[2] = make_conv(trng, 2 * b, 4 * b, 3, 2, 1, false, false);
    m.teacher.stages[3] = make_conv(trng, 4 * b, 8 * b, 3, 2, 1, false, false);
    Rng srng(Rng::derive(seed, "student_init"));
    m.student.up = make_conv(srng, 8 * b, 4 * b, 4, 2, 1, true, true);
    m.student.up_refine = make_conv(srng, 4 * b, 4 * b, 3, 1, 1, false, true);
    m.student.down = make_conv(srng, 4 * b, 8 * b, 3, 2, 1, false, true);
    m.student.down_refine = make_conv(srng, 8 * b, 8 * b, 3, 1, 1, false, true);
    return m;
}

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

inline std::vector<NamedParam> student_params(SirModel& m) {
    return {
        {"student.up.weight", &m.student.up.weight},
        {"student.up.bias", &m.student.up.bias},
        {"student.up_refine.weight", &m.student.up_refine.weight},
        {"student.up_refine.bias", &m.student.up_refine.bias},
        {"student.down.weight", &m.student.down.weight},
        {"student.down.bias", &m.student.down.bias},
        {"student.down_refine.weight", &m.student.down_refine.weight},
        {"student.down_refine.bias", &m.student.down_refine.bias},
    };
}

inline std::vector<NamedParam> teacher_params(SirModel& m) {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < m.teacher.stages.size(); ++i) {
        const std::string base = "teacher.stage" + std::to_string(i + 1);
        out.push_back({base + ".weight", &m.teacher.stages[i].weight});
        out.push_back({base + ".bias", &m.teacher.stages[i].bias});
    }
    return out;
}

struct TeacherFeatures {
    Tensor f3;  // [n, 4b, H/8, W/8]
    Tensor phi; // [n, 8b, H/16, W/16]
};

inline TeacherFeatures teacher_forward(const SirModel& m, const Tensor& x) {
    const Shape s = x.shape;
    if (s.h % 16 != 0 || s.w % 16 != 0)
        fail(ErrorKind::shape, "teacher_forward: spatial extents must be divisible by 16, got " + s.str());
    Tensor t = x;
    t.node = -1; // teacher is never recorded
    TeacherFeatures out;
    for (int i = 0; i < 4; ++i) {
        const ConvLayer& layer = m.teacher.stages[i];
        t = leaky_relu(nullptr, conv2d(nullptr, t, layer.weight, layer.bias, layer.stride, layer.padding),
                       m.slope);
        if (i == 2) out.f3 = t;
    }
    out.phi = t;
    return out;
}

struct LoopOutput {
    Tensor f3_s;
    Tensor phi_s;
};

// One up-then-down pass of the student.
inline LoopOutput student_forward(Tape* tape, const SirModel& m, const Tensor& z) {
    const StudentDecoder& d = m.student;
    Tensor u = leaky_relu(tape, conv_transpose2d(tape, z, d.up.weight, d.up.bias, d.up.stride, d.up.padding),
                          m.slope);
    LoopOutput out;
    out.f3_s = conv2d(tape, u, d.up_refine.weight, d.up_refine.bias, d.up_refine.stride, d.up_refine.padding);
    Tensor v = leaky_relu(tape, conv2d(tape, out.f3_s, d.down.weight, d.down.bias, d.down.stride, d.down.padding),
                          m.slope);
    out.phi_s = conv2d(tape, v, d.down_refine.weight, d.down_refine.bias, d.down_refine.stride,
                       d.down_refine.padding);
    return out;
}

// L refinement loops on one tape; loop 1 consumes phi_t, loop k>1 consumes
// the previous loop's phi_s so gradients flow through the whole recurrence.
inline std::vector<LoopOutput> loop_forward(Tape* tape, const SirModel& m, const Tensor& phi_t) {
    if (phi_t.shape.c != 8 * m.base_channels)
        fail(ErrorKind::shape, "loop_forward: expected " + std::to_string(8 * m.base_channels) +
                                   " input channels, got " + std::to_string(phi_t.shape.c));
    std::vector<LoopOutput> outs;
    outs.reserve(m.loops);
    Tensor z = phi_t;
    for (int k = 0; k < m.loops; ++k) {
        outs.push_back(student_forward(tape, m, z));
        z = outs.back().phi_s;
    }
    return outs;
}

// Track student parameters as leaves on a fresh tape for one step.
inline void track_student(Tape& tape, SirModel& m) {
    for (auto& p : student_params(m)) tape.track(*p.tensor);
}

inline void untrack_student(SirModel& m) {
    for (auto& p : student_params(m)) p.tensor->node = -1;
}

// sum_k [ wmean(cosdist(f3_s_k, f3_t)) + wmean(cosdist(phi_s_k, phi_t)) ]
// with the teacher targets held constant. Uniform weights reproduce the
// batch-averaged loss exactly. Distances are capped at 1 (anti-correlation
// counts as full mismatch), which bounds the loss by 2L.
inline Tensor loss_from_targets(Tape* tape, const SirModel& m, const std::vector<LoopOutput>& loops,
                                const Tensor& f3_t, const Tensor& phi_t,
                                const std::vector<double>& batch_weights) {
    Tensor f3_target = f3_t;
    Tensor phi_target = phi_t;
    f3_target.node = -1; // detached targets
    phi_target.node = -1;
    Tensor total;
    bool first = true;
    for (const LoopOutput& lo : loops) {
        Tensor t1 = batch_weighted_mean(
            tape, clamp_max(tape, cosine_distance_map(tape, lo.f3_s, f3_target, m.epsilon), 1.0),
            batch_weights);
        Tensor t2 = batch_weighted_mean(
            tape, clamp_max(tape, cosine_distance_map(tape, lo.phi_s, phi_target, m.epsilon), 1.0),
            batch_weights);
        Tensor term = add(tape, t1, t2);
        total = first ? term : add(tape, total, term);
        first = false;
    }
    return total;
}

// Canonical training loss for a batch: teacher forward, L loops, batch mean.
inline Tensor training_loss(Tape* tape, SirModel& m, const Tensor& x) {
    TeacherFeatures tf = teacher_forward(m, x);
    std::vector<LoopOutput> loops = loop_forward(tape, m, tf.phi);
    std::vector<double> weights(x.shape.n, 1.0 / x.shape.n);
    return loss_from_targets(tape, m, loops, tf.f3, tf.phi, weights);
}

} // namespace sir
