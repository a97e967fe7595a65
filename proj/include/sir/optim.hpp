// Adam with bias correction; updates trainable parameters only.

#pragma once

#include <cmath>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace sir {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::vector<NamedParam> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const NamedParam& p : params_) {
            if (!p.tensor->requires_grad)
                fail(ErrorKind::state, "Adam: refusing frozen parameter " + p.name);
            m_.emplace_back(p.tensor->shape);
            v_.emplace_back(p.tensor->shape);
        }
    }

    // m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;  p <- p - lr*mhat/(sqrt(vhat)+eps)
    void step(const std::vector<Tensor>& grads) {
        if (grads.size() != params_.size())
            fail(ErrorKind::shape, "Adam: gradient count does not match parameter count");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i].tensor;
            const Tensor& g = grads[i];
            if (!(g.shape == p.shape))
                fail(ErrorKind::shape, "Adam: gradient shape " + g.shape.str() +
                                           " does not match parameter " + params_[i].name);
            for (std::size_t j = 0; j < p.data.size(); ++j) {
                const double gv = g.data[j];
                m_[i].data[j] = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * gv;
                v_[i].data[j] = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * gv * gv;
                const double mhat = m_[i].data[j] / c1;
                const double vhat = v_[i].data[j] / c2;
                p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    const std::vector<NamedParam>& params() const { return params_; }

    // checkpoint restore
    void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::int64_t t) {
        if (m.size() != params_.size() || v.size() != params_.size())
            fail(ErrorKind::shape, "Adam: restored state count does not match parameters");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!(m[i].shape == params_[i].tensor->shape) || !(v[i].shape == params_[i].tensor->shape))
                fail(ErrorKind::shape, "Adam: restored state shape mismatch for " + params_[i].name);
        }
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

private:
    std::vector<NamedParam> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

} // namespace sir
