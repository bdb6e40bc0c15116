#ifndef SFDA_NN_ADAM_HPP
#define SFDA_NN_ADAM_HPP

#include <cmath>
#include <vector>

#include "sfda/nn/layers.hpp"

namespace sfda::nn {

class Adam {
public:
    Adam(std::vector<Param> params, double lr, double beta1 = 0.9, double beta2 = 0.99,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].value->numel(), 0.0f);
            v_[i].assign(params_[i].value->numel(), 0.0f);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i].value;
            const Tensor& g = *params_[i].grad;
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < p.numel(); ++j) {
                const double gj = g[j];
                m[j] = static_cast<float>(b1_ * m[j] + (1.0 - b1_) * gj);
                v[j] = static_cast<float>(b2_ * v[j] + (1.0 - b2_) * gj * gj);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    std::vector<Param> params_;
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

} // namespace sfda::nn

#endif
