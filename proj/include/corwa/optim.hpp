#pragma once

#include "corwa/interval.hpp"

#include <cmath>
#include <string>

namespace corwa {

/// First-order update on a flat parameter vector; plain SGD unless `adam`.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(int size, bool adam) : adam_(adam), m_(Vec::Zero(size)), v_(Vec::Zero(size)) {}

    void step(Vec& params, const Vec& grad, double lr) {
        if (!adam_) {
            params -= lr * grad;
            return;
        }
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + 1e-8);
    }

private:
    bool adam_ = false;
    Vec m_, v_;
    int t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999;
};

}  // namespace corwa
