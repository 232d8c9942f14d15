#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sortlab/policy.hpp"

namespace sortlab {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer: " + s);
}

// Bias-corrected adaptive-moment update (beta1=0.9, beta2=0.999, eps=1e-8)
// with plain gradient descent selectable.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, size_t n_params) : kind_(kind) {
        if (kind_ == OptimizerKind::adam) {
            m_.assign(n_params, 0.0);
            v_.assign(n_params, 0.0);
        }
    }

    OptimizerKind kind() const { return kind_; }

    void apply_update(ParameterVector& params, const GradientVector& grad, double lr) {
        if (params.size() != grad.size()) throw std::invalid_argument("shape mismatch");
        if (kind_ == OptimizerKind::sgd) {
            for (size_t i = 0; i < params.size(); ++i) {
                const double upd = lr * grad[i];
                if (!std::isfinite(upd)) throw std::runtime_error("non-finite update");
                params[i] -= upd;
            }
            return;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
            const double m_hat = m_[i] / bc1;
            const double v_hat = v_[i] / bc2;
            const double upd = lr * m_hat / (std::sqrt(v_hat) + kEps);
            if (!std::isfinite(upd)) throw std::runtime_error("non-finite update");
            params[i] -= upd;
        }
    }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

private:
    OptimizerKind kind_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

}  // namespace sortlab
