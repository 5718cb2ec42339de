#pragma once

#include "rsg/nn.hpp"

namespace rsg {

// Polynomial decay with a linear warm-up ramp. lr(0) = 0, lr(warmup) = base,
// lr(total) = 0.
struct Schedule {
    double base_lr = 3e-4;
    double warmup_epochs = 10;
    double total_epochs = 60;
    double power = 0.9;
};

inline double lr_at(const Schedule& s, double epoch) {
    if (epoch < 0 || epoch > s.total_epochs)
        throw ContractError("lr_at: epoch " + std::to_string(epoch) + " out of [0, " +
                            std::to_string(s.total_epochs) + "]");
    if (s.warmup_epochs > 0 && epoch < s.warmup_epochs)
        return s.base_lr * (epoch / s.warmup_epochs);
    double span = s.total_epochs - s.warmup_epochs;
    if (span <= 0) return s.base_lr;
    double frac = (epoch - s.warmup_epochs) / span;
    return s.base_lr * std::pow(1.0 - frac, s.power);
}

// AdamW with decoupled weight decay:
//   theta <- theta - lr * mhat/(sqrt(vhat)+eps) - lr * wd * theta
template <typename S>
class AdamW {
public:
    AdamW() = default;
    explicit AdamW(ParamList<S> params, double weight_decay = 0.01, double beta1 = 0.9,
                   double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), S(0));
            v_[i].assign(static_cast<size_t>(params_[i].tensor.numel()), S(0));
        }
    }

    int64_t step_count() const { return step_; }

    void step(double lr) {
        ++step_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(step_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& p = params_[i].tensor;
            if (!p.has_grad()) {
                // no gradient flowed this step; decay still applies
                if (wd_ != 0.0)
                    for (auto& w : p.values()) w -= static_cast<S>(lr * wd_) * w;
                continue;
            }
            const std::vector<S>& g = p.grad_view();
            std::vector<S>& w = p.values();
            S* m = m_[i].data();
            S* v = v_[i].data();
            for (size_t k = 0; k < w.size(); ++k) {
                S gk = g[k];
                if (!std::isfinite(static_cast<double>(gk)))
                    throw NumericalError("adamw: non-finite gradient in " + params_[i].name +
                                         " at step " + std::to_string(step_));
                m[k] = static_cast<S>(b1_) * m[k] + static_cast<S>(1.0 - b1_) * gk;
                v[k] = static_cast<S>(b2_) * v[k] + static_cast<S>(1.0 - b2_) * gk * gk;
                double mhat = static_cast<double>(m[k]) / bc1;
                double vhat = static_cast<double>(v[k]) / bc2;
                w[k] -= static_cast<S>(lr * (mhat / (std::sqrt(vhat) + eps_)) +
                                       lr * wd_ * static_cast<double>(w[k]));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

private:
    ParamList<S> params_;
    std::vector<std::vector<S>> m_, v_;
    double wd_ = 0.01, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    int64_t step_ = 0;
};

}  // namespace rsg
