#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace pgtask {

/// Adam over a flat parameter vector.
class Adam {
public:
    explicit Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

/// Per-epoch record kept by an early-stopping loop.
struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double metric = 0.0;  // validation metric used for model selection
    bool improved = false;
};

struct EarlyStopResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_metric = 0.0;
    int stopped_epoch = 0;
};

/// Runs up to max_epochs epochs and stops once `patience` consecutive epochs
/// fail to strictly improve the validation metric. run_epoch(epoch) returns
/// {train_loss, metric}; on_improve(epoch) is called whenever a new best is
/// reached so the caller can snapshot its parameters.
template <typename RunEpoch, typename OnImprove>
EarlyStopResult run_early_stopping(int max_epochs, int patience, bool higher_is_better,
                                   RunEpoch&& run_epoch, OnImprove&& on_improve) {
    EarlyStopResult r;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        const auto [loss, metric] = run_epoch(epoch);
        const bool improved = r.best_epoch == 0 ||
                              (higher_is_better ? metric > r.best_metric : metric < r.best_metric);
        r.history.push_back({epoch, loss, metric, improved});
        r.stopped_epoch = epoch;
        if (improved) {
            r.best_epoch = epoch;
            r.best_metric = metric;
            on_improve(epoch);
        } else if (epoch - r.best_epoch >= patience) {
            break;
        }
    }
    return r;
}

}  // namespace pgtask
