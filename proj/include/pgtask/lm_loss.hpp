#pragma once

// Causal LM objectives over a logits table whose row t scores target t.
//   clm_loss: negative log-likelihood over every position.
//   pg_loss:  the same restricted to masked (profile) positions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "pgtask/common.hpp"
#include "pgtask/tokenizer.hpp"

namespace pgtask {

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) throw ValidationError("matrix data size does not match its shape");
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

enum class LossReduction { Mean, Sum };

inline double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

/// -log softmax(z)[target]
inline double token_nll(std::span<const double> z, TokenId target) {
    return log_sum_exp(z) - z[static_cast<std::size_t>(target)];
}

namespace detail {
inline void check_shapes(const Matrix& logits, std::span<const TokenId> targets, std::size_t mask_size) {
    if (logits.rows != targets.size() || mask_size != targets.size())
        throw ValidationError("loss: logits rows, targets and mask must have equal length");
    if (logits.cols == 0) throw ValidationError("loss: empty vocabulary");
    for (auto t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= logits.cols) throw ValidationError("loss: target id out of range");
}
}  // namespace detail

inline double pg_loss(const Matrix& logits, std::span<const TokenId> targets, const std::vector<bool>& mask,
                      LossReduction reduction = LossReduction::Mean) {
    detail::check_shapes(logits, targets, mask.size());
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (!mask[t]) continue;
        total += token_nll(logits.row(t), targets[t]);
        ++count;
    }
    if (count == 0) throw ValidationError("pg_loss: mask selects no position");
    return reduction == LossReduction::Mean ? total / static_cast<double>(count) : total;
}

inline double clm_loss(const Matrix& logits, std::span<const TokenId> targets,
                       LossReduction reduction = LossReduction::Mean) {
    if (targets.empty()) throw ValidationError("clm_loss: no positions");
    return pg_loss(logits, targets, std::vector<bool>(targets.size(), true), reduction);
}

/// Analytic d pg_loss / d logits. Rows outside the mask are exactly zero.
inline Matrix pg_loss_grad(const Matrix& logits, std::span<const TokenId> targets, const std::vector<bool>& mask,
                           LossReduction reduction = LossReduction::Mean) {
    detail::check_shapes(logits, targets, mask.size());
    const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    if (count == 0) throw ValidationError("pg_loss: mask selects no position");
    const double scale = reduction == LossReduction::Mean ? 1.0 / static_cast<double>(count) : 1.0;
    Matrix grad(logits.rows, logits.cols, 0.0);
    for (std::size_t t = 0; t < targets.size(); ++t) {
        if (!mask[t]) continue;
        const auto z = logits.row(t);
        const double lse = log_sum_exp(z);
        auto g = grad.row(t);
        for (std::size_t k = 0; k < z.size(); ++k) g[k] = std::exp(z[k] - lse) * scale;
        g[static_cast<std::size_t>(targets[t])] -= scale;
    }
    return grad;
}

/// Next-token view of a formatted example: inputs[t] predicts targets[t].
struct ShiftedExample {
    std::vector<TokenId> inputs;
    std::vector<TokenId> targets;
    std::vector<bool> mask;
};

inline ShiftedExample shift_for_training(const FormattedExample& ex) {
    ShiftedExample s;
    if (ex.ids.size() < 2) return s;
    s.inputs.assign(ex.ids.begin(), ex.ids.end() - 1);
    s.targets.assign(ex.ids.begin() + 1, ex.ids.end());
    s.mask.assign(ex.mask.begin() + 1, ex.mask.end());
    return s;
}

}  // namespace pgtask
