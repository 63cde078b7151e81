#pragma once

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "c2kd/errors.hpp"
#include "c2kd/tensor.hpp"

// Forward operations used by the encoders and losses, each paired with a
// hand-derived reverse-mode (vjp) counterpart, plus a central-difference
// gradient verifier. The operation set is closed; there is no tape.

namespace c2kd {

inline constexpr double kDegenerateNormEps = 1e-12;

// Named handle to a trainable parameter tensor.
struct ParamRef {
    std::string name;
    Tensor2D* tensor = nullptr;
};

// One gradient per trainable parameter per backward pass; shape matches the
// parameter.
struct GradRecord {
    std::string param;
    Tensor2D grad;
};

// Gradient store aligned index-for-index with a parameter list.
struct Gradients {
    std::vector<GradRecord> records;

    static Gradients zeros_for(std::span<const ParamRef> params) {
        Gradients g;
        g.records.reserve(params.size());
        for (const auto& p : params) g.records.push_back({p.name, zeros_like(*p.tensor)});
        return g;
    }

    Tensor2D& operator[](std::size_t i) { return records[i].grad; }
    const Tensor2D& operator[](std::size_t i) const { return records[i].grad; }
    std::size_t size() const { return records.size(); }

    Tensor2D& find(const std::string& name) {
        for (auto& r : records)
            if (r.param == name) return r.grad;
        throw ParamError("no gradient record for parameter '" + name + "'");
    }
};

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ, " + a.shape_str() + " x " + b.shape_str());
    Tensor2D out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// dL/dA = G B^T, dL/dB = A^T G for upstream gradient G of A B.
inline std::pair<Tensor2D, Tensor2D> matmul_vjp(const Tensor2D& a, const Tensor2D& b, const Tensor2D& g) {
    if (g.rows != a.rows || g.cols != b.cols)
        throw ShapeError("matmul_vjp: upstream gradient " + g.shape_str() + " does not match product " +
                         std::to_string(a.rows) + "x" + std::to_string(b.cols));
    return {matmul(g, transpose(b)), matmul(transpose(a), g)};
}

// Row-wise softmax with temperature; stabilized by subtracting each row's
// maximum before exponentiation.
inline Tensor2D softmax_rows(const Tensor2D& x, double temperature) {
    if (!(temperature > 0.0)) throw ParamError("softmax_rows: temperature must be positive, got " + std::to_string(temperature));
    Tensor2D out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* in = x.row(r);
        double* o = out.row(r);
        double mx = in[0];
        for (std::size_t c = 1; c < x.cols; ++c) mx = std::max(mx, in[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            o[c] = std::exp((in[c] - mx) / temperature);
            sum += o[c];
        }
        for (std::size_t c = 0; c < x.cols; ++c) o[c] /= sum;
    }
    return out;
}

// vjp given the forward output y = softmax_rows(x, tau):
// dx_ij = y_ij * (g_ij - sum_k g_ik y_ik) / tau
inline Tensor2D softmax_rows_vjp(const Tensor2D& y, const Tensor2D& g, double temperature) {
    if (!y.same_shape(g)) throw ShapeError("softmax_rows_vjp: " + y.shape_str() + " vs " + g.shape_str());
    Tensor2D dx(y.rows, y.cols);
    for (std::size_t r = 0; r < y.rows; ++r) {
        const double* yr = y.row(r);
        const double* gr = g.row(r);
        double inner = dot(yr, gr, y.cols);
        double* d = dx.row(r);
        for (std::size_t c = 0; c < y.cols; ++c) d[c] = yr[c] * (gr[c] - inner) / temperature;
    }
    return dx;
}

inline double row_norm(const Tensor2D& x, std::size_t r) {
    return std::sqrt(dot(x.row(r), x.row(r), x.cols));
}

inline Tensor2D l2_normalize_rows(const Tensor2D& x) {
    Tensor2D out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double n = row_norm(x, r);
        if (n < kDegenerateNormEps)
            throw NumericError("l2_normalize_rows: degenerate row " + std::to_string(r) + " with norm " + std::to_string(n));
        for (std::size_t c = 0; c < x.cols; ++c) out(r, c) = x(r, c) / n;
    }
    return out;
}

// Exact normalization Jacobian: dx_i = (g_i - y_i <y_i, g_i>) / ||x_i||.
inline Tensor2D l2_normalize_rows_vjp(const Tensor2D& x, const Tensor2D& y, const Tensor2D& g) {
    if (!x.same_shape(g)) throw ShapeError("l2_normalize_rows_vjp: " + x.shape_str() + " vs " + g.shape_str());
    Tensor2D dx(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) {
        double n = row_norm(x, r);
        double inner = dot(y.row(r), g.row(r), x.cols);
        for (std::size_t c = 0; c < x.cols; ++c) dx(r, c) = (g(r, c) - y(r, c) * inner) / n;
    }
    return dx;
}

// Central-difference check of an analytic gradient. `loss_eval` is re-run
// after in-place perturbation of each parameter entry; the entry is restored
// afterwards. Returns the maximum relative error over all entries, with
// relative error |a - n| / max(|a|, |n|, 1e-8).
inline double grad_check(std::span<const ParamRef> params,
                         const std::function<double()>& loss_eval,
                         const Gradients& analytic,
                         double step) {
    if (!(step > 0.0)) throw ParamError("grad_check: step must be positive");
    if (analytic.size() != params.size())
        throw ShapeError("grad_check: " + std::to_string(analytic.size()) + " gradient records for " +
                         std::to_string(params.size()) + " parameters");
    double max_rel = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor2D& theta = *params[p].tensor;
        const Tensor2D& grad = analytic[p];
        if (!theta.same_shape(grad))
            throw ShapeError("grad_check: gradient shape " + grad.shape_str() + " does not match parameter '" +
                             params[p].name + "' " + theta.shape_str());
        for (std::size_t i = 0; i < theta.data.size(); ++i) {
            const double saved = theta.data[i];
            theta.data[i] = saved + step;
            const double lp = loss_eval();
            theta.data[i] = saved - step;
            const double lm = loss_eval();
            theta.data[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("grad_check: non-finite loss probing parameter '" + params[p].name + "'");
            const double numeric = (lp - lm) / (2.0 * step);
            const double a = grad.data[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace c2kd
