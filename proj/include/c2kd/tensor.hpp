#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "c2kd/errors.hpp"

namespace c2kd {

// Dense row-major matrix of doubles. Row vectors are 1 x n tensors.
struct Tensor2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    Tensor2D(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            assert(row.size() == cols);
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t r, std::size_t c) {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }
    double operator()(std::size_t r, std::size_t c) const {
        assert(r < rows && c < cols);
        return data[r * cols + c];
    }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    Tensor2D& operator+=(const Tensor2D& o) {
        if (!same_shape(o)) throw ShapeError("tensor += shape mismatch: " + shape_str() + " vs " + o.shape_str());
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor2D& operator*=(double s) {
        for (double& v : data) v *= s;
        return *this;
    }

    bool operator==(const Tensor2D& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline Tensor2D zeros_like(const Tensor2D& t) { return Tensor2D(t.rows, t.cols); }

inline Tensor2D transpose(const Tensor2D& a) {
    Tensor2D out(a.cols, a.rows);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) out(c, r) = a(r, c);
    return out;
}

// out += s * a
inline void add_scaled(Tensor2D& out, const Tensor2D& a, double s) {
    if (!out.same_shape(a)) throw ShapeError("add_scaled shape mismatch: " + out.shape_str() + " vs " + a.shape_str());
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] += s * a.data[i];
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Mean over rows; returns a 1 x cols row vector.
inline Tensor2D mean_rows(const Tensor2D& x) {
    if (x.rows == 0) throw InputError("mean_rows: empty input");
    Tensor2D out(1, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) out(0, c) += x(r, c);
    for (std::size_t c = 0; c < x.cols; ++c) out(0, c) /= static_cast<double>(x.rows);
    return out;
}

}  // namespace c2kd
