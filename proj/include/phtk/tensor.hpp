#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "phtk/errors.hpp"

namespace phtk::grad {

// Dense row-major 64-bit float tensor. Rank 1 or 2 in practice.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0)
        : shape{r, c}, data(r * c, fill) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data[0] = v;
        return t;
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        Tensor t(rows.size(), rows.empty() ? 0 : rows[0].size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != t.cols())
                throw DimensionError("from_rows: ragged input");
            for (std::size_t j = 0; j < t.cols(); ++j) t.at(i, j) = rows[i][j];
        }
        return t;
    }

    static Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng,
                        double stddev = 1.0) {
        Tensor t(r, c);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : t.data) v = dist(rng);
        return t;
    }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "x" : "") << shape[i];
        os << ')';
        return os.str();
    }
};

}  // namespace phtk::grad
