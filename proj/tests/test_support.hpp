#pragma once

// Shared helpers for the test suites: random fixtures, naive oracles and
// central finite differences. Nothing here calls into the code under test
// except through the function being differentiated.

#include <cmath>
#include <functional>
#include <vector>

#include "ssltraffic/nn/matrix.hpp"
#include "ssltraffic/rng.hpp"

namespace testsupport {

using ssltraffic::Rng;
using ssltraffic::nn::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = scale * (2.0 * ssltraffic::uniform01(rng) - 1.0);
    return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

/// Central difference of f with respect to every entry of `x` (x is restored).
inline std::vector<double> finite_diff(std::vector<double>& x, const std::function<double()>& f,
                                       double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f();
        x[i] = saved - h;
        const double down = f();
        x[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// |a - b| <= rel * max(|a|, |b|) + abs_floor for every element.
inline bool close_rel(const std::vector<double>& a, const std::vector<double>& b, double rel,
                      double abs_floor = 1e-8) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(std::abs(a[i]), std::abs(b[i]));
        if (std::abs(a[i] - b[i]) > rel * scale + abs_floor) return false;
    }
    return true;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testsupport
