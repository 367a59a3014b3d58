#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "augicl/errors.hpp"

namespace augicl {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> v) {
    double m = kNegInf;
    for (double x : v) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

// In-place softmax with max-subtraction. Entries equal to -inf get weight 0;
// an all-(-inf) input becomes all zeros (used for fully masked queries).
inline void softmax_inplace(std::span<double> v) {
    double m = kNegInf;
    for (double x : v) m = std::max(m, x);
    if (m == kNegInf) {
        for (double& x : v) x = 0.0;
        return;
    }
    double acc = 0.0;
    for (double& x : v) {
        x = std::exp(x - m);
        acc += x;
    }
    for (double& x : v) x /= acc;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace augicl
