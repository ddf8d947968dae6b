#pragma once

#include "qrlab/common.hpp"

namespace qrlab {

/// Least-squares slope of log(error) on log(n).
struct RateFit {
    double exponent = 0.0;
    double stderr_ = 0.0;
    double r_squared = 0.0;
    std::vector<double> n_used;
};

inline RateFit fit_rate(const std::vector<double>& n_list, const std::vector<double>& errors) {
    const char* stage = "fit_rate";
    require(n_list.size() == errors.size(), stage, "n_list and errors differ in length");
    require(n_list.size() >= 3, stage, "need at least 3 points, got " + std::to_string(n_list.size()));
    const std::size_t k = n_list.size();
    std::vector<double> x(k), y(k);
    for (std::size_t i = 0; i < k; ++i) {
        require(n_list[i] > 0.0, stage, "n must be positive");
        if (!(errors[i] > 0.0))
            throw InvalidArgument(stage, "error value at n=" + std::to_string(n_list[i]) + " is not positive");
        x[i] = std::log(n_list[i]);
        y[i] = std::log(errors[i]);
    }
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(k);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(k);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, stage, "n values must not all be equal");
    RateFit f;
    f.exponent = sxy / sxx;
    const double intercept = my - f.exponent * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double e = y[i] - intercept - f.exponent * x[i];
        sse += e * e;
    }
    f.stderr_ = std::sqrt(sse / static_cast<double>(k - 2) / sxx);
    f.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    f.n_used = n_list;
    return f;
}

}  // namespace qrlab
