#pragma once

#include "posattn/core.hpp"
#include "posattn/teachers.hpp"

#include <utility>
#include <vector>

namespace posattn {

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double tail_fraction = 1.0;
    int points = 0;
};

// Least squares of log(value) on log(t) over the last tail_fraction of the
// points above the 1e-12 floor. Nonpositive values are rejected.
SlopeFit loglog_slope(const std::vector<std::pair<double, double>>& series, double tail_fraction = 0.5);

// Removes points at or below the 1e-12 floor, including negative estimates.
std::vector<std::pair<double, double>> drop_floor(const std::vector<std::pair<double, double>>& series);

double cosine_similarity(const Matrix& W_V, const Matrix& V_star);

struct TwoValueStats {
    double p_hat = 0.0;
    double off_hat = 0.0;
    double max_dev = 0.0;
};

TwoValueStats two_value_structure(const Matrix& S, const Groups& groups);

// Smallest and largest ratio x_i / median(x) over a series.
std::pair<double, double> spread_about_median(std::vector<double> values);

}  // namespace posattn
