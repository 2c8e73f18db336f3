#include "posattn/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace posattn {

namespace {
constexpr double floor_value = 1e-12;
}

std::vector<std::pair<double, double>> drop_floor(const std::vector<std::pair<double, double>>& series) {
    std::vector<std::pair<double, double>> out;
    for (const auto& pt : series) {
        if (pt.second > floor_value) {
            out.push_back(pt);
        }
    }
    return out;
}

SlopeFit loglog_slope(const std::vector<std::pair<double, double>>& series, double tail_fraction) {
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
        fail(ErrorKind::domain, "tail_fraction: must lie in (0, 1]");
    }
    std::vector<std::pair<double, double>> kept;
    kept.reserve(series.size());
    for (const auto& [t, v] : series) {
        if (!(t > 0.0)) {
            fail(ErrorKind::domain, "loglog_slope: t must be positive");
        }
        if (!std::isfinite(v)) {
            fail(ErrorKind::domain, "loglog_slope: non-finite value");
        }
        if (!(v > 0.0)) {
            fail(ErrorKind::domain, "loglog_slope: values must be positive");
        }
        if (v > floor_value) {
            kept.emplace_back(std::log(t), std::log(v));
        }
    }
    const auto n_tail = static_cast<std::size_t>(std::ceil(tail_fraction * kept.size()));
    if (n_tail < 10) {
        fail(ErrorKind::domain, "loglog_slope: fewer than 10 positive tail points");
    }
    const std::size_t start = kept.size() - n_tail;
    double sx = 0, sy = 0;
    for (std::size_t i = start; i < kept.size(); ++i) {
        sx += kept[i].first;
        sy += kept[i].second;
    }
    const double n = static_cast<double>(n_tail);
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = start; i < kept.size(); ++i) {
        double dx = kept[i].first - mx, dy = kept[i].second - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) {
        fail(ErrorKind::domain, "loglog_slope: all tail points share one t");
    }
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    fit.tail_fraction = tail_fraction;
    fit.points = static_cast<int>(n_tail);
    return fit;
}

double cosine_similarity(const Matrix& W_V, const Matrix& V_star) {
    require_shape(W_V, V_star.rows(), V_star.cols(), "W_V");
    const double a = W_V.norm(), b = V_star.norm();
    if (a == 0.0 || b == 0.0) {
        fail(ErrorKind::domain, "cosine_similarity: zero matrix");
    }
    return std::clamp(W_V.cwiseProduct(V_star).sum() / (a * b), -1.0, 1.0);
}

TwoValueStats two_value_structure(const Matrix& S, const Groups& groups) {
    const auto D = S.rows();
    require_shape(S, D, D, "S");
    if (static_cast<Eigen::Index>(groups.size()) != D) {
        fail(ErrorKind::dimension, "groups: need one group per column");
    }
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> on =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(D, D, false);
    for (Eigen::Index i = 0; i < D; ++i) {
        for (int src : groups[i]) {
            on(src, i) = true;
        }
    }
    double on_sum = 0, off_sum = 0;
    long on_n = 0, off_n = 0;
    for (Eigen::Index i = 0; i < D; ++i) {
        for (Eigen::Index r = 0; r < D; ++r) {
            if (on(r, i)) {
                on_sum += S(r, i);
                ++on_n;
            } else {
                off_sum += S(r, i);
                ++off_n;
            }
        }
    }
    TwoValueStats st;
    st.p_hat = on_n ? on_sum / on_n : 0.0;
    st.off_hat = off_n ? off_sum / off_n : 0.0;
    for (Eigen::Index i = 0; i < D; ++i) {
        for (Eigen::Index r = 0; r < D; ++r) {
            double mean = on(r, i) ? st.p_hat : st.off_hat;
            st.max_dev = std::max(st.max_dev, std::abs(S(r, i) - mean));
        }
    }
    return st;
}

std::pair<double, double> spread_about_median(std::vector<double> values) {
    if (values.empty()) {
        fail(ErrorKind::domain, "spread_about_median: empty series");
    }
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    if (median == 0.0) {
        fail(ErrorKind::domain, "spread_about_median: zero median");
    }
    return {sorted.front() / median, sorted.back() / median};
}

}  // namespace posattn
