#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

namespace testsupport {

struct MeanSe {
    double mean = 0, se = 0;
};

inline MeanSe mean_se(const std::vector<double>& x) {
    double n = double(x.size());
    double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / (n - 1) / n)};
}

// Asymptotic Kolmogorov tail Q(l) = 2 sum (-1)^{k-1} exp(-2 k^2 l^2).
inline double kolmogorov_q(double l) {
    if (l < 0.2) return 1.0;
    double sum = 0, sign = 1;
    for (int k = 1; k <= 100; ++k) {
        double term = sign * std::exp(-2.0 * k * k * l * l);
        sum += term;
        if (std::abs(term) < 1e-12) break;
        sign = -sign;
    }
    return std::clamp(2 * sum, 0.0, 1.0);
}

struct KsResult {
    double D = 0, p = 1;
};

// Two-sample KS; handles ties (discrete data) by stepping over equal values together.
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double D = 0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        D = std::max(D, std::abs(double(i) / a.size() - double(j) / b.size()));
    }
    double ne = double(a.size()) * b.size() / (a.size() + b.size());
    double l = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * D;
    return {D, kolmogorov_q(l)};
}

// One-sample KS against a continuous CDF.
template <class Cdf>
KsResult ks_one_sample(std::vector<double> x, Cdf&& F) {
    std::sort(x.begin(), x.end());
    double n = double(x.size()), D = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double f = F(x[i]);
        D = std::max({D, (i + 1) / n - f, f - i / n});
    }
    double l = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * D;
    return {D, kolmogorov_q(l)};
}

// Pearson chi-square goodness of fit; returns the p-value.
inline double chi_square_p(const std::vector<double>& observed, const std::vector<double>& expected) {
    double stat = 0;
    for (std::size_t k = 0; k < observed.size(); ++k)
        stat += (observed[k] - expected[k]) * (observed[k] - expected[k]) / expected[k];
    boost::math::chi_squared dist(double(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace testsupport
