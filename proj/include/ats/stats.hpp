#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ats/linalg.hpp"

namespace ats {

inline double chi2_sf(double x, double dof) {
    if (dof <= 0) throw ConfigError("chi2_sf: dof must be positive");
    if (!(x > 0)) return 1.0;
    if (!std::isfinite(x)) return 0.0;
    return boost::math::gamma_q(0.5 * dof, 0.5 * x);
}

inline double chi2_cdf(double x, double dof) {
    if (!(x > 0)) return 0.0;
    if (!std::isfinite(x)) return 1.0;
    return boost::math::gamma_p(0.5 * dof, 0.5 * x);
}

inline double chi2_quantile(double p, double dof) {
    if (p <= 0) return 0.0;
    if (p >= 1) return std::numeric_limits<double>::infinity();
    return boost::math::quantile(boost::math::chi_squared(dof), p);
}

inline double chi2_pdf(double x, double dof) {
    if (x <= 0) return 0.0;
    return boost::math::pdf(boost::math::chi_squared(dof), x);
}

// Empirical quantile with linear interpolation between order statistics
// (Hyndman-Fan type 7).
inline double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    const double h = (static_cast<double>(xs.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

inline double binomial_se(double p, std::size_t n) {
    return n > 0 ? std::sqrt(p * (1.0 - p) / static_cast<double>(n)) : 0.0;
}

// Asymptotic standard error of a sample p-quantile given the density at it.
inline double quantile_se(double p, std::size_t n, double density) {
    if (n == 0 || density <= 0) return std::numeric_limits<double>::infinity();
    return std::sqrt(p * (1.0 - p) / static_cast<double>(n)) / density;
}

struct KsResult {
    double statistic = 0.0;
    double pvalue = 1.0;
    std::size_t n = 0;
};

// Kolmogorov limiting survival function, Q(x) = 2 sum (-1)^{k-1} exp(-2 k^2 x^2).
inline double kolmogorov_sf(double x) {
    if (x <= 0) return 1.0;
    if (x < 0.2) return 1.0;
    double s = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * x * x);
        s += (k % 2 == 1 ? term : -term);
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

// One-sample KS test. p-value from the Kolmogorov limit with Stephens'
// finite-sample scaling (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.
inline KsResult ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
    KsResult r;
    r.n = xs.size();
    if (xs.empty()) return r;
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max(d, std::max(f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f));
    }
    r.statistic = d;
    const double sn = std::sqrt(n);
    r.pvalue = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    return r;
}

// Deterministic generator for replicate `rep`, sub-stream `stream`. The three
// keys are mixed through seed_seq so streams do not depend on visiting order.
using Engine = boost::random::mt19937_64;

inline Engine make_engine(std::uint64_t seed, std::uint64_t rep, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    Engine e;
    e.seed(seq);
    return e;
}

inline Mat standard_normal(Engine& eng, Eigen::Index rows, Eigen::Index cols) {
    boost::random::normal_distribution<double> nd(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(eng);
    return m;
}

inline Mat random_spd(Engine& eng, Eigen::Index n, double ridge = 0.5) {
    const Mat a = standard_normal(eng, n, n);
    Mat s = a * a.transpose() / static_cast<double>(n);
    s.diagonal().array() += ridge;
    return symmetrize(s);
}

}  // namespace ats
