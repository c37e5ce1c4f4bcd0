#pragma once

#include "ats/mc.hpp"

namespace fx {

using namespace ats;

struct Truth {
    Vec lambda0;
    Mat lambda1;
    Mat beta;
};

struct Dataset {
    ReturnPanel returns;
    FactorPanel factors;
    Truth truth;
};

// Random stationary VAR factors.
inline FactorPanel random_factors(Eigen::Index k, Eigen::Index t, std::uint64_t seed) {
    Engine eng = make_engine(seed, 0, 50);
    Mat phi = 0.3 * standard_normal(eng, k, k) / std::sqrt(static_cast<double>(k));
    for (Eigen::Index i = 0; i < k; ++i) phi(i, i) += 0.4;
    const Vec mu = standard_normal(eng, k, 1).col(0);
    const Mat lv = psd_sqrt(random_spd(eng, k));
    FactorPanel f;
    f.factors.resize(k, t + 1);
    f.factors.col(0) = mu;
    const Mat v = lv * standard_normal(eng, k, t);
    for (Eigen::Index s = 0; s < t; ++s) f.factors.col(s + 1) = mu + phi * f.factors.col(s) + v.col(s);
    return f;
}

// Returns with noise from a general linear model, so every regression is well posed.
inline Dataset random_dataset(Eigen::Index n, Eigen::Index k, Eigen::Index t, std::uint64_t seed, double noise = 0.5) {
    Dataset d;
    d.factors = random_factors(k, t, seed);
    Engine eng = make_engine(seed, 0, 51);
    d.truth.beta = standard_normal(eng, n, k);
    d.truth.lambda1 = 0.3 * standard_normal(eng, k, k);
    const Mat x = d.factors.factors;
    const Vec a = standard_normal(eng, n, 1).col(0);
    const Mat dd = standard_normal(eng, n, k);
    Mat r = dd * x.leftCols(t) + d.truth.beta * x.rightCols(t);
    r.colwise() += a;
    r += noise * standard_normal(eng, n, t);
    d.returns.returns = r;
    return d;
}

// Returns built on the fitted innovations with no error term, with the
// intercept consistent with the convexity adjustment: estimation is exact.
inline Dataset noiseless_dataset(Eigen::Index n, Eigen::Index k, Eigen::Index t, std::uint64_t seed) {
    Dataset d;
    d.factors = random_factors(k, t, seed);
    Engine eng = make_engine(seed, 0, 52);
    d.truth.beta = standard_normal(eng, n, k);
    d.truth.lambda1 = 0.3 * standard_normal(eng, k, k);
    d.truth.lambda0 = standard_normal(eng, k, 1).col(0);
    const VarEstimate v = fit_var1(d.factors);
    const Vec g = convexity_adjustment(d.truth.beta, v.sigma_v, 0.0);
    const Vec b = d.truth.beta * d.truth.lambda0 - g;
    Mat r = d.truth.beta * (d.truth.lambda1 * d.factors.factors.leftCols(t) + v.residuals);
    r.colwise() += b;
    d.returns.returns = r;
    return d;
}

// Returns beta (Lambda1 X_{t-1} + v̂_t) plus noise projected off (1, X_{t-1}, v̂_t):
// the stacked regression recovers (beta Lambda1, beta) exactly while the residual
// covariance stays non-singular.
inline Dataset exact_stacked_dataset(Eigen::Index n, Eigen::Index k, Eigen::Index t, std::uint64_t seed) {
    Dataset d;
    d.factors = random_factors(k, t, seed);
    Engine eng = make_engine(seed, 0, 54);
    d.truth.beta = standard_normal(eng, n, k);
    d.truth.lambda1 = 0.3 * standard_normal(eng, k, k);
    const VarEstimate v = fit_var1(d.factors);
    Mat zz(2 * k + 1, t);
    zz.row(0).setOnes();
    zz.middleRows(1, k) = d.factors.factors.leftCols(t);
    zz.bottomRows(k) = v.residuals;
    const Mat e0 = 0.3 * standard_normal(eng, n, t);
    const Mat coef = ols(zz.transpose(), e0.transpose()).transpose();
    const Mat e = e0 - coef * zz;
    Mat r = d.truth.beta * (d.truth.lambda1 * d.factors.factors.leftCols(t) + v.residuals) + e;
    r.colwise() += standard_normal(eng, n, 1).col(0);
    d.returns.returns = r;
    return d;
}

// A stacked system with random SPD Psi and Sigma.
inline StackedSystem random_stacked(Eigen::Index n, Eigen::Index k, Eigen::Index t, std::uint64_t seed) {
    Engine eng = make_engine(seed, 0, 53);
    const Mat phi = standard_normal(eng, n, 2 * k);
    const Mat w = random_spd(eng, 2 * k);
    const Mat psi = random_spd(eng, 2 * k);
    const Mat sigma = random_spd(eng, n);
    return make_stacked(t, phi, w, psi, sigma);
}

inline double rel(double a, double b) { return rel_diff(a, b); }

}  // namespace fx
