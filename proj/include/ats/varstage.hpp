#pragma once

#include "ats/datamodel.hpp"
#include "ats/linalg.hpp"

namespace ats {

struct VarOptions {
    // Q_XX sums X̄_{t-1} X̄_{t-1}' over t = 1..T (X̄_0 included). When false the
    // sum starts at t = 2; the divisor stays T.
    bool qxx_include_initial = true;
};

// VAR(1) on factors X_0..X_T. Lag sample is X_0..X_{T-1}.
struct VarEstimate {
    Vec mu;          // K
    Mat phi1;        // K x K
    Mat residuals;   // K x T, v̂_1..v̂_T
    Mat sigma_v;     // (1/T) V̂ V̂'
    Mat qxx;         // demeaned lag second moment
    Mat gamma_zz;    // (1/T) Z'Z with Z_t = (1, X_{t-1}')
    Mat lags_demeaned;  // K x T, X̄_0..X̄_{T-1}
    Vec lag_mean;
    Eigen::Index T = 0;
};

inline VarEstimate fit_var1(const FactorPanel& factors, const VarOptions& opt = {}) {
    const Mat& x = factors.factors;
    const Eigen::Index k = x.rows();
    const Eigen::Index t = x.cols() - 1;
    if (k < 1) throw ConfigError("fit_var1: no factors");
    if (t < k + 2) throw ConfigError("fit_var1: need T >= K + 2 observation pairs");
    Mat z(t, k + 1);
    z.col(0).setOnes();
    z.rightCols(k) = x.leftCols(t).transpose();
    const Mat y = x.rightCols(t).transpose();
    const Mat coef = ols(z, y, "VAR lag design");  // (K+1) x K
    VarEstimate v;
    v.T = t;
    v.mu = coef.row(0).transpose();
    v.phi1 = coef.bottomRows(k).transpose();
    v.residuals = (y - z * coef).transpose();
    const double td = static_cast<double>(t);
    v.sigma_v = symmetrize(v.residuals * v.residuals.transpose() / td);
    v.gamma_zz = symmetrize(z.transpose() * z / td);
    v.lag_mean = x.leftCols(t).rowwise().mean();
    v.lags_demeaned = x.leftCols(t).colwise() - v.lag_mean;
    const Eigen::Index first = opt.qxx_include_initial ? 0 : 1;
    const Mat xl = v.lags_demeaned.rightCols(t - first);
    v.qxx = symmetrize(xl * xl.transpose() / td);
    return v;
}

inline double spectral_radius(const Mat& a) {
    Eigen::EigenSolver<Mat> es(a, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace ats
