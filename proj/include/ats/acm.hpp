#pragma once

#include <string>
#include <vector>

#include "ats/datamodel.hpp"
#include "ats/linalg.hpp"
#include "ats/stats.hpp"
#include "ats/varstage.hpp"

namespace ats {

enum class Variant { I, II };

inline const char* to_string(Variant v) { return v == Variant::I ? "I" : "II"; }

// Second-stage output in the (a, d, beta) parameterization of
//   r_{t,n} = a_n + d_n' X_{t-1} + beta_n' X_t + e_{t,n}.
// Variant II regresses on (1, X_{t-1}, v̂_t) with coefficients (b, c, beta),
// mapped through a = b - beta mu, d = c - beta Phi.
struct ReturnRegression {
    Vec a_hat;         // N
    Mat d_hat;         // N x K
    Mat beta_hat;      // N x K, row n = beta_n'
    Mat residuals;     // N x T
    double sigma_e2 = 0.0;
    Vec sigma_e2_vec;  // per-asset variances, filled in both modes
    bool per_asset = false;
    Vec g_hat;         // N
    Variant variant = Variant::II;

    // Coefficients of the (1, X_{t-1}, v̂_t) regression.
    Vec b(const VarEstimate& v) const { return a_hat + beta_hat * v.mu; }
    Mat c(const VarEstimate& v) const { return d_hat + beta_hat * v.phi1; }
};

struct PriceOfRisk {
    Vec lambda0;   // K
    Mat lambda1;   // K x K, multiplies X_t
    double bb_condition = 0.0;

    Mat stacked() const {
        Mat l(lambda1.rows(), lambda1.cols() + 1);
        l.col(0) = lambda0;
        l.rightCols(lambda1.cols()) = lambda1;
        return l;
    }
};

struct StageOptions {
    Variant variant = Variant::II;
    bool per_asset_sigma = false;
    double condition_cap = 1e12;
    VarOptions var;
};

inline void check_alignment(const ReturnPanel& r, const FactorPanel& f) {
    if (r.t() + 1 != f.t())
        throw ConfigError("panels misaligned: returns have T = " + std::to_string(r.t()) + ", factors need T + 1 = " +
                          std::to_string(r.t() + 1) + " columns, got " + std::to_string(f.t()));
    if (r.n() < 1) throw ConfigError("no return series");
}

// g_n = 1/2 (beta_n' Sigma_v beta_n + sigma_e^2).
inline Vec convexity_adjustment(const Mat& beta, const Mat& sigma_v, double sigma_e2) {
    Vec g(beta.rows());
    for (Eigen::Index n = 0; n < beta.rows(); ++n)
        g(n) = 0.5 * (beta.row(n) * sigma_v * beta.row(n).transpose() + sigma_e2);
    return g;
}

inline Vec convexity_adjustment(const Mat& beta, const Mat& sigma_v, const Vec& sigma_e2) {
    Vec g(beta.rows());
    for (Eigen::Index n = 0; n < beta.rows(); ++n)
        g(n) = 0.5 * (beta.row(n) * sigma_v * beta.row(n).transpose() + sigma_e2(n));
    return g;
}

inline ReturnRegression second_stage(const ReturnPanel& returns, const FactorPanel& factors, const VarEstimate& var,
                                     const StageOptions& opt = {}) {
    check_alignment(returns, factors);
    const Eigen::Index k = factors.k(), t = returns.t(), n = returns.n();
    if (t < 2 * k + 2) throw ConfigError("second_stage: T too small for 2K + 1 regressors");
    Mat z(t, 2 * k + 1);
    z.col(0).setOnes();
    z.middleCols(1, k) = factors.factors.leftCols(t).transpose();
    if (opt.variant == Variant::I)
        z.rightCols(k) = factors.factors.rightCols(t).transpose();
    else
        z.rightCols(k) = var.residuals.transpose();
    const Mat y = returns.returns.transpose();
    const Mat coef = ols(z, y, "second-stage design");  // (2K+1) x N
    ReturnRegression r;
    r.variant = opt.variant;
    r.beta_hat = coef.bottomRows(k).transpose();
    const Vec first = coef.row(0).transpose();
    const Mat second = coef.middleRows(1, k).transpose();
    if (opt.variant == Variant::I) {
        r.a_hat = first;
        r.d_hat = second;
    } else {
        r.a_hat = first - r.beta_hat * var.mu;
        r.d_hat = second - r.beta_hat * var.phi1;
    }
    r.residuals = (y - z * coef).transpose();
    const double td = static_cast<double>(t);
    r.sigma_e2 = r.residuals.squaredNorm() / (static_cast<double>(n) * td);
    r.sigma_e2_vec = r.residuals.rowwise().squaredNorm() / td;
    r.per_asset = opt.per_asset_sigma;
    r.g_hat = r.per_asset ? convexity_adjustment(r.beta_hat, var.sigma_v, r.sigma_e2_vec)
                          : convexity_adjustment(r.beta_hat, var.sigma_v, r.sigma_e2);
    return r;
}

inline PriceOfRisk third_stage(const ReturnRegression& reg, const VarEstimate& var, double condition_cap = 1e12) {
    const Mat& b = reg.beta_hat;
    const Mat bb = b.transpose() * b;
    PriceOfRisk p;
    p.bb_condition = condition_number(bb);
    if (!(p.bb_condition < condition_cap))
        throw NumericalError("beta'beta is near singular (condition number " + fmt17(p.bb_condition) +
                             "); a factor may be (nearly) unspanned by returns");
    Eigen::LDLT<Mat> ldlt(bb);
    p.lambda0 = ldlt.solve(b.transpose() * (reg.a_hat + reg.g_hat + b * var.mu));
    p.lambda1 = ldlt.solve(b.transpose() * (reg.d_hat + b * var.phi1));
    return p;
}

struct ThreeStepFit {
    VarEstimate var;
    ReturnRegression reg;
    PriceOfRisk por;
    Eigen::Index T = 0, N = 0, K = 0;
};

inline ThreeStepFit three_step(const ReturnPanel& returns, const FactorPanel& factors, const StageOptions& opt = {}) {
    check_alignment(returns, factors);
    ThreeStepFit f;
    f.var = fit_var1(factors, opt.var);
    f.reg = second_stage(returns, factors, f.var, opt);
    f.por = third_stage(f.reg, f.var, opt.condition_cap);
    f.T = returns.t();
    f.N = returns.n();
    f.K = factors.k();
    return f;
}

// Covariances of sqrt(T)(vec(beta_hat) - vec(beta)) and sqrt(T) vec(Lambda_hat - Lambda)
// with Lambda = [lambda0, Lambda1] (K x (K+1)) stacked column-major; vec(beta) is
// column-major over the N x K matrix.
struct AsymptoticCovariance {
    Mat v_beta;        // NK x NK
    Mat c_lambda_beta;  // K(K+1) x NK
    Mat v_lambda;      // K(K+1) x K(K+1)
    Eigen::Index k = 0;

    Mat v_lambda1() const { return v_lambda.bottomRightCorner(k * k, k * k); }
};

// Assembled from the delta method on lambda = P (Y), P = (beta'beta)^{-1} beta':
//   gamma^{-1} x Sigma_v                         VAR estimation error through (b, c)
//   gamma^{-1} x P Sigma_e P'                     return errors through (b, c)
//   J_beta V_beta J_beta'                         beta error, incl. the g(beta) channel
//   e1 e1' x 1/4 P B* (I + K)(Sv x Sv) B*' P'     Sigma_v error through g
//   e1 e1' x sigma^4 / (2N) P 1 1' P'             sigma_e^2 error through g
inline AsymptoticCovariance asymptotic_covariance(const ThreeStepFit& fit) {
    const Eigen::Index k = fit.K, n = fit.N;
    const Mat& beta = fit.reg.beta_hat;
    const Mat& sv = fit.var.sigma_v;
    const Mat bb = beta.transpose() * beta;
    const Mat p = bb.ldlt().solve(beta.transpose());  // K x N
    Eigen::FullPivLU<Mat> glu(fit.var.gamma_zz);
    if (!glu.isInvertible()) throw NumericalError("gamma_ZZ is singular");
    const Mat gi = glu.inverse();
    Eigen::FullPivLU<Mat> svlu(sv);
    if (!svlu.isInvertible()) throw NumericalError("Sigma_v is singular");
    const Mat svi = symmetrize(svlu.inverse());

    Vec s2 = fit.reg.per_asset ? fit.reg.sigma_e2_vec : Vec::Constant(n, fit.reg.sigma_e2);
    const Mat sig_e = s2.asDiagonal();

    AsymptoticCovariance out;
    out.v_beta = kron(svi, sig_e);

    const Mat lam = fit.por.stacked();  // K x (K+1)
    Mat g = Mat::Zero(n, n * k);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec sb = sv * beta.row(i).transpose();
        for (Eigen::Index j = 0; j < k; ++j) g(i, j * n + i) = sb(j);
    }
    Mat jb = -kron(lam.transpose(), p);  // K(K+1) x NK
    jb.topRows(k) += p * g;

    Mat v = kron(gi, sv) + kron(gi, p * sig_e * p.transpose()) + jb * out.v_beta * jb.transpose();

    Mat bstar(n, k * k);
    for (Eigen::Index i = 0; i < n; ++i) bstar.row(i) = kron(beta.row(i).transpose(), beta.row(i).transpose()).transpose();
    const Mat kk = commutation(k, k);
    const Mat vs = (Mat::Identity(k * k, k * k) + kk) * kron(sv, sv);
    Mat lam0 = 0.25 * p * bstar * vs * bstar.transpose() * p.transpose();
    if (fit.reg.per_asset) {
        const Vec s4 = s2.array().square();
        lam0 += 0.5 * p * s4.asDiagonal() * p.transpose();
    } else {
        const Vec ones = Vec::Ones(n);
        const double s = fit.reg.sigma_e2;
        lam0 += (s * s / (2.0 * static_cast<double>(n))) * p * ones * ones.transpose() * p.transpose();
    }
    v.topLeftCorner(k, k) += lam0;
    out.v_lambda = symmetrize(v);
    out.k = k;
    out.c_lambda_beta = jb * out.v_beta;
    return out;
}

struct WaldResult {
    double statistic = 0.0;
    int dof = 0;
    double pvalue = 1.0;
    Mat covariance;  // covariance of sqrt(T) vec(Lambda1_hat)
};

inline WaldResult wald_from_cov(const Mat& lambda1, const Mat& h0, const Mat& v_lambda1, Eigen::Index T) {
    if (h0.rows() != lambda1.rows() || h0.cols() != lambda1.cols()) throw ConfigError("wald: h0 must be K x K");
    WaldResult w;
    w.covariance = v_lambda1;
    w.dof = static_cast<int>(lambda1.size());
    const Vec d = vec(lambda1 - h0);
    const CholeskyResult ch = robust_cholesky(v_lambda1, "V_Lambda1");
    const Vec u = ch.lower.triangularView<Eigen::Lower>().solve(d);
    w.statistic = static_cast<double>(T) * u.squaredNorm();
    w.pvalue = chi2_sf(w.statistic, w.dof);
    return w;
}

inline WaldResult wald_test(const ThreeStepFit& fit, const Mat& h0) {
    const AsymptoticCovariance ac = asymptotic_covariance(fit);
    return wald_from_cov(fit.por.lambda1, h0, ac.v_lambda1(), fit.T);
}

// Parametric bootstrap of Lambda1_hat from the fitted model: Gaussian VAR
// innovations around (mu, Phi, Sigma_v), returns b + c X_{t-1} + beta v_t + e_t,
// initial factor fixed at the observed X_0. Returns T-scaled covariance of vec(Lambda1_hat).
inline Mat bootstrap_lambda1_cov(const ThreeStepFit& fit, const FactorPanel& factors, std::size_t reps,
                                 std::uint64_t seed, const StageOptions& opt = {}) {
    const Eigen::Index k = fit.K, n = fit.N, t = fit.T;
    const Mat lv = robust_cholesky(fit.var.sigma_v, "Sigma_v").lower;
    const Vec b = fit.reg.b(fit.var);
    const Mat c = fit.reg.c(fit.var);
    const Vec se = (fit.reg.per_asset ? fit.reg.sigma_e2_vec : Vec::Constant(n, fit.reg.sigma_e2)).cwiseSqrt();
    std::vector<Vec> draws;
    draws.reserve(reps);
    for (std::size_t r = 0; r < reps; ++r) {
        Engine eng = make_engine(seed, r, 7);
        const Mat v = lv * standard_normal(eng, k, t);
        const Mat e = se.asDiagonal() * standard_normal(eng, n, t);
        FactorPanel fp;
        fp.factors.resize(k, t + 1);
        fp.factors.col(0) = factors.factors.col(0);
        for (Eigen::Index s = 0; s < t; ++s)
            fp.factors.col(s + 1) = fit.var.mu + fit.var.phi1 * fp.factors.col(s) + v.col(s);
        ReturnPanel rp;
        rp.returns = (c * fp.factors.leftCols(t) + fit.reg.beta_hat * v).colwise() + b;
        rp.returns += e;
        try {
            const ThreeStepFit bf = three_step(rp, fp, opt);
            draws.push_back(vec(bf.por.lambda1));
        } catch (const NumericalError&) {
        }
    }
    if (draws.size() < 2) throw NumericalError("bootstrap: too few successful replicates");
    Vec mean = Vec::Zero(k * k);
    for (const auto& d : draws) mean += d;
    mean /= static_cast<double>(draws.size());
    Mat cov = Mat::Zero(k * k, k * k);
    for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose();
    cov /= static_cast<double>(draws.size() - 1);
    return symmetrize(cov * static_cast<double>(t));
}

// Per-asset t-statistics of beta_hat and per-column Wald chi2(N) tests of beta_k = 0.
struct BetaInference {
    Mat tstat;       // N x K
    Vec col_stat;    // K
    Vec col_pvalue;  // K
};

inline BetaInference beta_inference(const ThreeStepFit& fit) {
    const AsymptoticCovariance ac = asymptotic_covariance(fit);
    const Eigen::Index k = fit.K, n = fit.N;
    const double td = static_cast<double>(fit.T);
    BetaInference bi;
    bi.tstat.resize(n, k);
    bi.col_stat.resize(k);
    bi.col_pvalue.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < n; ++i)
            bi.tstat(i, j) = fit.reg.beta_hat(i, j) / std::sqrt(ac.v_beta(j * n + i, j * n + i) / td);
        const Mat vb = ac.v_beta.block(j * n, j * n, n, n);
        const Vec bj = fit.reg.beta_hat.col(j);
        bi.col_stat(j) = td * bj.dot(vb.ldlt().solve(bj));
        bi.col_pvalue(j) = chi2_sf(bi.col_stat(j), static_cast<double>(n));
    }
    return bi;
}

}  // namespace ats
