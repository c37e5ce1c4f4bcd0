#pragma once

#include <string>

#include "ats/acm.hpp"
#include "ats/kron.hpp"
#include "ats/linalg.hpp"
#include "ats/stats.hpp"

namespace ats {

enum class ResidualCov {
    Homoskedastic,  // W x Sigma_e
    Outer,          // (1/T) sum (z z') x (e e'), HC0
};

enum class VffMode { Auto, Kps, Direct };

inline const char* to_string(VffMode m) {
    switch (m) {
        case VffMode::Auto: return "auto";
        case VffMode::Kps: return "kps";
        default: return "direct";
    }
}

struct RobustOptions {
    ResidualCov resid = ResidualCov::Homoskedastic;
    VffMode mode = VffMode::Auto;
    // Adds Q x beta Sigma_v beta' to the X-block of S for the estimated v̂.
    bool generated_regressor = true;
    // Residual covariance divisor T - 2K - N - 2 instead of T.
    bool small_sample = true;
    double kps_threshold = 0.10;
    bool vqf_check = false;
};

// Everything the robust tests need, computed once per dataset.
struct RobustContext {
    Eigen::Index T = 0, N = 0, K = 0;
    Mat xbar;     // K x T, X̄_0..X̄_{T-1}
    Mat vhat;     // K x T
    Mat rbar;     // N x T, demeaned returns
    Mat z;        // 2K x T
    Mat w;        // (1/T) z z'
    Mat w_inv;
    Mat phi;      // N x 2K, (c ⋮ beta)
    Mat resid;    // N x T
    Mat q;        // Q_XX
    Mat sigma_v;
    Mat s_hat;    // 2KN x 2KN, covariance of T^{-1/2} sum z_t x e_t
    Mat v_phi;    // covariance of sqrt(T) vec(Phi_hat) used by the tests
    KpsFactorization kps;
    Mat psi;      // W^{-1} Omega W^{-1}
    VffMode mode_used = VffMode::Kps;
    RobustOptions opt;

    Mat c_hat() const { return phi.leftCols(K); }
    Mat beta() const { return phi.rightCols(K); }
};

inline Mat residual_sigma(const Mat& e, Eigen::Index k, bool small_sample) {
    const Eigen::Index t = e.cols(), n = e.rows();
    double div = static_cast<double>(t);
    if (small_sample) {
        const double adj = static_cast<double>(t - 2 * k - n - 2);
        if (adj > 0) div = adj;
    }
    return symmetrize(e * e.transpose() / div);
}

inline Mat moment_cov(const Mat& z, const Mat& e, const Mat& w, Eigen::Index k, const RobustOptions& opt) {
    const Eigen::Index t = z.cols(), n = e.rows(), m = z.rows();
    Mat s;
    if (opt.resid == ResidualCov::Homoskedastic) {
        s = kron(w, residual_sigma(e, k, opt.small_sample));
    } else {
        s = Mat::Zero(m * n, m * n);
        for (Eigen::Index i = 0; i < t; ++i) {
            const Vec mt = kron(z.col(i), e.col(i));
            s.selfadjointView<Eigen::Lower>().rankUpdate(mt);
        }
        s = s.selfadjointView<Eigen::Lower>();
        double div = static_cast<double>(t);
        if (opt.small_sample) {
            const double adj = static_cast<double>(t - 2 * k - n - 2);
            if (adj > 0) div = adj;
        }
        s /= div;
    }
    return symmetrize(s);
}

inline RobustContext make_context(const ReturnPanel& returns, const FactorPanel& factors, const VarEstimate& var,
                                  const RobustOptions& opt = {}) {
    check_alignment(returns, factors);
    RobustContext c;
    c.opt = opt;
    c.T = returns.t();
    c.N = returns.n();
    c.K = factors.k();
    const Eigen::Index k = c.K, n = c.N, t = c.T;
    const double td = static_cast<double>(t);
    c.xbar = var.lags_demeaned;
    c.vhat = var.residuals;
    c.rbar = demean_rows(returns.returns);
    c.z.resize(2 * k, t);
    c.z.topRows(k) = c.xbar;
    c.z.bottomRows(k) = c.vhat;
    c.w = symmetrize(c.z * c.z.transpose() / td);
    Eigen::LDLT<Mat> wl(c.w);
    if (wl.info() != Eigen::Success || !(wl.vectorD().array() > 0).all())
        throw NumericalError("W is singular");
    c.w_inv = symmetrize(wl.solve(Mat::Identity(2 * k, 2 * k)));
    c.phi = ols(c.z.transpose(), c.rbar.transpose(), "stacked regression").transpose();
    c.resid = c.rbar - c.phi * c.z;
    c.q = var.qxx;
    c.sigma_v = var.sigma_v;

    c.s_hat = moment_cov(c.z, c.resid, c.w, k, opt);
    if (opt.generated_regressor) {
        const Mat b = c.beta();
        c.s_hat.topLeftCorner(k * n, k * n) += kron(c.q, b * c.sigma_v * b.transpose());
        c.s_hat = symmetrize(c.s_hat);
    }
    c.kps = kps_factorize(c.s_hat, 2 * k, n);
    c.psi = symmetrize(c.w_inv * c.kps.omega * c.w_inv);

    c.mode_used = opt.mode;
    if (opt.mode == VffMode::Auto)
        c.mode_used = c.kps.residual_rel < opt.kps_threshold ? VffMode::Kps : VffMode::Direct;
    if (c.mode_used == VffMode::Kps) {
        c.v_phi = kron(c.psi, c.kps.sigma);
    } else {
        const Mat a = kron(c.w_inv, Mat::Identity(n, n));
        c.v_phi = symmetrize(a * c.s_hat * a);
    }
    return c;
}

inline RobustContext make_context(const ReturnPanel& returns, const FactorPanel& factors,
                                  const RobustOptions& opt = {}, const VarOptions& vopt = {}) {
    return make_context(returns, factors, fit_var1(factors, vopt), opt);
}

// B = (I_K; -Lambda1).
inline Mat b_matrix(const Mat& lambda1) {
    const Eigen::Index k = lambda1.rows();
    Mat b(2 * k, k);
    b.topRows(k) = Mat::Identity(k, k);
    b.bottomRows(k) = -lambda1;
    return b;
}

// f_T = (1/T) sum X̄_{t-1} x (R̄_t - beta v̂_t) - (Q x beta) vec(Lambda1).
inline Vec moment_vector(const RobustContext& c, const Mat& h0) {
    if (h0.rows() != c.K || h0.cols() != c.K) throw ConfigError("moment_vector: h0 must be K x K");
    const Mat b = c.beta();
    const Mat m = (c.rbar - b * c.vhat) * c.xbar.transpose() / static_cast<double>(c.T);
    return vec(m - b * h0 * c.q);
}

// L vec(beta) = vec(Q x beta).
inline Mat kron_lift(const Mat& q, Eigen::Index n) {
    const Eigen::Index k = q.rows();
    const Eigen::Index rows = n * k;
    Mat l = Mat::Zero(rows * k * k, n * k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index kk = 0; kk < k; ++kk)
            for (Eigen::Index i = 0; i < k; ++i)
                for (Eigen::Index nn = 0; nn < n; ++nn)
                    l((j * k + kk) * rows + i * n + nn, kk * n + nn) = q(i, j);
    return l;
}

inline Mat vff_from(const Mat& v_phi, const Mat& q, const Mat& h0, Eigen::Index n) {
    const Mat bq = b_matrix(h0) * q;
    const Mat a = kron(bq.transpose(), Mat::Identity(n, n));
    return symmetrize(a * v_phi * a.transpose());
}

inline Mat vqf_from(const Mat& v_phi, const Mat& q, const Mat& h0, Eigen::Index n) {
    const Eigen::Index k = q.rows();
    Mat ev = Mat::Zero(2 * k, k);
    ev.bottomRows(k) = Mat::Identity(k, k);
    const Mat bq = b_matrix(h0) * q;
    const Mat sel = kron(ev.transpose(), Mat::Identity(n, n));
    const Mat right = kron(bq, Mat::Identity(n, n));
    return -kron_lift(q, n) * sel * v_phi * right;
}

inline Mat vff_estimator(const RobustContext& c, const Mat& h0) { return vff_from(c.v_phi, c.q, h0, c.N); }

struct MomentSystem {
    Vec f;          // NK
    Mat q;          // NK x K^2
    Mat vff;        // NK x NK
    Mat vqf;        // NK^3 x NK
    Mat d_ortho;    // NK x K^2
    Mat h0;
    double vqf_discrepancy = 0.0;  // relative Frobenius distance to the HC0 reference
    bool vqf_flag = false;
};

inline Mat orthogonalize_jacobian(const Mat& q, const Mat& vqf, const Mat& vff, const Vec& f) {
    const CholeskyResult ch = robust_cholesky(vff, "V_ff");
    const auto l = ch.lower.triangularView<Eigen::Lower>();
    const Vec y = ch.lower.transpose().triangularView<Eigen::Upper>().solve(l.solve(f));
    const Vec d = vec(q) - vqf * y;
    return vecinv(d, q.rows(), q.cols());
}

inline MomentSystem moment_system(const RobustContext& c, const Mat& h0) {
    MomentSystem s;
    s.h0 = h0;
    s.f = moment_vector(c, h0);
    s.q = -kron(c.q, c.beta());
    s.vff = vff_estimator(c, h0);
    s.vqf = vqf_from(c.v_phi, c.q, h0, c.N);
    s.d_ortho = orthogonalize_jacobian(s.q, s.vqf, s.vff, s.f);
    if (c.opt.vqf_check) {
        RobustOptions ho = c.opt;
        ho.resid = ResidualCov::Outer;
        ho.small_sample = false;
        Mat s_ref = moment_cov(c.z, c.resid, c.w, c.K, ho);
        if (c.opt.generated_regressor) {
            const Mat b = c.beta();
            s_ref.topLeftCorner(c.K * c.N, c.K * c.N) += kron(c.q, b * c.sigma_v * b.transpose());
        }
        const Mat a = kron(c.w_inv, Mat::Identity(c.N, c.N));
        const Mat vref = vqf_from(a * s_ref * a, c.q, h0, c.N);
        s.vqf_discrepancy = rel_fro(s.vqf, vref);
        s.vqf_flag = s.vqf_discrepancy > 0.10;
    }
    return s;
}

enum class TestName { FAR, KLM, JKLM, Wald, sFAR };

inline const char* to_string(TestName n) {
    switch (n) {
        case TestName::FAR: return "FAR";
        case TestName::KLM: return "KLM";
        case TestName::JKLM: return "JKLM";
        case TestName::Wald: return "Wald";
        default: return "sFAR";
    }
}

struct RobustTestResult {
    TestName name = TestName::FAR;
    double statistic = 0.0;
    int dof = 0;
    double pvalue = 1.0;
    bool bound_only = false;
    Mat h0;
    std::string warning;
};

// The three full-vector statistics from one moment system.
struct RobustTriple {
    RobustTestResult far, klm, jklm;
};

inline RobustTriple robust_tests(const MomentSystem& s, Eigen::Index T, Eigen::Index K) {
    const Eigen::Index nk = s.f.size();
    const Eigen::Index n = nk / K;
    const CholeskyResult ch = robust_cholesky(s.vff, "V_ff");
    const auto l = ch.lower.triangularView<Eigen::Lower>();
    const Vec g = l.solve(s.f);
    const Mat h = l.solve(s.d_ortho);
    Eigen::ColPivHouseholderQR<Mat> qr(h);
    const Eigen::Index rank = qr.rank();
    const Mat qfull = qr.householderQ() * Mat::Identity(nk, nk);
    const Mat qr_basis = qfull.leftCols(rank);
    const Vec pg = qr_basis * (qr_basis.transpose() * g);
    const double td = static_cast<double>(T);

    RobustTriple r;
    r.far.name = TestName::FAR;
    r.far.statistic = td * g.squaredNorm();
    r.far.dof = static_cast<int>(K * n);
    r.klm.name = TestName::KLM;
    r.klm.statistic = td * pg.squaredNorm();
    r.klm.dof = static_cast<int>(K * K);
    r.jklm.name = TestName::JKLM;
    r.jklm.statistic = td * (g - pg).squaredNorm();
    r.jklm.dof = static_cast<int>(K * (n - K));
    if (rank < K * K) {
        const std::string w = "orthogonalized Jacobian has rank " + std::to_string(rank) + " < " +
                              std::to_string(K * K) + "; projection on realized rank";
        r.klm.warning = w;
        r.jklm.warning = w;
    }
    for (RobustTestResult* t : {&r.far, &r.klm, &r.jklm}) {
        t->h0 = s.h0;
        t->pvalue = t->dof > 0 ? chi2_sf(t->statistic, t->dof) : 1.0;
    }
    return r;
}

inline RobustTriple robust_tests(const RobustContext& c, const Mat& h0) {
    return robust_tests(moment_system(c, h0), c.T, c.K);
}

inline RobustTestResult far(const RobustContext& c, const Mat& h0) { return robust_tests(c, h0).far; }
inline RobustTestResult klm(const RobustContext& c, const Mat& h0) { return robust_tests(c, h0).klm; }
inline RobustTestResult jklm(const RobustContext& c, const Mat& h0) { return robust_tests(c, h0).jklm; }

}  // namespace ats
