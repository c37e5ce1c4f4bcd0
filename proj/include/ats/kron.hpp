#pragma once

#include <string>

#include "ats/linalg.hpp"

namespace ats {

// R(S) for S made of p x p blocks of size k x k: row j*p + i holds vec(S_ij)'.
// R(Omega x Sigma) = vec(Omega) vec(Sigma)'.
inline Mat rearrange(const Mat& s, Eigen::Index p, Eigen::Index k) {
    if (s.rows() != p * k || s.cols() != p * k) throw ConfigError("rearrange: matrix must be (p k) x (p k)");
    Mat r(p * p, k * k);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < p; ++i) r.row(j * p + i) = vec(s.block(i * k, j * k, k, k)).transpose();
    return r;
}

inline Mat rearrange_inverse(const Mat& r, Eigen::Index p, Eigen::Index k) {
    if (r.rows() != p * p || r.cols() != k * k) throw ConfigError("rearrange_inverse: shape mismatch");
    Mat s(p * k, p * k);
    for (Eigen::Index j = 0; j < p; ++j)
        for (Eigen::Index i = 0; i < p; ++i) s.block(i * k, j * k, k, k) = vecinv(r.row(j * p + i).transpose(), k, k);
    return s;
}

enum class KpsNormalization {
    OmegaFirst,   // Omega(0,0) = 1, scaling by the leading entry of the left singular vector
    SigmaFirst,   // Sigma(0,0) = 1
};

struct KpsFactorization {
    Mat omega;  // p x p
    Mat sigma;  // k x k
    double residual_rel = 0.0;
    Vec spectrum;  // singular values of R(S)
    // "leading" when divided by L_11, "max-entry" when |L_11| was too small.
    std::string normalization = "leading";
    Mat product() const { return kron(omega, sigma); }
};

inline KpsFactorization kps_factorize(const Mat& s_hat, Eigen::Index p, Eigen::Index k,
                                       KpsNormalization norm = KpsNormalization::OmegaFirst, bool project = true) {
    const Mat s = symmetrize(s_hat);
    const Mat r = rearrange(s, p, k);
    Eigen::JacobiSVD<Mat> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
    KpsFactorization f;
    f.spectrum = svd.singularValues();
    const double s1 = f.spectrum(0);
    if (!(s1 > 0)) throw NumericalError("kps_factorize: zero input matrix");
    Vec l1 = svd.matrixU().col(0);
    Vec n1 = svd.matrixV().col(0);

    const double tail2 = f.spectrum.tail(f.spectrum.size() - 1).squaredNorm();
    const double snorm = s.norm();
    f.residual_rel = snorm > 0 ? std::sqrt(tail2) / snorm : 0.0;

    double scale = l1(0);
    if (std::abs(scale) < 1e-10 * l1.norm()) {
        Eigen::Index idx = 0;
        l1.cwiseAbs().maxCoeff(&idx);
        scale = l1(idx);
        f.normalization = "max-entry";
    }
    f.omega = vecinv(l1 / scale, p, p);
    f.sigma = vecinv(scale * s1 * n1, k, k);
    if (norm == KpsNormalization::SigmaFirst) {
        double c = f.sigma(0, 0);
        if (std::abs(c) < 1e-10 * f.sigma.norm()) {
            Eigen::Index i = 0, j = 0;
            f.sigma.cwiseAbs().maxCoeff(&i, &j);
            c = f.sigma(i, j);
            f.normalization = "max-entry";
        }
        f.omega *= c;
        f.sigma /= c;
    }
    // Sign: the product is unchanged by (-Omega, -Sigma); keep Omega's trace positive.
    if (f.omega.trace() < 0) {
        f.omega = -f.omega;
        f.sigma = -f.sigma;
    }
    if (project) {
        f.omega = spd_project(f.omega);
        f.sigma = spd_project(f.sigma);
    } else {
        f.omega = symmetrize(f.omega);
        f.sigma = symmetrize(f.sigma);
    }
    return f;
}

struct KpsReport {
    double residual_rel = 0.0;
    double ratio = 0.0;  // sigma_2 / sigma_1
    double threshold = 0.10;
    bool warn = false;
};

inline KpsReport kps_residual_report(const KpsFactorization& f, double threshold = 0.10) {
    KpsReport r;
    r.residual_rel = f.residual_rel;
    r.ratio = f.spectrum.size() > 1 && f.spectrum(0) > 0 ? f.spectrum(1) / f.spectrum(0) : 0.0;
    r.threshold = threshold;
    r.warn = f.residual_rel > threshold;
    return r;
}

}  // namespace ats
