#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "ats/error.hpp"

namespace ats {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline Mat kron(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

// Column-major stacking.
inline Vec vec(const Mat& m) { return Eigen::Map<const Vec>(m.data(), m.size()); }

inline Mat vecinv(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != rows * cols) throw ConfigError("vecinv: size mismatch");
    return Eigen::Map<const Mat>(v.data(), rows, cols);
}

// K_{m,n} vec(A) = vec(A') for A of size m x n.
inline Mat commutation(Eigen::Index m, Eigen::Index n) {
    Mat k = Mat::Zero(m * n, m * n);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) k(i * n + j, j * m + i) = 1.0;
    return k;
}

inline double mean_diag(const Mat& m) {
    return m.rows() > 0 ? m.trace() / static_cast<double>(m.rows()) : 0.0;
}

struct CholeskyResult {
    Mat lower;
    double jitter = 0.0;  // diagonal shift that made the factorization succeed
};

// Lower Cholesky factor of the symmetrized input. On failure retries with a
// diagonal shift of 1e-12 and then 1e-10 times trace/dim.
inline CholeskyResult robust_cholesky(const Mat& m, const char* what = "matrix") {
    const Mat s = symmetrize(m);
    const double scale = std::abs(mean_diag(s));
    const double steps[] = {0.0, 1e-12, 1e-10};
    for (double rel : steps) {
        const double jit = rel * (scale > 0 ? scale : 1.0);
        Mat shifted = s;
        shifted.diagonal().array() += jit;
        Eigen::LLT<Mat> llt(shifted);
        if (llt.info() == Eigen::Success) {
            Mat l = llt.matrixL();
            if (l.allFinite() && (l.diagonal().array() > 0).all()) return {l, jit};
        }
    }
    throw NumericalError(std::string("Cholesky failed: ") + what + " is not positive definite");
}

// Symmetrize and clip eigenvalues from below at rel_floor * trace/dim.
inline Mat spd_project(const Mat& m, double rel_floor = 1e-12) {
    const Mat s = symmetrize(m);
    Eigen::SelfAdjointEigenSolver<Mat> es(s);
    Vec ev = es.eigenvalues();
    const double tr = s.trace() / static_cast<double>(s.rows());
    const double floor = rel_floor * std::abs(tr);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = std::max(ev(i), floor);
    return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

inline double condition_number(const Mat& x) {
    Eigen::JacobiSVD<Mat> svd(x);
    const Vec& s = svd.singularValues();
    if (s.size() == 0) return 0.0;
    const double smin = s(s.size() - 1);
    return smin > 0 ? s(0) / smin : std::numeric_limits<double>::infinity();
}

// Least squares X b = Y through column-pivoted QR; throws on rank deficiency.
inline Mat ols(const Mat& x, const Mat& y, const char* what = "design") {
    if (x.rows() != y.rows()) throw ConfigError(std::string(what) + ": row mismatch");
    if (x.rows() < x.cols()) throw ConfigError(std::string(what) + ": fewer observations than regressors");
    Eigen::ColPivHouseholderQR<Mat> qr(x);
    if (qr.rank() < x.cols()) {
        std::ostringstream os;
        os << what << " is rank deficient (rank " << qr.rank() << " of " << x.cols()
           << ", condition number " << condition_number(x) << ")";
        throw NumericalError(os.str());
    }
    return qr.solve(y);
}

// Roots of det(mu B - A) = 0 for symmetric A and symmetric positive definite B,
// ascending. B is Cholesky-reduced: eig(L^-1 A L^-T).
struct GenEig {
    Vec values;
    Mat vectors;  // B-orthonormal generalized eigenvectors, columns
};

inline GenEig gen_eig_sym(const Mat& a, const Mat& b) {
    const CholeskyResult ch = robust_cholesky(b, "pencil right-hand matrix");
    const auto tri = ch.lower.triangularView<Eigen::Lower>();
    Mat c = tri.solve(symmetrize(a));
    c = tri.solve(c.transpose()).transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(c));
    GenEig out;
    out.values = es.eigenvalues();
    out.vectors = ch.lower.transpose().triangularView<Eigen::Upper>().solve(es.eigenvectors());
    return out;
}

// Orthonormal basis of the complement of a unit vector u (K x (K-1)). Built from
// Householder QR of [u | I]; each column is sign-fixed so that its
// largest-magnitude entry is positive.
inline Mat orthonormal_complement(const Vec& u) {
    const Eigen::Index k = u.size();
    Mat m(k, k + 1);
    m.col(0) = u;
    m.rightCols(k) = Mat::Identity(k, k);
    Eigen::HouseholderQR<Mat> qr(m);
    Mat q = qr.householderQ() * Mat::Identity(k, k);
    Mat comp = q.rightCols(k - 1);
    for (Eigen::Index j = 0; j < comp.cols(); ++j) {
        Eigen::Index idx = 0;
        comp.col(j).cwiseAbs().maxCoeff(&idx);
        if (comp(idx, j) < 0) comp.col(j) *= -1.0;
    }
    return comp;
}

inline double rel_diff(double a, double b) {
    const double d = std::abs(a - b);
    const double s = std::max(std::abs(a), std::abs(b));
    return s > 0 ? d / s : 0.0;
}

inline double rel_fro(const Mat& a, const Mat& b) {
    const double s = std::max(a.norm(), b.norm());
    return s > 0 ? (a - b).norm() / s : 0.0;
}

}  // namespace ats
