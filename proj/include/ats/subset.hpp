#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ats/optim.hpp"
#include "ats/robust.hpp"
#include "ats/stats.hpp"

namespace ats {

struct StackedSystem {
    Eigen::Index T = 0, N = 0, K = 0;
    Mat phi;        // N x 2K, (c ⋮ beta)
    Mat w;          // 2K x 2K
    Mat psi;        // W^{-1} Omega W^{-1}
    Mat sigma;      // N x N
    Mat sigma_inv;

    Mat beta() const { return phi.rightCols(K); }
    Mat psi_v() const { return psi.bottomRightCorner(K, K); }
    // Phi' Sigma^{-1} Phi
    Mat gram() const { return symmetrize(phi.transpose() * sigma_inv * phi); }
};

inline StackedSystem make_stacked(Eigen::Index T, const Mat& phi, const Mat& w, const Mat& psi, const Mat& sigma) {
    StackedSystem s;
    s.T = T;
    s.N = phi.rows();
    s.K = phi.cols() / 2;
    if (phi.cols() != 2 * s.K || psi.rows() != 2 * s.K || sigma.rows() != s.N)
        throw ConfigError("stacked system: inconsistent dimensions");
    s.phi = phi;
    s.w = w;
    s.psi = symmetrize(psi);
    s.sigma = symmetrize(sigma);
    const CholeskyResult ch = robust_cholesky(s.sigma, "Sigma");
    const Mat li = ch.lower.triangularView<Eigen::Lower>().solve(Mat::Identity(s.N, s.N));
    s.sigma_inv = symmetrize(li.transpose() * li);
    return s;
}

inline StackedSystem build_stacked(const RobustContext& c) { return make_stacked(c.T, c.phi, c.w, c.psi, c.kps.sigma); }

enum class SubsetKind { Row, Column };

struct SubsetHypothesis {
    SubsetKind kind = SubsetKind::Row;
    Eigen::Index index = 0;
    Vec value;  // K
};

struct SfarResult {
    double statistic = 0.0;
    Vec roots;  // ascending
    int dof_bound = 0;
    double pvalue_upper = 1.0;
    std::string method = "eigen";
    bool converged = true;
    bool ridge_applied = false;
    Mat argmin;  // Lambda1 at the minimum (numeric route)
};

inline int sfar_dof(Eigen::Index n, Eigen::Index k) { return static_cast<int>(k * (n - k + 1)); }

// T x sum of the K smallest roots of det(mu A'Psi A - A'Phi'Sigma^{-1}Phi A) = 0.
// The roots depend on A only through its column space, so A is replaced by an
// orthonormal basis; large hypothesis values would otherwise swamp the ridge test.
inline SfarResult sfar_pencil(const StackedSystem& s, const Mat& a_in) {
    SfarResult r;
    const Eigen::HouseholderQR<Mat> qr(a_in);
    const Mat a = qr.householderQ() * Mat::Identity(a_in.rows(), a_in.cols());
    const Mat lhs = symmetrize(a.transpose() * s.gram() * a);
    Mat rhs = symmetrize(a.transpose() * s.psi * a);
    Eigen::SelfAdjointEigenSolver<Mat> check(rhs, Eigen::EigenvaluesOnly);
    const double scale = std::abs(rhs.trace()) / static_cast<double>(rhs.rows());
    if (check.eigenvalues()(0) <= 1e-12 * scale) {
        rhs.diagonal().array() += 1e-12 * (scale > 0 ? scale : 1.0);
        r.ridge_applied = true;
    }
    const GenEig ge = gen_eig_sym(lhs, rhs);
    r.roots = ge.values.cwiseMax(0.0);
    r.statistic = static_cast<double>(s.T) * r.roots.head(s.K).sum();
    r.dof_bound = sfar_dof(s.N, s.K);
    r.pvalue_upper = chi2_sf(r.statistic, r.dof_bound);
    return r;
}

// A(lambda) for a row hypothesis on row i of Lambda1.
inline Mat row_restriction(Eigen::Index k, Eigen::Index i, const Vec& lambda) {
    if (i < 0 || i >= k) throw ConfigError("row index out of range");
    if (lambda.size() != k) throw ConfigError("row hypothesis needs a K-vector");
    Mat a = Mat::Zero(2 * k, 2 * k - 1);
    a.topLeftCorner(k, k) = Mat::Identity(k, k);
    a.block(k + i, 0, 1, k) = -lambda.transpose();
    Eigen::Index col = k;
    for (Eigen::Index j = 0; j < k; ++j)
        if (j != i) a(k + j, col++) = 1.0;
    return a;
}

inline SfarResult sfar_row(const StackedSystem& s, Eigen::Index i, const Vec& lambda) {
    return sfar_pencil(s, row_restriction(s.K, i, lambda));
}

// FAR with the Kronecker-structured variance, T tr(Sigma^{-1} Phi B (B'Psi B)^{-1} B'Phi').
inline double far_kps(const StackedSystem& s, const Mat& lambda1, Mat* grad = nullptr) {
    const Mat b = b_matrix(lambda1);
    const Mat u = s.phi * b;
    const Mat g = symmetrize(b.transpose() * s.psi * b);
    Eigen::LLT<Mat> gl(g);
    if (gl.info() != Eigen::Success) throw NumericalError("B'Psi B not positive definite");
    const Mat siu = s.sigma_inv * u;
    const Mat gi_utu = gl.solve(u.transpose() * siu);  // G^{-1} U'S^{-1}U
    const double td = static_cast<double>(s.T);
    const double val = td * gi_utu.trace();
    if (grad) {
        const Mat gi = gl.solve(Mat::Identity(s.K, s.K));
        const Mat h = gi_utu * gi;  // G^{-1} U'S^{-1}U G^{-1}
        const Mat db = 2.0 * (s.phi.transpose() * siu * gi - s.psi * b * h);  // d/dB
        *grad = -td * db.bottomRows(s.K);
    }
    return val;
}

// Minimum of far_kps over the entries of Lambda1 where `free` is true, the rest
// held at `base`. Multi-start BFGS; starts are the fixed-feasible GLS-like point
// and seeded Gaussian perturbations of it.
struct FarMin {
    Mat argmin;
    double value = 0.0;
    bool converged = false;
    std::vector<double> start_values;
};

inline Mat gls_lambda1(const StackedSystem& s) {
    const Mat b = s.beta();
    const Mat bsb = symmetrize(b.transpose() * s.sigma_inv * b);
    return bsb.ldlt().solve(b.transpose() * s.sigma_inv * s.phi.leftCols(s.K));
}

inline FarMin minimize_far(const StackedSystem& s, const Mat& base, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& free,
                           int starts = 20, std::uint64_t seed = 1, double tol = 1e-10) {
    const Eigen::Index k = s.K;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> idx;
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index i = 0; i < k; ++i)
            if (free(i, j)) idx.emplace_back(i, j);
    auto unpack = [&](const Vec& x) {
        Mat l = base;
        for (std::size_t m = 0; m < idx.size(); ++m) l(idx[m].first, idx[m].second) = x(static_cast<Eigen::Index>(m));
        return l;
    };
    const Objective obj = [&](const Vec& x, Vec* g) {
        const Mat l = unpack(x);
        if (!g) return far_kps(s, l);
        Mat gm;
        const double v = far_kps(s, l, &gm);
        for (std::size_t m = 0; m < idx.size(); ++m) (*g)(static_cast<Eigen::Index>(m)) = gm(idx[m].first, idx[m].second);
        return v;
    };
    const Mat l0 = gls_lambda1(s);
    Vec x0(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t m = 0; m < idx.size(); ++m) x0(static_cast<Eigen::Index>(m)) = l0(idx[m].first, idx[m].second);
    const double spread = 0.5 * (1.0 + (x0.size() ? x0.cwiseAbs().maxCoeff() : 0.0));
    FarMin out;
    out.value = std::numeric_limits<double>::infinity();
    Engine eng = make_engine(seed, 0, 101);
    for (int st = 0; st < std::max(1, starts); ++st) {
        Vec xs = x0;
        if (st > 0) xs += spread * standard_normal(eng, x0.size(), 1).col(0);
        MinResult mr;
        try {
            mr = minimize_bfgs(obj, xs, tol);
        } catch (const NumericalError&) {
            out.start_values.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        out.start_values.push_back(mr.value);
        if (mr.value < out.value) {
            out.value = mr.value;
            out.argmin = unpack(mr.x);
            out.converged = mr.converged;
        } else if (mr.converged && rel_diff(mr.value, out.value) < 1e-8) {
            out.converged = true;
        }
    }
    if (!std::isfinite(out.value)) throw NumericalError("FAR minimization failed from every start");
    return out;
}

// Row hypothesis by direct minimization over the other rows (oracle route).
inline FarMin sfar_row_numeric(const StackedSystem& s, Eigen::Index i, const Vec& lambda, int starts = 20,
                               std::uint64_t seed = 1) {
    Mat base = Mat::Zero(s.K, s.K);
    base.row(i) = lambda.transpose();
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> free = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(s.K, s.K, true);
    free.row(i).setConstant(false);
    return minimize_far(s, base, free, starts, seed);
}

inline SfarResult sfar_column(const StackedSystem& s, Eigen::Index j, const Vec& column, int starts = 20,
                              std::uint64_t seed = 1) {
    if (j < 0 || j >= s.K) throw ConfigError("column index out of range");
    if (column.size() != s.K) throw ConfigError("column hypothesis needs a K-vector");
    Mat base = Mat::Zero(s.K, s.K);
    base.col(j) = column;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> free = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(s.K, s.K, true);
    free.col(j).setConstant(false);
    const FarMin fm = minimize_far(s, base, free, starts, seed);
    SfarResult r;
    r.method = "numeric";
    r.statistic = fm.value;
    r.converged = fm.converged;
    r.argmin = fm.argmin;
    r.dof_bound = sfar_dof(s.N, s.K);
    r.pvalue_upper = chi2_sf(r.statistic, r.dof_bound);
    return r;
}

inline SfarResult sfar_test(const StackedSystem& s, const SubsetHypothesis& h) {
    return h.kind == SubsetKind::Row ? sfar_row(s, h.index, h.value) : sfar_column(s, h.index, h.value);
}

inline Mat distant_restriction(const Vec& direction) {
    const Eigen::Index k = direction.size();
    if (std::abs(direction.norm() - 1.0) > 1e-8) throw ConfigError("direction must have unit norm");
    Mat d = Mat::Zero(2 * k, 2 * k - 1);
    if (k > 1) d.topLeftCorner(k, k - 1) = orthonormal_complement(direction);
    d.bottomRightCorner(k, k) = Mat::Identity(k, k);
    return d;
}

// Limit of sfar_row(c * direction) as c grows.
inline SfarResult sfar_distant(const StackedSystem& s, const Vec& direction) {
    return sfar_pencil(s, distant_restriction(direction));
}

struct RankTestResult {
    double statistic = 0.0;
    int dof = 0;
    double pvalue = 1.0;
};

// T x min root of det(mu Psi_V - beta' Sigma^{-1} beta) = 0; H0: rank(beta) = K - 1.
inline RankTestResult kp_rank(const StackedSystem& s) {
    const Mat b = s.beta();
    const GenEig ge = gen_eig_sym(symmetrize(b.transpose() * s.sigma_inv * b), s.psi_v());
    RankTestResult r;
    r.statistic = static_cast<double>(s.T) * std::max(0.0, ge.values(0));
    r.dof = static_cast<int>(s.N - s.K + 1);
    r.pvalue = chi2_sf(r.statistic, r.dof);
    return r;
}

inline std::vector<Vec> scan_directions(Eigen::Index k, int n_directions, std::uint64_t seed = 1) {
    std::vector<Vec> dirs;
    if (k == 1) {
        dirs.push_back(Vec::Ones(1));
        return dirs;
    }
    if (k == 2) {
        for (int j = 0; j < n_directions; ++j) {
            const double th = std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_directions);
            Vec d(2);
            d << std::cos(th), std::sin(th);
            dirs.push_back(d);
        }
        return dirs;
    }
    Engine eng = make_engine(seed, 0, 202);
    for (int j = 0; j < n_directions; ++j) {
        Vec d = standard_normal(eng, k, 1).col(0);
        dirs.push_back(d / d.norm());
    }
    return dirs;
}

struct BoundednessRecord {
    bool bounded_all = true;
    std::vector<Vec> unbounded_directions;
    std::vector<double> distant_values;
    double critical = 0.0;
    RankTestResult rank;
    bool rank_guarantees_bounded = false;  // K = 1 and the rank test rejects
};

// A direction is unbounded when the distant sFAR value does not exceed the
// chi2_{1-alpha}(K(N-K+1)) critical value, i.e. far-away points are accepted.
inline BoundednessRecord boundedness_diagnostic(const StackedSystem& s, double alpha, int n_directions,
                                                std::uint64_t seed = 1) {
    if (n_directions < 1) throw ConfigError("n_directions must be >= 1");
    BoundednessRecord b;
    b.critical = chi2_quantile(1.0 - alpha, sfar_dof(s.N, s.K));
    for (const Vec& d : scan_directions(s.K, n_directions, seed)) {
        const double v = sfar_distant(s, d).statistic;
        b.distant_values.push_back(v);
        if (v <= b.critical && alpha < 1.0) {
            b.bounded_all = false;
            b.unbounded_directions.push_back(d);
        }
    }
    b.rank = kp_rank(s);
    b.rank_guarantees_bounded = s.K == 1 && b.rank.statistic > chi2_quantile(1.0 - alpha, b.rank.dof);
    return b;
}

}  // namespace ats
