#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "ats/csets.hpp"
#include "ats/stats.hpp"

namespace ats {

enum class Innovations {
    Generated,  // returns load on the true VAR innovations v_t
    Observed,   // returns load on the fitted v̂_t, as if the innovations were observed
};

enum class InitMode { Stationary, BurnIn };

struct DgpSpec {
    Vec c;          // N
    Mat beta;       // N x K
    Mat lambda1;    // K x K
    Vec mu;         // K
    Mat phi1;       // K x K
    Mat sigma_v;    // K x K
    double sigma_e2 = 0.0;
    Eigen::Index T = 300;
    Vec weak_scale;  // K, multiplies beta columns
    Innovations innovations = Innovations::Generated;
    InitMode init = InitMode::Stationary;
    int burn_in = 500;

    Eigen::Index n() const { return beta.rows(); }
    Eigen::Index k() const { return beta.cols(); }
    Mat effective_beta() const {
        if (weak_scale.size() == 0) return beta;
        return beta * weak_scale.asDiagonal();
    }
    void validate() const {
        const Eigen::Index k = this->k();
        if (k < 1 || n() < 1) throw ConfigError("dgp: empty beta");
        if (c.size() != n() || lambda1.rows() != k || lambda1.cols() != k || mu.size() != k || phi1.rows() != k ||
            phi1.cols() != k || sigma_v.rows() != k || sigma_v.cols() != k)
            throw ConfigError("dgp: inconsistent dimensions");
        if (T < k + 2) throw ConfigError("dgp: T must be >= K + 2");
        if (sigma_e2 < 0) throw ConfigError("dgp: sigma_e2 must be >= 0");
        if (weak_scale.size() != 0 && (weak_scale.size() != k || (weak_scale.array() < 0).any()))
            throw ConfigError("dgp: weak_scale must be K non-negative entries");
    }
};

// Stationary covariance P = Phi P Phi' + Sigma_v.
inline Mat stationary_covariance(const Mat& phi, const Mat& sigma_v) {
    const Eigen::Index k = phi.rows();
    const Mat a = Mat::Identity(k * k, k * k) - kron(phi, phi);
    const Vec p = a.fullPivLu().solve(vec(sigma_v));
    return symmetrize(vecinv(p, k, k));
}

// Square root L with L L' = M for symmetric PSD M; Cholesky when possible.
inline Mat psd_sqrt(const Mat& m) {
    Eigen::LLT<Mat> llt(symmetrize(m));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

struct SimPanels {
    ReturnPanel returns;
    FactorPanel factors;
};

inline SimPanels simulate(const DgpSpec& spec, std::uint64_t seed, std::uint64_t rep = 0) {
    spec.validate();
    const Eigen::Index k = spec.k(), n = spec.n(), t = spec.T;
    Engine e_init = make_engine(seed, rep, 1);
    Engine e_v = make_engine(seed, rep, 2);
    Engine e_e = make_engine(seed, rep, 3);
    const Mat lv = psd_sqrt(spec.sigma_v);
    Vec x0;
    if (spec.init == InitMode::Stationary) {
        if (spectral_radius(spec.phi1) >= 1.0) throw ConfigError("dgp: Phi1 is not stationary (spectral radius >= 1)");
        const Vec m = (Mat::Identity(k, k) - spec.phi1).fullPivLu().solve(spec.mu);
        x0 = m + psd_sqrt(stationary_covariance(spec.phi1, spec.sigma_v)) * standard_normal(e_init, k, 1).col(0);
    } else {
        x0 = Vec::Zero(k);
        const Mat vb = lv * standard_normal(e_init, k, spec.burn_in);
        for (int s = 0; s < spec.burn_in; ++s) x0 = spec.mu + spec.phi1 * x0 + vb.col(s);
    }
    const Mat v = lv * standard_normal(e_v, k, t);
    SimPanels out;
    Mat& x = out.factors.factors;
    x.resize(k, t + 1);
    x.col(0) = x0;
    for (Eigen::Index s = 0; s < t; ++s) x.col(s + 1) = spec.mu + spec.phi1 * x.col(s) + v.col(s);
    for (Eigen::Index j = 0; j < k; ++j) out.factors.labels.push_back("X" + std::to_string(j + 1));

    Mat innov = v;
    if (spec.innovations == Innovations::Observed) innov = fit_var1(out.factors).residuals;
    const Mat b = spec.effective_beta();
    Mat r = b * (spec.lambda1 * x.leftCols(t) + innov);
    r.colwise() += spec.c;
    if (spec.sigma_e2 > 0) r += std::sqrt(spec.sigma_e2) * standard_normal(e_e, n, t);
    out.returns.returns = std::move(r);
    for (Eigen::Index i = 0; i < n; ++i) out.returns.maturities_held.push_back(static_cast<double>(i + 1));
    return out;
}

// Matching robust options: the generated-regressor term is only present when
// returns load on the true innovations.
inline RobustOptions robust_options_for(const DgpSpec& spec, RobustOptions base = {}) {
    base.generated_regressor = spec.innovations == Innovations::Generated;
    return base;
}

inline DgpSpec calibrate(const ThreeStepFit& fit) {
    DgpSpec s;
    s.c = fit.reg.b(fit.var);
    s.beta = fit.reg.beta_hat;
    s.lambda1 = fit.por.lambda1;
    s.mu = fit.var.mu;
    s.phi1 = fit.var.phi1;
    s.sigma_v = fit.var.sigma_v;
    s.sigma_e2 = fit.reg.sigma_e2;
    s.T = fit.T;
    s.weak_scale = Vec::Ones(fit.K);
    return s;
}

// Shrinks column j of beta to norm c / sqrt(T).
inline DgpSpec weaken(DgpSpec s, Eigen::Index j, double c) {
    if (j < 0 || j >= s.k()) throw ConfigError("weaken: column index out of range");
    if (s.weak_scale.size() == 0) s.weak_scale = Vec::Ones(s.k());
    const double nrm = s.beta.col(j).norm();
    s.weak_scale(j) = nrm > 0 ? c / std::sqrt(static_cast<double>(s.T)) / nrm : 0.0;
    return s;
}

// Loadings over eleven maturities, one column per principal component.
inline Mat calibration_loadings() {
    Mat b(11, 5);
    b << -0.0094, 0.0031, -0.0008, 0.0002, 0.0000,
         -0.0213, 0.0057, -0.0007, -0.0003, 0.0002,
         -0.0446, 0.0070, 0.0010, -0.0005, -0.0001,
         -0.0656, 0.0048, 0.0024, 0.0000, -0.0003,
         -0.0843, 0.0003, 0.0028, 0.0007, -0.0001,
         -0.1011, -0.0059, 0.0022, 0.0010, 0.0003,
         -0.1164, -0.0130, 0.0008, 0.0010, 0.0006,
         -0.1305, -0.0206, -0.0011, 0.0005, 0.0005,
         -0.1435, -0.0284, -0.0033, -0.0003, 0.0002,
         -0.1556, -0.0361, -0.0056, -0.0015, -0.0005,
         -0.1669, -0.0436, -0.0078, -0.0028, -0.0014;
    return b;
}

// Single-factor design, N = 11, T = 300. Strong uses the first loading column,
// weak the third.
inline DgpSpec single_factor_design(bool strong, Eigen::Index T = 300) {
    DgpSpec s;
    const Mat b = calibration_loadings();
    s.beta = b.col(strong ? 0 : 2);
    s.c = Vec::Zero(11);
    s.lambda1 = Mat::Constant(1, 1, -0.3);
    s.mu = Vec::Zero(1);
    s.phi1 = Mat::Constant(1, 1, 0.5);
    s.sigma_v = Mat::Identity(1, 1);
    s.sigma_e2 = strong ? 0.04 : 0.01;
    s.T = T;
    s.weak_scale = Vec::Ones(1);
    return s;
}

// Two-factor design, N = 6 (maturity rows 2, 4, 6, 8, 10, 11). Strong uses the
// first two loading columns, weak the third and fifth.
inline DgpSpec two_factor_design(bool strong, Eigen::Index T = 300) {
    DgpSpec s;
    const Mat b = calibration_loadings();
    const int rows[] = {1, 3, 5, 7, 9, 10};
    const int c0 = strong ? 0 : 2, c1 = strong ? 1 : 4;
    s.beta.resize(6, 2);
    for (int i = 0; i < 6; ++i) {
        s.beta(i, 0) = b(rows[i], c0);
        s.beta(i, 1) = b(rows[i], c1);
    }
    s.c = Vec::Zero(6);
    s.lambda1.resize(2, 2);
    s.lambda1 << -0.3, 0.1, 0.05, -0.2;
    s.mu = Vec::Zero(2);
    s.phi1 = Mat::Zero(2, 2);
    s.phi1.diagonal() << 0.8, 0.7;
    s.sigma_v = Mat::Identity(2, 2);
    s.sigma_e2 = 1e-4;
    s.T = T;
    s.weak_scale = Vec::Ones(2);
    s.innovations = Innovations::Observed;
    return s;
}

// Runs body(rep) for rep in [0, reps) across `threads` workers; body must write
// only to per-rep slots.
inline void parallel_reps(std::size_t reps, int threads, const std::function<void(std::size_t)>& body) {
    const std::size_t nt = static_cast<std::size_t>(std::max(1, threads));
    if (nt == 1 || reps < 2) {
        for (std::size_t r = 0; r < reps; ++r) body(r);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t r = t; r < reps; r += nt) body(r);
        });
    for (auto& th : pool) th.join();
}

struct McOptions {
    std::uint64_t seed = 20240101;
    int threads = 1;
    RobustOptions robust;
    StageOptions stage;
};

struct FrequencyCell {
    std::string test;
    Mat h0;
    std::size_t rejections = 0;
    std::size_t valid = 0;
    std::size_t failures = 0;
    double frequency() const { return valid ? static_cast<double>(rejections) / static_cast<double>(valid) : 0.0; }
    double se() const { return binomial_se(frequency(), valid); }
};

// Rejection frequencies of `tests` (FAR, KLM, JKLM, Wald) at each h0 in the grid.
inline std::vector<FrequencyCell> power_curve(const std::vector<TestName>& tests, const std::vector<Mat>& h0_grid,
                                              const DgpSpec& spec, std::size_t reps, double level,
                                              const McOptions& opt = {}) {
    const std::size_t ncell = tests.size() * h0_grid.size();
    // per rep: 0 = accept, 1 = reject, 2 = failure
    std::vector<std::vector<char>> outcome(reps, std::vector<char>(ncell, 2));
    const RobustOptions ro = robust_options_for(spec, opt.robust);
    parallel_reps(reps, opt.threads, [&](std::size_t r) {
        const SimPanels p = simulate(spec, opt.seed, r);
        ThreeStepFit fit;
        RobustContext ctx;
        bool fit_ok = true, ctx_ok = true;
        try {
            fit = three_step(p.returns, p.factors, opt.stage);
        } catch (const std::exception&) {
            fit_ok = false;
        }
        AsymptoticCovariance ac;
        if (fit_ok) {
            try {
                ac = asymptotic_covariance(fit);
            } catch (const std::exception&) {
                fit_ok = false;
            }
        }
        try {
            ctx = make_context(p.returns, p.factors, ro, opt.stage.var);
        } catch (const std::exception&) {
            ctx_ok = false;
        }
        for (std::size_t h = 0; h < h0_grid.size(); ++h) {
            RobustTriple tr;
            bool tr_ok = ctx_ok;
            if (ctx_ok) {
                try {
                    tr = robust_tests(ctx, h0_grid[h]);
                } catch (const std::exception&) {
                    tr_ok = false;
                }
            }
            for (std::size_t i = 0; i < tests.size(); ++i) {
                char& o = outcome[r][h * tests.size() + i];
                try {
                    double pv = 0;
                    if (tests[i] == TestName::Wald) {
                        if (!fit_ok) continue;
                        pv = wald_from_cov(fit.por.lambda1, h0_grid[h], ac.v_lambda1(), fit.T).pvalue;
                    } else {
                        if (!tr_ok) continue;
                        pv = tests[i] == TestName::FAR ? tr.far.pvalue : tests[i] == TestName::KLM ? tr.klm.pvalue : tr.jklm.pvalue;
                    }
                    o = pv < 1.0 - level ? 1 : 0;
                } catch (const std::exception&) {
                    o = 2;
                }
            }
        }
    });
    std::vector<FrequencyCell> cells(ncell);
    for (std::size_t h = 0; h < h0_grid.size(); ++h)
        for (std::size_t i = 0; i < tests.size(); ++i) {
            FrequencyCell& c = cells[h * tests.size() + i];
            c.test = to_string(tests[i]);
            c.h0 = h0_grid[h];
            for (std::size_t r = 0; r < reps; ++r) {
                const char o = outcome[r][h * tests.size() + i];
                if (o == 2) ++c.failures;
                else {
                    ++c.valid;
                    if (o == 1) ++c.rejections;
                }
            }
        }
    return cells;
}

struct QuantileCheck {
    double p = 0.95;
    double empirical = 0.0;
    double reference = 0.0;  // chi2 quantile
    double se = 0.0;          // MC standard error of the empirical quantile
    bool within_bound() const { return empirical <= reference + 2.0 * se; }
};

struct DensityExperiment {
    std::vector<double> stats;
    std::vector<double> bin_edges;
    std::vector<std::size_t> counts;
    std::vector<QuantileCheck> quantiles;
    KsResult ks;
    int dof = 0;
    std::size_t failures = 0;
};

inline std::vector<QuantileCheck> chi2_quantile_checks(const std::vector<double>& xs, double dof,
                                                       const std::vector<double>& ps) {
    std::vector<QuantileCheck> out;
    for (double p : ps) {
        QuantileCheck q;
        q.p = p;
        q.reference = chi2_quantile(p, dof);
        q.empirical = xs.empty() ? std::numeric_limits<double>::quiet_NaN() : quantile(xs, p);
        // density of the reference at its quantile; exact under the null and an
        // upper bound on the spread when the law is stochastically smaller
        q.se = quantile_se(p, xs.size(), chi2_pdf(q.reference, dof));
        out.push_back(q);
    }
    return out;
}

inline void histogram(const std::vector<double>& xs, int bins, std::vector<double>& edges, std::vector<std::size_t>& counts) {
    edges.clear();
    counts.clear();
    if (xs.empty() || bins < 1) return;
    const double lo = 0.0;
    double hi = *std::max_element(xs.begin(), xs.end());
    if (!(hi > lo)) hi = lo + 1.0;
    for (int b = 0; b <= bins; ++b) edges.push_back(lo + (hi - lo) * b / bins);
    counts.assign(static_cast<std::size_t>(bins), 0);
    for (double x : xs) {
        auto b = static_cast<int>((x - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++counts[static_cast<std::size_t>(b)];
    }
}

// Null distribution of sFAR for the row hypothesis on row `row` at its true value.
inline DensityExperiment sfar_density_experiment(const DgpSpec& spec, std::size_t reps, Eigen::Index row = 0,
                                                 const McOptions& opt = {}, int bins = 50) {
    DensityExperiment d;
    d.dof = sfar_dof(spec.n(), spec.k());
    std::vector<double> stat(reps, std::numeric_limits<double>::quiet_NaN());
    const RobustOptions ro = robust_options_for(spec, opt.robust);
    const Vec truth = spec.lambda1.row(row).transpose();
    parallel_reps(reps, opt.threads, [&](std::size_t r) {
        try {
            const SimPanels p = simulate(spec, opt.seed, r);
            const RobustContext c = make_context(p.returns, p.factors, ro, opt.stage.var);
            stat[r] = sfar_row(build_stacked(c), row, truth).statistic;
        } catch (const std::exception&) {
        }
    });
    for (double s : stat) {
        if (std::isfinite(s)) d.stats.push_back(s);
        else ++d.failures;
    }
    histogram(d.stats, bins, d.bin_edges, d.counts);
    d.quantiles = chi2_quantile_checks(d.stats, d.dof, {0.90, 0.95, 0.99});
    const double dof = d.dof;
    d.ks = ks_test(d.stats, [dof](double x) { return chi2_cdf(x, dof); });
    return d;
}

struct PowerSurface {
    GridSpec grid;
    std::vector<double> frequency;  // flat, first axis fastest
    std::vector<std::size_t> valid;
    std::size_t reps = 0;
};

// sFAR rejection frequencies over a grid of row hypotheses.
inline PowerSurface power_surface(const DgpSpec& spec, const GridSpec& grid, std::size_t reps, double level,
                                  const McOptions& opt = {}) {
    if (static_cast<Eigen::Index>(grid.axes.size()) != spec.k()) throw ConfigError("power_surface: grid dims must be K");
    grid.validate();
    const std::size_t np = grid.size();
    std::vector<std::vector<char>> rej(reps, std::vector<char>(np, 2));
    const RobustOptions ro = robust_options_for(spec, opt.robust);
    const double crit_p = 1.0 - level;
    parallel_reps(reps, opt.threads, [&](std::size_t r) {
        try {
            const SimPanels p = simulate(spec, opt.seed, r);
            const StackedSystem s = build_stacked(make_context(p.returns, p.factors, ro, opt.stage.var));
            for (std::size_t i = 0; i < np; ++i) {
                const SfarResult f = grid.subset_kind == SubsetKind::Row ? sfar_row(s, grid.index, grid.point(i))
                                                                         : sfar_column(s, grid.index, grid.point(i));
                rej[r][i] = f.pvalue_upper < crit_p ? 1 : 0;
            }
        } catch (const std::exception&) {
        }
    });
    PowerSurface ps;
    ps.grid = grid;
    ps.reps = reps;
    ps.frequency.assign(np, 0.0);
    ps.valid.assign(np, 0);
    for (std::size_t i = 0; i < np; ++i) {
        std::size_t hits = 0;
        for (std::size_t r = 0; r < reps; ++r)
            if (rej[r][i] != 2) {
                ++ps.valid[i];
                hits += static_cast<std::size_t>(rej[r][i]);
            }
        ps.frequency[i] = ps.valid[i] ? static_cast<double>(hits) / static_cast<double>(ps.valid[i]) : 0.0;
    }
    return ps;
}

struct EigenLabSpec {
    Eigen::Index n_rows = 6;   // N
    Eigen::Index dim = 3;      // L = 2K - 1
    Eigen::Index k = 2;        // K
    Mat noncentrality;         // N x L mean matrix; empty means zero
    std::size_t reps = 10000;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct EigenLabResult {
    std::vector<double> small_sum;  // sum of the L - K + 1 smallest eigenvalues of Xi'Xi
    std::vector<double> large;      // the K - 1 largest, flattened per draw
    std::vector<QuantileCheck> small_quantiles;  // against chi2((L-K+1)(N-K+1))
    int central_dof = 0;
};

inline EigenLabResult wishart_eigen_lab(const EigenLabSpec& spec) {
    const Eigen::Index n = spec.n_rows, l = spec.dim, k = spec.k;
    if (n < 1 || l < 1 || k < 1 || l - k + 1 < 1) throw ConfigError("eigen lab: need L >= K - 1 and positive sizes");
    const Mat m = spec.noncentrality.size() ? spec.noncentrality : Mat::Zero(n, l);
    if (m.rows() != n || m.cols() != l) throw ConfigError("eigen lab: noncentrality must be N x L");
    const Eigen::Index nsmall = l - k + 1;
    EigenLabResult out;
    out.small_sum.assign(spec.reps, 0.0);
    out.large.assign(spec.reps * static_cast<std::size_t>(k - 1), 0.0);
    parallel_reps(spec.reps, spec.threads, [&](std::size_t r) {
        Engine eng = make_engine(spec.seed, r, 11);
        const Mat xi = standard_normal(eng, n, l) + m;
        Eigen::SelfAdjointEigenSolver<Mat> es(xi.transpose() * xi, Eigen::EigenvaluesOnly);
        const Vec ev = es.eigenvalues();
        out.small_sum[r] = ev.head(nsmall).sum();
        for (Eigen::Index j = 0; j < k - 1; ++j) out.large[r * static_cast<std::size_t>(k - 1) + static_cast<std::size_t>(j)] = ev(nsmall + j);
    });
    out.central_dof = static_cast<int>(nsmall * (n - k + 1));
    out.small_quantiles = chi2_quantile_checks(out.small_sum, out.central_dof, {0.90, 0.95, 0.99});
    return out;
}

// Eigenvalue sums of central W_p(m, I) draws: trace of Z'Z for m x p Gaussian Z.
inline std::vector<double> central_wishart_eigensum(Eigen::Index m, Eigen::Index p, std::size_t reps, std::uint64_t seed,
                                                    int threads = 1) {
    std::vector<double> out(reps, 0.0);
    parallel_reps(reps, threads, [&](std::size_t r) {
        Engine eng = make_engine(seed, r, 12);
        const Mat z = standard_normal(eng, m, p);
        Eigen::SelfAdjointEigenSolver<Mat> es(z.transpose() * z, Eigen::EigenvaluesOnly);
        out[r] = es.eigenvalues().sum();
    });
    return out;
}

}  // namespace ats
