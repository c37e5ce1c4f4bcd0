#include <gtest/gtest.h>

#include "ats/mc.hpp"
#include "fixtures.hpp"

using namespace ats;

TEST(Simulate, DeterministicPerSeedAndRep) {
    const DgpSpec spec = two_factor_design(true, 100);
    const SimPanels a = simulate(spec, 1, 3), b = simulate(spec, 1, 3), c = simulate(spec, 1, 4);
    EXPECT_EQ(a.returns.returns, b.returns.returns);
    EXPECT_EQ(a.factors.factors, b.factors.factors);
    EXPECT_NE(a.factors.factors, c.factors.factors);
    EXPECT_EQ(a.returns.n(), 6);
    EXPECT_EQ(a.returns.t(), 100);
    EXPECT_EQ(a.factors.factors.cols(), 101);
}

TEST(Simulate, ZeroVarianceIsDeterministicPath) {
    DgpSpec spec = single_factor_design(true, 20);
    spec.sigma_v = Mat::Zero(1, 1);
    spec.sigma_e2 = 0.0;
    spec.mu = Vec::Constant(1, 0.5);
    const SimPanels p = simulate(spec, 1);
    // stationary start at the mean 1, constant thereafter
    EXPECT_LT((p.factors.factors.array() - 1.0).abs().maxCoeff(), 1e-14);
    const Vec expect = spec.beta * (spec.lambda1 * Vec::Ones(1));
    for (Eigen::Index t = 0; t < 20; ++t) EXPECT_LT((p.returns.returns.col(t) - expect).norm(), 1e-14);
}

TEST(Simulate, ZeroWeakScaleRemovesColumn) {
    DgpSpec spec = two_factor_design(true, 50);
    spec.sigma_e2 = 0.0;
    spec.weak_scale << 1.0, 0.0;
    spec.lambda1.setZero();
    const SimPanels p = simulate(spec, 2);
    const VarEstimate v = fit_var1(p.factors);
    // returns load on the fitted innovations of the first factor only
    const Mat expect = spec.beta.col(0) * v.residuals.row(0);
    EXPECT_LT((p.returns.returns - expect).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_THROW(weaken(spec, 5, 1.0), ConfigError);
}

TEST(Simulate, LargeSampleMoments) {
    DgpSpec spec = two_factor_design(true, 100000);
    spec.innovations = Innovations::Generated;
    const SimPanels p = simulate(spec, 3);
    const VarEstimate v = fit_var1(p.factors);
    const double se = 1.0 / std::sqrt(1e5);
    EXPECT_LT((v.phi1 - spec.phi1).cwiseAbs().maxCoeff(), 5.0 * se);
    EXPECT_LT((v.sigma_v - spec.sigma_v).cwiseAbs().maxCoeff(), 5.0 * std::sqrt(2.0) * se);
    const Mat pst = stationary_covariance(spec.phi1, spec.sigma_v);
    EXPECT_LT(rel_fro(v.lags_demeaned * v.lags_demeaned.transpose() / 1e5, pst), 0.05);
    const Mat e = p.returns.returns - spec.beta * (spec.lambda1 * p.factors.factors.leftCols(100000) + v.residuals);
    EXPECT_NEAR((e * e.transpose() / 1e5).diagonal().mean(), spec.sigma_e2, 0.05 * spec.sigma_e2);
}

TEST(Simulate, RejectsNonStationaryStart) {
    DgpSpec spec = single_factor_design(true);
    spec.phi1 = Mat::Constant(1, 1, 1.0);
    EXPECT_THROW(simulate(spec, 1), ConfigError);
    spec.init = InitMode::BurnIn;
    spec.burn_in = 10;
    EXPECT_NO_THROW(simulate(spec, 1));
    DgpSpec bad = single_factor_design(true);
    bad.c = Vec::Zero(3);
    EXPECT_THROW(simulate(bad, 1), ConfigError);
}

TEST(Calibrate, RoundTripAtLargeSample) {
    DgpSpec spec = two_factor_design(true, 50000);
    spec.innovations = Innovations::Generated;
    const SimPanels p = simulate(spec, 4);
    const DgpSpec back = calibrate(three_step(p.returns, p.factors));
    EXPECT_LT((back.phi1 - spec.phi1).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_LT((back.beta - spec.beta).cwiseAbs().maxCoeff(), 0.02 * spec.beta.cwiseAbs().maxCoeff());
    EXPECT_LT((back.lambda1 - spec.lambda1).cwiseAbs().maxCoeff(), 0.02);
    EXPECT_NEAR(back.sigma_e2, spec.sigma_e2, 0.05 * spec.sigma_e2);
    EXPECT_EQ(back.T, 50000);
}

TEST(PowerCurve, SizeNearNominalInStrongDesign) {
    const DgpSpec spec = single_factor_design(true);
    McOptions o;
    o.seed = 77;
    const auto cells = power_curve({TestName::FAR, TestName::KLM}, {spec.lambda1}, spec, 400, 0.95, o);
    ASSERT_EQ(cells.size(), 2u);
    for (const auto& c : cells) {
        EXPECT_EQ(c.valid, 400u);
        EXPECT_LT(std::abs(c.frequency() - 0.05), 3.0 * binomial_se(0.05, 400)) << c.test;
    }
}

TEST(DensityExperiment, EmptyRunIsWellFormed) {
    const DensityExperiment d = sfar_density_experiment(two_factor_design(true), 0);
    EXPECT_TRUE(d.stats.empty());
    EXPECT_EQ(d.dof, 10);
    EXPECT_EQ(d.quantiles.size(), 3u);
    EXPECT_TRUE(std::isnan(d.quantiles[0].empirical));
    EXPECT_TRUE(d.counts.empty());
}

TEST(DensityExperiment, StrongDesignMatchesReference) {
    McOptions o;
    o.seed = 9;
    const DensityExperiment d = sfar_density_experiment(two_factor_design(true), 1000, 0, o, 20);
    EXPECT_EQ(d.stats.size() + d.failures, 1000u);
    EXPECT_GT(d.ks.pvalue, 0.01);
    std::size_t total = 0;
    for (auto c : d.counts) total += c;
    EXPECT_EQ(total, d.stats.size());
}

TEST(PowerSurface, ExtremeLevels) {
    const DgpSpec spec = two_factor_design(true, 150);
    GridSpec g;
    g.axes = {Axis{-1.0, 1.0, 3}, Axis{-1.0, 1.0, 4}};
    McOptions o;
    o.threads = 2;
    // alpha = 1 rejects every point with p < 1, alpha = 0 rejects none
    const PowerSurface all = power_surface(spec, g, 5, 0.0, o);
    const PowerSurface none = power_surface(spec, g, 5, 1.0, o);
    ASSERT_EQ(all.frequency.size(), 12u);
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(all.frequency[i], 1.0);
        EXPECT_EQ(none.frequency[i], 0.0);
        EXPECT_EQ(all.valid[i], 5u);
    }
    GridSpec bad = g;
    bad.axes.pop_back();
    EXPECT_THROW(power_surface(spec, bad, 1, 0.95), ConfigError);
}

TEST(EigenLab, CentralWishartTraceIsChiSquared) {
    const auto xs = central_wishart_eigensum(6, 3, 20000, 5, 2);
    const KsResult k = ks_test(xs, [](double x) { return chi2_cdf(x, 18); });
    EXPECT_GT(k.pvalue, 0.01);
    EigenLabSpec spec;
    spec.reps = 5000;
    const EigenLabResult r = wishart_eigen_lab(spec);
    EXPECT_EQ(r.central_dof, 10);
    for (const auto& q : r.small_quantiles) EXPECT_TRUE(q.within_bound());
    EXPECT_EQ(r.large.size(), 5000u);
}

TEST(ParallelReps, ThreadCountInvariant) {
    std::vector<double> a(37), b(37);
    const auto draw = [](std::size_t r) {
        Engine eng = make_engine(1, r, 0);
        return standard_normal(eng, 1, 1)(0, 0);
    };
    parallel_reps(37, 1, [&](std::size_t r) { a[r] = draw(r); });
    parallel_reps(37, 4, [&](std::size_t r) { b[r] = draw(r); });
    EXPECT_EQ(a, b);
}
