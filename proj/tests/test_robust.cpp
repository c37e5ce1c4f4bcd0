#include <gtest/gtest.h>

#include "ats/subset.hpp"
#include "fixtures.hpp"

using namespace ats;

namespace {

RobustOptions hc0_direct() {
    RobustOptions o;
    o.resid = ResidualCov::Outer;
    o.mode = VffMode::Direct;
    o.small_sample = false;
    o.generated_regressor = false;
    return o;
}

RobustOptions kps_mode() {
    RobustOptions o;
    o.mode = VffMode::Kps;
    return o;
}

}  // namespace

TEST(MomentVector, ZeroAtTruthOnExactData) {
    const auto d = fx::exact_stacked_dataset(6, 2, 150, 1);
    const RobustContext c = make_context(d.returns, d.factors, kps_mode());
    EXPECT_LT((c.beta() - d.truth.beta).norm(), 1e-10);
    const Vec f = moment_vector(c, d.truth.lambda1);
    EXPECT_LT(f.norm(), 1e-12);
    const RobustTriple t = robust_tests(c, d.truth.lambda1);
    EXPECT_LT(t.far.statistic, 1e-16);
    EXPECT_GT(t.far.pvalue, 1.0 - 1e-12);
}

TEST(MomentVector, MatchesPerObservationSum) {
    const auto d = fx::random_dataset(5, 2, 60, 2);
    const RobustContext c = make_context(d.returns, d.factors);
    const Mat h0 = d.truth.lambda1;
    Vec oracle = Vec::Zero(c.N * c.K);
    const Mat b = c.beta();
    for (Eigen::Index t = 0; t < c.T; ++t) {
        const Vec y = c.rbar.col(t) - b * c.vhat.col(t);
        oracle += kron(c.xbar.col(t), y) / static_cast<double>(c.T);
    }
    oracle -= kron(c.q, b) * vec(h0);
    EXPECT_LT((moment_vector(c, h0) - oracle).norm(), 1e-12 * (1.0 + oracle.norm()));
    // with the OLS fit the error term drops out: f = vec((c - beta h0) Q)
    EXPECT_LT((moment_vector(c, h0) - vec((c.c_hat() - b * h0) * c.q)).norm(), 1e-10 * (1.0 + oracle.norm()));
    EXPECT_THROW(moment_vector(c, Mat::Zero(3, 3)), ConfigError);
}

TEST(Vff, KroneckerIdentityCase) {
    Engine eng = make_engine(3, 0, 0);
    const Eigen::Index k = 2, n = 4;
    const Mat q = random_spd(eng, k), sigma = random_spd(eng, n), h0 = standard_normal(eng, k, k);
    const Mat v = vff_from(kron(Mat::Identity(2 * k, 2 * k), sigma), q, h0, n);
    const Mat bq = b_matrix(h0) * q;
    EXPECT_LT((v - kron(bq.transpose() * bq, sigma)).norm(), 1e-12 * v.norm());
}

TEST(Vff, Hc0MatchesPerObservationOracle) {
    const auto d = fx::random_dataset(4, 2, 80, 4);
    const RobustContext c = make_context(d.returns, d.factors, hc0_direct());
    EXPECT_EQ(c.mode_used, VffMode::Direct);
    const Mat h0 = d.truth.lambda1;
    const Mat a = c.q * b_matrix(h0).transpose() * c.w_inv;
    Mat oracle = Mat::Zero(c.N * c.K, c.N * c.K);
    for (Eigen::Index t = 0; t < c.T; ++t) {
        const Vec m = kron(a * c.z.col(t), c.resid.col(t));
        oracle += m * m.transpose() / static_cast<double>(c.T);
    }
    EXPECT_LT(rel_fro(vff_estimator(c, h0), oracle), 1e-10);
}

TEST(Vff, KroneckerAgreesWithHc0InLargeHomoskedasticSample) {
    DgpSpec spec = two_factor_design(true, 10000);
    const SimPanels p = simulate(spec, 5);
    RobustOptions kp = robust_options_for(spec, kps_mode());
    kp.small_sample = false;
    RobustOptions hc = robust_options_for(spec, hc0_direct());
    const RobustContext a = make_context(p.returns, p.factors, kp);
    const RobustContext b = make_context(p.returns, p.factors, hc);
    EXPECT_LT(rel_fro(vff_estimator(a, spec.lambda1), vff_estimator(b, spec.lambda1)), 0.10);
    EXPECT_LT(a.kps.residual_rel, 0.10);
}

TEST(Vqf, OuterReferenceCheck) {
    const auto d = fx::random_dataset(4, 2, 80, 6);
    RobustOptions o = hc0_direct();
    o.vqf_check = true;
    const RobustContext c = make_context(d.returns, d.factors, o);
    const MomentSystem s = moment_system(c, d.truth.lambda1);
    EXPECT_LT(s.vqf_discrepancy, 1e-12);
    EXPECT_FALSE(s.vqf_flag);
    EXPECT_EQ(s.vqf.rows(), c.N * c.K * c.K * c.K);
    EXPECT_EQ(s.vqf.cols(), c.N * c.K);
}

TEST(OrthogonalizedJacobian, DegenerateCasesReturnQ) {
    Engine eng = make_engine(7, 0, 0);
    const Mat q = standard_normal(eng, 6, 4), vff = random_spd(eng, 6);
    const Mat vqf = standard_normal(eng, 24, 6);
    const Vec f = standard_normal(eng, 6, 1).col(0);
    EXPECT_LT((orthogonalize_jacobian(q, Mat::Zero(24, 6), vff, f) - q).norm(), 1e-15);
    EXPECT_LT((orthogonalize_jacobian(q, vqf, vff, Vec::Zero(6)) - q).norm(), 1e-15);
    const Vec dense = vec(q) - vqf * vff.inverse() * f;
    EXPECT_LT((vec(orthogonalize_jacobian(q, vqf, vff, f)) - dense).norm(), 1e-10 * dense.norm());
}

TEST(OrthogonalizedJacobian, KroneckerClosedForm) {
    const auto d = fx::random_dataset(5, 2, 120, 8);
    const RobustContext c = make_context(d.returns, d.factors, kps_mode());
    Mat h0 = d.truth.lambda1;
    h0(0, 1) += 0.4;
    const MomentSystem s = moment_system(c, h0);
    const Mat b = b_matrix(h0);
    const Mat g = c.q * b.transpose() * c.psi * b * c.q;
    Mat ev = Mat::Zero(2 * c.K, c.K);
    ev.bottomRows(c.K) = Mat::Identity(c.K, c.K);
    const Mat fm = vecinv(s.f, c.N, c.K);
    const Mat beta_tilde = c.beta() - fm * g.inverse() * c.q * b.transpose() * c.psi * ev;
    const Mat expect = -kron(c.q, beta_tilde);
    EXPECT_LT((s.d_ortho - expect).norm(), 1e-9 * expect.norm());
}

TEST(RobustTests, FarSplitsIntoKlmAndJklm) {
    for (int i = 0; i < 50; ++i) {
        const Eigen::Index k = 1 + i % 3, n = k + 1 + i % 5;
        const auto d = fx::random_dataset(n, k, 100, 100 + static_cast<std::uint64_t>(i));
        const RobustContext c = make_context(d.returns, d.factors, i % 2 ? hc0_direct() : RobustOptions{});
        const RobustTriple t = robust_tests(c, d.truth.lambda1);
        EXPECT_LT(std::abs(t.far.statistic - t.klm.statistic - t.jklm.statistic), 1e-8 * std::max(1.0, t.far.statistic));
        EXPECT_EQ(t.far.dof, t.klm.dof + t.jklm.dof);
        EXPECT_EQ(t.klm.dof, k * k);
    }
}

TEST(RobustTests, InvariantToInvertibleReturnTransforms) {
    const auto d = fx::random_dataset(5, 2, 120, 9);
    RobustOptions o;
    o.mode = VffMode::Direct;
    const RobustContext c = make_context(d.returns, d.factors, o);
    Engine eng = make_engine(9, 0, 1);
    Mat a = standard_normal(eng, 5, 5);
    a.diagonal().array() += 3.0;
    ReturnPanel r2 = d.returns;
    r2.returns = a * d.returns.returns;
    r2.returns.colwise() += standard_normal(eng, 5, 1).col(0);
    const RobustContext c2 = make_context(r2, d.factors, o);
    const Mat h0 = d.truth.lambda1;
    const RobustTriple t1 = robust_tests(c, h0), t2 = robust_tests(c2, h0);
    EXPECT_LT(fx::rel(t1.far.statistic, t2.far.statistic), 1e-8);
    EXPECT_LT(fx::rel(t1.klm.statistic, t2.klm.statistic), 1e-8);
    EXPECT_LT(fx::rel(t1.jklm.statistic, t2.jklm.statistic), 1e-8);
}

TEST(RobustTests, SquareSystemHasNoJklmPart) {
    const auto d = fx::random_dataset(2, 2, 120, 10);
    const RobustContext c = make_context(d.returns, d.factors);
    const RobustTriple t = robust_tests(c, d.truth.lambda1);
    EXPECT_EQ(t.jklm.dof, 0);
    EXPECT_NEAR(t.klm.statistic, t.far.statistic, 1e-8 * std::max(1.0, t.far.statistic));
    EXPECT_LT(t.jklm.statistic, 1e-8 * std::max(1.0, t.far.statistic));
    EXPECT_DOUBLE_EQ(t.jklm.pvalue, 1.0);
}

TEST(RobustTests, KroneckerFarMatchesTraceForm) {
    const auto d = fx::random_dataset(6, 2, 150, 11);
    const RobustContext c = make_context(d.returns, d.factors, kps_mode());
    const StackedSystem s = build_stacked(c);
    for (double shift : {0.0, 0.3, -1.2}) {
        Mat h0 = d.truth.lambda1;
        h0(1, 0) += shift;
        EXPECT_LT(fx::rel(far(c, h0).statistic, far_kps(s, h0)), 1e-8);
    }
}

TEST(RobustTests, FarKpsGradientMatchesFiniteDifferences) {
    const auto s = fx::random_stacked(5, 2, 100, 12);
    Engine eng = make_engine(12, 0, 1);
    const Mat l = standard_normal(eng, 2, 2);
    Mat g;
    far_kps(s, l, &g);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j) {
            Mat lp = l, lm = l;
            lp(i, j) += h;
            lm(i, j) -= h;
            const double fd = (far_kps(s, lp) - far_kps(s, lm)) / (2 * h);
            EXPECT_NEAR(g(i, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
        }
}

TEST(RobustTests, FarNullDistributionIsChiSquared) {
    const DgpSpec spec = single_factor_design(true);
    const RobustOptions ro = robust_options_for(spec);
    std::vector<double> fars, klms;
    for (std::size_t r = 0; r < 2000; ++r) {
        const SimPanels p = simulate(spec, 2024, r);
        const RobustTriple t = robust_tests(make_context(p.returns, p.factors, ro), spec.lambda1);
        fars.push_back(t.far.statistic);
        klms.push_back(t.klm.statistic);
    }
    const KsResult kf = ks_test(fars, [](double x) { return chi2_cdf(x, 11); });
    const KsResult kk = ks_test(klms, [](double x) { return chi2_cdf(x, 1); });
    EXPECT_GT(kf.pvalue, 0.01) << kf.statistic;
    EXPECT_GT(kk.pvalue, 0.01) << kk.statistic;
}
