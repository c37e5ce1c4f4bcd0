#include <gtest/gtest.h>

#include "ats/kron.hpp"
#include "fixtures.hpp"

using namespace ats;

namespace {
Vec singular_values(const Mat& m) { return Eigen::JacobiSVD<Mat>(m).singularValues(); }
}  // namespace

TEST(Rearrange, KroneckerProductIsRankOne) {
    Engine eng = make_engine(1, 0, 0);
    const Vec u = standard_normal(eng, 3, 1).col(0), v = standard_normal(eng, 2, 1).col(0);
    const Mat s = kron(u * u.transpose(), v * v.transpose());
    const Mat r = rearrange(s, 3, 2);
    EXPECT_LT((r - vec(u * u.transpose()) * vec(v * v.transpose()).transpose()).norm(), 1e-14);
    const Vec sv = singular_values(r);
    EXPECT_LT(sv(1), 1e-14 * sv(0));
    // 1 x 1 blocks: R is vec(S) as a column
    const Mat r1 = rearrange(u * u.transpose(), 3, 1);
    EXPECT_LT((r1 - vec(u * u.transpose())).norm(), 1e-15);
}

TEST(Rearrange, IdentityFourByFour) {
    const Mat r = rearrange(Mat::Identity(4, 4), 2, 2);
    Mat expect = Mat::Zero(4, 4);
    expect.row(0) << 1, 0, 0, 1;
    expect.row(3) << 1, 0, 0, 1;
    EXPECT_EQ(r, expect);
    const Vec sv = singular_values(r);
    EXPECT_NEAR(sv(0), 2.0, 1e-14);
    EXPECT_LT(sv.tail(3).norm(), 1e-14);
}

TEST(Rearrange, LinearAndInvertible) {
    Engine eng = make_engine(2, 0, 0);
    const Mat a = standard_normal(eng, 6, 6), b = standard_normal(eng, 6, 6);
    EXPECT_LT((rearrange(2.0 * a - 0.5 * b, 3, 2) - (2.0 * rearrange(a, 3, 2) - 0.5 * rearrange(b, 3, 2))).norm(), 1e-13);
    const Mat m = standard_normal(eng, 9, 4);
    EXPECT_EQ(rearrange(rearrange_inverse(m, 3, 2), 3, 2), m);
    EXPECT_THROW(rearrange(a, 4, 2), ConfigError);
}

TEST(KpsFactorize, ExactRecovery) {
    Engine eng = make_engine(3, 0, 0);
    const Mat om = random_spd(eng, 4), sg = random_spd(eng, 5);
    const Mat s = kron(om, sg);
    const KpsFactorization f = kps_factorize(s, 4, 5);
    EXPECT_LT(f.residual_rel, 1e-12);
    EXPECT_LT(rel_fro(f.product(), s), 1e-10);
    EXPECT_NEAR(f.omega(0, 0), 1.0, 1e-12);
    EXPECT_EQ(f.normalization, "leading");
}

TEST(KpsFactorize, PerturbationScale) {
    Engine eng = make_engine(4, 0, 0);
    const Mat om = random_spd(eng, 2), sg = random_spd(eng, 3);
    const Mat s = kron(om, sg);
    const Mat e = 1e-4 * symmetrize(standard_normal(eng, 6, 6));
    const KpsFactorization f = kps_factorize(s + e, 2, 3);
    EXPECT_LE(f.residual_rel, e.norm() / (s + e).norm() + 1e-15);
    EXPECT_LT(rel_fro(f.product(), s), 10.0 * e.norm() / s.norm());
}

TEST(KpsFactorize, SampleCovarianceResidualDecreases) {
    Engine eng = make_engine(5, 0, 0);
    const Mat a = psd_sqrt(random_spd(eng, 2)), b = psd_sqrt(random_spd(eng, 4));
    const Mat ab = kron(a, b);
    double prev = 1e300;
    for (Eigen::Index t : {500, 5000, 50000}) {
        const Mat m = ab * standard_normal(eng, 8, t);
        const Mat s = m * m.transpose() / static_cast<double>(t);
        const double r = kps_factorize(s, 2, 4).residual_rel;
        EXPECT_LT(r, prev) << "T = " << t;
        prev = r;
    }
}

TEST(KpsFactorize, EckartYoungAndNormalizationInvariance) {
    Engine eng = make_engine(6, 0, 0);
    const Mat w = standard_normal(eng, 6, 20);
    const Mat s = w * w.transpose() / 20.0;
    const KpsFactorization f = kps_factorize(s, 2, 3, KpsNormalization::OmegaFirst, false);
    Eigen::JacobiSVD<Mat> svd(rearrange(s, 2, 3), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Mat rank1 = svd.singularValues()(0) * svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
    EXPECT_NEAR((s - f.product()).norm(), (rearrange(s, 2, 3) - rank1).norm(), 1e-10 * s.norm());
    const KpsFactorization g = kps_factorize(s, 2, 3, KpsNormalization::SigmaFirst, false);
    EXPECT_LT((f.product() - g.product()).norm(), 1e-10 * f.product().norm());
    EXPECT_NEAR(g.sigma(0, 0), 1.0, 1e-12);
}

TEST(KpsFactorize, FallbackNormalizationWhenLeadingEntryVanishes) {
    Mat om(2, 2);
    om << 0.0, 1.0, 1.0, 0.0;
    Engine eng = make_engine(7, 0, 0);
    const Mat sg = random_spd(eng, 3);
    const KpsFactorization f = kps_factorize(kron(om, sg), 2, 3, KpsNormalization::OmegaFirst, false);
    EXPECT_EQ(f.normalization, "max-entry");
    EXPECT_LT(rel_fro(f.product(), kron(om, sg)), 1e-10);
    EXPECT_THROW(kps_factorize(Mat::Zero(4, 4), 2, 2), NumericalError);
}

TEST(KpsReport, Flags) {
    Engine eng = make_engine(8, 0, 0);
    const KpsFactorization exact = kps_factorize(kron(random_spd(eng, 2), random_spd(eng, 4)), 2, 4);
    const KpsReport r = kps_residual_report(exact);
    EXPECT_FALSE(r.warn);
    EXPECT_LT(r.ratio, 1e-12);

    const Mat z = standard_normal(eng, 8, 8);
    const KpsReport w = kps_residual_report(kps_factorize(z * z.transpose(), 2, 4));
    EXPECT_GT(w.ratio, 0.1);

    KpsFactorization fake = exact;
    fake.residual_rel = 0.25;
    EXPECT_TRUE(kps_residual_report(fake, 0.10).warn);
}
