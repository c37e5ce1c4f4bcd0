#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ats/datamodel.hpp"
#include "ats/format.hpp"
#include "ats/stats.hpp"

namespace fs = std::filesystem;
using namespace ats;

namespace {

struct RunResult {
    int code = -1;
    std::string err;
};

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("atsm_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

RunResult atsm(const std::string& args) {
    const fs::path err = scratch("stderr.txt");
    const std::string cmd = std::string("\"") + ATSM_BINARY + "\" " + args + " 2> \"" + err.string() + "\" > /dev/null";
    const int st = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Smooth synthetic yield curves driven by three AR(1) level/slope/curvature states.
fs::path write_yields(const std::string& name) {
    YieldPanel p;
    p.maturities = {1, 2, 3, 6, 12, 24, 36, 60, 120};
    const Eigen::Index t = 240;
    p.yields.resize(t, static_cast<Eigen::Index>(p.maturities.size()));
    Engine eng = make_engine(31, 0, 0);
    Vec x = Vec::Zero(3);
    for (Eigen::Index i = 0; i < t; ++i) {
        x = 0.95 * x + 0.0005 * standard_normal(eng, 3, 1).col(0);
        p.dates.push_back(std::to_string(2000 + i / 12) + "-" + (i % 12 < 9 ? "0" : "") + std::to_string(i % 12 + 1));
        for (std::size_t j = 0; j < p.maturities.size(); ++j) {
            const double m = p.maturities[j], u = std::exp(-m / 24.0);
            const Vec noise = 1e-5 * standard_normal(eng, 1, 1).col(0);
            p.yields(i, static_cast<Eigen::Index>(j)) = 0.004 + x(0) + x(1) * u + x(2) * (m / 24.0) * u + noise(0);
        }
    }
    const fs::path out = scratch(name);
    std::ofstream os(out);
    write_yield_csv(os, p);
    return out;
}

}  // namespace

TEST(Cli, MissingInputFileIsConfigError) {
    const fs::path out = scratch("missing_out");
    const RunResult r = atsm("estimate --input /nonexistent/yields.csv --maturities 12,24 --out " + out.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/nonexistent/yields.csv"), std::string::npos) << r.err;
}

TEST(Cli, BadFlagsAndConfigKeys) {
    EXPECT_EQ(atsm("test --no-such-flag 1").code, 2);
    EXPECT_EQ(atsm("").code, 2);
    const fs::path cfg = scratch("bad.cfg");
    std::ofstream(cfg) << "seed = 3\nbogus = 1\n";
    const RunResult r = atsm("test --config " + cfg.string() + " --input synthetic:two-strong");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bogus"), std::string::npos) << r.err;
    EXPECT_EQ(atsm("test --input synthetic:three-strong --out " + scratch("o3").string()).code, 2);
    EXPECT_EQ(atsm("cs --input synthetic:two-strong --level 1.5 --out " + scratch("o4").string()).code, 2);
}

TEST(Cli, FarAtZerosReportsKnDegreesOfFreedom) {
    const fs::path out = scratch("far_out");
    const RunResult r = atsm("test --input synthetic:two-strong --stat far --h0 zeros --seed 5 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = read_json(out / "tests.json");
    const int n = j["N"].get<int>(), k = j["K"].get<int>();
    ASSERT_EQ(j["results"].size(), 1u);
    EXPECT_EQ(j["results"][0]["test"], "FAR");
    EXPECT_EQ(j["results"][0]["dof"].get<int>(), k * n);
    EXPECT_EQ(n, 6);
    EXPECT_EQ(k, 2);
    const double p = j["results"][0]["pvalue"].get<double>();
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    // strong loadings and Lambda1 far from zero
    EXPECT_LT(p, 1e-3);
    const json m = read_json(out / "manifest.json");
    EXPECT_EQ(m["command"], "test");
    EXPECT_EQ(m["config"]["h0"], "zeros");
    EXPECT_EQ(m["seed"], "5");
}

TEST(Cli, SameSeedGivesIdenticalBytes) {
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    const std::string args = "test --input synthetic:two-weak --stat all --h0 truth --seed 11 --out ";
    ASSERT_EQ(atsm(args + a.string()).code, 0);
    ASSERT_EQ(atsm(args + b.string()).code, 0);
    EXPECT_EQ(slurp(a / "tests.json"), slurp(b / "tests.json"));
    const fs::path c = scratch("det_c");
    ASSERT_EQ(atsm("test --input synthetic:two-weak --stat all --h0 truth --seed 12 --out " + c.string()).code, 0);
    EXPECT_NE(slurp(a / "tests.json"), slurp(c / "tests.json"));

    const fs::path m1 = scratch("mc_a"), m2 = scratch("mc_b");
    const std::string mc = "mc --design single --strength weak --stat far,klm --reps 20 --T 120 --grid -1:0.4:3 --seed 4 --out ";
    ASSERT_EQ(atsm(mc + m1.string() + " --threads 1").code, 0);
    ASSERT_EQ(atsm(mc + m2.string() + " --threads 3").code, 0);
    EXPECT_EQ(slurp(m1 / "frequencies.csv"), slurp(m2 / "frequencies.csv"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
    const fs::path cfg = scratch("ok.cfg"), out = scratch("cfg_out");
    std::ofstream(cfg) << "# test config\ninput = synthetic:single-strong\nstat = klm\nseed = 8\nh0 = zeros\n";
    ASSERT_EQ(atsm("test --config " + cfg.string() + " --h0 truth --out " + out.string()).code, 0);
    const json m = read_json(out / "manifest.json");
    EXPECT_EQ(m["config"]["h0"], "truth");
    EXPECT_EQ(m["config"]["stat"], "klm");
    EXPECT_EQ(read_json(out / "tests.json")["results"][0]["test"], "KLM");
}

TEST(Cli, IngestRoundTrip) {
    const fs::path y = write_yields("yields.csv"), dir = scratch("ingest_out");
    const std::string common = " --maturities 12,24,36,60,119 --interpolate true --factors pca:3 --seed 1";
    ASSERT_EQ(atsm("ingest --input " + y.string() + common + " --out " + dir.string()).code, 0);
    const Table r = load_table_csv((dir / "returns.csv").string());
    const Table f = load_table_csv((dir / "factors.csv").string());
    EXPECT_EQ(r.values.rows() + 1, f.values.rows());
    EXPECT_EQ(r.values.cols(), 5);
    EXPECT_EQ(f.values.cols(), 3);

    const fs::path t1 = scratch("rt_a"), t2 = scratch("rt_b");
    ASSERT_EQ(atsm("test --stat far,wald --h0 zeros --input " + y.string() + common + " --out " + t1.string()).code, 0);
    ASSERT_EQ(atsm("test --stat far,wald --h0 zeros --input " + dir.string() + " --out " + t2.string()).code, 0);
    EXPECT_EQ(read_json(t1 / "tests.json")["results"], read_json(t2 / "tests.json")["results"]);
}

TEST(Cli, VariantsAgree) {
    const fs::path a = scratch("var_i"), b = scratch("var_ii");
    const std::string args = "estimate --input synthetic:two-strong --seed 3 --out ";
    ASSERT_EQ(atsm(args + a.string() + " --variant I").code, 0);
    ASSERT_EQ(atsm(args + b.string() + " --variant II").code, 0);
    const Mat la = mat_from_json(read_json(a / "estimates.json")["lambda1"]);
    const Mat lb = mat_from_json(read_json(b / "estimates.json")["lambda1"]);
    EXPECT_LT((la - lb).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + lb.cwiseAbs().maxCoeff()));
    const Mat ba = mat_from_json(read_json(a / "estimates.json")["beta"]);
    const Mat bb = mat_from_json(read_json(b / "estimates.json")["beta"]);
    EXPECT_LT((ba - bb).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + bb.cwiseAbs().maxCoeff()));
}

TEST(Cli, ConfidenceSetOutputs) {
    const fs::path out = scratch("cs_out");
    const RunResult r = atsm("cs --input synthetic:two-strong --stat sfar --kind row --index 0 --grid -0.8:0.2:11,-0.4:0.6:11 --seed 2 --out " +
                       out.string());
    ASSERT_EQ(r.code, 0) << r.err;
    const json j = read_json(out / "cs.json");
    EXPECT_EQ(j["points"].get<int>(), 121);
    EXPECT_EQ(j["test"], "sFAR");
    std::ifstream in(out / "surface.csv");
    std::string line;
    int rows = -1;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 121);
}

TEST(Cli, EigenlabAndPresetErrors) {
    const fs::path out = scratch("eig_out");
    ASSERT_EQ(atsm("eigenlab --draws 500 --kappa 100 --seed 1 --out " + out.string()).code, 0);
    EXPECT_TRUE(fs::exists(out / "eigenlab.csv"));
    EXPECT_EQ(atsm("mc --figure 9 --out " + scratch("fig9").string()).code, 2);
    EXPECT_EQ(atsm("estimate --table 2 --input x --out " + scratch("tab2").string()).code, 2);
}
