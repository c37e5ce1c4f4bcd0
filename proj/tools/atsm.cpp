// atsm: ingestion, estimation, robust tests, confidence sets and Monte Carlo
// experiments for affine term structure price-of-risk inference.

#include <boost/version.hpp>
#include <gsl/gsl_version.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "ats/mc.hpp"

namespace fs = std::filesystem;
using namespace ats;

namespace {

constexpr const char* kVersion = "1.0.0";

// Every recognised configuration key with its default. The manifest stores the
// resolved map verbatim.
const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"input", ""},           {"macro-input", ""},   {"factors", "pca:3"},  {"maturities", ""},
        {"period", "1"},         {"percent", "false"},  {"interpolate", "false"}, {"stat", "far"},
        {"h0", "hat"},           {"grid", ""},          {"entries", ""},       {"kind", "row"},
        {"index", "0"},          {"level", "0.95"},     {"seed", "20240101"},  {"threads", "1"},
        {"cov", "auto"},         {"resid", "homoskedastic"}, {"variant", "II"}, {"out", "atsm_out"},
        {"figure", ""},          {"table", ""},         {"reps", "2000"},      {"T", "300"},
        {"design", "two"},       {"strength", "strong"}, {"kappa", "100,1000,10000"}, {"draws", "100000"},
        {"directions", "64"},
    };
    return d;
}

using Settings = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

void read_config_file(const std::string& path, Settings& s) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(path + ": line " + std::to_string(no) + " is not key=value");
        const std::string key = trim(line.substr(0, eq));
        if (!defaults().count(key)) throw ConfigError(path + ": line " + std::to_string(no) + ": unknown key '" + key + "'");
        s[key] = trim(line.substr(eq + 1));
    }
}

double to_double(const Settings& s, const std::string& key) {
    double v = 0;
    const std::string& t = s.at(key);
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) throw ConfigError("--" + key + ": not a number: '" + t + "'");
    return v;
}

long long to_int(const Settings& s, const std::string& key, long long lo) {
    long long v = 0;
    const std::string& t = s.at(key);
    auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size()) throw ConfigError("--" + key + ": not an integer: '" + t + "'");
    if (v < lo) throw ConfigError("--" + key + " must be >= " + std::to_string(lo));
    return v;
}

bool to_bool(const Settings& s, const std::string& key) {
    const std::string& t = s.at(key);
    if (t == "true" || t == "1" || t == "yes") return true;
    if (t == "false" || t == "0" || t == "no") return false;
    throw ConfigError("--" + key + ": expected true or false");
}

std::vector<double> parse_list(const std::string& t, const std::string& what) {
    std::vector<double> out;
    for (const auto& p : split(t, ',')) {
        double v = 0;
        auto res = std::from_chars(p.data(), p.data() + p.size(), v);
        if (p.empty() || res.ec != std::errc() || res.ptr != p.data() + p.size())
            throw ConfigError(what + ": not a number: '" + p + "'");
        out.push_back(v);
    }
    return out;
}

// "a,b;c,d" row-major.
Mat parse_matrix(const std::string& t, const std::string& what) {
    const auto rows = split(t, ';');
    std::vector<std::vector<double>> vals;
    for (const auto& r : rows) vals.push_back(parse_list(r, what));
    Mat m(static_cast<Eigen::Index>(vals.size()), static_cast<Eigen::Index>(vals[0].size()));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        if (vals[i].size() != vals[0].size()) throw ConfigError(what + ": ragged matrix");
        for (std::size_t j = 0; j < vals[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vals[i][j];
    }
    return m;
}

struct Paths {
    fs::path dir;
    explicit Paths(const std::string& out) : dir(out) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw ConfigError("cannot create output directory " + out + ": " + ec.message());
    }
    std::ofstream open(const std::string& name) const {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw ConfigError("cannot write " + (dir / name).string());
        return os;
    }
};

void write_manifest(const Paths& p, const std::string& command, const Settings& s) {
    json m;
    m["command"] = command;
    json cfg = json::object();
    for (const auto& [k, v] : s) cfg[k] = v;
    m["config"] = cfg;
    m["versions"] = {{"atsm", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", BOOST_LIB_VERSION},
                     {"gsl", GSL_VERSION}};
    m["seed"] = s.at("seed");
    p.open("manifest.json") << dump_json(m) << '\n';
}

// ---------------------------------------------------------------- inputs

struct Inputs {
    ReturnPanel returns;
    FactorPanel factors;
    std::string source;
    bool has_truth = false;
    Mat truth;
    PcaResult pca;
    bool has_pca = false;
};

DgpSpec synthetic_spec(const std::string& name, Eigen::Index t) {
    if (name == "single-strong") return single_factor_design(true, t);
    if (name == "single-weak") return single_factor_design(false, t);
    if (name == "two-strong") return two_factor_design(true, t);
    if (name == "two-weak") return two_factor_design(false, t);
    throw ConfigError("unknown synthetic design '" + name + "' (single-strong, single-weak, two-strong, two-weak)");
}

struct YieldInputs {
    YieldPanel panel;
    std::vector<double> maturities;
};

YieldInputs load_yields(const Settings& s) {
    CsvOptions co;
    co.annualized_percent = to_bool(s, "percent");
    YieldInputs y;
    y.panel = load_yield_csv(s.at("input"), co);
    if (s.at("maturities").empty()) throw ConfigError("--maturities is required with a yield CSV input");
    y.maturities = parse_list(s.at("maturities"), "--maturities");
    return y;
}

// pca:K[,macro:col...]
void parse_factor_spec(const std::string& spec, Eigen::Index& k, std::vector<std::string>& macros) {
    k = 0;
    for (const auto& part : split(spec, ',')) {
        if (part.rfind("pca:", 0) == 0) {
            const std::string n = part.substr(4);
            long long v = 0;
            auto res = std::from_chars(n.data(), n.data() + n.size(), v);
            if (res.ec != std::errc() || res.ptr != n.data() + n.size() || v < 1) throw ConfigError("--factors: bad PCA count '" + n + "'");
            k = v;
        } else if (part.rfind("macro:", 0) == 0) {
            macros.push_back(part.substr(6));
        } else {
            throw ConfigError("--factors: expected pca:K or macro:col, got '" + part + "'");
        }
    }
    if (k == 0 && macros.empty()) throw ConfigError("--factors selects no factors");
}

Inputs panels_from_yields(const Settings& s, const YieldPanel& panel, const std::vector<double>& maturities) {
    Inputs in;
    ReturnOptions ro;
    ro.period = to_double(s, "period");
    ro.interpolate = to_bool(s, "interpolate");
    in.returns = excess_returns(panel, maturities, ro);
    Eigen::Index k = 0;
    std::vector<std::string> macros;
    parse_factor_spec(s.at("factors"), k, macros);
    FactorPanel f;
    f.dates = panel.dates;
    if (k > 0) {
        in.pca = pca_factors(panel, k);
        in.has_pca = true;
        f = in.pca.factors;
    } else {
        f.factors.resize(0, panel.t_raw());
    }
    if (!macros.empty()) {
        if (s.at("macro-input").empty()) throw ConfigError("--factors names macro columns but --macro-input is empty");
        f = append_series(f, load_table_csv(s.at("macro-input")), macros);
    }
    // X_0..X_T for returns realised at dates 1..T
    const Eigen::Index t = in.returns.t();
    f.factors = f.factors.leftCols(t + 1).eval();
    f.dates.resize(static_cast<std::size_t>(t + 1));
    in.factors = f;
    in.source = s.at("input");
    return in;
}

Inputs load_inputs(const Settings& s) {
    const std::string& input = s.at("input");
    if (input.empty()) throw ConfigError("--input is required");
    if (input.rfind("synthetic:", 0) == 0) {
        const DgpSpec spec = synthetic_spec(input.substr(10), to_int(s, "T", 4));
        const SimPanels p = simulate(spec, static_cast<std::uint64_t>(to_int(s, "seed", 0)));
        Inputs in;
        in.returns = p.returns;
        in.factors = p.factors;
        in.source = input;
        in.has_truth = true;
        in.truth = spec.lambda1;
        return in;
    }
    if (fs::is_directory(input)) {
        const Table r = load_table_csv((fs::path(input) / "returns.csv").string());
        const Table f = load_table_csv((fs::path(input) / "factors.csv").string());
        Inputs in;
        in.returns.returns = r.values.transpose();
        in.returns.dates = r.dates;
        for (const auto& c : r.columns) in.returns.maturities_held.push_back(std::atof(c.c_str()));
        in.factors.factors = f.values.transpose();
        in.factors.dates = f.dates;
        in.factors.labels = f.columns;
        in.source = input;
        return in;
    }
    if (!fs::exists(input)) throw ConfigError("input not found: " + input);
    const YieldInputs y = load_yields(s);
    return panels_from_yields(s, y.panel, y.maturities);
}

// ---------------------------------------------------------------- options

RobustOptions robust_from(const Settings& s) {
    RobustOptions o;
    const std::string& cov = s.at("cov");
    if (cov == "auto") o.mode = VffMode::Auto;
    else if (cov == "kps") o.mode = VffMode::Kps;
    else if (cov == "direct") o.mode = VffMode::Direct;
    else if (cov == "hc0") {
        o.mode = VffMode::Direct;
        o.resid = ResidualCov::Outer;
        o.small_sample = false;
    } else throw ConfigError("--cov must be auto, kps, hc0 or direct");
    const std::string& r = s.at("resid");
    if (r == "outer") o.resid = ResidualCov::Outer;
    else if (r != "homoskedastic") throw ConfigError("--resid must be homoskedastic or outer");
    if (s.at("input").rfind("synthetic:two", 0) == 0) o.generated_regressor = false;
    return o;
}

StageOptions stage_from(const Settings& s) {
    StageOptions o;
    const std::string& v = s.at("variant");
    if (v == "I") o.variant = Variant::I;
    else if (v == "II") o.variant = Variant::II;
    else throw ConfigError("--variant must be I or II");
    return o;
}

double level_from(const Settings& s) {
    const double l = to_double(s, "level");
    if (!(l > 0 && l < 1)) throw ConfigError("--level must be in (0, 1)");
    return l;
}

int threads_from(const Settings& s) { return static_cast<int>(to_int(s, "threads", 1)); }

// zeros | hat | truth | "a,b;c,d"
Mat h0_matrix(const Settings& s, const InferenceContext& c, const Inputs& in) {
    const std::string& h = s.at("h0");
    const Eigen::Index k = c.fit.K;
    Mat m;
    if (h == "zeros") m = Mat::Zero(k, k);
    else if (h == "hat") m = c.fit.por.lambda1;
    else if (h == "truth") {
        if (!in.has_truth) throw ConfigError("--h0 truth needs a synthetic input");
        m = in.truth;
    } else m = parse_matrix(h, "--h0");
    if (m.rows() != k || m.cols() != k) throw ConfigError("--h0 must be K x K with K = " + std::to_string(k));
    return m;
}

// Row or column hypothesis vector for sFAR: zeros | hat | truth | "a,b".
Vec h0_subset(const Settings& s, const InferenceContext& c, const Inputs& in, SubsetKind kind, Eigen::Index index) {
    const std::string& h = s.at("h0");
    const Eigen::Index k = c.fit.K;
    auto pick = [&](const Mat& m) -> Vec { return kind == SubsetKind::Row ? Vec(m.row(index).transpose()) : Vec(m.col(index)); };
    if (h == "zeros") return Vec::Zero(k);
    if (h == "hat") return pick(c.fit.por.lambda1);
    if (h == "truth") {
        if (!in.has_truth) throw ConfigError("--h0 truth needs a synthetic input");
        return pick(in.truth);
    }
    const auto v = parse_list(h, "--h0");
    if (static_cast<Eigen::Index>(v.size()) != k) throw ConfigError("sFAR --h0 must list K = " + std::to_string(k) + " values");
    return Eigen::Map<const Vec>(v.data(), k);
}

SubsetKind kind_from(const Settings& s) {
    if (s.at("kind") == "row") return SubsetKind::Row;
    if (s.at("kind") == "column") return SubsetKind::Column;
    throw ConfigError("--kind must be row or column");
}

std::vector<TestName> stats_from(const std::string& t) {
    std::vector<TestName> out;
    for (const auto& p : split(t, ',')) {
        if (p == "far") out.push_back(TestName::FAR);
        else if (p == "klm") out.push_back(TestName::KLM);
        else if (p == "jklm") out.push_back(TestName::JKLM);
        else if (p == "wald") out.push_back(TestName::Wald);
        else if (p == "sfar") out.push_back(TestName::sFAR);
        else if (p == "all") {
            for (TestName n : {TestName::FAR, TestName::KLM, TestName::JKLM, TestName::Wald, TestName::sFAR}) out.push_back(n);
        } else throw ConfigError("--stat: unknown test '" + p + "'");
    }
    if (out.empty()) throw ConfigError("--stat selects no test");
    return out;
}

// lo:hi:steps[,lo:hi:steps...]
std::vector<Axis> axes_from(const std::string& t) {
    std::vector<Axis> out;
    for (const auto& a : split(t, ',')) {
        const auto v = split(a, ':');
        if (v.size() != 3) throw ConfigError("--grid: expected lo:hi:steps, got '" + a + "'");
        Settings tmp{{"lo", v[0]}, {"hi", v[1]}, {"steps", v[2]}};
        out.push_back(Axis{to_double(tmp, "lo"), to_double(tmp, "hi"), static_cast<int>(to_int(tmp, "steps", 2))});
    }
    return out;
}

json result_json(const RobustTestResult& r) {
    json j;
    j["test"] = to_string(r.name);
    j["statistic"] = r.statistic;
    j["dof"] = r.dof;
    j["pvalue"] = r.pvalue;
    j["h0"] = to_json(r.h0);
    if (!r.warning.empty()) j["warning"] = r.warning;
    return j;
}

json kps_json(const RobustContext& c) {
    const KpsReport r = kps_residual_report(c.kps);
    return {{"residual_rel", r.residual_rel}, {"singular_ratio", r.ratio}, {"threshold", r.threshold},
            {"warn", r.warn}, {"vff_mode", to_string(c.mode_used)}};
}

// ---------------------------------------------------------------- commands

int cmd_ingest(const Settings& s) {
    const Paths out(s.at("out"));
    const YieldInputs y = load_yields(s);
    const Inputs in = panels_from_yields(s, y.panel, y.maturities);
    std::vector<std::string> rlabels;
    for (double m : in.returns.maturities_held) rlabels.push_back(maturity_label(m));
    {
        auto os = out.open("returns.csv");
        write_panel_csv(os, in.returns.dates, rlabels, in.returns.returns);
    }
    {
        auto os = out.open("factors.csv");
        write_panel_csv(os, in.factors.dates, in.factors.labels, in.factors.factors);
    }
    json summary;
    summary["N"] = in.returns.n();
    summary["T"] = in.returns.t();
    summary["K"] = in.factors.k();
    if (in.has_pca) {
        summary["pca_explained"] = to_json(in.pca.explained);
        summary["pca_loadings"] = to_json(in.pca.loadings);
    }
    out.open("ingest.json") << dump_json(summary) << '\n';
    write_manifest(out, "ingest", s);
    return exit_code::ok;
}

json estimate_json(const InferenceContext& c) {
    const ThreeStepFit& f = c.fit;
    const BetaInference bi = beta_inference(f);
    const RankTestResult rk = kp_rank(c.stacked);
    const AsymptoticCovariance ac = asymptotic_covariance(f);
    json j;
    j["N"] = f.N;
    j["T"] = f.T;
    j["K"] = f.K;
    j["beta"] = to_json(f.reg.beta_hat);
    j["beta_tstat"] = to_json(bi.tstat);
    j["beta_column_stat"] = to_json(bi.col_stat);
    j["beta_column_pvalue"] = to_json(bi.col_pvalue);
    j["rank_statistic"] = rk.statistic;
    j["rank_dof"] = rk.dof;
    j["rank_pvalue"] = rk.pvalue;
    j["lambda0"] = to_json(f.por.lambda0);
    j["lambda1"] = to_json(f.por.lambda1);
    j["lambda_cov"] = to_json(ac.v_lambda);
    j["bb_condition"] = f.por.bb_condition;
    j["sigma_e2"] = f.reg.sigma_e2;
    j["mu"] = to_json(f.var.mu);
    j["phi1"] = to_json(f.var.phi1);
    j["sigma_v"] = to_json(f.var.sigma_v);
    j["kps"] = kps_json(c.robust);
    return j;
}

// Rank statistics and distant-value boundedness for every subset of the factors.
int table4(const Settings& s, const Paths& out) {
    const YieldInputs y = load_yields(s);
    Eigen::Index k = 0;
    std::vector<std::string> macros;
    parse_factor_spec(s.at("factors"), k, macros);
    if (!macros.empty()) throw ConfigError("--table 4 uses PCA factors only");
    const Inputs all = panels_from_yields(s, y.panel, y.maturities);
    const double alpha = 1.0 - level_from(s);
    const int ndir = static_cast<int>(to_int(s, "directions", 1));
    json rows = json::array();
    std::ostringstream csv;
    csv << "factors,K,rank_statistic,rank_dof,rank_pvalue,min_distant,critical,bounded\n";
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        FactorPanel f = all.factors;
        std::vector<Eigen::Index> idx;
        std::string name;
        for (Eigen::Index j = 0; j < k; ++j)
            if (mask & (1u << j)) {
                idx.push_back(j);
                name += (name.empty() ? "" : "+") + std::to_string(j + 1);
            }
        f.factors.resize(static_cast<Eigen::Index>(idx.size()), all.factors.t());
        f.labels.clear();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            f.factors.row(static_cast<Eigen::Index>(i)) = all.factors.factors.row(idx[i]);
            f.labels.push_back(all.factors.labels[static_cast<std::size_t>(idx[i])]);
        }
        json r;
        r["factors"] = name;
        r["K"] = idx.size();
        try {
            const InferenceContext c = make_inference(all.returns, f, stage_from(s), robust_from(s));
            const BoundednessRecord b = boundedness_diagnostic(c.stacked, alpha, ndir, static_cast<std::uint64_t>(to_int(s, "seed", 0)));
            const double mind = *std::min_element(b.distant_values.begin(), b.distant_values.end());
            r["rank_statistic"] = b.rank.statistic;
            r["rank_dof"] = b.rank.dof;
            r["rank_pvalue"] = b.rank.pvalue;
            r["min_distant"] = mind;
            r["critical"] = b.critical;
            r["bounded"] = b.bounded_all;
            csv << name << ',' << idx.size() << ',' << fmt17(b.rank.statistic) << ',' << b.rank.dof << ','
                << fmt17(b.rank.pvalue) << ',' << fmt17(mind) << ',' << fmt17(b.critical) << ','
                << (b.bounded_all ? "true" : "false") << '\n';
        } catch (const NumericalError& e) {
            r["error"] = e.what();
            csv << name << ',' << idx.size() << ",nan,0,nan,nan,nan,error\n";
        }
        rows.push_back(r);
    }
    out.open("table4.json") << dump_json(rows) << '\n';
    out.open("table4.csv") << csv.str();
    write_manifest(out, "estimate", s);
    return exit_code::ok;
}

int cmd_estimate(Settings s) {
    const std::string& table = s.at("table");
    if (!table.empty() && table != "1" && table != "4") throw ConfigError("estimate presets: --table 1 or --table 4");
    if (table == "1") {
        if (s.at("maturities").empty()) s["maturities"] = "6,12,18,24,30,36,42,48,54,60,84,120";
        s["factors"] = "pca:5";
    } else if (table == "4") {
        if (s.at("maturities").empty()) s["maturities"] = "2,3,12,60,120";
        s["factors"] = "pca:5";
        const Paths out(s.at("out"));
        return table4(s, out);
    }
    const Paths out(s.at("out"));
    const Inputs in = load_inputs(s);
    const InferenceContext c = make_inference(in.returns, in.factors, stage_from(s), robust_from(s));
    out.open("estimates.json") << dump_json(estimate_json(c)) << '\n';
    write_manifest(out, "estimate", s);
    return exit_code::ok;
}

int cmd_test(const Settings& s) {
    const Paths out(s.at("out"));
    const Inputs in = load_inputs(s);
    const InferenceContext c = make_inference(in.returns, in.factors, stage_from(s), robust_from(s));
    json res = json::array();
    for (TestName t : stats_from(s.at("stat"))) {
        if (t == TestName::sFAR) {
            const SubsetKind kind = kind_from(s);
            const Eigen::Index idx = to_int(s, "index", 0);
            if (idx >= c.fit.K) throw ConfigError("--index out of range");
            const Vec v = h0_subset(s, c, in, kind, idx);
            const SfarResult r = kind == SubsetKind::Row ? sfar_row(c.stacked, idx, v) : sfar_column(c.stacked, idx, v);
            json j;
            j["test"] = "sFAR";
            j["kind"] = s.at("kind");
            j["index"] = idx;
            j["value"] = to_json(v);
            j["statistic"] = r.statistic;
            j["dof"] = r.dof_bound;
            j["pvalue"] = r.pvalue_upper;
            j["bound_only"] = true;
            j["method"] = r.method;
            j["converged"] = r.converged;
            if (r.ridge_applied) j["warning"] = "ridge applied to the restricted Psi";
            res.push_back(j);
        } else if (t == TestName::Wald) {
            const Mat h0 = h0_matrix(s, c, in);
            const WaldResult w = wald_test(c.fit, h0);
            res.push_back({{"test", "Wald"}, {"statistic", w.statistic}, {"dof", w.dof}, {"pvalue", w.pvalue}, {"h0", to_json(h0)}});
        } else {
            const RobustTriple tr = robust_tests(c.robust, h0_matrix(s, c, in));
            res.push_back(result_json(t == TestName::FAR ? tr.far : t == TestName::KLM ? tr.klm : tr.jklm));
        }
    }
    json doc;
    doc["N"] = c.fit.N;
    doc["T"] = c.fit.T;
    doc["K"] = c.fit.K;
    doc["kps"] = kps_json(c.robust);
    doc["results"] = res;
    out.open("tests.json") << dump_json(doc) << '\n';
    write_manifest(out, "test", s);
    return exit_code::ok;
}

int cmd_cs(const Settings& s) {
    const Paths out(s.at("out"));
    const Inputs in = load_inputs(s);
    const InferenceContext c = make_inference(in.returns, in.factors, stage_from(s), robust_from(s));
    const auto tests = stats_from(s.at("stat"));
    if (tests.size() != 1) throw ConfigError("cs takes exactly one --stat");
    const TestName test = tests[0];
    const Eigen::Index k = c.fit.K;
    GridSpec g;
    g.base = c.fit.por.lambda1;
    if (test == TestName::sFAR) {
        g.subset_kind = kind_from(s);
        g.index = to_int(s, "index", 0);
        if (g.index >= k) throw ConfigError("--index out of range");
        const Vec centre = g.subset_kind == SubsetKind::Row ? Vec(g.base.row(g.index).transpose()) : Vec(g.base.col(g.index));
        if (s.at("grid").empty()) {
            const int steps = k <= 2 ? 101 : 41;
            for (Eigen::Index j = 0; j < k; ++j) g.axes.push_back(centred_axis(centre(j), 1.0, steps));
        }
    } else {
        if (s.at("entries").empty()) {
            for (Eigen::Index j = 0; j < std::min<Eigen::Index>(k, 2); ++j) g.entries.emplace_back(j, j);
        } else {
            for (const auto& e : split(s.at("entries"), ';')) {
                const auto v = parse_list(e, "--entries");
                if (v.size() != 2) throw ConfigError("--entries: expected i,j pairs separated by ';'");
                g.entries.emplace_back(static_cast<Eigen::Index>(v[0]), static_cast<Eigen::Index>(v[1]));
            }
        }
        if (s.at("grid").empty()) {
            const int steps = g.entries.size() <= 2 ? 101 : 41;
            for (const auto& e : g.entries) g.axes.push_back(centred_axis(g.base(e.first, e.second), 1.0, steps));
        }
    }
    if (!s.at("grid").empty()) g.axes = axes_from(s.at("grid"));
    const double level = level_from(s);
    const ConfidenceSet cs = joint_confidence_set(test, g, level, c, threads_from(s), static_cast<int>(to_int(s, "directions", 1)));
    {
        auto os = out.open("surface.csv");
        const char* names[] = {"x", "y", "z"};
        for (std::size_t d = 0; d < g.axes.size(); ++d) os << names[d] << ',';
        os << "statistic,pvalue,accepted\n";
        const double crit = 1.0 - level;
        for (std::size_t p = 0; p < g.size(); ++p) {
            const Vec x = g.point(p);
            for (Eigen::Index d = 0; d < x.size(); ++d) os << fmt17(x(d)) << ',';
            const PointValue& v = cs.surface.values[p];
            os << fmt17(v.statistic) << ',' << fmt17(v.pvalue) << ',' << (v.ok && v.pvalue >= crit ? 1 : 0) << '\n';
        }
    }
    json j;
    j["test"] = to_string(test);
    j["level"] = level;
    j["points"] = g.size();
    j["accepted"] = cs.accepted.size();
    j["failures"] = cs.surface.failures;
    j["shape"] = to_string(cs.bounded);
    j["touches_boundary"] = cs.touches_boundary;
    j["classification_basis"] = cs.classification_basis;
    json proj = json::array();
    for (std::size_t d = 0; d < g.axes.size(); ++d) {
        json iv = json::array();
        for (const auto& i : project_cs(cs, d)) iv.push_back({i.lo, i.hi});
        proj.push_back(iv);
    }
    j["projections"] = proj;
    if (test == TestName::sFAR) {
        const RankTestResult rk = kp_rank(c.stacked);
        j["rank_statistic"] = rk.statistic;
        j["rank_pvalue"] = rk.pvalue;
    }
    j["kps"] = kps_json(c.robust);
    out.open("cs.json") << dump_json(j) << '\n';
    write_manifest(out, "cs", s);
    return exit_code::ok;
}

McOptions mc_options(const Settings& s) {
    McOptions o;
    o.seed = static_cast<std::uint64_t>(to_int(s, "seed", 0));
    o.threads = threads_from(s);
    o.stage = stage_from(s);
    Settings tmp = s;
    tmp["input"] = "";
    o.robust = robust_from(tmp);
    return o;
}

DgpSpec mc_design(const Settings& s, const std::string& design, bool strong) {
    const Eigen::Index t = to_int(s, "T", 4);
    if (design == "single") return single_factor_design(strong, t);
    if (design == "two") return two_factor_design(strong, t);
    throw ConfigError("--design must be single or two");
}

bool strength_from(const Settings& s) {
    if (s.at("strength") == "strong") return true;
    if (s.at("strength") == "weak") return false;
    throw ConfigError("--strength must be strong or weak");
}

void write_power_curves(const Settings& s, const Paths& out, const std::vector<std::string>& strengths,
                        const std::string& design, const std::vector<TestName>& tests) {
    const McOptions o = mc_options(s);
    const std::size_t reps = static_cast<std::size_t>(to_int(s, "reps", 1));
    const double level = level_from(s);
    std::ostringstream csv;
    csv << "strength,test,h0,frequency,se,valid,failures\n";
    for (const auto& st : strengths) {
        const DgpSpec spec = mc_design(s, design, st == "strong");
        std::vector<Axis> axes = s.at("grid").empty() ? std::vector<Axis>{centred_axis(spec.lambda1(0, 0), 1.0, 21)} : axes_from(s.at("grid"));
        if (axes.size() != 1) throw ConfigError("mc power curves take a one-dimensional --grid over Lambda1(0,0)");
        std::vector<Mat> grid;
        for (int i = 0; i < axes[0].steps; ++i) {
            Mat h = spec.lambda1;
            h(0, 0) = axes[0].at(i);
            grid.push_back(h);
        }
        for (const auto& c : power_curve(tests, grid, spec, reps, level, o))
            csv << st << ',' << c.test << ',' << fmt17(c.h0(0, 0)) << ',' << fmt17(c.frequency()) << ',' << fmt17(c.se())
                << ',' << c.valid << ',' << c.failures << '\n';
    }
    out.open("frequencies.csv") << csv.str();
}

void write_densities(const Settings& s, const Paths& out, const std::vector<std::string>& strengths) {
    const McOptions o = mc_options(s);
    const std::size_t reps = static_cast<std::size_t>(to_int(s, "reps", 0));
    std::ostringstream hist, q;
    hist << "strength,bin_lo,bin_hi,count\n";
    q << "strength,p,empirical,reference,se,within_bound\n";
    json ks = json::object();
    for (const auto& st : strengths) {
        const DensityExperiment d = sfar_density_experiment(mc_design(s, "two", st == "strong"), reps,
                                                            to_int(s, "index", 0), o);
        for (std::size_t b = 0; b < d.counts.size(); ++b)
            hist << st << ',' << fmt17(d.bin_edges[b]) << ',' << fmt17(d.bin_edges[b + 1]) << ',' << d.counts[b] << '\n';
        for (const auto& c : d.quantiles)
            q << st << ',' << fmt17(c.p) << ',' << fmt17(c.empirical) << ',' << fmt17(c.reference) << ','
              << fmt17(c.se) << ',' << (c.within_bound() ? "true" : "false") << '\n';
        ks[st] = {{"statistic", d.ks.statistic}, {"pvalue", d.ks.pvalue}, {"n", d.ks.n}, {"dof", d.dof}, {"failures", d.failures}};
    }
    out.open("histogram.csv") << hist.str();
    out.open("quantiles.csv") << q.str();
    out.open("ks.json") << dump_json(ks) << '\n';
}

void write_power_surfaces(const Settings& s, const Paths& out, const std::vector<std::string>& strengths) {
    const McOptions o = mc_options(s);
    const std::size_t reps = static_cast<std::size_t>(to_int(s, "reps", 1));
    std::ostringstream csv;
    csv << "strength,x,y,frequency,valid\n";
    for (const auto& st : strengths) {
        const DgpSpec spec = mc_design(s, "two", st == "strong");
        GridSpec g;
        g.index = to_int(s, "index", 0);
        const Vec centre = spec.lambda1.row(g.index).transpose();
        g.axes = s.at("grid").empty() ? std::vector<Axis>{centred_axis(centre(0), 1.0, 21), centred_axis(centre(1), 1.0, 21)}
                                      : axes_from(s.at("grid"));
        const PowerSurface ps = power_surface(spec, g, reps, level_from(s), o);
        for (std::size_t p = 0; p < g.size(); ++p) {
            const Vec x = g.point(p);
            csv << st << ',' << fmt17(x(0)) << ',' << fmt17(x(1)) << ',' << fmt17(ps.frequency[p]) << ',' << ps.valid[p] << '\n';
        }
    }
    out.open("power_surface.csv") << csv.str();
}

int cmd_mc(Settings s) {
    const Paths out(s.at("out"));
    const std::string& fig = s.at("figure");
    if (fig == "2") {
        write_power_curves(s, out, {"strong", "weak"}, "single", {TestName::FAR, TestName::KLM, TestName::JKLM, TestName::Wald});
    } else if (fig == "4") {
        write_densities(s, out, {"strong", "weak"});
    } else if (fig == "6") {
        write_power_surfaces(s, out, {"strong", "weak"});
    } else if (fig.empty()) {
        const std::string st = strength_from(s) ? "strong" : "weak";
        auto tests = stats_from(s.at("stat"));
        const bool sfar = std::find(tests.begin(), tests.end(), TestName::sFAR) != tests.end();
        if (sfar) {
            if (tests.size() != 1 || s.at("design") != "two") throw ConfigError("mc --stat sfar runs alone on --design two");
            write_densities(s, out, {st});
        } else {
            write_power_curves(s, out, {st}, s.at("design"), tests);
        }
    } else {
        throw ConfigError("mc presets: --figure 2, 4 or 6");
    }
    write_manifest(out, "mc", s);
    return exit_code::ok;
}

int cmd_eigenlab(const Settings& s) {
    const Paths out(s.at("out"));
    const std::size_t draws = static_cast<std::size_t>(to_int(s, "draws", 1));
    const std::uint64_t seed = static_cast<std::uint64_t>(to_int(s, "seed", 0));
    const int threads = threads_from(s);
    EigenLabSpec spec;
    spec.reps = draws;
    spec.seed = seed;
    spec.threads = threads;
    const Eigen::Index l = spec.dim, k = spec.k, n = spec.n_rows;
    const auto central = central_wishart_eigensum(n - k + 1, l - k + 1, draws, seed, threads);
    const double cdof = static_cast<double>((l - k + 1) * (n - k + 1));
    const KsResult ks = ks_test(central, [cdof](double x) { return chi2_cdf(x, cdof); });
    std::ostringstream csv;
    csv << "kappa,p,empirical,reference,se,within_bound\n";
    std::vector<double> kappas = {0.0};
    for (double kv : parse_list(s.at("kappa"), "--kappa")) kappas.push_back(kv);
    for (double kv : kappas) {
        if (kv < 0) throw ConfigError("--kappa values must be >= 0");
        spec.noncentrality = Mat::Zero(n, l);
        spec.noncentrality(0, 0) = std::sqrt(kv);
        const EigenLabResult r = wishart_eigen_lab(spec);
        for (const auto& q : r.small_quantiles)
            csv << fmt17(kv) << ',' << fmt17(q.p) << ',' << fmt17(q.empirical) << ',' << fmt17(q.reference) << ','
                << fmt17(q.se) << ',' << (q.within_bound() ? "true" : "false") << '\n';
    }
    out.open("eigenlab.csv") << csv.str();
    json j = {{"central_trace_ks", {{"statistic", ks.statistic}, {"pvalue", ks.pvalue}, {"n", ks.n}, {"dof", cdof}}}};
    out.open("eigenlab.json") << dump_json(j) << '\n';
    write_manifest(out, "eigenlab", s);
    return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Affine term structure price-of-risk inference"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> opts;
    const std::map<std::string, std::string> help = {
        {"input", "yield CSV, ingest output directory, or synthetic:<single|two>-<strong|weak>"},
        {"macro-input", "CSV with macro series for --factors macro:col"},
        {"factors", "pca:K[,macro:col...]"},
        {"maturities", "comma-separated holding maturities in months"},
        {"period", "holding period in months"},
        {"interpolate", "interpolate missing maturities (true/false)"},
        {"stat", "far, klm, jklm, wald, sfar or all (comma-separated)"},
        {"h0", "zeros, hat, truth, or a matrix 'a,b;c,d' (sFAR: a K-vector)"},
        {"grid", "lo:hi:steps per axis, comma-separated"},
        {"entries", "Lambda1 entries bound to grid axes, 'i,j;k,l'"},
        {"kind", "sFAR hypothesis kind: row or column"},
        {"index", "sFAR row or column index"},
        {"level", "confidence level"},
        {"seed", "random seed"},
        {"threads", "worker threads"},
        {"cov", "V_ff estimator: auto, kps, hc0 or direct"},
        {"resid", "residual covariance: homoskedastic or outer"},
        {"variant", "three-step variant: I or II"},
        {"out", "output directory"},
        {"figure", "mc preset: 2, 4 or 6"},
        {"table", "estimate preset: 1 or 4"},
        {"reps", "Monte Carlo replicates"},
        {"T", "sample size for synthetic and Monte Carlo designs"},
        {"design", "mc design: single or two"},
        {"strength", "mc identification strength: strong or weak"},
        {"kappa", "eigenlab noncentralities, comma-separated"},
        {"draws", "eigenlab draws"},
        {"directions", "direction count for the boundedness scan"},
    };
    for (const auto& [key, text] : help) opts[key] = app.add_option("--" + key, flag_values[key], text);
    bool percent = false;
    auto* percent_opt = app.add_flag("--percent", percent, "yields are annualized percent");
    std::string config_path;
    app.add_option("--config", config_path, "key=value config file; flags override it");

    auto* ingest = app.add_subcommand("ingest", "yields CSV to returns and factors CSVs");
    auto* estimate = app.add_subcommand("estimate", "three-step estimates, t-statistics and rank statistic");
    auto* test = app.add_subcommand("test", "FAR, KLM, JKLM, Wald and sFAR at a hypothesis");
    auto* cs = app.add_subcommand("cs", "p-value surface and joint confidence set on a grid");
    auto* mc = app.add_subcommand("mc", "Monte Carlo size, power and density experiments");
    auto* eigenlab = app.add_subcommand("eigenlab", "Wishart eigenvalue checks");
    for (auto* sc : {ingest, estimate, test, cs, mc, eigenlab}) sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "atsm: " << e.what() << '\n';
        return exit_code::config;
    }

    try {
        Settings s = defaults();
        if (!config_path.empty()) read_config_file(config_path, s);
        for (const auto& [key, opt] : opts)
            if (opt->count() > 0) s[key] = flag_values[key];
        if (percent_opt->count() > 0) s["percent"] = percent ? "true" : "false";

        if (ingest->parsed()) return cmd_ingest(s);
        if (estimate->parsed()) return cmd_estimate(s);
        if (test->parsed()) return cmd_test(s);
        if (cs->parsed()) return cmd_cs(s);
        if (mc->parsed()) return cmd_mc(s);
        if (eigenlab->parsed()) return cmd_eigenlab(s);
        return exit_code::internal;
    } catch (const ConfigError& e) {
        std::cerr << "atsm: configuration error: " << e.what() << '\n';
        return exit_code::config;
    } catch (const NumericalError& e) {
        std::cerr << "atsm: numerical error: " << e.what() << '\n';
        return exit_code::numerical;
    } catch (const std::exception& e) {
        std::cerr << "atsm: internal error: " << e.what() << '\n';
        return exit_code::internal;
    }
}
