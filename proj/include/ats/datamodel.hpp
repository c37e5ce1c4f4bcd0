#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ats/format.hpp"
#include "ats/linalg.hpp"

namespace ats {

// Zero-coupon yields, one row per date. Stored per month, continuously
// compounded.
struct YieldPanel {
    std::vector<std::string> dates;
    std::vector<double> maturities;  // months
    Mat yields;                      // T_raw x M

    Eigen::Index t_raw() const { return yields.rows(); }
    Eigen::Index m() const { return yields.cols(); }
};

struct ReturnPanel {
    std::vector<double> maturities_held;
    std::vector<std::string> dates;  // end of holding period
    Mat returns;                     // N x T
    bool demeaned_flag = false;

    Eigen::Index n() const { return returns.rows(); }
    Eigen::Index t() const { return returns.cols(); }
};

struct FactorPanel {
    Mat factors;  // K x T
    std::vector<std::string> labels;
    std::vector<std::string> dates;
    bool demeaned_flag = false;

    Eigen::Index k() const { return factors.rows(); }
    Eigen::Index t() const { return factors.cols(); }
};

struct CsvOptions {
    std::string date_column = "date";
    bool annualized_percent = false;  // convert yields from % p.a. to per-month decimals
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto res = std::from_chars(first, s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool valid_date(const std::string& s) {
    // YYYY-MM or YYYY-MM-DD
    if (s.size() != 7 && s.size() != 10) return false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool dash = (i == 4 || i == 7);
        if (dash ? s[i] != '-' : !std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

inline std::string loc(std::size_t row, std::size_t col) {
    std::ostringstream os;
    os << "row " << row << ", column " << col;
    return os.str();
}

}  // namespace detail

// Generic date-keyed numeric table.
struct Table {
    std::vector<std::string> dates;
    std::vector<std::string> columns;
    Mat values;  // rows = dates
};

inline Table parse_table_csv(std::istream& in, const std::string& source, const CsvOptions& opt = {}) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(source + ": empty file");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2) throw ConfigError(source + ": header needs a date column and at least one value column");
    std::size_t date_idx = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == opt.date_column) date_idx = j;
    if (date_idx == header.size()) throw ConfigError(source + ": missing column '" + opt.date_column + "'");

    Table t;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != date_idx) {
            if (header[j].empty()) throw ConfigError(source + ": empty header name at column " + std::to_string(j + 1));
            t.columns.push_back(header[j]);
        }

    std::vector<std::vector<double>> rows;
    std::size_t rowno = 1;
    while (std::getline(in, line)) {
        ++rowno;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ConfigError(source + ": row " + std::to_string(rowno) + " has " + std::to_string(cells.size()) +
                              " cells, expected " + std::to_string(header.size()));
        if (!detail::valid_date(cells[date_idx]))
            throw ConfigError(source + ": unparseable date '" + cells[date_idx] + "' at " +
                              detail::loc(rowno, date_idx + 1));
        std::vector<double> r;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            if (j == date_idx) continue;
            double v = 0;
            if (!detail::parse_double(cells[j], v))
                throw ConfigError(source + ": unparseable cell '" + cells[j] + "' at " + detail::loc(rowno, j + 1) +
                                  " (" + header[j] + ")");
            r.push_back(v);
        }
        t.dates.push_back(cells[date_idx]);
        rows.push_back(std::move(r));
    }

    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return t.dates[a] < t.dates[b]; });
    std::vector<std::string> sorted_dates;
    t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.columns.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
        sorted_dates.push_back(t.dates[order[i]]);
        for (std::size_t j = 0; j < t.columns.size(); ++j)
            t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[order[i]][j];
    }
    for (std::size_t i = 1; i < sorted_dates.size(); ++i)
        if (sorted_dates[i] == sorted_dates[i - 1])
            throw ConfigError(source + ": duplicate date " + sorted_dates[i]);
    t.dates = std::move(sorted_dates);
    return t;
}

inline Table load_table_csv(const std::string& path, const CsvOptions& opt = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return parse_table_csv(in, path, opt);
}

inline YieldPanel yields_from_table(const Table& t, const std::string& source, const CsvOptions& opt = {}) {
    YieldPanel p;
    p.dates = t.dates;
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
        double m = 0;
        if (!detail::parse_double(t.columns[j], m) || m <= 0)
            throw ConfigError(source + ": header '" + t.columns[j] + "' at column " + std::to_string(j + 2) +
                              " is not a positive maturity in months");
        p.maturities.push_back(m);
    }
    for (std::size_t j = 1; j < p.maturities.size(); ++j)
        if (!(p.maturities[j] > p.maturities[j - 1]))
            throw ConfigError(source + ": maturities must be strictly ascending");
    if (p.maturities.size() < 2) throw ConfigError(source + ": need at least 2 maturities");
    if (p.dates.size() < 3) throw ConfigError(source + ": need at least 3 dates");
    p.yields = t.values;
    if (opt.annualized_percent) p.yields /= 1200.0;
    return p;
}

inline YieldPanel parse_yield_csv(std::istream& in, const std::string& source, const CsvOptions& opt = {}) {
    return yields_from_table(parse_table_csv(in, source, opt), source, opt);
}

inline YieldPanel load_yield_csv(const std::string& path, const CsvOptions& opt = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    return parse_yield_csv(in, path, opt);
}

inline std::string maturity_label(double m) {
    if (m == std::floor(m) && std::abs(m) < 1e15) return std::to_string(static_cast<long long>(m));
    return fmt17(m);
}

// Writes per-month yields; re-reading without the percent flag reproduces the
// panel bit for bit.
inline void write_yield_csv(std::ostream& os, const YieldPanel& p) {
    os << "date";
    for (double m : p.maturities) os << ',' << maturity_label(m);
    os << '\n';
    for (Eigen::Index i = 0; i < p.yields.rows(); ++i) {
        os << p.dates[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < p.yields.cols(); ++j) os << ',' << fmt17(p.yields(i, j));
        os << '\n';
    }
}

// Columns of a K x T (or N x T) panel written as date rows.
inline void write_panel_csv(std::ostream& os, const std::vector<std::string>& dates,
                            const std::vector<std::string>& labels, const Mat& rows_by_series) {
    os << "date";
    for (const auto& l : labels) os << ',' << l;
    os << '\n';
    for (Eigen::Index t = 0; t < rows_by_series.cols(); ++t) {
        os << (static_cast<std::size_t>(t) < dates.size() ? dates[static_cast<std::size_t>(t)] : std::to_string(t));
        for (Eigen::Index i = 0; i < rows_by_series.rows(); ++i) os << ',' << fmt17(rows_by_series(i, t));
        os << '\n';
    }
}

struct ReturnOptions {
    double period = 1.0;         // holding period in months
    bool interpolate = false;    // linear interpolation in maturity for missing n or n+period
};

namespace detail {
inline Vec yield_at(const YieldPanel& p, double m, bool interpolate) {
    const auto& ms = p.maturities;
    for (std::size_t j = 0; j < ms.size(); ++j)
        if (ms[j] == m) return p.yields.col(static_cast<Eigen::Index>(j));
    if (!interpolate || m < ms.front() || m > ms.back())
        throw ConfigError("maturity " + maturity_label(m) + " not in panel" +
                          (interpolate ? " (outside interpolation range)" : " and interpolation is disabled"));
    const auto hi = static_cast<std::size_t>(std::upper_bound(ms.begin(), ms.end(), m) - ms.begin());
    const auto lo = hi - 1;
    const double w = (m - ms[lo]) / (ms[hi] - ms[lo]);
    return (1.0 - w) * p.yields.col(static_cast<Eigen::Index>(lo)) + w * p.yields.col(static_cast<Eigen::Index>(hi));
}
}  // namespace detail

// r_{t+1,n} = ln P_{t+1,n} - ln P_{t,n+p} - p*y_{t,p}, with ln P_{t,n} = -n y_{t,n}.
inline ReturnPanel excess_returns(const YieldPanel& panel, const std::vector<double>& maturities,
                                  const ReturnOptions& opt = {}) {
    if (maturities.empty()) throw ConfigError("excess_returns: no maturities requested");
    if (panel.t_raw() < 2) throw ConfigError("excess_returns: need at least 2 dates");
    const double p = opt.period;
    const Eigen::Index traw = panel.t_raw();
    const Vec short_rate = detail::yield_at(panel, p, opt.interpolate);
    ReturnPanel out;
    out.maturities_held = maturities;
    out.returns.resize(static_cast<Eigen::Index>(maturities.size()), traw - 1);
    for (std::size_t i = 0; i < maturities.size(); ++i) {
        const double n = maturities[i];
        const Vec yn = detail::yield_at(panel, n, opt.interpolate);
        const Vec ynp = detail::yield_at(panel, n + p, opt.interpolate);
        for (Eigen::Index t = 0; t + 1 < traw; ++t)
            out.returns(static_cast<Eigen::Index>(i), t) = -n * yn(t + 1) + (n + p) * ynp(t) - p * short_rate(t);
    }
    out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
    return out;
}

struct PcaResult {
    FactorPanel factors;       // K x T_raw scores
    Mat loadings;              // M x K
    Vec eigenvalues;           // all M, descending
    Vec explained;             // share of total variance, first K
    Vec column_means;          // M
};

// Principal components of the column-centered yield matrix. Each loading
// vector has its largest-magnitude entry positive.
inline PcaResult pca_factors(const YieldPanel& panel, Eigen::Index k) {
    const Eigen::Index traw = panel.t_raw(), m = panel.m();
    if (k < 1 || k > std::min(m, traw)) throw ConfigError("pca_factors: k must be in [1, min(M, T)]");
    PcaResult r;
    r.column_means = panel.yields.colwise().mean().transpose();
    const Mat yc = panel.yields.rowwise() - r.column_means.transpose();
    const Mat cov = symmetrize(yc.transpose() * yc / static_cast<double>(traw));
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    r.eigenvalues = es.eigenvalues().reverse();
    const Mat vecs = es.eigenvectors().rowwise().reverse();
    const double top = std::max(r.eigenvalues(0), 0.0);
    const double tol = 1e-12 * (top > 0 ? top : 1.0) * static_cast<double>(m);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i)
        if (r.eigenvalues(i) > tol) ++rank;
    if (k > rank)
        throw ConfigError("pca_factors: k = " + std::to_string(k) + " exceeds rank " + std::to_string(rank) +
                          " of the centered yield matrix");
    r.loadings = vecs.leftCols(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::Index idx = 0;
        r.loadings.col(j).cwiseAbs().maxCoeff(&idx);
        if (r.loadings(idx, j) < 0) r.loadings.col(j) *= -1.0;
    }
    const double total = r.eigenvalues.cwiseMax(0.0).sum();
    r.explained = r.eigenvalues.head(k) / (total > 0 ? total : 1.0);
    r.factors.factors = (yc * r.loadings).transpose();
    for (Eigen::Index j = 0; j < k; ++j) r.factors.labels.push_back("PC" + std::to_string(j + 1));
    r.factors.dates = panel.dates;
    return r;
}

inline Mat demean_rows(const Mat& x) {
    if (x.cols() < 2) throw ConfigError("demean: need T >= 2");
    Mat out = x.colwise() - x.rowwise().mean();
    return out;
}

inline FactorPanel demean(const FactorPanel& p) {
    FactorPanel out = p;
    out.factors = demean_rows(p.factors);
    out.demeaned_flag = true;
    return out;
}

inline ReturnPanel demean(const ReturnPanel& p) {
    ReturnPanel out = p;
    out.returns = demean_rows(p.returns);
    out.demeaned_flag = true;
    return out;
}

inline bool rows_demeaned(const Mat& x) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double scale = std::max(1.0, x.row(i).cwiseAbs().maxCoeff());
        if (std::abs(x.row(i).sum()) > 1e-10 * static_cast<double>(x.cols()) * scale) return false;
    }
    return true;
}

// Appends date-aligned macro series as additional factor rows.
inline FactorPanel append_series(const FactorPanel& base, const Table& t, const std::vector<std::string>& names) {
    std::map<std::string, Eigen::Index> row_of;
    for (std::size_t i = 0; i < t.dates.size(); ++i) row_of[t.dates[i]] = static_cast<Eigen::Index>(i);
    FactorPanel out = base;
    for (const auto& name : names) {
        auto it = std::find(t.columns.begin(), t.columns.end(), name);
        if (it == t.columns.end()) throw ConfigError("macro column '" + name + "' not found");
        const auto col = static_cast<Eigen::Index>(it - t.columns.begin());
        Mat grown(out.factors.rows() + 1, out.factors.cols());
        grown.topRows(out.factors.rows()) = out.factors;
        for (Eigen::Index s = 0; s < out.factors.cols(); ++s) {
            const auto& d = base.dates[static_cast<std::size_t>(s)];
            auto r = row_of.find(d);
            if (r == row_of.end()) throw ConfigError("macro series '" + name + "' has no value for date " + d);
            grown(out.factors.rows(), s) = t.values(r->second, col);
        }
        out.factors = std::move(grown);
        out.labels.push_back(name);
    }
    return out;
}

}  // namespace ats
