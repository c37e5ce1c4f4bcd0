#pragma once

#include <algorithm>
#include <string>
#include <thread>
#include <vector>

#include "ats/acm.hpp"
#include "ats/robust.hpp"
#include "ats/subset.hpp"

namespace ats {

struct Axis {
    double lo = -1.0, hi = 1.0;
    int steps = 101;
    double at(int i) const { return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1); }
};

// Which parameters a grid moves. For the full-vector tests the listed entries of
// Lambda1 vary and the rest stay at `base`. For sFAR the grid spans the K entries
// of the hypothesized row (or column) `index`, so dims must equal K.
struct GridSpec {
    std::vector<Axis> axes;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> entries;
    Mat base;
    SubsetKind subset_kind = SubsetKind::Row;
    Eigen::Index index = 0;

    std::size_t size() const {
        std::size_t n = 1;
        for (const auto& a : axes) n *= static_cast<std::size_t>(a.steps);
        return n;
    }
    // Multi-index of flat position p, first axis fastest.
    std::vector<int> unravel(std::size_t p) const {
        std::vector<int> id(axes.size());
        for (std::size_t d = 0; d < axes.size(); ++d) {
            id[d] = static_cast<int>(p % static_cast<std::size_t>(axes[d].steps));
            p /= static_cast<std::size_t>(axes[d].steps);
        }
        return id;
    }
    Vec point(std::size_t p) const {
        const auto id = unravel(p);
        Vec x(static_cast<Eigen::Index>(axes.size()));
        for (std::size_t d = 0; d < axes.size(); ++d) x(static_cast<Eigen::Index>(d)) = axes[d].at(id[d]);
        return x;
    }
    void validate() const {
        if (axes.empty() || axes.size() > 3) throw ConfigError("grid must have 1 to 3 dimensions");
        for (const auto& a : axes) {
            if (a.steps < 2) throw ConfigError("grid steps must be >= 2");
            if (!(a.lo < a.hi)) throw ConfigError("grid needs lo < hi");
        }
    }
};

struct InferenceContext {
    ThreeStepFit fit;
    RobustContext robust;
    StackedSystem stacked;
};

inline InferenceContext make_inference(const ReturnPanel& r, const FactorPanel& f, const StageOptions& so = {},
                                       const RobustOptions& ro = {}) {
    InferenceContext c;
    c.fit = three_step(r, f, so);
    c.robust = make_context(r, f, c.fit.var, ro);
    c.stacked = build_stacked(c.robust);
    return c;
}

inline Mat bind_lambda1(const GridSpec& g, const Vec& x) {
    Mat l = g.base;
    for (std::size_t d = 0; d < g.entries.size(); ++d) l(g.entries[d].first, g.entries[d].second) = x(static_cast<Eigen::Index>(d));
    return l;
}

struct PointValue {
    double statistic = 0.0;
    double pvalue = 0.0;
    bool ok = true;
    std::string error;
};

inline PointValue evaluate_point(TestName test, const GridSpec& g, const Vec& x, const InferenceContext& c) {
    PointValue pv;
    try {
        if (test == TestName::sFAR) {
            const SfarResult r = g.subset_kind == SubsetKind::Row ? sfar_row(c.stacked, g.index, x)
                                                                  : sfar_column(c.stacked, g.index, x);
            pv.statistic = r.statistic;
            pv.pvalue = r.pvalue_upper;
        } else if (test == TestName::Wald) {
            const WaldResult w = wald_test(c.fit, bind_lambda1(g, x));
            pv.statistic = w.statistic;
            pv.pvalue = w.pvalue;
        } else {
            const RobustTriple t = robust_tests(c.robust, bind_lambda1(g, x));
            const RobustTestResult& r = test == TestName::FAR ? t.far : test == TestName::KLM ? t.klm : t.jklm;
            pv.statistic = r.statistic;
            pv.pvalue = r.pvalue;
        }
    } catch (const std::exception& e) {
        pv.ok = false;
        pv.error = e.what();
        pv.pvalue = std::numeric_limits<double>::quiet_NaN();
    }
    return pv;
}

struct Surface {
    GridSpec grid;
    TestName test = TestName::FAR;
    std::vector<PointValue> values;  // flat, first axis fastest
    std::size_t failures = 0;
};

inline void check_binding(TestName test, const GridSpec& g, Eigen::Index k) {
    g.validate();
    if (test == TestName::sFAR) {
        if (static_cast<Eigen::Index>(g.axes.size()) != k)
            throw ConfigError("sFAR grid must span the K entries of the hypothesized row or column");
        if (g.index < 0 || g.index >= k) throw ConfigError("sFAR grid index out of range");
    } else {
        if (g.entries.size() != g.axes.size()) throw ConfigError("grid must bind one Lambda1 entry per axis");
        if (g.base.rows() != k || g.base.cols() != k) throw ConfigError("grid base must be K x K");
        for (const auto& e : g.entries)
            if (e.first < 0 || e.first >= k || e.second < 0 || e.second >= k) throw ConfigError("grid entry out of range");
    }
}

// Points are split into contiguous chunks, one per worker; each worker writes
// only its own slots.
inline Surface pvalue_curve(TestName test, const GridSpec& g, const InferenceContext& c, int threads = 1) {
    check_binding(test, g, c.fit.K);
    Surface s;
    s.grid = g;
    s.test = test;
    const std::size_t n = g.size();
    s.values.resize(n);
    const auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = lo; p < hi; ++p) s.values[p] = evaluate_point(test, g, g.point(p), c);
    };
    const std::size_t nt = static_cast<std::size_t>(std::max(1, threads));
    if (nt == 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (n + nt - 1) / nt;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
            if (lo < hi) pool.emplace_back(work, lo, hi);
        }
        for (auto& th : pool) th.join();
    }
    for (const auto& v : s.values)
        if (!v.ok) ++s.failures;
    return s;
}

enum class SetShape { Bounded, Unbounded, Empty };

inline const char* to_string(SetShape b) {
    switch (b) {
        case SetShape::Bounded: return "bounded";
        case SetShape::Unbounded: return "unbounded";
        default: return "empty";
    }
}

struct ConfidenceSet {
    double level = 0.95;
    TestName test = TestName::FAR;
    std::vector<std::size_t> accepted;  // flat grid positions
    Surface surface;
    SetShape bounded = SetShape::Empty;
    bool touches_boundary = false;
    std::string classification_basis;  // "grid", "direction-scan" or "boundary"
};

inline ConfidenceSet threshold_surface(const Surface& s, double level) {
    ConfidenceSet cs;
    cs.level = level;
    cs.test = s.test;
    cs.surface = s;
    for (std::size_t p = 0; p < s.values.size(); ++p)
        if (s.values[p].ok && s.values[p].pvalue >= 1.0 - level) cs.accepted.push_back(p);
    for (std::size_t p : cs.accepted) {
        const auto id = s.grid.unravel(p);
        for (std::size_t d = 0; d < id.size(); ++d)
            if (id[d] == 0 || id[d] == s.grid.axes[d].steps - 1) cs.touches_boundary = true;
    }
    return cs;
}

// Accepted region at p >= 1 - level. A region touching the grid edge is classified
// by the distant-value scan for sFAR; other tests cannot certify boundedness
// beyond the grid and are reported unbounded.
inline ConfidenceSet joint_confidence_set(TestName test, const GridSpec& g, double level, const InferenceContext& c,
                                          int threads = 1, int n_directions = 64) {
    if (!(level > 0 && level < 1)) throw ConfigError("level must be in (0, 1)");
    ConfidenceSet cs = threshold_surface(pvalue_curve(test, g, c, threads), level);
    if (cs.accepted.empty()) {
        cs.bounded = SetShape::Empty;
        cs.classification_basis = "grid";
    } else if (!cs.touches_boundary) {
        cs.bounded = SetShape::Bounded;
        cs.classification_basis = "grid";
    } else if (test == TestName::sFAR) {
        const BoundednessRecord b = boundedness_diagnostic(c.stacked, 1.0 - level, n_directions);
        cs.bounded = b.bounded_all ? SetShape::Bounded : SetShape::Unbounded;
        cs.classification_basis = "direction-scan";
    } else {
        cs.bounded = SetShape::Unbounded;
        cs.classification_basis = "boundary";
    }
    return cs;
}

struct Interval {
    double lo = 0.0, hi = 0.0;
};

// Axis projection of the accepted points as a union of grid-resolution intervals.
inline std::vector<Interval> project_cs(const ConfidenceSet& cs, std::size_t axis) {
    const GridSpec& g = cs.surface.grid;
    if (axis >= g.axes.size()) throw ConfigError("projection axis out of range");
    std::vector<int> idx;
    for (std::size_t p : cs.accepted) idx.push_back(g.unravel(p)[axis]);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    std::vector<Interval> out;
    const Axis& a = g.axes[axis];
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && idx[j + 1] == idx[j] + 1) ++j;
        out.push_back({a.at(idx[i]), a.at(idx[j])});
        i = j + 1;
    }
    return out;
}

inline bool interval_contains(const std::vector<Interval>& iv, double x, double slack = 0.0) {
    for (const auto& i : iv)
        if (x >= i.lo - slack && x <= i.hi + slack) return true;
    return false;
}

// Default symmetric grid around a centre, `half` on each side.
inline Axis centred_axis(double centre, double half, int steps) { return {centre - half, centre + half, steps}; }

}  // namespace ats
