#pragma once

#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>

#include "json.hpp"

#include "ats/linalg.hpp"

namespace ats {

using json = nlohmann::ordered_json;

// 17 significant digits, '.' decimal, no locale.
inline std::string fmt17(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline json to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

// Row-major nested arrays.
inline json to_json(const Mat& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(std::move(row));
    }
    return a;
}

inline Mat mat_from_json(const json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("expected a non-empty nested array");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols) throw ConfigError("ragged matrix in JSON");
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

namespace detail {
inline void write_json(std::ostream& os, const json& j, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
    const std::string pad_close(static_cast<std::size_t>(indent * depth), ' ');
    switch (j.type()) {
        case json::value_t::object: {
            if (j.empty()) { os << "{}"; return; }
            os << "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) os << ",\n";
                first = false;
                os << pad << json(it.key()).dump() << ": ";
                write_json(os, it.value(), indent, depth + 1);
            }
            os << "\n" << pad_close << "}";
            return;
        }
        case json::value_t::array: {
            if (j.empty()) { os << "[]"; return; }
            // numeric rows stay on one line
            bool flat = true;
            for (const auto& e : j) flat = flat && e.is_primitive();
            if (flat) {
                os << "[";
                for (std::size_t i = 0; i < j.size(); ++i) {
                    if (i) os << ", ";
                    write_json(os, j[i], indent, depth + 1);
                }
                os << "]";
                return;
            }
            os << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) os << ",\n";
                os << pad;
                write_json(os, j[i], indent, depth + 1);
            }
            os << "\n" << pad_close << "]";
            return;
        }
        case json::value_t::number_float: {
            const double x = j.get<double>();
            if (std::isfinite(x)) os << fmt17(x);
            else os << "null";
            return;
        }
        default:
            os << j.dump();
    }
}
}  // namespace detail

// JSON text with every float printed through fmt17.
inline std::string dump_json(const json& j, int indent = 2) {
    std::ostringstream os;
    detail::write_json(os, j, indent, 0);
    os << "\n";
    return os.str();
}

}  // namespace ats
