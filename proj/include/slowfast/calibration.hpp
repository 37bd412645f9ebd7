#pragma once

#include "slowfast/common.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace slowfast {

/// Long-run mean and standard deviation of the uncoupled Lorenz-96 model at
/// forcing f, pooled over all coordinates (legitimate by translational
/// invariance). beta uses the population (1/T) normalization.
struct CalibrationRecord {
    double f = 0.0;
    int n = 0;
    double dt = 0.0;
    double t_total = 0.0;
    double t_spinup = 0.0;
    std::uint64_t seed = 0;
    double mean = 0.0;
    double beta = 0.0;
    /// Set when beta fell below 1e-8: the run sat on the uniform fixed point.
    bool fixed_point = false;
};

inline bool same_cache_key(const CalibrationRecord& a, const CalibrationRecord& b) {
    return a.f == b.f && a.n == b.n && a.dt == b.dt && a.t_total == b.t_total && a.seed == b.seed;
}

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// One record per line:
///   f n dt t_total t_spinup seed mean beta flags
/// space-separated decimal with 17 significant digits; flags is `ok` or
/// `fixed_point`.
inline std::string format_calibration_line(const CalibrationRecord& r) {
    std::ostringstream os;
    os << detail::fmt17(r.f) << ' ' << r.n << ' ' << detail::fmt17(r.dt) << ' '
       << detail::fmt17(r.t_total) << ' ' << detail::fmt17(r.t_spinup) << ' ' << r.seed << ' '
       << detail::fmt17(r.mean) << ' ' << detail::fmt17(r.beta) << ' '
       << (r.fixed_point ? "fixed_point" : "ok");
    return os.str();
}

inline CalibrationRecord parse_calibration_line(const std::string& line, std::size_t line_no) {
    std::istringstream is(line);
    CalibrationRecord r;
    std::string flags;
    if (!(is >> r.f >> r.n >> r.dt >> r.t_total >> r.t_spinup >> r.seed >> r.mean >> r.beta >> flags)) {
        throw ParseError(line_no, "malformed calibration record: '" + line + "'");
    }
    std::string extra;
    if (is >> extra) throw ParseError(line_no, "trailing fields in calibration record");
    if (flags == "ok") {
        r.fixed_point = false;
    } else if (flags == "fixed_point") {
        r.fixed_point = true;
    } else {
        throw ParseError(line_no, "unknown flags token '" + flags + "'");
    }
    return r;
}

/// Plain-text calibration cache. Stores overwrite any existing record with
/// the same (f, n, dt, t_total, seed) key; loads by (f, n) return the last
/// matching record and never recompute.
class CalibrationCache {
public:
    explicit CalibrationCache(std::filesystem::path path) : path_(std::move(path)) {}

    const std::filesystem::path& path() const { return path_; }

    std::vector<CalibrationRecord> read_all() const {
        std::vector<CalibrationRecord> records;
        std::ifstream in(path_);
        if (!in) return records;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            records.push_back(parse_calibration_line(line, line_no));
        }
        return records;
    }

    void store(const CalibrationRecord& record) const {
        auto records = read_all();
        bool replaced = false;
        for (auto& r : records) {
            if (same_cache_key(r, record)) {
                r = record;
                replaced = true;
            }
        }
        if (!replaced) records.push_back(record);
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        std::ofstream out(path_, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write calibration cache: " + path_.string());
        for (const auto& r : records) out << format_calibration_line(r) << '\n';
    }

    std::optional<CalibrationRecord> load(double f, int n) const {
        std::optional<CalibrationRecord> found;
        for (const auto& r : read_all()) {
            if (r.f == f && r.n == n) found = r;
        }
        return found;
    }

private:
    std::filesystem::path path_;
};

}  // namespace slowfast
