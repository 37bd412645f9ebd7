#pragma once

#include "slowfast/common.hpp"
#include "slowfast/response.hpp"
#include "slowfast/stats.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace slowfast {

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path,
                              const std::vector<std::string>& meta) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& line : meta) out << "# " << line << '\n';
    return out;
}

inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_divergence_csv(const std::filesystem::path& path, const DivergenceProfile& prof,
                                 std::vector<std::string> meta = {}) {
    meta.push_back("delta=" + detail::csv_num(prof.delta));
    meta.push_back("window=" + detail::csv_num(prof.window));
    meta.push_back("excluded_members=" + std::to_string(prof.excluded));
    auto out = detail::open_csv(path, meta);
    out << "t,mean_divergence,n_members\n";
    for (Index k = 0; k < prof.t.size(); ++k)
        out << detail::csv_num(prof.t[k]) << ',' << detail::csv_num(prof.divergence[k]) << ','
            << prof.n_members << '\n';
}

inline void write_acf_csv(const std::filesystem::path& path, const AcfCurve& curve,
                          std::vector<std::string> meta = {}) {
    auto out = detail::open_csv(path, meta);
    out << "lag,value\n";
    for (Index k = 0; k < curve.lags.size(); ++k)
        out << detail::csv_num(curve.lags[k]) << ',' << detail::csv_num(curve.values[k]) << '\n';
}

inline void write_pdf_csv(const std::filesystem::path& path, const Histogram& hist,
                          std::vector<std::string> meta = {}) {
    auto out = detail::open_csv(path, meta);
    out << "bin_center,density\n";
    const Vector centers = hist.centers();
    for (Index k = 0; k < centers.size(); ++k)
        out << detail::csv_num(centers[k]) << ',' << detail::csv_num(hist.density[k]) << '\n';
}

struct MomentsRow {
    std::string channel_group;
    double mean = 0.0;
    double variance = 0.0;
};

inline void write_moments_csv(const std::filesystem::path& path,
                              const std::vector<MomentsRow>& rows,
                              std::vector<std::string> meta = {}) {
    auto out = detail::open_csv(path, meta);
    out << "channel_group,mean,variance\n";
    for (const auto& r : rows)
        out << r.channel_group << ',' << detail::csv_num(r.mean) << ','
            << detail::csv_num(r.variance) << '\n';
}

/// One row per lag: the lag value followed by the row-major matrix entries.
inline void write_response_curve_csv(const std::filesystem::path& path,
                                     const ResponseCurve& curve,
                                     std::vector<std::string> meta = {}) {
    meta.push_back("estimator=" + curve.estimator);
    if (!curve.mats.empty())
        meta.push_back("matrix_dim=" + std::to_string(curve.mats[0].rows()));
    auto out = detail::open_csv(path, meta);
    out << "lag";
    if (!curve.mats.empty()) {
        const Index n = curve.mats[0].rows();
        for (Index r = 0; r < n; ++r)
            for (Index c = 0; c < n; ++c) out << ",c_" << r << '_' << c;
    }
    out << '\n';
    for (Index k = 0; k < curve.n_lags(); ++k) {
        out << detail::csv_num(curve.lags[k]);
        const Matrix& m = curve.mats[k];
        for (Index r = 0; r < m.rows(); ++r)
            for (Index c = 0; c < m.cols(); ++c) out << ',' << detail::csv_num(m(r, c));
        out << '\n';
    }
}

inline void write_response_operator_csv(const std::filesystem::path& path,
                                        const ResponseOperator& op,
                                        std::vector<std::string> meta = {}) {
    meta.push_back("estimator=" + op.estimator);
    meta.push_back("quadrature=" + op.quadrature);
    meta.push_back("t_max=" + detail::csv_num(op.t_max));
    if (!op.provenance.empty()) meta.push_back("provenance=" + op.provenance);
    auto out = detail::open_csv(path, meta);
    for (Index r = 0; r < op.op.rows(); ++r) {
        for (Index c = 0; c < op.op.cols(); ++c) {
            if (c > 0) out << ',';
            out << detail::csv_num(op.op(r, c));
        }
        out << '\n';
    }
}

struct DiagnosticRow {
    double f_y = 0.0;
    double min_sym_eig_c = 0.0;
    double max_sym_eig_h = 0.0;
};

inline void write_diagnostic_csv(const std::filesystem::path& path,
                                 const std::vector<DiagnosticRow>& rows,
                                 std::vector<std::string> meta = {}) {
    auto out = detail::open_csv(path, meta);
    out << "F_y,min_sym_eig_C,max_sym_eig_H\n";
    for (const auto& r : rows)
        out << detail::csv_num(r.f_y) << ',' << detail::csv_num(r.min_sym_eig_c) << ','
            << detail::csv_num(r.max_sym_eig_h) << '\n';
}

/// Sampled trajectory: t plus the first n_cols coordinates per row.
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 Index n_cols, std::vector<std::string> meta = {}) {
    meta.push_back("dt_sample=" + detail::csv_num(traj.dt_sample));
    auto out = detail::open_csv(path, meta);
    out << "t";
    for (Index c = 0; c < n_cols; ++c) out << ",s_" << c;
    out << '\n';
    for (Index k = 0; k < traj.n_samples(); ++k) {
        out << detail::csv_num(traj.t_at(k));
        for (Index c = 0; c < n_cols; ++c) out << ',' << detail::csv_num(traj.states(c, k));
        out << '\n';
    }
}

}  // namespace slowfast
