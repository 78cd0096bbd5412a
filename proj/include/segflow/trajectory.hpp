#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "segflow/density.hpp"
#include "segflow/format.hpp"
#include "segflow/segment.hpp"

namespace segflow {

// One consumed grid step. States are taken at t1 (before the update); the
// applied velocities are the smoothed ones that moved the endpoints.
struct StepRecord {
    std::size_t step = 0;
    double t1 = 0.0;
    double t2 = 0.0;
    State xa;
    State xb;
    State va;  // parameter velocities before smoothing
    State vb;
    std::optional<State> anchor;
    State applied_va;
    State applied_vb;
    double w = 0.0;
    AlphaGrid alphas;
    double norm = 0.0;  // ||xb - xa|| of the stored states
};

struct TrajectoryLog {
    std::vector<StepRecord> records;
    Segment final_segment;

    double final_norm() const { return final_segment.norm(); }

    // Segment norm after each step, starting with the initial one.
    std::vector<double> norms() const {
        std::vector<double> out;
        out.reserve(records.size() + 1);
        for (const auto& r : records) out.push_back(r.norm);
        out.push_back(final_norm());
        return out;
    }
};

// CSV: header `step,t1,t2,norm,w` followed by xa_i, xb_i, va_i, vb_i (applied
// velocities), raw_va_i, raw_vb_i and anchor_i columns for i < d. A missing
// anchor is written as empty fields.
inline void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log) {
    const Eigen::Index d = log.final_segment.dim();
    os << "step,t1,t2,norm,w";
    for (const char* prefix : {"xa", "xb", "va", "vb", "raw_va", "raw_vb", "anchor"}) {
        for (Eigen::Index i = 0; i < d; ++i) os << ',' << prefix << '_' << i;
    }
    os << '\n';
    for (const auto& r : log.records) {
        os << r.step << ',' << format_real(r.t1) << ',' << format_real(r.t2) << ','
           << format_real(r.norm) << ',' << format_real(r.w);
        for (const State* v : {&r.xa, &r.xb, &r.applied_va, &r.applied_vb, &r.va, &r.vb}) {
            os << ',' << format_vector(*v);
        }
        if (r.anchor) {
            os << ',' << format_vector(*r.anchor);
        } else {
            for (Eigen::Index i = 0; i < d; ++i) os << ',';
        }
        os << '\n';
    }
}

inline nlohmann::ordered_json vector_json(const Eigen::VectorXd& v) {
    auto arr = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

inline nlohmann::ordered_json trajectory_summary(const TrajectoryLog& log) {
    nlohmann::ordered_json j;
    j["final_a"] = vector_json(log.final_segment.a);
    j["final_b"] = vector_json(log.final_segment.b);
    j["final_norm"] = log.final_norm();
    j["steps"] = log.records.size();
    j["norms"] = log.norms();
    return j;
}

}  // namespace segflow
