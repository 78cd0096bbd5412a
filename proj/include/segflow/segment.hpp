#pragma once

#include "segflow/types.hpp"

namespace segflow {

// Line segment [a, b] in sample space: the support of the transported
// distribution of interpolated samples.
struct Segment {
    State a;
    State b;

    Segment() = default;
    Segment(State a_, State b_) : a(std::move(a_)), b(std::move(b_)) {
        require_same_dim(a.size(), b.size(), "Segment endpoints");
    }

    Eigen::Index dim() const { return a.size(); }

    // ||b - a||_2; exactly zero iff the endpoints coincide.
    double norm() const { return (b - a).stableNorm(); }

    State midpoint() const { return 0.5 * (a + b); }
};

inline State segment_point(const Segment& seg, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw DomainError("segment_point: alpha=" + std::to_string(alpha) + " outside [0,1]");
    }
    return lerp(seg.a, seg.b, alpha);
}

inline Condition interpolate_condition(const Condition& ca, const Condition& cb, double alpha) {
    require_same_dim(ca.size(), cb.size(), "interpolate_condition");
    return lerp(ca, cb, alpha);
}

}  // namespace segflow
