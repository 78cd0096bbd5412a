#pragma once

#include <Eigen/Dense>

#include <string>

#include "segflow/errors.hpp"

namespace segflow {

// A point in the d-dimensional sample space (x_t, segment endpoints, noise).
using State = Eigen::VectorXd;
// Condition embedding of length m. Convex combinations of conditions are conditions.
using Condition = Eigen::VectorXd;

inline void require_finite(const Eigen::Ref<const Eigen::VectorXd>& v, const std::string& what) {
    if (!v.allFinite()) throw DomainError(what + " has non-finite entries");
}

inline void require_same_dim(Eigen::Index a, Eigen::Index b, const std::string& what) {
    if (a != b) {
        throw ContractError(what + ": dimension mismatch (" + std::to_string(a) + " vs " +
                            std::to_string(b) + ")");
    }
}

// (1-alpha)*a + alpha*b, written so that alpha=0 and alpha=1 reproduce the
// endpoints bitwise.
inline Eigen::VectorXd lerp(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double alpha) {
    if (alpha == 0.0) return a;
    if (alpha == 1.0) return b;
    return (1.0 - alpha) * a + alpha * b;
}

}  // namespace segflow
