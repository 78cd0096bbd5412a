#pragma once

#include <cstdio>
#include <string>

#include <Eigen/Dense>

namespace segflow {

// Round-trip exact, locale independent, byte-stable decimal rendering.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string format_vector(const Eigen::VectorXd& v, char sep = ',') {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) out += sep;
        out += format_real(v(i));
    }
    return out;
}

}  // namespace segflow
