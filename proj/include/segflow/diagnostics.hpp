#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include "segflow/mlp.hpp"
#include "segflow/transport.hpp"

namespace segflow {

struct StepResidual {
    std::size_t step = 0;
    double residual = 0.0;
};

struct NormResiduals {
    std::vector<StepResidual> steps;  // steps whose starting norm is >= min_norm
    double max_abs = 0.0;

    bool empty() const { return steps.empty(); }
};

// Compares the observed rate of change of the segment norm with the
// instantaneous one predicted from the applied endpoint velocities:
//   residual = (|s(t2)| - |s(t1)|) / (t2 - t1) - <vb - va, xb - xa> / |xb - xa|
// Steps that start from a (near-)collapsed segment are skipped.
inline NormResiduals norm_derivative_residual(const TrajectoryLog& log, double min_norm = 1e-8) {
    if (log.records.size() < 2) {
        throw ContractError("norm_derivative_residual: need at least 2 logged steps");
    }
    NormResiduals out;
    for (std::size_t i = 0; i < log.records.size(); ++i) {
        const auto& r = log.records[i];
        if (r.norm < min_norm) continue;
        const double next =
            i + 1 < log.records.size() ? log.records[i + 1].norm : log.final_norm();
        const double predicted = (r.applied_vb - r.applied_va).dot(r.xb - r.xa) / r.norm;
        const double res = (next - r.norm) / (r.t2 - r.t1) - predicted;
        out.steps.push_back({r.step, res});
        out.max_abs = std::max(out.max_abs, std::abs(res));
    }
    return out;
}

namespace detail {

inline void require_matched(const std::vector<RegressionPoint>& a,
                            const std::vector<RegressionPoint>& b, const char* what) {
    if (a.size() != b.size()) throw ContractError(std::string(what) + ": grids differ in size");
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].alpha != b[i].alpha || a[i].weight != b[i].weight) {
            throw ContractError(std::string(what) + ": alpha grids differ at index " +
                                std::to_string(i));
        }
        require_same_dim(a[i].value.size(), b[i].value.size(), what);
    }
}

}  // namespace detail

// Leading-order KL between the sigma-smoothed point clouds:
//   (1 / 2 sigma^2) * sum_i p_i ||x_true,i - x_approx,i||^2
inline double kl_proxy(const std::vector<RegressionPoint>& truth,
                       const std::vector<RegressionPoint>& approx, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("kl_proxy: sigma must be positive");
    detail::require_matched(truth, approx, "kl_proxy");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        acc += truth[i].weight * (truth[i].value - approx[i].value).squaredNorm();
    }
    return acc / (2.0 * sigma * sigma);
}

struct KLProbeConfig {
    double sigma = 1e-2;
    std::size_t resolution = 20001;
};

inline constexpr double kQuadratureHalfWidth = 10.0;  // in units of sigma

// KL(p_true || p_approx) between the 1D mixtures sum_i p_i N(x_i, sigma^2) by
// composite Simpson quadrature over [min - 10 sigma, max + 10 sigma].
inline double numerical_kl(const std::vector<RegressionPoint>& truth,
                           const std::vector<RegressionPoint>& approx, double sigma,
                           std::size_t resolution) {
    if (!(sigma > 0.0)) throw DomainError("numerical_kl: sigma must be positive");
    detail::require_matched(truth, approx, "numerical_kl");
    if (truth.empty()) throw ContractError("numerical_kl: no points");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].value.size() != 1) throw ContractError("numerical_kl: 1D states only");
        for (double v : {truth[i].value(0), approx[i].value(0)}) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        total += truth[i].weight;
    }
    lo -= kQuadratureHalfWidth * sigma;
    hi += kQuadratureHalfWidth * sigma;
    std::size_t nodes = std::max<std::size_t>(resolution, 3);
    if (nodes % 2 == 0) ++nodes;
    const double h = (hi - lo) / static_cast<double>(nodes - 1);
    if (h > sigma / 20.0) {
        throw PrecisionError("numerical_kl: resolution " + std::to_string(resolution) +
                             " gives spacing " + format_real(h) + " > sigma/20");
    }

    const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
    auto log_density = [&](const std::vector<RegressionPoint>& pts, double x) {
        Eigen::VectorXd terms(static_cast<Eigen::Index>(pts.size()));
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double z = (x - pts[i].value(0)) / sigma;
            terms(static_cast<Eigen::Index>(i)) =
                (pts[i].weight > 0.0 ? std::log(pts[i].weight / total)
                                     : -std::numeric_limits<double>::infinity()) +
                log_norm - 0.5 * z * z;
        }
        return detail::log_sum_exp(terms);
    };

    double acc = 0.0;
    for (std::size_t i = 0; i < nodes; ++i) {
        const double x = lo + h * static_cast<double>(i);
        const double lp = log_density(truth, x);
        const double lq = log_density(approx, x);
        const double p = std::exp(lp);
        const double f = p > 0.0 ? p * (lp - lq) : 0.0;
        const double coef = (i == 0 || i + 1 == nodes) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        acc += coef * f;
    }
    return acc * h / 3.0;
}

// Exact negative log-likelihood of x under target(c). Point components only
// contribute when x sits exactly on them (density +inf).
inline double plausibility(const GaussianMixtureTarget& target, const Condition& c,
                           const State& x) {
    require_same_dim(x.size(), target.dim(), "plausibility state");
    const std::size_t n = target.components();
    Eigen::VectorXd ll(static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        const Eigen::ArrayXd var = target.variances()[j].array();
        const Eigen::ArrayXd r = x.array() - target.mean(j, c).array();
        const double w = target.weights()(static_cast<Eigen::Index>(j));
        double l = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < var.size(); ++k) {
            if (var(k) == 0.0) {
                l += r(k) == 0.0 ? std::numeric_limits<double>::infinity()
                                 : -std::numeric_limits<double>::infinity();
            } else {
                l -= 0.5 * (r(k) * r(k) / var(k) + std::log(2.0 * std::numbers::pi * var(k)));
            }
        }
        ll(static_cast<Eigen::Index>(j)) = l;
    }
    return -detail::log_sum_exp(ll);
}

// Largest relative disagreement between the backprop gradient of fm_loss and
// central finite differences with step h. Coordinates whose magnitudes are
// both below abs_floor are compared in absolute terms instead.
struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool passed = false;
};

inline GradCheck gradient_check(const MLPField& field, const FmBatch& batch, double h = 1e-5,
                                double rel_tol = 1e-4, double abs_floor = 1e-6) {
    const Eigen::VectorXd analytic = fm_gradient(field, batch).gradient;
    MLPField probe = field;
    Eigen::VectorXd params = field.parameters();
    GradCheck out;
    out.passed = true;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double keep = params(i);
        params(i) = keep + h;
        probe.set_parameters(params);
        const double up = fm_loss(probe, batch);
        params(i) = keep - h;
        probe.set_parameters(params);
        const double down = fm_loss(probe, batch);
        params(i) = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(numeric - analytic(i));
        const double scale = std::max(std::abs(numeric), std::abs(analytic(i)));
        out.max_abs_error = std::max(out.max_abs_error, err);
        if (scale < abs_floor) {
            if (err > abs_floor) out.passed = false;
        } else {
            out.max_rel_error = std::max(out.max_rel_error, err / scale);
            if (err / scale > rel_tol) out.passed = false;
        }
    }
    return out;
}

}  // namespace segflow
