#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "segflow/diagnostics.hpp"
#include "segflow/transport.hpp"

namespace segflow {

// Initial noises for one seed: n draws of N(0, I_d) from mt19937_64(seed).
inline std::vector<State> initial_noises(std::uint64_t seed, Eigen::Index d, std::size_t n) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<State> out(n, State(d));
    for (auto& x : out) {
        for (Eigen::Index i = 0; i < d; ++i) x(i) = normal(rng);
    }
    return out;
}

// NLL of the segment midpoint under the target at the averaged condition.
inline double midpoint_nll(const GaussianMixtureTarget& target, const Condition& ca,
                           const Condition& cb, const Segment& seg) {
    return plausibility(target, interpolate_condition(ca, cb, 0.5), seg.midpoint());
}

struct TransportMetrics {
    double final_norm = 0.0;
    double midpoint_nll = 0.0;
    double kl_proxy = 0.0;
};

inline constexpr std::size_t kEvaluationPoints = 8;

// One joint run scored three ways. The KL proxy compares points on the final
// segment with independently sampled trajectories under the interpolated
// conditions, on a fixed uniform evaluation grid.
template <VelocityField F>
TransportMetrics evaluate_transport(const F& field, const GaussianMixtureTarget& target,
                                    const Condition& ca, const Condition& cb,
                                    const TransportConfig& cfg, const State& x0, double kl_sigma) {
    const TrajectoryLog log = run_joint(field, ca, cb, cfg, x0);
    TransportMetrics m;
    m.final_norm = log.final_norm();
    m.midpoint_nll = midpoint_nll(target, ca, cb, log.final_segment);
    std::vector<RegressionPoint> truth, approx;
    for (const auto& g : alpha_grid(AlphaDensity::uniform(), kEvaluationPoints)) {
        const Condition c = interpolate_condition(ca, cb, g.alpha);
        truth.push_back({g.alpha, g.weight, sample_base(field, c, cfg.grid, x0).back()});
        approx.push_back({g.alpha, g.weight, segment_point(log.final_segment, g.alpha)});
    }
    m.kl_proxy = kl_proxy(truth, approx, kl_sigma);
    return m;
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope: need >= 2 pairs");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0 && y[i] > 0.0)) throw DomainError("loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

struct ResidualScaling {
    std::vector<double> dts;
    std::vector<double> max_residuals;
    double slope = 0.0;
};

// Max norm-derivative residual of the configured run at n, 2n, 4n steps (the
// weight schedule is rebuilt for each grid by the caller-supplied factory).
template <VelocityField F, class WeightsFor>
ResidualScaling residual_scaling(const F& field, const Condition& ca, const Condition& cb,
                                 TransportConfig cfg, const State& x0, std::size_t n,
                                 WeightsFor weights_for) {
    ResidualScaling out;
    for (std::size_t steps : {n, 2 * n, 4 * n}) {
        cfg.grid = TimeGrid::uniform(steps);
        cfg.weights = weights_for(steps);
        const TrajectoryLog log = run_joint(field, ca, cb, cfg, x0);
        out.dts.push_back(1.0 / static_cast<double>(steps));
        out.max_residuals.push_back(norm_derivative_residual(log).max_abs);
    }
    out.slope = loglog_slope(out.dts, out.max_residuals);
    return out;
}

struct OracleProbe {
    State x;
    double t = 0.0;
    Condition c;
    State analytic;
    State estimate;
    State stderr_;
    double ess = 0.0;
    bool reliable = true;
    bool agrees = false;
};

inline constexpr double kProbeBulk = 1.5;

// Compares gmm_velocity with the Monte Carlo oracle at probes in the bulk of
// p_t: c ~ U[-r, r]^m, t ~ U[0.1, 0.6], x = (1 - t) x0 + t eps with
// x0 = mean_j(c) + sqrt(var_j) z, every coordinate of z and eps drawn from a
// standard normal truncated to [-1.5, 1.5]. Out in the tails the kernel oracle
// has too few effective samples to say anything.
inline std::vector<OracleProbe> oracle_probes(const GaussianMixtureTarget& target,
                                              std::size_t probes, std::size_t samples,
                                              double bandwidth, double condition_range,
                                              std::uint64_t seed, double rel_tol,
                                              double stderr_mult) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto bulk = [&] {
        for (;;) {
            const double z = normal(rng);
            if (std::abs(z) <= kProbeBulk) return z;
        }
    };
    const Eigen::Index d = target.dim();
    std::vector<OracleProbe> out;
    for (std::size_t i = 0; i < probes; ++i) {
        OracleProbe p;
        p.c.resize(target.condition_dim());
        for (Eigen::Index k = 0; k < p.c.size(); ++k) p.c(k) = condition_range * (2.0 * uni(rng) - 1.0);
        p.t = 0.1 + 0.5 * uni(rng);
        double r = uni(rng);
        std::size_t j = 0;
        while (j + 1 < target.components() && r >= target.weights()(static_cast<Eigen::Index>(j))) {
            r -= target.weights()(static_cast<Eigen::Index>(j));
            ++j;
        }
        const State mean = target.mean(j, p.c);
        p.x.resize(d);
        for (Eigen::Index k = 0; k < d; ++k) {
            const double x0 = mean(k) + std::sqrt(target.variances()[j](k)) * bulk();
            p.x(k) = (1.0 - p.t) * x0 + p.t * bulk();
        }
        p.analytic = gmm_velocity(target, p.x, p.t, p.c);
        try {
            const McEstimate mc = mc_velocity_oracle(target, p.x, p.t, p.c, samples, bandwidth,
                                                     rng());
            p.estimate = mc.estimate;
            p.stderr_ = mc.stderr_;
            p.ess = mc.ess;
            p.agrees = true;
            for (Eigen::Index k = 0; k < p.x.size(); ++k) {
                const double tol =
                    std::max(stderr_mult * mc.stderr_(k), rel_tol * std::abs(p.analytic(k)));
                if (!(std::abs(mc.estimate(k) - p.analytic(k)) <= tol)) p.agrees = false;
            }
        } catch (const UnreliableEstimateError&) {
            p.reliable = false;
        }
        out.push_back(p);
    }
    return out;
}

struct KlLeadingOrder {
    double proxy = 0.0;
    double numerical = 0.0;
    double ratio = 0.0;
    double proxy_sigma2 = 0.0;       // proxy * sigma^2
    double proxy_sigma2_wide = 0.0;  // the same at 10 sigma
};

// 1D segment [0, 1] with alpha atoms {0.25, 0.75} (mass 1/2 each) against the
// segment with both endpoints displaced by 0.1 in opposite directions.
inline KlLeadingOrder kl_leading_order(double sigma, std::size_t resolution) {
    const Segment truth_seg(State::Constant(1, 0.0), State::Constant(1, 1.0));
    const Segment approx_seg(State::Constant(1, -0.1), State::Constant(1, 1.1));
    std::vector<RegressionPoint> truth, approx;
    for (double a : {0.25, 0.75}) {
        truth.push_back({a, 0.5, segment_point(truth_seg, a)});
        approx.push_back({a, 0.5, segment_point(approx_seg, a)});
    }
    KlLeadingOrder out;
    out.proxy = kl_proxy(truth, approx, sigma);
    out.numerical = numerical_kl(truth, approx, sigma, resolution);
    out.ratio = out.proxy / out.numerical;
    out.proxy_sigma2 = out.proxy * sigma * sigma;
    out.proxy_sigma2_wide = kl_proxy(truth, approx, 10.0 * sigma) * 100.0 * sigma * sigma;
    return out;
}

// RMS difference between a field and the exact target field on a 10 x 10
// grid: t in {0.05, ..., 0.95}, x = (1 - t) mean + z * s_t along the diagonal
// with z in [-2, 2], at condition c.
template <VelocityField F>
double field_rms_error(const F& field, const GaussianMixtureTarget& target, const Condition& c) {
    State mean = State::Zero(target.dim());
    double spread = 0.0;
    for (std::size_t j = 0; j < target.components(); ++j) {
        const double w = target.weights()(static_cast<Eigen::Index>(j));
        mean += w * target.mean(j, c);
    }
    for (std::size_t j = 0; j < target.components(); ++j) {
        const double w = target.weights()(static_cast<Eigen::Index>(j));
        spread += w * ((target.mean(j, c) - mean).squaredNorm() + target.variances()[j].sum()) /
                  static_cast<double>(target.dim());
    }
    double acc = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < 10; ++i) {
        const double t = 0.05 + 0.1 * i;
        const double s = std::sqrt((1.0 - t) * (1.0 - t) * spread + t * t);
        for (int k = 0; k < 10; ++k) {
            const double z = -2.0 + 4.0 * k / 9.0;
            const State x = (1.0 - t) * mean + State::Constant(target.dim(), z * s);
            acc += (State(field(x, t, c)) - gmm_velocity(target, x, t, c)).squaredNorm();
            ++count;
        }
    }
    return std::sqrt(acc / static_cast<double>(count * static_cast<std::size_t>(target.dim())));
}

}  // namespace segflow
