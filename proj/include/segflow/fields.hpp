#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "segflow/types.hpp"

namespace segflow {

// Conditional velocity field v(x, t, c). Implementations must be pure.
template <class F>
concept VelocityField = requires(const F& f, const State& x, double t, const Condition& c) {
    { f(x, t, c) } -> std::convertible_to<Eigen::VectorXd>;
};

// Type-erased field for code that picks the field at runtime (CLI).
using AnyField = std::function<Eigen::VectorXd(const State&, double, const Condition&)>;

inline constexpr double kDefaultTMin = 1e-3;

// Diagonal Gaussian mixture whose component means move affinely with the
// condition: mean_j(c) = means[j] + maps[j] * c. Either one map shared by
// every component or one map per component. Zero variance entries give point
// components.
class GaussianMixtureTarget {
public:
    GaussianMixtureTarget() = default;

    GaussianMixtureTarget(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                          std::vector<Eigen::VectorXd> variances,
                          std::vector<Eigen::MatrixXd> condition_maps)
        : weights_(std::move(weights)),
          means_(std::move(means)),
          variances_(std::move(variances)),
          maps_(std::move(condition_maps)) {
        const auto j = static_cast<std::size_t>(weights_.size());
        if (j == 0) throw ConfigError("GaussianMixtureTarget: no components");
        if (means_.size() != j || variances_.size() != j) {
            throw ConfigError("GaussianMixtureTarget: weights, means and variances disagree on "
                              "the component count");
        }
        if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
            throw ConfigError("GaussianMixtureTarget: weights must be finite and >= 0");
        }
        if (std::abs(weights_.sum() - 1.0) > 1e-9) {
            throw ConfigError("GaussianMixtureTarget: weights sum to " +
                              std::to_string(weights_.sum()) + ", expected 1");
        }
        const auto d = means_.front().size();
        if (d < 1) throw ConfigError("GaussianMixtureTarget: dimension must be >= 1");
        for (std::size_t i = 0; i < j; ++i) {
            if (means_[i].size() != d || variances_[i].size() != d) {
                throw ConfigError("GaussianMixtureTarget: component " + std::to_string(i) +
                                  " has the wrong dimension");
            }
            if (!means_[i].allFinite() || !variances_[i].allFinite() ||
                (variances_[i].array() < 0.0).any()) {
                throw ConfigError("GaussianMixtureTarget: component " + std::to_string(i) +
                                  " has invalid mean or variance");
            }
        }
        if (maps_.empty()) maps_.push_back(Eigen::MatrixXd::Zero(d, 0));
        if (maps_.size() != 1 && maps_.size() != j) {
            throw ConfigError("GaussianMixtureTarget: need 1 shared condition map or one per "
                              "component");
        }
        for (const auto& m : maps_) {
            if (m.rows() != d || m.cols() != maps_.front().cols() || !m.allFinite()) {
                throw ConfigError("GaussianMixtureTarget: condition maps must be finite d x m "
                                  "matrices of equal shape");
            }
        }
    }

    // Same target with one shared map (the common case).
    static GaussianMixtureTarget shared(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
                                        std::vector<Eigen::VectorXd> variances,
                                        Eigen::MatrixXd condition_map) {
        return {std::move(weights), std::move(means), std::move(variances),
                std::vector<Eigen::MatrixXd>{std::move(condition_map)}};
    }

    std::size_t components() const { return static_cast<std::size_t>(weights_.size()); }
    Eigen::Index dim() const { return means_.front().size(); }
    Eigen::Index condition_dim() const { return maps_.front().cols(); }

    const Eigen::VectorXd& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& means() const { return means_; }
    const std::vector<Eigen::VectorXd>& variances() const { return variances_; }
    const std::vector<Eigen::MatrixXd>& condition_maps() const { return maps_; }
    bool shared_map() const { return maps_.size() == 1; }

    const Eigen::MatrixXd& condition_map(std::size_t j) const {
        return maps_.size() == 1 ? maps_.front() : maps_.at(j);
    }

    Eigen::VectorXd mean(std::size_t j, const Condition& c) const {
        require_same_dim(c.size(), condition_dim(), "GaussianMixtureTarget condition");
        if (c.size() == 0) return means_[j];
        return means_[j] + condition_map(j) * c;
    }

private:
    Eigen::VectorXd weights_;
    std::vector<Eigen::VectorXd> means_;
    std::vector<Eigen::VectorXd> variances_;
    std::vector<Eigen::MatrixXd> maps_;
};

namespace detail {

inline double log_sum_exp(const Eigen::VectorXd& v) {
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace detail

// Exact marginal velocity E[eps - x0 | x_t = x] for x_t = (1-t) x0 + t eps,
// x0 ~ target(c), eps ~ N(0, I).
//
// Given component j, x_t is Gaussian with mean (1-t) m_j and variance
// s^2 = (1-t)^2 sigma_j^2 + t^2 (per coordinate), and with r = x - (1-t) m_j
//   E[x0  | x, j] = m_j + (1-t) sigma_j^2 / s^2 * r
//   E[eps | x, j] = t / s^2 * r
// The result is the posterior-weighted average over components.
inline Eigen::VectorXd gmm_velocity(const GaussianMixtureTarget& target, const State& x, double t,
                                    const Condition& c, double t_min = kDefaultTMin) {
    if (!(t >= t_min && t <= 1.0)) {
        throw DomainError("gmm_velocity: t=" + std::to_string(t) + " outside [" +
                          std::to_string(t_min) + ", 1]");
    }
    require_same_dim(x.size(), target.dim(), "gmm_velocity state");
    const std::size_t n = target.components();
    const double u = 1.0 - t;

    Eigen::VectorXd log_post(static_cast<Eigen::Index>(n));
    std::vector<Eigen::VectorXd> per_component(n);
    for (std::size_t j = 0; j < n; ++j) {
        const Eigen::VectorXd m = target.mean(j, c);
        const Eigen::ArrayXd s2 = u * u * target.variances()[j].array() + t * t;
        const Eigen::ArrayXd r = x.array() - u * m.array();
        const double w = target.weights()(static_cast<Eigen::Index>(j));
        log_post(static_cast<Eigen::Index>(j)) =
            (w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity()) -
            0.5 * ((r * r / s2).sum() + (s2 * (2.0 * std::numbers::pi)).log().sum());
        per_component[j] =
            ((t - u * target.variances()[j].array()) / s2 * r - m.array()).matrix();
    }
    const double norm = detail::log_sum_exp(log_post);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
    for (std::size_t j = 0; j < n; ++j) {
        const double p = std::exp(log_post(static_cast<Eigen::Index>(j)) - norm);
        if (p > 0.0) v += p * per_component[j];
    }
    return v;
}

// VelocityField adapter around gmm_velocity.
struct GmmField {
    GaussianMixtureTarget target;
    double t_min = kDefaultTMin;

    Eigen::VectorXd operator()(const State& x, double t, const Condition& c) const {
        return gmm_velocity(target, x, t, c, t_min);
    }
};

struct McEstimate {
    Eigen::VectorXd estimate;
    Eigen::VectorXd stderr_;
    double ess = 0.0;
};

// Kernel-conditioned Monte Carlo estimate of E[eps - x0 | x_t ~= x]: draws n
// pairs (x0, eps), weights each by exp(-|x_t - x|^2 / 2h^2) and returns the
// self-normalized mean with its delta-method standard error. Independent of
// the closed form above; biased by O(h^2).
inline McEstimate mc_velocity_oracle(const GaussianMixtureTarget& target, const State& x,
                                     double t, const Condition& c, std::size_t n, double h,
                                     std::uint64_t seed) {
    if (n < 10000) throw DomainError("mc_velocity_oracle: need n >= 1e4 samples");
    if (!(h > 0.0)) throw DomainError("mc_velocity_oracle: bandwidth must be positive");
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("mc_velocity_oracle: t outside [0,1]");
    require_same_dim(x.size(), target.dim(), "mc_velocity_oracle state");

    const auto d = target.dim();
    const std::size_t n_comp = target.components();
    std::vector<Eigen::VectorXd> means(n_comp);
    std::vector<Eigen::VectorXd> stddev(n_comp);
    std::vector<double> cumulative(n_comp);
    double acc = 0.0;
    for (std::size_t j = 0; j < n_comp; ++j) {
        means[j] = target.mean(j, c);
        stddev[j] = target.variances()[j].array().sqrt().matrix();
        acc += target.weights()(static_cast<Eigen::Index>(j));
        cumulative[j] = acc;
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    Eigen::MatrixXd y(d, static_cast<Eigen::Index>(n));
    Eigen::VectorXd logw(static_cast<Eigen::Index>(n));
    Eigen::VectorXd x0(d);
    Eigen::VectorXd eps(d);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = uni(rng) * acc;
        std::size_t j = 0;
        while (j + 1 < n_comp && r >= cumulative[j]) ++j;
        for (Eigen::Index k = 0; k < d; ++k) x0(k) = means[j](k) + stddev[j](k) * normal(rng);
        for (Eigen::Index k = 0; k < d; ++k) eps(k) = normal(rng);
        const Eigen::VectorXd xt = (1.0 - t) * x0 + t * eps;
        const auto col = static_cast<Eigen::Index>(i);
        logw(col) = -(xt - x).squaredNorm() / (2.0 * h * h);
        y.col(col) = eps - x0;
    }

    const Eigen::ArrayXd w = (logw.array() - logw.maxCoeff()).exp();
    const double sw = w.sum();
    const double ess = sw * sw / (w * w).sum();
    if (!(ess >= 100.0)) {
        throw UnreliableEstimateError("mc_velocity_oracle: effective sample size " +
                                      std::to_string(ess) + " < 100");
    }
    McEstimate out;
    out.ess = ess;
    out.estimate = (y * w.matrix()) / sw;
    const Eigen::ArrayXXd centered = y.colwise() - out.estimate;
    out.stderr_ = ((centered.square().rowwise() * (w * w).transpose()).rowwise().sum().sqrt() / sw)
                      .matrix();
    return out;
}

}  // namespace segflow
