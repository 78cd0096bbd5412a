#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "segflow/errors.hpp"

namespace segflow {

// Inference time grid, strictly decreasing inside [0,1]. Step i goes from
// times[i] to times[i+1], so every dt is negative.
class TimeGrid {
public:
    TimeGrid() = default;

    explicit TimeGrid(std::vector<double> times) : times_(std::move(times)) {
        if (times_.empty()) throw ConfigError("TimeGrid: no time points");
        for (std::size_t i = 0; i < times_.size(); ++i) {
            if (!(times_[i] >= 0.0 && times_[i] <= 1.0)) {
                throw ConfigError("TimeGrid: t=" + std::to_string(times_[i]) + " outside [0,1]");
            }
            if (i > 0 && !(times_[i] < times_[i - 1])) {
                throw ConfigError("TimeGrid: times must be strictly decreasing (index " +
                                  std::to_string(i) + ")");
            }
        }
    }

    // n equal steps from t=1 down to t=0.
    static TimeGrid uniform(std::size_t n_steps) {
        std::vector<double> t(n_steps + 1);
        for (std::size_t i = 0; i <= n_steps; ++i) {
            t[i] = 1.0 - static_cast<double>(i) / static_cast<double>(n_steps == 0 ? 1 : n_steps);
        }
        if (n_steps == 0) t.resize(1);
        return TimeGrid(std::move(t));
    }

    std::size_t steps() const { return times_.empty() ? 0 : times_.size() - 1; }
    double t1(std::size_t step) const { return times_.at(step); }
    double t2(std::size_t step) const { return times_.at(step + 1); }
    const std::vector<double>& times() const { return times_; }

private:
    std::vector<double> times_;
};

struct Breakpoint {
    std::size_t step = 0;  // weight applies from this step index on
    double weight = 0.0;
};

// Piecewise-constant smoothing weight w_t over step indices. Non-increasing
// unless constructed with allow_non_monotone (ablation experiments only).
class WeightSchedule {
public:
    WeightSchedule() : WeightSchedule(std::vector<Breakpoint>{{0, 0.0}}) {}

    explicit WeightSchedule(std::vector<Breakpoint> breakpoints, bool allow_non_monotone = false)
        : breakpoints_(std::move(breakpoints)) {
        if (breakpoints_.empty()) throw ConfigError("WeightSchedule: no breakpoints");
        std::stable_sort(breakpoints_.begin(), breakpoints_.end(),
                         [](const Breakpoint& l, const Breakpoint& r) { return l.step < r.step; });
        // a later entry for the same step wins
        std::vector<Breakpoint> unique;
        for (const auto& b : breakpoints_) {
            if (!unique.empty() && unique.back().step == b.step) {
                unique.back() = b;
            } else {
                unique.push_back(b);
            }
        }
        breakpoints_ = std::move(unique);
        if (breakpoints_.front().step != 0) {
            throw ConfigError("WeightSchedule: first breakpoint must start at step 0");
        }
        for (std::size_t i = 0; i < breakpoints_.size(); ++i) {
            const double w = breakpoints_[i].weight;
            if (!(w >= 0.0 && w <= 1.0)) {
                throw ConfigError("WeightSchedule: weight " + std::to_string(w) +
                                  " outside [0,1]");
            }
            if (i > 0 && w > breakpoints_[i - 1].weight) {
                monotone_ = false;
            }
        }
        if (!monotone_ && !allow_non_monotone) {
            throw ConfigError(
                "WeightSchedule: weights must be non-increasing (set allow_non_monotone "
                "for ablations)");
        }
    }

    static WeightSchedule constant(double w) { return WeightSchedule({{0, w}}); }

    // w = 1 before `cutoff`, 0 from `cutoff` on.
    static WeightSchedule hard_cutoff(std::size_t cutoff) {
        if (cutoff == 0) return constant(0.0);
        return WeightSchedule({{0, 1.0}, {cutoff, 0.0}});
    }

    double at(std::size_t step) const {
        double w = breakpoints_.front().weight;
        for (const auto& b : breakpoints_) {
            if (b.step > step) break;
            w = b.weight;
        }
        return w;
    }

    bool monotone() const { return monotone_; }
    const std::vector<Breakpoint>& breakpoints() const { return breakpoints_; }

private:
    std::vector<Breakpoint> breakpoints_;
    bool monotone_ = true;
};

// Grid length the preset step indices refer to.
inline constexpr std::size_t kPresetReferenceSteps = 28;

// Named w_t schedules. Thresholds are step indices on a 28-step grid and are
// rescaled to `n_steps`.
inline WeightSchedule weight_preset(const std::string& name, std::size_t n_steps) {
    std::vector<Breakpoint> ref;
    if (name == "paper-image") {
        ref = {{0, 0.7}, {7, 0.5}, {8, 0.4}, {9, 0.1}};
    } else if (name == "paper-video") {
        ref = {{0, 0.5}, {7, 0.4}, {8, 0.3}, {9, 0.1}};
    } else if (name == "paper-3d") {
        ref = {{0, 0.7}, {12, 0.05}};
    } else {
        throw ConfigError("unknown weight schedule preset '" + name + "'");
    }
    for (auto& b : ref) {
        b.step = static_cast<std::size_t>(
            std::llround(static_cast<double>(b.step) * static_cast<double>(n_steps) /
                         static_cast<double>(kPresetReferenceSteps)));
    }
    return WeightSchedule(std::move(ref));
}

}  // namespace segflow
