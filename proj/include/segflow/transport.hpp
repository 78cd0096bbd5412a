#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "segflow/density.hpp"
#include "segflow/fields.hpp"
#include "segflow/schedule.hpp"
#include "segflow/segment.hpp"
#include "segflow/trajectory.hpp"

namespace segflow {

inline constexpr double kDefaultDeltaMin = 1e-10;

// x + (t2 - t1) * v(x, t1, c).
template <VelocityField F>
State euler_step(const F& field, const State& x, double t1, double t2, const Condition& c,
                 std::size_t step = 0) {
    if (!(t2 <= t1)) {
        throw DomainError("euler_step: expected t2 <= t1, got t1=" + std::to_string(t1) +
                          ", t2=" + std::to_string(t2));
    }
    if (t2 == t1) return x;
    const Eigen::VectorXd v = field(x, t1, c);
    require_same_dim(v.size(), x.size(), "euler_step velocity");
    if (!v.allFinite()) {
        throw DivergenceError("non-finite velocity at t=" + std::to_string(t1), step);
    }
    return x + (t2 - t1) * v;
}

// Plain sampler: all states from x_init down the grid (steps + 1 entries).
template <VelocityField F>
std::vector<State> sample_base(const F& field, const Condition& c, const TimeGrid& grid,
                               const State& x_init) {
    std::vector<State> states{x_init};
    states.reserve(grid.steps() + 1);
    for (std::size_t s = 0; s < grid.steps(); ++s) {
        states.push_back(euler_step(field, states.back(), grid.t1(s), grid.t2(s), c, s));
    }
    return states;
}

struct RegressionPoint {
    double alpha = 0.0;
    double weight = 0.0;
    State value;
};

// Weighted least-squares line through the points: minimizes
//   sum_i p_i || (1 - alpha_i) a + alpha_i b - value_i ||^2
// via the 2x2 normal equations
//   a = (c11 d0 - c01 d1) / delta,   b = (c00 d1 - c01 d0) / delta
// with d0 = sum p_i (1 - alpha_i) value_i and d1 = sum p_i alpha_i value_i.
inline Segment regression_endpoints(const std::vector<RegressionPoint>& points,
                                    double delta_min = kDefaultDeltaMin) {
    if (points.empty()) throw ContractError("regression_endpoints: no points");
    AlphaGrid grid;
    grid.reserve(points.size());
    for (const auto& p : points) grid.push_back({p.alpha, p.weight});
    const Moments m = discrete_moments(grid);
    if (!(m.delta > delta_min)) {
        std::string alphas;
        for (const auto& g : grid) {
            alphas += (alphas.empty() ? "" : ", ") + format_real(g.alpha) + ":" +
                      format_real(g.weight);
        }
        throw DegenerateDensityError("regression_endpoints: delta=" + format_real(m.delta) +
                                     " <= " + format_real(delta_min) +
                                     " for alpha distribution {" + alphas + "}");
    }
    const Eigen::Index d = points.front().value.size();
    Eigen::VectorXd d0 = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd d1 = Eigen::VectorXd::Zero(d);
    for (const auto& p : points) {
        require_same_dim(p.value.size(), d, "regression_endpoints point");
        d0 += (p.weight * (1.0 - p.alpha)) * p.value;
        d1 += (p.weight * p.alpha) * p.value;
    }
    return Segment((m.c11 * d0 - m.c01 * d1) / m.delta, (m.c00 * d1 - m.c01 * d0) / m.delta);
}

struct JointStepResult {
    Segment next;
    State va;
    State vb;
};

// One joint update: move every grid point with its interpolated condition,
// refit the segment through the moved points, and report the endpoint
// velocities (new - old) / (t2 - t1).
template <VelocityField F>
JointStepResult joint_step(const F& field, const Segment& seg, const Condition& ca,
                           const Condition& cb, double t1, double t2, const AlphaGrid& grid,
                           double delta_min = kDefaultDeltaMin, std::size_t step = 0) {
    if (!(t1 > t2)) throw DomainError("joint_step: expected t1 > t2");
    std::vector<RegressionPoint> moved;
    moved.reserve(grid.size());
    for (const auto& g : grid) {
        const State x = segment_point(seg, g.alpha);
        const Condition c = interpolate_condition(ca, cb, g.alpha);
        moved.push_back({g.alpha, g.weight, euler_step(field, x, t1, t2, c, step)});
    }
    JointStepResult out;
    out.next = regression_endpoints(moved, delta_min);
    const double dt = t2 - t1;
    out.va = (out.next.a - seg.a) / dt;
    out.vb = (out.next.b - seg.b) / dt;
    return out;
}

template <VelocityField F>
JointStepResult joint_step(const F& field, const Segment& seg, const Condition& ca,
                           const Condition& cb, double t1, double t2, const AlphaDensity& p,
                           std::size_t k, double delta_min = kDefaultDeltaMin) {
    return joint_step(field, seg, ca, cb, t1, t2, alpha_grid(p, k), delta_min);
}

enum class AnchorMode { Midpoint, Average };

// Common velocity both endpoints are pulled toward. Midpoint mode queries the
// field at the segment midpoint under the averaged condition; average mode
// returns (va + vb) / 2.
template <VelocityField F>
State anchor_velocity(const F& field, const Segment& seg, double t, const Condition& ca,
                      const Condition& cb, AnchorMode mode, const State& va, const State& vb) {
    if (mode == AnchorMode::Average) {
        require_same_dim(va.size(), vb.size(), "anchor_velocity");
        return 0.5 * (va + vb);
    }
    return field(seg.midpoint(), t, interpolate_condition(ca, cb, 0.5));
}

inline std::pair<State, State> smooth_velocities(const State& va, const State& vb,
                                                 const State& anchor, double w) {
    if (!(w >= 0.0 && w <= 1.0)) {
        throw DomainError("smooth_velocities: w=" + std::to_string(w) + " outside [0,1]");
    }
    require_same_dim(va.size(), vb.size(), "smooth_velocities");
    require_same_dim(va.size(), anchor.size(), "smooth_velocities anchor");
    return {w * anchor + (1.0 - w) * va, w * anchor + (1.0 - w) * vb};
}

struct Estimator {
    enum class Kind { Grid, MonteCarlo };
    Kind kind = Kind::Grid;
    std::size_t samples = 0;  // Monte Carlo draws
    std::uint64_t seed = 0;

    static Estimator grid() { return {}; }
    static Estimator monte_carlo(std::size_t n, std::uint64_t seed) {
        return {Kind::MonteCarlo, n, seed};
    }
};

struct MuEstimate {
    State mu0;
    State mu1;
    Moments moments;  // coefficients matching the estimator's alpha measure
};

// Velocity-weighted integrals over the segment
//   mu0 = E_p[(1 - alpha) v(x(alpha), t, c(alpha))],  mu1 = E_p[alpha v(...)]
// estimated on an explicit weighted alpha grid.
template <VelocityField F>
MuEstimate integral_mu(const F& field, const Segment& seg, const Condition& ca,
                       const Condition& cb, double t, const AlphaGrid& grid) {
    MuEstimate out;
    out.mu0 = Eigen::VectorXd::Zero(seg.dim());
    out.mu1 = Eigen::VectorXd::Zero(seg.dim());
    for (const auto& g : grid) {
        const Eigen::VectorXd v =
            field(segment_point(seg, g.alpha), t, interpolate_condition(ca, cb, g.alpha));
        out.mu0 += (g.weight * (1.0 - g.alpha)) * v;
        out.mu1 += (g.weight * g.alpha) * v;
    }
    out.moments = discrete_moments(grid);
    return out;
}

// Draws alpha ~ p: a region by mass, then uniform inside a piece.
inline double sample_alpha(const AlphaDensity& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double r = uni(rng);
    for (const auto& a : p.atoms()) {
        if (r < a.mass) return a.location;
        r -= a.mass;
    }
    const auto& pieces = p.pieces();
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (r < pieces[i].mass || i + 1 == pieces.size()) {
            return pieces[i].lower + uni(rng) * pieces[i].width();
        }
        r -= pieces[i].mass;
    }
    return p.atoms().back().location;
}

template <VelocityField F>
MuEstimate integral_mu(const F& field, const Segment& seg, const Condition& ca,
                       const Condition& cb, double t, const AlphaDensity& p, std::size_t k,
                       const Estimator& est) {
    if (est.kind == Estimator::Kind::Grid) {
        return integral_mu(field, seg, ca, cb, t, alpha_grid(p, k));
    }
    if (est.samples == 0) throw ConfigError("integral_mu: Monte Carlo needs n >= 1");
    std::mt19937_64 rng(est.seed);
    MuEstimate out;
    out.mu0 = Eigen::VectorXd::Zero(seg.dim());
    out.mu1 = Eigen::VectorXd::Zero(seg.dim());
    for (std::size_t i = 0; i < est.samples; ++i) {
        const double alpha = sample_alpha(p, rng);
        const Eigen::VectorXd v =
            field(segment_point(seg, alpha), t, interpolate_condition(ca, cb, alpha));
        out.mu0 += (1.0 - alpha) * v;
        out.mu1 += alpha * v;
    }
    out.mu0 /= static_cast<double>(est.samples);
    out.mu1 /= static_cast<double>(est.samples);
    out.moments = density_moments(p);
    return out;
}

// Endpoint velocities from the velocity-weighted integrals:
//   va = (c11 mu0 - c01 mu1) / delta,  vb = (c00 mu1 - c01 mu0) / delta
inline std::pair<State, State> segment_velocities_from_mu(const State& mu0, const State& mu1,
                                                          const Moments& m,
                                                          double delta_min = kDefaultDeltaMin) {
    if (!(m.delta > delta_min)) {
        throw DegenerateDensityError("segment_velocities_from_mu: delta=" + format_real(m.delta) +
                                     " <= " + format_real(delta_min));
    }
    require_same_dim(mu0.size(), mu1.size(), "segment_velocities_from_mu");
    return {(m.c11 * mu0 - m.c01 * mu1) / m.delta, (m.c00 * mu1 - m.c01 * mu0) / m.delta};
}

// Ablation ladder. A: full method. B: average anchor. C: B without
// intermediate points. D: hard cutoff (joint before the cutoff step,
// independent after).
enum class Variant { A, B, C, D };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::A: return "A";
        case Variant::B: return "B";
        case Variant::C: return "C";
        case Variant::D: return "D";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "A") return Variant::A;
    if (s == "B") return Variant::B;
    if (s == "C") return Variant::C;
    if (s == "D") return Variant::D;
    throw ConfigError("unknown variant '" + s + "' (expected A, B, C or D)");
}

struct TransportConfig {
    Variant variant = Variant::A;
    std::size_t k = 4;
    // Density the schedule relaxes toward. Early steps add a midpoint atom of
    // mass midpoint_share * w_t on top of it.
    AlphaDensity density = AlphaDensity::uniform();
    double midpoint_share = 0.5;
    WeightSchedule weights = weight_preset("paper-image", kPresetReferenceSteps);
    TimeGrid grid = TimeGrid::uniform(kPresetReferenceSteps);
    Estimator estimator = Estimator::grid();
    std::optional<std::size_t> cutoff;  // variant D; defaults to steps / 2
    double delta_min = kDefaultDeltaMin;

    std::size_t effective_cutoff() const { return cutoff.value_or(grid.steps() / 2); }

    void validate() const {
        if (variant != Variant::C && variant != Variant::D && k < 2) {
            throw ConfigError("transport: k must be >= 2");
        }
        if (!(midpoint_share >= 0.0 && midpoint_share < 1.0)) {
            throw ConfigError("transport: midpoint_share must be in [0,1)");
        }
        if (variant == Variant::D && effective_cutoff() > grid.steps()) {
            throw ConfigError("transport: cutoff beyond the last step");
        }
    }
};

// Scheduled alpha density for a step: (1 - lambda) * base + lambda * atom(0.5)
// with lambda = midpoint_share * w_t.
inline AlphaDensity scheduled_density(const TransportConfig& cfg, std::size_t step) {
    const double lambda = cfg.midpoint_share * cfg.weights.at(step);
    if (lambda == 0.0) return cfg.density;
    return AlphaDensity::mixture(cfg.density, AlphaDensity::atom(0.5), lambda);
}

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Full joint inference from a shared initial state. Every consumed grid step
// is logged.
template <VelocityField F>
TrajectoryLog run_joint(const F& field, const Condition& ca, const Condition& cb,
                        const TransportConfig& cfg, const State& x_init) {
    cfg.validate();
    require_same_dim(ca.size(), cb.size(), "run_joint conditions");
    require_finite(x_init, "run_joint x_init");

    TrajectoryLog log;
    Segment seg(x_init, x_init);
    const WeightSchedule cutoff_schedule = WeightSchedule::hard_cutoff(cfg.effective_cutoff());
    const AlphaGrid endpoint_grid = alpha_grid(AlphaDensity::endpoints(), 2);

    for (std::size_t s = 0; s < cfg.grid.steps(); ++s) {
        StepRecord rec;
        rec.step = s;
        rec.t1 = cfg.grid.t1(s);
        rec.t2 = cfg.grid.t2(s);
        rec.xa = seg.a;
        rec.xb = seg.b;
        rec.norm = seg.norm();
        const double dt = rec.t2 - rec.t1;

        AnchorMode mode = AnchorMode::Average;
        switch (cfg.variant) {
            case Variant::A:
            case Variant::B: {
                mode = cfg.variant == Variant::A ? AnchorMode::Midpoint : AnchorMode::Average;
                rec.w = cfg.weights.at(s);
                const AlphaDensity p = scheduled_density(cfg, s);
                if (cfg.estimator.kind == Estimator::Kind::Grid) {
                    rec.alphas = alpha_grid(p, cfg.k);
                    auto js = joint_step(field, seg, ca, cb, rec.t1, rec.t2, rec.alphas,
                                         cfg.delta_min, s);
                    rec.va = std::move(js.va);
                    rec.vb = std::move(js.vb);
                } else {
                    Estimator est = cfg.estimator;
                    est.seed = step_seed(cfg.estimator.seed, s);
                    const MuEstimate mu = integral_mu(field, seg, ca, cb, rec.t1, p, cfg.k, est);
                    std::tie(rec.va, rec.vb) =
                        segment_velocities_from_mu(mu.mu0, mu.mu1, mu.moments, cfg.delta_min);
                }
                break;
            }
            case Variant::C: {
                rec.w = cfg.weights.at(s);
                rec.alphas = endpoint_grid;
                auto js = joint_step(field, seg, ca, cb, rec.t1, rec.t2, rec.alphas,
                                     cfg.delta_min, s);
                rec.va = std::move(js.va);
                rec.vb = std::move(js.vb);
                break;
            }
            case Variant::D: {
                rec.w = cutoff_schedule.at(s);
                rec.alphas = endpoint_grid;
                rec.va = field(seg.a, rec.t1, ca);
                rec.vb = field(seg.b, rec.t1, cb);
                break;
            }
        }
        rec.anchor = anchor_velocity(field, seg, rec.t1, ca, cb, mode, rec.va, rec.vb);
        std::tie(rec.applied_va, rec.applied_vb) =
            smooth_velocities(rec.va, rec.vb, *rec.anchor, rec.w);
        if (!rec.applied_va.allFinite() || !rec.applied_vb.allFinite()) {
            throw DivergenceError("non-finite segment velocity", s);
        }
        seg = Segment(seg.a + dt * rec.applied_va, seg.b + dt * rec.applied_vb);
        log.records.push_back(std::move(rec));
    }
    log.final_segment = seg;
    return log;
}

}  // namespace segflow
