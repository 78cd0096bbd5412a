#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "segflow/diagnostics.hpp"

using namespace segflow;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

StepRecord record(std::size_t step, double t1, double t2, const State& xa, const State& xb,
                  const State& va, const State& vb) {
    StepRecord r;
    r.step = step;
    r.t1 = t1;
    r.t2 = t2;
    r.xa = xa;
    r.xb = xb;
    r.va = r.applied_va = va;
    r.vb = r.applied_vb = vb;
    r.norm = (xb - xa).norm();
    return r;
}

// Advances the stored segment with the applied velocities, as run_joint does.
TrajectoryLog synthetic_log(const std::vector<StepRecord>& recs) {
    TrajectoryLog log;
    log.records = recs;
    const auto& last = recs.back();
    const double dt = last.t2 - last.t1;
    log.final_segment = Segment(last.xa + dt * last.applied_va, last.xb + dt * last.applied_vb);
    return log;
}

std::vector<RegressionPoint> cloud(std::initializer_list<double> xs,
                                   std::initializer_list<double> ws) {
    std::vector<RegressionPoint> out;
    auto w = ws.begin();
    double alpha = 0.0;
    for (double x : xs) {
        out.push_back({alpha, *w++, vec({x})});
        alpha += 0.1;
    }
    return out;
}

GaussianMixtureTarget benchmark_mixture() {
    Eigen::MatrixXd m1(2, 1), m2(2, 1);
    m1 << -1.0, 1.0;
    m2 << 1.0, -1.0;
    return GaussianMixtureTarget(vec({0.5, 0.5}), {vec({1.0, 1.0}), vec({-1.0, -1.0})},
                                 {vec({0.05, 0.05}), vec({0.05, 0.05})}, {m1, m2});
}

}  // namespace

TEST(NormDerivativeResidual, LinearGrowthHasZeroResidual) {
    // xa = 0, xb = 2t in 1D, moved by va = 0, vb = 2.
    std::vector<StepRecord> recs;
    const TimeGrid grid = TimeGrid::uniform(10);
    for (std::size_t s = 0; s < 10; ++s) {
        recs.push_back(record(s, grid.t1(s), grid.t2(s), vec({0.0}), vec({2.0 * grid.t1(s)}),
                              vec({0.0}), vec({2.0})));
    }
    const NormResiduals res = norm_derivative_residual(synthetic_log(recs));
    ASSERT_EQ(res.steps.size(), 10u);
    EXPECT_LT(res.max_abs, 1e-12);
}

TEST(NormDerivativeResidual, ConstantNormTranslationHasZeroResidual) {
    std::vector<StepRecord> recs;
    for (std::size_t s = 0; s < 3; ++s) {
        const double t1 = 1.0 - 0.1 * s;
        const State shift = vec({0.3, -0.3}) * (1.0 - t1);
        recs.push_back(record(s, t1, t1 - 0.1, vec({0.0, 0.0}) + shift, vec({1.0, 1.0}) + shift,
                              vec({-3.0, 3.0}), vec({-3.0, 3.0})));
    }
    EXPECT_LT(norm_derivative_residual(synthetic_log(recs)).max_abs, 1e-12);
}

TEST(NormDerivativeResidual, OrthogonalVelocityGivesSecondOrderGap) {
    const double dt = -0.1;
    const auto log = synthetic_log({record(0, 1.0, 0.9, vec({0.0, 0.0}), vec({1.0, 0.0}),
                                           vec({0.0, 0.0}), vec({0.0, 1.0})),
                                    record(1, 0.9, 0.8, vec({0.0, 0.0}), vec({1.0, 0.1}),
                                           vec({0.0, 0.0}), vec({0.0, 0.0}))});
    const NormResiduals res = norm_derivative_residual(log);
    // predicted rate is 0; observed is (sqrt(1 + dt^2) - 1) / dt
    EXPECT_NEAR(res.steps[0].residual, (std::sqrt(1.0 + dt * dt) - 1.0) / dt, 1e-12);
}

TEST(NormDerivativeResidual, SkipsCollapsedStepsAndNeedsTwoRecords) {
    const auto log = synthetic_log({record(0, 1.0, 0.5, vec({1.0}), vec({1.0}), vec({0.0}),
                                           vec({1.0})),
                                    record(1, 0.5, 0.0, vec({1.0}), vec({0.5}), vec({0.0}),
                                           vec({0.0}))});
    const NormResiduals res = norm_derivative_residual(log);
    ASSERT_EQ(res.steps.size(), 1u);
    EXPECT_EQ(res.steps[0].step, 1u);
    TrajectoryLog one;
    one.records = {log.records[0]};
    EXPECT_THROW(norm_derivative_residual(one), ContractError);
}

TEST(NormDerivativeResidual, ShrinksWithStepSizeOnJointRun) {
    const GmmField field{benchmark_mixture(), kDefaultTMin};
    auto residual = [&](std::size_t n) {
        TransportConfig cfg;
        cfg.variant = Variant::A;
        cfg.grid = TimeGrid::uniform(n);
        cfg.weights = WeightSchedule::constant(0.3);
        const TrajectoryLog log = run_joint(field, vec({1.0}), vec({-1.0}), cfg, vec({0.2, 0.5}));
        return norm_derivative_residual(log, 0.1).max_abs;
    };
    const double coarse = residual(50);
    const double fine = residual(500);
    EXPECT_LT(fine, coarse / 5.0) << coarse << " " << fine;
}

TEST(KlProxy, Examples) {
    const auto a = cloud({0.0, 1.0, 2.0}, {0.25, 0.5, 0.25});
    EXPECT_EQ(kl_proxy(a, a, 0.05), 0.0);
    auto b = a;
    for (auto& p : b) p.value(0) += 0.1;
    // 0.01 / (2 * 0.0025)
    EXPECT_NEAR(kl_proxy(a, b, 0.05), 2.0, 1e-12);
    EXPECT_NEAR(kl_proxy(b, a, 0.05), kl_proxy(a, b, 0.05), 1e-15);
    EXPECT_NEAR(kl_proxy(a, b, 0.1), kl_proxy(a, b, 0.05) / 4.0, 1e-12);
    EXPECT_THROW(kl_proxy(a, b, 0.0), DomainError);
    EXPECT_THROW(kl_proxy(a, cloud({0.0, 1.0}, {0.5, 0.5}), 0.1), ContractError);
}

TEST(NumericalKl, IdenticalMixturesHaveZeroDivergence) {
    const auto a = cloud({0.0, 0.3, 2.0}, {0.2, 0.5, 0.3});
    EXPECT_NEAR(numerical_kl(a, a, 0.05, 20001), 0.0, 1e-12);
}

TEST(NumericalKl, SingleGaussianShift) {
    for (double delta : {0.01, 0.5, 2.0}) {
        const double kl = numerical_kl(cloud({0.0}, {1.0}), cloud({delta}, {1.0}), 1.0, 20001);
        EXPECT_NEAR(kl, 0.5 * delta * delta, 1e-9 * (1.0 + delta * delta)) << delta;
    }
}

TEST(NumericalKl, BoundedByProxyAndTightForSmallShifts) {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.1, 1.0);
    const double sigma = 0.05;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<RegressionPoint> truth, approx;
        for (int i = 0; i < 4; ++i) {
            const double x = normal(rng);
            truth.push_back({0.25 * i, uni(rng), vec({x})});
            approx.push_back({0.25 * i, truth.back().weight, vec({x + 0.3 * sigma * normal(rng)})});
        }
        const double proxy = kl_proxy(truth, approx, sigma);
        double total = 0.0;
        for (const auto& p : truth) total += p.weight;
        const double exact = numerical_kl(truth, approx, sigma, 400001);
        // joint convexity of KL: the mixture divergence never exceeds the
        // weighted component divergences
        EXPECT_LE(exact, proxy / total + 1e-9);
        EXPECT_GT(exact, 0.0);
    }
    // well separated components: the bound is attained
    const auto truth = cloud({0.0, 1.0}, {0.5, 0.5});
    const auto approx = cloud({0.02, 1.01}, {0.5, 0.5});
    EXPECT_NEAR(numerical_kl(truth, approx, sigma, 400001) / kl_proxy(truth, approx, sigma), 1.0,
                1e-6);
}

TEST(NumericalKl, CoarseGridIsPrecisionError) {
    const auto a = cloud({0.0, 1.0}, {0.5, 0.5});
    EXPECT_THROW(numerical_kl(a, a, 0.01, 101), PrecisionError);
    EXPECT_THROW(numerical_kl(cloud({0.0}, {1.0}), {{0.0, 1.0, vec({0.0, 1.0})}}, 0.1, 2001),
                 ContractError);
}

TEST(GradientCheck, ReportsAgreementOnSmallNetwork) {
    std::mt19937_64 rng(1);
    const MLPField f = MLPField::initialized(2, 1, {6}, 3);
    const FmBatch b = sample_fm_batch(benchmark_mixture(), 5, kDefaultTMin, 1.0, rng);
    const GradCheck gc = gradient_check(f, b);
    EXPECT_TRUE(gc.passed);
    EXPECT_LT(gc.max_rel_error, 1e-4);
}
