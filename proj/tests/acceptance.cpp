// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "segflow/segflow.hpp"

using namespace segflow;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

struct Outcome {
    bool passed = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string title;
    double budget_seconds;
    std::function<Outcome()> body;
};

// 2D two-component benchmark; each component moves with its own condition map.
GaussianMixtureTarget benchmark_mixture() {
    Eigen::MatrixXd m1(2, 1), m2(2, 1);
    m1 << -1.0, 1.0;
    m2 << 1.0, -1.0;
    return GaussianMixtureTarget(vec({0.5, 0.5}), {vec({1.0, 1.0}), vec({-1.0, -1.0})},
                                 {vec({0.05, 0.05}), vec({0.05, 0.05})}, {m1, m2});
}

// Asymmetric 2D mixture for the field check.
GaussianMixtureTarget probe_mixture() {
    Eigen::MatrixXd m1(2, 1), m2(2, 1);
    m1 << 0.5, -0.25;
    m2 << -0.3, 0.8;
    return GaussianMixtureTarget(vec({0.4, 0.6}), {vec({1.0, 0.5}), vec({-0.5, -1.0})},
                                 {vec({0.2, 0.3}), vec({0.4, 0.1})}, {m1, m2});
}

TransportConfig benchmark_transport(Variant v) {
    TransportConfig cfg;
    cfg.variant = v;
    cfg.k = 4;
    cfg.density = AlphaDensity::uniform();
    cfg.weights = weight_preset("paper-image", kPresetReferenceSteps);
    cfg.grid = TimeGrid::uniform(kPresetReferenceSteps);
    return cfg;
}

// ---- 1: regression optimality ----

double objective(const std::vector<RegressionPoint>& pts, const Segment& s) {
    double acc = 0.0;
    for (const auto& p : pts) {
        acc += p.weight * ((1.0 - p.alpha) * s.a + p.alpha * s.b - p.value).squaredNorm();
    }
    return acc;
}

// Normal equations of the stacked problem, assembled per coordinate block and
// solved with a full-pivot LU.
Segment normal_equation_oracle(const std::vector<RegressionPoint>& pts) {
    const Eigen::Index d = pts.front().value.size();
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2 * d);
    for (const auto& p : pts) {
        Eigen::MatrixXd row = Eigen::MatrixXd::Zero(d, 2 * d);
        row.leftCols(d) = (1.0 - p.alpha) * Eigen::MatrixXd::Identity(d, d);
        row.rightCols(d) = p.alpha * Eigen::MatrixXd::Identity(d, d);
        lhs += p.weight * row.transpose() * row;
        rhs += p.weight * row.transpose() * p.value;
    }
    const Eigen::VectorXd sol = lhs.fullPivLu().solve(rhs);
    return Segment(sol.head(d), sol.tail(d));
}

Outcome criterion_regression() {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    double worst = 0.0;
    std::size_t improved = 0, instances = 0;
    const Eigen::Index dims[] = {1, 2, 8};
    const std::size_t ks[] = {2, 4, 16};
    for (int i = 0; i < 200; ++i) {
        const Eigen::Index d = dims[i % 3];
        const std::size_t k = ks[(i / 3) % 3];
        std::vector<RegressionPoint> pts;
        for (std::size_t j = 0; j < k; ++j) {
            RegressionPoint p{uni(rng), 0.05 + uni(rng), State(d)};
            for (Eigen::Index c = 0; c < d; ++c) p.value(c) = 3.0 * normal(rng);
            pts.push_back(p);
        }
        const Segment s = regression_endpoints(pts);
        const Segment o = normal_equation_oracle(pts);
        Eigen::VectorXd got(2 * d), want(2 * d);
        got << s.a, s.b;
        want << o.a, o.b;
        worst = std::max(worst, (got - want).norm() / std::max(want.norm(), 1e-300));
        const double best = objective(pts, s);
        for (int p = 0; p < 100; ++p) {
            Segment moved = s;
            const double scale = 1e-3 * (1.0 + want.norm());
            for (Eigen::Index c = 0; c < d; ++c) {
                moved.a(c) += scale * normal(rng);
                moved.b(c) += scale * normal(rng);
            }
            improved += objective(pts, moved) < best;
        }
        ++instances;
    }
    return {worst <= 1e-6 && improved == 0,
            std::to_string(instances) + " instances, max rel err " + num(worst) + ", " +
                std::to_string(improved) + " improving perturbations"};
}

// ---- 2: analytic field vs Monte Carlo oracle ----

Outcome criterion_field() {
    const auto probes = oracle_probes(probe_mixture(), 50, 100000, 0.05, 1.0, 0, 0.02, 3.0);
    std::size_t agree = 0, unreliable = 0;
    for (const auto& p : probes) {
        agree += p.agrees;
        unreliable += !p.reliable;
    }
    return {agree >= 48, std::to_string(agree) + "/50 probes agree (" + std::to_string(unreliable) +
                             " with too few effective samples)"};
}

// ---- 3: reduction to the base flow ----

Outcome criterion_reduction() {
    const GmmField field{benchmark_mixture(), kDefaultTMin};
    const Condition c = vec({0.35});
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const State x0 = initial_noises(seed, 2, 1).front();
        const auto base = sample_base(field, c, TimeGrid::uniform(28), x0);
        for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D}) {
            const TrajectoryLog log = run_joint(field, c, c, benchmark_transport(v), x0);
            for (std::size_t s = 0; s < log.records.size(); ++s) {
                worst = std::max({worst, (log.records[s].xa - base[s]).norm(),
                                  (log.records[s].xb - base[s]).norm()});
            }
            worst = std::max({worst, (log.final_segment.a - base.back()).norm(),
                              (log.final_segment.b - base.back()).norm()});
        }
    }
    return {worst <= 1e-12, "variants A-D, 4 seeds, max deviation " + num(worst)};
}

// ---- 4: full smoothing freezes the norm ----

Outcome criterion_freeze() {
    const GmmField field{benchmark_mixture(), kDefaultTMin};
    const Condition ca = vec({1.0}), cb = vec({-1.0});
    const State x0 = initial_noises(0, 2, 1).front();
    auto spread = [](const std::vector<double>& norms, std::size_t from) {
        double lo = norms[from], hi = norms[from];
        for (std::size_t i = from; i < norms.size(); ++i) {
            lo = std::min(lo, norms[i]);
            hi = std::max(hi, norms[i]);
        }
        return hi - lo;
    };
    TransportConfig cfg = benchmark_transport(Variant::A);
    cfg.weights = WeightSchedule::constant(1.0);
    TrajectoryLog log = run_joint(field, ca, cb, cfg, x0);
    auto norms = log.norms();
    norms.push_back(log.final_norm());
    const double from_start = spread(norms, 0);
    // open the segment first, then hold w = 1
    cfg.weights = WeightSchedule({{0, 0.0}, {10, 1.0}}, true);
    log = run_joint(field, ca, cb, cfg, x0);
    norms = log.norms();
    norms.push_back(log.final_norm());
    const double after_open = spread(norms, 10);
    return {from_start <= 1e-12 && after_open <= 1e-12 && norms[10] > 0.1,
            "w=1 throughout: spread " + num(from_start) + "; w=1 from step 10 (norm " +
                num(norms[10]) + "): spread " + num(after_open)};
}

// ---- 5: norm dynamics ----

Outcome criterion_dynamics() {
    const GmmField field{benchmark_mixture(), kDefaultTMin};
    const State x0 = initial_noises(0, 2, 1).front();
    const ResidualScaling rs =
        residual_scaling(field, vec({1.0}), vec({-1.0}), benchmark_transport(Variant::A), x0, 28,
                         [](std::size_t n) { return weight_preset("paper-image", n); });
    return {std::abs(rs.slope - 1.0) <= 0.2,
            "max residual " + num(rs.max_residuals[0]) + ", " + num(rs.max_residuals[1]) + ", " +
                num(rs.max_residuals[2]) + " at dt 1/28, 1/56, 1/112; slope " + num(rs.slope)};
}

// ---- 6: KL leading order ----

Outcome criterion_kl() {
    const KlLeadingOrder kl = kl_leading_order(1e-2, 20001);
    const double invariance = std::abs(kl.proxy_sigma2 - kl.proxy_sigma2_wide);
    return {kl.ratio >= 0.95 && kl.ratio <= 1.05 && invariance <= 1e-12,
            "proxy/numerical " + num(kl.ratio) + " at sigma 1e-2; |proxy*sigma^2 change| " +
                num(invariance)};
}

// ---- 7: integral, grid and Monte Carlo agree ----

// Smooth test field with curvature in alpha.
struct CurvedField {
    Eigen::VectorXd operator()(const State& x, double t, const Condition& c) const {
        Eigen::VectorXd v(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            v(i) = std::sin(2.0 * x(i) + t) + x((i + 1) % x.size()) * x((i + 1) % x.size()) + c(0);
        }
        return v;
    }
};

Outcome criterion_consistency() {
    const CurvedField field;
    const Segment seg(vec({0.3, -0.8, 1.2}), vec({-0.6, 0.9, 0.1}));
    const Condition ca = vec({0.4}), cb = vec({-0.2});
    const double t = 0.6;

    double grid_gap = 0.0;
    for (std::size_t k : {4u, 16u, 64u}) {
        const AlphaGrid grid = alpha_grid(AlphaDensity::uniform(), k);
        const MuEstimate mu = integral_mu(field, seg, ca, cb, t, grid);
        const auto [va, vb] = segment_velocities_from_mu(mu.mu0, mu.mu1, mu.moments);
        for (double dt : {1e-2, 1e-3}) {
            const auto js = joint_step(field, seg, ca, cb, t, t - dt, grid);
            grid_gap = std::max({grid_gap, (js.va - va).norm(), (js.vb - vb).norm()});
        }
    }

    const AlphaDensity p = AlphaDensity::uniform();
    const MuEstimate dense = integral_mu(field, seg, ca, cb, t, alpha_grid(p, 4096));
    const auto [ra, rb] = segment_velocities_from_mu(dense.mu0, dense.mu1, density_moments(p));
    std::vector<double> ns, rms;
    for (std::size_t n : {100u, 1000u, 10000u}) {
        double acc = 0.0;
        const int reps = 200;
        for (int r = 0; r < reps; ++r) {
            const MuEstimate mc = integral_mu(field, seg, ca, cb, t, p, 2,
                                              Estimator::monte_carlo(n, 1000 + r));
            const auto [ma, mb] = segment_velocities_from_mu(mc.mu0, mc.mu1, mc.moments);
            acc += (ma - ra).squaredNorm() + (mb - rb).squaredNorm();
        }
        ns.push_back(static_cast<double>(n));
        rms.push_back(std::sqrt(acc / reps));
    }
    const double slope = loglog_slope(ns, rms);
    return {grid_gap <= 1e-10 && std::abs(slope + 0.5) <= 0.1,
            "grid vs joint step max gap " + num(grid_gap) + "; MC rms error " + num(rms[0]) + ", " +
                num(rms[1]) + ", " + num(rms[2]) + " at n 1e2, 1e3, 1e4; slope " + num(slope)};
}

// ---- 8: gradient check ----

Outcome criterion_gradient() {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    double worst = 0.0;
    std::size_t passed = 0;
    for (int net = 0; net < 20; ++net) {
        const Eigen::Index d = 1 + net % 3, m = net % 3;
        const MLPField f = MLPField::initialized(
            d, m, {static_cast<Eigen::Index>(3 + net % 4), static_cast<Eigen::Index>(2 + net % 3)},
            rng());
        FmBatch b;
        const Eigen::Index n = 4 + net % 5;
        b.x0.resize(d, n);
        b.eps.resize(d, n);
        b.t.resize(n);
        b.c.resize(m, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k < d; ++k) {
                b.x0(k, i) = normal(rng);
                b.eps(k, i) = normal(rng);
            }
            for (Eigen::Index k = 0; k < m; ++k) b.c(k, i) = normal(rng);
            b.t(i) = uni(rng);
        }
        const GradCheck gc = gradient_check(f, b, 1e-5, 1e-4);
        worst = std::max(worst, gc.max_rel_error);
        passed += gc.passed;
    }
    return {passed == 20, std::to_string(passed) + "/20 networks within 1e-4, max rel err " + num(worst)};
}

// ---- 9: learned field quality ----

// Var[eps - x0 | x_t] for x0 ~ N(mu, s2) in 1D is s2 / ((1-t)^2 s2 + t^2);
// its average over t ~ U[t_min, 1] by composite Simpson.
double gaussian_floor(double s2, double t_min) {
    const int n = 20000;
    const double h = (1.0 - t_min) / n;
    auto f = [&](double t) { return s2 / ((1.0 - t) * (1.0 - t) * s2 + t * t); };
    double acc = f(t_min) + f(1.0);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(t_min + i * h);
    return acc * h / 3.0 / (1.0 - t_min);
}

Outcome criterion_learned() {
    const double s2 = 0.25;
    const auto target = GaussianMixtureTarget::shared(vec({1.0}), {vec({0.5})}, {vec({s2})},
                                                      Eigen::MatrixXd::Zero(1, 0));
    TrainConfig cfg;
    cfg.steps = 5000;
    cfg.seed = 0;
    cfg.condition_range = 0.0;
    const TrainResult res = train(target, cfg);
    std::mt19937_64 rng(12345);
    const FmBatch eval = sample_fm_batch(target, 200000, cfg.t_min, 0.0, rng);
    const double loss = fm_loss(res.field, eval);
    const double floor = gaussian_floor(s2, cfg.t_min);
    const double rms = field_rms_error(res.field, target, Condition(0));
    return {loss <= 1.1 * floor && rms <= 0.1,
            "held-out loss " + num(loss) + " vs floor " + num(floor) + " (ratio " +
                num(loss / floor) + "); field rms vs exact " + num(rms)};
}

// ---- 10: ablation direction ----

Outcome criterion_ablation() {
    const auto target = benchmark_mixture();
    const GmmField field{target, kDefaultTMin};
    const Condition ca = vec({1.0}), cb = vec({-1.0});
    TransportConfig full = benchmark_transport(Variant::A);
    TransportConfig cut = benchmark_transport(Variant::D);
    TransportConfig smooth = benchmark_transport(Variant::A);
    smooth.weights = WeightSchedule::constant(0.7);
    TransportConfig rough = benchmark_transport(Variant::A);
    rough.weights = WeightSchedule::constant(0.0);
    std::size_t a_wins = 0, smooth_wins = 0;
    double nll_a = 0.0, nll_d = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        double a = 0.0, d = 0.0, s = 0.0, r = 0.0;
        for (const State& x0 : initial_noises(seed, 2, 32)) {
            a += midpoint_nll(target, ca, cb, run_joint(field, ca, cb, full, x0).final_segment);
            d += midpoint_nll(target, ca, cb, run_joint(field, ca, cb, cut, x0).final_segment);
            s += run_joint(field, ca, cb, smooth, x0).final_norm();
            r += run_joint(field, ca, cb, rough, x0).final_norm();
        }
        a_wins += a < d;
        smooth_wins += s <= r;
        nll_a += a / 32.0 / 50.0;
        nll_d += d / 32.0 / 50.0;
    }
    return {a_wins >= 40 && smooth_wins >= 40,
            "A below D on midpoint NLL in " + std::to_string(a_wins) + "/50 seeds (means " +
                num(nll_a) + " vs " + num(nll_d) + "); w=0.7 norm <= w=0 norm in " +
                std::to_string(smooth_wins) + "/50 seeds"};
}

// ---- 11: CLI determinism ----

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SEGFLOW_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

Outcome criterion_determinism() {
    const fs::path root = fs::temp_directory_path() / "segflow_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path train_cfg = root / "train.json";
    std::ofstream(train_cfg) << R"({
      "schema_version": 1,
      "target": {"weights": [1.0], "means": [[0.5]], "variances": [[0.25]]},
      "train": {"hidden": [16, 16], "batch_size": 64, "steps": 300, "condition_range": 0.0}
    })";
    const std::string configs = SEGFLOW_CONFIG_DIR;
    const std::vector<std::pair<std::string, std::string>> runs{
        {"train", train_cfg.string()},
        {"sample", configs + "/default.json"},
        {"joint", configs + "/default.json"},
        {"joint", configs + "/paper-image-schedule.json"},
        {"ablate", configs + "/ablation.json"},
        {"diagnose", configs + "/default.json"}};
    std::size_t files = 0, differing = 0;
    std::string failures;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& [cmd, cfg] = runs[i];
        const fs::path a = root / ("a" + std::to_string(i)), b = root / ("b" + std::to_string(i));
        const int ca = run_cli(cmd + " --config " + cfg + " --seed 7 --out " + a.string());
        const int cb = run_cli(cmd + " --config " + cfg + " --seed 7 --out " + b.string());
        if (ca != 0 || cb != 0) failures += " " + cmd + "(exit " + std::to_string(ca) + ")";
        for (const auto& e : fs::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            ++files;
            differing += slurp(e.path()) != slurp(b / fs::relative(e.path(), a));
        }
    }
    fs::remove_all(root);
    return {failures.empty() && differing == 0 && files > 0,
            std::to_string(runs.size()) + " commands run twice, " + std::to_string(files) +
                " output files, " + std::to_string(differing) + " differ" +
                (failures.empty() ? "" : "; failed:" + failures)};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "closed-form regression optimality", 10, criterion_regression},
        {2, "analytic field vs Monte Carlo oracle", 60, criterion_field},
        {3, "base-flow reduction", 1, criterion_reduction},
        {4, "w=1 freezes segment norm", 1, criterion_freeze},
        {5, "segment norm dynamics residual", 10, criterion_dynamics},
        {6, "KL leading order", 10, criterion_kl},
        {7, "integral/grid/MC consistency", 60, criterion_consistency},
        {8, "trainer gradient check", 30, criterion_gradient},
        {9, "learned field quality", 120, criterion_learned},
        {10, "ablation direction", 300, criterion_ablation},
        {11, "CLI determinism", 300, criterion_determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.body();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.budget_seconds;
        const bool ok = o.passed && in_time;
        failed += !ok;
        std::printf("criterion %2d: %s - %s: %s [%.2fs / %.0fs budget%s]\n", c.id, ok ? "PASS" : "FAIL",
                    c.title.c_str(), o.detail.c_str(), secs, c.budget_seconds,
                    in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
