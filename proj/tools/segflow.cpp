// segflow: experiment runner for joint segment transport.
//
//   segflow <train|sample|joint|ablate|diagnose> --config PATH [--seed N] [--out DIR] [--dry-run]
//
// Exit codes: 0 ok, 2 configuration error, 3 numerical divergence,
// 4 diagnostic failure.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "segflow/config.hpp"
#include "segflow/experiment.hpp"
#include "segflow/format.hpp"
#include "segflow/segflow.hpp"

namespace fs = std::filesystem;
using namespace segflow;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitDiagnostic = 4;

struct Options {
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    bool dry_run = false;
};

std::size_t thread_cap(std::size_t jobs) {
    std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SEGFLOW_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            throw ConfigError(std::string("SEGFLOW_THREADS must be a positive integer, got '") +
                              env + "'");
        }
        cap = static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::min(cap, jobs));
}

// Runs job(i) for i in [0, n) on a small pool. Jobs must not throw.
template <class Job>
void parallel_for(std::size_t n, Job job) {
    const std::size_t workers = thread_cap(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) job(i);
        });
    }
    for (auto& t : pool) t.join();
}

Condition to_condition(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

const std::pair<std::vector<double>, std::vector<double>>& require_conditions(
    const ExperimentConfig& cfg) {
    if (!cfg.conditions) throw ConfigError("config field 'conditions': missing");
    return *cfg.conditions;
}

const TargetSpec& require_target(const ExperimentConfig& cfg) {
    if (!cfg.target) throw ConfigError("config field 'target': missing");
    return *cfg.target;
}

// Calls fn with the learned field when a checkpoint is configured, otherwise
// with the exact field of the target.
template <class Fn>
auto with_field(const ExperimentConfig& cfg, Fn&& fn) {
    if (cfg.checkpoint) {
        const MLPField field = load_checkpoint(*cfg.checkpoint);
        if (cfg.conditions &&
            static_cast<Eigen::Index>(cfg.conditions->first.size()) != field.cond_dim()) {
            throw ConfigError("checkpoint '" + *cfg.checkpoint + "' expects " +
                              std::to_string(field.cond_dim()) + " condition entries");
        }
        return fn(field);
    }
    const TargetSpec& t = require_target(cfg);
    const GmmField field{build_target(t), t.t_min};
    return fn(field);
}

Eigen::Index state_dim(const ExperimentConfig& cfg) {
    if (cfg.checkpoint) return load_checkpoint(*cfg.checkpoint).state_dim();
    return static_cast<Eigen::Index>(require_target(cfg).means.front().size());
}

fs::path prepare_dir(const ExperimentConfig& cfg, const std::string& sub) {
    const fs::path dir = fs::path(cfg.output_dir) / sub;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "'");
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
}

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

std::string seed_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

struct SeedStatus {
    bool ok = true;
    bool diverged = false;
    std::string error;
    std::optional<std::size_t> step;
};

template <class Body>
SeedStatus guarded(Body body) {
    SeedStatus s;
    try {
        body();
    } catch (const DivergenceError& e) {
        s = {false, true, e.what(), e.step()};
    } catch (const std::exception& e) {
        s = {false, false, e.what(), std::nullopt};
    }
    return s;
}

ojson status_json(std::uint64_t seed, const SeedStatus& s) {
    ojson j;
    j["seed"] = seed;
    j["status"] = s.ok ? "ok" : (s.diverged ? "diverged" : "error");
    if (!s.ok) j["error"] = s.error;
    if (s.step) j["step"] = *s.step;
    return j;
}

int seeds_exit_code(const std::vector<SeedStatus>& all) {
    bool diverged = false, failed = false;
    for (const auto& s : all) {
        diverged = diverged || s.diverged;
        failed = failed || !s.ok;
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (!all[i].ok) std::cerr << "seed failed: " << all[i].error << "\n";
    }
    if (diverged) return kExitDivergence;
    return failed ? kExitConfig : kExitOk;
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
    MeanStd m;
    if (v.empty()) return m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
    }
    return m;
}

// ---- commands ----

int cmd_train(const ExperimentConfig& cfg, bool dry_run) {
    const TargetSpec& spec = require_target(cfg);
    const GaussianMixtureTarget target = build_target(spec);
    const TrainConfig tc = build_train(cfg.train, spec.t_min);
    if (dry_run) return kExitOk;

    const TrainResult res = train(target, tc);
    const fs::path dir = prepare_dir(cfg, "train");
    save_checkpoint(res.field, (dir / "checkpoint.bin").string());
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < res.losses.size(); ++i) {
        csv += std::to_string(i) + "," + format_real(res.losses[i]) + "\n";
    }
    write_text(dir / "loss.csv", csv);

    const std::size_t tail = std::min<std::size_t>(100, res.losses.size());
    double final_loss = 0.0;
    for (std::size_t i = res.losses.size() - tail; i < res.losses.size(); ++i) {
        final_loss += res.losses[i] / static_cast<double>(tail);
    }
    const double floor =
        flow_matching_floor(target, 100000, spec.t_min, cfg.train.condition_range, tc.seed);
    ojson summary;
    summary["steps"] = res.losses.size();
    summary["final_loss"] = tail ? ojson(final_loss) : ojson(nullptr);
    summary["analytic_floor"] = floor;
    summary["checkpoint"] = "checkpoint.bin";
    write_json(dir / "summary.json", summary);
    if (tail) std::printf("final loss %s\n", format_real(final_loss).c_str());
    std::printf("analytic floor %s\n", format_real(floor).c_str());
    return kExitOk;
}

int cmd_sample(const ExperimentConfig& cfg, bool dry_run) {
    const auto& [ca_raw, cb_raw] = require_conditions(cfg);
    const Condition ca = to_condition(ca_raw), cb = to_condition(cb_raw);
    const TransportConfig tc = build_transport(cfg.transport);
    const Eigen::Index d = state_dim(cfg);
    if (dry_run) return kExitOk;
    const fs::path dir = prepare_dir(cfg, "sample");

    return with_field(cfg, [&](const auto& field) {
        std::vector<SeedStatus> status(cfg.seeds.size());
        std::vector<ojson> rows(cfg.seeds.size());
        parallel_for(cfg.seeds.size(), [&](std::size_t i) {
            const std::uint64_t seed = cfg.seeds[i];
            status[i] = guarded([&] {
                const State x0 = initial_noises(seed, d, 1).front();
                const auto sa = sample_base(field, ca, tc.grid, x0);
                const auto sb = sample_base(field, cb, tc.grid, x0);
                std::string csv = "step,t";
                for (const char* p : {"xa", "xb"}) {
                    for (Eigen::Index k = 0; k < d; ++k) csv += "," + std::string(p) + "_" + std::to_string(k);
                }
                csv += "\n";
                const auto times = tc.grid.times();
                for (std::size_t s = 0; s < sa.size(); ++s) {
                    csv += std::to_string(s) + "," + format_real(times[s]) + "," +
                           format_vector(sa[s]) + "," + format_vector(sb[s]) + "\n";
                }
                write_text(dir / (seed_name(seed) + ".csv"), csv);
                rows[i]["final_a"] = vector_json(sa.back());
                rows[i]["final_b"] = vector_json(sb.back());
            });
        });
        ojson summary;
        summary["seeds"] = ojson::array();
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            ojson row = status_json(cfg.seeds[i], status[i]);
            if (status[i].ok) row.update(rows[i]);
            summary["seeds"].push_back(row);
        }
        write_json(dir / "summary.json", summary);
        return seeds_exit_code(status);
    });
}

int cmd_joint(const ExperimentConfig& cfg, bool dry_run) {
    const auto& [ca_raw, cb_raw] = require_conditions(cfg);
    const Condition ca = to_condition(ca_raw), cb = to_condition(cb_raw);
    const TransportConfig tc = build_transport(cfg.transport);
    const Eigen::Index d = state_dim(cfg);
    if (dry_run) return kExitOk;
    const fs::path dir = prepare_dir(cfg, "joint");

    return with_field(cfg, [&](const auto& field) {
        std::vector<SeedStatus> status(cfg.seeds.size());
        std::vector<double> norms(cfg.seeds.size(), 0.0);
        parallel_for(cfg.seeds.size(), [&](std::size_t i) {
            const std::uint64_t seed = cfg.seeds[i];
            status[i] = guarded([&] {
                const State x0 = initial_noises(seed, d, 1).front();
                const TrajectoryLog log = run_joint(field, ca, cb, tc, x0);
                std::ofstream csv(dir / (seed_name(seed) + ".csv"), std::ios::binary);
                write_trajectory_csv(csv, log);
                ojson summary;
                summary["seed"] = seed;
                summary["variant"] = to_string(tc.variant);
                summary.update(trajectory_summary(log));
                write_json(dir / (seed_name(seed) + ".json"), summary);
                norms[i] = log.final_norm();
            });
        });
        ojson agg;
        agg["variant"] = to_string(tc.variant);
        agg["seeds"] = ojson::array();
        std::vector<double> ok_norms;
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            ojson row = status_json(cfg.seeds[i], status[i]);
            if (status[i].ok) {
                row["final_norm"] = norms[i];
                ok_norms.push_back(norms[i]);
            }
            agg["seeds"].push_back(row);
        }
        const MeanStd ms = mean_std(ok_norms);
        agg["completed"] = ok_norms.size();
        agg["mean_final_norm"] = ms.mean;
        agg["std_final_norm"] = ms.std;
        write_json(dir / "aggregate.json", agg);
        return seeds_exit_code(status);
    });
}

int cmd_ablate(const ExperimentConfig& cfg, bool dry_run) {
    const auto& [ca_raw, cb_raw] = require_conditions(cfg);
    const Condition ca = to_condition(ca_raw), cb = to_condition(cb_raw);
    const GaussianMixtureTarget target = build_target(require_target(cfg));
    const TransportConfig base = build_transport(cfg.transport);
    std::vector<TransportConfig> configs;
    for (const auto& name : cfg.ablation.variants) {
        TransportConfig tc = base;
        tc.variant = parse_variant(name);
        tc.validate();
        configs.push_back(tc);
    }
    if (dry_run) return kExitOk;
    const fs::path dir = prepare_dir(cfg, "ablate");
    const std::size_t nv = configs.size(), ns = cfg.seeds.size();

    return with_field(cfg, [&](const auto& field) {
        std::vector<SeedStatus> status(ns);
        std::vector<std::vector<TransportMetrics>> per(nv, std::vector<TransportMetrics>(ns));
        parallel_for(ns, [&](std::size_t s) {
            status[s] = guarded([&] {
                const auto noises =
                    initial_noises(cfg.seeds[s], target.dim(), cfg.ablation.samples_per_seed);
                for (std::size_t v = 0; v < nv; ++v) {
                    TransportMetrics acc;
                    for (const auto& x0 : noises) {
                        const TransportMetrics m = evaluate_transport(field, target, ca, cb, configs[v],
                                                                      x0, cfg.ablation.kl_sigma);
                        acc.final_norm += m.final_norm;
                        acc.midpoint_nll += m.midpoint_nll;
                        acc.kl_proxy += m.kl_proxy;
                    }
                    const double n = static_cast<double>(noises.size());
                    per[v][s] = {acc.final_norm / n, acc.midpoint_nll / n, acc.kl_proxy / n};
                }
            });
        });

        std::vector<std::size_t> ok;
        for (std::size_t s = 0; s < ns; ++s) {
            if (status[s].ok) ok.push_back(s);
        }
        const bool with_std = ok.size() > 1;
        std::string csv = "variant,seeds,final_norm_mean,midpoint_nll_mean,kl_proxy_mean";
        if (with_std) csv += ",final_norm_std,midpoint_nll_std,kl_proxy_std";
        csv += "\n";
        ojson report;
        report["samples_per_seed"] = cfg.ablation.samples_per_seed;
        report["seeds"] = ojson::array();
        for (std::size_t s = 0; s < ns; ++s) report["seeds"].push_back(status_json(cfg.seeds[s], status[s]));
        report["variants"] = ojson::array();
        std::vector<std::pair<double, std::string>> ordering;
        for (std::size_t v = 0; v < nv; ++v) {
            std::vector<double> fn, nll, kl;
            ojson rows = ojson::array();
            for (std::size_t s : ok) {
                fn.push_back(per[v][s].final_norm);
                nll.push_back(per[v][s].midpoint_nll);
                kl.push_back(per[v][s].kl_proxy);
                rows.push_back({{"seed", cfg.seeds[s]},
                                {"final_norm", fn.back()},
                                {"midpoint_nll", nll.back()},
                                {"kl_proxy", kl.back()}});
            }
            const MeanStd a = mean_std(fn), b = mean_std(nll), c = mean_std(kl);
            const std::string name = to_string(configs[v].variant);
            csv += name + "," + std::to_string(ok.size()) + "," + format_real(a.mean) + "," +
                   format_real(b.mean) + "," + format_real(c.mean);
            if (with_std) csv += "," + format_real(a.std) + "," + format_real(b.std) + "," + format_real(c.std);
            csv += "\n";
            ojson vj;
            vj["variant"] = name;
            vj["final_norm_mean"] = a.mean;
            vj["midpoint_nll_mean"] = b.mean;
            vj["kl_proxy_mean"] = c.mean;
            if (with_std) {
                vj["final_norm_std"] = a.std;
                vj["midpoint_nll_std"] = b.std;
                vj["kl_proxy_std"] = c.std;
            }
            vj["per_seed"] = rows;
            report["variants"].push_back(vj);
            ordering.emplace_back(b.mean, name);
        }
        std::stable_sort(ordering.begin(), ordering.end(),
                         [](const auto& l, const auto& r) { return l.first < r.first; });
        report["ordering_by_midpoint_nll"] = ojson::array();
        for (const auto& [_, name] : ordering) report["ordering_by_midpoint_nll"].push_back(name);

        const auto find = [&](Variant want) -> std::optional<std::size_t> {
            for (std::size_t v = 0; v < nv; ++v) {
                if (configs[v].variant == want) return v;
            }
            return std::nullopt;
        };
        if (const auto ia = find(Variant::A), id = find(Variant::D); ia && id && !ok.empty()) {
            std::size_t wins = 0;
            for (std::size_t s : ok) wins += per[*ia][s].midpoint_nll < per[*id][s].midpoint_nll;
            report["A_below_D_midpoint_nll_fraction"] =
                static_cast<double>(wins) / static_cast<double>(ok.size());
        }
        write_text(dir / "ablation.csv", csv);
        write_json(dir / "ablation.json", report);
        std::cout << csv;
        return seeds_exit_code(status);
    });
}

ojson check_json(const std::string& name, ojson parameters, ojson values, double tolerance,
                 bool passed) {
    ojson j;
    j["name"] = name;
    j["parameters"] = std::move(parameters);
    j["values"] = std::move(values);
    j["tolerance"] = tolerance;
    j["passed"] = passed;
    return j;
}

int cmd_diagnose(const ExperimentConfig& cfg, bool dry_run) {
    const TargetSpec& spec = require_target(cfg);
    const GaussianMixtureTarget target = build_target(spec);
    const auto& [ca_raw, cb_raw] = require_conditions(cfg);
    const Condition ca = to_condition(ca_raw), cb = to_condition(cb_raw);
    TransportConfig tc = build_transport(cfg.transport);
    tc.variant = Variant::A;
    std::optional<MLPField> learned;
    if (cfg.checkpoint) {
        learned = load_checkpoint(*cfg.checkpoint);
        if (learned->state_dim() != target.dim() || learned->cond_dim() != target.condition_dim()) {
            throw ConfigError("checkpoint '" + *cfg.checkpoint + "' does not match the target dimensions");
        }
    }
    if (dry_run) return kExitOk;

    const auto& dg = cfg.diagnose;
    const auto& tol = cfg.tolerances;
    ojson checks = ojson::array();

    {
        std::mt19937_64 rng(dg.seed);
        double worst = 0.0;
        bool passed = true;
        for (std::size_t i = 0; i < dg.gradcheck_networks; ++i) {
            const MLPField net = MLPField::initialized(
                target.dim(), target.condition_dim(),
                {static_cast<Eigen::Index>(3 + i % 3), 4}, rng());
            const FmBatch batch = sample_fm_batch(target, 6, spec.t_min, cfg.train.condition_range, rng);
            const GradCheck gc = gradient_check(net, batch, 1e-5, tol.gradcheck_rel);
            worst = std::max(worst, gc.max_rel_error);
            passed = passed && gc.passed;
        }
        checks.push_back(check_json("gradcheck", {{"networks", dg.gradcheck_networks}},
                                    {{"max_rel_error", worst}}, tol.gradcheck_rel, passed));
    }
    {
        const auto probes =
            oracle_probes(target, dg.oracle_probes, dg.oracle_samples, dg.oracle_bandwidth,
                          cfg.train.condition_range, dg.seed, tol.oracle_rel, tol.oracle_stderr);
        std::size_t agree = 0;
        ojson rows = ojson::array();
        for (const auto& p : probes) {
            agree += p.agrees;
            ojson r;
            r["t"] = p.t;
            r["x"] = vector_json(p.x);
            r["analytic"] = vector_json(p.analytic);
            if (p.reliable) {
                r["estimate"] = vector_json(p.estimate);
                r["stderr"] = vector_json(p.stderr_);
                r["ess"] = p.ess;
            }
            r["reliable"] = p.reliable;
            r["agrees"] = p.agrees;
            rows.push_back(r);
        }
        const double fraction =
            probes.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(probes.size());
        checks.push_back(check_json(
            "field_vs_oracle",
            {{"probes", dg.oracle_probes}, {"samples", dg.oracle_samples},
             {"bandwidth", dg.oracle_bandwidth}, {"rel_tol", tol.oracle_rel},
             {"stderr_multiple", tol.oracle_stderr}},
            {{"agreeing_fraction", fraction}, {"probes", rows}}, tol.oracle_min_fraction,
            fraction >= tol.oracle_min_fraction));
    }
    {
        const GmmField field{target, spec.t_min};
        const State x0 = initial_noises(dg.seed, target.dim(), 1).front();
        const ResidualScaling rs =
            residual_scaling(field, ca, cb, tc, x0, cfg.transport.steps, [&](std::size_t n) {
                return build_weights(cfg.transport.weight_schedule, n);
            });
        checks.push_back(check_json("norm_derivative_residual",
                                    {{"steps", cfg.transport.steps}, {"expected_slope", 1.0}},
                                    {{"dt", rs.dts}, {"max_residual", rs.max_residuals},
                                     {"slope", rs.slope}},
                                    tol.residual_slope,
                                    std::abs(rs.slope - 1.0) <= tol.residual_slope));
    }
    {
        const KlLeadingOrder kl = kl_leading_order(dg.kl_sigma, dg.kl_resolution);
        checks.push_back(check_json(
            "kl_leading_order", {{"sigma", dg.kl_sigma}, {"resolution", dg.kl_resolution}},
            {{"proxy", kl.proxy}, {"numerical", kl.numerical}, {"ratio", kl.ratio},
             {"proxy_sigma2", kl.proxy_sigma2}, {"proxy_sigma2_at_10_sigma", kl.proxy_sigma2_wide}},
            tol.kl_ratio, std::abs(kl.ratio - 1.0) <= tol.kl_ratio));
    }
    if (learned) {
        const Condition mid = interpolate_condition(ca, cb, 0.5);
        const double rms = field_rms_error(*learned, target, mid);
        checks.push_back(check_json("learned_field_rms", {{"checkpoint", *cfg.checkpoint}},
                                    {{"rms", rms}}, tol.learned_rms, rms <= tol.learned_rms));
    }

    bool all = true;
    for (const auto& c : checks) all = all && c["passed"].get<bool>();
    ojson report;
    report["passed"] = all;
    report["checks"] = checks;
    const fs::path dir = prepare_dir(cfg, "diagnose");
    write_json(dir / "diagnostics.json", report);
    for (const auto& c : checks) {
        std::printf("%-26s %s\n", c["name"].get<std::string>().c_str(),
                    c["passed"].get<bool>() ? "pass" : "FAIL");
    }
    return all ? kExitOk : kExitDiagnostic;
}

int run(const Options& opt) {
    ExperimentConfig cfg = load_config(opt.config_path);
    if (opt.seed) {
        cfg.seeds = {*opt.seed};
        cfg.train.seed = *opt.seed;
        cfg.diagnose.seed = *opt.seed;
    }
    if (opt.out) cfg.output_dir = *opt.out;
    validate_config(cfg);

    int code = kExitOk;
    if (opt.command == "train") code = cmd_train(cfg, opt.dry_run);
    else if (opt.command == "sample") code = cmd_sample(cfg, opt.dry_run);
    else if (opt.command == "joint") code = cmd_joint(cfg, opt.dry_run);
    else if (opt.command == "ablate") code = cmd_ablate(cfg, opt.dry_run);
    else code = cmd_diagnose(cfg, opt.dry_run);
    if (opt.dry_run) std::cout << serialize_config(cfg);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint segment transport experiments"};
    app.require_subcommand(1);
    Options opt;
    for (const char* name : {"train", "sample", "joint", "ablate", "diagnose"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config_path, "experiment config (JSON)")->required();
        sub->add_option("--seed", opt.seed, "override the seed list with a single seed");
        sub->add_option("--out", opt.out, "override output_dir");
        sub->add_flag("--dry-run", opt.dry_run, "validate and print the resolved config");
        sub->callback([&opt, name] { opt.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }
    try {
        return run(opt);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << " (step " << e.step() << ")\n";
        return kExitDivergence;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}
