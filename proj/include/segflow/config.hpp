#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "segflow/diagnostics.hpp"
#include "segflow/mlp.hpp"
#include "segflow/transport.hpp"

namespace segflow {

inline constexpr int kSchemaVersion = 1;

// Weight schedule: a preset name or inline breakpoints.
struct WeightSpec {
    std::string preset = "paper-image";
    std::vector<std::pair<std::size_t, double>> breakpoints;
    bool allow_non_monotone = false;

    bool operator==(const WeightSpec&) const = default;
};

// Alpha density: a preset name or inline atoms (location, mass) and
// pieces (lower, upper, mass).
struct DensitySpec {
    std::string preset = "uniform";
    std::vector<std::pair<double, double>> atoms;
    std::vector<std::array<double, 3>> pieces;

    bool operator==(const DensitySpec&) const = default;
};

struct TargetSpec {
    std::vector<double> weights;
    std::vector<std::vector<double>> means;
    std::vector<std::vector<double>> variances;
    // one d x m map shared by all components, or one per component
    std::vector<std::vector<std::vector<double>>> condition_maps;
    bool shared_map = true;
    double t_min = kDefaultTMin;

    bool operator==(const TargetSpec&) const = default;
};

struct TransportSpec {
    std::string variant = "A";
    std::size_t k = 4;
    std::size_t steps = kPresetReferenceSteps;
    WeightSpec weight_schedule;
    DensitySpec density;
    double midpoint_share = 0.5;
    std::string estimator = "grid";  // or "monte_carlo"
    std::size_t estimator_samples = 1000;
    std::uint64_t estimator_seed = 0;
    std::optional<std::size_t> cutoff;
    double delta_min = kDefaultDeltaMin;

    bool operator==(const TransportSpec&) const = default;
};

struct TrainSpec {
    std::vector<std::size_t> hidden{64, 64};
    std::size_t batch_size = 256;
    std::size_t steps = 5000;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";
    std::uint64_t seed = 0;
    double condition_range = 1.0;

    bool operator==(const TrainSpec&) const = default;
};

struct AblationSpec {
    std::size_t samples_per_seed = 32;
    std::vector<std::string> variants{"A", "B", "C", "D"};
    double kl_sigma = 0.05;

    bool operator==(const AblationSpec&) const = default;
};

struct DiagnoseSpec {
    std::uint64_t seed = 0;
    std::size_t gradcheck_networks = 5;
    std::size_t oracle_probes = 10;
    std::size_t oracle_samples = 100000;
    double oracle_bandwidth = 0.05;
    double kl_sigma = 1e-2;
    std::size_t kl_resolution = 20001;

    bool operator==(const DiagnoseSpec&) const = default;
};

struct Tolerances {
    double gradcheck_rel = 1e-4;
    double oracle_rel = 0.02;
    double oracle_stderr = 3.0;
    double oracle_min_fraction = 0.9;
    double residual_slope = 0.2;
    double kl_ratio = 0.05;
    double learned_rms = 0.1;

    bool operator==(const Tolerances&) const = default;
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::optional<TargetSpec> target;
    std::optional<std::string> checkpoint;
    std::optional<std::pair<std::vector<double>, std::vector<double>>> conditions;
    TransportSpec transport;
    TrainSpec train;
    AblationSpec ablation;
    DiagnoseSpec diagnose;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "out";
    Tolerances tolerances;

    bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

using json = nlohmann::json;

// Typed access with the JSON path in every error message.
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const json& raw() const { return j_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError("config field '" + path_ + "': " + msg);
    }

    void require_object(const std::set<std::string>& allowed) const {
        if (!j_.is_object()) fail("expected an object");
        for (const auto& [key, _] : j_.items()) {
            if (!allowed.count(key)) {
                throw ConfigError("config field '" + join(key) + "': unknown key");
            }
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    Node at(const std::string& key) const {
        if (!j_.contains(key)) throw ConfigError("config field '" + join(key) + "': missing");
        return Node(j_.at(key), join(key));
    }

    Node at(std::size_t i) const { return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

    std::size_t size() const {
        if (!j_.is_array()) fail("expected an array");
        return j_.size();
    }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        const double v = j_.get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }

    std::uint64_t unsigned_integer() const {
        if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0)) {
            fail("expected a non-negative integer");
        }
        return j_.get<std::uint64_t>();
    }

    std::size_t count() const { return static_cast<std::size_t>(unsigned_integer()); }

    bool boolean() const {
        if (!j_.is_boolean()) fail("expected true or false");
        return j_.get<bool>();
    }

    std::string string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }

    std::vector<double> numbers() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).number());
        return out;
    }

    std::vector<std::vector<double>> matrix() const {
        std::vector<std::vector<double>> out;
        for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).numbers());
        return out;
    }

private:
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json& j_;
    std::string path_;
};

inline TargetSpec parse_target(const Node& n) {
    n.require_object({"weights", "means", "variances", "condition_map", "condition_maps", "t_min"});
    TargetSpec t;
    t.weights = n.at("weights").numbers();
    t.means = n.at("means").matrix();
    t.variances = n.at("variances").matrix();
    if (n.has("condition_map") && n.has("condition_maps")) {
        n.fail("give either condition_map or condition_maps, not both");
    }
    if (n.has("condition_maps")) {
        const Node maps = n.at("condition_maps");
        for (std::size_t i = 0; i < maps.size(); ++i) t.condition_maps.push_back(maps.at(i).matrix());
        t.shared_map = false;
    } else if (n.has("condition_map")) {
        t.condition_maps.push_back(n.at("condition_map").matrix());
    }
    if (n.has("t_min")) t.t_min = n.at("t_min").number();
    return t;
}

inline WeightSpec parse_weights(const Node& n) {
    WeightSpec w;
    if (n.raw().is_string()) {
        w.preset = n.string();
        return w;
    }
    w.preset.clear();
    if (n.raw().is_number()) {
        w.breakpoints = {{0, n.number()}};
        return w;
    }
    n.require_object({"breakpoints", "allow_non_monotone"});
    const Node bps = n.at("breakpoints");
    for (std::size_t i = 0; i < bps.size(); ++i) {
        const Node bp = bps.at(i);
        if (bp.size() != 2) bp.fail("expected [step, weight]");
        w.breakpoints.emplace_back(bp.at(0).count(), bp.at(1).number());
    }
    if (n.has("allow_non_monotone")) w.allow_non_monotone = n.at("allow_non_monotone").boolean();
    return w;
}

inline DensitySpec parse_density(const Node& n) {
    DensitySpec d;
    if (n.raw().is_string()) {
        d.preset = n.string();
        return d;
    }
    d.preset.clear();
    n.require_object({"atoms", "pieces"});
    if (n.has("atoms")) {
        const Node atoms = n.at("atoms");
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            const auto a = atoms.at(i).numbers();
            if (a.size() != 2) atoms.at(i).fail("expected [location, mass]");
            d.atoms.emplace_back(a[0], a[1]);
        }
    }
    if (n.has("pieces")) {
        const Node pieces = n.at("pieces");
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            const auto p = pieces.at(i).numbers();
            if (p.size() != 3) pieces.at(i).fail("expected [lower, upper, mass]");
            d.pieces.push_back({p[0], p[1], p[2]});
        }
    }
    return d;
}

inline TransportSpec parse_transport(const Node& n) {
    n.require_object({"variant", "k", "steps", "weight_schedule", "density", "midpoint_share",
                      "estimator", "cutoff", "delta_min"});
    TransportSpec t;
    if (n.has("variant")) t.variant = n.at("variant").string();
    if (n.has("k")) t.k = n.at("k").count();
    if (n.has("steps")) t.steps = n.at("steps").count();
    if (n.has("weight_schedule")) t.weight_schedule = parse_weights(n.at("weight_schedule"));
    if (n.has("density")) t.density = parse_density(n.at("density"));
    if (n.has("midpoint_share")) t.midpoint_share = n.at("midpoint_share").number();
    if (n.has("estimator")) {
        const Node e = n.at("estimator");
        if (e.raw().is_string()) {
            t.estimator = e.string();
        } else {
            e.require_object({"kind", "samples", "seed"});
            t.estimator = e.at("kind").string();
            if (e.has("samples")) t.estimator_samples = e.at("samples").count();
            if (e.has("seed")) t.estimator_seed = e.at("seed").unsigned_integer();
        }
        if (t.estimator != "grid" && t.estimator != "monte_carlo") {
            e.fail("estimator must be \"grid\" or \"monte_carlo\"");
        }
    }
    if (n.has("cutoff")) t.cutoff = n.at("cutoff").count();
    if (n.has("delta_min")) t.delta_min = n.at("delta_min").number();
    return t;
}

inline TrainSpec parse_train(const Node& n) {
    n.require_object({"hidden", "batch_size", "steps", "learning_rate", "optimizer", "seed",
                      "condition_range"});
    TrainSpec t;
    if (n.has("hidden")) {
        const Node h = n.at("hidden");
        t.hidden.clear();
        for (std::size_t i = 0; i < h.size(); ++i) t.hidden.push_back(h.at(i).count());
    }
    if (n.has("batch_size")) t.batch_size = n.at("batch_size").count();
    if (n.has("steps")) t.steps = n.at("steps").count();
    if (n.has("learning_rate")) t.learning_rate = n.at("learning_rate").number();
    if (n.has("optimizer")) {
        t.optimizer = n.at("optimizer").string();
        if (t.optimizer != "adam" && t.optimizer != "sgd") {
            n.at("optimizer").fail("optimizer must be \"adam\" or \"sgd\"");
        }
    }
    if (n.has("seed")) t.seed = n.at("seed").unsigned_integer();
    if (n.has("condition_range")) t.condition_range = n.at("condition_range").number();
    return t;
}

inline AblationSpec parse_ablation(const Node& n) {
    n.require_object({"samples_per_seed", "variants", "kl_sigma"});
    AblationSpec a;
    if (n.has("samples_per_seed")) a.samples_per_seed = n.at("samples_per_seed").count();
    if (n.has("variants")) {
        const Node v = n.at("variants");
        a.variants.clear();
        for (std::size_t i = 0; i < v.size(); ++i) {
            a.variants.push_back(v.at(i).string());
            try {
                parse_variant(a.variants.back());
            } catch (const ConfigError& e) {
                v.at(i).fail(e.what());
            }
        }
    }
    if (n.has("kl_sigma")) a.kl_sigma = n.at("kl_sigma").number();
    return a;
}

inline DiagnoseSpec parse_diagnose(const Node& n) {
    n.require_object({"seed", "gradcheck_networks", "oracle_probes", "oracle_samples",
                      "oracle_bandwidth", "kl_sigma", "kl_resolution"});
    DiagnoseSpec d;
    if (n.has("seed")) d.seed = n.at("seed").unsigned_integer();
    if (n.has("gradcheck_networks")) d.gradcheck_networks = n.at("gradcheck_networks").count();
    if (n.has("oracle_probes")) d.oracle_probes = n.at("oracle_probes").count();
    if (n.has("oracle_samples")) d.oracle_samples = n.at("oracle_samples").count();
    if (n.has("oracle_bandwidth")) d.oracle_bandwidth = n.at("oracle_bandwidth").number();
    if (n.has("kl_sigma")) d.kl_sigma = n.at("kl_sigma").number();
    if (n.has("kl_resolution")) d.kl_resolution = n.at("kl_resolution").count();
    return d;
}

inline Tolerances parse_tolerances(const Node& n) {
    n.require_object({"gradcheck_rel", "oracle_rel", "oracle_stderr", "oracle_min_fraction",
                      "residual_slope", "kl_ratio", "learned_rms"});
    Tolerances t;
    auto opt = [&](const char* key, double& out) {
        if (n.has(key)) {
            out = n.at(key).number();
            if (out < 0.0) n.at(key).fail("tolerance must be >= 0");
        }
    };
    opt("gradcheck_rel", t.gradcheck_rel);
    opt("oracle_rel", t.oracle_rel);
    opt("oracle_stderr", t.oracle_stderr);
    opt("oracle_min_fraction", t.oracle_min_fraction);
    opt("residual_slope", t.residual_slope);
    opt("kl_ratio", t.kl_ratio);
    opt("learned_rms", t.learned_rms);
    return t;
}

}  // namespace detail

// Parses and validates the document; ConfigError carries the offending field
// path, or the line and column for malformed JSON.
inline ExperimentConfig parse_config(const std::string& text) {
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::parse_error& e) {
        throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
    const detail::Node root(j, "");
    root.require_object({"schema_version", "target", "checkpoint", "conditions", "transport",
                         "train", "ablation", "diagnose", "seeds", "output_dir", "tolerances"});
    ExperimentConfig cfg;
    const auto version = root.at("schema_version").unsigned_integer();
    if (version != static_cast<std::uint64_t>(kSchemaVersion)) {
        root.at("schema_version").fail("unsupported schema version " + std::to_string(version));
    }
    if (root.has("target")) cfg.target = detail::parse_target(root.at("target"));
    if (root.has("checkpoint")) cfg.checkpoint = root.at("checkpoint").string();
    if (root.has("conditions")) {
        const auto c = root.at("conditions");
        c.require_object({"a", "b"});
        cfg.conditions = std::make_pair(c.at("a").numbers(), c.at("b").numbers());
    }
    if (root.has("transport")) cfg.transport = detail::parse_transport(root.at("transport"));
    if (root.has("train")) cfg.train = detail::parse_train(root.at("train"));
    if (root.has("ablation")) cfg.ablation = detail::parse_ablation(root.at("ablation"));
    if (root.has("diagnose")) cfg.diagnose = detail::parse_diagnose(root.at("diagnose"));
    if (root.has("seeds")) {
        const auto s = root.at("seeds");
        cfg.seeds.clear();
        for (std::size_t i = 0; i < s.size(); ++i) cfg.seeds.push_back(s.at(i).unsigned_integer());
        if (cfg.seeds.empty()) s.fail("at least one seed is required");
    }
    if (root.has("output_dir")) cfg.output_dir = root.at("output_dir").string();
    if (root.has("tolerances")) cfg.tolerances = detail::parse_tolerances(root.at("tolerances"));
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
    using oj = nlohmann::ordered_json;
    oj j;
    j["schema_version"] = cfg.schema_version;
    if (cfg.target) {
        const auto& t = *cfg.target;
        oj tj;
        tj["weights"] = t.weights;
        tj["means"] = t.means;
        tj["variances"] = t.variances;
        if (t.shared_map) {
            if (!t.condition_maps.empty()) tj["condition_map"] = t.condition_maps.front();
        } else {
            tj["condition_maps"] = t.condition_maps;
        }
        tj["t_min"] = t.t_min;
        j["target"] = tj;
    }
    if (cfg.checkpoint) j["checkpoint"] = *cfg.checkpoint;
    if (cfg.conditions) j["conditions"] = {{"a", cfg.conditions->first}, {"b", cfg.conditions->second}};

    const auto& t = cfg.transport;
    oj tj;
    tj["variant"] = t.variant;
    tj["k"] = t.k;
    tj["steps"] = t.steps;
    if (!t.weight_schedule.preset.empty()) {
        tj["weight_schedule"] = t.weight_schedule.preset;
    } else {
        oj bps = oj::array();
        for (const auto& [s, w] : t.weight_schedule.breakpoints) bps.push_back({s, w});
        tj["weight_schedule"] = {{"breakpoints", bps},
                                 {"allow_non_monotone", t.weight_schedule.allow_non_monotone}};
    }
    if (!t.density.preset.empty()) {
        tj["density"] = t.density.preset;
    } else {
        oj atoms = oj::array();
        for (const auto& [loc, mass] : t.density.atoms) atoms.push_back({loc, mass});
        oj pieces = oj::array();
        for (const auto& p : t.density.pieces) pieces.push_back(p);
        tj["density"] = {{"atoms", atoms}, {"pieces", pieces}};
    }
    tj["midpoint_share"] = t.midpoint_share;
    tj["estimator"] = {{"kind", t.estimator}, {"samples", t.estimator_samples},
                       {"seed", t.estimator_seed}};
    if (t.cutoff) tj["cutoff"] = *t.cutoff;
    tj["delta_min"] = t.delta_min;
    j["transport"] = tj;

    const auto& tr = cfg.train;
    j["train"] = {{"hidden", tr.hidden},
                  {"batch_size", tr.batch_size},
                  {"steps", tr.steps},
                  {"learning_rate", tr.learning_rate},
                  {"optimizer", tr.optimizer},
                  {"seed", tr.seed},
                  {"condition_range", tr.condition_range}};
    j["ablation"] = {{"samples_per_seed", cfg.ablation.samples_per_seed},
                     {"variants", cfg.ablation.variants},
                     {"kl_sigma", cfg.ablation.kl_sigma}};
    const auto& d = cfg.diagnose;
    j["diagnose"] = {{"seed", d.seed},
                     {"gradcheck_networks", d.gradcheck_networks},
                     {"oracle_probes", d.oracle_probes},
                     {"oracle_samples", d.oracle_samples},
                     {"oracle_bandwidth", d.oracle_bandwidth},
                     {"kl_sigma", d.kl_sigma},
                     {"kl_resolution", d.kl_resolution}};
    j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir;
    const auto& tol = cfg.tolerances;
    j["tolerances"] = {{"gradcheck_rel", tol.gradcheck_rel},
                       {"oracle_rel", tol.oracle_rel},
                       {"oracle_stderr", tol.oracle_stderr},
                       {"oracle_min_fraction", tol.oracle_min_fraction},
                       {"residual_slope", tol.residual_slope},
                       {"kl_ratio", tol.kl_ratio},
                       {"learned_rms", tol.learned_rms}};
    return j;
}

inline std::string serialize_config(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

// ---- resolution into library objects ----

inline GaussianMixtureTarget build_target(const TargetSpec& t) {
    auto to_vec = [](const std::vector<double>& v) {
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval();
    };
    auto to_mat = [](const std::vector<std::vector<double>>& rows, Eigen::Index d) {
        const Eigen::Index m = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
        if (static_cast<Eigen::Index>(rows.size()) != d) {
            throw ConfigError("target: condition map needs one row per state dimension");
        }
        Eigen::MatrixXd out(d, m);
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto& r = rows[static_cast<std::size_t>(i)];
            if (static_cast<Eigen::Index>(r.size()) != m) {
                throw ConfigError("target: condition map rows differ in length");
            }
            for (Eigen::Index k = 0; k < m; ++k) out(i, k) = r[static_cast<std::size_t>(k)];
        }
        return out;
    };
    if (t.means.empty()) throw ConfigError("target: at least one component is required");
    const auto d = static_cast<Eigen::Index>(t.means.front().size());
    std::vector<Eigen::VectorXd> means, vars;
    for (const auto& m : t.means) means.push_back(to_vec(m));
    for (const auto& v : t.variances) vars.push_back(to_vec(v));
    std::vector<Eigen::MatrixXd> maps;
    for (const auto& m : t.condition_maps) maps.push_back(to_mat(m, d));
    return GaussianMixtureTarget(to_vec(t.weights), means, vars, maps);
}

inline WeightSchedule build_weights(const WeightSpec& w, std::size_t steps) {
    if (!w.preset.empty()) return weight_preset(w.preset, steps);
    std::vector<Breakpoint> bps;
    for (const auto& [s, v] : w.breakpoints) bps.push_back({s, v});
    return WeightSchedule(bps, w.allow_non_monotone);
}

inline AlphaDensity build_density(const DensitySpec& d) {
    if (!d.preset.empty()) return density_preset(d.preset);
    std::vector<Atom> atoms;
    for (const auto& [loc, mass] : d.atoms) atoms.push_back({loc, mass});
    std::vector<Piece> pieces;
    for (const auto& p : d.pieces) pieces.push_back({p[0], p[1], p[2]});
    return AlphaDensity(atoms, pieces);
}

inline TransportConfig build_transport(const TransportSpec& t) {
    TransportConfig out;
    out.variant = parse_variant(t.variant);
    out.k = t.k;
    if (t.steps == 0) throw ConfigError("transport: steps must be positive");
    out.grid = TimeGrid::uniform(t.steps);
    out.weights = build_weights(t.weight_schedule, t.steps);
    out.density = build_density(t.density);
    out.midpoint_share = t.midpoint_share;
    out.estimator = t.estimator == "grid" ? Estimator::grid()
                                          : Estimator::monte_carlo(t.estimator_samples, t.estimator_seed);
    if (out.estimator.kind == Estimator::Kind::MonteCarlo && out.estimator.samples == 0) {
        throw ConfigError("transport: Monte Carlo estimator needs samples > 0");
    }
    out.cutoff = t.cutoff;
    out.delta_min = t.delta_min;
    out.validate();
    return out;
}

inline TrainConfig build_train(const TrainSpec& t, double t_min) {
    TrainConfig out;
    out.hidden.assign(t.hidden.begin(), t.hidden.end());
    out.batch_size = t.batch_size;
    out.steps = t.steps;
    out.learning_rate = t.learning_rate;
    out.optimizer = t.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    out.seed = t.seed;
    out.t_min = t_min;
    out.condition_range = t.condition_range;
    out.validate();
    return out;
}

// Checks everything that can be checked without running: builds the target,
// transport and training objects and cross-checks dimensions.
inline void validate_config(const ExperimentConfig& cfg) {
    build_transport(cfg.transport);
    if (cfg.target) {
        const auto target = build_target(*cfg.target);
        build_train(cfg.train, cfg.target->t_min);
        if (cfg.conditions) {
            for (const auto* c : {&cfg.conditions->first, &cfg.conditions->second}) {
                if (static_cast<Eigen::Index>(c->size()) != target.condition_dim()) {
                    throw ConfigError("conditions: expected " +
                                      std::to_string(target.condition_dim()) +
                                      " entries to match the target's condition map");
                }
            }
        }
    }
    if (cfg.conditions &&
        cfg.conditions->first.size() != cfg.conditions->second.size()) {
        throw ConfigError("conditions: a and b differ in length");
    }
    if (cfg.ablation.samples_per_seed == 0) throw ConfigError("ablation: samples_per_seed must be positive");
    if (!(cfg.ablation.kl_sigma > 0.0)) throw ConfigError("ablation: kl_sigma must be positive");
    if (!(cfg.diagnose.kl_sigma > 0.0)) throw ConfigError("diagnose: kl_sigma must be positive");
}

}  // namespace segflow
