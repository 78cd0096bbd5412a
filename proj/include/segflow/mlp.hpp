#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "segflow/fields.hpp"

namespace segflow {

// Fully connected velocity network on the concatenated input (x, t, c):
// tanh hidden layers, linear output of size d. Layer l maps widths[l] to
// widths[l + 1] with weights W_l (widths[l+1] x widths[l]) and bias b_l.
class MLPField {
public:
    MLPField() = default;

    MLPField(Eigen::Index state_dim, Eigen::Index cond_dim, const std::vector<Eigen::Index>& hidden)
        : state_dim_(state_dim), cond_dim_(cond_dim) {
        if (state_dim < 1 || cond_dim < 0) throw ConfigError("MLPField: invalid dimensions");
        widths_.push_back(state_dim + 1 + cond_dim);
        for (auto h : hidden) {
            if (h < 1) throw ConfigError("MLPField: hidden widths must be >= 1");
            widths_.push_back(h);
        }
        widths_.push_back(state_dim);
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            weights_.push_back(Eigen::MatrixXd::Zero(widths_[l + 1], widths_[l]));
            biases_.push_back(Eigen::VectorXd::Zero(widths_[l + 1]));
        }
    }

    // Glorot-uniform weights, zero biases.
    static MLPField initialized(Eigen::Index state_dim, Eigen::Index cond_dim,
                                const std::vector<Eigen::Index>& hidden, std::uint64_t seed) {
        MLPField f(state_dim, cond_dim, hidden);
        std::mt19937_64 rng(seed);
        for (auto& w : f.weights_) {
            const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            std::uniform_real_distribution<double> dist(-limit, limit);
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
            }
        }
        return f;
    }

    Eigen::Index state_dim() const { return state_dim_; }
    Eigen::Index cond_dim() const { return cond_dim_; }
    const std::vector<Eigen::Index>& widths() const { return widths_; }
    std::size_t layers() const { return weights_.size(); }
    const Eigen::MatrixXd& weight(std::size_t l) const { return weights_[l]; }
    const Eigen::VectorXd& bias(std::size_t l) const { return biases_[l]; }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
        return n;
    }

    // Flat parameter vector: per layer, W row-major then b.
    Eigen::VectorXd parameters() const {
        Eigen::VectorXd p(parameter_count());
        Eigen::Index o = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            const auto& w = weights_[l];
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) p(o++) = w(i, j);
            }
            p.segment(o, biases_[l].size()) = biases_[l];
            o += biases_[l].size();
        }
        return p;
    }

    void set_parameters(const Eigen::VectorXd& p) {
        if (p.size() != parameter_count()) throw ContractError("MLPField: wrong parameter count");
        Eigen::Index o = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            auto& w = weights_[l];
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = p(o++);
            }
            biases_[l] = p.segment(o, biases_[l].size());
            o += biases_[l].size();
        }
    }

    // Column-wise forward pass. When `activations` is given it receives the
    // input and every layer output (needed for backprop).
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input,
                            std::vector<Eigen::MatrixXd>* activations = nullptr) const {
        if (input.rows() != widths_.front()) throw ContractError("MLPField: bad input width");
        Eigen::MatrixXd a = input;
        if (activations) {
            activations->clear();
            activations->push_back(a);
        }
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            Eigen::MatrixXd z = weights_[l] * a;
            z.colwise() += biases_[l];
            a = l + 1 < weights_.size() ? Eigen::MatrixXd(z.array().tanh()) : z;
            if (activations) activations->push_back(a);
        }
        return a;
    }

    Eigen::VectorXd operator()(const State& x, double t, const Condition& c) const {
        require_same_dim(x.size(), state_dim_, "MLPField state");
        require_same_dim(c.size(), cond_dim_, "MLPField condition");
        Eigen::VectorXd in(widths_.front());
        in << x, t, c;
        return forward(in).col(0);
    }

private:
    Eigen::Index state_dim_ = 0;
    Eigen::Index cond_dim_ = 0;
    std::vector<Eigen::Index> widths_;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
};

// Flow-matching training batch, one sample per column.
struct FmBatch {
    Eigen::MatrixXd x0;    // d x B
    Eigen::MatrixXd eps;   // d x B
    Eigen::RowVectorXd t;  // 1 x B
    Eigen::MatrixXd c;     // m x B

    Eigen::Index size() const { return x0.cols(); }

    Eigen::MatrixXd interpolated() const {
        return x0 * Eigen::DiagonalMatrix<double, Eigen::Dynamic>((1.0 - t.array()).matrix()) +
               eps * Eigen::DiagonalMatrix<double, Eigen::Dynamic>(t.transpose());
    }

    Eigen::MatrixXd network_input() const {
        Eigen::MatrixXd in(x0.rows() + 1 + c.rows(), size());
        in.topRows(x0.rows()) = interpolated();
        in.row(x0.rows()) = t;
        in.bottomRows(c.rows()) = c;
        return in;
    }

    Eigen::MatrixXd regression_target() const { return eps - x0; }
};

// Mean over the batch of ||(eps - x0) - v(x_t, t, c)||^2.
inline double fm_loss(const MLPField& field, const FmBatch& batch) {
    if (batch.size() == 0) throw ContractError("fm_loss: empty batch");
    const Eigen::MatrixXd r = field.forward(batch.network_input()) - batch.regression_target();
    return r.squaredNorm() / static_cast<double>(batch.size());
}

struct LossAndGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;  // same layout as MLPField::parameters()
};

// Exact gradient of fm_loss by backpropagation.
inline LossAndGradient fm_gradient(const MLPField& field, const FmBatch& batch) {
    if (batch.size() == 0) throw ContractError("fm_gradient: empty batch");
    std::vector<Eigen::MatrixXd> acts;
    const Eigen::MatrixXd out = field.forward(batch.network_input(), &acts);
    const Eigen::MatrixXd r = out - batch.regression_target();
    const double n = static_cast<double>(batch.size());

    LossAndGradient res;
    res.loss = r.squaredNorm() / n;
    res.gradient.resize(field.parameter_count());

    std::vector<Eigen::MatrixXd> dw(field.layers());
    std::vector<Eigen::VectorXd> db(field.layers());
    Eigen::MatrixXd delta = (2.0 / n) * r;
    for (std::size_t l = field.layers(); l-- > 0;) {
        if (l + 1 < field.layers()) {
            delta = (delta.array() * (1.0 - acts[l + 1].array().square())).matrix();
        }
        dw[l] = delta * acts[l].transpose();
        db[l] = delta.rowwise().sum();
        if (l > 0) delta = field.weight(l).transpose() * delta;
    }
    Eigen::Index o = 0;
    for (std::size_t l = 0; l < field.layers(); ++l) {
        for (Eigen::Index i = 0; i < dw[l].rows(); ++i) {
            for (Eigen::Index j = 0; j < dw[l].cols(); ++j) res.gradient(o++) = dw[l](i, j);
        }
        res.gradient.segment(o, db[l].size()) = db[l];
        o += db[l].size();
    }
    return res;
}

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
    std::vector<Eigen::Index> hidden{64, 64};
    std::size_t batch_size = 256;
    std::size_t steps = 5000;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;
    double t_min = kDefaultTMin;
    // Training conditions are drawn uniformly from [-r, r]^m.
    double condition_range = 1.0;

    void validate() const {
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("train: t_min must be in (0,1)");
        if (!(condition_range >= 0.0)) throw ConfigError("train: condition_range must be >= 0");
        for (auto h : hidden) {
            if (h < 1) throw ConfigError("train: hidden widths must be positive");
        }
    }
};

// x0 ~ target(c), eps ~ N(0, I), t ~ U[t_min, 1], c ~ U[-r, r]^m.
inline FmBatch sample_fm_batch(const GaussianMixtureTarget& target, std::size_t n, double t_min,
                               double condition_range, std::mt19937_64& rng) {
    const auto d = target.dim();
    const auto m = target.condition_dim();
    const auto cols = static_cast<Eigen::Index>(n);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    FmBatch b;
    b.x0.resize(d, cols);
    b.eps.resize(d, cols);
    b.t.resize(cols);
    b.c.resize(m, cols);
    Condition c(m);
    for (Eigen::Index i = 0; i < cols; ++i) {
        for (Eigen::Index k = 0; k < m; ++k) c(k) = condition_range * (2.0 * uni(rng) - 1.0);
        double r = uni(rng);
        std::size_t j = 0;
        while (j + 1 < target.components() && r >= target.weights()(static_cast<Eigen::Index>(j))) {
            r -= target.weights()(static_cast<Eigen::Index>(j));
            ++j;
        }
        const Eigen::VectorXd mean = target.mean(j, c);
        for (Eigen::Index k = 0; k < d; ++k) {
            b.x0(k, i) = mean(k) + std::sqrt(target.variances()[j](k)) * normal(rng);
        }
        for (Eigen::Index k = 0; k < d; ++k) b.eps(k, i) = normal(rng);
        b.t(i) = t_min + (1.0 - t_min) * uni(rng);
        b.c.col(i) = c;
    }
    return b;
}

struct TrainResult {
    MLPField field;
    std::vector<double> losses;  // batch loss before each update
};

inline TrainResult train(const GaussianMixtureTarget& target, const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    TrainResult res;
    res.field = MLPField::initialized(target.dim(), target.condition_dim(), cfg.hidden, rng());
    res.losses.reserve(cfg.steps);

    Eigen::VectorXd params = res.field.parameters();
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(params.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(params.size());
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const FmBatch batch =
            sample_fm_batch(target, cfg.batch_size, cfg.t_min, cfg.condition_range, rng);
        const LossAndGradient lg = fm_gradient(res.field, batch);
        if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
            throw DivergenceError("training loss diverged", step);
        }
        res.losses.push_back(lg.loss);
        if (cfg.optimizer == OptimizerKind::Sgd) {
            params -= cfg.learning_rate * lg.gradient;
        } else {
            const double k = static_cast<double>(step + 1);
            m1 = beta1 * m1 + (1.0 - beta1) * lg.gradient;
            m2 = beta2 * m2 + (1.0 - beta2) * lg.gradient.cwiseAbs2();
            const double c1 = 1.0 - std::pow(beta1, k);
            const double c2 = 1.0 - std::pow(beta2, k);
            params.array() -= cfg.learning_rate * (m1.array() / c1) /
                              ((m2.array() / c2).sqrt() + eps);
        }
        if (!params.allFinite()) throw DivergenceError("parameters became non-finite", step);
        res.field.set_parameters(params);
    }
    return res;
}

// Irreducible flow-matching loss E||(eps - x0) - v*(x_t, t, c)||^2 of the exact
// field, estimated on n fresh samples from the training distribution.
inline double flow_matching_floor(const GaussianMixtureTarget& target, std::size_t n,
                                  double t_min, double condition_range, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const FmBatch b = sample_fm_batch(target, n, t_min, condition_range, rng);
    const Eigen::MatrixXd xt = b.interpolated();
    const Eigen::MatrixXd y = b.regression_target();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const Eigen::VectorXd c = b.c.col(i);
        acc += (y.col(i) - gmm_velocity(target, xt.col(i), b.t(i), c, t_min)).squaredNorm();
    }
    return acc / static_cast<double>(n);
}

// Checkpoint layout (little-endian):
//   char[8]  magic "SEGFLOW\0"
//   uint32   format version (1)
//   uint32   number of widths L+1
//   uint32   widths[L+1]             input = d + 1 + m, output = d
//   uint32   condition dimension m
//   float64  parameters             per layer: W row-major, then b
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'F', 'L', 'O', 'W', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const MLPField& field, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
    auto put_u32 = [&](std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16),
                                    static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    };
    os.write(kCheckpointMagic, 8);
    put_u32(kCheckpointVersion);
    put_u32(static_cast<std::uint32_t>(field.widths().size()));
    for (auto w : field.widths()) put_u32(static_cast<std::uint32_t>(w));
    put_u32(static_cast<std::uint32_t>(field.cond_dim()));
    const Eigen::VectorXd p = field.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &p(i), 8);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
        os.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!os) throw ConfigError("failed writing checkpoint '" + path + "'");
}

inline MLPField load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
    auto fail = [&](const std::string& why) {
        return ConfigError("corrupted checkpoint '" + path + "': " + why);
    };
    auto get_u32 = [&]() {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) throw fail("truncated header");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw fail("bad magic");
    }
    if (get_u32() != kCheckpointVersion) throw fail("unsupported version");
    const std::uint32_t n_widths = get_u32();
    if (n_widths < 2 || n_widths > 64) throw fail("bad layer count");
    std::vector<Eigen::Index> widths;
    for (std::uint32_t i = 0; i < n_widths; ++i) {
        const std::uint32_t w = get_u32();
        if (w == 0 || w > (1u << 20)) throw fail("bad layer width");
        widths.push_back(w);
    }
    const auto m = static_cast<Eigen::Index>(get_u32());
    const Eigen::Index d = widths.back();
    if (widths.front() != d + 1 + m) throw fail("input width does not match d + 1 + m");
    MLPField field(d, m, std::vector<Eigen::Index>(widths.begin() + 1, widths.end() - 1));
    Eigen::VectorXd p(field.parameter_count());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8)) throw fail("truncated parameters");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        std::memcpy(&p(i), &bits, 8);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes");
    if (!p.allFinite()) throw fail("non-finite parameters");
    field.set_parameters(p);
    return field;
}

}  // namespace segflow
