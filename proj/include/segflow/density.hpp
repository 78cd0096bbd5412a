#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "segflow/errors.hpp"

namespace segflow {

struct Atom {
    double location = 0.0;
    double mass = 0.0;
};

// Uniform mass on [lower, upper). Open/closed ends do not matter for a
// continuous piece, so (0.5, 0.7) and [0.5, 0.7) are the same piece.
struct Piece {
    double lower = 0.0;
    double upper = 1.0;
    double mass = 0.0;

    double center() const { return 0.5 * (lower + upper); }
    double width() const { return upper - lower; }
};

// Integral coefficients of an alpha distribution:
//   c00 = E[(1-a)^2], c01 = E[a(1-a)], c11 = E[a^2], delta = c00*c11 - c01^2.
// For discrete weighted points the expectations are weighted sums and need
// not be normalized.
struct Moments {
    double c00 = 0.0;
    double c01 = 0.0;
    double c11 = 0.0;
    double delta = 0.0;
};

struct GridPoint {
    double alpha = 0.0;
    double weight = 0.0;
};

using AlphaGrid = std::vector<GridPoint>;

// Mixing density p(alpha) on [0,1]: point masses plus piecewise-uniform
// pieces. Always normalized after construction; pieces are sorted and
// non-overlapping, atoms are sorted with duplicates merged.
class AlphaDensity {
public:
    AlphaDensity() : AlphaDensity({}, {Piece{0.0, 1.0, 1.0}}) {}

    AlphaDensity(std::vector<Atom> atoms, std::vector<Piece> pieces) {
        for (const auto& a : atoms) {
            if (!(a.location >= 0.0 && a.location <= 1.0) || !(a.mass >= 0.0) ||
                !std::isfinite(a.mass)) {
                throw ConfigError("AlphaDensity: atom at " + std::to_string(a.location) +
                                  " with mass " + std::to_string(a.mass) + " is invalid");
            }
        }
        for (const auto& p : pieces) {
            if (!(p.lower >= 0.0 && p.upper <= 1.0 && p.lower < p.upper) || !(p.mass >= 0.0) ||
                !std::isfinite(p.mass)) {
                throw ConfigError("AlphaDensity: piece [" + std::to_string(p.lower) + ", " +
                                  std::to_string(p.upper) + ") with mass " +
                                  std::to_string(p.mass) + " is invalid");
            }
        }
        std::sort(atoms.begin(), atoms.end(),
                  [](const Atom& l, const Atom& r) { return l.location < r.location; });
        std::sort(pieces.begin(), pieces.end(),
                  [](const Piece& l, const Piece& r) { return l.lower < r.lower; });
        for (std::size_t i = 1; i < pieces.size(); ++i) {
            if (pieces[i].lower < pieces[i - 1].upper) {
                throw ConfigError("AlphaDensity: pieces overlap near alpha=" +
                                  std::to_string(pieces[i].lower));
            }
        }
        for (const auto& a : atoms) {
            if (a.mass == 0.0) continue;
            if (!atoms_.empty() && atoms_.back().location == a.location) {
                atoms_.back().mass += a.mass;
            } else {
                atoms_.push_back(a);
            }
        }
        for (const auto& p : pieces) {
            if (p.mass > 0.0) pieces_.push_back(p);
        }

        double total = 0.0;
        for (const auto& a : atoms_) total += a.mass;
        for (const auto& p : pieces_) total += p.mass;
        if (!(total > 0.0)) throw ConfigError("AlphaDensity: total mass is zero");
        for (auto& a : atoms_) a.mass /= total;
        for (auto& p : pieces_) p.mass /= total;
    }

    static AlphaDensity uniform() { return AlphaDensity(); }
    static AlphaDensity atom(double location) { return AlphaDensity({Atom{location, 1.0}}, {}); }
    static AlphaDensity endpoints() {
        return AlphaDensity({Atom{0.0, 0.5}, Atom{1.0, 0.5}}, {});
    }

    const std::vector<Atom>& atoms() const { return atoms_; }
    const std::vector<Piece>& pieces() const { return pieces_; }

    // Number of disjoint support regions (each atom and each piece counts once).
    std::size_t region_count() const { return atoms_.size() + pieces_.size(); }

    double mean() const {
        double m = 0.0;
        for (const auto& a : atoms_) m += a.mass * a.location;
        for (const auto& p : pieces_) m += p.mass * p.center();
        return m;
    }

    double second_moment() const {
        double m = 0.0;
        for (const auto& a : atoms_) m += a.mass * a.location * a.location;
        for (const auto& p : pieces_) {
            m += p.mass * (p.lower * p.lower + p.lower * p.upper + p.upper * p.upper) / 3.0;
        }
        return m;
    }

    // Central second moment, accumulated term by term so that a single atom
    // gives exactly zero.
    double variance() const {
        const double mu = mean();
        double v = 0.0;
        for (const auto& a : atoms_) v += a.mass * (a.location - mu) * (a.location - mu);
        for (const auto& p : pieces_) {
            const double off = p.center() - mu;
            v += p.mass * (off * off + p.width() * p.width() / 12.0);
        }
        return v;
    }

    // Convex combination (1-lambda)*first + lambda*second. Pieces are refined
    // onto the union of both partitions so the result stays non-overlapping.
    static AlphaDensity mixture(const AlphaDensity& first, const AlphaDensity& second,
                                double lambda) {
        if (!(lambda >= 0.0 && lambda <= 1.0)) {
            throw DomainError("AlphaDensity::mixture: lambda outside [0,1]");
        }
        std::vector<Atom> atoms;
        for (const auto& a : first.atoms_) atoms.push_back({a.location, (1.0 - lambda) * a.mass});
        for (const auto& a : second.atoms_) atoms.push_back({a.location, lambda * a.mass});

        std::vector<double> cuts;
        for (const auto* d : {&first, &second}) {
            for (const auto& p : d->pieces_) {
                cuts.push_back(p.lower);
                cuts.push_back(p.upper);
            }
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

        auto density_at = [](const AlphaDensity& d, double x) {
            for (const auto& p : d.pieces_) {
                if (x >= p.lower && x < p.upper) return p.mass / p.width();
            }
            return 0.0;
        };
        std::vector<Piece> pieces;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double lo = cuts[i];
            const double hi = cuts[i + 1];
            const double mid = 0.5 * (lo + hi);
            const double rho =
                (1.0 - lambda) * density_at(first, mid) + lambda * density_at(second, mid);
            if (rho > 0.0) pieces.push_back({lo, hi, rho * (hi - lo)});
        }
        return AlphaDensity(std::move(atoms), std::move(pieces));
    }

private:
    std::vector<Atom> atoms_;
    std::vector<Piece> pieces_;
};

// Closed-form moments of the density. delta is evaluated as Var(alpha), which
// equals c00*c11 - c01^2 for a normalized density.
inline Moments density_moments(const AlphaDensity& p) {
    const double e1 = p.mean();
    const double e2 = p.second_moment();
    Moments m;
    m.c11 = e2;
    m.c01 = e1 - e2;
    m.c00 = 1.0 - 2.0 * e1 + e2;
    m.delta = p.variance();
    return m;
}

// Moments of weighted points; delta = S * sum_i p_i (alpha_i - mean)^2 with
// S = sum_i p_i, identical to c00*c11 - c01^2 in exact arithmetic.
inline Moments discrete_moments(const AlphaGrid& grid) {
    Moments m;
    double s = 0.0;
    double s1 = 0.0;
    for (const auto& g : grid) {
        m.c00 += g.weight * (1.0 - g.alpha) * (1.0 - g.alpha);
        m.c01 += g.weight * g.alpha * (1.0 - g.alpha);
        m.c11 += g.weight * g.alpha * g.alpha;
        s += g.weight;
        s1 += g.weight * g.alpha;
    }
    if (s > 0.0) {
        const double mean = s1 / s;
        double ss = 0.0;
        for (const auto& g : grid) ss += g.weight * (g.alpha - mean) * (g.alpha - mean);
        m.delta = s * ss;
    }
    return m;
}

namespace detail {

struct Cluster {
    double mass = 0.0;
    double moment = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    bool atom = false;

    double centroid() const { return moment / mass; }
};

inline AlphaGrid merge_regions(const AlphaDensity& p, std::size_t k) {
    std::vector<Cluster> clusters;
    for (const auto& a : p.atoms()) {
        clusters.push_back({a.mass, a.mass * a.location, a.location, a.location, true});
    }
    for (const auto& pc : p.pieces()) {
        clusters.push_back({pc.mass, pc.mass * pc.center(), pc.lower, pc.upper, false});
    }

    // Atoms are absorbed first, lightest first, into the pieces that touch
    // or contain them; their mass is split evenly between those pieces.
    std::vector<std::size_t> atom_order;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i].atom) atom_order.push_back(i);
    }
    std::stable_sort(atom_order.begin(), atom_order.end(), [&](std::size_t l, std::size_t r) {
        return clusters[l].mass < clusters[r].mass;
    });
    std::vector<bool> removed(clusters.size(), false);
    std::size_t live = clusters.size();
    for (std::size_t ai : atom_order) {
        if (live <= k) break;
        const double loc = clusters[ai].lo;
        std::vector<std::size_t> hosts;
        for (std::size_t j = 0; j < clusters.size(); ++j) {
            if (!removed[j] && !clusters[j].atom && loc >= clusters[j].lo && loc <= clusters[j].hi) {
                hosts.push_back(j);
            }
        }
        if (hosts.empty()) continue;
        const double share = clusters[ai].mass / static_cast<double>(hosts.size());
        for (std::size_t j : hosts) {
            clusters[j].mass += share;
            clusters[j].moment += share * loc;
        }
        removed[ai] = true;
        --live;
    }

    while (live > k) {
        std::size_t lightest = clusters.size();
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            if (removed[i]) continue;
            if (lightest == clusters.size() || clusters[i].mass < clusters[lightest].mass) {
                lightest = i;
            }
        }
        std::size_t nearest = clusters.size();
        double best = 0.0;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            if (removed[i] || i == lightest) continue;
            const double dist = std::abs(clusters[i].centroid() - clusters[lightest].centroid());
            if (nearest == clusters.size() || dist < best) {
                nearest = i;
                best = dist;
            }
        }
        auto& into = clusters[nearest];
        const auto& from = clusters[lightest];
        into.mass += from.mass;
        into.moment += from.moment;
        into.lo = std::min(into.lo, from.lo);
        into.hi = std::max(into.hi, from.hi);
        into.atom = false;
        removed[lightest] = true;
        --live;
    }

    AlphaGrid grid;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (!removed[i]) {
            grid.push_back({std::clamp(clusters[i].centroid(), 0.0, 1.0), clusters[i].mass});
        }
    }
    return grid;
}

}  // namespace detail

// k weighted support points representing p. Atoms are grid points carrying
// their own mass. Pieces receive at least one representative each; the
// remaining points go to pieces in proportion to mass (largest remainder),
// placed at the midpoints of an even subdivision of the piece. When p has
// more support regions than k, regions are merged (see detail::merge_regions)
// and each merged cluster is represented by its centroid.
inline AlphaGrid alpha_grid(const AlphaDensity& p, std::size_t k) {
    if (k < 2) throw ConfigError("alpha_grid: k must be >= 2, got " + std::to_string(k));
    const std::size_t n_atoms = p.atoms().size();
    if (k < n_atoms) {
        throw ConfigError("alpha_grid: k=" + std::to_string(k) + " is smaller than the " +
                          std::to_string(n_atoms) + " atoms of the density");
    }
    if (p.pieces().empty() && k != n_atoms) {
        throw ConfigError("alpha_grid: density has only " + std::to_string(n_atoms) +
                          " support point(s), cannot place k=" + std::to_string(k));
    }

    AlphaGrid grid;
    if (k < p.region_count()) {
        grid = detail::merge_regions(p, k);
    } else {
        for (const auto& a : p.atoms()) grid.push_back({a.location, a.mass});

        const auto& pieces = p.pieces();
        const std::size_t extra = k - n_atoms - pieces.size();
        double piece_mass = 0.0;
        for (const auto& pc : pieces) piece_mass += pc.mass;

        std::vector<std::size_t> counts(pieces.size(), 1);
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < pieces.size(); ++i) {
            const double quota = static_cast<double>(extra) * pieces[i].mass / piece_mass;
            const auto whole = static_cast<std::size_t>(std::floor(quota));
            counts[i] += whole;
            assigned += whole;
            remainders.emplace_back(quota - static_cast<double>(whole), i);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& l, const auto& r) { return l.first > r.first; });
        for (std::size_t r = 0; assigned < extra; ++r, ++assigned) ++counts[remainders[r].second];

        for (std::size_t i = 0; i < pieces.size(); ++i) {
            const auto n = static_cast<double>(counts[i]);
            for (std::size_t j = 0; j < counts[i]; ++j) {
                const double alpha =
                    pieces[i].lower + (static_cast<double>(j) + 0.5) * pieces[i].width() / n;
                grid.push_back({alpha, pieces[i].mass / n});
            }
        }
    }
    std::stable_sort(grid.begin(), grid.end(),
                     [](const GridPoint& l, const GridPoint& r) { return l.alpha < r.alpha; });
    return grid;
}

// Named densities used by the experiment presets. The image/video/3d ones put
// mass 1 on [0,0.1) and [0.9,1], nothing on [0.1,0.3) and [0.7,0.9), a
// symmetric pair of central pieces and an atom at 0.5.
inline AlphaDensity density_preset(const std::string& name) {
    auto bimodal = [](double central, double atom) {
        return AlphaDensity({Atom{0.5, atom}},
                            {Piece{0.0, 0.1, 1.0}, Piece{0.3, 0.5, central},
                             Piece{0.5, 0.7, central}, Piece{0.9, 1.0, 1.0}});
    };
    if (name == "uniform") return AlphaDensity::uniform();
    if (name == "endpoints") return AlphaDensity::endpoints();
    if (name == "paper-image") return bimodal(0.87, 0.5);
    if (name == "paper-video") return bimodal(0.25, 0.15);
    if (name == "paper-3d") return bimodal(0.35, 0.5);
    throw ConfigError("unknown density preset '" + name + "'");
}

}  // namespace segflow
