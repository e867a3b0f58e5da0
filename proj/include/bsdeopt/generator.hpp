#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsdeopt/tree.hpp"

namespace bsdeopt {

/// An extreme point of the Clarke set at one evaluation point: the set
/// itself is the convex hull of the points listed by the oracle.
struct SubgradientPoint {
    double wrt_y = 0.0;
    std::array<double, 3> wrt_z{0.0, 0.0, 0.0};
};

using GeneratorEval = std::function<double(int step, std::int64_t node, double y, std::span<const double> z)>;
using GeneratorPartialY = std::function<double(int step, std::int64_t node, double y, std::span<const double> z)>;
using GeneratorPartialZ =
    std::function<void(int step, std::int64_t node, double y, std::span<const double> z, std::span<double> out)>;
using ClarkeOracle = std::function<std::vector<SubgradientPoint>(int step, std::int64_t node, double y,
                                                                 std::span<const double> z)>;

/// Driver g(t,y,z) plus its regularity metadata. `lipschitz` is the joint
/// constant M in |g(y1,z1)-g(y2,z2)| <= M(|y1-y2| + |z1-z2|).
struct Generator {
    std::string name;
    GeneratorEval eval;
    double lipschitz = 0.0;
    bool smooth = false;
    bool linear = false;  // affine in (y,z); enables closed-form budget machinery
    GeneratorPartialY partial_y;
    GeneratorPartialZ partial_z;
    ClarkeOracle clarke;

    double operator()(int step, std::int64_t node, double y, std::span<const double> z) const {
        return eval(step, node, y, z);
    }
};

/// Constraint functions phi share the driver signature and metadata;
/// Gamma_t = {(y,z) : phi(t,y,z) = 0}.
using ConstraintFunction = Generator;

/// Step-indexed coefficient: either one value for all steps or one per step.
struct Coefficient {
    std::vector<double> per_step;

    Coefficient() : per_step{0.0} {}
    Coefficient(double v) : per_step{v} {}
    explicit Coefficient(std::vector<double> v) : per_step(std::move(v)) {
        if (per_step.empty()) throw std::invalid_argument("Coefficient: empty value list");
    }
    double at(int step) const {
        if (per_step.size() == 1) return per_step[0];
        return per_step.at(static_cast<std::size_t>(step));
    }
    double max_abs() const {
        double m = 0.0;
        for (double v : per_step) m = std::max(m, std::abs(v));
        return m;
    }
};

namespace detail {

inline double sum_z(std::span<const double> z) {
    double s = 0.0;
    for (double v : z) s += v;
    return s;
}

// Kinks are detected with a small absolute band: z values on the tree are
// differences of solution values and land exactly on 0 when siblings tie.
constexpr double kKinkTol = 1e-12;

}  // namespace detail

inline Generator make_zero_generator() {
    Generator g;
    g.name = "zero";
    g.eval = [](int, std::int64_t, double, std::span<const double>) { return 0.0; };
    g.lipschitz = 0.0;
    g.smooth = true;
    g.linear = true;
    g.partial_y = [](int, std::int64_t, double, std::span<const double>) { return 0.0; };
    g.partial_z = [](int, std::int64_t, double, std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
    };
    g.clarke = [](int, std::int64_t, double, std::span<const double>) {
        return std::vector<SubgradientPoint>{SubgradientPoint{}};
    };
    return g;
}

/// g(t,y,z) = r(t) y + theta(t) sum_i z_i.
inline Generator make_linear_generator(Coefficient r, Coefficient theta, int dims = 1) {
    Generator g;
    g.name = "linear";
    const double sq = std::sqrt(static_cast<double>(dims));
    g.lipschitz = r.max_abs() + theta.max_abs() * sq;
    g.smooth = true;
    g.linear = true;
    g.eval = [r, theta](int step, std::int64_t, double y, std::span<const double> z) {
        return r.at(step) * y + theta.at(step) * detail::sum_z(z);
    };
    g.partial_y = [r](int step, std::int64_t, double, std::span<const double>) { return r.at(step); };
    g.partial_z = [theta](int step, std::int64_t, double, std::span<const double>, std::span<double> out) {
        for (double& v : out) v = theta.at(step);
    };
    g.clarke = [r, theta](int step, std::int64_t, double, std::span<const double> z) {
        SubgradientPoint p;
        p.wrt_y = r.at(step);
        for (std::size_t i = 0; i < z.size(); ++i) p.wrt_z[i] = theta.at(step);
        return std::vector<SubgradientPoint>{p};
    };
    return g;
}

/// g(t,y,z) = -r(t) y, the plain discounting driver.
inline Generator make_discount_generator(Coefficient r) {
    Generator g;
    g.name = "discount";
    g.lipschitz = r.max_abs();
    g.smooth = true;
    g.linear = true;
    g.eval = [r](int step, std::int64_t, double y, std::span<const double>) { return -r.at(step) * y; };
    g.partial_y = [r](int step, std::int64_t, double, std::span<const double>) { return -r.at(step); };
    g.partial_z = [](int, std::int64_t, double, std::span<const double>, std::span<double> out) {
        for (double& v : out) v = 0.0;
    };
    g.clarke = [r](int step, std::int64_t, double, std::span<const double> z) {
        SubgradientPoint p;
        p.wrt_y = -r.at(step);
        (void)z;
        return std::vector<SubgradientPoint>{p};
    };
    return g;
}

/// g(t,y,z) = kappa * sum_i |z_i|. Kinked at z_i = 0; the Clarke oracle
/// enumerates the sign choices of the kinked coordinates, first entry
/// taking +kappa on every kink (the sign(0) = +1 convention).
inline Generator make_abs_z_generator(double kappa, int dims = 1) {
    if (kappa < 0.0) throw std::invalid_argument("abs_z: kappa must be >= 0");
    Generator g;
    g.name = "abs_z";
    g.lipschitz = kappa * std::sqrt(static_cast<double>(dims));
    g.smooth = false;
    g.linear = false;
    g.eval = [kappa](int, std::int64_t, double, std::span<const double> z) {
        double s = 0.0;
        for (double v : z) s += std::abs(v);
        return kappa * s;
    };
    g.clarke = [kappa](int, std::int64_t, double, std::span<const double> z) {
        std::vector<int> kinks;
        SubgradientPoint base;
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (std::abs(z[i]) <= detail::kKinkTol)
                kinks.push_back(static_cast<int>(i));
            else
                base.wrt_z[i] = z[i] > 0.0 ? kappa : -kappa;
        }
        std::vector<SubgradientPoint> out;
        const std::size_t combos = std::size_t{1} << kinks.size();
        out.reserve(combos);
        for (std::size_t mask = 0; mask < combos; ++mask) {
            SubgradientPoint p = base;
            for (std::size_t b = 0; b < kinks.size(); ++b)
                p.wrt_z[static_cast<std::size_t>(kinks[b])] = (mask & (std::size_t{1} << b)) ? -kappa : kappa;
            out.push_back(p);
        }
        return out;
    };
    return g;
}

/// g(t,y,z) = max(t1 * s, t2 * s) with s = sum_i z_i; kinked at s = 0.
inline Generator make_max_linear_generator(double t1, double t2, int dims = 1) {
    Generator g;
    g.name = "max_linear";
    g.lipschitz = std::max(std::abs(t1), std::abs(t2)) * std::sqrt(static_cast<double>(dims));
    g.smooth = false;
    g.linear = false;
    const double hi = std::max(t1, t2);
    const double lo = std::min(t1, t2);
    g.eval = [t1, t2](int, std::int64_t, double, std::span<const double> z) {
        const double s = detail::sum_z(z);
        return std::max(t1 * s, t2 * s);
    };
    g.clarke = [hi, lo](int, std::int64_t, double, std::span<const double> z) {
        const double s = detail::sum_z(z);
        std::vector<SubgradientPoint> out;
        auto fill = [&](double slope) {
            SubgradientPoint p;
            for (std::size_t i = 0; i < z.size(); ++i) p.wrt_z[i] = slope;
            out.push_back(p);
        };
        if (s > detail::kKinkTol) {
            fill(hi);
        } else if (s < -detail::kKinkTol) {
            fill(lo);
        } else {
            fill(hi);
            if (hi != lo) fill(lo);
        }
        return out;
    };
    return g;
}

/// g(t,y,z) = a tanh(y) + b sum_i tanh(z_i), a smooth nonlinear test driver.
inline Generator make_smooth_tanh_generator(double a, double b, int dims = 1) {
    Generator g;
    g.name = "smooth_tanh";
    g.lipschitz = std::abs(a) + std::abs(b) * std::sqrt(static_cast<double>(dims));
    g.smooth = true;
    g.linear = false;
    g.eval = [a, b](int, std::int64_t, double y, std::span<const double> z) {
        double s = 0.0;
        for (double v : z) s += std::tanh(v);
        return a * std::tanh(y) + b * s;
    };
    g.partial_y = [a](int, std::int64_t, double y, std::span<const double>) {
        const double t = std::tanh(y);
        return a * (1.0 - t * t);
    };
    g.partial_z = [b](int, std::int64_t, double, std::span<const double> z, std::span<double> out) {
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double t = std::tanh(z[i]);
            out[i] = b * (1.0 - t * t);
        }
    };
    g.clarke = [a, b](int, std::int64_t, double y, std::span<const double> z) {
        SubgradientPoint p;
        const double ty = std::tanh(y);
        p.wrt_y = a * (1.0 - ty * ty);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double t = std::tanh(z[i]);
            p.wrt_z[i] = b * (1.0 - t * t);
        }
        return std::vector<SubgradientPoint>{p};
    };
    return g;
}

struct LipschitzReport {
    double declared = 0.0;
    double max_ratio = 0.0;
    bool ok = true;
};

/// Samples random (y,z) pairs and reports the worst difference quotient
/// |dg| / (|dy| + |dz|) against the declared constant. Report only.
inline LipschitzReport check_lipschitz(const Generator& gen, int steps, int dims, int samples,
                                       std::uint64_t seed) {
    if (samples < 1) throw std::invalid_argument("check_lipschitz: samples must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> box(-3.0, 3.0);
    std::uniform_int_distribution<int> step_pick(0, steps - 1);
    LipschitzReport rep;
    rep.declared = gen.lipschitz;
    std::array<double, 3> z1{}, z2{};
    for (int s = 0; s < samples; ++s) {
        const int k = step_pick(rng);
        const double y1 = box(rng), y2 = box(rng);
        double dz2 = 0.0;
        for (int i = 0; i < dims; ++i) {
            z1[static_cast<std::size_t>(i)] = box(rng);
            z2[static_cast<std::size_t>(i)] = box(rng);
            const double d = z1[static_cast<std::size_t>(i)] - z2[static_cast<std::size_t>(i)];
            dz2 += d * d;
        }
        const double denom = std::abs(y1 - y2) + std::sqrt(dz2);
        if (denom < 1e-12) continue;
        const double g1 = gen(k, 0, y1, std::span<const double>(z1.data(), static_cast<std::size_t>(dims)));
        const double g2 = gen(k, 0, y2, std::span<const double>(z2.data(), static_cast<std::size_t>(dims)));
        rep.max_ratio = std::max(rep.max_ratio, std::abs(g1 - g2) / denom);
    }
    rep.ok = rep.max_ratio <= rep.declared * (1.0 + 1e-9) + 1e-15;
    return rep;
}

/// H^2 norm of g(.,0,0) on the tree: sqrt(E sum_k |g(k,.,0,0)|^2 dt).
/// Finite by construction; evaluated so (A2) is on record.
inline double h2_norm_at_zero(const ScenarioTree& tree, const Generator& gen) {
    std::vector<double> zero(static_cast<std::size_t>(tree.dims), 0.0);
    double total = 0.0;
    for (int k = 0; k < tree.steps; ++k) {
        double s = 0.0;
        for (std::int64_t j = 0; j < tree.node_count(k); ++j) {
            const double v = gen(k, j, 0.0, zero);
            s += v * v;
        }
        total += s * tree.node_prob(k) * tree.dt;
    }
    return std::sqrt(total);
}

namespace detail {

inline std::vector<double> load_step_column(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open coefficient file: " + path);
    std::vector<double> vals;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        vals.push_back(std::stod(line));
    }
    if (vals.empty()) throw std::invalid_argument("coefficient file is empty: " + path);
    return vals;
}

inline Coefficient parse_coefficient(const std::string& text) {
    if (!text.empty() && text[0] == '@') return Coefficient(load_step_column(text.substr(1)));
    return Coefficient(std::stod(text));
}

inline std::vector<std::pair<std::string, std::string>> parse_kv_list(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("generator spec: expected key=value, got '" + item + "'");
        out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
    return out;
}

inline std::string kv_lookup(const std::vector<std::pair<std::string, std::string>>& kv,
                             const std::string& key, const std::string& spec) {
    for (const auto& [k, v] : kv)
        if (k == key) return v;
    throw std::invalid_argument("generator spec '" + spec + "': missing parameter '" + key + "'");
}

}  // namespace detail

/// Mini-language: `zero`, `linear:r=0.05,theta=0.2`, `discount:r=0.05`,
/// `abs_z:kappa=0.1`, `max_linear:t1=0.1,t2=0.3`, `smooth_tanh:a=1,b=1`.
/// Step-varying coefficients load from `r=@file.csv`, one row per step.
inline Generator parse_generator(const std::string& spec, int dims = 1) {
    const auto colon = spec.find(':');
    const std::string head = spec.substr(0, colon);
    const std::string args = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
    if (head == "zero") return make_zero_generator();
    const auto kv = detail::parse_kv_list(args);
    if (head == "linear")
        return make_linear_generator(detail::parse_coefficient(detail::kv_lookup(kv, "r", spec)),
                                     detail::parse_coefficient(detail::kv_lookup(kv, "theta", spec)), dims);
    if (head == "discount")
        return make_discount_generator(detail::parse_coefficient(detail::kv_lookup(kv, "r", spec)));
    if (head == "abs_z")
        return make_abs_z_generator(std::stod(detail::kv_lookup(kv, "kappa", spec)), dims);
    if (head == "max_linear")
        return make_max_linear_generator(std::stod(detail::kv_lookup(kv, "t1", spec)),
                                         std::stod(detail::kv_lookup(kv, "t2", spec)), dims);
    if (head == "smooth_tanh")
        return make_smooth_tanh_generator(std::stod(detail::kv_lookup(kv, "a", spec)),
                                          std::stod(detail::kv_lookup(kv, "b", spec)), dims);
    throw std::invalid_argument("unknown generator '" + head + "'");
}

}  // namespace bsdeopt
