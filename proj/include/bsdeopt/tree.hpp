#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsdeopt {

/// Finite probability space: a non-recombining binary path tree carrying
/// Brownian increments +/-sqrt(dt) per coordinate. Nodes at step k are
/// indexed 0..2^(d*k)-1 in path order; branch 0 is all-down, branch
/// 2^d - 1 is all-up (lexicographic, coordinate 0 most significant).
struct ScenarioTree {
    int steps = 0;         // N
    int dims = 1;          // d
    double horizon = 1.0;  // T
    double dt = 1.0;       // T / N
    double sqrt_dt = 1.0;

    int branch_count() const { return 1 << dims; }
    std::int64_t node_count(int step) const { return std::int64_t{1} << (dims * step); }
    std::int64_t leaf_count() const { return node_count(steps); }

    // Powers of two, so probabilities are exact dyadic rationals.
    double node_prob(int step) const { return std::ldexp(1.0, -dims * step); }
    double branch_prob() const { return std::ldexp(1.0, -dims); }
    double leaf_prob() const { return node_prob(steps); }

    std::int64_t child(std::int64_t node, int branch) const {
        return (node << dims) | branch;
    }
    std::int64_t parent(std::int64_t node) const { return node >> dims; }

    double delta_w(int branch, int coord) const {
        return ((branch >> (dims - 1 - coord)) & 1) ? sqrt_dt : -sqrt_dt;
    }
    double time_at(int step) const { return dt * step; }
};

/// Size guard: d <= 3 and N*d <= 24 keep the full path tree addressable.
inline ScenarioTree build_tree(int steps, double horizon, int dims) {
    if (steps < 1) throw std::invalid_argument("build_tree: steps must be >= 1");
    if (!(horizon > 0.0)) throw std::invalid_argument("build_tree: horizon must be > 0");
    if (dims < 1 || dims > 3) throw std::invalid_argument("build_tree: dims must be in [1,3]");
    if (static_cast<std::int64_t>(steps) * dims > 24)
        throw std::invalid_argument("build_tree: steps*dims > 24 exceeds the size guard");
    ScenarioTree t;
    t.steps = steps;
    t.dims = dims;
    t.horizon = horizon;
    t.dt = horizon / steps;
    t.sqrt_dt = std::sqrt(t.dt);
    return t;
}

/// One real value per node at a fixed measurability step.
struct RandomVariable {
    int step = 0;
    std::vector<double> values;

    double& operator[](std::int64_t node) { return values[static_cast<std::size_t>(node)]; }
    double operator[](std::int64_t node) const { return values[static_cast<std::size_t>(node)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

/// R^d-valued node function (node-major storage); carries z-slices.
struct VectorRandomVariable {
    int step = 0;
    int dims = 1;
    std::vector<double> values;

    double& at(std::int64_t node, int coord) {
        return values[static_cast<std::size_t>(node * dims + coord)];
    }
    double at(std::int64_t node, int coord) const {
        return values[static_cast<std::size_t>(node * dims + coord)];
    }
    std::span<const double> node_span(std::int64_t node) const {
        return std::span<const double>(values.data() + node * dims, static_cast<std::size_t>(dims));
    }
    std::span<double> node_span(std::int64_t node) {
        return std::span<double>(values.data() + node * dims, static_cast<std::size_t>(dims));
    }
};

using AdaptedProcess = std::vector<RandomVariable>;          // slices 0..N
using PredictableProcess = std::vector<VectorRandomVariable>; // slices 0..N-1

inline RandomVariable make_rv(const ScenarioTree& tree, int step, double fill = 0.0) {
    if (step < 0 || step > tree.steps) throw std::invalid_argument("make_rv: step out of range");
    return RandomVariable{step, std::vector<double>(static_cast<std::size_t>(tree.node_count(step)), fill)};
}

inline VectorRandomVariable make_vrv(const ScenarioTree& tree, int step, double fill = 0.0) {
    if (step < 0 || step > tree.steps) throw std::invalid_argument("make_vrv: step out of range");
    return VectorRandomVariable{
        step, tree.dims,
        std::vector<double>(static_cast<std::size_t>(tree.node_count(step) * tree.dims), fill)};
}

inline void check_slice(const ScenarioTree& tree, const RandomVariable& rv, const char* where) {
    if (rv.step < 0 || rv.step > tree.steps ||
        rv.size() != tree.node_count(rv.step))
        throw std::invalid_argument(std::string(where) + ": slice does not match the tree at its step");
}

/// E[rv | F_k] for rv measurable at step k+1: equal-weight average of the
/// 2^d children of each step-k node.
inline RandomVariable conditional_expectation(const RandomVariable& rv, const ScenarioTree& tree) {
    check_slice(tree, rv, "conditional_expectation");
    if (rv.step < 1) throw std::invalid_argument("conditional_expectation: rv must sit at step >= 1");
    const int k = rv.step - 1;
    const int b = tree.branch_count();
    const double w = tree.branch_prob();
    RandomVariable out = make_rv(tree, k);
    for (std::int64_t j = 0; j < tree.node_count(k); ++j) {
        double s = 0.0;
        for (int br = 0; br < b; ++br) s += rv[tree.child(j, br)];
        out[j] = s * w;
    }
    return out;
}

/// z_k = E[rv * dW_{k+1} | F_k] / dt. For d = 1 this is the two-point slope
/// (v_up - v_down) / (2 sqrt(dt)), and rv = E[rv|F_k] + z_k dW holds exactly;
/// for d > 1 the reconstruction residual is orthogonal to span{dW}.
inline VectorRandomVariable martingale_projection(const RandomVariable& rv, const ScenarioTree& tree) {
    check_slice(tree, rv, "martingale_projection");
    if (rv.step < 1) throw std::invalid_argument("martingale_projection: rv must sit at step >= 1");
    const int k = rv.step - 1;
    const int b = tree.branch_count();
    const double w = tree.branch_prob();
    VectorRandomVariable z = make_vrv(tree, k);
    for (std::int64_t j = 0; j < tree.node_count(k); ++j) {
        for (int c = 0; c < tree.dims; ++c) {
            double s = 0.0;
            for (int br = 0; br < b; ++br) s += rv[tree.child(j, br)] * tree.delta_w(br, c);
            z.at(j, c) = s * w / tree.dt;
        }
    }
    return z;
}

/// Lift an F_k-measurable variable to step k+1 (constant across siblings).
inline RandomVariable lift(const RandomVariable& rv, const ScenarioTree& tree) {
    check_slice(tree, rv, "lift");
    if (rv.step >= tree.steps) throw std::invalid_argument("lift: already at the terminal step");
    RandomVariable out = make_rv(tree, rv.step + 1);
    const int b = tree.branch_count();
    for (std::int64_t j = 0; j < rv.size(); ++j)
        for (int br = 0; br < b; ++br) out[tree.child(j, br)] = rv[j];
    return out;
}

// Reductions are fixed index-ordered sums so results do not depend on any
// parallel schedule used for per-node maps.
inline double expectation(const ScenarioTree& tree, const RandomVariable& rv) {
    check_slice(tree, rv, "expectation");
    double s = 0.0;
    for (double v : rv.values) s += v;
    return s * tree.node_prob(rv.step);
}

/// L^2(P) pairing <a,b> = E[a b]; both slices must live at the same step.
inline double inner_product(const ScenarioTree& tree, const RandomVariable& a, const RandomVariable& b) {
    check_slice(tree, a, "inner_product");
    check_slice(tree, b, "inner_product");
    if (a.step != b.step) throw std::invalid_argument("inner_product: measurability steps differ");
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * tree.node_prob(a.step);
}

inline double l2_norm(const ScenarioTree& tree, const RandomVariable& a) {
    return std::sqrt(inner_product(tree, a, a));
}

inline double max_abs(const RandomVariable& a) {
    double m = 0.0;
    for (double v : a.values) m = std::max(m, std::abs(v));
    return m;
}

/// W at step k, coordinate coord: the path sum of increments.
inline RandomVariable brownian_value(const ScenarioTree& tree, int step, int coord = 0) {
    if (coord < 0 || coord >= tree.dims) throw std::invalid_argument("brownian_value: coord out of range");
    RandomVariable w = make_rv(tree, 0);
    for (int k = 0; k < step; ++k) {
        RandomVariable next = make_rv(tree, k + 1);
        for (std::int64_t j = 0; j < tree.node_count(k); ++j)
            for (int br = 0; br < tree.branch_count(); ++br)
                next[tree.child(j, br)] = w[j] + tree.delta_w(br, coord);
        w = std::move(next);
    }
    return w;
}

/// True when a step-(k+1) slice is constant across each sibling block,
/// i.e. it is actually F_k-measurable.
inline bool is_sibling_constant(const ScenarioTree& tree, const RandomVariable& rv, double tol = 0.0) {
    check_slice(tree, rv, "is_sibling_constant");
    if (rv.step < 1) return true;
    const int b = tree.branch_count();
    for (std::int64_t j = 0; j < tree.node_count(rv.step - 1); ++j) {
        const double v0 = rv[tree.child(j, 0)];
        for (int br = 1; br < b; ++br)
            if (std::abs(rv[tree.child(j, br)] - v0) > tol) return false;
    }
    return true;
}

inline RandomVariable axpy(double alpha, const RandomVariable& x, const RandomVariable& y) {
    if (x.step != y.step || x.size() != y.size())
        throw std::invalid_argument("axpy: incompatible slices");
    RandomVariable out = x;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = alpha * x[i] + y[i];
    return out;
}

}  // namespace bsdeopt
