#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "roivqa/error.hpp"
#include "roivqa/rng.hpp"

namespace roivqa {

enum class LayerTag { shallow, deep };

struct FeatureVector {
    std::vector<double> values;
    LayerTag tag = LayerTag::shallow;
};

struct FusionParams {
    int in_dim = 0;   // 2d after concatenation
    int hidden = 0;   // h
    int out_dim = 0;  // o
    std::vector<double> ln_gamma;  // in_dim
    std::vector<double> ln_beta;   // in_dim
    std::vector<double> w1;        // in_dim x hidden, row-major
    std::vector<double> b1;        // hidden
    std::vector<double> w2;        // hidden x out_dim, row-major
    std::vector<double> b2;        // out_dim
    double epsilon = 1e-5;

    void check() const {
        if (epsilon <= 0) throw Error("fusion: epsilon must be positive");
        if (in_dim < 2 || hidden < 1 || out_dim < 1 ||
            ln_gamma.size() != static_cast<std::size_t>(in_dim) ||
            ln_beta.size() != static_cast<std::size_t>(in_dim) ||
            w1.size() != static_cast<std::size_t>(in_dim) * hidden ||
            b1.size() != static_cast<std::size_t>(hidden) ||
            w2.size() != static_cast<std::size_t>(hidden) * out_dim ||
            b2.size() != static_cast<std::size_t>(out_dim))
            throw Error("fusion: parameter shapes are inconsistent");
    }
};

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double gelu_derivative(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double phi_pdf =
        std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    return phi_cdf + x * phi_pdf;
}

inline std::vector<double> layer_norm(const std::vector<double>& x,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& beta,
                                      double epsilon) {
    if (x.size() != gamma.size() || x.size() != beta.size() || x.empty())
        throw Error("layer_norm: dimension mismatch");
    const std::size_t n = x.size();
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i)
        y[i] = gamma[i] * (x[i] - mean) * inv + beta[i];
    return y;
}

namespace detail {

struct FuseTrace {
    std::vector<double> x;     // concatenated input
    std::vector<double> xhat;  // normalized, pre-affine
    double inv_std = 0;
    std::vector<double> y;   // after layer norm
    std::vector<double> z1;  // first linear pre-activation
    std::vector<double> a;   // after GELU
    std::vector<double> out;
};

inline FuseTrace fuse_forward(const std::vector<double>& shallow,
                              const std::vector<double>& deep,
                              const FusionParams& p) {
    p.check();
    if (shallow.size() != deep.size() ||
        shallow.size() * 2 != static_cast<std::size_t>(p.in_dim))
        throw Error("fuse: input dimensions do not match parameters");

    FuseTrace t;
    t.x.reserve(p.in_dim);
    t.x.insert(t.x.end(), shallow.begin(), shallow.end());
    t.x.insert(t.x.end(), deep.begin(), deep.end());

    const std::size_t n = t.x.size();
    double mean = 0;
    for (double v : t.x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : t.x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    t.inv_std = 1.0 / std::sqrt(var + p.epsilon);

    t.xhat.resize(n);
    t.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.xhat[i] = (t.x[i] - mean) * t.inv_std;
        t.y[i] = p.ln_gamma[i] * t.xhat[i] + p.ln_beta[i];
    }

    t.z1.assign(p.hidden, 0.0);
    for (int i = 0; i < p.in_dim; ++i)
        for (int j = 0; j < p.hidden; ++j)
            t.z1[j] += t.y[i] * p.w1[static_cast<std::size_t>(i) * p.hidden + j];
    for (int j = 0; j < p.hidden; ++j) t.z1[j] += p.b1[j];

    t.a.resize(p.hidden);
    for (int j = 0; j < p.hidden; ++j) t.a[j] = gelu(t.z1[j]);

    t.out.assign(p.out_dim, 0.0);
    for (int j = 0; j < p.hidden; ++j)
        for (int k = 0; k < p.out_dim; ++k)
            t.out[k] +=
                t.a[j] * p.w2[static_cast<std::size_t>(j) * p.out_dim + k];
    for (int k = 0; k < p.out_dim; ++k) t.out[k] += p.b2[k];
    return t;
}

}  // namespace detail

inline std::vector<double> fuse(const FeatureVector& shallow,
                                const FeatureVector& deep,
                                const FusionParams& p) {
    return detail::fuse_forward(shallow.values, deep.values, p).out;
}

struct FusionGrads {
    std::vector<double> ln_gamma, ln_beta;
    std::vector<double> w1, b1, w2, b2;
    std::vector<double> shallow, deep;
};

/// Gradients of L = upstream · fuse(shallow, deep, p) with respect to every
/// parameter and both inputs.
inline FusionGrads fuse_backward(const FeatureVector& shallow,
                                 const FeatureVector& deep,
                                 const FusionParams& p,
                                 const std::vector<double>& upstream) {
    if (upstream.size() != static_cast<std::size_t>(p.out_dim))
        throw Error("fuse_backward: upstream gradient has wrong size");
    const detail::FuseTrace t =
        detail::fuse_forward(shallow.values, deep.values, p);

    FusionGrads g;
    g.b2 = upstream;
    g.w2.assign(p.w2.size(), 0.0);
    std::vector<double> g_a(p.hidden, 0.0);
    for (int j = 0; j < p.hidden; ++j)
        for (int k = 0; k < p.out_dim; ++k) {
            const std::size_t idx = static_cast<std::size_t>(j) * p.out_dim + k;
            g.w2[idx] = t.a[j] * upstream[k];
            g_a[j] += p.w2[idx] * upstream[k];
        }

    std::vector<double> g_z1(p.hidden);
    for (int j = 0; j < p.hidden; ++j)
        g_z1[j] = g_a[j] * gelu_derivative(t.z1[j]);

    g.b1 = g_z1;
    g.w1.assign(p.w1.size(), 0.0);
    std::vector<double> g_y(p.in_dim, 0.0);
    for (int i = 0; i < p.in_dim; ++i)
        for (int j = 0; j < p.hidden; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * p.hidden + j;
            g.w1[idx] = t.y[i] * g_z1[j];
            g_y[i] += p.w1[idx] * g_z1[j];
        }

    g.ln_gamma.resize(p.in_dim);
    g.ln_beta = g_y;
    std::vector<double> gx(p.in_dim);
    double mean_g = 0, mean_gx = 0;
    for (int i = 0; i < p.in_dim; ++i) {
        g.ln_gamma[i] = g_y[i] * t.xhat[i];
        gx[i] = p.ln_gamma[i] * g_y[i];
        mean_g += gx[i];
        mean_gx += gx[i] * t.xhat[i];
    }
    mean_g /= p.in_dim;
    mean_gx /= p.in_dim;

    const int d = p.in_dim / 2;
    g.shallow.resize(d);
    g.deep.resize(d);
    for (int i = 0; i < p.in_dim; ++i) {
        const double gi =
            t.inv_std * (gx[i] - mean_g - t.xhat[i] * mean_gx);
        if (i < d)
            g.shallow[i] = gi;
        else
            g.deep[i - d] = gi;
    }
    return g;
}

struct FusionDims {
    int d = 4;
    int h = 8;
    int o = 4;
};

inline double uniform_in(SplitMix64& rng, double lo, double hi) {
    return lo + rng.next_double() * (hi - lo);
}

/// Seeded parameter bundle: weights uniform in ±1/sqrt(fan_in), layer-norm
/// affine near identity. The draw order is part of the contract; tests
/// depend on it being stable.
inline FusionParams init_params(const FusionDims& dims, SplitMix64& rng,
                                double epsilon = 1e-5) {
    FusionParams p;
    p.in_dim = 2 * dims.d;
    p.hidden = dims.h;
    p.out_dim = dims.o;
    p.epsilon = epsilon;
    const double lim1 = 1.0 / std::sqrt(static_cast<double>(p.in_dim));
    const double lim2 = 1.0 / std::sqrt(static_cast<double>(p.hidden));

    p.ln_gamma.resize(p.in_dim);
    p.ln_beta.resize(p.in_dim);
    for (auto& v : p.ln_gamma) v = 1.0 + uniform_in(rng, -0.5, 0.5);
    for (auto& v : p.ln_beta) v = uniform_in(rng, -0.5, 0.5);

    p.w1.resize(static_cast<std::size_t>(p.in_dim) * p.hidden);
    p.b1.resize(p.hidden);
    for (auto& v : p.w1) v = uniform_in(rng, -lim1, lim1);
    for (auto& v : p.b1) v = uniform_in(rng, -lim1, lim1);

    p.w2.resize(static_cast<std::size_t>(p.hidden) * p.out_dim);
    p.b2.resize(p.out_dim);
    for (auto& v : p.w2) v = uniform_in(rng, -lim2, lim2);
    for (auto& v : p.b2) v = uniform_in(rng, -lim2, lim2);
    return p;
}

struct GradCheckReport {
    FusionDims dims;
    std::uint64_t seed = 0;
    double step = 1e-4;
    double tolerance = 1e-4;
    double max_rel_err = 0.0;
    bool pass = false;
};

inline nlohmann::ordered_json grad_check_json(const GradCheckReport& r) {
    nlohmann::ordered_json j;
    j["d"] = r.dims.d;
    j["h"] = r.dims.h;
    j["o"] = r.dims.o;
    j["seed"] = r.seed;
    j["step"] = r.step;
    j["tolerance"] = r.tolerance;
    j["max_rel_err"] = r.max_rel_err;
    j["pass"] = r.pass;
    return j;
}

/// Compares every analytic gradient coordinate against a central finite
/// difference of the scalar loss upstream·fuse(...). Relative error uses
/// max(1, |analytic|, |numeric|) as the denominator so near-zero gradients
/// are judged on absolute error.
inline GradCheckReport grad_check(const FusionDims& dims, std::uint64_t seed,
                                  double step = 1e-4,
                                  double tolerance = 1e-4) {
    if (step <= 0 || tolerance <= 0)
        throw Error("grad_check: step and tolerance must be positive");

    SplitMix64 rng(seed);
    FusionParams p = init_params(dims, rng);
    FeatureVector shallow{std::vector<double>(dims.d), LayerTag::shallow};
    FeatureVector deep{std::vector<double>(dims.d), LayerTag::deep};
    for (auto& v : shallow.values) v = uniform_in(rng, -1.0, 1.0);
    for (auto& v : deep.values) v = uniform_in(rng, -1.0, 1.0);
    std::vector<double> upstream(dims.o);
    for (auto& v : upstream) v = uniform_in(rng, -1.0, 1.0);

    const FusionGrads analytic = fuse_backward(shallow, deep, p, upstream);

    auto loss = [&]() {
        const auto out = detail::fuse_forward(shallow.values, deep.values, p);
        double L = 0;
        for (int k = 0; k < p.out_dim; ++k) L += upstream[k] * out.out[k];
        return L;
    };

    GradCheckReport report;
    report.dims = dims;
    report.seed = seed;
    report.step = step;
    report.tolerance = tolerance;

    auto check_coord = [&](double& coord, double analytic_grad) {
        const double saved = coord;
        coord = saved + step;
        const double lp = loss();
        coord = saved - step;
        const double lm = loss();
        coord = saved;
        const double numeric = (lp - lm) / (2.0 * step);
        const double denom =
            std::max({1.0, std::abs(analytic_grad), std::abs(numeric)});
        const double rel = std::abs(analytic_grad - numeric) / denom;
        if (rel > report.max_rel_err) report.max_rel_err = rel;
    };

    for (std::size_t i = 0; i < p.ln_gamma.size(); ++i)
        check_coord(p.ln_gamma[i], analytic.ln_gamma[i]);
    for (std::size_t i = 0; i < p.ln_beta.size(); ++i)
        check_coord(p.ln_beta[i], analytic.ln_beta[i]);
    for (std::size_t i = 0; i < p.w1.size(); ++i)
        check_coord(p.w1[i], analytic.w1[i]);
    for (std::size_t i = 0; i < p.b1.size(); ++i)
        check_coord(p.b1[i], analytic.b1[i]);
    for (std::size_t i = 0; i < p.w2.size(); ++i)
        check_coord(p.w2[i], analytic.w2[i]);
    for (std::size_t i = 0; i < p.b2.size(); ++i)
        check_coord(p.b2[i], analytic.b2[i]);
    for (std::size_t i = 0; i < shallow.values.size(); ++i)
        check_coord(shallow.values[i], analytic.shallow[i]);
    for (std::size_t i = 0; i < deep.values.size(); ++i)
        check_coord(deep.values[i], analytic.deep[i]);

    report.pass = report.max_rel_err <= tolerance;
    return report;
}

}  // namespace roivqa
