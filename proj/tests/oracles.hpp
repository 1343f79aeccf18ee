// Brute-force reference implementations used to cross-check the library.
// Everything here is written as the most literal possible translation of
// the definitions, independent of the implementation under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowsynth/mdn.hpp"
#include "flowsynth/metrics.hpp"
#include "flowsynth/trace.hpp"

namespace oracles {

// Two-pass mean and population standard deviation.
inline std::pair<double, double> mean_std(std::span<const double> values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

// Average of per-flow empirical CDFs by double loop.
inline std::vector<double> avg_cdf(const std::vector<flowsynth::Flow>& flows,
                                   flowsynth::Feature feature,
                                   const std::vector<double>& grid) {
    std::vector<double> avg(grid.size(), 0.0);
    std::size_t n_flows = 0;
    for (const auto& flow : flows) {
        if (flow.packets.empty()) continue;
        ++n_flows;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            std::size_t count = 0;
            for (const auto& p : flow.packets) {
                const double v =
                    feature == flowsynth::Feature::payload ? p.payload_len : p.iat;
                if (v <= grid[i]) ++count;
            }
            avg[i] += static_cast<double>(count) / static_cast<double>(flow.packets.size());
        }
    }
    for (auto& v : avg) v /= static_cast<double>(n_flows);
    return avg;
}

// Biased-normalized autocorrelation, O(T * L) double loop.
inline std::vector<double> acf(std::span<const double> x, int max_lag) {
    const auto n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double denom = 0.0;
    for (double v : x) denom += (v - mean) * (v - mean);
    std::vector<double> r(max_lag, 0.0);
    if (denom <= 0.0) return r;
    for (int lag = 1; lag <= max_lag; ++lag) {
        double num = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t) num += (x[t] - mean) * (x[t + lag] - mean);
        if (static_cast<std::size_t>(lag) < n) r[lag - 1] = num / denom;
    }
    return r;
}

// KL with the same floor-and-renormalize convention, summed directly.
inline double kl(std::span<const double> p, std::span<const double> q, double eps) {
    double ps = 0.0, qs = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        ps += std::max(p[i], eps);
        qs += std::max(q[i], eps);
    }
    double out = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = std::max(p[i], eps) / ps;
        const double qi = std::max(q[i], eps) / qs;
        out += pi * std::log(pi / qi);
    }
    return out;
}

// O(n^2) DFT via std::complex.
inline std::vector<std::complex<double>> dft(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

// Stationary distribution of a row-stochastic matrix by power iteration.
inline Eigen::VectorXd stationary(const Eigen::MatrixXd& transition) {
    Eigen::VectorXd pi = Eigen::VectorXd::Constant(transition.rows(),
                                                   1.0 / static_cast<double>(transition.rows()));
    for (int i = 0; i < 10000; ++i) {
        Eigen::VectorXd next = transition.transpose() * pi;
        next /= next.sum();
        if ((next - pi).lpNorm<Eigen::Infinity>() < 1e-14) return next;
        pi = next;
    }
    return pi;
}

// Mixture-network forward pass by explicit scalar loops.
inline flowsynth::MixtureParams mdn_forward(const flowsynth::MdnModel& m, int state) {
    const int K = m.input_width, Q = m.hidden_width, M = m.num_components;
    std::vector<double> input(K, 0.0);
    input[state] = 1.0;
    std::vector<double> h1(Q, 0.0);
    for (int r = 0; r < Q; ++r) {
        double acc = m.b1[r];
        for (int c = 0; c < K; ++c) acc += m.w1(r, c) * input[c];
        h1[r] = std::tanh(acc);
    }
    std::vector<double> h2(Q, 0.0);
    for (int r = 0; r < Q; ++r) {
        double acc = m.b2[r];
        for (int c = 0; c < Q; ++c) acc += m.w2(r, c) * h1[c];
        h2[r] = std::tanh(acc);
    }
    std::vector<double> out(5 * M, 0.0);
    for (int r = 0; r < 5 * M; ++r) {
        double acc = m.b3[r];
        for (int c = 0; c < Q; ++c) acc += m.w3(r, c) * h2[c];
        out[r] = acc;
    }
    flowsynth::MixtureParams params;
    params.weights.resize(M);
    params.means.resize(2, M);
    params.vars.resize(2, M);
    double total = 0.0;
    for (int c = 0; c < M; ++c) total += std::exp(out[c]);
    for (int c = 0; c < M; ++c) params.weights[c] = std::exp(out[c]) / total;
    for (int c = 0; c < M; ++c) {
        for (int d = 0; d < 2; ++d) {
            params.means(d, c) = out[M + 2 * c + d];
            const double sp = std::log1p(std::exp(std::min(out[3 * M + 2 * c + d], 500.0))) +
                              std::max(out[3 * M + 2 * c + d] - 500.0, 0.0);
            params.vars(d, c) = std::max(sp, flowsynth::kMdnVarFloor);
        }
    }
    return params;
}

// Weighted-average batch loss through the forward/nll route only; the
// finite-difference gradient check perturbs parameters around this.
inline double batch_loss(const flowsynth::MdnModel& m,
                         std::span<const flowsynth::WeightedSample> batch) {
    double num = 0.0, den = 0.0;
    for (const auto& s : batch) {
        const auto params = flowsynth::mdn_forward(m, s.state);
        num += s.weight * flowsynth::mdn_nll(params, s.z);
        den += s.weight;
    }
    return num / den;
}

} // namespace oracles
