#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flowsynth/trace.hpp"

namespace flowsynth {

enum class Feature { payload, iat };

// Mean of the per-flow empirical CDFs, evaluated on a shared grid.
struct AvgFlowCdf {
    std::vector<double> grid;
    std::vector<double> values;
};

// Flow-averaged periodogram, normalized to a probability vector. The DC
// bin is dropped; mean removal zeroes it anyway.
struct SpectrumEstimate {
    std::vector<double> freqs;  // cycles per packet
    std::vector<double> power;  // sums to 1
};

struct MetricsConfig {
    int grid_points = 512;
    int segment_len = 128;
    int max_lag = 50;
    double eps = 1e-12; // KL density floor
};

// The twelve statistics plus their sum, the sweep ranking key.
struct MetricReport {
    double ks_payload = 0, ks_iat = 0;
    double kl_psd_payload = 0, kl_psd_iat = 0;
    double kl_cdf_payload = 0, kl_cdf_iat = 0;
    double cov_payload = 0, cov_iat = 0;
    double bias_payload = 0, bias_iat = 0;
    double acf_rmse_payload = 0, acf_rmse_iat = 0;
    double aggregate = 0;
};

std::vector<double> feature_series(const Flow& flow, Feature feature);

// Evenly spaced grid spanning the pooled value range of both flow sets.
std::vector<double> make_grid(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                              Feature feature, int points);

AvgFlowCdf avg_flow_cdf(const std::vector<Flow>& flows, Feature feature,
                        const std::vector<double>& grid);

// sup_u |real(u) - synth(u)|; grids must match.
double ks_distance(const AvgFlowCdf& real, const AvgFlowCdf& synth);

// KL divergence between the finite-difference densities of the two
// average CDFs, with eps flooring and renormalization.
double cdf_kl(const AvgFlowCdf& real, const AvgFlowCdf& synth, double eps);

SpectrumEstimate psd_estimate(const std::vector<Flow>& flows, Feature feature, int segment_len);

double psd_kl(const SpectrumEstimate& real, const SpectrumEstimate& synth, double eps);

// Biased-normalized sample autocorrelation at lags 1..max_lag; zeros
// for a constant series.
std::vector<double> acf(std::span<const double> series, int max_lag);

// RMSE between the per-flow-averaged ACFs of the two sets. The lag
// range shrinks to the shortest usable flow.
double acf_rmse(const std::vector<Flow>& real, const std::vector<Flow>& synth, Feature feature,
                int max_lag);

// Shannon entropy of the flow's normalized periodogram, scaled to
// [0, 1]; zero for degenerate series.
double spectral_entropy(std::span<const double> series, int segment_len);

// |mean(real entropies) - mean(synth entropies)| and the range-overshoot
// ratio, both over per-flow spectral entropies.
double entropy_bias_from(std::span<const double> real_entropies,
                         std::span<const double> synth_entropies);
double entropy_coverage_from(std::span<const double> real_entropies,
                             std::span<const double> synth_entropies);

double entropy_bias(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                    Feature feature, int segment_len);
double entropy_coverage(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                        Feature feature, int segment_len);

MetricReport evaluate(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                      const MetricsConfig& cfg = {});

// One `name = value` line per metric.
void write_metric_report(std::ostream& out, const MetricReport& report);
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);
// Schema: u,real,synth
void write_cdf_csv(std::ostream& out, const AvgFlowCdf& real, const AvgFlowCdf& synth);

} // namespace flowsynth
