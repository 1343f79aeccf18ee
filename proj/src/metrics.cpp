#include "flowsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "flowsynth/errors.hpp"
#include "flowsynth/text_util.hpp"

namespace flowsynth {

namespace {

constexpr double kPowerFloor = 1e-20;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.
void fft_pow2(std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = re.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (std::size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (std::size_t k = 0; k < len / 2; ++k) {
                const double ur = re[i + k], ui = im[i + k];
                const double vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
                const double vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                const double nr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = nr;
            }
        }
    }
}

void dft_direct(const std::vector<double>& x, std::vector<double>& re, std::vector<double>& im) {
    const std::size_t n = x.size();
    re.assign(n, 0.0);
    im.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(t) /
                               static_cast<double>(n);
            re[k] += x[t] * std::cos(ang);
            im[k] += x[t] * std::sin(ang);
        }
    }
}

// Mean-removed periodogram of the first min(T, segment_len) values,
// zero-padded to segment_len. Returns bins 1..segment_len/2.
std::vector<double> periodogram(std::span<const double> series, int segment_len) {
    const std::size_t used = std::min(series.size(), static_cast<std::size_t>(segment_len));
    double mean = 0.0;
    for (std::size_t i = 0; i < used; ++i) mean += series[i];
    if (used > 0) mean /= static_cast<double>(used);

    std::vector<double> re(segment_len, 0.0), im(segment_len, 0.0);
    for (std::size_t i = 0; i < used; ++i) re[i] = series[i] - mean;

    if (is_pow2(segment_len)) {
        fft_pow2(re, im);
    } else {
        std::vector<double> x = re;
        dft_direct(x, re, im);
    }
    std::vector<double> power(segment_len / 2);
    for (int k = 1; k <= segment_len / 2; ++k) power[k - 1] = re[k] * re[k] + im[k] * im[k];
    return power;
}

double series_variance(std::span<const double> series) {
    if (series.size() < 2) return 0.0;
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    return var / static_cast<double>(series.size());
}

void require_same_grid(const std::vector<double>& a, const std::vector<double>& b,
                       const char* what) {
    if (a.size() != b.size() || !std::equal(a.begin(), a.end(), b.begin())) {
        throw DomainError(std::string(what) + ": evaluation grids do not match");
    }
}

// Floor, renormalize, then sum p*log(p/q).
double kl_floored(std::span<const double> p, std::span<const double> q, double eps) {
    if (!(eps > 0.0)) throw DomainError("kl: eps must be positive");
    double ps = 0.0, qs = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        ps += std::max(p[i], eps);
        qs += std::max(q[i], eps);
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = std::max(p[i], eps) / ps;
        const double qi = std::max(q[i], eps) / qs;
        kl += pi * std::log(pi / qi);
    }
    return std::max(kl, 0.0);
}

std::vector<double> per_flow_entropies(const std::vector<Flow>& flows, Feature feature,
                                       int segment_len) {
    std::vector<double> out;
    for (const auto& f : flows) {
        if (f.packets.size() < 2) continue;
        const auto series = feature_series(f, feature);
        out.push_back(spectral_entropy(series, segment_len));
    }
    if (out.empty()) {
        throw DomainError("entropy metrics: no flow with at least 2 packets");
    }
    return out;
}

} // namespace

std::vector<double> feature_series(const Flow& flow, Feature feature) {
    std::vector<double> out;
    out.reserve(flow.packets.size());
    for (const auto& p : flow.packets) {
        out.push_back(feature == Feature::payload ? p.payload_len : p.iat);
    }
    return out;
}

std::vector<double> make_grid(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                              Feature feature, int points) {
    if (points < 1) throw DomainError("make_grid: need at least 1 point");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    auto scan = [&](const std::vector<Flow>& flows) {
        for (const auto& f : flows) {
            for (const auto& p : f.packets) {
                const double v = feature == Feature::payload ? p.payload_len : p.iat;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    };
    scan(real);
    scan(synth);
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        throw DomainError("make_grid: no packets in either flow set");
    }
    if (hi <= lo || points == 1) return {lo};
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i) {
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    grid.back() = hi;
    return grid;
}

AvgFlowCdf avg_flow_cdf(const std::vector<Flow>& flows, Feature feature,
                        const std::vector<double>& grid) {
    if (flows.empty()) throw DomainError("avg_flow_cdf: empty flow list");
    if (!std::is_sorted(grid.begin(), grid.end())) {
        throw DomainError("avg_flow_cdf: grid must be ascending");
    }
    AvgFlowCdf out;
    out.grid = grid;
    out.values.assign(grid.size(), 0.0);
    std::size_t counted = 0;
    std::vector<double> sorted;
    for (const auto& f : flows) {
        if (f.packets.empty()) continue;
        sorted = feature_series(f, feature);
        std::sort(sorted.begin(), sorted.end());
        const double inv = 1.0 / static_cast<double>(sorted.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto le = std::upper_bound(sorted.begin(), sorted.end(), grid[i]) - sorted.begin();
            out.values[i] += static_cast<double>(le) * inv;
        }
        ++counted;
    }
    if (counted == 0) throw DomainError("avg_flow_cdf: all flows are empty");
    for (auto& v : out.values) v /= static_cast<double>(counted);
    return out;
}

double ks_distance(const AvgFlowCdf& real, const AvgFlowCdf& synth) {
    require_same_grid(real.grid, synth.grid, "ks_distance");
    double sup = 0.0;
    for (std::size_t i = 0; i < real.values.size(); ++i) {
        sup = std::max(sup, std::abs(real.values[i] - synth.values[i]));
    }
    return sup;
}

double cdf_kl(const AvgFlowCdf& real, const AvgFlowCdf& synth, double eps) {
    require_same_grid(real.grid, synth.grid, "cdf_kl");
    const std::size_t n = real.values.size();
    std::vector<double> p(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = i == 0 ? real.values[0] : real.values[i] - real.values[i - 1];
        q[i] = i == 0 ? synth.values[0] : synth.values[i] - synth.values[i - 1];
    }
    return kl_floored(p, q, eps);
}

SpectrumEstimate psd_estimate(const std::vector<Flow>& flows, Feature feature, int segment_len) {
    if (flows.empty()) throw DomainError("psd_estimate: empty flow list");
    if (segment_len < 2) throw DomainError("psd_estimate: segment_len must be >= 2");
    SpectrumEstimate out;
    const int bins = segment_len / 2;
    out.freqs.resize(bins);
    for (int k = 1; k <= bins; ++k) {
        out.freqs[k - 1] = static_cast<double>(k) / static_cast<double>(segment_len);
    }
    out.power.assign(bins, 0.0);
    std::size_t counted = 0;
    for (const auto& f : flows) {
        if (f.packets.size() < 2) continue;
        const auto series = feature_series(f, feature);
        const auto pg = periodogram(series, segment_len);
        for (int k = 0; k < bins; ++k) out.power[k] += pg[k];
        ++counted;
    }
    if (counted > 0) {
        for (auto& v : out.power) v /= static_cast<double>(counted);
    }
    double total = 0.0;
    for (auto& v : out.power) {
        v = std::max(v, kPowerFloor);
        total += v;
    }
    for (auto& v : out.power) v /= total;
    return out;
}

double psd_kl(const SpectrumEstimate& real, const SpectrumEstimate& synth, double eps) {
    require_same_grid(real.freqs, synth.freqs, "psd_kl");
    return kl_floored(real.power, synth.power, eps);
}

std::vector<double> acf(std::span<const double> series, int max_lag) {
    if (max_lag < 1) throw DomainError("acf: max_lag must be >= 1");
    std::vector<double> r(max_lag, 0.0);
    const auto n = series.size();
    if (n < 2) return r;
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(n);
    double denom = 0.0;
    for (double v : series) denom += (v - mean) * (v - mean);
    if (denom <= 0.0) return r; // constant series: zeros by convention
    for (int lag = 1; lag <= max_lag; ++lag) {
        if (static_cast<std::size_t>(lag) >= n) break;
        double num = 0.0;
        for (std::size_t t = 0; t + lag < n; ++t) {
            num += (series[t] - mean) * (series[t + lag] - mean);
        }
        r[lag - 1] = num / denom;
    }
    return r;
}

double acf_rmse(const std::vector<Flow>& real, const std::vector<Flow>& synth, Feature feature,
                int max_lag) {
    if (max_lag < 1) throw DomainError("acf_rmse: max_lag must be >= 1");
    std::size_t shortest = std::numeric_limits<std::size_t>::max();
    auto scan = [&](const std::vector<Flow>& flows) {
        for (const auto& f : flows) {
            if (f.packets.size() >= 2) shortest = std::min(shortest, f.packets.size());
        }
    };
    scan(real);
    scan(synth);
    if (shortest == std::numeric_limits<std::size_t>::max()) return 0.0;
    const int lags = std::min<int>(max_lag, static_cast<int>(shortest) - 1);
    if (lags < 1) return 0.0;

    auto mean_acf = [&](const std::vector<Flow>& flows) {
        std::vector<double> avg(lags, 0.0);
        std::size_t counted = 0;
        for (const auto& f : flows) {
            if (f.packets.size() < 2) continue;
            const auto series = feature_series(f, feature);
            const auto r = acf(series, lags);
            for (int i = 0; i < lags; ++i) avg[i] += r[i];
            ++counted;
        }
        if (counted > 0) {
            for (auto& v : avg) v /= static_cast<double>(counted);
        }
        return avg;
    };
    const auto ra = mean_acf(real);
    const auto rb = mean_acf(synth);
    double sq = 0.0;
    for (int i = 0; i < lags; ++i) sq += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    return std::sqrt(sq / static_cast<double>(lags));
}

double spectral_entropy(std::span<const double> series, int segment_len) {
    if (series.size() < 2) return 0.0;
    if (series_variance(series) <= 0.0) return 0.0;
    const auto power = periodogram(series, segment_len);
    double total = 0.0;
    for (double v : power) total += v;
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double v : power) {
        const double p = v / total;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h / std::log(static_cast<double>(power.size()));
}

double entropy_bias_from(std::span<const double> real_entropies,
                         std::span<const double> synth_entropies) {
    if (real_entropies.empty() || synth_entropies.empty()) {
        throw DomainError("entropy_bias: empty entropy list");
    }
    double mr = 0.0, ms = 0.0;
    for (double v : real_entropies) mr += v;
    for (double v : synth_entropies) ms += v;
    mr /= static_cast<double>(real_entropies.size());
    ms /= static_cast<double>(synth_entropies.size());
    return std::abs(mr - ms);
}

double entropy_coverage_from(std::span<const double> real_entropies,
                             std::span<const double> synth_entropies) {
    if (real_entropies.empty() || synth_entropies.empty()) {
        throw DomainError("entropy_coverage: empty entropy list");
    }
    const auto [rmin, rmax] =
        std::minmax_element(real_entropies.begin(), real_entropies.end());
    const auto [smin, smax] =
        std::minmax_element(synth_entropies.begin(), synth_entropies.end());
    const double range = *rmax - *rmin;
    if (!(range > 0.0)) {
        throw DomainError("entropy_coverage: real entropy range is zero");
    }
    const double over = std::max(0.0, *smax - *rmax);
    const double under = std::max(0.0, *rmin - *smin);
    return (over + under) / range;
}

double entropy_bias(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                    Feature feature, int segment_len) {
    return entropy_bias_from(per_flow_entropies(real, feature, segment_len),
                             per_flow_entropies(synth, feature, segment_len));
}

double entropy_coverage(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                        Feature feature, int segment_len) {
    return entropy_coverage_from(per_flow_entropies(real, feature, segment_len),
                                 per_flow_entropies(synth, feature, segment_len));
}

MetricReport evaluate(const std::vector<Flow>& real, const std::vector<Flow>& synth,
                      const MetricsConfig& cfg) {
    if (real.empty() || synth.empty()) throw DomainError("evaluate: empty flow set");
    MetricReport rep;
    for (Feature feature : {Feature::payload, Feature::iat}) {
        const auto grid = make_grid(real, synth, feature, cfg.grid_points);
        const auto cdf_r = avg_flow_cdf(real, feature, grid);
        const auto cdf_s = avg_flow_cdf(synth, feature, grid);
        const double ks = ks_distance(cdf_r, cdf_s);
        const double klc = cdf_kl(cdf_r, cdf_s, cfg.eps);
        const auto psd_r = psd_estimate(real, feature, cfg.segment_len);
        const auto psd_s = psd_estimate(synth, feature, cfg.segment_len);
        const double klp = psd_kl(psd_r, psd_s, cfg.eps);
        const double rmse = acf_rmse(real, synth, feature, cfg.max_lag);
        const double bias = entropy_bias(real, synth, feature, cfg.segment_len);
        const double cov = entropy_coverage(real, synth, feature, cfg.segment_len);
        if (feature == Feature::payload) {
            rep.ks_payload = ks;
            rep.kl_cdf_payload = klc;
            rep.kl_psd_payload = klp;
            rep.acf_rmse_payload = rmse;
            rep.bias_payload = bias;
            rep.cov_payload = cov;
        } else {
            rep.ks_iat = ks;
            rep.kl_cdf_iat = klc;
            rep.kl_psd_iat = klp;
            rep.acf_rmse_iat = rmse;
            rep.bias_iat = bias;
            rep.cov_iat = cov;
        }
    }
    rep.aggregate = rep.ks_payload + rep.ks_iat + rep.kl_psd_payload + rep.kl_psd_iat +
                    rep.kl_cdf_payload + rep.kl_cdf_iat + rep.cov_payload + rep.cov_iat +
                    rep.bias_payload + rep.bias_iat + rep.acf_rmse_payload + rep.acf_rmse_iat;
    return rep;
}

namespace {

struct NamedMetric {
    const char* name;
    double MetricReport::* field;
};

constexpr NamedMetric kMetricFields[] = {
    {"ks_payload", &MetricReport::ks_payload},
    {"ks_iat", &MetricReport::ks_iat},
    {"kl_psd_payload", &MetricReport::kl_psd_payload},
    {"kl_psd_iat", &MetricReport::kl_psd_iat},
    {"kl_cdf_payload", &MetricReport::kl_cdf_payload},
    {"kl_cdf_iat", &MetricReport::kl_cdf_iat},
    {"cov_payload", &MetricReport::cov_payload},
    {"cov_iat", &MetricReport::cov_iat},
    {"bias_payload", &MetricReport::bias_payload},
    {"bias_iat", &MetricReport::bias_iat},
    {"acf_rmse_payload", &MetricReport::acf_rmse_payload},
    {"acf_rmse_iat", &MetricReport::acf_rmse_iat},
    {"aggregate", &MetricReport::aggregate},
};

} // namespace

void write_metric_report(std::ostream& out, const MetricReport& report) {
    for (const auto& m : kMetricFields) {
        out << m.name << " = " << format_double(report.*(m.field)) << '\n';
    }
}

std::string metric_csv_header() {
    std::string header;
    for (const auto& m : kMetricFields) {
        if (!header.empty()) header += ',';
        header += m.name;
    }
    return header;
}

std::string metric_csv_row(const MetricReport& report) {
    std::string row;
    for (const auto& m : kMetricFields) {
        if (!row.empty()) row += ',';
        row += format_double(report.*(m.field));
    }
    return row;
}

void write_cdf_csv(std::ostream& out, const AvgFlowCdf& real, const AvgFlowCdf& synth) {
    require_same_grid(real.grid, synth.grid, "write_cdf_csv");
    out << "u,real,synth\n";
    for (std::size_t i = 0; i < real.grid.size(); ++i) {
        out << format_double(real.grid[i]) << ',' << format_double(real.values[i]) << ','
            << format_double(synth.values[i]) << '\n';
    }
}

} // namespace flowsynth
