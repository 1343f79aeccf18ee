#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "flowsynth/errors.hpp"
#include "flowsynth/metrics.hpp"
#include "flowsynth/rng.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace flowsynth;

namespace {

Flow flow_of(std::uint64_t id, const std::vector<double>& payloads,
             const std::vector<double>& iats) {
    Flow f;
    f.flow_id = id;
    for (std::size_t i = 0; i < payloads.size(); ++i) {
        f.packets.push_back({id, payloads[i], iats[i]});
    }
    return f;
}

Flow flow_from_series(std::uint64_t id, const std::vector<double>& series) {
    Flow f;
    f.flow_id = id;
    for (double v : series) f.packets.push_back({id, v, 0.001});
    return f;
}

std::vector<double> ar1_series(double phi, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(n);
    x[0] = rng.normal();
    for (std::size_t t = 1; t < n; ++t) x[t] = phi * x[t - 1] + rng.normal();
    return x;
}

} // namespace

TEST_CASE("avg_flow_cdf of a single small flow") {
    const auto f = flow_of(1, {1.0, 2.0, 3.0}, {0.1, 0.1, 0.1});
    const auto cdf = avg_flow_cdf({f}, Feature::payload, {1.0, 2.0, 3.0});
    REQUIRE(cdf.values.size() == 3);
    CHECK(cdf.values[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(cdf.values[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(cdf.values[2] == 1.0);
}

TEST_CASE("avg_flow_cdf averages flows, not packets") {
    const auto a = flow_of(1, {0.0}, {0.1});
    const auto b = flow_of(2, {10.0}, {0.1});
    const auto cdf = avg_flow_cdf({a, b}, Feature::payload, {5.0});
    REQUIRE(cdf.values.size() == 1);
    CHECK(cdf.values[0] == 0.5);
}

TEST_CASE("avg_flow_cdf matches the double-loop oracle") {
    const auto flows = support::random_flows(12, 3, 40, 42);
    const auto grid = make_grid(flows, flows, Feature::payload, 64);
    const auto cdf = avg_flow_cdf(flows, Feature::payload, grid);
    const auto want = oracles::avg_cdf(flows, Feature::payload, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(std::abs(cdf.values[i] - want[i]) <= 1e-12);
    }
    CHECK(cdf.values.back() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::is_sorted(cdf.values.begin(), cdf.values.end()));
    CHECK_THROWS_AS(avg_flow_cdf({}, Feature::payload, grid), DomainError);
}

TEST_CASE("ks_distance endpoints") {
    AvgFlowCdf a{{0.0, 1.0}, {0.0, 1.0}};
    AvgFlowCdf b{{0.0, 1.0}, {1.0, 1.0}};
    CHECK(ks_distance(a, a) == 0.0);
    CHECK(ks_distance(a, b) == 1.0);
    AvgFlowCdf c{{0.0, 2.0}, {0.0, 1.0}};
    CHECK_THROWS_AS(ks_distance(a, c), DomainError);
}

TEST_CASE("cdf_kl is zero at identity and finite against a floored bin") {
    AvgFlowCdf a{{0.0, 1.0, 2.0}, {0.2, 0.7, 1.0}};
    CHECK(cdf_kl(a, a, 1e-12) == 0.0);

    // all real mass in a bin where the synthetic density is at the floor
    AvgFlowCdf p{{0.0, 1.0}, {0.0, 1.0}};
    AvgFlowCdf q{{0.0, 1.0}, {1.0, 1.0}};
    const double v = cdf_kl(p, q, 1e-12);
    CHECK(std::isfinite(v));
    CHECK(v > 10.0);
}

TEST_CASE("cdf_kl matches the direct sum oracle") {
    Rng rng(17);
    const std::size_t n = 64;
    AvgFlowCdf a, b;
    double ca = 0.0, cb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        a.grid.push_back(static_cast<double>(i));
        b.grid.push_back(static_cast<double>(i));
        ca += rng.uniform();
        cb += rng.uniform();
        a.values.push_back(ca);
        b.values.push_back(cb);
    }
    for (auto& v : a.values) v /= ca;
    for (auto& v : b.values) v /= cb;
    std::vector<double> pa(n), pb(n);
    for (std::size_t i = 0; i < n; ++i) {
        pa[i] = i == 0 ? a.values[0] : a.values[i] - a.values[i - 1];
        pb[i] = i == 0 ? b.values[0] : b.values[i] - b.values[i - 1];
    }
    CHECK(cdf_kl(a, b, 1e-12) ==
          doctest::Approx(oracles::kl(pa, pb, 1e-12)).epsilon(1e-12));
}

TEST_CASE("psd_estimate of a constant series degrades to a uniform floor") {
    const auto f = flow_from_series(1, std::vector<double>(64, 3.25));
    const auto est = psd_estimate({f}, Feature::payload, 128);
    REQUIRE(est.power.size() == 64);
    for (double p : est.power) CHECK(p == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
    CHECK(std::abs(std::accumulate(est.power.begin(), est.power.end(), 0.0) - 1.0) <= 1e-9);
}

TEST_CASE("psd_estimate concentrates an alternating series at the nyquist bin") {
    std::vector<double> alt(128);
    for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = (i % 2 == 0) ? 1.0 : -1.0;
    const auto est = psd_estimate({flow_from_series(1, alt)}, Feature::payload, 128);
    CHECK(est.power.back() > 0.999);
    CHECK(est.freqs.back() == 0.5);
}

TEST_CASE("psd averaging over identical flows is idempotent") {
    const auto flows = support::random_flows(1, 60, 60, 5);
    const auto one = psd_estimate(flows, Feature::iat, 128);
    const auto two = psd_estimate({flows[0], flows[0]}, Feature::iat, 128);
    for (std::size_t i = 0; i < one.power.size(); ++i) CHECK(one.power[i] == two.power[i]);
}

TEST_CASE("psd pipeline matches a brute-force dft periodogram") {
    Rng rng(23);
    std::vector<double> series(128);
    for (auto& v : series) v = rng.normal();
    const auto est = psd_estimate({flow_from_series(1, series)}, Feature::payload, 128);

    // oracle: demean, full dft, bins 1..n/2, normalize
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= 128.0;
    std::vector<double> centered(128);
    for (std::size_t i = 0; i < 128; ++i) centered[i] = series[i] - mean;
    const auto spec = oracles::dft(centered);
    std::vector<double> power(64);
    double total = 0.0;
    for (int k = 1; k <= 64; ++k) {
        power[k - 1] = std::norm(spec[k]);
        total += power[k - 1];
    }
    for (auto& v : power) v /= total;
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(est.power[i] - power[i]) <= 1e-9);
}

TEST_CASE("psd_kl identity and oracle agreement") {
    const auto flows = support::random_flows(6, 20, 90, 7);
    const auto est = psd_estimate(flows, Feature::payload, 128);
    CHECK(psd_kl(est, est, 1e-12) == 0.0);

    const auto flows2 = support::random_flows(6, 20, 90, 8);
    const auto est2 = psd_estimate(flows2, Feature::payload, 128);
    CHECK(psd_kl(est, est2, 1e-12) ==
          doctest::Approx(oracles::kl(est.power, est2.power, 1e-12)).epsilon(1e-12));
    CHECK(psd_kl(est, est2, 1e-12) >= 0.0);

    SpectrumEstimate other = est2;
    other.freqs[0] *= 2.0;
    CHECK_THROWS_AS(psd_kl(est, other, 1e-12), DomainError);
}

TEST_CASE("acf of white noise stays inside the confidence band") {
    Rng rng(3);
    std::vector<double> x(5000);
    for (auto& v : x) v = rng.normal();
    const auto r = acf(x, 10);
    for (double v : r) CHECK(std::abs(v) < 3.0 / std::sqrt(5000.0));
}

TEST_CASE("acf of an ar(1) process follows the analytic decay") {
    const auto x = ar1_series(0.9, 20000, 9);
    const auto r = acf(x, 5);
    for (int lag = 1; lag <= 5; ++lag) {
        CHECK(std::abs(r[lag - 1] - std::pow(0.9, lag)) < 0.03);
    }
}

TEST_CASE("acf conventions and oracle agreement") {
    CHECK(acf(std::vector<double>(32, 7.0), 5) == std::vector<double>(5, 0.0));

    Rng rng(13);
    std::vector<double> x(400);
    for (auto& v : x) v = rng.normal() + 0.5 * rng.uniform();
    const auto got = acf(x, 20);
    const auto want = oracles::acf(x, 20);
    for (int i = 0; i < 20; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
}

TEST_CASE("acf_rmse identity and ar(1) separation") {
    const auto flows = support::random_flows(8, 10, 60, 21);
    CHECK(acf_rmse(flows, flows, Feature::payload, 50) == 0.0);
    CHECK(acf_rmse(flows, flows, Feature::iat, 50) == 0.0);

    // lag-1 autocorrelations differ by about 0.4 between the processes
    const auto real = flow_from_series(1, ar1_series(0.5, 30000, 31));
    const auto synth = flow_from_series(1, ar1_series(0.1, 30000, 32));
    const double rmse = acf_rmse({real}, {synth}, Feature::payload, 1);
    CHECK(rmse == doctest::Approx(0.4).epsilon(0.1));
}

TEST_CASE("spectral_entropy separates flat and peaked spectra") {
    // A raw 64-bin periodogram of white noise has chi^2_2 bins, so its
    // normalized entropy concentrates near (ln n - (1 - gamma))/ln n
    // ~= 0.898 rather than exactly 1.
    Rng rng(41);
    std::vector<double> noise(4096);
    for (auto& v : noise) v = rng.normal();
    const double white = spectral_entropy(noise, 128);
    CHECK(white > 0.86);
    CHECK(white < 0.94);

    std::vector<double> tone(128);
    for (std::size_t i = 0; i < tone.size(); ++i) {
        tone[i] = std::sin(2.0 * M_PI * 16.0 * static_cast<double>(i) / 128.0);
    }
    CHECK(spectral_entropy(tone, 128) < 0.05);

    std::vector<double> scaled = tone;
    std::vector<double> mixed(128);
    for (std::size_t i = 0; i < 128; ++i) {
        mixed[i] = tone[i] + 0.3 * std::cos(2.0 * M_PI * 40.0 * i / 128.0);
    }
    const double h = spectral_entropy(mixed, 128);
    for (auto& v : mixed) v *= 17.5;
    CHECK(spectral_entropy(mixed, 128) == doctest::Approx(h).epsilon(1e-12));

    CHECK(spectral_entropy(std::vector<double>(50, 1.0), 128) == 0.0);
    CHECK(spectral_entropy(std::vector<double>{1.0}, 128) == 0.0);
}

TEST_CASE("entropy bias and coverage formulas") {
    const std::vector<double> real{0.2, 0.8};
    const std::vector<double> synth{0.1, 0.9};
    const std::vector<double> shifted{0.3, 0.5};
    const std::vector<double> inside{0.4, 0.6};
    const std::vector<double> flat{0.5, 0.5};
    CHECK(entropy_coverage_from(real, synth) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(entropy_bias_from(real, synth) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(entropy_bias_from(real, shifted) == doctest::Approx(0.1).epsilon(1e-12));

    // synthetic range strictly inside the real range
    CHECK(entropy_coverage_from(real, inside) == 0.0);
    CHECK(entropy_coverage_from(real, real) == 0.0);
    CHECK_THROWS_AS(entropy_coverage_from(flat, synth), DomainError);
}

TEST_CASE("evaluate(X, X) is zero across all twelve metrics") {
    const auto flows = support::random_flows(10, 5, 80, 77);
    const auto rep = evaluate(flows, flows);
    CHECK(rep.ks_payload <= 1e-9);
    CHECK(rep.ks_iat <= 1e-9);
    CHECK(rep.kl_psd_payload <= 1e-9);
    CHECK(rep.kl_psd_iat <= 1e-9);
    CHECK(rep.kl_cdf_payload <= 1e-9);
    CHECK(rep.kl_cdf_iat <= 1e-9);
    CHECK(rep.cov_payload <= 1e-9);
    CHECK(rep.cov_iat <= 1e-9);
    CHECK(rep.bias_payload <= 1e-9);
    CHECK(rep.bias_iat <= 1e-9);
    CHECK(rep.acf_rmse_payload <= 1e-9);
    CHECK(rep.acf_rmse_iat <= 1e-9);
    CHECK(rep.aggregate <= 1e-9);
}

TEST_CASE("evaluate is invariant to flow order and non-negative") {
    const auto real = support::random_flows(9, 4, 50, 101);
    const auto synth = support::random_flows(11, 4, 50, 202);
    const auto a = evaluate(real, synth);

    auto real_rev = real;
    auto synth_rev = synth;
    std::reverse(real_rev.begin(), real_rev.end());
    std::reverse(synth_rev.begin(), synth_rev.end());
    const auto b = evaluate(real_rev, synth_rev);

    const double pairs[][2] = {
        {a.ks_payload, b.ks_payload},       {a.ks_iat, b.ks_iat},
        {a.kl_psd_payload, b.kl_psd_payload}, {a.kl_psd_iat, b.kl_psd_iat},
        {a.kl_cdf_payload, b.kl_cdf_payload}, {a.kl_cdf_iat, b.kl_cdf_iat},
        {a.cov_payload, b.cov_payload},     {a.cov_iat, b.cov_iat},
        {a.bias_payload, b.bias_payload},   {a.bias_iat, b.bias_iat},
        {a.acf_rmse_payload, b.acf_rmse_payload}, {a.acf_rmse_iat, b.acf_rmse_iat},
    };
    double sum = 0.0;
    for (const auto& pr : pairs) {
        CHECK(pr[0] >= 0.0);
        CHECK(std::abs(pr[0] - pr[1]) <= 1e-12 * std::max(1.0, std::abs(pr[0])));
        sum += pr[0];
    }
    CHECK(std::abs(a.aggregate - sum) <= 1e-9);
}

TEST_CASE("metric report serialization stays aligned with the field list") {
    MetricReport rep;
    rep.ks_payload = 0.25;
    rep.kl_cdf_iat = 1.5;
    rep.aggregate = 1.75;
    std::ostringstream text;
    write_metric_report(text, rep);
    CHECK(text.str().find("ks_payload = 0.25") != std::string::npos);
    CHECK(text.str().find("aggregate = 1.75") != std::string::npos);

    const auto header = metric_csv_header();
    const auto row = metric_csv_row(rep);
    CHECK(std::count(header.begin(), header.end(), ',') == 12);
    CHECK(std::count(row.begin(), row.end(), ',') == 12);
    CHECK(header.substr(0, 10) == "ks_payload");

    AvgFlowCdf cdf{{0.0, 1.0}, {0.5, 1.0}};
    std::ostringstream csv;
    write_cdf_csv(csv, cdf, cdf);
    CHECK(csv.str() == "u,real,synth\n0,0.5,0.5\n1,1,1\n");
}
