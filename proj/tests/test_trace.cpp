#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "flowsynth/errors.hpp"
#include "flowsynth/rng.hpp"
#include "flowsynth/trace.hpp"
#include "oracles.hpp"

using namespace flowsynth;

TEST_CASE("parse_trace maps csv rows to records") {
    std::istringstream in("1,1500,0.002\n1,40,0.0001");
    const auto records = parse_trace(in);
    REQUIRE(records.size() == 2);
    CHECK(records[0].flow_id == 1);
    CHECK(records[0].payload_len == 1500.0);
    CHECK(records[0].iat == 0.002);
    CHECK(records[1].payload_len == 40.0);
    CHECK(records[1].iat == 0.0001);
}

TEST_CASE("parse_trace on an empty stream yields an empty list") {
    std::istringstream in("");
    CHECK(parse_trace(in).empty());
}

TEST_CASE("parse_trace rejects a non-numeric field with its line number") {
    std::istringstream in("1,abc,0.1");
    try {
        parse_trace(in);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
    }
}

TEST_CASE("parse_trace rejects a wrong column count as a schema error") {
    std::istringstream in("1,20,0.1\n2,30\n");
    try {
        parse_trace(in);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("parse_trace honours the header flag") {
    std::istringstream in("flow_id,payload_len,iat\n7,99,0.5\n");
    const auto records = parse_trace(in, {.header = true});
    REQUIRE(records.size() == 1);
    CHECK(records[0].flow_id == 7);
}

TEST_CASE("parse_trace accepts nan fields; cleaning removes them later") {
    std::istringstream in("1,nan,0.1");
    const auto records = parse_trace(in);
    REQUIRE(records.size() == 1);
    CHECK(std::isnan(records[0].payload_len));
}

TEST_CASE("clean removes records above the iat cap") {
    std::vector<PacketRecord> records{{1, 100, 0.010}, {1, 100, 0.030}, {1, 100, 0.020}};
    const auto out = clean(records, 0.025);
    REQUIRE(out.size() == 2);
    CHECK(out[0].iat == 0.010);
    CHECK(out[1].iat == 0.020);
}

TEST_CASE("clean removes non-finite records and keeps the cap boundary") {
    const double nan = std::nan("");
    std::vector<PacketRecord> records{
        {1, nan, 0.01}, {1, 100, nan}, {1, 100, 0.025}, {1, -3, 0.01}, {1, 100, -0.01}};
    const auto out = clean(records, 0.025);
    REQUIRE(out.size() == 1);
    CHECK(out[0].iat == 0.025); // strict inequality: iat == cap is retained
}

TEST_CASE("clean is the identity on already-clean input and idempotent") {
    std::vector<PacketRecord> records{{1, 10, 0.001}, {2, 20, 0.002}};
    const auto once = clean(records, 0.01);
    CHECK(once.size() == records.size());
    const auto twice = clean(once, 0.01);
    REQUIRE(twice.size() == once.size());
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(twice[i].payload_len == once[i].payload_len);
        CHECK(twice[i].iat == once[i].iat);
    }
}

TEST_CASE("percentile_cap interpolates between order statistics") {
    std::vector<PacketRecord> records;
    for (int i = 1; i <= 100; ++i) records.push_back({1, 0, i * 0.001});
    // position 0.98 * 99 = 97.02 between 98 ms and 99 ms
    CHECK(percentile_cap(records, 0.98) == doctest::Approx(0.09802).epsilon(1e-12));
}

TEST_CASE("percentile_cap degenerate inputs") {
    std::vector<PacketRecord> one{{1, 0, 0.42}};
    CHECK(percentile_cap(one, 0.98) == 0.42);
    CHECK(percentile_cap(one, 0.01) == 0.42);

    std::vector<PacketRecord> constant(10, PacketRecord{1, 0, 0.007});
    CHECK(percentile_cap(constant, 0.5) == 0.007);

    CHECK_THROWS_AS(percentile_cap({}, 0.98), DomainError);
}

TEST_CASE("featurize applies the log-payload transform") {
    CHECK(featurize({1, 0.0, 0.001}).x() == 0.0);
    CHECK(featurize({1, 0.0, 0.001}).y() == 0.001);
    CHECK(featurize({1, 1499.0, 0.0}).x() == doctest::Approx(7.313220387090301).epsilon(1e-15));
    CHECK(featurize({1, std::exp(1.0) - 1.0, 0.5}).x() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("featurize is strictly monotone in payload for fixed iat") {
    double prev = featurize({1, 0.0, 0.01}).x();
    for (double payload : {1.0, 10.0, 100.0, 1499.0, 1500.0}) {
        const double cur = featurize({1, payload, 0.01}).x();
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("fit_normalizer matches the symmetric pair by hand") {
    Flow f;
    f.flow_id = 1;
    f.packets.push_back({1, 0.0, 0.0});                       // x = [0, 0]
    f.packets.push_back({1, std::exp(2.0) - 1.0, 2.0});       // x = [2, 2]
    const auto stats = fit_normalizer({f});
    CHECK(stats.mean.x() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(stats.mean.y() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(stats.stddev.x() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(stats.stddev.y() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("fit_normalizer matches a brute-force two-pass computation") {
    Rng rng(7);
    std::vector<Flow> flows(4);
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < flows.size(); ++i) {
        flows[i].flow_id = i;
        for (int t = 0; t < 250; ++t) {
            PacketRecord p{i, 1500.0 * rng.uniform(), 0.01 * rng.uniform()};
            flows[i].packets.push_back(p);
            xs.push_back(featurize(p).x());
            ys.push_back(featurize(p).y());
        }
    }
    const auto stats = fit_normalizer(flows);
    const auto [mx, sx] = oracles::mean_std(xs);
    const auto [my, sy] = oracles::mean_std(ys);
    CHECK(stats.mean.x() == doctest::Approx(mx).epsilon(1e-12));
    CHECK(stats.mean.y() == doctest::Approx(my).epsilon(1e-12));
    CHECK(stats.stddev.x() == doctest::Approx(sx).epsilon(1e-12));
    CHECK(stats.stddev.y() == doctest::Approx(sy).epsilon(1e-12));
}

TEST_CASE("fit_normalizer rejects degenerate data") {
    Flow f;
    f.flow_id = 1;
    for (int i = 0; i < 5; ++i) f.packets.push_back({1, 100.0, 0.001});
    CHECK_THROWS_AS(fit_normalizer({f}), DomainError);

    Flow single;
    single.flow_id = 1;
    single.packets.push_back({1, 100.0, 0.001});
    CHECK_THROWS_AS(fit_normalizer({single}), DomainError);
}

TEST_CASE("normalize maps the anchor points and round-trips") {
    NormalizationStats stats{{2.0, 3.0}, {0.5, 4.0}};
    CHECK(normalize(stats.mean, stats).isZero(0.0));
    const Eigen::Vector2d shifted = stats.mean + stats.stddev;
    CHECK(normalize(shifted, stats).isApprox(Eigen::Vector2d::Ones(), 1e-15));

    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Vector2d x(20.0 * rng.uniform() - 10.0, 20.0 * rng.uniform() - 10.0);
        const Eigen::Vector2d back = denormalize(normalize(x, stats), stats);
        CHECK(std::abs(back.x() - x.x()) <= 1e-12 * std::max(1.0, std::abs(x.x())));
        CHECK(std::abs(back.y() - x.y()) <= 1e-12 * std::max(1.0, std::abs(x.y())));
    }
}

namespace {

std::vector<Flow> numbered_flows(std::size_t n) {
    std::vector<Flow> flows(n);
    for (std::size_t i = 0; i < n; ++i) {
        flows[i].flow_id = i + 1;
        flows[i].packets.push_back({i + 1, 100.0, 0.001});
    }
    return flows;
}

} // namespace

TEST_CASE("split_flows respects the 90/10 fraction at flow granularity") {
    const auto split = split_flows(numbered_flows(10), 0.9, 123);
    CHECK(split.train.size() == 9);
    CHECK(split.test.size() == 1);
}

TEST_CASE("split_flows is deterministic and partitions the id set") {
    const auto flows = numbered_flows(23);
    const auto a = split_flows(flows, 0.8, 99);
    const auto b = split_flows(flows, 0.8, 99);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].flow_id == b.train[i].flow_id);
    }

    std::set<std::uint64_t> seen;
    for (const auto& f : a.train) seen.insert(f.flow_id);
    for (const auto& f : a.test) {
        CHECK(seen.count(f.flow_id) == 0);
        seen.insert(f.flow_id);
    }
    CHECK(seen.size() == flows.size());
}

TEST_CASE("split_flows clamps to one flow per side") {
    const auto split = split_flows(numbered_flows(2), 0.9, 5);
    CHECK(split.train.size() == 1);
    CHECK(split.test.size() == 1);
    CHECK_THROWS_AS(split_flows(numbered_flows(1), 0.9, 5), DomainError);
}

TEST_CASE("group_flows preserves membership and order") {
    std::vector<PacketRecord> records{
        {2, 10, 0.1}, {1, 20, 0.2}, {2, 30, 0.3}, {3, 40, 0.4}, {1, 50, 0.5}};
    const auto flows = group_flows(records);
    REQUIRE(flows.size() == 3);
    CHECK(flows[0].flow_id == 2); // first-seen order
    CHECK(flows[0].packets.size() == 2);
    CHECK(flows[0].packets[1].payload_len == 30.0);
    CHECK(flows[1].flow_id == 1);
    CHECK(flows[1].packets[1].payload_len == 50.0);
    for (const auto& f : flows) {
        for (const auto& p : f.packets) CHECK(p.flow_id == f.flow_id);
    }
}
