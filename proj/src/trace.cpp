#include "flowsynth/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "flowsynth/errors.hpp"
#include "flowsynth/rng.hpp"
#include "flowsynth/text_util.hpp"

namespace flowsynth {

std::vector<PacketRecord> parse_trace(std::istream& in, const CsvFormat& fmt) {
    std::vector<PacketRecord> records;
    std::string line;
    std::size_t lineno = 0;
    bool skip_header = fmt.header;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (skip_header) {
            skip_header = false;
            continue;
        }
        if (sv.empty()) continue;
        auto fields = split(sv, ',');
        if (fields.size() != 3) {
            throw SchemaError("expected 3 columns (flow_id,payload_len,iat), got " +
                                  std::to_string(fields.size()),
                              lineno);
        }
        auto id = parse_uint(fields[0]);
        if (!id) throw ParseError("invalid flow_id '" + std::string(fields[0]) + "'", lineno);
        auto payload = parse_double(fields[1]);
        if (!payload) throw ParseError("invalid payload_len '" + std::string(fields[1]) + "'", lineno);
        auto iat = parse_double(fields[2]);
        if (!iat) throw ParseError("invalid iat '" + std::string(fields[2]) + "'", lineno);
        records.push_back({*id, *payload, *iat});
    }
    return records;
}

std::vector<PacketRecord> parse_trace_file(const std::string& path, const CsvFormat& fmt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file '" + path + "'");
    return parse_trace(in, fmt);
}

bool sniff_header(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trace file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) return false;
    auto fields = split(trim(line), ',');
    if (fields.empty()) return false;
    return !parse_double(fields[0]).has_value();
}

double percentile_cap(const std::vector<PacketRecord>& records, double q) {
    if (records.empty()) throw DomainError("percentile_cap: empty record list");
    if (!(q > 0.0 && q < 1.0)) throw DomainError("percentile_cap: q must lie in (0,1)");
    std::vector<double> iats;
    iats.reserve(records.size());
    for (const auto& r : records) iats.push_back(r.iat);
    std::sort(iats.begin(), iats.end());
    if (iats.size() == 1) return iats.front();
    const double pos = q * static_cast<double>(iats.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= iats.size()) return iats.back();
    const double frac = pos - static_cast<double>(lo);
    return iats[lo] + frac * (iats[lo + 1] - iats[lo]);
}

std::vector<PacketRecord> clean(const std::vector<PacketRecord>& records, double iat_cap) {
    if (!(iat_cap > 0.0)) throw DomainError("clean: iat_cap must be positive");
    std::vector<PacketRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!std::isfinite(r.payload_len) || !std::isfinite(r.iat)) continue;
        if (r.payload_len < 0.0 || r.iat < 0.0) continue;
        if (r.iat > iat_cap) continue;
        out.push_back(r);
    }
    return out;
}

std::vector<Flow> group_flows(const std::vector<PacketRecord>& records) {
    std::vector<Flow> flows;
    std::unordered_map<std::uint64_t, std::size_t> index;
    for (const auto& r : records) {
        auto [it, inserted] = index.try_emplace(r.flow_id, flows.size());
        if (inserted) flows.push_back(Flow{r.flow_id, {}});
        flows[it->second].packets.push_back(r);
    }
    return flows;
}

Eigen::Vector2d featurize(const PacketRecord& record) {
    return {std::log1p(record.payload_len), record.iat};
}

NormalizationStats fit_normalizer(const std::vector<Flow>& train) {
    std::size_t n = 0;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    for (const auto& f : train) {
        for (const auto& p : f.packets) {
            sum += featurize(p);
            ++n;
        }
    }
    if (n < 2) throw DomainError("fit_normalizer: need at least 2 packets");
    const Eigen::Vector2d mean = sum / static_cast<double>(n);
    Eigen::Vector2d sq = Eigen::Vector2d::Zero();
    for (const auto& f : train) {
        for (const auto& p : f.packets) {
            const Eigen::Vector2d d = featurize(p) - mean;
            sq += d.cwiseProduct(d);
        }
    }
    const Eigen::Vector2d var = sq / static_cast<double>(n);
    if (var.x() <= 0.0 || var.y() <= 0.0) {
        throw DomainError("fit_normalizer: zero variance in at least one feature dimension");
    }
    return {mean, var.cwiseSqrt()};
}

Eigen::Vector2d normalize(const Eigen::Vector2d& x, const NormalizationStats& stats) {
    return (x - stats.mean).cwiseQuotient(stats.stddev);
}

Eigen::Vector2d denormalize(const Eigen::Vector2d& z, const NormalizationStats& stats) {
    return z.cwiseProduct(stats.stddev) + stats.mean;
}

FeatureSeq normalized_sequence(const Flow& flow, const NormalizationStats& stats) {
    FeatureSeq seq;
    seq.reserve(flow.packets.size());
    for (const auto& p : flow.packets) seq.push_back(normalize(featurize(p), stats));
    return seq;
}

std::vector<FeatureSeq> normalized_sequences(const std::vector<Flow>& flows,
                                             const NormalizationStats& stats) {
    std::vector<FeatureSeq> out;
    out.reserve(flows.size());
    for (const auto& f : flows) out.push_back(normalized_sequence(f, stats));
    return out;
}

DatasetSplit split_flows(const std::vector<Flow>& flows, double train_frac, std::uint64_t seed) {
    if (flows.size() < 2) throw DomainError("split_flows: need at least 2 flows");
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
        throw DomainError("split_flows: train_frac must lie in (0,1)");
    }
    std::vector<std::size_t> order(flows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n = flows.size();
    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

    DatasetSplit out;
    out.train.reserve(n_train);
    out.test.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) {
        (i < n_train ? out.train : out.test).push_back(flows[order[i]]);
    }
    return out;
}

void write_trace_csv(std::ostream& out, const std::vector<Flow>& flows, bool header) {
    if (header) out << "flow_id,payload_len,iat\n";
    for (const auto& f : flows) {
        for (const auto& p : f.packets) {
            out << p.flow_id << ',' << format_double(p.payload_len) << ','
                << format_double(p.iat) << '\n';
        }
    }
}

} // namespace flowsynth
