#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace flowsynth {

// One row of a packet trace: payload length in bytes, inter-arrival
// time in seconds, both taken as given in the input file.
struct PacketRecord {
    std::uint64_t flow_id = 0;
    double payload_len = 0.0;
    double iat = 0.0;
};

// Ordered packet sequence sharing one flow id. Flows are the unit of
// train/test splitting and of the per-flow evaluation statistics.
struct Flow {
    std::uint64_t flow_id = 0;
    std::vector<PacketRecord> packets;
};

// A normalized 2-vector: (log-payload, iat) after standardization.
using FeatureVec = Eigen::Vector2d;

// One flow in normalized feature space.
using FeatureSeq = std::vector<FeatureVec>;

// Per-dimension mean and population standard deviation of the raw
// feature space, pooled over the whole training set.
struct NormalizationStats {
    Eigen::Vector2d mean{0.0, 0.0};
    Eigen::Vector2d stddev{1.0, 1.0};
};

struct DatasetSplit {
    std::vector<Flow> train;
    std::vector<Flow> test;
};

struct CsvFormat {
    bool header = false;
};

// Parses a `flow_id,payload_len,iat` CSV stream. Throws SchemaError on
// a wrong column count and ParseError on a non-numeric field, both
// carrying the 1-based line number.
std::vector<PacketRecord> parse_trace(std::istream& in, const CsvFormat& fmt = {});
std::vector<PacketRecord> parse_trace_file(const std::string& path, const CsvFormat& fmt);

// Reads the first line and decides whether it looks like a header row.
bool sniff_header(const std::string& path);

// q-quantile of the inter-arrival times, linear interpolation between
// the closest order statistics. Computed on the raw trace, before any
// cleaning or transformation.
double percentile_cap(const std::vector<PacketRecord>& records, double q);

// Keeps records whose fields are finite and non-negative and whose iat
// does not exceed the cap (strict: iat == cap is retained). Order
// preserved; never fails.
std::vector<PacketRecord> clean(const std::vector<PacketRecord>& records, double iat_cap);

// Groups records into flows by id, first-seen order, packet order
// preserved. Empty input yields an empty list.
std::vector<Flow> group_flows(const std::vector<PacketRecord>& records);

// Raw feature vector x = [ln(1 + payload_len), iat].
Eigen::Vector2d featurize(const PacketRecord& record);

// Mean and population std of all featurized training packets, pooled
// across flows. Throws DomainError on fewer than two packets or zero
// variance in either dimension.
NormalizationStats fit_normalizer(const std::vector<Flow>& train);

Eigen::Vector2d normalize(const Eigen::Vector2d& x, const NormalizationStats& stats);
Eigen::Vector2d denormalize(const Eigen::Vector2d& z, const NormalizationStats& stats);

// Featurize + normalize every packet of a flow.
FeatureSeq normalized_sequence(const Flow& flow, const NormalizationStats& stats);
std::vector<FeatureSeq> normalized_sequences(const std::vector<Flow>& flows,
                                             const NormalizationStats& stats);

// Seeded flow-level split: shuffles flow ids and takes the first
// round(train_frac * n) as the training set, at least one flow on each
// side. Throws DomainError for fewer than two flows.
DatasetSplit split_flows(const std::vector<Flow>& flows, double train_frac, std::uint64_t seed);

// Writes the ingestion CSV schema (`flow_id,payload_len,iat`).
void write_trace_csv(std::ostream& out, const std::vector<Flow>& flows, bool header = true);

} // namespace flowsynth
