#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "flowsynth/hmm_gmm.hpp"
#include "flowsynth/mdn.hpp"
#include "flowsynth/rng.hpp"
#include "flowsynth/trace.hpp"

namespace flowsynth {

inline constexpr char kBundleMagic[8] = {'F', 'S', 'Y', 'N', 'B', 'N', 'D', 'L'};
inline constexpr std::uint32_t kBundleVersion = 1;

struct BundleMeta {
    std::string protocol;
    // Left empty by default so that fixed-seed training runs stay
    // byte-identical; set it explicitly when provenance matters.
    std::string created_at;
    // Flow-length histogram of the training split, used to resample
    // realistic flow lengths at generation time.
    std::vector<std::pair<std::uint32_t, std::uint64_t>> flow_length_hist;
};

// Everything needed to generate traffic: state chain, per-state
// emission network, feature normalization, and the inverse-transform
// constants.
struct ModelBundle {
    HmmGmmModel hmm;
    MdnModel mdn;
    NormalizationStats norm;
    double mtu = 1500.0;
    double iat_floor = 1e-6;
    BundleMeta meta;

    void validate() const;
};

struct SyntheticPacket {
    int payload_len = 0; // bytes, in [0, mtu]
    double iat = 0.0;    // seconds, >= iat_floor
    int state = 0;       // diagnostic; not exported to trace CSVs
};

// One emission-network evaluation per state, cached for a generation
// session so that per-packet cost does not depend on the network size.
std::vector<MixtureParams> cache_emissions(const ModelBundle& bundle);

// Back from normalized feature space to physical units: payload
// exp-inverted, rounded to the nearest byte (ties to even) and clamped
// to [0, mtu]; inter-arrival times floored at iat_floor.
std::pair<int, double> inverse_transform(const Eigen::Vector2d& z, const NormalizationStats& norm,
                                         double mtu, double iat_floor);

// Streaming packet source. Owns its random generator; a bundle can be
// shared by any number of concurrent samplers.
class FlowSampler {
public:
    FlowSampler(const ModelBundle& bundle, std::span<const MixtureParams> cache,
                std::uint64_t seed);

    SyntheticPacket next();

    // Starts a new flow: the next state is drawn from the initial
    // distribution again. Keeps the random stream.
    void restart() { prev_state_ = -1; }

    // Draws a flow length from the stored training histogram; falls
    // back to `fallback` when the bundle has none.
    std::size_t sample_length(std::size_t fallback);

private:
    const ModelBundle* bundle_;
    std::span<const MixtureParams> cache_;
    std::vector<Eigen::Matrix<double, 2, Eigen::Dynamic>> stddev_; // per state, 2 x M
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> transition_;
    Rng rng_;
    int prev_state_ = -1;
};

std::vector<SyntheticPacket> generate_flow(const ModelBundle& bundle,
                                           std::span<const MixtureParams> cache,
                                           std::size_t length, std::uint64_t seed);
std::vector<SyntheticPacket> generate_flow(const ModelBundle& bundle, std::size_t length,
                                           std::uint64_t seed);

// Self-describing binary container: 8-byte magic, version, JSON
// metadata block, then little-endian float64 parameter arrays with
// explicit shapes and a trailing checksum. Round-trips bit-exactly.
void save_bundle(const ModelBundle& bundle, std::ostream& out);
void save_bundle_file(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(std::istream& in);
ModelBundle load_bundle_file(const std::string& path);

} // namespace flowsynth
