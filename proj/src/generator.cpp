#include "flowsynth/generator.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "flowsynth/errors.hpp"

namespace flowsynth {

namespace {

std::uint64_t fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    void string(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void matrix(const Eigen::Ref<const Eigen::MatrixXd>& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
        }
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : buf_(std::move(data)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string string() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Eigen::MatrixXd matrix() {
        const std::uint32_t rows = u32();
        const std::uint32_t cols = u32();
        if (static_cast<std::uint64_t>(rows) * cols > (buf_.size() - pos_) / 8 + 1) {
            throw BundleCorruptError("bundle: array shape exceeds payload size");
        }
        Eigen::MatrixXd m(rows, cols);
        for (std::uint32_t r = 0; r < rows; ++r) {
            for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
        }
        return m;
    }
    std::size_t remaining() const { return buf_.size() - pos_; }
    std::string_view consumed() const { return std::string_view(buf_).substr(0, pos_); }

private:
    unsigned char byte() { return static_cast<unsigned char>(buf_[pos_++]); }
    void need(std::size_t n) {
        if (buf_.size() - pos_ < n) throw BundleCorruptError("bundle: truncated payload");
    }
    std::string buf_;
    std::size_t pos_ = 0;
};

std::string meta_to_json(const BundleMeta& meta) {
    nlohmann::json j;
    j["protocol"] = meta.protocol;
    j["created_at"] = meta.created_at;
    auto& hist = j["flow_length_hist"] = nlohmann::json::array();
    for (const auto& [len, count] : meta.flow_length_hist) {
        hist.push_back({len, count});
    }
    return j.dump();
}

BundleMeta meta_from_json(const std::string& text) {
    BundleMeta meta;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
        meta.protocol = j.value("protocol", "");
        meta.created_at = j.value("created_at", "");
        if (j.contains("flow_length_hist")) {
            for (const auto& entry : j["flow_length_hist"]) {
                meta.flow_length_hist.emplace_back(entry.at(0).get<std::uint32_t>(),
                                                   entry.at(1).get<std::uint64_t>());
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw BundleCorruptError(std::string("bundle: bad metadata block: ") + e.what());
    }
    return meta;
}

} // namespace

void ModelBundle::validate() const {
    hmm.validate();
    mdn.validate();
    if (hmm.num_states != mdn.input_width) {
        throw BundleInvariantError("bundle: state count mismatch between chain and emission network");
    }
    if (!(norm.stddev.minCoeff() > 0.0) || !norm.mean.allFinite() || !norm.stddev.allFinite()) {
        throw BundleInvariantError("bundle: invalid normalization statistics");
    }
    if (!(mtu > 0.0) || !(iat_floor > 0.0)) {
        throw BundleInvariantError("bundle: mtu and iat_floor must be positive");
    }
    for (const auto& [len, count] : meta.flow_length_hist) {
        if (len == 0 || count == 0) {
            throw BundleInvariantError("bundle: degenerate flow-length histogram entry");
        }
    }
}

std::vector<MixtureParams> cache_emissions(const ModelBundle& bundle) {
    std::vector<MixtureParams> cache;
    cache.reserve(bundle.hmm.num_states);
    for (int k = 0; k < bundle.hmm.num_states; ++k) cache.push_back(mdn_forward(bundle.mdn, k));
    return cache;
}

std::pair<int, double> inverse_transform(const Eigen::Vector2d& z, const NormalizationStats& norm,
                                         double mtu, double iat_floor) {
    const Eigen::Vector2d x = denormalize(z, norm);
    double payload = std::nearbyint(std::expm1(x.x()));
    payload = std::min(std::max(payload, 0.0), mtu);
    const double iat = x.y() >= iat_floor ? x.y() : iat_floor;
    return {static_cast<int>(payload), iat};
}

FlowSampler::FlowSampler(const ModelBundle& bundle, std::span<const MixtureParams> cache,
                         std::uint64_t seed)
    : bundle_(&bundle), cache_(cache), transition_(bundle.hmm.transition), rng_(seed) {
    stddev_.reserve(cache.size());
    for (const auto& params : cache) stddev_.push_back(params.vars.cwiseSqrt());
}

SyntheticPacket FlowSampler::next() {
    const int K = bundle_->hmm.num_states;
    int state;
    if (prev_state_ < 0) {
        state = rng_.categorical({bundle_->hmm.initial.data(), static_cast<std::size_t>(K)});
    } else {
        state = rng_.categorical(
            {transition_.data() + static_cast<std::size_t>(prev_state_) * K,
             static_cast<std::size_t>(K)});
    }
    prev_state_ = state;

    const MixtureParams& params = cache_[state];
    const int comp = rng_.categorical(
        {params.weights.data(), static_cast<std::size_t>(params.weights.size())});
    const Eigen::Vector2d z =
        params.means.col(comp) + stddev_[state].col(comp).cwiseProduct(rng_.normal2());
    auto [payload, iat] = inverse_transform(z, bundle_->norm, bundle_->mtu, bundle_->iat_floor);
    return {payload, iat, state};
}

std::size_t FlowSampler::sample_length(std::size_t fallback) {
    const auto& hist = bundle_->meta.flow_length_hist;
    if (hist.empty()) return fallback;
    std::uint64_t total = 0;
    for (const auto& [len, count] : hist) total += count;
    const double u = rng_.uniform() * static_cast<double>(total);
    double cum = 0.0;
    for (const auto& [len, count] : hist) {
        cum += static_cast<double>(count);
        if (u < cum) return len;
    }
    return hist.back().first;
}

std::vector<SyntheticPacket> generate_flow(const ModelBundle& bundle,
                                           std::span<const MixtureParams> cache,
                                           std::size_t length, std::uint64_t seed) {
    if (length < 1) throw DomainError("generate_flow: length must be >= 1");
    FlowSampler sampler(bundle, cache, seed);
    std::vector<SyntheticPacket> flow;
    flow.reserve(length);
    for (std::size_t t = 0; t < length; ++t) flow.push_back(sampler.next());
    return flow;
}

std::vector<SyntheticPacket> generate_flow(const ModelBundle& bundle, std::size_t length,
                                           std::uint64_t seed) {
    const auto cache = cache_emissions(bundle);
    return generate_flow(bundle, cache, length, seed);
}

void save_bundle(const ModelBundle& bundle, std::ostream& out) {
    ByteWriter w;
    w.string(meta_to_json(bundle.meta));
    w.f64(bundle.mtu);
    w.f64(bundle.iat_floor);
    w.f64(bundle.hmm.min_covar);
    w.u32(static_cast<std::uint32_t>(bundle.hmm.num_states));
    w.u32(static_cast<std::uint32_t>(bundle.hmm.num_components));
    w.u32(static_cast<std::uint32_t>(bundle.mdn.hidden_width));
    w.u32(static_cast<std::uint32_t>(bundle.mdn.num_components));

    const int K = bundle.hmm.num_states, J = bundle.hmm.num_components;
    w.matrix(bundle.hmm.initial);
    w.matrix(bundle.hmm.transition);
    Eigen::MatrixXd weights(K, J), means(K * J, 2), vars(K * J, 2);
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < J; ++j) {
            const auto& c = bundle.hmm.emissions[k][j];
            weights(k, j) = c.weight;
            means.row(k * J + j) = c.mean.transpose();
            vars.row(k * J + j) = c.var.transpose();
        }
    }
    w.matrix(weights);
    w.matrix(means);
    w.matrix(vars);
    w.matrix(bundle.norm.mean);
    w.matrix(bundle.norm.stddev);
    w.matrix(bundle.mdn.w1);
    w.matrix(bundle.mdn.b1);
    w.matrix(bundle.mdn.w2);
    w.matrix(bundle.mdn.b2);
    w.matrix(bundle.mdn.w3);
    w.matrix(bundle.mdn.b3);

    out.write(kBundleMagic, sizeof(kBundleMagic));
    ByteWriter head;
    head.u32(kBundleVersion);
    out.write(head.data().data(), static_cast<std::streamsize>(head.data().size()));
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    ByteWriter tail;
    tail.u64(fnv1a(w.data()));
    out.write(tail.data().data(), static_cast<std::streamsize>(tail.data().size()));
    if (!out) throw IoError("bundle: write failed");
}

void save_bundle_file(const ModelBundle& bundle, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    save_bundle(bundle, out);
}

ModelBundle load_bundle(std::istream& in) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kBundleMagic, sizeof(magic)) != 0) {
        throw BundleCorruptError("bundle: bad magic, not a bundle file");
    }
    char vbuf[4];
    in.read(vbuf, sizeof(vbuf));
    if (in.gcount() != sizeof(vbuf)) throw BundleCorruptError("bundle: truncated header");
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(
        static_cast<unsigned char>(vbuf[i])) << (8 * i);
    if (version != kBundleVersion) {
        throw BundleVersionError("bundle: unsupported format version " + std::to_string(version));
    }

    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (payload.size() < 8) throw BundleCorruptError("bundle: truncated payload");
    const std::string body = payload.substr(0, payload.size() - 8);
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(
        payload[payload.size() - 8 + i])) << (8 * i);
    if (fnv1a(body) != stored) throw BundleCorruptError("bundle: checksum mismatch");

    ByteReader r(body);
    auto as_vector = [&r](const char* what) -> Eigen::VectorXd {
        const Eigen::MatrixXd m = r.matrix();
        if (m.cols() != 1) {
            throw BundleCorruptError(std::string("bundle: ") + what + " is not a column vector");
        }
        return m.col(0);
    };
    ModelBundle bundle;
    bundle.meta = meta_from_json(r.string());
    bundle.mtu = r.f64();
    bundle.iat_floor = r.f64();
    bundle.hmm.min_covar = r.f64();
    const auto K = static_cast<int>(r.u32());
    const auto J = static_cast<int>(r.u32());
    const auto Q = static_cast<int>(r.u32());
    const auto M = static_cast<int>(r.u32());
    if (K < 1 || J < 1 || Q < 1 || M < 1) {
        throw BundleCorruptError("bundle: non-positive dimension field");
    }

    bundle.hmm.num_states = K;
    bundle.hmm.num_components = J;
    bundle.hmm.initial = as_vector("initial distribution");
    bundle.hmm.transition = r.matrix();
    const Eigen::MatrixXd weights = r.matrix();
    const Eigen::MatrixXd means = r.matrix();
    const Eigen::MatrixXd vars = r.matrix();
    if (weights.rows() != K || weights.cols() != J || means.rows() != K * J || means.cols() != 2 ||
        vars.rows() != K * J || vars.cols() != 2) {
        throw BundleCorruptError("bundle: emission array shape mismatch");
    }
    bundle.hmm.emissions.resize(K);
    for (int k = 0; k < K; ++k) {
        bundle.hmm.emissions[k].resize(J);
        for (int j = 0; j < J; ++j) {
            auto& c = bundle.hmm.emissions[k][j];
            c.weight = weights(k, j);
            c.mean = means.row(k * J + j).transpose();
            c.var = vars.row(k * J + j).transpose();
        }
    }
    const Eigen::MatrixXd nm = r.matrix();
    const Eigen::MatrixXd ns = r.matrix();
    if (nm.rows() != 2 || nm.cols() != 1 || ns.rows() != 2 || ns.cols() != 1) {
        throw BundleCorruptError("bundle: normalization array shape mismatch");
    }
    bundle.norm.mean = nm.col(0);
    bundle.norm.stddev = ns.col(0);

    bundle.mdn.input_width = K;
    bundle.mdn.hidden_width = Q;
    bundle.mdn.num_components = M;
    bundle.mdn.w1 = r.matrix();
    bundle.mdn.b1 = as_vector("first-layer bias");
    bundle.mdn.w2 = r.matrix();
    bundle.mdn.b2 = as_vector("second-layer bias");
    bundle.mdn.w3 = r.matrix();
    bundle.mdn.b3 = as_vector("head bias");
    if (r.remaining() != 0) throw BundleCorruptError("bundle: trailing bytes after parameters");

    bundle.validate();
    return bundle;
}

ModelBundle load_bundle_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bundle file '" + path + "'");
    return load_bundle(in);
}

} // namespace flowsynth
