#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <unordered_map>

#include "flowsynth/errors.hpp"
#include "flowsynth/text_util.hpp"

namespace flowsynth::cli {

namespace {

long long to_int(const std::string& key, const std::string& value) {
    const auto v = parse_int(value);
    if (!v) throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
    return *v;
}

double to_real(const std::string& key, const std::string& value) {
    const auto v = parse_double(value);
    if (!v) throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
    return *v;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          T (*one)(const std::string&, const std::string&)) {
    std::vector<T> out;
    for (const auto& field : split(value, ',')) {
        out.push_back(static_cast<T>(one(key, std::string(trim(field)))));
    }
    return out;
}

// Shared key = value reader.
void read_kv_file(const std::string& path,
                  const std::function<void(const std::string&, const std::string&)>& sink) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const auto pos = sv.find('=');
        if (pos == std::string_view::npos) {
            throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(lineno));
        }
        sink(std::string(trim(sv.substr(0, pos))), std::string(trim(sv.substr(pos + 1))));
    }
}

} // namespace

void RunConfig::validate() const {
    require(K >= 1, "K must be >= 1");
    require(J >= 1, "J must be >= 1");
    require(min_covar > 0.0, "min_covar must be positive");
    require(max_iter >= 1, "max_iter must be >= 1");
    require(tol >= 0.0, "tol must be non-negative");
    require(H >= 1, "H must be >= 1");
    require(M >= 1, "M must be >= 1");
    require(num_epochs >= 1, "num_epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(clip_norm > 0.0, "clip_norm must be positive");
    require(train_frac > 0.0 && train_frac < 1.0, "train_frac must lie in (0,1)");
    require(iat_percentile > 0.0 && iat_percentile < 1.0, "iat_percentile must lie in (0,1)");
    require(grid_points >= 1, "grid_points must be >= 1");
    require(segment_len >= 2, "segment_len must be >= 2");
    require(max_lag >= 1, "max_lag must be >= 1");
    require(eps > 0.0, "eps must be positive");
    require(mtu > 0.0, "mtu must be positive");
    require(iat_floor > 0.0, "iat_floor must be positive");
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "protocol") cfg.protocol = value;
    else if (key == "trace") cfg.trace = value;
    else if (key == "K") cfg.K = static_cast<int>(to_int(key, value));
    else if (key == "J") cfg.J = static_cast<int>(to_int(key, value));
    else if (key == "min_covar") cfg.min_covar = to_real(key, value);
    else if (key == "max_iter") cfg.max_iter = static_cast<int>(to_int(key, value));
    else if (key == "tol") cfg.tol = to_real(key, value);
    else if (key == "H") cfg.H = static_cast<int>(to_int(key, value));
    else if (key == "M") cfg.M = static_cast<int>(to_int(key, value));
    else if (key == "num_epochs") cfg.num_epochs = static_cast<int>(to_int(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "learning_rate") cfg.learning_rate = to_real(key, value);
    else if (key == "clip_norm") cfg.clip_norm = to_real(key, value);
    else if (key == "train_frac") cfg.train_frac = to_real(key, value);
    else if (key == "iat_percentile") cfg.iat_percentile = to_real(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "grid_points") cfg.grid_points = static_cast<int>(to_int(key, value));
    else if (key == "segment_len") cfg.segment_len = static_cast<int>(to_int(key, value));
    else if (key == "max_lag") cfg.max_lag = static_cast<int>(to_int(key, value));
    else if (key == "eps") cfg.eps = to_real(key, value);
    else if (key == "mtu") cfg.mtu = to_real(key, value);
    else if (key == "iat_floor") cfg.iat_floor = to_real(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
    read_kv_file(path, [&base](const std::string& key, const std::string& value) {
        apply_config_key(base, key, value);
    });
    return base;
}

void SweepSpec::fill_defaults(const RunConfig& base) {
    if (K.empty()) K = {base.K};
    if (J.empty()) J = {base.J};
    if (min_covar.empty()) min_covar = {base.min_covar};
    if (max_iter.empty()) max_iter = {base.max_iter};
    if (M.empty()) M = {base.M};
    if (num_epochs.empty()) num_epochs = {base.num_epochs};
}

void SweepSpec::validate() const {
    require(!K.empty() && !J.empty() && !min_covar.empty() && !max_iter.empty() && !M.empty() &&
                !num_epochs.empty(),
            "sweep: empty candidate list");
    require(samples >= 1, "sweep: samples must be >= 1");
}

SweepSpec load_sweep_spec(const std::string& path) {
    SweepSpec spec;
    read_kv_file(path, [&spec](const std::string& key, const std::string& value) {
        auto ints = [&](const char* k) { return parse_list<int>(k, value, +[](const std::string& a, const std::string& b) {
            return static_cast<int>(to_int(a, b)); }); };
        if (key == "K") spec.K = ints("K");
        else if (key == "J") spec.J = ints("J");
        else if (key == "min_covar") spec.min_covar = parse_list<double>(key, value, +to_real);
        else if (key == "max_iter") spec.max_iter = ints("max_iter");
        else if (key == "M") spec.M = ints("M");
        else if (key == "num_epochs") spec.num_epochs = ints("num_epochs");
        else if (key == "mode") {
            if (value == "grid") spec.mode = SweepSpec::Mode::grid;
            else if (value == "random") spec.mode = SweepSpec::Mode::random;
            else throw ConfigError("sweep: mode must be 'grid' or 'random'");
        } else if (key == "samples") {
            spec.samples = static_cast<int>(to_int(key, value));
        } else {
            throw ConfigError("sweep: unknown key '" + key + "'");
        }
    });
    return spec;
}

} // namespace flowsynth::cli
