#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsynth/metrics.hpp"

namespace flowsynth::cli {

// Pipeline configuration. Keys in config files use the same names as
// the struct fields; the chain/network hyper-parameters follow the
// conventional short names (K, J, H, M).
struct RunConfig {
    std::string protocol = "generic";
    std::string trace;

    // state chain
    int K = 3;
    int J = 3;
    double min_covar = 1e-3;
    int max_iter = 200;
    double tol = 1e-4;

    // emission network
    int H = 128;
    int M = 12;
    int num_epochs = 90;
    int batch_size = 1024;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;

    // data handling
    double train_frac = 0.9;
    double iat_percentile = 0.98;
    std::uint64_t seed = 42;

    // evaluation
    int grid_points = 512;
    int segment_len = 128;
    int max_lag = 50;
    double eps = 1e-12;

    // generation
    double mtu = 1500.0;
    double iat_floor = 1e-6;

    void validate() const; // throws ConfigError
    MetricsConfig metrics() const {
        return {grid_points, segment_len, max_lag, eps};
    }
};

// Applies one `key = value` assignment; throws ConfigError on unknown
// keys or unparsable values.
void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat key = value file, '#' comments, blank lines ignored.
RunConfig load_run_config(const std::string& path, RunConfig base = {});

// Candidate lists for the hyper-parameter sweep.
struct SweepSpec {
    std::vector<int> K;
    std::vector<int> J;
    std::vector<double> min_covar;
    std::vector<int> max_iter;
    std::vector<int> M;
    std::vector<int> num_epochs;

    enum class Mode { grid, random };
    Mode mode = Mode::grid;
    int samples = 16; // random-mode subset size

    // Fills empty candidate lists with the base config's value.
    void fill_defaults(const RunConfig& base);
    void validate() const;
};

// Same file format as RunConfig, values comma-separated, plus `mode`
// and `samples` keys.
SweepSpec load_sweep_spec(const std::string& path);

} // namespace flowsynth::cli
