#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowsynth/generator.hpp"
#include "flowsynth/hmm_gmm.hpp"
#include "flowsynth/trace.hpp"
#include "run_config.hpp"

namespace flowsynth::cli {

// Parse -> outlier cap -> clean -> group; flows emptied by cleaning
// disappear with the grouping. Header is sniffed from the first line.
std::vector<Flow> load_clean_flows(const std::string& path, double iat_percentile);

struct TrainArtifacts {
    ModelBundle bundle;
    FitReport hmm_report;
    std::vector<double> mdn_losses;
};

// Normalizer + chain fit + posterior-weighted network training over the
// given training flows.
TrainArtifacts train_bundle(const std::vector<Flow>& train_flows, const RunConfig& cfg);

struct IngestOptions {
    RunConfig cfg;
    std::string out_dir = ".";
};
int cmd_ingest(const IngestOptions& opt);

struct TrainOptions {
    RunConfig cfg;
    std::string out_dir = ".";
    std::string stamp; // optional created_at value embedded in the bundle
};
int cmd_train(const TrainOptions& opt);

struct GenerateOptions {
    std::string bundle_path;
    std::string out_path = "synthetic.csv";
    std::size_t num_flows = 1;
    long fixed_length = 0; // 0: resample lengths from the bundle histogram
    std::uint64_t seed = 42;
};
int cmd_generate(const GenerateOptions& opt);

struct EvalOptions {
    std::string real_path;
    std::string synth_path;
    std::string out_dir = ".";
    MetricsConfig metrics;
};
int cmd_eval(const EvalOptions& opt);

struct SweepOptions {
    RunConfig base;
    SweepSpec spec;
    std::string out_dir = ".";
    int jobs = 1;
};
int cmd_sweep(const SweepOptions& opt);

struct ReportOptions {
    std::string bundle_path;
    std::string table_path;
    int top = 10;
};
int cmd_report(const ReportOptions& opt);

} // namespace flowsynth::cli
