#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "flowsynth/errors.hpp"
#include "run_config.hpp"

namespace {

using namespace flowsynth;
using namespace flowsynth::cli;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitParse = 4;
constexpr int kExitDomain = 5;
constexpr int kExitNumeric = 6;
constexpr int kExitBundle = 7;

// Config file first, explicit flags on top.
struct ConfigFlags {
    std::string config_path;

    void attach(CLI::App* cmd, RunConfig& cfg) {
        cmd->add_option("--config", config_path, "key = value configuration file");
        add(cmd, "--protocol", cfg.protocol, "protocol label stored in the bundle");
        add(cmd, "--trace", cfg.trace, "input trace CSV (flow_id,payload_len,iat)");
        add(cmd, "--K", cfg.K, "number of chain states");
        add(cmd, "--J", cfg.J, "mixture components per chain state");
        add(cmd, "--min-covar", cfg.min_covar, "variance floor", "min_covar");
        add(cmd, "--max-iter", cfg.max_iter, "EM iteration cap", "max_iter");
        add(cmd, "--tol", cfg.tol, "EM convergence tolerance");
        add(cmd, "--H", cfg.H, "hidden width of the emission network");
        add(cmd, "--M", cfg.M, "mixture components of the emission network");
        add(cmd, "--num-epochs", cfg.num_epochs, "training epochs", "num_epochs");
        add(cmd, "--batch-size", cfg.batch_size, "mini-batch size", "batch_size");
        add(cmd, "--learning-rate", cfg.learning_rate, "Adam learning rate", "learning_rate");
        add(cmd, "--clip-norm", cfg.clip_norm, "gradient clipping norm", "clip_norm");
        add(cmd, "--train-frac", cfg.train_frac, "fraction of flows used for training",
            "train_frac");
        add(cmd, "--iat-percentile", cfg.iat_percentile, "outlier cap quantile",
            "iat_percentile");
        add(cmd, "--seed", cfg.seed, "run seed");
        add(cmd, "--grid-points", cfg.grid_points, "CDF grid resolution", "grid_points");
        add(cmd, "--segment-len", cfg.segment_len, "spectral segment length", "segment_len");
        add(cmd, "--max-lag", cfg.max_lag, "autocorrelation lag cap", "max_lag");
        add(cmd, "--eps", cfg.eps, "KL density floor");
        add(cmd, "--mtu", cfg.mtu, "payload clamp in bytes");
        add(cmd, "--iat-floor", cfg.iat_floor, "smallest emitted inter-arrival time",
            "iat_floor");
    }

    // Returns the config with file values applied below explicit flags.
    RunConfig resolve(const CLI::App* cmd, RunConfig flag_values) {
        if (config_path.empty()) return flag_values;
        RunConfig cfg = load_run_config(config_path);
        for (const auto& [flag, key] : overrides_) {
            if (cmd->count(flag) > 0) apply_config_key(cfg, key, cmd->get_option(flag)->as<std::string>());
        }
        if (cmd->count("--protocol")) cfg.protocol = flag_values.protocol;
        if (cmd->count("--trace")) cfg.trace = flag_values.trace;
        return cfg;
    }

private:
    template <typename T>
    void add(CLI::App* cmd, const std::string& flag, T& target, const std::string& help,
             std::string key = "") {
        cmd->add_option(flag, target, help);
        if constexpr (!std::is_same_v<T, std::string>) {
            if (key.empty()) key = flag.substr(2);
            overrides_.emplace_back(flag, std::move(key));
        }
    }

    std::vector<std::pair<std::string, std::string>> overrides_;
};

int dispatch(int argc, char** argv) {
    CLI::App app{"hybrid state-chain traffic model: train, generate, evaluate, sweep"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string out_dir = ".";

    auto* ingest = app.add_subcommand("ingest", "clean a trace and write the train/test split");
    ConfigFlags ingest_flags;
    ingest_flags.attach(ingest, cfg);
    ingest->add_option("--out-dir", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "fit a model bundle on a trace");
    ConfigFlags train_flags;
    std::string stamp;
    train_flags.attach(train, cfg);
    train->add_option("--out-dir", out_dir, "output directory");
    train->add_option("--stamp", stamp, "provenance string stored in the bundle");

    auto* generate = app.add_subcommand("generate", "sample synthetic flows from a bundle");
    GenerateOptions gen_opt;
    generate->add_option("--bundle", gen_opt.bundle_path, "model bundle file")->required();
    generate->add_option("--out", gen_opt.out_path, "output trace CSV");
    generate->add_option("--flows", gen_opt.num_flows, "number of flows to generate");
    generate->add_option("--length", gen_opt.fixed_length,
                         "fixed packets per flow (default: resample the training lengths)");
    generate->add_option("--seed", gen_opt.seed, "generation seed");

    auto* eval = app.add_subcommand("eval", "compare a synthetic trace against a real one");
    ConfigFlags eval_flags;
    EvalOptions eval_opt;
    eval_flags.attach(eval, cfg);
    eval->add_option("--real", eval_opt.real_path, "real trace CSV")->required();
    eval->add_option("--synth", eval_opt.synth_path, "synthetic trace CSV")->required();
    eval->add_option("--out-dir", out_dir, "output directory");

    auto* sweep = app.add_subcommand("sweep", "ranked hyper-parameter search");
    ConfigFlags sweep_flags;
    SweepOptions sweep_opt;
    std::string sweep_path, mode;
    sweep_flags.attach(sweep, cfg);
    sweep->add_option("--sweep", sweep_path, "candidate list file");
    sweep->add_option("--mode", mode, "grid or random");
    sweep->add_option("--samples", sweep_opt.spec.samples, "random-mode subset size");
    sweep->add_option("--jobs", sweep_opt.jobs, "parallel candidate workers");
    sweep->add_option("--out-dir", out_dir, "output directory");

    auto* report = app.add_subcommand("report", "summarize a bundle or a sweep table");
    ReportOptions report_opt;
    report->add_option("--bundle", report_opt.bundle_path, "model bundle file");
    report->add_option("--table", report_opt.table_path, "sweep table CSV");
    report->add_option("--top", report_opt.top, "ranked rows to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitConfig;
    }

    if (ingest->parsed()) {
        return cmd_ingest({ingest_flags.resolve(ingest, cfg), out_dir});
    }
    if (train->parsed()) {
        return cmd_train({train_flags.resolve(train, cfg), out_dir, stamp});
    }
    if (generate->parsed()) {
        return cmd_generate(gen_opt);
    }
    if (eval->parsed()) {
        const RunConfig resolved = eval_flags.resolve(eval, cfg);
        resolved.validate();
        eval_opt.out_dir = out_dir;
        eval_opt.metrics = resolved.metrics();
        return cmd_eval(eval_opt);
    }
    if (sweep->parsed()) {
        sweep_opt.base = sweep_flags.resolve(sweep, cfg);
        if (!sweep_path.empty()) {
            const int samples = sweep_opt.spec.samples;
            sweep_opt.spec = load_sweep_spec(sweep_path);
            if (sweep->count("--samples")) sweep_opt.spec.samples = samples;
        }
        if (!mode.empty()) {
            if (mode == "grid") sweep_opt.spec.mode = SweepSpec::Mode::grid;
            else if (mode == "random") sweep_opt.spec.mode = SweepSpec::Mode::random;
            else throw ConfigError("sweep: mode must be 'grid' or 'random'");
        }
        sweep_opt.out_dir = out_dir;
        return cmd_sweep(sweep_opt);
    }
    if (report->parsed()) {
        return cmd_report(report_opt);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitParse;
    } catch (const BundleError& e) {
        std::cerr << "bundle error: " << e.what() << '\n';
        return kExitBundle;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DomainError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitDomain;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
