#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "flowsynth/errors.hpp"
#include "flowsynth/mdn.hpp"
#include "flowsynth/metrics.hpp"
#include "flowsynth/rng.hpp"
#include "flowsynth/text_util.hpp"

namespace flowsynth::cli {

namespace {

namespace fs = std::filesystem;

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::vector<Flow> load_flows_raw(const std::string& path) {
    const CsvFormat fmt{sniff_header(path)};
    const auto flows = group_flows(parse_trace_file(path, fmt));
    if (flows.empty()) throw DomainError("trace '" + path + "' contains no packets");
    return flows;
}

std::vector<std::pair<std::uint32_t, std::uint64_t>> length_histogram(
    const std::vector<Flow>& flows) {
    std::map<std::uint32_t, std::uint64_t> hist;
    for (const auto& f : flows) ++hist[static_cast<std::uint32_t>(f.packets.size())];
    return {hist.begin(), hist.end()};
}

void write_flow_csv_header(std::ostream& out) { out << "flow_id,payload_len,iat\n"; }

void write_packet_row(std::ostream& out, std::uint64_t flow_id, const SyntheticPacket& p) {
    out << flow_id << ',' << p.payload_len << ',' << format_double(p.iat) << '\n';
}

// Synthetic counterpart of a flow set: same flow count, same lengths.
std::vector<Flow> generate_matched(const ModelBundle& bundle, const std::vector<Flow>& reference,
                                   std::uint64_t seed) {
    const auto cache = cache_emissions(bundle);
    FlowSampler sampler(bundle, cache, seed);
    std::vector<Flow> out;
    out.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
        sampler.restart();
        Flow f;
        f.flow_id = i + 1;
        for (std::size_t t = 0; t < reference[i].packets.size(); ++t) {
            const auto p = sampler.next();
            f.packets.push_back({f.flow_id, static_cast<double>(p.payload_len), p.iat});
        }
        out.push_back(std::move(f));
    }
    return out;
}

void write_eval_outputs(const std::string& out_dir, const std::vector<Flow>& real,
                        const std::vector<Flow>& synth, const MetricsConfig& metrics,
                        const MetricReport& report) {
    auto txt = open_out(fs::path(out_dir) / "metrics.txt");
    write_metric_report(txt, report);
    auto csv = open_out(fs::path(out_dir) / "metrics.csv");
    csv << metric_csv_header() << '\n' << metric_csv_row(report) << '\n';
    for (Feature feature : {Feature::payload, Feature::iat}) {
        const auto grid = make_grid(real, synth, feature, metrics.grid_points);
        const auto cdf_r = avg_flow_cdf(real, feature, grid);
        const auto cdf_s = avg_flow_cdf(synth, feature, grid);
        const char* name = feature == Feature::payload ? "cdf_payload.csv" : "cdf_iat.csv";
        auto out = open_out(fs::path(out_dir) / name);
        write_cdf_csv(out, cdf_r, cdf_s);
    }
}

template <typename F>
void parallel_for(int count, int jobs, F&& body) {
    if (jobs <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, count);
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace

std::vector<Flow> load_clean_flows(const std::string& path, double iat_percentile) {
    const CsvFormat fmt{sniff_header(path)};
    const auto records = parse_trace_file(path, fmt);
    if (records.empty()) throw DomainError("trace '" + path + "' contains no packets");
    const double cap = percentile_cap(records, iat_percentile);
    const auto flows = group_flows(clean(records, cap));
    if (flows.empty()) throw DomainError("trace '" + path + "': no packets survive cleaning");
    return flows;
}

TrainArtifacts train_bundle(const std::vector<Flow>& train_flows, const RunConfig& cfg) {
    TrainArtifacts art;
    const auto norm = fit_normalizer(train_flows);
    const auto seqs = normalized_sequences(train_flows, norm);

    FitOptions fit_opts;
    fit_opts.max_iter = cfg.max_iter;
    fit_opts.tol = cfg.tol;
    fit_opts.seed = cfg.seed;
    auto [hmm, hmm_report] = fit_hmm_gmm(seqs, cfg.K, cfg.J, cfg.min_covar, fit_opts);

    const auto samples = build_weighted_set(seqs, hmm);
    TrainConfig train_cfg;
    train_cfg.epochs = cfg.num_epochs;
    train_cfg.batch_size = cfg.batch_size;
    train_cfg.learning_rate = cfg.learning_rate;
    train_cfg.clip_norm = cfg.clip_norm;
    train_cfg.seed = cfg.seed;
    auto [mdn, losses] = train_mdn(samples, cfg.K, cfg.H, cfg.M, train_cfg);

    art.bundle.hmm = std::move(hmm);
    art.bundle.mdn = std::move(mdn);
    art.bundle.norm = norm;
    art.bundle.mtu = cfg.mtu;
    art.bundle.iat_floor = cfg.iat_floor;
    art.bundle.meta.protocol = cfg.protocol;
    art.bundle.meta.flow_length_hist = length_histogram(train_flows);
    art.hmm_report = std::move(hmm_report);
    art.mdn_losses = std::move(losses);
    return art;
}

int cmd_ingest(const IngestOptions& opt) {
    opt.cfg.validate();
    ensure_dir(opt.out_dir);
    const auto flows = load_clean_flows(opt.cfg.trace, opt.cfg.iat_percentile);
    const auto split = split_flows(flows, opt.cfg.train_frac, opt.cfg.seed);

    std::size_t train_packets = 0, test_packets = 0;
    for (const auto& f : split.train) train_packets += f.packets.size();
    for (const auto& f : split.test) test_packets += f.packets.size();

    auto train_out = open_out(fs::path(opt.out_dir) / "train.csv");
    write_trace_csv(train_out, split.train);
    auto test_out = open_out(fs::path(opt.out_dir) / "test.csv");
    write_trace_csv(test_out, split.test);

    std::cerr << "ingest: " << flows.size() << " flows after cleaning; train " << split.train.size()
              << " flows / " << train_packets << " packets, test " << split.test.size()
              << " flows / " << test_packets << " packets\n";
    return 0;
}

int cmd_train(const TrainOptions& opt) {
    opt.cfg.validate();
    ensure_dir(opt.out_dir);
    Stopwatch watch;
    const auto flows = load_clean_flows(opt.cfg.trace, opt.cfg.iat_percentile);
    const auto split = split_flows(flows, opt.cfg.train_frac, opt.cfg.seed);
    std::cerr << "train: " << split.train.size() << " training flows, " << split.test.size()
              << " held out\n";

    auto art = train_bundle(split.train, opt.cfg);
    art.bundle.meta.created_at = opt.stamp;
    const double train_seconds = watch.seconds();

    const auto bundle_path = fs::path(opt.out_dir) / "model.fsb";
    save_bundle_file(art.bundle, bundle_path.string());

    auto report = open_out(fs::path(opt.out_dir) / "fit_report.csv");
    report << "metric,index,value\n";
    for (std::size_t i = 0; i < art.hmm_report.log_likelihood.size(); ++i) {
        report << "em_loglik," << i << ',' << format_double(art.hmm_report.log_likelihood[i])
               << '\n';
    }
    for (std::size_t i = 0; i < art.mdn_losses.size(); ++i) {
        report << "mdn_epoch_loss," << i << ',' << format_double(art.mdn_losses[i]) << '\n';
    }
    report << "em_converged,0," << (art.hmm_report.converged ? 1 : 0) << '\n';
    report << "train_flows,0," << split.train.size() << '\n';
    report << "wall_clock_train_s,0," << format_double(train_seconds) << '\n';

    std::cerr << "train: wrote " << bundle_path.string() << " in " << format_double(train_seconds)
              << " s (em iterations: " << art.hmm_report.iterations
              << ", final loss: " << format_double(art.mdn_losses.back()) << ")\n";
    return 0;
}

int cmd_generate(const GenerateOptions& opt) {
    const auto bundle = load_bundle_file(opt.bundle_path);
    if (opt.num_flows < 1) throw ConfigError("generate: need at least one flow");
    if (opt.fixed_length < 0) throw ConfigError("generate: length must be positive");
    if (opt.fixed_length == 0 && bundle.meta.flow_length_hist.empty()) {
        throw ConfigError(
            "generate: bundle stores no flow-length histogram; pass an explicit length");
    }

    const auto cache = cache_emissions(bundle);
    FlowSampler sampler(bundle, cache, opt.seed);
    auto out = open_out(opt.out_path);
    write_flow_csv_header(out);
    std::size_t total = 0;
    for (std::size_t i = 0; i < opt.num_flows; ++i) {
        const std::size_t length = opt.fixed_length > 0
                                       ? static_cast<std::size_t>(opt.fixed_length)
                                       : sampler.sample_length(1);
        sampler.restart();
        for (std::size_t t = 0; t < length; ++t) {
            write_packet_row(out, i + 1, sampler.next());
        }
        total += length;
    }
    std::cerr << "generate: wrote " << total << " packets in " << opt.num_flows << " flows to "
              << opt.out_path << '\n';
    return 0;
}

int cmd_eval(const EvalOptions& opt) {
    ensure_dir(opt.out_dir);
    const auto real = load_flows_raw(opt.real_path);
    const auto synth = load_flows_raw(opt.synth_path);
    const auto report = evaluate(real, synth, opt.metrics);
    write_eval_outputs(opt.out_dir, real, synth, opt.metrics, report);
    write_metric_report(std::cout, report);
    return 0;
}

namespace {

struct Candidate {
    RunConfig cfg;
    int stage = 1;
};

struct SweepRow {
    Candidate candidate;
    MetricReport report;
    bool ok = false;
    std::string error;
};

std::string sweep_row_csv(const SweepRow& row) {
    const auto& c = row.candidate.cfg;
    std::string out = std::to_string(row.candidate.stage) + ',' + std::to_string(c.K) + ',' +
                      std::to_string(c.J) + ',' + format_double(c.min_covar) + ',' +
                      std::to_string(c.max_iter) + ',' + std::to_string(c.H) + ',' +
                      std::to_string(c.M) + ',' + std::to_string(c.num_epochs) + ',' +
                      std::to_string(c.seed) + ',';
    return out + metric_csv_row(row.report);
}

// Grid enumeration in a fixed order; random mode draws a seeded subset.
std::vector<Candidate> stage_one_candidates(const RunConfig& base, const SweepSpec& spec) {
    std::vector<Candidate> all;
    for (int k : spec.K) {
        for (int j : spec.J) {
            for (double mc : spec.min_covar) {
                for (int mi : spec.max_iter) {
                    Candidate c;
                    c.cfg = base;
                    c.cfg.K = k;
                    c.cfg.J = j;
                    c.cfg.min_covar = mc;
                    c.cfg.max_iter = mi;
                    c.stage = 1;
                    all.push_back(std::move(c));
                }
            }
        }
    }
    return all;
}

std::vector<Candidate> stage_two_candidates(const RunConfig& best, const SweepSpec& spec) {
    std::vector<Candidate> all;
    for (int m : spec.M) {
        for (int e : spec.num_epochs) {
            if (m == best.M && e == best.num_epochs) continue; // already measured in stage 1
            Candidate c;
            c.cfg = best;
            c.cfg.M = m;
            c.cfg.num_epochs = e;
            c.stage = 2;
            all.push_back(std::move(c));
        }
    }
    return all;
}

std::vector<Candidate> subsample(std::vector<Candidate> all, const SweepSpec& spec,
                                 std::uint64_t seed) {
    if (spec.mode == SweepSpec::Mode::grid ||
        all.size() <= static_cast<std::size_t>(spec.samples)) {
        return all;
    }
    Rng rng(mix_seed(seed, 0x73776570));
    rng.shuffle(all);
    all.resize(spec.samples);
    return all;
}

} // namespace

int cmd_sweep(const SweepOptions& opt) {
    opt.base.validate();
    SweepSpec spec = opt.spec;
    spec.fill_defaults(opt.base);
    spec.validate();
    ensure_dir(opt.out_dir);

    const auto flows = load_clean_flows(opt.base.trace, opt.base.iat_percentile);
    const auto split = split_flows(flows, opt.base.train_frac, opt.base.seed);
    std::cerr << "sweep: " << split.train.size() << " training flows, " << split.test.size()
              << " evaluation flows\n";

    auto run_candidate = [&](SweepRow& row) {
        try {
            row.candidate.cfg.validate();
            const auto art = train_bundle(split.train, row.candidate.cfg);
            const auto synth = generate_matched(art.bundle, split.test, row.candidate.cfg.seed);
            row.report = evaluate(split.test, synth, row.candidate.cfg.metrics());
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
    };

    std::vector<SweepRow> rows;
    {
        auto candidates = subsample(stage_one_candidates(opt.base, spec), spec, opt.base.seed);
        std::vector<SweepRow> stage(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) stage[i].candidate = candidates[i];
        Stopwatch watch;
        parallel_for(static_cast<int>(candidates.size()), opt.jobs,
                     [&](int i) { run_candidate(stage[i]); });
        std::cerr << "sweep: stage 1 evaluated " << candidates.size() << " chain candidates in "
                  << format_double(watch.seconds()) << " s\n";
        for (auto& row : stage) {
            if (!row.ok) {
                std::cerr << "sweep: candidate failed (K=" << row.candidate.cfg.K
                          << " J=" << row.candidate.cfg.J << "): " << row.error << '\n';
            }
            rows.push_back(std::move(row));
        }
    }

    const auto best_it =
        std::min_element(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
            if (a.ok != b.ok) return a.ok;
            return a.report.aggregate < b.report.aggregate;
        });
    if (best_it == rows.end() || !best_it->ok) {
        throw DomainError("sweep: every stage-1 candidate failed");
    }

    {
        auto candidates = subsample(stage_two_candidates(best_it->candidate.cfg, spec), spec,
                                    opt.base.seed + 1);
        std::vector<SweepRow> stage(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) stage[i].candidate = candidates[i];
        Stopwatch watch;
        parallel_for(static_cast<int>(candidates.size()), opt.jobs,
                     [&](int i) { run_candidate(stage[i]); });
        if (!candidates.empty()) {
            std::cerr << "sweep: stage 2 evaluated " << candidates.size()
                      << " emission candidates in " << format_double(watch.seconds()) << " s\n";
        }
        for (auto& row : stage) {
            if (!row.ok) {
                std::cerr << "sweep: candidate failed (M=" << row.candidate.cfg.M
                          << " num_epochs=" << row.candidate.cfg.num_epochs << "): " << row.error
                          << '\n';
            }
            rows.push_back(std::move(row));
        }
    }

    std::erase_if(rows, [](const SweepRow& r) { return !r.ok; });
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return a.report.aggregate < b.report.aggregate;
    });

    const auto table_path = fs::path(opt.out_dir) / "sweep.csv";
    auto out = open_out(table_path);
    out << "stage,K,J,min_covar,max_iter,H,M,num_epochs,seed," << metric_csv_header() << '\n';
    for (const auto& row : rows) out << sweep_row_csv(row) << '\n';
    std::cerr << "sweep: wrote " << rows.size() << " ranked candidates to " << table_path.string()
              << '\n';
    if (!rows.empty()) {
        const auto& b = rows.front().candidate.cfg;
        std::cerr << "sweep: best aggregate " << format_double(rows.front().report.aggregate)
                  << " at K=" << b.K << " J=" << b.J << " min_covar=" << format_double(b.min_covar)
                  << " max_iter=" << b.max_iter << " M=" << b.M << " num_epochs=" << b.num_epochs
                  << '\n';
    }
    return 0;
}

int cmd_report(const ReportOptions& opt) {
    if (opt.bundle_path.empty() && opt.table_path.empty()) {
        throw ConfigError("report: pass a bundle and/or a sweep table");
    }
    if (!opt.bundle_path.empty()) {
        const auto bundle = load_bundle_file(opt.bundle_path);
        const auto& hmm = bundle.hmm;
        const auto& mdn = bundle.mdn;
        std::cout << "bundle: " << opt.bundle_path << '\n'
                  << "protocol: " << bundle.meta.protocol << '\n';
        if (!bundle.meta.created_at.empty()) {
            std::cout << "created_at: " << bundle.meta.created_at << '\n';
        }
        std::cout << "states (K): " << hmm.num_states << '\n'
                  << "chain mixture components (J): " << hmm.num_components << '\n'
                  << "variance floor: " << format_double(hmm.min_covar) << '\n'
                  << "hidden width (H): " << mdn.hidden_width << '\n'
                  << "network mixture components (M): " << mdn.num_components << '\n'
                  << "chain parameters: " << hmm.num_states * (hmm.num_states + 1) << '\n'
                  << "network parameters: "
                  << mdn_param_count(mdn.input_width, mdn.hidden_width, mdn.num_components) << '\n'
                  << "mtu: " << format_double(bundle.mtu) << '\n'
                  << "iat_floor: " << format_double(bundle.iat_floor) << '\n';
        if (!bundle.meta.flow_length_hist.empty()) {
            std::uint64_t flows = 0, packets = 0;
            for (const auto& [len, count] : bundle.meta.flow_length_hist) {
                flows += count;
                packets += static_cast<std::uint64_t>(len) * count;
            }
            std::cout << "training flows: " << flows << '\n'
                      << "training packets: " << packets << '\n'
                      << "shortest/longest flow: " << bundle.meta.flow_length_hist.front().first
                      << '/' << bundle.meta.flow_length_hist.back().first << '\n';
        }
    }
    if (!opt.table_path.empty()) {
        std::ifstream in(opt.table_path);
        if (!in) throw IoError("cannot open sweep table '" + opt.table_path + "'");
        std::string line;
        for (int i = 0; i <= opt.top && std::getline(in, line); ++i) {
            std::cout << line << '\n';
        }
    }
    return 0;
}

} // namespace flowsynth::cli
