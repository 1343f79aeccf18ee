#include "flowsynth/hmm_gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowsynth/errors.hpp"

namespace flowsynth {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp_row(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m; // all -inf
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

// Per-model constants reused across flows within one E-step.
struct EmissionTables {
    Eigen::VectorXd log_initial;       // K
    Eigen::MatrixXd log_transition;    // K x K
    Eigen::MatrixXd log_norm;          // K x J: log(beta) - 0.5*log|2*pi*Sigma|
    Eigen::MatrixXd inv_var0, inv_var1; // K x J
    Eigen::MatrixXd mean0, mean1;       // K x J

    explicit EmissionTables(const HmmGmmModel& m) {
        const int K = m.num_states, J = m.num_components;
        log_initial = m.initial.array().max(0.0).log();
        log_transition = m.transition.array().max(0.0).log();
        log_norm.resize(K, J);
        inv_var0.resize(K, J);
        inv_var1.resize(K, J);
        mean0.resize(K, J);
        mean1.resize(K, J);
        for (int k = 0; k < K; ++k) {
            for (int j = 0; j < J; ++j) {
                const auto& c = m.emissions[k][j];
                log_norm(k, j) = (c.weight > 0.0 ? std::log(c.weight) : kNegInf) -
                                 0.5 * (std::log(c.var.x()) + std::log(c.var.y())) - kLog2Pi;
                inv_var0(k, j) = 1.0 / c.var.x();
                inv_var1(k, j) = 1.0 / c.var.y();
                mean0(k, j) = c.mean.x();
                mean1(k, j) = c.mean.y();
            }
        }
    }

    // log p(z | state k, component j) + log beta_{k,j}, flattened K*J per row.
    void component_logs(const FeatureSeq& flow, Eigen::MatrixXd& out) const {
        const auto T = static_cast<Eigen::Index>(flow.size());
        const int K = static_cast<int>(log_norm.rows()), J = static_cast<int>(log_norm.cols());
        out.resize(T, K * J);
        for (Eigen::Index t = 0; t < T; ++t) {
            const double z0 = flow[t].x(), z1 = flow[t].y();
            for (int k = 0; k < K; ++k) {
                for (int j = 0; j < J; ++j) {
                    const double d0 = z0 - mean0(k, j);
                    const double d1 = z1 - mean1(k, j);
                    out(t, k * J + j) = log_norm(k, j) -
                        0.5 * (d0 * d0 * inv_var0(k, j) + d1 * d1 * inv_var1(k, j));
                }
            }
        }
    }
};

struct ForwardBackward {
    Eigen::MatrixXd log_comp;  // T x K*J
    Eigen::MatrixXd log_emit;  // T x K
    Eigen::MatrixXd log_fwd;   // T x K
    Eigen::MatrixXd log_bwd;   // T x K
    double log_like = 0.0;
};

void run_forward(const EmissionTables& tab, ForwardBackward& fb) {
    const auto T = fb.log_emit.rows();
    const auto K = fb.log_emit.cols();
    fb.log_fwd.resize(T, K);
    fb.log_fwd.row(0) = tab.log_initial.transpose() + fb.log_emit.row(0);
    Eigen::RowVectorXd tmp(K);
    for (Eigen::Index t = 1; t < T; ++t) {
        for (Eigen::Index k = 0; k < K; ++k) {
            tmp = fb.log_fwd.row(t - 1) + tab.log_transition.col(k).transpose();
            fb.log_fwd(t, k) = logsumexp_row(tmp) + fb.log_emit(t, k);
        }
    }
    fb.log_like = logsumexp_row(fb.log_fwd.row(T - 1));
}

void run_backward(const EmissionTables& tab, ForwardBackward& fb) {
    const auto T = fb.log_emit.rows();
    const auto K = fb.log_emit.cols();
    fb.log_bwd.resize(T, K);
    fb.log_bwd.row(T - 1).setZero();
    Eigen::RowVectorXd tmp(K);
    for (Eigen::Index t = T - 2; t >= 0; --t) {
        for (Eigen::Index k = 0; k < K; ++k) {
            tmp = tab.log_transition.row(k) + fb.log_emit.row(t + 1) + fb.log_bwd.row(t + 1);
            fb.log_bwd(t, k) = logsumexp_row(tmp);
        }
    }
}

ForwardBackward forward_backward(const EmissionTables& tab, const HmmGmmModel& model,
                                 const FeatureSeq& flow) {
    if (flow.empty()) throw DomainError("forward_backward: empty flow");
    const int K = model.num_states, J = model.num_components;
    ForwardBackward fb;
    tab.component_logs(flow, fb.log_comp);
    const auto T = fb.log_comp.rows();
    fb.log_emit.resize(T, K);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            fb.log_emit(t, k) = logsumexp_row(fb.log_comp.row(t).segment(k * J, J));
        }
    }
    run_forward(tab, fb);
    run_backward(tab, fb);
    if (!std::isfinite(fb.log_like)) {
        throw NumericError("forward recursion produced a non-finite log-likelihood");
    }
    return fb;
}

Eigen::MatrixXd gamma_from(const ForwardBackward& fb) {
    Eigen::MatrixXd gamma = (fb.log_fwd + fb.log_bwd).array() - fb.log_like;
    gamma = gamma.array().exp();
    for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
        const double s = gamma.row(t).sum();
        if (s > 0.0) gamma.row(t) /= s;
    }
    return gamma;
}

// Accumulated expected counts for one EM iteration.
struct SuffStats {
    Eigen::VectorXd initial;      // K: sum of gamma at t=1
    Eigen::MatrixXd trans;        // K x K: expected transition counts
    Eigen::MatrixXd comp_weight;  // K x J
    Eigen::MatrixXd comp_x0, comp_x1;   // K x J: weighted feature sums
    Eigen::MatrixXd comp_xx0, comp_xx1; // K x J: weighted squared-feature sums

    SuffStats(int K, int J)
        : initial(Eigen::VectorXd::Zero(K)),
          trans(Eigen::MatrixXd::Zero(K, K)),
          comp_weight(Eigen::MatrixXd::Zero(K, J)),
          comp_x0(Eigen::MatrixXd::Zero(K, J)),
          comp_x1(Eigen::MatrixXd::Zero(K, J)),
          comp_xx0(Eigen::MatrixXd::Zero(K, J)),
          comp_xx1(Eigen::MatrixXd::Zero(K, J)) {}
};

void accumulate_flow(const EmissionTables& tab, const HmmGmmModel& model, const FeatureSeq& flow,
                     SuffStats& stats, double& total_ll) {
    const int K = model.num_states, J = model.num_components;
    const ForwardBackward fb = forward_backward(tab, model, flow);
    const Eigen::MatrixXd gamma = gamma_from(fb);
    const auto T = gamma.rows();
    total_ll += fb.log_like;

    stats.initial += gamma.row(0).transpose();

    // Expected transition counts (xi summed over t).
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        for (int i = 0; i < K; ++i) {
            const double base = fb.log_fwd(t, i) - fb.log_like;
            for (int j = 0; j < K; ++j) {
                stats.trans(i, j) += std::exp(base + tab.log_transition(i, j) +
                                              fb.log_emit(t + 1, j) + fb.log_bwd(t + 1, j));
            }
        }
    }

    // Per-component responsibilities: gamma split across the mixture.
    for (Eigen::Index t = 0; t < T; ++t) {
        const double z0 = flow[t].x(), z1 = flow[t].y();
        for (int k = 0; k < K; ++k) {
            const double g = gamma(t, k);
            if (g <= 0.0) continue;
            for (int j = 0; j < J; ++j) {
                const double r = g * std::exp(fb.log_comp(t, k * J + j) - fb.log_emit(t, k));
                stats.comp_weight(k, j) += r;
                stats.comp_x0(k, j) += r * z0;
                stats.comp_x1(k, j) += r * z1;
                stats.comp_xx0(k, j) += r * z0 * z0;
                stats.comp_xx1(k, j) += r * z1 * z1;
            }
        }
    }
}

void maximize(const SuffStats& stats, std::size_t n_flows, HmmGmmModel& model) {
    const int K = model.num_states, J = model.num_components;
    constexpr double kTiny = 1e-300;

    model.initial = stats.initial / static_cast<double>(n_flows);
    model.initial /= model.initial.sum();

    for (int i = 0; i < K; ++i) {
        const double row_sum = stats.trans.row(i).sum();
        if (row_sum > kTiny) {
            model.transition.row(i) = stats.trans.row(i) / row_sum;
        }
        // else: state never left, keep the previous row
    }

    for (int k = 0; k < K; ++k) {
        const double state_mass = stats.comp_weight.row(k).sum();
        if (state_mass <= kTiny) continue; // state starved, keep previous emissions
        for (int j = 0; j < J; ++j) {
            auto& c = model.emissions[k][j];
            const double w = stats.comp_weight(k, j);
            c.weight = w / state_mass;
            if (w <= kTiny) continue;
            c.mean.x() = stats.comp_x0(k, j) / w;
            c.mean.y() = stats.comp_x1(k, j) / w;
            c.var.x() = std::max(stats.comp_xx0(k, j) / w - c.mean.x() * c.mean.x(), model.min_covar);
            c.var.y() = std::max(stats.comp_xx1(k, j) / w - c.mean.y() * c.mean.y(), model.min_covar);
        }
        // keep weights exactly normalized
        double wsum = 0.0;
        for (int j = 0; j < J; ++j) wsum += model.emissions[k][j].weight;
        for (int j = 0; j < J; ++j) model.emissions[k][j].weight /= wsum;
    }
}

std::vector<Eigen::Vector2d> pool_features(const std::vector<FeatureSeq>& flows) {
    std::vector<Eigen::Vector2d> pooled;
    std::size_t total = 0;
    for (const auto& f : flows) total += f.size();
    pooled.reserve(total);
    for (const auto& f : flows) pooled.insert(pooled.end(), f.begin(), f.end());
    return pooled;
}

// k-means++ seeding followed by Lloyd refinement; empty clusters keep
// their previous center.
std::vector<Eigen::Vector2d> kmeans_centers(const std::vector<Eigen::Vector2d>& points,
                                            int n_centers, Rng& rng) {
    const std::size_t n = points.size();
    std::vector<Eigen::Vector2d> centers;
    centers.reserve(n_centers);
    centers.push_back(points[rng.uniform_index(n)]);

    std::vector<double> d2(n);
    for (int c = 1; c < n_centers; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& ctr : centers) best = std::min(best, (points[i] - ctr).squaredNorm());
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(points[rng.uniform_index(n)]);
            continue;
        }
        double u = rng.uniform() * total;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            u -= d2[i];
            if (u <= 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(points[pick]);
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 10; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (points[i] - centers[0]).squaredNorm();
            for (int c = 1; c < n_centers; ++c) {
                const double d = (points[i] - centers[c]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<Eigen::Vector2d> sums(n_centers, Eigen::Vector2d::Zero());
        std::vector<std::size_t> counts(n_centers, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sums[assign[i]] += points[i];
            ++counts[assign[i]];
        }
        for (int c = 0; c < n_centers; ++c) {
            if (counts[c] > 0) centers[c] = sums[c] / static_cast<double>(counts[c]);
        }
    }
    return centers;
}

} // namespace

void HmmGmmModel::validate() const {
    constexpr double kTol = 1e-9;
    const int K = num_states, J = num_components;
    if (K < 1 || J < 1) throw BundleInvariantError("model: state/component counts must be >= 1");
    if (initial.size() != K || transition.rows() != K || transition.cols() != K ||
        static_cast<int>(emissions.size()) != K) {
        throw BundleInvariantError("model: inconsistent shapes");
    }
    if (std::abs(initial.sum() - 1.0) > kTol || initial.minCoeff() < 0.0) {
        throw BundleInvariantError("model: initial distribution is not stochastic");
    }
    for (int i = 0; i < K; ++i) {
        if (std::abs(transition.row(i).sum() - 1.0) > kTol || transition.row(i).minCoeff() < 0.0) {
            throw BundleInvariantError("model: transition row " + std::to_string(i) +
                                       " is not stochastic");
        }
    }
    for (int k = 0; k < K; ++k) {
        if (static_cast<int>(emissions[k].size()) != J) {
            throw BundleInvariantError("model: wrong component count in state " + std::to_string(k));
        }
        double wsum = 0.0;
        for (const auto& c : emissions[k]) {
            wsum += c.weight;
            if (c.weight < 0.0 || c.weight > 1.0 + kTol) {
                throw BundleInvariantError("model: component weight out of range");
            }
            if (c.var.minCoeff() < min_covar - kTol) {
                throw BundleInvariantError("model: variance below the floor");
            }
            if (!c.mean.allFinite() || !c.var.allFinite()) {
                throw BundleInvariantError("model: non-finite emission parameter");
            }
        }
        if (std::abs(wsum - 1.0) > kTol) {
            throw BundleInvariantError("model: mixture weights of state " + std::to_string(k) +
                                       " do not sum to 1");
        }
    }
}

HmmGmmModel init_hmm(const std::vector<FeatureSeq>& flows, int num_states, int num_components,
                     double min_covar, std::uint64_t seed) {
    if (num_states < 1 || num_components < 1) {
        throw DomainError("init_hmm: state and component counts must be >= 1");
    }
    if (!(min_covar > 0.0)) throw DomainError("init_hmm: min_covar must be positive");
    const auto pooled = pool_features(flows);
    const auto needed = static_cast<std::size_t>(num_states) * num_components;
    if (pooled.size() < needed) {
        throw DomainError("init_hmm: need at least " + std::to_string(needed) + " packets, got " +
                          std::to_string(pooled.size()));
    }

    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& z : pooled) mean += z;
    mean /= static_cast<double>(pooled.size());
    Eigen::Vector2d var = Eigen::Vector2d::Zero();
    for (const auto& z : pooled) var += (z - mean).cwiseProduct(z - mean);
    var /= static_cast<double>(pooled.size());
    var = var.cwiseMax(min_covar);

    Rng rng(seed);

    // Hierarchical seeding: k-means++ at the state level first, then
    // again inside each state's points for the component means. Keeps
    // both sub-modes of one behavioural regime in the same state.
    const auto state_centers = kmeans_centers(pooled, num_states, rng);
    std::vector<std::vector<Eigen::Vector2d>> state_points(num_states);
    for (const auto& z : pooled) {
        int best = 0;
        double best_d = (z - state_centers[0]).squaredNorm();
        for (int k = 1; k < num_states; ++k) {
            const double d = (z - state_centers[k]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        state_points[best].push_back(z);
    }

    HmmGmmModel model;
    model.num_states = num_states;
    model.num_components = num_components;
    model.min_covar = min_covar;
    model.initial = Eigen::VectorXd::Constant(num_states, 1.0 / num_states);
    model.transition = Eigen::MatrixXd::Constant(num_states, num_states, 1.0 / num_states);
    model.emissions.resize(num_states);
    const Eigen::Vector2d jitter_scale = var.cwiseSqrt() * 0.05;
    for (int k = 0; k < num_states; ++k) {
        std::vector<Eigen::Vector2d> sub;
        if (state_points[k].size() >= static_cast<std::size_t>(num_components)) {
            sub = kmeans_centers(state_points[k], num_components, rng);
        } else {
            // starved state: spread components around its center
            for (int j = 0; j < num_components; ++j) {
                sub.push_back(state_centers[k] + jitter_scale.cwiseProduct(rng.normal2()));
            }
        }

        // Variance from the points each sub-center actually owns; a
        // pooled-variance start is so wide that distinct sub-modes blur
        // together and EM merges them.
        std::vector<Eigen::Vector2d> sums(num_components, Eigen::Vector2d::Zero());
        std::vector<Eigen::Vector2d> sqsums(num_components, Eigen::Vector2d::Zero());
        std::vector<std::size_t> counts(num_components, 0);
        for (const auto& z : state_points[k]) {
            int best = 0;
            double best_d = (z - sub[0]).squaredNorm();
            for (int j = 1; j < num_components; ++j) {
                const double d = (z - sub[j]).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            sums[best] += z;
            sqsums[best] += z.cwiseProduct(z);
            ++counts[best];
        }

        model.emissions[k].resize(num_components);
        for (int j = 0; j < num_components; ++j) {
            auto& c = model.emissions[k][j];
            c.weight = 1.0 / num_components;
            c.mean = sub[j];
            if (counts[j] >= 2) {
                const Eigen::Vector2d mean = sums[j] / static_cast<double>(counts[j]);
                c.var = (sqsums[j] / static_cast<double>(counts[j]) - mean.cwiseProduct(mean))
                            .cwiseMax(min_covar);
            } else {
                c.var = var;
            }
        }
    }
    return model;
}

std::pair<HmmGmmModel, FitReport> fit_hmm_gmm(const std::vector<FeatureSeq>& flows,
                                              int num_states, int num_components,
                                              double min_covar, const FitOptions& opts) {
    if (opts.max_iter < 1) throw DomainError("fit_hmm_gmm: max_iter must be >= 1");
    HmmGmmModel model = init_hmm(flows, num_states, num_components, min_covar, opts.seed);
    FitReport report;
    report.log_likelihood.reserve(opts.max_iter);

    std::size_t n_flows = 0;
    for (const auto& f : flows) {
        if (!f.empty()) ++n_flows;
    }
    if (n_flows == 0) throw DomainError("fit_hmm_gmm: no non-empty flows");

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        const EmissionTables tab(model);
        SuffStats stats(num_states, num_components);
        double total_ll = 0.0;
        for (const auto& flow : flows) {
            if (flow.empty()) continue;
            accumulate_flow(tab, model, flow, stats, total_ll);
        }
        if (!std::isfinite(total_ll)) {
            throw NumericError("fit_hmm_gmm: non-finite log-likelihood at iteration " +
                               std::to_string(iter));
        }
        report.log_likelihood.push_back(total_ll);
        report.iterations = iter + 1;
        if (iter > 0) {
            const double gain = total_ll - report.log_likelihood[iter - 1];
            if (gain < opts.tol) {
                report.converged = true;
                break;
            }
        }
        maximize(stats, n_flows, model);
    }
    return {std::move(model), std::move(report)};
}

Eigen::MatrixXd posteriors(const HmmGmmModel& model, const FeatureSeq& flow) {
    if (flow.empty()) throw DomainError("posteriors: empty flow");
    const EmissionTables tab(model);
    return gamma_from(forward_backward(tab, model, flow));
}

double log_likelihood(const HmmGmmModel& model, const FeatureSeq& flow) {
    if (flow.empty()) throw DomainError("log_likelihood: empty flow");
    const EmissionTables tab(model);
    ForwardBackward fb;
    tab.component_logs(flow, fb.log_comp);
    const auto T = fb.log_comp.rows();
    const int K = model.num_states, J = model.num_components;
    fb.log_emit.resize(T, K);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            fb.log_emit(t, k) = logsumexp_row(fb.log_comp.row(t).segment(k * J, J));
        }
    }
    run_forward(tab, fb);
    return fb.log_like;
}

std::vector<int> sample_states(const HmmGmmModel& model, std::size_t length, Rng& rng) {
    if (length < 1) throw DomainError("sample_states: length must be >= 1");
    const int K = model.num_states;
    std::vector<int> states;
    states.reserve(length);
    std::vector<double> row(K);
    Eigen::Map<Eigen::VectorXd>(row.data(), K) = model.initial;
    states.push_back(rng.categorical(row));
    for (std::size_t t = 1; t < length; ++t) {
        Eigen::Map<Eigen::VectorXd>(row.data(), K) = model.transition.row(states.back()).transpose();
        states.push_back(rng.categorical(row));
    }
    return states;
}

} // namespace flowsynth
