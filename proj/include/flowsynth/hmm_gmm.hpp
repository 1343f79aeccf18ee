#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "flowsynth/rng.hpp"
#include "flowsynth/trace.hpp"

namespace flowsynth {

// One diagonal-covariance Gaussian of a per-state mixture.
struct GaussComponent {
    double weight = 1.0;
    Eigen::Vector2d mean{0.0, 0.0};
    Eigen::Vector2d var{1.0, 1.0};
};

// K-state Markov chain with a J-component diagonal-Gaussian mixture per
// state. `initial` and every row of `transition` are probability
// vectors; all variances sit at or above `min_covar`.
struct HmmGmmModel {
    int num_states = 1;
    int num_components = 1;
    double min_covar = 1e-3;
    Eigen::VectorXd initial;                           // K
    Eigen::MatrixXd transition;                        // K x K, row-stochastic
    std::vector<std::vector<GaussComponent>> emissions; // [K][J]

    // Throws BundleInvariantError when a stochasticity or floor
    // invariant is broken.
    void validate() const;
};

struct FitReport {
    std::vector<double> log_likelihood; // total over all flows, one entry per iteration
    int iterations = 0;
    bool converged = false;
};

struct FitOptions {
    int max_iter = 200;
    double tol = 1e-4; // absolute log-likelihood gain
    std::uint64_t seed = 0;
};

// Uniform initial/transition probabilities; emission means seeded by
// k-means++ selection over the pooled feature vectors followed by a few
// Lloyd refinement steps; variances start at the pooled per-dimension
// variance, floored. Deterministic given the seed.
HmmGmmModel init_hmm(const std::vector<FeatureSeq>& flows, int num_states, int num_components,
                     double min_covar, std::uint64_t seed);

// EM over all flows treated as independent sequences sharing one
// parameter set. Stops at max_iter or when the total log-likelihood
// gain drops below tol.
std::pair<HmmGmmModel, FitReport> fit_hmm_gmm(const std::vector<FeatureSeq>& flows,
                                              int num_states, int num_components,
                                              double min_covar, const FitOptions& opts);

// Smoothing posteriors gamma[t][k] = P(state_t = k | whole flow),
// forward-backward in log space. Rows sum to 1.
Eigen::MatrixXd posteriors(const HmmGmmModel& model, const FeatureSeq& flow);

// log P(flow | model) via the log-space forward recursion.
double log_likelihood(const HmmGmmModel& model, const FeatureSeq& flow);

// State trajectory: s_1 from `initial`, each following state from the
// previous state's transition row.
std::vector<int> sample_states(const HmmGmmModel& model, std::size_t length, Rng& rng);

} // namespace flowsynth
