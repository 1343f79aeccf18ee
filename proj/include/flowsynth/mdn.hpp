#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "flowsynth/hmm_gmm.hpp"
#include "flowsynth/trace.hpp"

namespace flowsynth {

// Gaussian mixture over the 2-d feature space: M weights, M diagonal
// means/variances.
struct MixtureParams {
    Eigen::VectorXd weights;             // M
    Eigen::Matrix<double, 2, Eigen::Dynamic> means; // 2 x M
    Eigen::Matrix<double, 2, Eigen::Dynamic> vars;  // 2 x M
};

// Two tanh hidden layers on a one-hot state input, a linear head of 5M
// outputs per state: M weight logits (softmax), 2M means, 2M variance
// pre-activations (softplus, floored).
struct MdnModel {
    int input_width = 1;   // number of states the one-hot input spans
    int hidden_width = 128;
    int num_components = 1;
    Eigen::MatrixXd w1; // Q x K
    Eigen::VectorXd b1; // Q
    Eigen::MatrixXd w2; // Q x Q
    Eigen::VectorXd b2; // Q
    Eigen::MatrixXd w3; // 5M x Q
    Eigen::VectorXd b3; // 5M

    void validate() const;
};

// One training row: packet features, its state, and the posterior mass
// the state assigned to it.
struct WeightedSample {
    int state = 0;
    Eigen::Vector2d z{0.0, 0.0};
    double weight = 1.0;
};

struct TrainConfig {
    int epochs = 90;
    int batch_size = 1024;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
};

// Variance floor applied after the softplus.
inline constexpr double kMdnVarFloor = 1e-6;

// Q(K + Q + 5M) + 2Q + 5M
long long mdn_param_count(long long states, long long hidden, long long components);

// Zero biases, weights uniform in +-1/sqrt(fan_in).
MdnModel init_mdn(int states, int hidden, int components, std::uint64_t seed);

MixtureParams mdn_forward(const MdnModel& model, int state);

// -log sum_m pi_m N(z; mu_m, diag(var_m)), evaluated with log-sum-exp.
double mdn_nll(const MixtureParams& params, const Eigen::Vector2d& z);

// One sample per (packet, state) pair whose posterior clears the floor.
std::vector<WeightedSample> build_weighted_set(const std::vector<FeatureSeq>& flows,
                                               const HmmGmmModel& hmm,
                                               double weight_floor = 1e-4);

// Gradient buffers matching MdnModel's parameter shapes.
struct MdnGradients {
    Eigen::MatrixXd w1, w2, w3;
    Eigen::VectorXd b1, b2, b3;

    void resize_like(const MdnModel& model);
    void set_zero();
    double squared_norm() const;
    void scale(double factor);
};

// Weighted-average batch loss sum(w * nll) / sum(w) and, when `grads`
// is non-null, its analytic gradient. The backward pass groups samples
// by state, so its cost is O(K) network evaluations per batch rather
// than O(batch).
double mdn_loss_and_gradients(const MdnModel& model, std::span<const WeightedSample> batch,
                              MdnGradients* grads);

// Scales the gradients in place when their global Euclidean norm
// exceeds the threshold; returns the pre-clip norm.
double clip_gradients(MdnGradients& grads, double clip_norm);

// Adam with (0.9, 0.999, 1e-8) moments, global-norm gradient clipping,
// reshuffled mini-batches each epoch. Returns the trained model and the
// weighted mean loss per epoch.
std::pair<MdnModel, std::vector<double>> train_mdn(const std::vector<WeightedSample>& samples,
                                                   int states, int hidden, int components,
                                                   const TrainConfig& cfg);

} // namespace flowsynth
