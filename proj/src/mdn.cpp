#include "flowsynth/mdn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flowsynth/errors.hpp"
#include "flowsynth/rng.hpp"

namespace flowsynth {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double bound, Rng& rng) {
    double* p = m.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = (2.0 * rng.uniform() - 1.0) * bound;
}

// Everything the backward pass needs about one state's forward run.
struct StateForward {
    Eigen::VectorXd h1, h2, out;   // Q, Q, 5M
    MixtureParams params;
    Eigen::VectorXd log_weights;          // M
    Eigen::VectorXd comp_const;           // M: log pi - 0.5*log|2*pi*Sigma|
    Eigen::Matrix<double, 2, Eigen::Dynamic> inv_var;       // 2 x M
    Eigen::Matrix<double, 2, Eigen::Dynamic> softplus_grad; // 2 x M, zero where floored
};

StateForward forward_state(const MdnModel& model, int state) {
    const int M = model.num_components;
    StateForward f;
    f.h1 = (model.w1.col(state) + model.b1).array().tanh();
    f.h2 = ((model.w2 * f.h1 + model.b2).array()).tanh();
    f.out = model.w3 * f.h2 + model.b3;

    // softmax over the first M outputs
    const auto logits = f.out.head(M);
    const double m = logits.maxCoeff();
    Eigen::VectorXd ex = (logits.array() - m).exp();
    const double s = ex.sum();
    f.params.weights = ex / s;
    f.log_weights = (logits.array() - m) - std::log(s);

    f.params.means.resize(2, M);
    f.params.vars.resize(2, M);
    f.inv_var.resize(2, M);
    f.softplus_grad.resize(2, M);
    f.comp_const.resize(M);
    for (int c = 0; c < M; ++c) {
        for (int d = 0; d < 2; ++d) {
            f.params.means(d, c) = f.out[M + 2 * c + d];
            const double pre = f.out[3 * M + 2 * c + d];
            const double sp = softplus(pre);
            if (sp > kMdnVarFloor) {
                f.params.vars(d, c) = sp;
                f.softplus_grad(d, c) = sigmoid(pre);
            } else {
                f.params.vars(d, c) = kMdnVarFloor;
                f.softplus_grad(d, c) = 0.0;
            }
            f.inv_var(d, c) = 1.0 / f.params.vars(d, c);
        }
        f.comp_const[c] = f.log_weights[c] -
                          0.5 * (std::log(f.params.vars(0, c)) + std::log(f.params.vars(1, c))) -
                          kLog2Pi;
    }
    return f;
}

} // namespace

void MdnModel::validate() const {
    const int K = input_width, Q = hidden_width, M = num_components;
    if (K < 1 || Q < 1 || M < 1) throw BundleInvariantError("mdn: widths must be >= 1");
    if (w1.rows() != Q || w1.cols() != K || b1.size() != Q || w2.rows() != Q || w2.cols() != Q ||
        b2.size() != Q || w3.rows() != 5 * M || w3.cols() != Q || b3.size() != 5 * M) {
        throw BundleInvariantError("mdn: inconsistent layer shapes");
    }
    if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite() ||
        !w3.allFinite() || !b3.allFinite()) {
        throw BundleInvariantError("mdn: non-finite parameter");
    }
}

long long mdn_param_count(long long states, long long hidden, long long components) {
    return hidden * (states + hidden + 5 * components) + 2 * hidden + 5 * components;
}

MdnModel init_mdn(int states, int hidden, int components, std::uint64_t seed) {
    if (states < 1 || hidden < 1 || components < 1) {
        throw DomainError("init_mdn: widths must be >= 1");
    }
    MdnModel m;
    m.input_width = states;
    m.hidden_width = hidden;
    m.num_components = components;
    Rng rng(seed);
    m.w1.resize(hidden, states);
    m.w2.resize(hidden, hidden);
    m.w3.resize(5 * components, hidden);
    fill_uniform(m.w1, 1.0 / std::sqrt(static_cast<double>(states)), rng);
    fill_uniform(m.w2, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    fill_uniform(m.w3, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    m.b1 = Eigen::VectorXd::Zero(hidden);
    m.b2 = Eigen::VectorXd::Zero(hidden);
    m.b3 = Eigen::VectorXd::Zero(5 * components);
    return m;
}

MixtureParams mdn_forward(const MdnModel& model, int state) {
    if (state < 0 || state >= model.input_width) {
        throw DomainError("mdn_forward: state index out of range");
    }
    return forward_state(model, state).params;
}

double mdn_nll(const MixtureParams& params, const Eigen::Vector2d& z) {
    const auto M = params.weights.size();
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd e(M);
    for (Eigen::Index c = 0; c < M; ++c) {
        const double d0 = z.x() - params.means(0, c);
        const double d1 = z.y() - params.means(1, c);
        const double lw = params.weights[c] > 0.0
                              ? std::log(params.weights[c])
                              : -std::numeric_limits<double>::infinity();
        e[c] = lw - 0.5 * (std::log(params.vars(0, c)) + std::log(params.vars(1, c))) - kLog2Pi -
               0.5 * (d0 * d0 / params.vars(0, c) + d1 * d1 / params.vars(1, c));
        best = std::max(best, e[c]);
    }
    if (!std::isfinite(best)) return std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (Eigen::Index c = 0; c < M; ++c) s += std::exp(e[c] - best);
    return -(best + std::log(s));
}

std::vector<WeightedSample> build_weighted_set(const std::vector<FeatureSeq>& flows,
                                               const HmmGmmModel& hmm, double weight_floor) {
    std::vector<WeightedSample> out;
    for (const auto& flow : flows) {
        if (flow.empty()) continue;
        const Eigen::MatrixXd gamma = posteriors(hmm, flow);
        for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
            for (int k = 0; k < hmm.num_states; ++k) {
                const double g = gamma(t, k);
                if (g > weight_floor) out.push_back({k, flow[t], g});
            }
        }
    }
    return out;
}

void MdnGradients::resize_like(const MdnModel& model) {
    w1.resize(model.w1.rows(), model.w1.cols());
    w2.resize(model.w2.rows(), model.w2.cols());
    w3.resize(model.w3.rows(), model.w3.cols());
    b1.resize(model.b1.size());
    b2.resize(model.b2.size());
    b3.resize(model.b3.size());
}

void MdnGradients::set_zero() {
    w1.setZero();
    w2.setZero();
    w3.setZero();
    b1.setZero();
    b2.setZero();
    b3.setZero();
}

double MdnGradients::squared_norm() const {
    return w1.squaredNorm() + w2.squaredNorm() + w3.squaredNorm() + b1.squaredNorm() +
           b2.squaredNorm() + b3.squaredNorm();
}

void MdnGradients::scale(double factor) {
    w1 *= factor;
    w2 *= factor;
    w3 *= factor;
    b1 *= factor;
    b2 *= factor;
    b3 *= factor;
}

double mdn_loss_and_gradients(const MdnModel& model, std::span<const WeightedSample> batch,
                              MdnGradients* grads) {
    if (batch.empty()) throw DomainError("mdn_loss_and_gradients: empty batch");
    const int K = model.input_width, M = model.num_components;

    // The network only ever sees K distinct one-hot inputs, so forward
    // once per state present in the batch and accumulate per-state head
    // gradients instead of per-sample backward passes.
    std::vector<int> slot(K, -1);
    std::vector<int> states;
    for (const auto& s : batch) {
        if (s.state < 0 || s.state >= K) {
            throw DomainError("mdn_loss_and_gradients: state index out of range");
        }
        if (slot[s.state] < 0) {
            slot[s.state] = static_cast<int>(states.size());
            states.push_back(s.state);
        }
    }
    const int P = static_cast<int>(states.size());
    std::vector<StateForward> fwd;
    fwd.reserve(P);
    for (int p = 0; p < P; ++p) fwd.push_back(forward_state(model, states[p]));

    Eigen::MatrixXd head_grad;
    if (grads) head_grad = Eigen::MatrixXd::Zero(5 * M, P);

    double loss_sum = 0.0;
    double weight_sum = 0.0;
    Eigen::VectorXd e(M), rho(M);
    for (const auto& s : batch) {
        const StateForward& f = fwd[slot[s.state]];
        double best = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < M; ++c) {
            const double d0 = s.z.x() - f.params.means(0, c);
            const double d1 = s.z.y() - f.params.means(1, c);
            e[c] = f.comp_const[c] -
                   0.5 * (d0 * d0 * f.inv_var(0, c) + d1 * d1 * f.inv_var(1, c));
            best = std::max(best, e[c]);
        }
        double norm = 0.0;
        for (int c = 0; c < M; ++c) {
            rho[c] = std::exp(e[c] - best);
            norm += rho[c];
        }
        const double nll = -(best + std::log(norm));
        loss_sum += s.weight * nll;
        weight_sum += s.weight;
        if (!grads) continue;

        auto g = head_grad.col(slot[s.state]);
        for (int c = 0; c < M; ++c) {
            const double r = rho[c] / norm;
            g[c] += s.weight * (f.params.weights[c] - r);
            for (int d = 0; d < 2; ++d) {
                const double diff = f.params.means(d, c) - s.z[d];
                const double iv = f.inv_var(d, c);
                g[M + 2 * c + d] += s.weight * r * diff * iv;
                // gradient w.r.t. the variance itself; the softplus
                // factor is state-constant and applied below
                g[3 * M + 2 * c + d] += s.weight * 0.5 * r * (iv - iv * iv * diff * diff);
            }
        }
    }
    if (weight_sum <= 0.0) throw DomainError("mdn_loss_and_gradients: zero total weight");
    const double loss = loss_sum / weight_sum;

    if (grads) {
        head_grad /= weight_sum;
        Eigen::MatrixXd h1(model.hidden_width, P), h2(model.hidden_width, P);
        for (int p = 0; p < P; ++p) {
            h1.col(p) = fwd[p].h1;
            h2.col(p) = fwd[p].h2;
            auto g = head_grad.col(p);
            for (int c = 0; c < M; ++c) {
                for (int d = 0; d < 2; ++d) {
                    g[3 * M + 2 * c + d] *= fwd[p].softplus_grad(d, c);
                }
            }
        }
        grads->resize_like(model);
        grads->set_zero();
        grads->w3 = head_grad * h2.transpose();
        grads->b3 = head_grad.rowwise().sum();
        Eigen::MatrixXd da2 =
            (model.w3.transpose() * head_grad).cwiseProduct((1.0 - h2.array().square()).matrix());
        grads->w2 = da2 * h1.transpose();
        grads->b2 = da2.rowwise().sum();
        Eigen::MatrixXd da1 =
            (model.w2.transpose() * da2).cwiseProduct((1.0 - h1.array().square()).matrix());
        for (int p = 0; p < P; ++p) grads->w1.col(states[p]) = da1.col(p);
        grads->b1 = da1.rowwise().sum();
    }
    return loss;
}

// Returns the pre-clip norm; scales the gradients in place when they
// exceed the threshold.
double clip_gradients(MdnGradients& grads, double clip_norm) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > clip_norm && norm > 0.0) grads.scale(clip_norm / norm);
    return norm;
}

std::pair<MdnModel, std::vector<double>> train_mdn(const std::vector<WeightedSample>& samples,
                                                   int states, int hidden, int components,
                                                   const TrainConfig& cfg) {
    if (samples.empty()) throw DomainError("train_mdn: empty sample set");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0) ||
        !(cfg.clip_norm > 0.0)) {
        throw DomainError("train_mdn: non-positive training parameter");
    }

    MdnModel model = init_mdn(states, hidden, components, cfg.seed);
    MdnGradients grads, m1, m2;
    grads.resize_like(model);
    m1.resize_like(model);
    m2.resize_like(model);
    m1.set_zero();
    m2.set_zero();

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x6d646e));

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<WeightedSample> batch;
    batch.reserve(cfg.batch_size);

    std::vector<double> epoch_losses;
    epoch_losses.reserve(cfg.epochs);
    long long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0, epoch_weight = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            double batch_weight = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(samples[order[i]]);
                batch_weight += batch.back().weight;
            }
            const double loss = mdn_loss_and_gradients(model, batch, &grads);
            if (!std::isfinite(loss)) {
                throw NumericError("train_mdn: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            }
            epoch_loss_sum += loss * batch_weight;
            epoch_weight += batch_weight;

            clip_gradients(grads, cfg.clip_norm);

            ++step;
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            auto adam = [&](Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& g,
                            Eigen::MatrixXd& mom1, Eigen::MatrixXd& mom2) {
                mom1 = kBeta1 * mom1 + (1.0 - kBeta1) * g;
                mom2 = kBeta2 * mom2.array().matrix() + (1.0 - kBeta2) * g.array().square().matrix();
                param.array() -= cfg.learning_rate * (mom1.array() / bc1) /
                                 ((mom2.array() / bc2).sqrt() + kEps);
            };
            auto adam_vec = [&](Eigen::Ref<Eigen::VectorXd> param, const Eigen::VectorXd& g,
                                Eigen::VectorXd& mom1, Eigen::VectorXd& mom2) {
                mom1 = kBeta1 * mom1 + (1.0 - kBeta1) * g;
                mom2 = kBeta2 * mom2.array().matrix() + (1.0 - kBeta2) * g.array().square().matrix();
                param.array() -= cfg.learning_rate * (mom1.array() / bc1) /
                                 ((mom2.array() / bc2).sqrt() + kEps);
            };
            adam(model.w1, grads.w1, m1.w1, m2.w1);
            adam(model.w2, grads.w2, m1.w2, m2.w2);
            adam(model.w3, grads.w3, m1.w3, m2.w3);
            adam_vec(model.b1, grads.b1, m1.b1, m2.b1);
            adam_vec(model.b2, grads.b2, m1.b2, m2.b2);
            adam_vec(model.b3, grads.b3, m1.b3, m2.b3);
        }
        epoch_losses.push_back(epoch_loss_sum / epoch_weight);
    }
    return {std::move(model), std::move(epoch_losses)};
}

} // namespace flowsynth
