#pragma once

#include "chain.hpp"
#include "crf.hpp"
#include "features.hpp"
#include "parallel.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace crfmatch {

/// Layered exponential-family sequence: value i of layer l carries a feature vector T[l][i]; the
/// weight of a compatible assignment is exp(theta . sum of its features).
struct GeneralizedSequence
{
    std::vector<std::vector<Eigen::VectorXd>> features;
    std::vector<std::vector<std::vector<std::size_t>>> preds;
    Eigen::VectorXd realized; // observed (or expected) total feature vector

    std::size_t layers() const noexcept { return features.size(); }
    int dimension() const { return features.empty() ? 0 : static_cast<int>(features.front().front().size()); }
};

using Label = Trajectory;

struct Expected
{
    const PosteriorMarginals *marginals;
};

inline GeneralizedSequence to_generalized(const Trellis &tr, const TrellisFeatures &f,
                                          const std::variant<Label, Expected> &mode)
{
    if (tr.states.empty())
        throw std::invalid_argument("to_generalized: empty trellis");
    GeneralizedSequence seq;
    seq.preds = chain_structure(tr);
    const int M = f.feature_dim + 1;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        auto &states = seq.features.emplace_back();
        for (double h : f.half_sq_dist[t]) {
            Eigen::VectorXd v = Eigen::VectorXd::Zero(M);
            v[0] = h;
            states.push_back(std::move(v));
        }
        if (t < tr.transitions.size()) {
            auto &paths = seq.features.emplace_back();
            for (const FeatureVector &phi : f.path_features[t]) {
                Eigen::VectorXd v(M);
                v[0] = 0.0;
                v.tail(M - 1) = phi;
                paths.push_back(std::move(v));
            }
        }
    }
    seq.realized = Eigen::VectorXd::Zero(M);
    if (const Label *label = std::get_if<Label>(&mode)) {
        if (label->states.size() != tr.steps() || label->paths.size() != tr.transitions.size())
            throw std::invalid_argument("to_generalized: label does not match trellis shape");
        for (std::size_t l = 0; l < seq.layers(); ++l) {
            const std::size_t idx = l % 2 == 0 ? label->states[l / 2] : label->paths[l / 2];
            if (idx >= seq.features[l].size())
                throw std::out_of_range("to_generalized: label index out of range at layer " + std::to_string(l));
            seq.realized += seq.features[l][idx];
        }
    } else {
        const PosteriorMarginals &m = *std::get<Expected>(mode).marginals;
        for (std::size_t l = 0; l < seq.layers(); ++l) {
            const auto &p = l % 2 == 0 ? m.q_bar()[l / 2] : m.r_bar()[l / 2];
            if (p.size() != seq.features[l].size())
                throw std::invalid_argument("to_generalized: marginals do not match trellis shape");
            for (std::size_t i = 0; i < p.size(); ++i)
                seq.realized += p[i] * seq.features[l][i];
        }
    }
    return seq;
}

inline LayeredChain weighted_chain(const GeneralizedSequence &seq, const Eigen::VectorXd &theta)
{
    LayeredChain c;
    c.preds = seq.preds;
    for (const auto &layer : seq.features) {
        auto &w = c.log_weight.emplace_back();
        for (const auto &v : layer)
            w.push_back(theta.dot(v));
    }
    return c;
}

inline double log_partition(const GeneralizedSequence &seq, const Eigen::VectorXd &theta)
{
    return forward_pass(weighted_chain(seq, theta)).log_z();
}

struct PartitionDerivatives
{
    double log_z = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian; // empty unless requested
};

/// log Z with its gradient (expected total features) and optionally its Hessian (their covariance),
/// propagated layer by layer with predecessor weights normalized to avoid overflow.
inline PartitionDerivatives log_partition_derivatives(const GeneralizedSequence &seq, const Eigen::VectorXd &theta,
                                                      bool with_hessian)
{
    const int M = static_cast<int>(theta.size());
    std::vector<double> a_prev, a_cur;
    std::vector<Eigen::VectorXd> g_prev, g_cur;
    std::vector<Eigen::MatrixXd> h_prev, h_cur;
    std::vector<double> buf;
    for (std::size_t l = 0; l < seq.layers(); ++l) {
        const auto &layer = seq.features[l];
        const std::size_t n = layer.size();
        a_cur.assign(n, kNegInf);
        g_cur.assign(n, Eigen::VectorXd::Zero(M));
        if (with_hessian)
            h_cur.assign(n, Eigen::MatrixXd::Zero(M, M));
        for (std::size_t i = 0; i < n; ++i) {
            const Eigen::VectorXd &T = layer[i];
            const double w = theta.dot(T);
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(M);
            Eigen::MatrixXd second;
            if (with_hessian)
                second = Eigen::MatrixXd::Zero(M, M);
            if (l == 0) {
                a_cur[i] = w;
            } else {
                buf.clear();
                for (std::size_t j : seq.preds[l][i])
                    buf.push_back(a_prev[j]);
                const double z = log_sum_exp(buf);
                if (z == kNegInf)
                    continue;
                a_cur[i] = w + z;
                for (std::size_t j : seq.preds[l][i]) {
                    const double rho = std::exp(a_prev[j] - z);
                    if (rho == 0.0)
                        continue;
                    mean += rho * g_prev[j];
                    if (with_hessian)
                        second += rho * h_prev[j];
                }
            }
            g_cur[i] = T + mean;
            if (with_hessian)
                h_cur[i] = T * T.transpose() + mean * T.transpose() + T * mean.transpose() + second;
        }
        std::swap(a_prev, a_cur);
        std::swap(g_prev, g_cur);
        std::swap(h_prev, h_cur);
    }
    PartitionDerivatives out;
    out.log_z = log_sum_exp(a_prev);
    if (!std::isfinite(out.log_z))
        throw DeadTrellis("sequence has no compatible assignment");
    out.gradient = Eigen::VectorXd::Zero(M);
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(M, M);
    for (std::size_t i = 0; i < a_prev.size(); ++i) {
        const double pi = std::exp(a_prev[i] - out.log_z);
        if (pi == 0.0)
            continue;
        out.gradient += pi * g_prev[i];
        if (with_hessian)
            second += pi * h_prev[i];
    }
    if (with_hessian) {
        out.hessian = second - out.gradient * out.gradient.transpose();
        out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
    }
    return out;
}

inline Eigen::VectorXd log_partition_gradient(const GeneralizedSequence &seq, const Eigen::VectorXd &theta)
{
    return log_partition_derivatives(seq, theta, false).gradient;
}

inline Eigen::MatrixXd log_partition_hessian(const GeneralizedSequence &seq, const Eigen::VectorXd &theta)
{
    return log_partition_derivatives(seq, theta, true).hessian;
}

struct TrainingConfig
{
    double quadratic_penalty = 1e-2;
    int newton_iters_per_step = 1; // EM M-step
    int max_newton_iters = 100;    // supervised
    int em_iters = 3;
    double convergence_tol = 1e-8;
    double min_epsilon = 1e-12;
    unsigned threads = 1;
};

struct IterationReport
{
    int iter = 0;
    double objective = 0.0;
    Eigen::VectorXd theta;
    double wallclock_s = 0.0;
};

inline nlohmann::json to_json(const IterationReport &r)
{
    return {{"iter", r.iter},
            {"objective", r.objective},
            {"theta", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
            {"wallclock_s", r.wallclock_s}};
}

struct TrainingResult
{
    ModelParams params;
    std::vector<IterationReport> report;
    std::size_t excluded = 0; // sequences dropped for lack of mass
};

class TrainingError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

struct Objective
{
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

/// Penalized log-likelihood sum_u [theta . realized_u - log Z_u(theta)] - penalty/2 |theta|^2.
inline Objective penalized_objective(const std::vector<GeneralizedSequence> &seqs, const Eigen::VectorXd &theta,
                                     const TrainingConfig &cfg, int order)
{
    const int M = static_cast<int>(theta.size());
    std::vector<PartitionDerivatives> parts(seqs.size());
    parallel_for(seqs.size(), cfg.threads, [&](std::size_t u) {
        if (order == 0)
            parts[u].log_z = log_partition(seqs[u], theta);
        else
            parts[u] = log_partition_derivatives(seqs[u], theta, order >= 2);
    });
    Objective obj;
    obj.value = -0.5 * cfg.quadratic_penalty * theta.squaredNorm();
    if (order >= 1)
        obj.gradient = -cfg.quadratic_penalty * theta;
    if (order >= 2)
        obj.hessian = -cfg.quadratic_penalty * Eigen::MatrixXd::Identity(M, M);
    for (std::size_t u = 0; u < seqs.size(); ++u) {
        const double term = theta.dot(seqs[u].realized) - parts[u].log_z;
        if (!std::isfinite(term))
            throw TrainingError("non-finite objective contribution from sequence " + std::to_string(u));
        obj.value += term;
        if (order >= 1)
            obj.gradient += seqs[u].realized - parts[u].gradient;
        if (order >= 2)
            obj.hessian -= parts[u].hessian;
    }
    return obj;
}

namespace detail {

/// One safeguarded Newton ascent step. Returns false when no step-halving trial improves the objective.
inline bool newton_step(const std::vector<GeneralizedSequence> &seqs, Eigen::VectorXd &theta, double &value,
                        const TrainingConfig &cfg)
{
    const Objective obj = penalized_objective(seqs, theta, cfg, 2);
    value = obj.value;
    const Eigen::MatrixXd neg_h = -obj.hessian;
    const long M = obj.gradient.size();
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(M);
    // with epsilon held at its bound the step is solved over the remaining coordinates only
    const bool pinned = theta[0] <= cfg.min_epsilon && obj.gradient[0] <= 0.0;
    if (pinned) {
        if (M > 1)
            dir.tail(M - 1) = neg_h.bottomRightCorner(M - 1, M - 1).ldlt().solve(obj.gradient.tail(M - 1));
    } else {
        dir = neg_h.ldlt().solve(obj.gradient);
    }
    Eigen::VectorXd ascent = obj.gradient;
    if (pinned)
        ascent[0] = 0.0;
    if (!dir.allFinite() || dir.dot(ascent) <= 0.0)
        dir = ascent; // fall back to steepest ascent when the curvature is unusable
    for (int halving = 0; halving < 60; ++halving) {
        const double alpha = std::ldexp(1.0, -halving);
        Eigen::VectorXd trial = theta + alpha * dir;
        trial[0] = std::max(trial[0], cfg.min_epsilon);
        double v;
        try {
            v = penalized_objective(seqs, trial, cfg, 0).value;
        } catch (const TrainingError &) {
            continue;
        }
        if (v >= value) {
            theta = trial;
            value = v;
            return true;
        }
    }
    return false;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace detail

inline TrainingResult supervised_mle(const std::vector<GeneralizedSequence> &seqs, const Eigen::VectorXd &theta0,
                                     FeatureKind kind, const TrainingConfig &cfg = {})
{
    if (seqs.empty())
        throw TrainingError("supervised_mle: no labeled sequences");
    const auto t0 = std::chrono::steady_clock::now();
    TrainingResult res;
    Eigen::VectorXd theta = theta0;
    theta[0] = std::max(theta[0], cfg.min_epsilon);
    double value = penalized_objective(seqs, theta, cfg, 0).value;
    for (int it = 1; it <= cfg.max_newton_iters; ++it) {
        const double before = value;
        const bool moved = detail::newton_step(seqs, theta, value, cfg);
        res.report.push_back({it, value, theta, detail::seconds_since(t0)});
        if (!moved || std::abs(value - before) <= cfg.convergence_tol * std::max(1.0, std::abs(value)))
            break;
    }
    res.params = ModelParams::from_theta(theta, kind);
    return res;
}

/// Starting point for supervised training: sigma 10 m, weights off.
inline Eigen::VectorXd default_theta0(FeatureKind kind)
{
    Eigen::VectorXd th = Eigen::VectorXd::Zero(FeatureExtractor{kind}.dimension() + 1);
    th[0] = 0.01;
    return th;
}

/// Hand-tuned starting model: sigma 20 m and a length weight of -1 per characteristic distance.
inline ModelParams em_default_init(FeatureKind kind, double characteristic_length)
{
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(FeatureExtractor{kind}.dimension());
    mu[kLength] = characteristic_length > 0.0 ? -1.0 / characteristic_length : 0.0;
    return ModelParams::from_sigma(20.0, std::move(mu), kind);
}

struct EmInput
{
    const Trellis *trellis;
    const TrellisFeatures *features;
};

inline TrainingResult em_train(const std::vector<EmInput> &data, const ModelParams &init,
                               const TrainingConfig &cfg = {})
{
    if (data.empty())
        throw TrainingError("em_train: no trellises");
    const auto t0 = std::chrono::steady_clock::now();
    TrainingResult res;
    Eigen::VectorXd theta = init.theta();
    for (int it = 1; it <= cfg.em_iters; ++it) {
        const ModelParams current = ModelParams::from_theta(theta, init.kind);
        std::vector<std::optional<GeneralizedSequence>> slots(data.size());
        parallel_for(data.size(), cfg.threads, [&](std::size_t u) {
            try {
                const PosteriorMarginals m = smooth(*data[u].trellis, score(*data[u].features, current));
                GeneralizedSequence seq = to_generalized(*data[u].trellis, *data[u].features, Expected{&m});
                slots[u] = std::move(seq);
            } catch (const DeadTrellis &) {
            }
        });
        std::vector<GeneralizedSequence> seqs;
        res.excluded = 0;
        for (auto &s : slots) {
            if (s)
                seqs.push_back(std::move(*s));
            else
                ++res.excluded;
        }
        if (seqs.empty())
            throw TrainingError("em_train: every trellis lost its mass");
        if (res.excluded > 0)
            std::cerr << "em: excluded " << res.excluded << " trellis(es) without mass\n";
        double value = penalized_objective(seqs, theta, cfg, 0).value;
        for (int n = 0; n < cfg.newton_iters_per_step; ++n)
            if (!detail::newton_step(seqs, theta, value, cfg))
                break;
        res.report.push_back({it, value, theta, detail::seconds_since(t0)});
    }
    res.params = ModelParams::from_theta(theta, init.kind);
    return res;
}

} // namespace crfmatch
