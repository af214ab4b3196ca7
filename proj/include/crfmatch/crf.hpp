#pragma once

#include "chain.hpp"
#include "features.hpp"
#include "path_discovery.hpp"
#include "projection.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace crfmatch {

/// Alternating candidate-state and candidate-path layers of one unbroken stretch of a trajectory.
struct Trellis
{
    std::vector<CandidateSet> states;
    std::vector<TransitionLayer> transitions;
    std::vector<std::size_t> observation_index; // position of each state layer in the input stream

    std::size_t steps() const noexcept { return states.size(); }
};

/// Decision sequence through a trellis: one state index per step, one path index per transition.
struct Trajectory
{
    std::vector<std::size_t> states;
    std::vector<std::size_t> paths;

    friend bool operator==(const Trajectory &, const Trajectory &) = default;
};

/// Model-independent quantities of a trellis: -d^2/2 per candidate and path feature vectors.
struct TrellisFeatures
{
    std::vector<std::vector<double>> half_sq_dist;
    std::vector<std::vector<FeatureVector>> path_features;
    int feature_dim = 1;
};

/// Log-weights of every candidate state and path under one parameter setting.
struct TrellisScores
{
    std::vector<std::vector<double>> state;
    std::vector<std::vector<double>> path;
};

inline TrellisFeatures featurize(const RoadNetwork &net, const Trellis &tr, const FeatureExtractor &fx)
{
    TrellisFeatures f;
    f.feature_dim = fx.dimension();
    for (const CandidateSet &s : tr.states) {
        auto &row = f.half_sq_dist.emplace_back();
        for (const CandidateState &c : s.candidates)
            row.push_back(-0.5 * c.gps_distance * c.gps_distance);
    }
    for (const TransitionLayer &layer : tr.transitions) {
        auto &row = f.path_features.emplace_back();
        for (const Path &p : layer.paths)
            row.push_back(extract(fx, p, net));
    }
    return f;
}

inline TrellisScores score(const TrellisFeatures &f, const ModelParams &params)
{
    TrellisScores s;
    const double log_norm = -std::log(std::sqrt(2.0 * std::numbers::pi) * params.sigma());
    for (const auto &row : f.half_sq_dist) {
        auto &out = s.state.emplace_back();
        for (double h : row)
            out.push_back(log_norm + params.epsilon * h);
    }
    for (const auto &row : f.path_features) {
        auto &out = s.path.emplace_back();
        for (const FeatureVector &phi : row)
            out.push_back(path_log_weight(params, phi));
    }
    return s;
}

inline TrellisScores score(const RoadNetwork &net, const Trellis &tr, const ModelParams &params)
{
    return score(featurize(net, tr, params.extractor()), params);
}

/// The compatibility structure of a trellis as a chain: step t is layer 2t, transition t is layer 2t+1.
inline std::vector<std::vector<std::vector<std::size_t>>> chain_structure(const Trellis &tr)
{
    std::vector<std::vector<std::vector<std::size_t>>> preds;
    preds.emplace_back(tr.states.front().size());
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
        const TransitionLayer &layer = tr.transitions[t];
        auto &path_preds = preds.emplace_back(layer.size());
        for (std::size_t j = 0; j < layer.size(); ++j)
            path_preds[j] = {layer.start_index[j]};
        auto &state_preds = preds.emplace_back(tr.states[t + 1].size());
        for (std::size_t j = 0; j < layer.size(); ++j)
            state_preds[layer.end_index[j]].push_back(j);
    }
    return preds;
}

inline LayeredChain to_chain(const Trellis &tr, const TrellisScores &s)
{
    if (tr.states.empty())
        throw std::invalid_argument("empty trellis");
    LayeredChain c;
    c.preds = chain_structure(tr);
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        c.log_weight.push_back(s.state[t]);
        if (t < tr.transitions.size())
            c.log_weight.push_back(s.path[t]);
    }
    return c;
}

inline double log_potential(const Trellis &tr, const Trajectory &traj, const TrellisScores &s)
{
    if (traj.states.size() != tr.steps() || traj.paths.size() != tr.transitions.size())
        throw std::invalid_argument("log_potential: trajectory does not match trellis shape");
    double v = 0.0;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        if (traj.states[t] >= tr.states[t].size())
            throw std::out_of_range("log_potential: state index out of range");
        v += s.state[t][traj.states[t]];
    }
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
        const TransitionLayer &layer = tr.transitions[t];
        const std::size_t j = traj.paths[t];
        if (j >= layer.size())
            throw std::out_of_range("log_potential: path index out of range");
        if (layer.start_index[j] != traj.states[t] || layer.end_index[j] != traj.states[t + 1])
            return kNegInf;
        v += s.path[t][j];
    }
    return v;
}

inline std::pair<Trajectory, double> viterbi(const Trellis &tr, const TrellisScores &s)
{
    const ViterbiResult r = viterbi_chain(to_chain(tr, s));
    Trajectory traj;
    for (std::size_t l = 0; l < r.values.size(); ++l)
        (l % 2 == 0 ? traj.states : traj.paths).push_back(r.values[l]);
    return {traj, r.log_weight};
}

/// Per-step distributions over candidate states (q) and over the paths leaving each step (r).
struct LayerDistributions
{
    std::vector<std::vector<double>> q;
    std::vector<std::vector<double>> r;
};

struct PosteriorMarginals
{
    LayerDistributions smoothed; // q-bar, r-bar
    LayerDistributions forward;
    LayerDistributions backward;
    double log_z = 0.0;

    const std::vector<std::vector<double>> &q_bar() const noexcept { return smoothed.q; }
    const std::vector<std::vector<double>> &r_bar() const noexcept { return smoothed.r; }
};

namespace detail {

inline LayerDistributions split_layers(std::vector<std::vector<double>> layers)
{
    LayerDistributions d;
    for (std::size_t l = 0; l < layers.size(); ++l)
        (l % 2 == 0 ? d.q : d.r).push_back(std::move(layers[l]));
    return d;
}

} // namespace detail

inline LayerDistributions forward(const Trellis &tr, const TrellisScores &s)
{
    ForwardPass fp = forward_pass(to_chain(tr, s));
    for (auto &layer : fp.log_alpha)
        layer = to_probabilities(layer);
    return detail::split_layers(std::move(fp.log_alpha));
}

inline LayerDistributions backward(const Trellis &tr, const TrellisScores &s)
{
    auto beta = backward_pass(to_chain(tr, s));
    for (auto &layer : beta)
        layer = to_probabilities(layer);
    return detail::split_layers(std::move(beta));
}

inline PosteriorMarginals smooth(const Trellis &tr, const TrellisScores &s)
{
    const LayeredChain c = to_chain(tr, s);
    const ForwardPass fp = forward_pass(c);
    const auto beta = backward_pass(c);
    PosteriorMarginals m;
    std::vector<std::vector<double>> post, fwd, bwd;
    for (std::size_t l = 0; l < c.layers(); ++l) {
        post.push_back(combine(fp.log_alpha[l], beta[l]));
        fwd.push_back(to_probabilities(fp.log_alpha[l]));
        bwd.push_back(to_probabilities(beta[l]));
    }
    m.smoothed = detail::split_layers(std::move(post));
    m.forward = detail::split_layers(std::move(fwd));
    m.backward = detail::split_layers(std::move(bwd));
    m.log_z = fp.log_z();
    return m;
}

/// Posterior for one step as delivered by a lagged smoother: q over the step's candidates and r over
/// the paths leaving it (empty for the final step).
struct StepMarginal
{
    std::size_t t = 0;
    std::vector<double> q;
    std::vector<double> r;
};

/// Streaming smoother with a fixed lag k. Step t is reported once the observation at t+k has arrived,
/// conditioned on everything up to it; k = 0 is the online filter.
class LaggedSmoother
{
  public:
    explicit LaggedSmoother(std::size_t lag) : k_(lag) {}

    std::size_t lag() const noexcept { return k_; }
    std::size_t steps() const noexcept { return steps_; }

    /// Adds the first step of the stream.
    std::vector<StepMarginal> push(const std::vector<double> &state_log_weight)
    {
        if (steps_ != 0)
            throw std::logic_error("LaggedSmoother: later steps need their transition layer");
        chain_.log_weight.push_back(state_log_weight);
        chain_.preds.emplace_back(state_log_weight.size());
        forward_step(chain_, 0, fwd_);
        steps_ = 1;
        return drain();
    }

    /// Adds a step reached through `layer` whose paths carry `path_log_weight`.
    std::vector<StepMarginal> push(const TransitionLayer &layer, const std::vector<double> &path_log_weight,
                                   const std::vector<double> &state_log_weight)
    {
        if (steps_ == 0)
            throw std::logic_error("LaggedSmoother: first step has no transition layer");
        const std::size_t prev = chain_.log_weight.back().size();
        auto &path_preds = chain_.preds.emplace_back(layer.size());
        for (std::size_t j = 0; j < layer.size(); ++j) {
            if (layer.start_index[j] >= prev || layer.end_index[j] >= state_log_weight.size())
                throw std::out_of_range("LaggedSmoother: compatibility index out of range");
            path_preds[j] = {layer.start_index[j]};
        }
        chain_.log_weight.push_back(path_log_weight);
        forward_step(chain_, chain_.layers() - 1, fwd_);
        auto &state_preds = chain_.preds.emplace_back(state_log_weight.size());
        for (std::size_t j = 0; j < layer.size(); ++j)
            state_preds[layer.end_index[j]].push_back(j);
        chain_.log_weight.push_back(state_log_weight);
        forward_step(chain_, chain_.layers() - 1, fwd_);
        ++steps_;
        return drain();
    }

    /// Flushes every step not yet reported, conditioning on the whole stream.
    std::vector<StepMarginal> finish()
    {
        std::vector<StepMarginal> out;
        if (steps_ == 0)
            return out;
        const std::size_t last = chain_.layers() - 1;
        const auto beta = backward_pass(chain_, 2 * next_, last);
        for (; next_ < steps_; ++next_) {
            const std::size_t t = next_;
            const std::size_t ms = std::min(2 * (t + k_), last);
            const std::size_t mp = std::min(std::max(2 * t + 1, 2 * (t + k_)), last);
            StepMarginal rec{t, {}, {}};
            rec.q = ms == last ? combine(fwd_.log_alpha[2 * t], beta[2 * t]) : window(2 * t, ms);
            if (2 * t + 1 <= last)
                rec.r = mp == last ? combine(fwd_.log_alpha[2 * t + 1], beta[2 * t + 1]) : window(2 * t + 1, mp);
            out.push_back(std::move(rec));
        }
        return out;
    }

  private:
    std::vector<double> window(std::size_t layer, std::size_t last) const
    {
        const auto beta = backward_pass(chain_, layer, last);
        return combine(fwd_.log_alpha[layer], beta[layer]);
    }

    std::vector<StepMarginal> drain()
    {
        std::vector<StepMarginal> out;
        const std::size_t last = chain_.layers() - 1;
        while (next_ < steps_) {
            const std::size_t t = next_;
            const std::size_t ms = 2 * (t + k_);
            const std::size_t mp = std::max(2 * t + 1, ms);
            if (mp > last)
                break;
            StepMarginal rec{t, {}, {}};
            const auto beta = backward_pass(chain_, 2 * t, mp);
            rec.r = combine(fwd_.log_alpha[2 * t + 1], beta[2 * t + 1]);
            rec.q = ms == mp ? combine(fwd_.log_alpha[2 * t], beta[2 * t]) : window(2 * t, ms);
            out.push_back(std::move(rec));
            ++next_;
        }
        return out;
    }

    std::size_t k_;
    LayeredChain chain_;
    ForwardPass fwd_;
    std::size_t steps_ = 0;
    std::size_t next_ = 0;
};

/// Runs a lagged smoother over a complete trellis, returning one record per step in order.
inline std::vector<StepMarginal> lagged_smooth(const Trellis &tr, const TrellisScores &s, std::size_t lag)
{
    LaggedSmoother sm(lag);
    std::vector<StepMarginal> out = sm.push(s.state[0]);
    for (std::size_t t = 1; t < tr.steps(); ++t) {
        auto part = sm.push(tr.transitions[t - 1], s.path[t - 1], s.state[t]);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    auto rest = sm.finish();
    std::move(rest.begin(), rest.end(), std::back_inserter(out));
    return out;
}

struct TimedPoint
{
    GeoPoint point;
    double t = 0.0;
};

/// Projects a time-ordered stream, discovers paths and cuts it wherever the trellis would lose flow or
/// an observation cannot be projected even at twice the radius.
inline std::vector<Trellis> build_trellis(const std::vector<TimedPoint> &obs, const RoadNetwork &net,
                                          const ProjectionConfig &proj, const DiscoveryConfig &disc)
{
    std::vector<Trellis> out;
    Trellis cur;
    std::vector<char> reach;
    auto close = [&] {
        if (!cur.states.empty())
            out.push_back(std::move(cur));
        cur = Trellis{};
    };
    ProjectionConfig wide = proj;
    wide.radius *= 2.0;
    for (std::size_t k = 0; k < obs.size(); ++k) {
        if (k > 0 && obs[k].t < obs[k - 1].t)
            throw std::invalid_argument("build_trellis: observations are not time-ordered");
        CandidateSet set;
        try {
            set = project(net, obs[k].point, obs[k].t, proj);
        } catch (const EmptyProjection &) {
            try {
                set = project(net, obs[k].point, obs[k].t, wide);
            } catch (const EmptyProjection &) {
                close();
                continue;
            }
        }
        if (!cur.states.empty()) {
            if (disc.backward_policy == BackwardPolicy::MonotoneHeuristic)
                set = monotone_adjust(net, cur.states.back(), set, proj);
            TransitionLayer layer = enumerate_paths(net, cur.states.back(), set, disc);
            std::vector<char> next(set.size(), 0);
            bool any = false;
            for (std::size_t j = 0; j < layer.size(); ++j)
                if (reach[layer.start_index[j]]) {
                    next[layer.end_index[j]] = 1;
                    any = true;
                }
            if (any) {
                cur.transitions.push_back(std::move(layer));
                cur.states.push_back(std::move(set));
                cur.observation_index.push_back(k);
                reach = std::move(next);
                continue;
            }
            close();
        }
        reach.assign(set.size(), 1);
        cur.states.push_back(std::move(set));
        cur.observation_index.push_back(k);
    }
    close();
    return out;
}

} // namespace crfmatch
