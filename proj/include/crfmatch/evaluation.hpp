#pragma once

#include "chain.hpp"
#include "crf.hpp"
#include "features.hpp"
#include "parallel.hpp"
#include "path_discovery.hpp"
#include "synthetic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crfmatch {

/// One recorded trajectory: noisy fixes aligned one-to-one with the ground truth.
struct Sample
{
    std::vector<TimedPoint> observations;
    GroundTruth truth;
};

/// Joins two paths that meet at a point.
inline Path concat(const Path &a, const Path &b)
{
    Path out = a;
    out.end = b.end;
    auto first = b.links.begin();
    if (!out.links.empty() && first != b.links.end() && *first == out.links.back())
        ++first;
    out.links.insert(out.links.end(), first, b.links.end());
    out.backward = false;
    out.length = a.length + b.length;
    return out;
}

inline Sample decimate(const Sample &s, double period)
{
    const auto &tt = s.truth.times;
    if (tt.size() < 2)
        return s;
    const double base = tt[1] - tt[0];
    const double ratio = period / base;
    const auto step = static_cast<std::size_t>(std::llround(ratio));
    if (step == 0 || std::abs(ratio - static_cast<double>(step)) > 1e-9 * std::max(1.0, ratio))
        throw std::invalid_argument("decimate: period " + std::to_string(period) +
                                    " is not a multiple of the base period " + std::to_string(base));
    Sample out;
    for (std::size_t k = 0; k < s.truth.size(); k += step) {
        out.observations.push_back(s.observations[k]);
        out.truth.times.push_back(tt[k]);
        out.truth.states.push_back(s.truth.states[k]);
        out.truth.points.push_back(s.truth.points[k]);
        if (k + step < s.truth.size()) {
            Path p = s.truth.paths[k];
            for (std::size_t m = k + 1; m < k + step; ++m)
                p = concat(p, s.truth.paths[m]);
            out.truth.paths.push_back(std::move(p));
        }
    }
    return out;
}

namespace detail {

struct Interval
{
    LinkId link;
    double lo;
    double hi;
};

inline std::vector<Interval> traversal(const RoadNetwork &net, const Path &p)
{
    std::vector<Interval> out;
    for (std::size_t k = 0; k < p.links.size(); ++k) {
        const double len = net.link(p.links[k]).length;
        double lo = k == 0 ? p.start.offset : 0.0;
        double hi = k + 1 == p.links.size() ? p.end.offset : len;
        if (p.links.size() == 1) {
            lo = std::min(p.start.offset, p.end.offset);
            hi = std::max(p.start.offset, p.end.offset);
        }
        out.push_back({p.links[k], lo, hi});
    }
    return out;
}

} // namespace detail

/// Length of p_true that p_est also drives over.
inline double coverage(const RoadNetwork &net, const Path &p_true, const Path &p_est)
{
    const auto est = detail::traversal(net, p_est);
    double cov = 0.0;
    double total = 0.0;
    for (const auto &a : detail::traversal(net, p_true)) {
        total += a.hi - a.lo;
        for (const auto &b : est)
            if (a.link == b.link)
                cov += std::max(0.0, std::min(a.hi, b.hi) - std::max(a.lo, b.lo));
    }
    return std::min(cov, total);
}

inline double miscoverage(const RoadNetwork &net, const Path &p_true, const Path &p_est)
{
    double len = 0.0;
    for (const auto &a : detail::traversal(net, p_true))
        len += a.hi - a.lo;
    if (len <= 0.0)
        return 0.0;
    return std::clamp(1.0 - coverage(net, p_true, p_est) / len, 0.0, 1.0);
}

struct Strategy
{
    enum class Kind { Viterbi, Lagged, Offline } kind = Kind::Offline;
    std::size_t lag = 0;

    static Strategy viterbi() { return {Kind::Viterbi, 0}; }
    static Strategy online() { return {Kind::Lagged, 0}; }
    static Strategy lagged(std::size_t k) { return {Kind::Lagged, k}; }
    static Strategy offline() { return {Kind::Offline, 0}; }

    std::string name() const
    {
        switch (kind) {
        case Kind::Viterbi:
            return "viterbi";
        case Kind::Offline:
            return "offline";
        case Kind::Lagged:
            return lag == 0 ? "online" : "lag" + std::to_string(lag);
        }
        return "?";
    }

    static Strategy parse(const std::string &s)
    {
        if (s == "viterbi")
            return viterbi();
        if (s == "offline")
            return offline();
        if (s == "online")
            return online();
        if (s.size() > 3 && s.compare(0, 3, "lag") == 0) {
            std::size_t pos = 0;
            const unsigned long k = std::stoul(s.substr(3), &pos);
            if (pos == s.size() - 3)
                return lagged(k);
        }
        throw std::invalid_argument("unknown strategy '" + s + "'");
    }

    friend bool operator==(const Strategy &, const Strategy &) = default;
};

/// Decoded output for one trellis: chosen indices, plus distributions unless decoded by Viterbi.
struct MatchResult
{
    std::vector<std::size_t> best_state;
    std::vector<std::size_t> best_path;
    std::vector<std::vector<double>> q;
    std::vector<std::vector<double>> r;
};

inline MatchResult run_strategy(const Trellis &tr, const TrellisScores &s, const Strategy &strategy)
{
    MatchResult m;
    if (strategy.kind == Strategy::Kind::Viterbi) {
        auto [traj, value] = viterbi(tr, s);
        m.best_state = std::move(traj.states);
        m.best_path = std::move(traj.paths);
        return m;
    }
    if (strategy.kind == Strategy::Kind::Offline) {
        PosteriorMarginals pm = smooth(tr, s);
        m.q = std::move(pm.smoothed.q);
        m.r = std::move(pm.smoothed.r);
    } else {
        for (StepMarginal &rec : lagged_smooth(tr, s, strategy.lag)) {
            m.q.push_back(std::move(rec.q));
            if (!rec.r.empty())
                m.r.push_back(std::move(rec.r));
        }
    }
    for (const auto &q : m.q)
        m.best_state.push_back(argmax(q));
    for (const auto &r : m.r)
        m.best_path.push_back(argmax(r));
    return m;
}

/// Indices of the ground truth inside a trellis, where it is present among the candidates.
struct TruthLabels
{
    std::vector<std::optional<std::size_t>> states;
    std::vector<std::optional<std::size_t>> paths;

    bool complete() const
    {
        return std::all_of(states.begin(), states.end(), [](const auto &x) { return x.has_value(); }) &&
               std::all_of(paths.begin(), paths.end(), [](const auto &x) { return x.has_value(); });
    }

    Trajectory trajectory() const
    {
        Trajectory t;
        for (const auto &x : states)
            t.states.push_back(*x);
        for (const auto &x : paths)
            t.paths.push_back(*x);
        return t;
    }
};

/// The true state is the candidate on the true link closest to the true offset; the true path is a
/// candidate with the true link sequence, preferably joining the true states.
inline TruthLabels label_trellis(const Trellis &tr, const GroundTruth &truth)
{
    TruthLabels lab;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        const Location &x = truth.states[tr.observation_index[t]];
        std::optional<std::size_t> best;
        double best_d = 0.0;
        const auto &cs = tr.states[t].candidates;
        for (std::size_t i = 0; i < cs.size(); ++i) {
            if (cs[i].location.link != x.link)
                continue;
            const double d = std::abs(cs[i].location.offset - x.offset);
            if (!best || d < best_d) {
                best = i;
                best_d = d;
            }
        }
        lab.states.push_back(best);
    }
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
        const std::size_t k0 = tr.observation_index[t];
        const std::size_t k1 = tr.observation_index[t + 1];
        Path truth_path = truth.paths[k0];
        for (std::size_t m = k0 + 1; m < k1; ++m)
            truth_path = concat(truth_path, truth.paths[m]);
        const TransitionLayer &layer = tr.transitions[t];
        std::optional<std::size_t> any, joined;
        for (std::size_t j = 0; j < layer.size(); ++j) {
            if (layer.paths[j].links != truth_path.links)
                continue;
            if (!any)
                any = j;
            if (!joined && lab.states[t] && lab.states[t + 1] && layer.start_index[j] == *lab.states[t] &&
                layer.end_index[j] == *lab.states[t + 1])
                joined = j;
        }
        lab.paths.push_back(joined ? joined : any);
    }
    return lab;
}

struct Summary
{
    std::size_t count = 0;
    double mean = 0.0;
    double p05 = 0.0;
    double p25 = 0.0;
    double median = 0.0;
    double p75 = 0.0;
    double p95 = 0.0;

    static Summary of(std::vector<double> v)
    {
        Summary s;
        s.count = v.size();
        if (v.empty())
            return s;
        std::sort(v.begin(), v.end());
        double sum = 0.0;
        for (double x : v)
            sum += x;
        s.mean = sum / static_cast<double>(v.size());
        auto q = [&](double f) {
            const double pos = f * static_cast<double>(v.size() - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const auto hi = std::min(lo + 1, v.size() - 1);
            return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
        };
        s.p05 = q(0.05);
        s.p25 = q(0.25);
        s.median = q(0.5);
        s.p75 = q(0.75);
        s.p95 = q(0.95);
        return s;
    }
};

inline nlohmann::json to_json(const Summary &s)
{
    if (s.count == 0)
        return {{"count", 0}, {"mean", nullptr}};
    return {{"count", s.count}, {"mean", s.mean}, {"p05", s.p05}, {"p25", s.p25},
            {"median", s.median}, {"p75", s.p75}, {"p95", s.p95}};
}

/// Raw per-trajectory tallies; reports are built from these so partial results merge exactly.
struct TrajectoryTally
{
    std::size_t points = 0;
    std::size_t point_misses = 0;
    std::size_t paths = 0;
    std::size_t path_misses = 0;
    std::size_t truth_state_absent = 0;
    std::size_t truth_path_absent = 0;
    std::size_t dropped_observations = 0;
    std::size_t breaks = 0;
    std::vector<double> point_ll, path_ll, point_entropy, path_entropy, miscoverage;

    double point_miss_rate() const { return points ? static_cast<double>(point_misses) / points : 0.0; }
    double path_miss_rate() const { return paths ? static_cast<double>(path_misses) / paths : 0.0; }
};

struct MetricsReport
{
    std::string strategy;
    std::size_t trajectories = 0;
    std::size_t points = 0;
    std::size_t point_misses = 0;
    std::size_t paths = 0;
    std::size_t path_misses = 0;
    std::size_t truth_state_absent = 0;
    std::size_t truth_path_absent = 0;
    std::size_t dropped_observations = 0;
    std::size_t breaks = 0;
    double point_miss_rate = 0.0; // pooled over all steps
    double path_miss_rate = 0.0;
    double point_miss_rate_per_trajectory = 0.0; // mean of per-trajectory rates
    double path_miss_rate_per_trajectory = 0.0;
    Summary true_point_log_likelihood, true_path_log_likelihood;
    Summary point_entropy, path_entropy, miscoverage;
    std::vector<TrajectoryTally> per_trajectory;
};

inline nlohmann::json to_json(const MetricsReport &r)
{
    return {{"strategy", r.strategy},
            {"trajectories", r.trajectories},
            {"points", r.points},
            {"paths", r.paths},
            {"point_misses", r.point_misses},
            {"path_misses", r.path_misses},
            {"point_miss_rate", r.point_miss_rate},
            {"path_miss_rate", r.path_miss_rate},
            {"point_miss_rate_per_trajectory", r.point_miss_rate_per_trajectory},
            {"path_miss_rate_per_trajectory", r.path_miss_rate_per_trajectory},
            {"truth_state_absent", r.truth_state_absent},
            {"truth_path_absent", r.truth_path_absent},
            {"dropped_observations", r.dropped_observations},
            {"breaks", r.breaks},
            {"true_point_log_likelihood", to_json(r.true_point_log_likelihood)},
            {"true_path_log_likelihood", to_json(r.true_path_log_likelihood)},
            {"point_entropy", to_json(r.point_entropy)},
            {"path_entropy", to_json(r.path_entropy)},
            {"miscoverage", to_json(r.miscoverage)}};
}

inline MetricsReport merge_tallies(std::string strategy, std::vector<TrajectoryTally> tallies)
{
    MetricsReport r;
    r.strategy = std::move(strategy);
    r.trajectories = tallies.size();
    std::vector<double> pll, hll, pe, he, mc;
    double prate = 0.0, hrate = 0.0;
    for (const auto &t : tallies) {
        r.points += t.points;
        r.point_misses += t.point_misses;
        r.paths += t.paths;
        r.path_misses += t.path_misses;
        r.truth_state_absent += t.truth_state_absent;
        r.truth_path_absent += t.truth_path_absent;
        r.dropped_observations += t.dropped_observations;
        r.breaks += t.breaks;
        prate += t.point_miss_rate();
        hrate += t.path_miss_rate();
        pll.insert(pll.end(), t.point_ll.begin(), t.point_ll.end());
        hll.insert(hll.end(), t.path_ll.begin(), t.path_ll.end());
        pe.insert(pe.end(), t.point_entropy.begin(), t.point_entropy.end());
        he.insert(he.end(), t.path_entropy.begin(), t.path_entropy.end());
        mc.insert(mc.end(), t.miscoverage.begin(), t.miscoverage.end());
    }
    r.point_miss_rate = r.points ? static_cast<double>(r.point_misses) / r.points : 0.0;
    r.path_miss_rate = r.paths ? static_cast<double>(r.path_misses) / r.paths : 0.0;
    if (!tallies.empty()) {
        r.point_miss_rate_per_trajectory = prate / static_cast<double>(tallies.size());
        r.path_miss_rate_per_trajectory = hrate / static_cast<double>(tallies.size());
    }
    r.true_point_log_likelihood = Summary::of(std::move(pll));
    r.true_path_log_likelihood = Summary::of(std::move(hll));
    r.point_entropy = Summary::of(std::move(pe));
    r.path_entropy = Summary::of(std::move(he));
    r.miscoverage = Summary::of(std::move(mc));
    r.per_trajectory = std::move(tallies);
    return r;
}

struct MatchingSetup
{
    ProjectionConfig projection;
    DiscoveryConfig discovery;

    /// Projection radius 4 sigma; path budgets stretched by that radius so jitter does not cut trellises.
    static MatchingSetup for_sigma(double sigma)
    {
        MatchingSetup s;
        s.projection = ProjectionConfig::for_sigma(sigma);
        s.discovery.slack = s.projection.radius;
        return s;
    }
};

/// Scores one trellis against the ground truth, adding to the tally.
inline void tally_trellis(const RoadNetwork &net, const Trellis &tr, const GroundTruth &truth,
                          const MatchResult &m, TrajectoryTally &out)
{
    const TruthLabels lab = label_trellis(tr, truth);
    const double floor_p = 1e-300;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        if (!lab.states[t])
            ++out.truth_state_absent;
        if (!lab.states[t] || m.best_state[t] != *lab.states[t])
            ++out.point_misses;
        if (!m.q.empty()) {
            out.point_entropy.push_back(entropy(m.q[t]));
            if (lab.states[t])
                out.point_ll.push_back(std::log(std::max(m.q[t][*lab.states[t]], floor_p)));
        }
    }
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
        const Path &chosen = tr.transitions[t].paths[m.best_path[t]];
        const std::size_t k0 = tr.observation_index[t];
        const std::size_t k1 = tr.observation_index[t + 1];
        Path true_path = truth.paths[k0];
        for (std::size_t k = k0 + 1; k < k1; ++k)
            true_path = concat(true_path, truth.paths[k]);
        if (!lab.paths[t])
            ++out.truth_path_absent;
        if (chosen.links != true_path.links)
            ++out.path_misses;
        out.miscoverage.push_back(miscoverage(net, true_path, chosen));
        if (!m.r.empty()) {
            out.path_entropy.push_back(entropy(m.r[t]));
            if (lab.paths[t])
                out.path_ll.push_back(std::log(std::max(m.r[t][*lab.paths[t]], floor_p)));
        }
    }
}

inline TrajectoryTally evaluate_sample(const RoadNetwork &net, const ModelParams &model, const Strategy &strategy,
                                       const Sample &sample, const MatchingSetup &setup)
{
    TrajectoryTally tally;
    const std::size_t n = sample.observations.size();
    tally.points = n;
    tally.paths = n > 0 ? n - 1 : 0;
    const auto trellises = build_trellis(sample.observations, net, setup.projection, setup.discovery);
    std::size_t covered = 0;
    std::size_t inner_transitions = 0;
    for (const Trellis &tr : trellises) {
        const MatchResult m = run_strategy(tr, score(net, tr, model), strategy);
        tally_trellis(net, tr, sample.truth, m, tally);
        covered += tr.steps();
        inner_transitions += tr.transitions.size();
    }
    tally.dropped_observations = n - covered;
    tally.point_misses += n - covered;
    tally.breaks = trellises.empty() ? 0 : trellises.size() - 1;
    // transitions that straddle a break or a dropped fix are never reconstructed
    tally.path_misses += tally.paths - inner_transitions;
    return tally;
}

inline MetricsReport evaluate(const RoadNetwork &net, const ModelParams &model, const Strategy &strategy,
                              const std::vector<Sample> &dataset, const MatchingSetup &setup, unsigned threads = 1)
{
    std::vector<TrajectoryTally> tallies(dataset.size());
    parallel_for(dataset.size(), threads,
                 [&](std::size_t u) { tallies[u] = evaluate_sample(net, model, strategy, dataset[u], setup); });
    return merge_tallies(strategy.name(), std::move(tallies));
}

struct Fold
{
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Deterministic k-fold partition of indices [0, n): shuffled once, then cut into near-equal blocks.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t folds, std::uint64_t seed)
{
    if (folds < 1 || folds > std::max<std::size_t>(n, 1))
        throw std::invalid_argument("kfold_split: folds must be between 1 and the dataset size");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
        idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
        std::swap(idx[i - 1], idx[j]);
    }
    std::vector<Fold> out(folds);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= pos && i < pos + size)
                out[f].test.push_back(idx[i]);
            else
                out[f].train.push_back(idx[i]);
        }
        std::sort(out[f].test.begin(), out[f].test.end());
        std::sort(out[f].train.begin(), out[f].train.end());
        pos += size;
    }
    return out;
}

} // namespace crfmatch
