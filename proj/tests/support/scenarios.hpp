#pragma once

// Hand-built situations shared by unit and acceptance tests.

#include "fixtures.hpp"

#include <crfmatch/crfmatch.hpp>

#include <cmath>
#include <vector>

namespace scenario {

using namespace crfmatch;
using fixture::P;

/// Two start states, equal observations. State 0 leaves through a single long path, state 1 through
/// `n` parallel short paths. Every path ends in the one final state. Parallel paths weigh 0, the long
/// path `-gap`.
struct SelectionBias
{
    Trellis trellis;
    TrellisScores scores;
    std::size_t isolated = 0; // index of the long path in the transition layer
};

inline SelectionBias selection_bias(std::size_t n = 10, double gap = 0.1)
{
    SelectionBias f;
    CandidateSet a, b;
    a.candidates.resize(2);
    b.candidates.resize(1);
    b.timestamp = 1.0;
    f.trellis.states = {a, b};
    f.trellis.observation_index = {0, 1};
    TransitionLayer layer;
    layer.paths.resize(n + 1);
    layer.start_index.push_back(0);
    layer.end_index.push_back(0);
    for (std::size_t j = 0; j < n; ++j) {
        layer.start_index.push_back(1);
        layer.end_index.push_back(0);
    }
    f.trellis.transitions = {layer};
    f.scores.state = {{0.0, 0.0}, {0.0}};
    f.scores.path.push_back(std::vector<double>(n + 1, 0.0));
    f.scores.path[0][0] = -gap;
    f.isolated = 0;
    return f;
}

/// Locally normalized (HMM-style) forward pass: transition probabilities are the path weights
/// renormalized over the paths leaving each state. Returns the filtered probability of every path of
/// the first transition layer.
inline std::vector<double> hmm_path_scores(const SelectionBias &f)
{
    const Trellis &tr = f.trellis;
    const auto &layer = tr.transitions[0];
    std::vector<double> prior(tr.states[0].size());
    double z = 0.0;
    for (std::size_t i = 0; i < prior.size(); ++i)
        z += prior[i] = std::exp(f.scores.state[0][i]);
    for (double &p : prior)
        p /= z;
    std::vector<double> out_mass(prior.size(), 0.0);
    for (std::size_t j = 0; j < layer.size(); ++j)
        out_mass[layer.start_index[j]] += std::exp(f.scores.path[0][j]);
    std::vector<double> score(layer.size());
    for (std::size_t j = 0; j < layer.size(); ++j) {
        const std::size_t i = layer.start_index[j];
        score[j] = prior[i] * std::exp(f.scores.path[0][j]) / out_mass[i] *
                   std::exp(f.scores.state[1][layer.end_index[j]]);
    }
    double s = 0.0;
    for (double v : score)
        s += v;
    for (double &v : score)
        v /= s;
    return score;
}

/// A highway (links 1, 2, 3) with an exit ramp (links 4, 5) forking at x = 300 at a shallow angle.
/// The second fix sits between highway and ramp; the later fixes are clearly on the ramp.
struct HighwayExit
{
    RoadNetwork net;
    std::vector<TimedPoint> fixes;
    ModelParams model;
    std::size_t ambiguous_step = 1;
};

inline HighwayExit highway_exit()
{
    HighwayExit h{fixture::build({{1, P(0, 0)}, {2, P(300, 0)}, {3, P(600, 0)}, {4, P(900, 0)}, {5, P(600, 30)},
                                  {6, P(900, 60)}},
                                 {{1, 1, 2, {}, 15.0},
                                  {2, 2, 3, {}, 15.0},
                                  {3, 3, 4, {}, 15.0},
                                  {4, 2, 5, {}, 15.0},
                                  {5, 5, 6, {}, 15.0}}),
                  {fixture::fix(100, 0, 0), fixture::fix(400, 5, 20), fixture::fix(600, 30, 40),
                   fixture::fix(900, 60, 60)},
                  ModelParams::from_sigma(10.0, Eigen::VectorXd::Constant(1, -0.005)),
                  1};
    return h;
}

/// A straight east-west road (links 1, 2, 3) with a side street (link 10 north from x = 200, link 11
/// back south). The middle fix is nearer the side street than the main road.
struct SideStreet
{
    RoadNetwork net;
    std::vector<TimedPoint> fixes;
    ModelParams model;
};

inline SideStreet side_street()
{
    return {fixture::build({{1, P(0, 0)}, {2, P(200, 0)}, {3, P(400, 0)}, {4, P(600, 0)}, {5, P(200, 200)}},
                           {{1, 1, 2, {}}, {2, 2, 3, {}}, {3, 3, 4, {}}, {10, 2, 5, {}}, {11, 5, 2, {}}}),
            {fixture::fix(100, 0, 0), fixture::fix(208, 20, 30), fixture::fix(400, 0, 120)},
            ModelParams::from_sigma(10.0, Eigen::VectorXd::Constant(1, -0.01))};
}

} // namespace scenario
