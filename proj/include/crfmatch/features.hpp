#pragma once

#include "path_discovery.hpp"
#include "road_network.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace crfmatch {

using FeatureVector = Eigen::VectorXd;

enum class FeatureKind { Simple, Complex };

inline std::string to_string(FeatureKind k) { return k == FeatureKind::Simple ? "simple" : "complex"; }

inline FeatureKind parse_feature_kind(const std::string &s)
{
    if (s == "simple")
        return FeatureKind::Simple;
    if (s == "complex")
        return FeatureKind::Complex;
    throw std::invalid_argument("unknown feature set '" + s + "'");
}

struct TurnCounts
{
    int left = 0;
    int right = 0;
};

struct FeatureExtractor
{
    FeatureKind kind = FeatureKind::Simple;
    double turn_min_deg = 30.0;
    double turn_max_deg = 170.0;

    static constexpr int kComplexDim = 9;

    int dimension() const noexcept { return kind == FeatureKind::Simple ? 1 : kComplexDim; }
};

enum ComplexFeature : int {
    kLength = 0,
    kStopSigns,
    kSignals,
    kLeftTurns,
    kRightTurns,
    kMinTravelTime,
    kMaxSpeed,
    kMaxLanes,
    kMinLanes,
};

inline TurnCounts count_turns(const FeatureExtractor &fx, const Path &path, const RoadNetwork &net)
{
    TurnCounts tc;
    if (path.backward)
        return tc;
    for (std::size_t k = 0; k + 1 < path.links.size(); ++k) {
        const double delta =
            wrap_angle_deg(net.start_heading(net.link(path.links[k + 1])) - net.end_heading(net.link(path.links[k])));
        if (delta > fx.turn_min_deg && delta < fx.turn_max_deg)
            ++tc.left;
        else if (delta < -fx.turn_min_deg && delta > -fx.turn_max_deg)
            ++tc.right;
    }
    return tc;
}

inline TurnCounts count_turns(const Path &path, const RoadNetwork &net) { return count_turns({}, path, net); }

inline FeatureVector extract(const FeatureExtractor &fx, const Path &path, const RoadNetwork &net)
{
    FeatureVector phi = FeatureVector::Zero(fx.dimension());
    phi[kLength] = path.length;
    if (fx.kind == FeatureKind::Simple)
        return phi;
    const std::size_t n = path.links.size();
    double tt = 0.0;
    double vmax = 0.0;
    int lanes_max = 0;
    int lanes_min = std::numeric_limits<int>::max();
    for (std::size_t k = 0; k < n; ++k) {
        const Link &l = net.link(path.links[k]);
        // the vehicle pays stop signs and signals of every link it exits
        if (k + 1 < n) {
            phi[kStopSigns] += l.stop_signs;
            phi[kSignals] += l.signals;
        }
        double traversed = l.length;
        if (n == 1)
            traversed = path.length;
        else if (k == 0)
            traversed = l.length - path.start.offset;
        else if (k + 1 == n)
            traversed = path.end.offset;
        tt += traversed / l.speed_limit;
        vmax = std::max(vmax, l.speed_limit);
        lanes_max = std::max(lanes_max, l.lanes);
        lanes_min = std::min(lanes_min, l.lanes);
    }
    const TurnCounts tc = count_turns(fx, path, net);
    phi[kLeftTurns] = tc.left;
    phi[kRightTurns] = tc.right;
    phi[kMinTravelTime] = tt;
    phi[kMaxSpeed] = vmax;
    phi[kMaxLanes] = lanes_max;
    phi[kMinLanes] = lanes_min;
    return phi;
}

/// Observation precision epsilon = sigma^-2 together with the driver weights mu.
struct ModelParams
{
    double epsilon = 0.01;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
    FeatureKind kind = FeatureKind::Simple;

    double sigma() const { return 1.0 / std::sqrt(epsilon); }

    int dimension() const { return static_cast<int>(mu.size()) + 1; }

    Eigen::VectorXd theta() const
    {
        Eigen::VectorXd th(mu.size() + 1);
        th[0] = epsilon;
        th.tail(mu.size()) = mu;
        return th;
    }

    static ModelParams from_theta(const Eigen::VectorXd &th, FeatureKind kind)
    {
        ModelParams p;
        p.epsilon = th[0];
        p.mu = th.tail(th.size() - 1);
        p.kind = kind;
        return p;
    }

    static ModelParams from_sigma(double sigma, Eigen::VectorXd mu, FeatureKind kind = FeatureKind::Simple)
    {
        ModelParams p;
        p.epsilon = 1.0 / (sigma * sigma);
        p.mu = std::move(mu);
        p.kind = kind;
        return p;
    }

    FeatureExtractor extractor() const { return {kind}; }
};

inline double path_log_weight(const ModelParams &params, const FeatureVector &phi)
{
    if (params.mu.size() != phi.size())
        throw std::invalid_argument("path_log_weight: feature dimension " + std::to_string(phi.size()) +
                                    " does not match parameter dimension " + std::to_string(params.mu.size()));
    return params.mu.dot(phi);
}

inline nlohmann::json to_json(const ModelParams &p)
{
    return {{"sigma", p.sigma()},
            {"mu", std::vector<double>(p.mu.data(), p.mu.data() + p.mu.size())},
            {"feature_set", to_string(p.kind)}};
}

inline ModelParams model_from_json(const nlohmann::json &j)
{
    const double sigma = j.at("sigma").get<double>();
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw std::invalid_argument("model: sigma must be positive");
    const auto mu = j.at("mu").get<std::vector<double>>();
    const FeatureKind kind = parse_feature_kind(j.value("feature_set", std::string("simple")));
    if (static_cast<int>(mu.size()) != FeatureExtractor{kind}.dimension())
        throw std::invalid_argument("model: mu has " + std::to_string(mu.size()) + " entries, feature set '" +
                                    to_string(kind) + "' needs " + std::to_string(FeatureExtractor{kind}.dimension()));
    return ModelParams::from_sigma(sigma, Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<long>(mu.size())),
                                   kind);
}

enum class Baseline { ShortestPath, ClosestPoint, HardClosestPoint };
enum class StrategyHint { None, Online };

/// Baselines as extreme settings of the simple model: xi1 weighs path length, xi2 = -epsilon weighs
/// the squared-distance point feature.
inline std::pair<ModelParams, StrategyHint> baseline_params(Baseline kind)
{
    ModelParams p;
    p.kind = FeatureKind::Simple;
    p.mu = Eigen::VectorXd::Constant(1, kind == Baseline::ShortestPath ? -1000.0 : -0.001);
    p.epsilon = kind == Baseline::ShortestPath ? 0.001 : 1000.0;
    return {p, kind == Baseline::HardClosestPoint ? StrategyHint::Online : StrategyHint::None};
}

inline Baseline parse_baseline(const std::string &s)
{
    if (s == "shortest-path")
        return Baseline::ShortestPath;
    if (s == "closest-point")
        return Baseline::ClosestPoint;
    if (s == "hard-closest-point")
        return Baseline::HardClosestPoint;
    throw std::invalid_argument("unknown baseline '" + s + "'");
}

} // namespace crfmatch
