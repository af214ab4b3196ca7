#pragma once

#include "road_network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace crfmatch {

enum class ProjectionStrategy { MostLikelyPerLink, Grid };
enum class Prior { Uniform };

struct ProjectionConfig
{
    double sigma = 10.0;
    double radius = 40.0;
    ProjectionStrategy strategy = ProjectionStrategy::MostLikelyPerLink;
    double grid_step = 10.0;
    Prior prior = Prior::Uniform;

    static ProjectionConfig for_sigma(double sigma)
    {
        ProjectionConfig c;
        c.sigma = sigma;
        c.radius = 4.0 * sigma;
        return c;
    }

    void validate() const
    {
        if (!(sigma > 0.0))
            throw std::invalid_argument("projection: sigma must be positive");
        if (!(radius > 0.0))
            throw std::invalid_argument("projection: radius must be positive");
        if (strategy == ProjectionStrategy::Grid && !(grid_step > 0.0))
            throw std::invalid_argument("projection: grid step must be positive");
    }
};

struct CandidateState
{
    Location location;
    GeoPoint point;
    double gps_distance = 0.0;
    double obs_log_density = 0.0;
};

struct CandidateSet
{
    GeoPoint observation;
    double timestamp = 0.0;
    std::vector<CandidateState> candidates;

    std::size_t size() const noexcept { return candidates.size(); }
};

class EmptyProjection : public std::runtime_error
{
  public:
    EmptyProjection(const GeoPoint &g, double t)
        : std::runtime_error("no road link within radius of observation at t=" + std::to_string(t)), observation(g),
          timestamp(t)
    {
    }
    GeoPoint observation;
    double timestamp;
};

/// log of the isoradial Gaussian density at distance d.
inline double gaussian_log_density(double d, double sigma) noexcept
{
    return -std::log(std::sqrt(2.0 * std::numbers::pi) * sigma) - d * d / (2.0 * sigma * sigma);
}

inline double observation_log_density(const GeoPoint &g, const Location &x, double sigma, const RoadNetwork &net)
{
    return gaussian_log_density(distance(g, net.point_at(x)), sigma);
}

namespace detail {

inline CandidateState make_candidate(const RoadNetwork &net, const GeoPoint &g, Location loc, double sigma)
{
    CandidateState c;
    c.location = loc;
    c.point = net.point_at(loc);
    c.gps_distance = distance(g, c.point);
    c.obs_log_density = gaussian_log_density(c.gps_distance, sigma);
    return c;
}

inline void sort_candidates(std::vector<CandidateState> &cs)
{
    std::sort(cs.begin(), cs.end(), [](const CandidateState &a, const CandidateState &b) {
        return a.location.link != b.location.link ? a.location.link < b.location.link
                                                  : a.location.offset < b.location.offset;
    });
}

} // namespace detail

inline CandidateSet project(const RoadNetwork &net, const GeoPoint &g, double t, const ProjectionConfig &config)
{
    config.validate();
    CandidateSet set{g, t, {}};
    for (const RadiusHit &hit : net.links_within_radius(g, config.radius)) {
        if (config.strategy == ProjectionStrategy::MostLikelyPerLink) {
            CandidateState c = detail::make_candidate(net, g, {hit.link, hit.offset}, config.sigma);
            // the closest point is exact; reuse its distance rather than the re-interpolated one
            c.gps_distance = hit.distance;
            c.obs_log_density = gaussian_log_density(hit.distance, config.sigma);
            set.candidates.push_back(c);
            continue;
        }
        const double len = net.link(hit.link).length;
        const auto steps = static_cast<long>(std::floor(len / config.grid_step + 1e-9));
        for (long k = 0; k <= steps + 1; ++k) {
            double off = std::min(len, static_cast<double>(k) * config.grid_step);
            if (k == steps + 1) {
                if (len - static_cast<double>(steps) * config.grid_step <= 1e-9 * len)
                    break;
                off = len;
            }
            CandidateState c = detail::make_candidate(net, g, {hit.link, off}, config.sigma);
            if (c.gps_distance <= config.radius)
                set.candidates.push_back(c);
        }
    }
    if (set.candidates.empty())
        throw EmptyProjection(g, t);
    detail::sort_candidates(set.candidates);
    return set;
}

/// Pushes candidates of `next` forward to the furthest offset seen on the same link in `prev`,
/// unless that would move them outside the projection radius.
inline CandidateSet monotone_adjust(const RoadNetwork &net, const CandidateSet &prev, const CandidateSet &next,
                                    const ProjectionConfig &config)
{
    std::unordered_map<LinkId, double> furthest;
    for (const CandidateState &c : prev.candidates) {
        auto [it, inserted] = furthest.emplace(c.location.link, c.location.offset);
        if (!inserted)
            it->second = std::max(it->second, c.location.offset);
    }
    CandidateSet out = next;
    for (CandidateState &c : out.candidates) {
        const auto it = furthest.find(c.location.link);
        if (it == furthest.end() || it->second <= c.location.offset)
            continue;
        CandidateState moved =
            detail::make_candidate(net, next.observation, {c.location.link, it->second}, config.sigma);
        if (moved.gps_distance <= config.radius)
            c = moved;
    }
    detail::sort_candidates(out.candidates);
    return out;
}

} // namespace crfmatch
