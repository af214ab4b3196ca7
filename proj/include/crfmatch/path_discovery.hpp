#pragma once

#include "projection.hpp"
#include "road_network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <unordered_map>
#include <stdexcept>
#include <vector>

namespace crfmatch {

struct Path
{
    Location start;
    Location end;
    std::vector<LinkId> links;
    double length = 0.0;
    // apparent rearward move within one link; length holds the magnitude
    bool backward = false;

    friend bool operator==(const Path &, const Path &) = default;
};

enum class BackwardPolicy { AllowBackward, GridForwardOnly, MonotoneHeuristic };

struct DiscoveryConfig
{
    double v_max = 0.0; // <= 0 means 1.5 x the fastest speed limit of the network
    double dt = 60.0;
    std::size_t max_paths_per_pair = 20;
    BackwardPolicy backward_policy = BackwardPolicy::MonotoneHeuristic;
    double slack = 0.0; // meters of apparent travel allowed on top of v_max * dt to absorb GPS noise

    double effective_v_max(const RoadNetwork &net) const
    {
        return v_max > 0.0 ? v_max : 1.5 * net.max_speed_limit();
    }

    /// Travel-time budget at speed limits equivalent to driving dt at v_max, plus the slack distance.
    double budget(const RoadNetwork &net, double step_dt) const
    {
        return (step_dt * effective_v_max(net) + slack) / net.max_speed_limit();
    }
};

struct TransitionLayer
{
    std::vector<Path> paths;
    std::vector<std::size_t> start_index; // path j starts at candidate start_index[j] of the earlier set
    std::vector<std::size_t> end_index;   // and ends at candidate end_index[j] of the later set

    std::size_t size() const noexcept { return paths.size(); }
    bool empty() const noexcept { return paths.empty(); }
};

inline double path_travel_time(const RoadNetwork &net, const Path &p)
{
    if (p.links.size() == 1) {
        const Link &l = net.link(p.links.front());
        return std::abs(p.end.offset - p.start.offset) / l.speed_limit;
    }
    double t = 0.0;
    for (std::size_t k = 0; k < p.links.size(); ++k) {
        const Link &l = net.link(p.links[k]);
        double len = l.length;
        if (k == 0)
            len -= p.start.offset;
        else if (k + 1 == p.links.size())
            len = p.end.offset;
        t += len / l.speed_limit;
    }
    return t;
}

inline double path_length(const RoadNetwork &net, const Path &p)
{
    if (p.links.size() == 1)
        return std::abs(p.end.offset - p.start.offset);
    double len = net.link(p.links.front()).length - p.start.offset + p.end.offset;
    for (std::size_t k = 1; k + 1 < p.links.size(); ++k)
        len += net.link(p.links[k]).length;
    return len;
}

/// Minimal expected-travel-time path from a to b, if its travel time fits the budget.
inline std::optional<Path> astar_fastest_path(const RoadNetwork &net, const Location &a, const Location &b,
                                              double budget)
{
    if (!(budget > 0.0))
        throw std::invalid_argument("astar_fastest_path: budget must be positive");
    const Link &la = net.link(a.link);
    const Link &lb = net.link(b.link);
    if (a.link == b.link) {
        if (b.offset < a.offset)
            return std::nullopt;
        Path p{a, b, {a.link}, b.offset - a.offset, false};
        if (path_travel_time(net, p) > budget)
            return std::nullopt;
        return p;
    }
    const GeoPoint target = net.point_at(b);
    const double vmax = net.max_speed_limit();
    auto heuristic = [&](NodeId n) { return 0.99 * distance(net.node(n).position, target) / vmax; };
    const double tail = b.offset / lb.speed_limit;

    struct Entry
    {
        double f;
        double g;
        NodeId node;
        bool operator>(const Entry &o) const { return f != o.f ? f > o.f : node > o.node; }
    };
    std::unordered_map<NodeId, double> best;
    std::unordered_map<NodeId, std::size_t> via; // link index used to reach node
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
    const double g0 = (la.length - a.offset) / la.speed_limit;
    best[la.to] = g0;
    open.push({g0 + heuristic(la.to), g0, la.to});
    std::optional<double> found;
    while (!open.empty()) {
        const Entry e = open.top();
        open.pop();
        if (e.g > best[e.node])
            continue;
        if (e.f > budget)
            break;
        if (e.node == lb.from) {
            found = e.g;
            break;
        }
        for (std::size_t li : net.out_of_node(e.node)) {
            const Link &l = net.links()[li];
            const double g = e.g + l.travel_time();
            const auto it = best.find(l.to);
            if (it != best.end() && it->second <= g)
                continue;
            best[l.to] = g;
            via[l.to] = li;
            open.push({g + heuristic(l.to), g, l.to});
        }
    }
    if (!found || *found + tail > budget)
        return std::nullopt;
    std::vector<LinkId> rev{b.link};
    for (NodeId n = lb.from; n != la.to;) {
        const Link &l = net.links()[via.at(n)];
        rev.push_back(l.id);
        n = l.from;
    }
    rev.push_back(a.link);
    Path p{a, b, {rev.rbegin(), rev.rend()}, 0.0, false};
    p.length = path_length(net, p);
    return p;
}

namespace detail {

struct EndTarget
{
    std::size_t candidate;
    double offset;
};

inline bool path_less(const Path &x, const Path &y)
{
    if (x.length != y.length)
        return x.length < y.length;
    return x.links < y.links;
}

} // namespace detail

/// Every link-simple path between the two candidate sets that fits the travel-time budget.
inline TransitionLayer enumerate_paths(const RoadNetwork &net, const CandidateSet &from, const CandidateSet &to,
                                       const DiscoveryConfig &config)
{
    if (from.candidates.empty() || to.candidates.empty())
        throw std::invalid_argument("enumerate_paths: candidate sets must be non-empty");
    if (config.max_paths_per_pair < 1)
        throw std::invalid_argument("enumerate_paths: max_paths_per_pair must be at least 1");
    const double step_dt = to.timestamp - from.timestamp > 0.0 ? to.timestamp - from.timestamp : config.dt;
    const double budget = config.budget(net, step_dt) + 1e-9;
    const double vmax = net.max_speed_limit();
    const auto &links = net.links();

    std::vector<std::vector<detail::EndTarget>> targets(links.size());
    for (std::size_t j = 0; j < to.candidates.size(); ++j) {
        const Location &loc = to.candidates[j].location;
        targets[net.link_index(loc.link)].push_back({j, loc.offset});
    }
    std::vector<GeoPoint> target_points;
    for (const CandidateState &c : to.candidates)
        target_points.push_back(c.point);
    auto lower_bound_time = [&](std::size_t li) {
        const GeoPoint &p = links[li].geometry.back();
        double d = std::numeric_limits<double>::infinity();
        for (const GeoPoint &q : target_points)
            d = std::min(d, distance(p, q));
        return 0.99 * d / vmax;
    };
    // lower bound on the time from the end of a link to the nearest target
    std::vector<double> bound_cache(links.size(), -1.0);
    auto end_bound = [&](std::size_t li) {
        if (bound_cache[li] < 0.0)
            bound_cache[li] = lower_bound_time(li);
        return bound_cache[li];
    };

    TransitionLayer layer;
    std::vector<std::vector<Path>> buckets(to.candidates.size());
    std::vector<char> visited(links.size(), 0);
    std::vector<LinkId> seq;

    for (std::size_t i = 0; i < from.candidates.size(); ++i) {
        for (auto &b : buckets)
            b.clear();
        const Location s = from.candidates[i].location;
        const std::size_t s_idx = net.link_index(s.link);
        const Link &ls = links[s_idx];

        for (const detail::EndTarget &tg : targets[s_idx]) {
            const double delta = tg.offset - s.offset;
            if (std::abs(delta) / ls.speed_limit > budget)
                continue;
            if (delta >= 0.0)
                buckets[tg.candidate].push_back({s, {s.link, tg.offset}, {s.link}, delta, false});
            else if (config.backward_policy == BackwardPolicy::AllowBackward)
                buckets[tg.candidate].push_back({s, {s.link, tg.offset}, {s.link}, -delta, true});
        }

        // time and length are measured to the end of the last link in seq
        std::function<void(std::size_t, double, double)> dfs = [&](std::size_t cur, double t, double len) {
            for (std::size_t nx : net.out_of_node(links[cur].to)) {
                if (visited[nx])
                    continue;
                const Link &l = links[nx];
                seq.push_back(l.id);
                for (const detail::EndTarget &tg : targets[nx]) {
                    if (t + tg.offset / l.speed_limit <= budget) {
                        Path p{s, {l.id, tg.offset}, seq, len + tg.offset, false};
                        buckets[tg.candidate].push_back(std::move(p));
                    }
                }
                const double t_end = t + l.travel_time();
                if (t_end + end_bound(nx) <= budget) {
                    visited[nx] = 1;
                    dfs(nx, t_end, len + l.length);
                    visited[nx] = 0;
                }
                seq.pop_back();
            }
        };
        const double t0 = (ls.length - s.offset) / ls.speed_limit;
        if (t0 + end_bound(s_idx) <= budget) {
            visited[s_idx] = 1;
            seq.assign(1, s.link);
            dfs(s_idx, t0, ls.length - s.offset);
            visited[s_idx] = 0;
        }

        for (std::size_t j = 0; j < buckets.size(); ++j) {
            auto &b = buckets[j];
            std::sort(b.begin(), b.end(), detail::path_less);
            if (b.size() > config.max_paths_per_pair)
                b.resize(config.max_paths_per_pair);
            for (Path &p : b) {
                layer.paths.push_back(std::move(p));
                layer.start_index.push_back(i);
                layer.end_index.push_back(j);
            }
        }
    }
    return layer;
}

/// Whether some candidate of the last set is reachable from the first set through the layers.
inline bool check_flow(const std::vector<TransitionLayer> &layers, const CandidateSet &first,
                       const CandidateSet &latest)
{
    std::vector<char> reach(first.candidates.size(), 1);
    for (std::size_t t = 0; t < layers.size(); ++t) {
        const TransitionLayer &layer = layers[t];
        std::size_t width = t + 1 == layers.size() ? latest.candidates.size() : 0;
        for (std::size_t e : layer.end_index)
            width = std::max(width, e + 1);
        std::vector<char> next(width, 0);
        for (std::size_t j = 0; j < layer.size(); ++j)
            if (layer.start_index[j] < reach.size() && reach[layer.start_index[j]])
                next[layer.end_index[j]] = 1;
        reach = std::move(next);
    }
    if (layers.empty())
        return !first.candidates.empty() && !latest.candidates.empty();
    for (std::size_t k = 0; k < std::min(reach.size(), latest.candidates.size()); ++k)
        if (reach[k])
            return true;
    return false;
}

} // namespace crfmatch
