#pragma once

#include <crfmatch/crfmatch.hpp>

#include <utility>
#include <vector>

namespace fixture {

using namespace crfmatch;

inline GeoPoint P(double x, double y) { return {x, y, Crs::PlanarMeters}; }

struct LinkSpec
{
    LinkId id;
    NodeId from, to;
    std::vector<GeoPoint> geometry; // empty: straight between the nodes
    double speed = 10.0;
    int lanes = 1;
    int stops = 0;
    int signals = 0;
};

/// Planar network from node coordinates and link specs; link length = polyline length.
inline RoadNetwork build(const std::vector<std::pair<NodeId, GeoPoint>> &nodes, const std::vector<LinkSpec> &specs)
{
    std::vector<Node> ns;
    for (const auto &[id, p] : nodes)
        ns.push_back({id, p});
    auto pos = [&](NodeId id) {
        for (const auto &[nid, p] : nodes)
            if (nid == id)
                return p;
        return P(0, 0);
    };
    std::vector<Link> ls;
    for (const LinkSpec &s : specs) {
        Link l;
        l.id = s.id;
        l.from = s.from;
        l.to = s.to;
        l.geometry = s.geometry.empty() ? std::vector<GeoPoint>{pos(s.from), pos(s.to)} : s.geometry;
        double len = 0.0;
        for (std::size_t k = 0; k + 1 < l.geometry.size(); ++k)
            len += distance(l.geometry[k], l.geometry[k + 1]);
        l.length = len;
        l.speed_limit = s.speed;
        l.lanes = s.lanes;
        l.stop_signs = s.stops;
        l.signals = s.signals;
        ls.push_back(std::move(l));
    }
    return RoadNetwork(Crs::PlanarMeters, std::move(ns), std::move(ls));
}

/// One straight 100 m link along the x axis, id 1.
inline RoadNetwork straight_road(double length = 100.0)
{
    return build({{1, P(0, 0)}, {2, P(length, 0)}}, {{1, 1, 2, {}}});
}

/// Two parallel 100 m links at y = 0 (id 1) and y = 40 (id 2), both eastbound.
inline RoadNetwork parallel_roads()
{
    return build({{1, P(0, 0)}, {2, P(100, 0)}, {3, P(0, 40)}, {4, P(100, 40)}}, {{1, 1, 2, {}}, {2, 3, 4, {}}});
}

/// A fix at a location, as a timed point.
inline TimedPoint fix(double x, double y, double t) { return {P(x, y), t}; }

} // namespace fixture
