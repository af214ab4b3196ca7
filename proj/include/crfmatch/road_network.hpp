#pragma once

#include "geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace crfmatch {

using NodeId = std::int64_t;
using LinkId = std::int64_t;

struct Node
{
    NodeId id = 0;
    GeoPoint position;
};

struct Link
{
    LinkId id = 0;
    NodeId from = 0;
    NodeId to = 0;
    double length = 0.0;
    double speed_limit = 0.0;
    int lanes = 1;
    int stop_signs = 0;
    int signals = 0;
    std::vector<GeoPoint> geometry;
    // offset (declared-length scale) of every geometry vertex; front 0, back == length
    std::vector<double> cumulative;

    double travel_time() const noexcept { return length / speed_limit; }
};

struct Location
{
    LinkId link = 0;
    double offset = 0.0;

    friend bool operator==(const Location &, const Location &) = default;
};

struct RadiusHit
{
    LinkId link = 0;
    double offset = 0.0;
    double distance = 0.0;
};

class NetworkError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

class RoadNetwork;

namespace detail {

/// Closest point of a link polyline to g. Ties resolve to the smaller offset.
inline RadiusHit closest_on_link(const Link &link, const GeoPoint &g)
{
    RadiusHit best{link.id, 0.0, std::numeric_limits<double>::infinity()};
    for (std::size_t s = 0; s + 1 < link.geometry.size(); ++s) {
        const SegmentProjection proj = project_on_segment(g, link.geometry[s], link.geometry[s + 1]);
        const double d = distance(g, proj.foot);
        if (d < best.distance) {
            best.distance = d;
            best.offset = std::clamp(link.cumulative[s] + proj.fraction * (link.cumulative[s + 1] - link.cumulative[s]),
                                     0.0, link.length);
        }
    }
    return best;
}

} // namespace detail

/// Uniform cell grid over link bounding boxes, in a network-wide tangent plane.
class SpatialGrid
{
  public:
    SpatialGrid() = default;

    SpatialGrid(const std::vector<Link> &links, const GeoPoint &anchor, double cell_size)
        : frame_(anchor), cell_(cell_size)
    {
        if (links.empty())
            return;
        std::vector<std::array<double, 4>> boxes;
        boxes.reserve(links.size());
        min_x_ = min_y_ = std::numeric_limits<double>::infinity();
        double max_x = -min_x_, max_y = -min_y_;
        for (const Link &l : links) {
            std::array<double, 4> box{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                                      -std::numeric_limits<double>::infinity(),
                                      -std::numeric_limits<double>::infinity()};
            for (const GeoPoint &p : l.geometry) {
                const Vec2 v = frame_.to_local(p);
                box[0] = std::min(box[0], v.east);
                box[1] = std::min(box[1], v.north);
                box[2] = std::max(box[2], v.east);
                box[3] = std::max(box[3], v.north);
            }
            min_x_ = std::min(min_x_, box[0]);
            min_y_ = std::min(min_y_, box[1]);
            max_x = std::max(max_x, box[2]);
            max_y = std::max(max_y, box[3]);
            boxes.push_back(box);
        }
        nx_ = static_cast<long>(std::floor((max_x - min_x_) / cell_)) + 1;
        ny_ = static_cast<long>(std::floor((max_y - min_y_) / cell_)) + 1;
        cells_.assign(static_cast<std::size_t>(nx_ * ny_), {});
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const auto [x0, y0] = cell_of(boxes[i][0], boxes[i][1]);
            const auto [x1, y1] = cell_of(boxes[i][2], boxes[i][3]);
            for (long cy = y0; cy <= y1; ++cy)
                for (long cx = x0; cx <= x1; ++cx)
                    cells_[static_cast<std::size_t>(cy * nx_ + cx)].push_back(i);
        }
    }

    /// Indices of links whose box intersects the square of half-width r around g, ascending.
    std::vector<std::size_t> candidates(const GeoPoint &g, double r) const
    {
        std::vector<std::size_t> out;
        if (cells_.empty())
            return out;
        // the tangent-plane approximation is padded so the result stays a superset
        const double pad = r * 1.02 + 1.0;
        const Vec2 v = frame_.to_local(g);
        const auto [x0, y0] = cell_of(v.east - pad, v.north - pad);
        const auto [x1, y1] = cell_of(v.east + pad, v.north + pad);
        for (long cy = y0; cy <= y1; ++cy)
            for (long cx = x0; cx <= x1; ++cx) {
                const auto &cell = cells_[static_cast<std::size_t>(cy * nx_ + cx)];
                out.insert(out.end(), cell.begin(), cell.end());
            }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    double cell_size() const noexcept { return cell_; }

  private:
    std::pair<long, long> cell_of(double x, double y) const noexcept
    {
        auto clampi = [](double v, long n) {
            if (!(v > 0.0))
                return 0L;
            return std::min(n - 1, static_cast<long>(v));
        };
        return {clampi((x - min_x_) / cell_, nx_), clampi((y - min_y_) / cell_, ny_)};
    }

    LocalFrame frame_{GeoPoint{}};
    double cell_ = 50.0;
    double min_x_ = 0.0;
    double min_y_ = 0.0;
    long nx_ = 0;
    long ny_ = 0;
    std::vector<std::vector<std::size_t>> cells_;
};

/// Directed road graph. Links are kept sorted by id, so link indices order like ids.
class RoadNetwork
{
  public:
    RoadNetwork() = default;

    RoadNetwork(Crs crs, std::vector<Node> nodes, std::vector<Link> links) : crs_(crs), nodes_(std::move(nodes))
    {
        std::sort(nodes_.begin(), nodes_.end(), [](const Node &a, const Node &b) { return a.id < b.id; });
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].position.crs != crs_)
                throw NetworkError("node " + std::to_string(nodes_[i].id) + ": coordinate system mismatch");
            if (!node_index_.emplace(nodes_[i].id, i).second)
                throw NetworkError("duplicate node id " + std::to_string(nodes_[i].id));
        }
        std::sort(links.begin(), links.end(), [](const Link &a, const Link &b) { return a.id < b.id; });
        links_ = std::move(links);
        outgoing_.assign(nodes_.size(), {});
        incoming_.assign(nodes_.size(), {});
        for (std::size_t i = 0; i < links_.size(); ++i) {
            Link &l = links_[i];
            const std::string where = "link " + std::to_string(l.id);
            if (!link_index_.emplace(l.id, i).second)
                throw NetworkError("duplicate link id " + std::to_string(l.id));
            const auto from = node_index_.find(l.from);
            const auto to = node_index_.find(l.to);
            if (from == node_index_.end())
                throw NetworkError(where + ": unknown from node " + std::to_string(l.from));
            if (to == node_index_.end())
                throw NetworkError(where + ": unknown to node " + std::to_string(l.to));
            if (!(l.length > 0.0) || !std::isfinite(l.length))
                throw NetworkError(where + ": length must be positive");
            if (!(l.speed_limit > 0.0) || !std::isfinite(l.speed_limit))
                throw NetworkError(where + ": speed_limit must be positive");
            if (l.lanes < 1)
                throw NetworkError(where + ": lanes must be at least 1");
            if (l.stop_signs < 0 || l.signals < 0)
                throw NetworkError(where + ": negative stop_signs or signals");
            if (l.geometry.empty())
                l.geometry = {nodes_[from->second].position, nodes_[to->second].position};
            if (l.geometry.size() < 2)
                throw NetworkError(where + ": geometry needs at least 2 vertices");
            for (const GeoPoint &p : l.geometry) {
                if (p.crs != crs_)
                    throw NetworkError(where + ": coordinate system mismatch");
                if (crs_ == Crs::WGS84 && (std::abs(p.y) > 90.0 || std::abs(p.x) > 180.0))
                    throw NetworkError(where + ": coordinates out of WGS84 range");
            }
            normalize_arc(l, where);
            outgoing_[from->second].push_back(i);
            incoming_[to->second].push_back(i);
            max_speed_ = std::max(max_speed_, l.speed_limit);
        }
        build_index();
    }

    Crs crs() const noexcept { return crs_; }
    const std::vector<Node> &nodes() const noexcept { return nodes_; }
    const std::vector<Link> &links() const noexcept { return links_; }
    double max_speed_limit() const noexcept { return max_speed_; }
    const SpatialGrid &index() const noexcept { return grid_; }

    bool has_link(LinkId id) const { return link_index_.contains(id); }

    std::size_t link_index(LinkId id) const
    {
        const auto it = link_index_.find(id);
        if (it == link_index_.end())
            throw NetworkError("unknown link id " + std::to_string(id));
        return it->second;
    }

    const Link &link(LinkId id) const { return links_[link_index(id)]; }

    const Node &node(NodeId id) const
    {
        const auto it = node_index_.find(id);
        if (it == node_index_.end())
            throw NetworkError("unknown node id " + std::to_string(id));
        return nodes_[it->second];
    }

    /// Link indices leaving / entering a node, ascending.
    const std::vector<std::size_t> &out_of_node(NodeId id) const { return outgoing_[node_index_.at(id)]; }
    const std::vector<std::size_t> &into_node(NodeId id) const { return incoming_[node_index_.at(id)]; }

    /// Links l' with from(l') == to(l).
    const std::vector<std::size_t> &outgoing(LinkId id) const { return out_of_node(link(id).to); }
    const std::vector<std::size_t> &incoming(LinkId id) const { return into_node(link(id).from); }

    /// Exact radius query: every link whose polyline comes within r of g, ascending id.
    std::vector<RadiusHit> links_within_radius(const GeoPoint &g, double r) const
    {
        if (!(r > 0.0))
            throw std::invalid_argument("links_within_radius: radius must be positive");
        std::vector<RadiusHit> hits;
        for (std::size_t i : grid_.candidates(g, r)) {
            const RadiusHit h = detail::closest_on_link(links_[i], g);
            if (h.distance <= r)
                hits.push_back(h);
        }
        return hits;
    }

    GeoPoint point_at(const Location &loc) const
    {
        const Link &l = link(loc.link);
        if (!(loc.offset >= 0.0 && loc.offset <= l.length))
            throw std::out_of_range("point_at: offset " + std::to_string(loc.offset) + " outside link " +
                                    std::to_string(l.id));
        if (loc.offset == 0.0)
            return l.geometry.front();
        if (loc.offset == l.length)
            return l.geometry.back();
        const auto it = std::upper_bound(l.cumulative.begin(), l.cumulative.end(), loc.offset);
        const std::size_t s = static_cast<std::size_t>(it - l.cumulative.begin()) - 1;
        const double span = l.cumulative[s + 1] - l.cumulative[s];
        const double t = span > 0.0 ? (loc.offset - l.cumulative[s]) / span : 0.0;
        const GeoPoint &a = l.geometry[s];
        const GeoPoint &b = l.geometry[s + 1];
        return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), crs_};
    }

    /// Heading (degrees ccw from east) at the start or end of a link.
    double start_heading(const Link &l) const { return heading_deg(l.geometry[0], l.geometry[1]); }
    double end_heading(const Link &l) const
    {
        const auto n = l.geometry.size();
        return heading_deg(l.geometry[n - 2], l.geometry[n - 1]);
    }

  private:
    void normalize_arc(Link &l, const std::string &where) const
    {
        std::vector<double> cum{0.0};
        for (std::size_t s = 0; s + 1 < l.geometry.size(); ++s)
            cum.push_back(cum.back() + distance(l.geometry[s], l.geometry[s + 1]));
        const double arc = cum.back();
        if (!(arc > 0.0))
            throw NetworkError(where + ": degenerate geometry");
        if (std::abs(arc - l.length) > 0.01 * l.length)
            throw NetworkError(where + ": geometry length " + std::to_string(arc) + " differs from declared " +
                               std::to_string(l.length) + " by more than 1%");
        const double scale = l.length / arc;
        for (double &c : cum)
            c *= scale;
        cum.back() = l.length;
        l.cumulative = std::move(cum);
    }

    void build_index()
    {
        if (links_.empty())
            return;
        std::vector<double> lengths;
        lengths.reserve(links_.size());
        for (const Link &l : links_)
            lengths.push_back(l.length);
        std::nth_element(lengths.begin(), lengths.begin() + lengths.size() / 2, lengths.end());
        const double median = lengths[lengths.size() / 2];
        GeoPoint anchor = links_.front().geometry.front();
        grid_ = SpatialGrid(links_, anchor, std::max(50.0, median));
    }

    Crs crs_ = Crs::PlanarMeters;
    std::vector<Node> nodes_;
    std::vector<Link> links_;
    std::unordered_map<NodeId, std::size_t> node_index_;
    std::unordered_map<LinkId, std::size_t> link_index_;
    std::vector<std::vector<std::size_t>> outgoing_;
    std::vector<std::vector<std::size_t>> incoming_;
    double max_speed_ = 0.0;
    SpatialGrid grid_;
};

namespace detail {

inline Crs parse_crs(const std::string &s)
{
    if (s == "WGS84")
        return Crs::WGS84;
    if (s == "PlanarMeters")
        return Crs::PlanarMeters;
    throw NetworkError("crs: unknown coordinate system '" + s + "'");
}

template <typename T>
T field(const nlohmann::json &obj, const char *key, const std::string &where)
{
    const auto it = obj.find(key);
    if (it == obj.end())
        throw NetworkError(where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw NetworkError(where + "." + key + ": " + e.what());
    }
}

template <typename T>
T field_or(const nlohmann::json &obj, const char *key, T fallback, const std::string &where)
{
    return obj.contains(key) ? field<T>(obj, key, where) : fallback;
}

} // namespace detail

inline RoadNetwork network_from_json(const nlohmann::json &doc)
{
    if (!doc.is_object())
        throw NetworkError("network document must be a JSON object");
    const Crs crs = detail::parse_crs(detail::field<std::string>(doc, "crs", "network"));
    std::vector<Node> nodes;
    const auto &jn = doc.at("nodes");
    for (std::size_t i = 0; i < jn.size(); ++i) {
        const std::string where = "nodes[" + std::to_string(i) + "]";
        nodes.push_back({detail::field<NodeId>(jn[i], "id", where),
                         {detail::field<double>(jn[i], "x", where), detail::field<double>(jn[i], "y", where), crs}});
    }
    std::vector<Link> links;
    const auto &jl = doc.at("links");
    for (std::size_t i = 0; i < jl.size(); ++i) {
        const std::string where = "links[" + std::to_string(i) + "]";
        const auto &o = jl[i];
        Link l;
        l.id = detail::field<LinkId>(o, "id", where);
        l.from = detail::field<NodeId>(o, "from", where);
        l.to = detail::field<NodeId>(o, "to", where);
        l.length = detail::field<double>(o, "length", where);
        l.speed_limit = detail::field<double>(o, "speed_limit", where);
        l.lanes = detail::field_or<int>(o, "lanes", 1, where);
        l.stop_signs = detail::field_or<int>(o, "stop_signs", 0, where);
        l.signals = detail::field_or<int>(o, "signals", 0, where);
        if (o.contains("geometry")) {
            for (const auto &v : o.at("geometry")) {
                if (!v.is_array() || v.size() != 2)
                    throw NetworkError(where + ".geometry: vertices must be [x, y] pairs");
                l.geometry.push_back({v[0].get<double>(), v[1].get<double>(), crs});
            }
        }
        links.push_back(std::move(l));
    }
    return RoadNetwork(crs, std::move(nodes), std::move(links));
}

inline RoadNetwork load_network(std::istream &in)
{
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw NetworkError(std::string("network parse error: ") + e.what());
    }
    try {
        return network_from_json(doc);
    } catch (const nlohmann::json::exception &e) {
        throw NetworkError(std::string("network document: ") + e.what());
    }
}

inline nlohmann::json network_to_json(const RoadNetwork &net)
{
    nlohmann::json doc;
    doc["crs"] = std::string(to_string(net.crs()));
    auto &nodes = doc["nodes"] = nlohmann::json::array();
    for (const Node &n : net.nodes())
        nodes.push_back({{"id", n.id}, {"x", n.position.x}, {"y", n.position.y}});
    auto &links = doc["links"] = nlohmann::json::array();
    for (const Link &l : net.links()) {
        nlohmann::json geom = nlohmann::json::array();
        for (const GeoPoint &p : l.geometry)
            geom.push_back({p.x, p.y});
        links.push_back({{"id", l.id},
                         {"from", l.from},
                         {"to", l.to},
                         {"length", l.length},
                         {"speed_limit", l.speed_limit},
                         {"lanes", l.lanes},
                         {"stop_signs", l.stop_signs},
                         {"signals", l.signals},
                         {"geometry", std::move(geom)}});
    }
    return doc;
}

inline void write_network(std::ostream &out, const RoadNetwork &net) { out << network_to_json(net).dump(1) << '\n'; }

} // namespace crfmatch
