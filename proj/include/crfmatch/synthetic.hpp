#pragma once

#include "crf.hpp"
#include "features.hpp"
#include "path_discovery.hpp"
#include "road_network.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace crfmatch {

/// High-rate ground truth: true location at every tick and the path driven between consecutive ticks.
struct GroundTruth
{
    std::vector<double> times;
    std::vector<Location> states;
    std::vector<GeoPoint> points;
    std::vector<Path> paths; // paths[k] leads from states[k] to states[k + 1]

    std::size_t size() const noexcept { return states.size(); }
};

struct GridSpec
{
    int rows = 4;
    int cols = 4;
    double block_length = 200.0;
    double speed_limit = 10.0;
    double stop_sign_fraction = 0.0;
    double signal_fraction = 0.0;
    int lanes = 1;
    std::uint64_t seed = 1;
};

/// rows x cols intersections on a planar lattice; node r*cols + c sits at (c, r) * block_length and every
/// street is two-way.
inline RoadNetwork generate_grid(const GridSpec &grid)
{
    if (grid.rows < 2 || grid.cols < 2)
        throw std::invalid_argument("generate_grid: rows and cols must be at least 2");
    if (!(grid.block_length > 0.0) || !(grid.speed_limit > 0.0) || grid.lanes < 1)
        throw std::invalid_argument("generate_grid: invalid block length, speed limit or lanes");
    std::mt19937_64 rng(grid.seed);
    std::bernoulli_distribution stop(grid.stop_sign_fraction);
    std::bernoulli_distribution signal(grid.signal_fraction);
    std::vector<Node> nodes;
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c)
            nodes.push_back({static_cast<NodeId>(r * grid.cols + c),
                             {c * grid.block_length, r * grid.block_length, Crs::PlanarMeters}});
    std::vector<Link> links;
    auto add = [&](NodeId a, NodeId b) {
        Link l;
        l.id = static_cast<LinkId>(links.size());
        l.from = a;
        l.to = b;
        l.length = grid.block_length;
        l.speed_limit = grid.speed_limit;
        l.lanes = grid.lanes;
        l.stop_signs = stop(rng) ? 1 : 0;
        l.signals = signal(rng) ? 1 : 0;
        l.geometry = {nodes[static_cast<std::size_t>(a)].position, nodes[static_cast<std::size_t>(b)].position};
        links.push_back(std::move(l));
    };
    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const NodeId n = r * grid.cols + c;
            if (c + 1 < grid.cols) {
                add(n, n + 1);
                add(n + 1, n);
            }
            if (r + 1 < grid.rows) {
                add(n, n + grid.cols);
                add(n + grid.cols, n);
            }
        }
    return RoadNetwork(Crs::PlanarMeters, std::move(nodes), std::move(links));
}

struct SimSpec
{
    ModelParams driver;
    double base_period = 1.0;
    double duration = 600.0;
    std::uint64_t seed = 1;
    // > 0 switches from per-intersection choices at the speed limit to choosing a whole path every
    // decision_period seconds, drawn from the driver model over all link-simple paths reachable within
    // 1.5 x decision_period at speed limits, driven at constant speed
    double decision_period = 0.0;
};

namespace detail {

struct AlongPath
{
    std::size_t index; // position in path.links
    Location location;
};

/// Position at arc distance s along a path (s measured from path.start).
inline AlongPath locate_along(const RoadNetwork &net, const Path &p, double s)
{
    double remaining = s;
    for (std::size_t k = 0; k < p.links.size(); ++k) {
        const Link &l = net.link(p.links[k]);
        const double lo = k == 0 ? p.start.offset : 0.0;
        const double hi = k + 1 == p.links.size() ? p.end.offset : l.length;
        if (remaining <= hi - lo || k + 1 == p.links.size())
            return {k, {l.id, std::clamp(lo + remaining, lo, hi)}};
        remaining -= hi - lo;
    }
    return {p.links.size() - 1, p.end};
}

/// The part of path p between arc distances s0 <= s1.
inline Path sub_path(const RoadNetwork &net, const Path &p, double s0, double s1)
{
    const AlongPath a = locate_along(net, p, s0);
    const AlongPath b = locate_along(net, p, s1);
    Path out{a.location, b.location, {}, 0.0, false};
    out.links.assign(p.links.begin() + static_cast<long>(a.index), p.links.begin() + static_cast<long>(b.index) + 1);
    out.length = path_length(net, out);
    return out;
}

inline bool is_reverse(const Link &a, const Link &b) { return a.from == b.to && a.to == b.from; }

inline Path continuation(const Link &cur, const Link &next)
{
    return {{cur.id, cur.length}, {next.id, next.length}, {cur.id, next.id}, next.length, false};
}

/// log of the integral of exp(a + b e) over e in [lo, hi].
inline double log_integral_exp(double a, double b, double lo, double hi)
{
    const double w = hi - lo;
    if (!(w > 0.0))
        return -std::numeric_limits<double>::infinity();
    const double bw = b * w;
    if (std::abs(bw) < 1e-12)
        return a + b * lo + std::log(w);
    // log((exp(b w) - 1) / b), written to stay finite for large |b w|
    if (bw > 0.0)
        return a + b * hi + std::log(-std::expm1(-bw) / b);
    return a + b * lo + std::log(std::expm1(bw) / b);
}

/// Draws e from density proportional to exp(b e) on [lo, hi].
inline double sample_truncated_exp(double b, double lo, double hi, double u)
{
    const double w = hi - lo;
    const double bw = b * w;
    if (std::abs(bw) < 1e-12)
        return lo + u * w;
    if (bw > 0.0)
        return std::clamp(hi + std::log1p((1.0 - u) * std::expm1(-bw)) / b, lo, hi);
    return std::clamp(lo + std::log1p(u * std::expm1(bw)) / b, lo, hi);
}

struct PathChoice
{
    std::vector<LinkId> links;
    double lo = 0.0;
    double hi = 0.0;
    double a = 0.0;
    double b = 0.0;
    double log_w = 0.0;
};

inline Path choice_path(const RoadNetwork &net, const Location &from, const PathChoice &c, double e)
{
    Path p{from, {c.links.back(), e}, c.links, 0.0, false};
    p.length = path_length(net, p);
    return p;
}

/// Every link-simple continuation from `from` within `budget` seconds at speed limits, with the driver
/// log-weight as an affine function of the end offset.
inline std::vector<PathChoice> path_choices(const RoadNetwork &net, const Location &from, double budget,
                                            const ModelParams &driver)
{
    const FeatureExtractor fx = driver.extractor();
    std::vector<PathChoice> out;
    auto finish = [&](std::vector<LinkId> links, double lo, double hi) {
        if (!(hi > lo))
            return;
        PathChoice c;
        c.links = std::move(links);
        c.lo = lo;
        c.hi = hi;
        const double w_lo = path_log_weight(driver, extract(fx, choice_path(net, from, c, lo), net));
        const double w_hi = path_log_weight(driver, extract(fx, choice_path(net, from, c, hi), net));
        c.b = (w_hi - w_lo) / (hi - lo);
        c.a = w_lo - c.b * lo;
        c.log_w = log_integral_exp(c.a, c.b, lo, hi);
        out.push_back(std::move(c));
    };
    const auto &links = net.links();
    const std::size_t s_idx = net.link_index(from.link);
    const Link &ls = links[s_idx];
    finish({ls.id}, from.offset, std::min(ls.length, from.offset + budget * ls.speed_limit));
    std::vector<char> visited(links.size(), 0);
    std::vector<LinkId> seq{ls.id};
    visited[s_idx] = 1;
    std::function<void(std::size_t, double)> dfs = [&](std::size_t cur, double t) {
        for (std::size_t nx : net.out_of_node(links[cur].to)) {
            if (visited[nx])
                continue;
            const Link &l = links[nx];
            seq.push_back(l.id);
            finish(seq, 0.0, std::min(l.length, (budget - t) * l.speed_limit));
            if (t + l.travel_time() < budget) {
                visited[nx] = 1;
                dfs(nx, t + l.travel_time());
                visited[nx] = 0;
            }
            seq.pop_back();
        }
    };
    const double t0 = (ls.length - from.offset) / ls.speed_limit;
    if (t0 < budget)
        dfs(s_idx, t0);
    return out;
}

} // namespace detail

inline GroundTruth simulate_trajectory(const RoadNetwork &net, const SimSpec &sim)
{
    if (!(sim.base_period > 0.0) || !(sim.duration >= 0.0))
        throw std::invalid_argument("simulate_trajectory: invalid base period or duration");
    if (net.links().empty())
        throw std::invalid_argument("simulate_trajectory: empty network");
    if (sim.driver.mu.size() != sim.driver.extractor().dimension())
        throw std::invalid_argument("simulate_trajectory: driver weights do not match the feature set");
    std::mt19937_64 rng(sim.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto &links = net.links();
    const auto n_ticks = static_cast<std::size_t>(std::floor(sim.duration / sim.base_period + 1e-9)) + 1;

    const Link &first = links[std::uniform_int_distribution<std::size_t>(0, links.size() - 1)(rng)];
    Location here{first.id, unif(rng) * first.length};

    GroundTruth gt;
    auto record = [&](std::size_t k, const Location &loc) {
        gt.times.push_back(static_cast<double>(k) * sim.base_period);
        gt.states.push_back(loc);
        gt.points.push_back(net.point_at(loc));
    };
    record(0, here);

    if (sim.decision_period > 0.0) {
        const auto ticks_per_epoch = static_cast<std::size_t>(std::llround(sim.decision_period / sim.base_period));
        if (ticks_per_epoch == 0 ||
            std::abs(static_cast<double>(ticks_per_epoch) * sim.base_period - sim.decision_period) > 1e-9)
            throw std::invalid_argument("simulate_trajectory: decision period must be a multiple of the base period");
        std::size_t k = 1;
        while (k < n_ticks) {
            const auto choices = detail::path_choices(net, here, 1.5 * sim.decision_period, sim.driver);
            if (choices.empty())
                throw std::runtime_error("simulate_trajectory: vehicle trapped");
            std::vector<double> lw;
            for (const auto &c : choices)
                lw.push_back(c.log_w);
            const double z = log_sum_exp(lw);
            double u = unif(rng);
            std::size_t pick = 0;
            for (; pick + 1 < choices.size(); ++pick) {
                u -= std::exp(lw[pick] - z);
                if (u < 0.0)
                    break;
            }
            const auto &c = choices[pick];
            const double e = detail::sample_truncated_exp(c.b, c.lo, c.hi, unif(rng));
            const Path whole = detail::choice_path(net, here, c, e);
            const double speed = whole.length / sim.decision_period;
            double prev_s = 0.0;
            for (std::size_t m = 1; m <= ticks_per_epoch && k < n_ticks; ++m, ++k) {
                const double s = m == ticks_per_epoch ? whole.length : speed * static_cast<double>(m) * sim.base_period;
                gt.paths.push_back(detail::sub_path(net, whole, prev_s, s));
                record(k, gt.paths.back().end);
                prev_s = s;
            }
            here = gt.states.back();
        }
        return gt;
    }

    // per-intersection choices, always at the speed limit
    const FeatureExtractor fx = sim.driver.extractor();
    for (std::size_t k = 1; k < n_ticks; ++k) {
        Path seg{here, here, {here.link}, 0.0, false};
        double remaining = sim.base_period;
        while (remaining > 0.0) {
            const Link &cur = net.link(here.link);
            const double to_end = (cur.length - here.offset) / cur.speed_limit;
            if (remaining < to_end) {
                here.offset += remaining * cur.speed_limit;
                remaining = 0.0;
                break;
            }
            remaining -= to_end;
            here.offset = cur.length;
            if (remaining <= 0.0)
                break;
            std::vector<std::size_t> options;
            for (std::size_t li : net.out_of_node(cur.to))
                if (!detail::is_reverse(cur, links[li]))
                    options.push_back(li);
            if (options.empty())
                options = net.out_of_node(cur.to);
            if (options.empty())
                throw std::runtime_error("simulate_trajectory: vehicle trapped at a dead end");
            std::vector<double> lw;
            for (std::size_t li : options)
                lw.push_back(path_log_weight(sim.driver, extract(fx, detail::continuation(cur, links[li]), net)));
            const double z = log_sum_exp(lw);
            double u = unif(rng);
            std::size_t pick = 0;
            for (; pick + 1 < options.size(); ++pick) {
                u -= std::exp(lw[pick] - z);
                if (u < 0.0)
                    break;
            }
            here = {links[options[pick]].id, 0.0};
            seg.links.push_back(here.link);
        }
        seg.end = here;
        seg.length = path_length(net, seg);
        gt.paths.push_back(std::move(seg));
        record(k, here);
    }
    return gt;
}

/// Independent Gaussian noise with standard deviation sigma on each planar axis.
inline std::vector<TimedPoint> add_gps_noise(const GroundTruth &truth, double sigma, std::uint64_t seed)
{
    if (sigma < 0.0)
        throw std::invalid_argument("add_gps_noise: sigma must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<TimedPoint> out;
    out.reserve(truth.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const GeoPoint &p = truth.points[k];
        const double dx = sigma * n01(rng);
        const double dy = sigma * n01(rng);
        if (sigma == 0.0) {
            out.push_back({p, truth.times[k]});
            continue;
        }
        const LocalFrame frame(p);
        out.push_back({frame.from_local({dx, dy}), truth.times[k]});
    }
    return out;
}

} // namespace crfmatch
