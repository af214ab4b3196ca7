#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace crfmatch;
using fixture::P;

namespace {

LinkId find_link(const RoadNetwork &net, NodeId from, NodeId to)
{
    for (const Link &l : net.links())
        if (l.from == from && l.to == to)
            return l.id;
    throw std::logic_error("no such link");
}

CandidateSet at(const RoadNetwork &net, std::vector<Location> locs, double t)
{
    CandidateSet s;
    s.timestamp = t;
    for (const Location &l : locs) {
        CandidateState c;
        c.location = l;
        c.point = net.point_at(l);
        s.candidates.push_back(c);
    }
    s.observation = s.candidates.front().point;
    return s;
}

DiscoveryConfig exact_budget(const RoadNetwork &net, double dt, BackwardPolicy policy)
{
    DiscoveryConfig c;
    c.v_max = net.max_speed_limit();
    c.dt = dt;
    c.backward_policy = policy;
    return c;
}

void expect_valid(const RoadNetwork &net, const Path &p, double budget)
{
    ASSERT_FALSE(p.links.empty());
    EXPECT_EQ(p.start.link, p.links.front());
    EXPECT_EQ(p.end.link, p.links.back());
    for (std::size_t k = 0; k + 1 < p.links.size(); ++k)
        EXPECT_EQ(net.link(p.links[k]).to, net.link(p.links[k + 1]).from);
    double len = 0.0;
    if (p.links.size() == 1) {
        len = std::abs(p.end.offset - p.start.offset);
        if (!p.backward) {
            EXPECT_GE(p.end.offset, p.start.offset);
        }
    } else {
        len = net.link(p.links.front()).length - p.start.offset + p.end.offset;
        for (std::size_t k = 1; k + 1 < p.links.size(); ++k)
            len += net.link(p.links[k]).length;
    }
    EXPECT_NEAR(p.length, len, 1e-9);
    EXPECT_LE(path_travel_time(net, p), budget + 1e-9);
}

} // namespace

TEST(Astar, SameLocationIsZeroLengthPath)
{
    const RoadNetwork net = fixture::straight_road();
    const auto p = astar_fastest_path(net, {1, 30.0}, {1, 30.0}, 10.0);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->links, std::vector<LinkId>{1});
    EXPECT_EQ(p->length, 0.0);
}

TEST(Astar, AdjacentIntersectionsUseTheDirectLink)
{
    const RoadNetwork net = generate_grid({});
    const LinkId in = find_link(net, 4, 5);
    const LinkId direct = find_link(net, 5, 6);
    const auto p = astar_fastest_path(net, {in, net.link(in).length}, {direct, net.link(direct).length}, 100.0);
    ASSERT_TRUE(p.has_value());
    EXPECT_EQ(p->links, (std::vector<LinkId>{in, direct}));
    EXPECT_DOUBLE_EQ(p->length, 200.0);
}

TEST(Astar, RespectsBudget)
{
    const RoadNetwork net = generate_grid({});
    const LinkId a = find_link(net, 0, 1);
    const LinkId b = find_link(net, 2, 3);
    // 200 m remaining on a, 200 m across link 1->2, 100 m into b, all at 10 m/s
    EXPECT_TRUE(astar_fastest_path(net, {a, 0.0}, {b, 100.0}, 50.0).has_value());
    EXPECT_FALSE(astar_fastest_path(net, {a, 0.0}, {b, 100.0}, 49.9).has_value());
}

TEST(Astar, MatchesDijkstraOnRandomQueries)
{
    std::mt19937_64 rng(2024);
    const RoadNetwork net = oracle::random_network(rng, 6, 6, 100.0);
    int reachable = 0;
    for (int q = 0; q < 100; ++q) {
        const Link &la = net.links()[oracle::pick(rng, 0, net.links().size() - 1)];
        const Link &lb = net.links()[oracle::pick(rng, 0, net.links().size() - 1)];
        const Location a{la.id, oracle::uniform(rng, 0.0, la.length)};
        const Location b{lb.id, oracle::uniform(rng, 0.0, lb.length)};
        const double ref = oracle::dijkstra_time(net, a, b);
        const auto p = astar_fastest_path(net, a, b, 1e6);
        if (!std::isfinite(ref)) {
            EXPECT_FALSE(p.has_value());
            continue;
        }
        ASSERT_TRUE(p.has_value());
        EXPECT_NEAR(path_travel_time(net, *p), ref, 1e-9 * std::max(1.0, ref));
        expect_valid(net, *p, 1e6);
        ++reachable;
    }
    EXPECT_GT(reachable, 50);
}

TEST(EnumeratePaths, ForwardWithinLink)
{
    const RoadNetwork net = fixture::straight_road();
    const auto cfg = exact_budget(net, 60.0, BackwardPolicy::GridForwardOnly);
    const TransitionLayer layer = enumerate_paths(net, at(net, {{1, 10.0}}, 0), at(net, {{1, 60.0}}, 60), cfg);
    ASSERT_EQ(layer.size(), 1u);
    EXPECT_DOUBLE_EQ(layer.paths[0].length, 50.0);
    EXPECT_FALSE(layer.paths[0].backward);
}

TEST(EnumeratePaths, SlackStretchesTheBudget)
{
    const RoadNetwork net = fixture::straight_road(1000.0);
    DiscoveryConfig cfg;
    cfg.backward_policy = BackwardPolicy::GridForwardOnly;
    // 1 s at 1.5 x 10 m/s covers 15 m; the fixes are 30 m apart
    EXPECT_DOUBLE_EQ(cfg.budget(net, 1.0), 1.5);
    const CandidateSet a = at(net, {{1, 10.0}}, 0), b = at(net, {{1, 40.0}}, 1);
    EXPECT_EQ(enumerate_paths(net, a, b, cfg).size(), 0u);
    cfg.slack = 14.0;
    EXPECT_DOUBLE_EQ(cfg.budget(net, 1.0), 2.9);
    EXPECT_EQ(enumerate_paths(net, a, b, cfg).size(), 0u);
    cfg.slack = 16.0;
    ASSERT_EQ(enumerate_paths(net, a, b, cfg).size(), 1u);
    EXPECT_DOUBLE_EQ(enumerate_paths(net, a, b, cfg).paths[0].length, 30.0);

    const MatchingSetup setup = MatchingSetup::for_sigma(10.0);
    EXPECT_EQ(setup.discovery.slack, setup.projection.radius);
    EXPECT_EQ(setup.projection.radius, 40.0);
}

TEST(EnumeratePaths, BackwardPolicies)
{
    const RoadNetwork net = fixture::straight_road();
    const CandidateSet from = at(net, {{1, 60.0}}, 0);
    const CandidateSet to = at(net, {{1, 10.0}}, 60);
    EXPECT_TRUE(enumerate_paths(net, from, to, exact_budget(net, 60, BackwardPolicy::GridForwardOnly)).empty());
    const TransitionLayer layer = enumerate_paths(net, from, to, exact_budget(net, 60, BackwardPolicy::AllowBackward));
    ASSERT_EQ(layer.size(), 1u);
    EXPECT_TRUE(layer.paths[0].backward);
    EXPECT_DOUBLE_EQ(layer.paths[0].length, 50.0);
}

TEST(EnumeratePaths, TwoByTwoOppositeCorners)
{
    GridSpec grid;
    grid.rows = 2;
    grid.cols = 2;
    const RoadNetwork net = generate_grid(grid);
    const LinkId in = find_link(net, 1, 0);
    const LinkId out = find_link(net, 3, 2);
    const CandidateSet from = at(net, {{in, 200.0}}, 0);
    const CandidateSet to = at(net, {{out, 0.0}}, 1000);
    auto cfg = exact_budget(net, 1000, BackwardPolicy::GridForwardOnly);
    cfg.max_paths_per_pair = 2;
    const TransitionLayer two = enumerate_paths(net, from, to, cfg);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_DOUBLE_EQ(two.paths[0].length, 400.0);
    EXPECT_DOUBLE_EQ(two.paths[1].length, 400.0);
    EXPECT_EQ(two.paths[0].links, (std::vector<LinkId>{in, find_link(net, 0, 1), find_link(net, 1, 3), out}));
    EXPECT_EQ(two.paths[1].links, (std::vector<LinkId>{in, find_link(net, 0, 2), find_link(net, 2, 3), out}));

    cfg.max_paths_per_pair = 1000;
    const TransitionLayer all = enumerate_paths(net, from, to, cfg);
    const auto ref = oracle::brute_paths(net, {in, 200.0}, {out, 0.0}, 1000.0, 64);
    ASSERT_EQ(all.size(), ref.size());
    std::set<std::vector<LinkId>> got;
    for (const Path &p : all.paths)
        got.insert(p.links);
    EXPECT_EQ(got, std::set<std::vector<LinkId>>(ref.begin(), ref.end()));
}

TEST(EnumeratePaths, MatchesExhaustiveEnumeration)
{
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        std::mt19937_64 rng(seed + 100);
        const RoadNetwork net = oracle::random_network(rng, 4, 4, 80.0);
        for (int q = 0; q < 10; ++q) {
            std::vector<Location> a, b;
            for (int k = 0; k < 3; ++k) {
                const Link &la = net.links()[oracle::pick(rng, 0, net.links().size() - 1)];
                a.push_back({la.id, oracle::uniform(rng, 0.0, la.length)});
                const Link &lb = net.links()[oracle::pick(rng, 0, net.links().size() - 1)];
                b.push_back({lb.id, oracle::uniform(rng, 0.0, lb.length)});
            }
            const double dt = oracle::uniform(rng, 5.0, 40.0);
            auto cfg = exact_budget(net, dt, BackwardPolicy::GridForwardOnly);
            cfg.max_paths_per_pair = 100000;
            const CandidateSet from = at(net, a, 0.0);
            const CandidateSet to = at(net, b, dt);
            const TransitionLayer layer = enumerate_paths(net, from, to, cfg);
            for (std::size_t i = 0; i < a.size(); ++i)
                for (std::size_t j = 0; j < b.size(); ++j) {
                    const auto ref = oracle::brute_paths(net, a[i], b[j], dt, 64);
                    std::multiset<std::vector<LinkId>> got;
                    for (std::size_t p = 0; p < layer.size(); ++p)
                        if (layer.start_index[p] == i && layer.end_index[p] == j)
                            got.insert(layer.paths[p].links);
                    EXPECT_EQ(got, std::multiset<std::vector<LinkId>>(ref.begin(), ref.end()));
                }
            for (std::size_t p = 0; p < layer.size(); ++p) {
                expect_valid(net, layer.paths[p], dt);
                EXPECT_EQ(layer.paths[p].start, a[layer.start_index[p]]);
                EXPECT_EQ(layer.paths[p].end, b[layer.end_index[p]]);
            }
        }
    }
}

TEST(EnumeratePaths, CapKeepsShortestInOrder)
{
    std::mt19937_64 rng(77);
    const RoadNetwork net = oracle::random_network(rng, 5, 5, 60.0);
    const Link &la = net.links()[3];
    const Link &lb = net.links()[40];
    const CandidateSet from = at(net, {{la.id, 0.0}}, 0);
    const CandidateSet to = at(net, {{lb.id, lb.length / 2}}, 60);
    auto cfg = exact_budget(net, 60, BackwardPolicy::GridForwardOnly);
    cfg.max_paths_per_pair = 1000000;
    const TransitionLayer all = enumerate_paths(net, from, to, cfg);
    cfg.max_paths_per_pair = 5;
    const TransitionLayer capped = enumerate_paths(net, from, to, cfg);
    ASSERT_GT(all.size(), 5u);
    ASSERT_EQ(capped.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k)
        EXPECT_EQ(capped.paths[k], all.paths[k]);
    for (std::size_t k = 1; k < all.size(); ++k)
        EXPECT_TRUE(all.paths[k - 1].length < all.paths[k].length ||
                    (all.paths[k - 1].length == all.paths[k].length && all.paths[k - 1].links < all.paths[k].links));
}

TEST(EnumeratePaths, Deterministic)
{
    std::mt19937_64 rng(9);
    const RoadNetwork net = oracle::random_network(rng, 4, 4, 70.0);
    const CandidateSet from = project(net, P(100, 100), 0, ProjectionConfig::for_sigma(15));
    const CandidateSet to = project(net, P(160, 120), 20, ProjectionConfig::for_sigma(15));
    const DiscoveryConfig cfg;
    const TransitionLayer x = enumerate_paths(net, from, to, cfg);
    const TransitionLayer y = enumerate_paths(net, from, to, cfg);
    EXPECT_EQ(x.paths, y.paths);
    EXPECT_EQ(x.start_index, y.start_index);
    EXPECT_EQ(x.end_index, y.end_index);
}

TEST(CheckFlow, Basics)
{
    CandidateSet one;
    one.candidates.resize(1);
    TransitionLayer layer;
    layer.paths.resize(1);
    layer.start_index = {0};
    layer.end_index = {0};
    EXPECT_TRUE(check_flow({layer}, one, one));
    EXPECT_FALSE(check_flow({layer, TransitionLayer{}, layer}, one, one));
}

TEST(CheckFlow, MatchesTransitiveClosure)
{
    std::mt19937_64 rng(31);
    for (int k = 0; k < 500; ++k) {
        const std::size_t T = oracle::pick(rng, 2, 6);
        std::vector<std::size_t> sizes;
        for (std::size_t t = 0; t < T; ++t)
            sizes.push_back(oracle::pick(rng, 1, 3));
        std::vector<TransitionLayer> layers;
        for (std::size_t t = 0; t + 1 < T; ++t) {
            TransitionLayer l;
            const std::size_t n = oracle::pick(rng, 0, 3);
            for (std::size_t j = 0; j < n; ++j) {
                l.paths.emplace_back();
                l.start_index.push_back(oracle::pick(rng, 0, sizes[t] - 1));
                l.end_index.push_back(oracle::pick(rng, 0, sizes[t + 1] - 1));
            }
            layers.push_back(l);
        }
        CandidateSet first, last;
        first.candidates.resize(sizes.front());
        last.candidates.resize(sizes.back());
        EXPECT_EQ(check_flow(layers, first, last), oracle::closure_reachable(layers, sizes.front(), sizes.back()));
    }
}
