#pragma once

#include "crf.hpp"
#include "evaluation.hpp"
#include "path_discovery.hpp"
#include "synthetic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace crfmatch {

class DataError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string &s, const std::string &where)
{
    double v = 0.0;
    const char *b = s.data();
    const char *e = s.data() + s.size();
    while (b < e && *b == ' ')
        ++b;
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e)
        throw DataError(where + ": '" + s + "' is not a number");
    return v;
}

struct ProbeRecord
{
    std::string vehicle_id;
    double timestamp = 0.0;
    double x = 0.0;
    double y = 0.0;
};

/// Per-vehicle observation streams, vehicles ordered by id, fixes by timestamp.
using ProbeStreams = std::map<std::string, std::vector<TimedPoint>>;

inline void write_probes(std::ostream &out, const std::vector<ProbeRecord> &records)
{
    out << "vehicle_id,timestamp,x,y\n";
    for (const ProbeRecord &r : records)
        out << r.vehicle_id << ',' << format_double(r.timestamp) << ',' << format_double(r.x) << ','
            << format_double(r.y) << '\n';
}

inline ProbeStreams read_probes(std::istream &in, Crs crs)
{
    std::string line;
    if (!std::getline(in, line))
        throw DataError("probes: empty input");
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    if (line != "vehicle_id,timestamp,x,y")
        throw DataError("probes line 1: expected header 'vehicle_id,timestamp,x,y'");
    ProbeStreams streams;
    for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');)
            f.push_back(cell);
        const std::string where = "probes line " + std::to_string(lineno);
        if (f.size() != 4)
            throw DataError(where + ": expected 4 fields");
        if (f[0].empty())
            throw DataError(where + ": empty vehicle_id");
        streams[f[0]].push_back(
            {{parse_double(f[2], where + " x"), parse_double(f[3], where + " y"), crs}, parse_double(f[1], where)});
    }
    for (auto &[id, obs] : streams)
        std::stable_sort(obs.begin(), obs.end(), [](const TimedPoint &a, const TimedPoint &b) { return a.t < b.t; });
    return streams;
}

inline nlohmann::json to_json(const Location &l) { return {{"link", l.link}, {"offset", l.offset}}; }

inline Location location_from_json(const nlohmann::json &j)
{
    return {j.at("link").get<LinkId>(), j.at("offset").get<double>()};
}

inline nlohmann::json to_json(const Path &p)
{
    nlohmann::json j{{"start", to_json(p.start)}, {"end", to_json(p.end)}, {"links", p.links}, {"length", p.length}};
    if (p.backward)
        j["backward"] = true;
    return j;
}

inline Path path_from_json(const nlohmann::json &j)
{
    Path p;
    p.start = location_from_json(j.at("start"));
    p.end = location_from_json(j.at("end"));
    p.links = j.at("links").get<std::vector<LinkId>>();
    p.length = j.at("length").get<double>();
    p.backward = j.value("backward", false);
    return p;
}

/// Ground truth per vehicle: {"vehicles": [{"vehicle_id", "times", "states", "paths"}]}.
inline nlohmann::json truth_to_json(const std::map<std::string, GroundTruth> &truths)
{
    nlohmann::json vehicles = nlohmann::json::array();
    for (const auto &[id, gt] : truths) {
        nlohmann::json states = nlohmann::json::array(), paths = nlohmann::json::array();
        for (const Location &l : gt.states)
            states.push_back(to_json(l));
        for (const Path &p : gt.paths)
            paths.push_back(to_json(p));
        vehicles.push_back({{"vehicle_id", id}, {"times", gt.times}, {"states", states}, {"paths", paths}});
    }
    return {{"vehicles", vehicles}};
}

inline std::map<std::string, GroundTruth> truth_from_json(const nlohmann::json &doc, const RoadNetwork &net)
{
    std::map<std::string, GroundTruth> out;
    try {
        for (const auto &v : doc.at("vehicles")) {
            GroundTruth gt;
            const std::string id = v.at("vehicle_id").get<std::string>();
            gt.times = v.at("times").get<std::vector<double>>();
            for (const auto &s : v.at("states")) {
                gt.states.push_back(location_from_json(s));
                gt.points.push_back(net.point_at(gt.states.back()));
            }
            for (const auto &p : v.at("paths"))
                gt.paths.push_back(path_from_json(p));
            if (gt.times.size() != gt.states.size() || (!gt.states.empty() && gt.paths.size() + 1 != gt.states.size()))
                throw DataError("truth vehicle " + id + ": inconsistent lengths of times, states and paths");
            out.emplace(id, std::move(gt));
        }
    } catch (const nlohmann::json::exception &e) {
        throw DataError(std::string("truth document: ") + e.what());
    } catch (const std::out_of_range &e) {
        throw DataError(std::string("truth document: ") + e.what());
    } catch (const NetworkError &e) {
        throw DataError(std::string("truth document: ") + e.what());
    }
    return out;
}

/// One JSON-lines record per observation of a matched stream.
inline nlohmann::json match_record(const Trellis &tr, const MatchResult &m, std::size_t t, double timestamp)
{
    const CandidateSet &set = tr.states[t];
    nlohmann::json rec;
    rec["t"] = timestamp;
    rec["best_state"] = to_json(set.candidates[m.best_state[t]].location);
    nlohmann::json sm = nlohmann::json::array();
    if (!m.q.empty())
        for (std::size_t i = 0; i < set.size(); ++i)
            sm.push_back({{"link", set.candidates[i].location.link},
                          {"offset", set.candidates[i].location.offset},
                          {"p", m.q[t][i]}});
    rec["state_marginals"] = std::move(sm);
    nlohmann::json pm = nlohmann::json::array();
    if (t < tr.transitions.size()) {
        const TransitionLayer &layer = tr.transitions[t];
        rec["best_path"] = layer.paths[m.best_path[t]].links;
        if (!m.r.empty())
            for (std::size_t j = 0; j < layer.size(); ++j)
                pm.push_back({{"links", layer.paths[j].links}, {"p", m.r[t][j]}});
    } else {
        rec["best_path"] = nlohmann::json::array();
    }
    rec["path_marginals"] = std::move(pm);
    return rec;
}

} // namespace crfmatch
