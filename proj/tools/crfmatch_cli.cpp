#include <crfmatch/crfmatch.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace crfmatch;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

class UsageError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

template <typename Fn>
auto as_usage(Fn &&fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
}

std::ifstream open_in(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot read '" + path + "'");
    return in;
}

std::ofstream open_out(const std::string &path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write '" + path + "'");
    return out;
}

nlohmann::json read_json(const std::string &path)
{
    std::ifstream in = open_in(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw DataError(path + ": " + e.what());
    }
}

RoadNetwork read_network(const std::string &path)
{
    std::ifstream in = open_in(path);
    try {
        return load_network(in);
    } catch (const NetworkError &e) {
        throw DataError(path + ": " + e.what());
    }
}

ProbeStreams read_probe_file(const std::string &path, Crs crs)
{
    std::ifstream in = open_in(path);
    return read_probes(in, crs);
}

ModelParams read_model(const std::string &path)
{
    const nlohmann::json doc = read_json(path);
    try {
        return model_from_json(doc);
    } catch (const std::exception &e) {
        throw DataError(path + ": " + e.what());
    }
}

void write_text(const std::string &path, const std::string &text)
{
    std::ofstream out = open_out(path);
    out << text;
    if (!out)
        throw DataError("failed writing '" + path + "'");
}

/// Inserts flags from a JSON config after the subcommand, unless given on the command line already.
std::vector<std::string> expand_config(std::vector<std::string> args)
{
    std::string config;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            config = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            config = args[i].substr(9);
    }
    if (config.empty() || args.size() < 2)
        return args;
    const nlohmann::json doc = read_json(config);
    if (!doc.is_object())
        throw DataError(config + ": config must be a JSON object");
    auto given = [&](const std::string &flag) {
        for (const std::string &a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0)
                return true;
        return false;
    };
    auto scalar = [](const nlohmann::json &v) {
        if (v.is_string())
            return v.get<std::string>();
        if (v.is_number_float())
            return format_double(v.get<double>());
        return v.dump();
    };
    std::vector<std::string> extra;
    for (const auto &[key, value] : doc.items()) {
        const std::string flag = "--" + key;
        if (key == "config" || given(flag))
            continue;
        if (value.is_boolean()) {
            if (value.get<bool>())
                extra.push_back(flag);
            continue;
        }
        extra.push_back(flag);
        if (value.is_array()) {
            std::string joined;
            for (const auto &v : value)
                joined += (joined.empty() ? "" : ",") + scalar(v);
            extra.push_back(joined);
        } else {
            extra.push_back(scalar(value));
        }
    }
    args.insert(args.begin() + 2, extra.begin(), extra.end());
    return args;
}

/// Keeps every fix that lies a whole number of `period`s after the first one.
std::vector<TimedPoint> decimate_stream(const std::vector<TimedPoint> &obs, double period)
{
    if (obs.size() < 2)
        return obs;
    const double base = obs[1].t - obs[0].t;
    const double ratio = period / base;
    const auto step = static_cast<std::size_t>(std::llround(ratio));
    if (!(base > 0.0) || step == 0 || std::abs(ratio - static_cast<double>(step)) > 1e-9 * std::max(1.0, ratio))
        throw DataError("period " + format_double(period) + " is not a multiple of the probe period " +
                        format_double(base));
    std::vector<TimedPoint> out;
    for (std::size_t k = 0; k < obs.size(); k += step)
        out.push_back(obs[k]);
    return out;
}

struct Dataset
{
    std::vector<std::string> ids;
    std::vector<Sample> samples;
};

Dataset join(const ProbeStreams &probes, const std::map<std::string, GroundTruth> *truth)
{
    Dataset d;
    for (const auto &[id, obs] : probes) {
        Sample s;
        s.observations = obs;
        if (truth) {
            const auto it = truth->find(id);
            if (it == truth->end())
                throw DataError("vehicle " + id + " has probes but no truth");
            s.truth = it->second;
            if (s.truth.times.size() != obs.size())
                throw DataError("vehicle " + id + ": truth and probes differ in length");
            for (std::size_t k = 0; k < obs.size(); ++k)
                if (s.truth.times[k] != obs[k].t)
                    throw DataError("vehicle " + id + ": truth and probe timestamps differ");
        }
        d.ids.push_back(id);
        d.samples.push_back(std::move(s));
    }
    return d;
}

std::vector<Sample> decimate_all(const std::vector<Sample> &data, double period)
{
    std::vector<Sample> out;
    out.reserve(data.size());
    for (const Sample &s : data) {
        if (s.truth.size() > 0) {
            try {
                out.push_back(decimate(s, period));
            } catch (const std::invalid_argument &e) {
                throw DataError(e.what());
            }
        } else {
            out.push_back({decimate_stream(s.observations, period), {}});
        }
    }
    return out;
}

struct ModelChoice
{
    std::string name;
    ModelParams params;
    std::optional<Strategy> forced; // strategy dictated by the baseline
};

ModelChoice baseline_choice(const std::string &name)
{
    const auto [params, hint] = as_usage([&] { return baseline_params(parse_baseline(name)); });
    ModelChoice c{name, params, std::nullopt};
    if (hint == StrategyHint::Online)
        c.forced = Strategy::online();
    return c;
}

// ---------------------------------------------------------------- generate

struct GenerateOpts
{
    int rows = 0;
    int cols = 0;
    double block = 200.0;
    double speed_limit = 10.0;
    double stop_fraction = 0.0;
    double signal_fraction = 0.0;
    int lanes = 1;
    std::size_t vehicles = 10;
    double sigma = 10.0;
    double period = 1.0;
    double duration = 600.0;
    double decision_period = 0.0;
    std::vector<double> mu{-0.005};
    std::string features = "simple";
    std::uint64_t seed = 1;
    std::string out = ".";
    unsigned threads = 1;
};

int run_generate(const GenerateOpts &o)
{
    GridSpec g;
    g.rows = o.rows;
    g.cols = o.cols > 0 ? o.cols : o.rows;
    g.block_length = o.block;
    g.speed_limit = o.speed_limit;
    g.stop_sign_fraction = o.stop_fraction;
    g.signal_fraction = o.signal_fraction;
    g.lanes = o.lanes;
    g.seed = mix_seed(o.seed, 0);
    const FeatureKind kind = as_usage([&] { return parse_feature_kind(o.features); });
    if (static_cast<int>(o.mu.size()) != FeatureExtractor{kind}.dimension())
        throw UsageError("--mu needs " + std::to_string(FeatureExtractor{kind}.dimension()) + " values for --features " +
                         o.features);
    if (o.sigma < 0.0)
        throw UsageError("--sigma must be non-negative");

    const RoadNetwork net = as_usage([&] { return generate_grid(g); });
    SimSpec sim;
    sim.driver = ModelParams::from_sigma(o.sigma > 0.0 ? o.sigma : 1.0,
                                         Eigen::Map<const Eigen::VectorXd>(o.mu.data(), static_cast<long>(o.mu.size())),
                                         kind);
    sim.base_period = o.period;
    sim.duration = o.duration;
    sim.decision_period = o.decision_period;
    const std::vector<Sample> data = as_usage([&] { return simulate_dataset(net, sim, o.vehicles, o.sigma, mix_seed(o.seed, 1), o.threads); });

    const int width = static_cast<int>(std::to_string(o.vehicles > 0 ? o.vehicles - 1 : 0).size());
    std::vector<ProbeRecord> records;
    std::map<std::string, GroundTruth> truths;
    for (std::size_t u = 0; u < data.size(); ++u) {
        char id[32];
        std::snprintf(id, sizeof id, "v%0*zu", width, u);
        for (const TimedPoint &p : data[u].observations)
            records.push_back({id, p.t, p.point.x, p.point.y});
        truths[id] = data[u].truth;
    }

    fs::create_directories(o.out);
    std::ostringstream net_text, probe_text;
    write_network(net_text, net);
    write_probes(probe_text, records);
    write_text((fs::path(o.out) / "network.json").string(), net_text.str());
    write_text((fs::path(o.out) / "probes.csv").string(), probe_text.str());
    write_text((fs::path(o.out) / "truth.json").string(), truth_to_json(truths).dump(1) + "\n");
    return kOk;
}

// ---------------------------------------------------------------- match

struct MatchOpts
{
    std::string network, probes, model, baseline, output;
    std::string strategy = "offline";
    double gps_sigma = 0.0;
    unsigned threads = 1;
};

int run_match(const MatchOpts &o, bool strategy_given)
{
    const RoadNetwork net = read_network(o.network);
    ModelChoice choice = o.model.empty() ? baseline_choice(o.baseline)
                                         : ModelChoice{"model", read_model(o.model), std::nullopt};
    Strategy strategy = as_usage([&] { return Strategy::parse(o.strategy); });
    if (choice.forced && !strategy_given)
        strategy = *choice.forced;
    const double sigma = o.gps_sigma > 0.0 ? o.gps_sigma : (o.model.empty() ? 10.0 : choice.params.sigma());
    const MatchingSetup setup = MatchingSetup::for_sigma(sigma);
    const ProbeStreams probes = read_probe_file(o.probes, net.crs());

    std::vector<std::pair<std::string, const std::vector<TimedPoint> *>> vehicles;
    for (const auto &[id, obs] : probes)
        vehicles.emplace_back(id, &obs);
    std::vector<std::string> text(vehicles.size());
    std::vector<std::size_t> breaks(vehicles.size(), 0);
    parallel_for(vehicles.size(), o.threads, [&](std::size_t u) {
        const std::string &id = vehicles[u].first;
        const std::vector<TimedPoint> &obs = *vehicles[u].second;
        std::vector<nlohmann::json> recs(obs.size());
        const auto trellises = build_trellis(obs, net, setup.projection, setup.discovery);
        for (std::size_t s = 0; s < trellises.size(); ++s) {
            const Trellis &tr = trellises[s];
            const MatchResult m = run_strategy(tr, score(net, tr, choice.params), strategy);
            for (std::size_t t = 0; t < tr.steps(); ++t) {
                const std::size_t k = tr.observation_index[t];
                nlohmann::json rec = match_record(tr, m, t, obs[k].t);
                rec["segment"] = s;
                recs[k] = std::move(rec);
            }
        }
        std::string out;
        for (std::size_t k = 0; k < obs.size(); ++k) {
            nlohmann::json rec = recs[k].is_null() ? nlohmann::json{{"t", obs[k].t},
                                                                    {"best_state", nullptr},
                                                                    {"state_marginals", nlohmann::json::array()},
                                                                    {"best_path", nlohmann::json::array()},
                                                                    {"path_marginals", nlohmann::json::array()},
                                                                    {"segment", nullptr}}
                                                   : std::move(recs[k]);
            rec["vehicle_id"] = id;
            out += rec.dump() + "\n";
        }
        text[u] = std::move(out);
        breaks[u] = trellises.empty() ? 0 : trellises.size() - 1;
    });

    std::ofstream file;
    if (!o.output.empty())
        file = open_out(o.output);
    std::ostream &out = o.output.empty() ? std::cout : file;
    for (const std::string &t : text)
        out << t;
    out.flush();
    if (!out)
        throw DataError("failed writing match output");
    for (std::size_t u = 0; u < vehicles.size(); ++u)
        std::cerr << "vehicle " << vehicles[u].first << ": " << breaks[u] << " breaks\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOpts
{
    std::string network, probes, truth, init, output = "model.json", report;
    std::string mode = "supervised";
    std::string features = "simple";
    int em_iters = 3;
    double penalty = 1e-2;
    int max_newton_iters = 100;
    double period = 0.0;
    double gps_sigma = 10.0;
    unsigned threads = 1;
};

int run_train(const TrainOpts &o)
{
    if (o.mode != "supervised" && o.mode != "em")
        throw UsageError("--mode must be supervised or em");
    if (o.mode == "supervised" && o.truth.empty())
        throw UsageError("supervised training needs --truth");
    if (o.em_iters < 1)
        throw UsageError("--em-iters must be at least 1");
    const FeatureKind kind = as_usage([&] { return parse_feature_kind(o.features); });
    const RoadNetwork net = read_network(o.network);
    const ProbeStreams probes = read_probe_file(o.probes, net.crs());
    std::optional<std::map<std::string, GroundTruth>> truth;
    if (!o.truth.empty())
        truth = truth_from_json(read_json(o.truth), net);
    Dataset d = join(probes, truth ? &*truth : nullptr);
    std::vector<Sample> data = o.period > 0.0 ? decimate_all(d.samples, o.period) : std::move(d.samples);
    if (o.mode == "em")
        for (Sample &s : data)
            s.truth = {};

    TrainingConfig cfg;
    cfg.quadratic_penalty = o.penalty;
    cfg.em_iters = o.em_iters;
    cfg.max_newton_iters = o.max_newton_iters;
    cfg.threads = o.threads;
    const auto prepared = prepare(net, data, MatchingSetup::for_sigma(o.gps_sigma), FeatureExtractor{kind}, o.threads);

    TrainingResult res;
    ModelParams init;
    try {
        if (o.mode == "supervised") {
            res = train_supervised(prepared, kind, cfg);
        } else {
            init = o.init.empty() ? em_default_init(kind, characteristic_length(data)) : read_model(o.init);
            if (init.kind != kind)
                throw UsageError("--init model uses a different feature set than --features");
            res = train_em(prepared, init, cfg);
        }
    } catch (const TrainingError &e) {
        throw DataError(e.what());
    }

    write_text(o.output, to_json(res.params).dump(1) + "\n");
    nlohmann::json rep{{"mode", o.mode},
                       {"features", o.features},
                       {"trellises", prepared.size()},
                       {"excluded", res.excluded},
                       {"model", to_json(res.params)}};
    if (o.mode == "em")
        rep["init"] = to_json(init);
    nlohmann::json iters = nlohmann::json::array();
    for (const IterationReport &r : res.report)
        iters.push_back(to_json(r));
    rep["iterations"] = std::move(iters);
    write_text(o.report.empty() ? o.output + ".report.json" : o.report, rep.dump(1) + "\n");
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOpts
{
    std::string network, probes, truth, output, csv;
    std::vector<double> periods{60.0};
    std::vector<std::string> strategies{"offline"};
    std::vector<std::string> models;
    std::vector<std::string> baselines{"shortest-path", "closest-point"};
    std::vector<std::string> train{"supervised:simple"};
    std::size_t kfold = 1;
    std::uint64_t seed = 1;
    double penalty = 1e-2;
    int em_iters = 3;
    double gps_sigma = 10.0;
    unsigned threads = 1;
};

std::string csv_cell(double v) { return format_double(v); }

int run_eval(const EvalOpts &o)
{
    std::vector<Strategy> strategies;
    for (const std::string &s : o.strategies)
        strategies.push_back(as_usage([&] { return Strategy::parse(s); }));
    std::vector<ModelChoice> fixed;
    for (const std::string &m : o.models)
        fixed.push_back({fs::path(m).stem().string(), read_model(m), std::nullopt});
    for (const std::string &b : o.baselines)
        fixed.push_back(baseline_choice(b));
    std::vector<std::pair<std::string, FeatureKind>> trained;
    for (const std::string &t : o.train) {
        const auto colon = t.find(':');
        const std::string mode = t.substr(0, colon);
        const std::string feats = colon == std::string::npos ? "simple" : t.substr(colon + 1);
        if (mode != "supervised" && mode != "em")
            throw UsageError("--train entries are supervised[:features] or em[:features], got '" + t + "'");
        trained.emplace_back(mode, as_usage([&] { return parse_feature_kind(feats); }));
    }
    if (o.kfold < 1)
        throw UsageError("--kfold must be at least 1");
    if (o.periods.empty() || strategies.empty() || (fixed.empty() && trained.empty()))
        throw UsageError("eval needs at least one period, strategy and model");

    const RoadNetwork net = read_network(o.network);
    const ProbeStreams probes = read_probe_file(o.probes, net.crs());
    const auto truth = truth_from_json(read_json(o.truth), net);
    const Dataset d = join(probes, &truth);
    if (o.kfold > d.samples.size())
        throw DataError("--kfold exceeds the number of vehicles");
    const std::vector<Fold> folds = kfold_split(d.samples.size(), o.kfold, o.seed);
    const MatchingSetup setup = MatchingSetup::for_sigma(o.gps_sigma);
    TrainingConfig cfg;
    cfg.quadratic_penalty = o.penalty;
    cfg.em_iters = o.em_iters;
    cfg.threads = o.threads;

    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream csv;
    csv << "period,fold,model,strategy,vehicle_id,points,point_misses,paths,path_misses,breaks,"
           "dropped_observations,mean_miscoverage\n";
    for (double period : o.periods) {
        const std::vector<Sample> data = decimate_all(d.samples, period);
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const bool holdout = folds.size() > 1;
            const auto &train_idx = holdout ? folds[f].train : folds[f].test;
            std::vector<Sample> train_set, test_set;
            std::vector<std::string> test_ids;
            for (std::size_t i : train_idx)
                train_set.push_back(data[i]);
            for (std::size_t i : folds[f].test) {
                test_set.push_back(data[i]);
                test_ids.push_back(d.ids[i]);
            }
            std::vector<ModelChoice> models = fixed;
            for (const auto &[mode, kind] : trained) {
                const std::string name = mode + "-" + to_string(kind);
                try {
                    if (mode == "supervised") {
                        const auto prepared = prepare(net, train_set, setup, FeatureExtractor{kind}, o.threads);
                        models.push_back({name, train_supervised(prepared, kind, cfg).params, std::nullopt});
                    } else {
                        std::vector<Sample> unlabeled = train_set;
                        for (Sample &s : unlabeled)
                            s.truth = {};
                        const auto prepared = prepare(net, unlabeled, setup, FeatureExtractor{kind}, o.threads);
                        const ModelParams init = em_default_init(kind, characteristic_length(unlabeled));
                        models.push_back({name, train_em(prepared, init, cfg).params, std::nullopt});
                    }
                } catch (const TrainingError &e) {
                    throw DataError(name + " at period " + format_double(period) + ": " + e.what());
                }
            }
            for (const ModelChoice &m : models)
                for (const Strategy &requested : strategies) {
                    const Strategy s = m.forced ? *m.forced : requested;
                    const MetricsReport rep = evaluate(net, m.params, s, test_set, setup, o.threads);
                    nlohmann::json row = to_json(rep);
                    row["period"] = period;
                    row["fold"] = f;
                    row["model"] = m.name;
                    row["params"] = to_json(m.params);
                    rows.push_back(std::move(row));
                    for (std::size_t u = 0; u < rep.per_trajectory.size(); ++u) {
                        const TrajectoryTally &t = rep.per_trajectory[u];
                        double mc = 0.0;
                        for (double v : t.miscoverage)
                            mc += v;
                        mc = t.miscoverage.empty() ? 0.0 : mc / static_cast<double>(t.miscoverage.size());
                        csv << csv_cell(period) << ',' << f << ',' << m.name << ',' << rep.strategy << ','
                            << test_ids[u] << ',' << t.points << ',' << t.point_misses << ',' << t.paths << ','
                            << t.path_misses << ',' << t.breaks << ',' << t.dropped_observations << ','
                            << csv_cell(mc) << '\n';
                    }
                }
        }
    }
    const std::string json = nlohmann::json{{"rows", rows}}.dump(1) + "\n";
    if (o.output.empty())
        std::cout << json;
    else
        write_text(o.output, json);
    if (!o.csv.empty())
        write_text(o.csv, csv.str());
    return kOk;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"CRF map matching of sparse GPS probe data"};
    app.require_subcommand(1);
    std::string config_unused;
    auto add_config = [&](CLI::App *sub) {
        sub->add_option("--config", config_unused, "JSON file whose keys mirror the flag names");
    };

    GenerateOpts gen;
    CLI::App *g = app.add_subcommand("generate", "Synthetic grid network, probes and ground truth");
    g->add_option("--rows", gen.rows, "Grid rows")->required();
    g->add_option("--cols", gen.cols, "Grid columns (default: rows)");
    g->add_option("--block", gen.block, "Block length in meters");
    g->add_option("--speed-limit", gen.speed_limit, "Speed limit in m/s");
    g->add_option("--stop-fraction", gen.stop_fraction, "Fraction of links ending in a stop sign");
    g->add_option("--signal-fraction", gen.signal_fraction, "Fraction of links ending in a signal");
    g->add_option("--lanes", gen.lanes, "Lanes per link");
    g->add_option("--vehicles", gen.vehicles, "Number of vehicles");
    g->add_option("--sigma", gen.sigma, "GPS noise per axis in meters");
    g->add_option("--period", gen.period, "Sampling period of the ground truth in seconds");
    g->add_option("--duration", gen.duration, "Trajectory duration in seconds");
    g->add_option("--decision-period", gen.decision_period,
                  "Draw whole paths every this many seconds instead of per-intersection turns (0: off)");
    g->add_option("--mu", gen.mu, "Driver path weights")->delimiter(',');
    g->add_option("--features", gen.features, "Driver feature set: simple or complex");
    g->add_option("--seed", gen.seed, "Random seed");
    g->add_option("--out", gen.out, "Output directory");
    g->add_option("--threads", gen.threads, "Worker threads");
    add_config(g);

    MatchOpts mat;
    CLI::App *m = app.add_subcommand("match", "Match probe streams to the network");
    m->add_option("--network", mat.network, "Network JSON")->required();
    m->add_option("--probes", mat.probes, "Probe CSV")->required();
    auto *model_opt = m->add_option("--model", mat.model, "Model JSON");
    auto *base_opt = m->add_option("--baseline", mat.baseline, "shortest-path, closest-point or hard-closest-point");
    model_opt->excludes(base_opt);
    auto *strat_opt = m->add_option("--strategy", mat.strategy, "viterbi, online, lag<k> or offline");
    m->add_option("--gps-sigma", mat.gps_sigma, "Noise scale for candidate search (default: model sigma, 10 for baselines)");
    m->add_option("--output", mat.output, "Output JSON-lines file (default: stdout)");
    m->add_option("--threads", mat.threads, "Worker threads");
    add_config(m);

    TrainOpts tr;
    CLI::App *t = app.add_subcommand("train", "Fit model parameters");
    t->add_option("--network", tr.network, "Network JSON")->required();
    t->add_option("--probes", tr.probes, "Probe CSV")->required();
    t->add_option("--truth", tr.truth, "Ground truth JSON (supervised mode)");
    t->add_option("--mode", tr.mode, "supervised or em");
    t->add_option("--features", tr.features, "simple or complex");
    t->add_option("--em-iters", tr.em_iters, "EM iterations");
    t->add_option("--penalty", tr.penalty, "Quadratic penalty");
    t->add_option("--max-newton-iters", tr.max_newton_iters, "Newton iteration cap for supervised mode");
    t->add_option("--period", tr.period, "Decimate to this sampling period first (0: as given)");
    t->add_option("--gps-sigma", tr.gps_sigma, "Noise scale for candidate search");
    t->add_option("--init", tr.init, "Starting model for EM (default: built-in initialization)");
    t->add_option("--output", tr.output, "Model JSON output");
    t->add_option("--report", tr.report, "Per-iteration report (default: <output>.report.json)");
    t->add_option("--threads", tr.threads, "Worker threads");
    add_config(t);

    EvalOpts ev;
    CLI::App *e = app.add_subcommand("eval", "Benchmark models and strategies against ground truth");
    e->add_option("--network", ev.network, "Network JSON")->required();
    e->add_option("--probes", ev.probes, "Probe CSV")->required();
    e->add_option("--truth", ev.truth, "Ground truth JSON")->required();
    e->add_option("--periods", ev.periods, "Sampling periods in seconds")->delimiter(',');
    e->add_option("--strategies", ev.strategies, "Strategies")->delimiter(',');
    e->add_option("--models", ev.models, "Fixed model JSON files")->delimiter(',');
    e->add_option("--baselines", ev.baselines, "Baselines (empty string for none)")->delimiter(',');
    e->add_option("--train", ev.train, "Models trained per fold: supervised[:features], em[:features]")
        ->delimiter(',');
    e->add_option("--kfold", ev.kfold, "Number of folds (1: train and test on everything)");
    e->add_option("--seed", ev.seed, "Fold assignment seed");
    e->add_option("--penalty", ev.penalty, "Quadratic penalty for trained models");
    e->add_option("--em-iters", ev.em_iters, "EM iterations for trained models");
    e->add_option("--gps-sigma", ev.gps_sigma, "Noise scale for candidate search");
    e->add_option("--output", ev.output, "Report JSON (default: stdout)");
    e->add_option("--csv", ev.csv, "Per-trajectory CSV rows");
    e->add_option("--threads", ev.threads, "Worker threads");
    add_config(e);

    try {
        std::vector<std::string> args = expand_config(std::vector<std::string>(argv, argv + argc));
        std::vector<char *> cargs;
        for (std::string &a : args)
            cargs.push_back(a.data());
        try {
            app.parse(static_cast<int>(cargs.size()), cargs.data());
        } catch (const CLI::ParseError &err) {
            const int code = app.exit(err);
            return code == 0 ? kOk : kUsage;
        }
        auto drop_empty = [](std::vector<std::string> &v) {
            v.erase(std::remove(v.begin(), v.end(), std::string()), v.end());
        };
        drop_empty(ev.baselines);
        drop_empty(ev.train);
        drop_empty(ev.models);

        if (g->parsed())
            return run_generate(gen);
        if (m->parsed()) {
            if (mat.model.empty() && mat.baseline.empty())
                throw UsageError("match needs --model or --baseline");
            return run_match(mat, strat_opt->count() > 0);
        }
        if (t->parsed())
            return run_train(tr);
        if (e->parsed())
            return run_eval(ev);
        return kUsage;
    } catch (const UsageError &err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return kUsage;
    } catch (const DataError &err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kData;
    } catch (const NetworkError &err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error &err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kData;
    } catch (const std::exception &err) {
        std::cerr << "internal error: " << err.what() << "\n";
        return kInternal;
    }
}
