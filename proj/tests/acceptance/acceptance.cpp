// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero if any fails.

#include "fixtures.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace crfmatch;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char *f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome
{
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string &what)
    {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("violated: ") + what;
        }
    }
    void note(const std::string &s) { detail += (detail.empty() ? "" : "; ") + s; }
};

// ------------------------------------------------------------------ 1

Outcome inference_oracle()
{
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    double worst_v = 0.0, worst_m = 0.0;
    for (int n = 0; n < 200; ++n) {
        const std::size_t T = oracle::pick(rng, 1, 4);
        const Trellis tr = oracle::random_trellis(rng, T, 3, 4);
        const TrellisScores s = oracle::random_scores(rng, tr, 5.0);
        const oracle::BruteMarginals ref = oracle::brute_marginals(tr, s);
        const auto [traj, value] = viterbi(tr, s);
        worst_v = std::max({worst_v, std::abs(value - ref.max_log_potential),
                            std::abs(log_potential(tr, traj, s) - ref.max_log_potential)});
        const PosteriorMarginals pm = smooth(tr, s);
        for (std::size_t t = 0; t < tr.steps(); ++t)
            for (std::size_t i = 0; i < ref.q[t].size(); ++i)
                worst_m = std::max(worst_m, std::abs(pm.q_bar()[t][i] - ref.q[t][i]));
        for (std::size_t t = 0; t < tr.transitions.size(); ++t)
            for (std::size_t j = 0; j < ref.r[t].size(); ++j)
                worst_m = std::max(worst_m, std::abs(pm.r_bar()[t][j] - ref.r[t][j]));
    }
    const double dt = seconds(t0);
    o.check(worst_v <= 1e-9, "Viterbi max log-potential within 1e-9");
    o.check(worst_m <= 1e-9, "smoothed marginals within 1e-9");
    o.check(dt < 10.0, "runtime < 10 s");
    o.note(fmt("200 trellises, max viterbi err %.2e, max marginal err %.2e, %.2f s", worst_v, worst_m, dt));
    return o;
}

// ------------------------------------------------------------------ 2

Outcome partition_oracle()
{
    Outcome o;
    std::mt19937_64 rng(20240602);
    double worst = 0.0;
    for (int n = 0; n < 200; ++n) {
        const std::size_t L = oracle::pick(rng, 1, 5);
        const int M = static_cast<int>(oracle::pick(rng, 1, 4));
        const GeneralizedSequence seq = oracle::random_sequence(rng, L, 3, M, 2.0);
        Eigen::VectorXd theta(M);
        for (int m = 0; m < M; ++m)
            theta[m] = oracle::uniform(rng, -1.5, 1.5);
        const double ref = oracle::brute_exp_family(seq, theta).log_z;
        const double got = log_partition(seq, theta);
        worst = std::max(worst, std::abs(got - ref) / std::abs(ref));
    }
    o.check(worst <= 1e-9, "log partition relative error within 1e-9");
    o.note(fmt("200 sequences, max relative err %.2e", worst));
    return o;
}

// ------------------------------------------------------------------ 3

Outcome derivative_checks()
{
    Outcome o;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240603);
    const double h = 1e-5;
    double g_err = 0.0, h_err = 0.0, asym = 0.0, min_eig = std::numeric_limits<double>::infinity();

    auto check_function = [&](const std::function<double(const Eigen::VectorXd &)> &f,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd &)> &grad,
                              const Eigen::MatrixXd &H, const Eigen::VectorXd &theta, double sign) {
        const Eigen::VectorXd g = grad(theta);
        const int M = static_cast<int>(theta.size());
        for (int m = 0; m < M; ++m) {
            // fourth-order central stencil
            auto at = [&](double k) {
                Eigen::VectorXd x = theta;
                x[m] += k * h;
                return x;
            };
            const double fd = (-f(at(2)) + 8 * f(at(1)) - 8 * f(at(-1)) + f(at(-2))) / (12 * h);
            g_err = std::max(g_err, std::abs(fd - g[m]) / std::max(1.0, std::abs(g[m])));
            const Eigen::VectorXd fdh = (-grad(at(2)) + 8 * grad(at(1)) - 8 * grad(at(-1)) + grad(at(-2))) / (12 * h);
            for (int n = 0; n < M; ++n)
                h_err = std::max(h_err, std::abs(fdh[n] - H(n, m)) / std::max(1.0, std::abs(H(n, m))));
        }
        asym = std::max(asym, (H - H.transpose()).cwiseAbs().maxCoeff());
        const Eigen::MatrixXd sym = sign * 0.5 * (H + H.transpose());
        min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff());
    };

    for (int n = 0; n < 200; ++n) {
        const GeneralizedSequence seq =
            oracle::random_sequence(rng, oracle::pick(rng, 1, 5), 3, static_cast<int>(oracle::pick(rng, 1, 4)), 2.0);
        Eigen::VectorXd theta(seq.dimension());
        for (int m = 0; m < theta.size(); ++m)
            theta[m] = oracle::uniform(rng, -1.0, 1.0);
        check_function([&](const Eigen::VectorXd &th) { return log_partition(seq, th); },
                       [&](const Eigen::VectorXd &th) { return log_partition_gradient(seq, th); },
                       log_partition_hessian(seq, theta), theta, 1.0);
    }

    // penalized objective on real trellises (Hessian is negative definite there)
    GridSpec g;
    g.rows = g.cols = 5;
    const RoadNetwork net = generate_grid(g);
    SimSpec sim;
    sim.driver = ModelParams::from_sigma(10, Eigen::VectorXd::Constant(1, -0.005));
    sim.duration = 300;
    const auto data = decimate(simulate_dataset(net, sim, 20, 10.0, 77), 30.0);
    for (FeatureKind kind : {FeatureKind::Simple, FeatureKind::Complex}) {
        const auto prepared = prepare(net, data, MatchingSetup::for_sigma(10), FeatureExtractor{kind});
        std::vector<GeneralizedSequence> seqs;
        for (const PreparedTrellis &p : prepared)
            if (p.label)
                seqs.push_back(to_generalized(p.trellis, p.features, *p.label));
        Eigen::VectorXd theta = default_theta0(kind);
        theta[1] = -0.004;
        const TrainingConfig cfg;
        check_function([&](const Eigen::VectorXd &th) { return penalized_objective(seqs, th, cfg, 0).value; },
                       [&](const Eigen::VectorXd &th) { return penalized_objective(seqs, th, cfg, 1).gradient; },
                       penalized_objective(seqs, theta, cfg, 2).hessian, theta, -1.0);
    }
    const double dt = seconds(t0);
    o.check(g_err <= 1e-6, "gradient vs central differences within 1e-6");
    o.check(h_err <= 1e-5, "Hessian vs differenced gradient within 1e-5");
    o.check(asym <= 1e-12, "Hessian symmetric");
    o.check(min_eig >= -1e-8, "Hessian PSD (eigenvalues >= -1e-8)");
    o.check(dt < 30.0, "runtime < 30 s");
    o.note(fmt("grad err %.2e, hess err %.2e, asym %.1e, min eig %.2e, %.2f s", g_err, h_err, asym, min_eig, dt));
    return o;
}

// ------------------------------------------------------------------ 4, 5

struct RecoveryData
{
    RoadNetwork net;
    std::vector<Sample> data; // 60 s
};

RecoveryData recovery_data()
{
    GridSpec g;
    g.rows = g.cols = 10;
    g.block_length = 200.0;
    g.speed_limit = 10.0;
    RoadNetwork net = generate_grid(g);
    SimSpec sim;
    sim.driver = ModelParams::from_sigma(10.0, Eigen::VectorXd::Constant(1, -0.005));
    sim.duration = 540.0;
    sim.decision_period = 60.0;
    auto data = decimate(simulate_dataset(net, sim, 500, 10.0, 42), 60.0);
    return {std::move(net), std::move(data)};
}

Outcome parameter_recovery(const RecoveryData &d)
{
    Outcome o;
    const auto t0 = Clock::now();
    const auto prepared = prepare(d.net, d.data, MatchingSetup::for_sigma(10.0), {});
    const TrainingResult res = train_supervised(prepared, FeatureKind::Simple);
    const double dt = seconds(t0);
    const double sigma = res.params.sigma(), mu = res.params.mu[0];
    o.check(std::abs(sigma - 10.0) <= 0.15 * 10.0, "sigma within 15%");
    o.check(std::abs(mu + 0.005) <= 0.20 * 0.005, "mu within 20%");
    o.check(dt < 300.0, "runtime < 5 min");
    o.note(fmt("sigma %.3f, mu %.6f, %zu trellises (%zu unlabeled), %.1f s", sigma, mu, prepared.size(), res.excluded,
               dt));
    return o;
}

Outcome em_check(const RecoveryData &d)
{
    Outcome o;
    const Fold fold = kfold_split(d.data.size(), 5, 42)[0];
    std::vector<Sample> train, test;
    for (std::size_t i : fold.train)
        train.push_back(d.data[i]);
    for (std::size_t i : fold.test)
        test.push_back(d.data[i]);
    const MatchingSetup setup = MatchingSetup::for_sigma(10.0);

    const TrainingResult sup = train_supervised(prepare(d.net, train, setup, {}), FeatureKind::Simple);
    std::vector<Sample> unlabeled = train;
    for (Sample &s : unlabeled)
        s.truth = {};
    const auto prepared = prepare(d.net, unlabeled, setup, {});
    const ModelParams init = em_default_init(FeatureKind::Simple, characteristic_length(unlabeled));
    TrainingConfig cfg;
    cfg.em_iters = 3;
    const TrainingResult em = train_em(prepared, init, cfg);

    bool monotone = em.report.size() == 3;
    for (std::size_t k = 1; k < em.report.size(); ++k)
        monotone = monotone && em.report[k].objective >= em.report[k - 1].objective - 1e-6;
    const double sup_miss = evaluate(d.net, sup.params, Strategy::offline(), test, setup).path_miss_rate;
    const double em_miss = evaluate(d.net, em.params, Strategy::offline(), test, setup).path_miss_rate;
    o.check(monotone, "3 EM iterations with non-decreasing objective (tol 1e-6)");
    o.check(std::abs(em_miss - sup_miss) <= 0.05, "EM path-miss within 5 points of supervised");
    std::string trace;
    for (const IterationReport &r : em.report)
        trace += (trace.empty() ? "" : ", ") + fmt("%.9f", r.objective);
    o.note("objective trace " + trace);
    o.note(fmt("held-out path-miss EM %.4f vs supervised %.4f", em_miss, sup_miss));
    return o;
}

// ------------------------------------------------------------------ 6, 7

struct Benchmark
{
    RoadNetwork net;
    std::vector<Sample> test;
    ModelParams trained, em;
    MatchingSetup setup = MatchingSetup::for_sigma(4.0);
};

Benchmark benchmark()
{
    GridSpec g;
    g.rows = g.cols = 10;
    g.block_length = 500.0;
    g.speed_limit = 20.0;
    Benchmark b{generate_grid(g), {}, {}, {}};
    SimSpec sim;
    sim.driver = ModelParams::from_sigma(4.0, Eigen::VectorXd::Constant(1, -0.005));
    sim.duration = 540.0;
    const auto train = decimate(simulate_dataset(b.net, sim, 500, 4.0, 42), 60.0);
    b.test = simulate_dataset(b.net, sim, 500, 4.0, 4242);
    const auto prepared = prepare(b.net, train, b.setup, {});
    b.trained = train_supervised(prepared, FeatureKind::Simple).params;
    b.em = train_em(prepared, em_default_init(FeatureKind::Simple, characteristic_length(train))).params;
    return b;
}

Outcome strategy_ordering(const Benchmark &b)
{
    Outcome o;
    const auto test = decimate(b.test, 60.0);
    auto miss = [&](const Strategy &s) { return evaluate(b.net, b.trained, s, test, b.setup).path_miss_rate; };
    const double off = miss(Strategy::offline()), lag2 = miss(Strategy::lagged(2)), lag1 = miss(Strategy::lagged(1)),
                 online = miss(Strategy::online());
    o.check(off <= lag2, "offline <= lag2");
    o.check(lag2 <= lag1 + 0.02, "lag2 <= lag1 + 2 points");
    o.check(lag2 <= online, "lag2 <= online");

    std::size_t longest = 0, compared = 0, differing = 0;
    for (const Sample &s : test)
        for (const Trellis &tr : build_trellis(s.observations, b.net, b.setup.projection, b.setup.discovery)) {
            longest = std::max(longest, tr.steps());
            const TrellisScores sc = score(b.net, tr, b.trained);
            const MatchResult a = run_strategy(tr, sc, Strategy::offline());
            const MatchResult l = run_strategy(tr, sc, Strategy::lagged(tr.steps()));
            ++compared;
            if (a.q != l.q || a.r != l.r || a.best_state != l.best_state || a.best_path != l.best_path)
                ++differing;
        }
    nlohmann::json full = to_json(evaluate(b.net, b.trained, Strategy::lagged(longest), test, b.setup));
    nlohmann::json ref = to_json(evaluate(b.net, b.trained, Strategy::offline(), test, b.setup));
    full.erase("strategy");
    ref.erase("strategy");
    o.check(differing == 0, "Lag(T) marginals bitwise identical to offline");
    o.check(full == ref, "Lag(k >= T) report identical to offline");
    o.note(fmt("60 s path-miss offline %.4f, lag2 %.4f, lag1 %.4f, online %.4f; %zu trellises compared exactly", off,
               lag2, lag1, online, compared));
    return o;
}

Outcome model_ordering(const Benchmark &b)
{
    Outcome o;
    const auto test60 = decimate(b.test, 60.0);
    const auto [sp, sp_hint] = baseline_params(Baseline::ShortestPath);
    const auto [cp, cp_hint] = baseline_params(Baseline::ClosestPoint);
    const auto [hcp, hcp_hint] = baseline_params(Baseline::HardClosestPoint);
    auto path_miss = [&](const ModelParams &m) {
        return evaluate(b.net, m, Strategy::offline(), test60, b.setup).path_miss_rate;
    };
    const double m_tr = path_miss(b.trained), m_sp = path_miss(sp), m_cp = path_miss(cp);
    o.check(m_tr < m_sp, "trained < shortest-path at 60 s");
    o.check(m_tr < m_cp, "trained < closest-point at 60 s");
    o.note(fmt("60 s path-miss trained %.4f, shortest-path %.4f, closest-point %.4f", m_tr, m_sp, m_cp));

    std::string dense;
    struct Entry
    {
        const char *name;
        ModelParams params;
        Strategy strategy;
    };
    const std::vector<Entry> models{{"trained", b.trained, Strategy::offline()},
                                    {"em", b.em, Strategy::offline()},
                                    {"shortest-path", sp, Strategy::offline()},
                                    {"closest-point", cp, Strategy::offline()},
                                    {"hard-closest-point", hcp, Strategy::online()}};
    for (const Entry &e : models) {
        const double rate = evaluate(b.net, e.params, e.strategy, b.test, b.setup).point_miss_rate;
        o.check(rate <= 0.02, std::string(e.name) + " point-miss <= 2% at 1 s");
        dense += (dense.empty() ? "" : ", ") + fmt("%s %.4f", e.name, rate);
    }
    o.note("1 s point-miss " + dense);
    return o;
}

// ------------------------------------------------------------------ 8

Outcome selection_bias()
{
    Outcome o;
    for (std::size_t n : {2, 5, 10, 50}) {
        const scenario::SelectionBias f = scenario::selection_bias(n, 0.1);
        const std::vector<double> hmm = scenario::hmm_path_scores(f);
        const PosteriorMarginals pm = smooth(f.trellis, f.scores);
        const std::size_t hmm_best = argmax(hmm), crf_best = argmax(pm.r_bar()[0]);
        o.check(hmm_best == f.isolated, fmt("HMM ranks the isolated path first (n=%zu)", n));
        o.check(crf_best != f.isolated, fmt("CRF ranks a parallel path first (n=%zu)", n));
        if (n == 10)
            o.note(fmt("n=10: HMM p(isolated) %.4f vs %.4f; CRF p(isolated) %.4f vs %.4f", hmm[f.isolated],
                       hmm[1], pm.r_bar()[0][f.isolated], pm.r_bar()[0][1]));
    }
    return o;
}

// ------------------------------------------------------------------ 9

Outcome metrics_fixtures()
{
    Outcome o;
    // 0 -> 1 -> 2 eastbound in 100 m links; link 3 is 2 -> 1 westbound
    const RoadNetwork net = fixture::build({{0, fixture::P(0, 0)}, {1, fixture::P(100, 0)}, {2, fixture::P(200, 0)}},
                                           {{1, 0, 1, {}}, {2, 1, 2, {}}, {3, 2, 1, {}}});
    const Path full{{1, 0.0}, {2, 100.0}, {1, 2}, 200.0};
    const Path first{{1, 0.0}, {1, 100.0}, {1}, 100.0};
    const Path reverse{{3, 0.0}, {3, 100.0}, {3}, 100.0};
    const Path mid_true{{1, 20.0}, {2, 50.0}, {1, 2}, 130.0};
    const Path mid_est{{1, 0.0}, {1, 70.0}, {1}, 70.0};
    const Path still{{2, 40.0}, {2, 40.0}, {2}, 0.0};
    struct Case
    {
        const char *name;
        Path truth, est;
        double cov, mc;
    };
    const std::vector<Case> cases{{"identity", full, full, 200.0, 0.0},
                                  {"half", full, first, 100.0, 0.5},
                                  {"disjoint", full, reverse, 0.0, 1.0},
                                  {"partial", mid_true, mid_est, 50.0, 1.0 - 50.0 / 130.0},
                                  {"zero-length truth", still, first, 0.0, 0.0}};
    for (const Case &c : cases) {
        o.check(coverage(net, c.truth, c.est) == c.cov, std::string(c.name) + " coverage");
        o.check(miscoverage(net, c.truth, c.est) == c.mc, std::string(c.name) + " miscoverage");
    }

    GridSpec g;
    const RoadNetwork grid = generate_grid(g);
    SimSpec sim;
    sim.driver = ModelParams::from_sigma(10, Eigen::VectorXd::Constant(1, -0.005));
    std::size_t self = 0;
    for (const Sample &s : decimate(simulate_dataset(grid, sim, 20, 10.0, 9), 60.0))
        for (const Path &p : s.truth.paths) {
            o.check(miscoverage(grid, p, p) == 0.0, "miscoverage(tau, tau) = 0");
            ++self;
        }
    o.note(fmt("%zu hand cases exact, miscoverage(tau, tau) = 0 on %zu simulated paths", cases.size(), self));
    return o;
}

// ------------------------------------------------------------------ 10

int shell(const std::string &cmd)
{
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome throughput()
{
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / ("crfmatch_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = CRFMATCH_CLI_PATH;
    // ten vehicles of 1000 fixes each, 30 s apart
    const int gen = shell(cli + " generate --rows 20 --cols 20 --sigma 10 --vehicles 10 --period 30 --duration 29970" +
                          " --seed 5 --out " + dir.string() + " > /dev/null");
    o.check(gen == 0, "generate succeeded");
    std::ofstream(dir / "model.json") << to_json(ModelParams::from_sigma(10, Eigen::VectorXd::Constant(1, -0.005))).dump();
    std::size_t observations = 0;
    {
        std::ifstream in(dir / "probes.csv");
        for (std::string line; std::getline(in, line);)
            ++observations;
        observations -= 1;
    }
    const auto t0 = Clock::now();
    const int rc = shell(cli + " match --strategy lag2 --threads 1 --network " + (dir / "network.json").string() +
                         " --probes " + (dir / "probes.csv").string() + " --model " + (dir / "model.json").string() +
                         " --output " + (dir / "out.jsonl").string() + " 2> /dev/null");
    const double dt = seconds(t0);
    std::size_t records = 0;
    {
        std::ifstream in(dir / "out.jsonl");
        for (std::string line; std::getline(in, line);)
            ++records;
    }
    fs::remove_all(dir);
    const double rate = observations / dt;
    o.check(rc == 0, "match succeeded");
    o.check(observations == 10000, "10k observations");
    o.check(records == observations, "one record per observation");
    o.check(rate >= 100.0, ">= 100 observations/s");
    o.note(fmt("%zu observations on a 20x20 grid in %.2f s: %.0f obs/s single-threaded", observations, dt, rate));
    return o;
}

} // namespace

int main()
{
    int failures = 0;
    auto report = [&](int id, const char *title, const std::function<Outcome()> &fn) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception &e) {
            o.pass = false;
            o.note(std::string("exception: ") + e.what());
        }
        failures += o.pass ? 0 : 1;
        std::cout << "criterion " << id << (o.pass ? " PASS " : " FAIL ") << title << " (" << o.detail
                  << fmt("; wall %.1f s)", seconds(t0)) << std::endl;
    };
    report(1, "inference oracle equivalence", inference_oracle);
    report(2, "log partition oracle equivalence", partition_oracle);
    report(3, "derivative checks", derivative_checks);
    std::optional<RecoveryData> rec;
    try {
        rec = recovery_data();
    } catch (const std::exception &e) {
        std::cout << "recovery dataset failed: " << e.what() << std::endl;
    }
    report(4, "supervised parameter recovery",
           [&] { return rec ? parameter_recovery(*rec) : Outcome{false, "no dataset"}; });
    report(5, "EM monotonicity and held-out accuracy",
           [&] { return rec ? em_check(*rec) : Outcome{false, "no dataset"}; });
    rec.reset();
    std::optional<Benchmark> bench;
    try {
        bench = benchmark();
    } catch (const std::exception &e) {
        std::cout << "benchmark setup failed: " << e.what() << std::endl;
    }
    report(6, "strategy ordering", [&] { return bench ? strategy_ordering(*bench) : Outcome{false, "no benchmark"}; });
    report(7, "model ordering", [&] { return bench ? model_ordering(*bench) : Outcome{false, "no benchmark"}; });
    bench.reset();
    report(8, "selection-bias regression", selection_bias);
    report(9, "metrics correctness", metrics_fixtures);
    report(10, "match throughput", throughput);
    std::cout << (failures == 0 ? "all criteria PASS" : fmt("%d criteria FAIL", failures)) << std::endl;
    return failures == 0 ? 0 : 1;
}
