#pragma once

#include "crf.hpp"
#include "evaluation.hpp"
#include "parallel.hpp"
#include "synthetic.hpp"
#include "training.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace crfmatch {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// `count` independent vehicles; vehicle u uses derived seeds for its route and its noise.
inline std::vector<Sample> simulate_dataset(const RoadNetwork &net, const SimSpec &sim, std::size_t count,
                                            double sigma, std::uint64_t seed, unsigned threads = 1)
{
    std::vector<Sample> out(count);
    parallel_for(count, threads, [&](std::size_t u) {
        SimSpec s = sim;
        s.seed = mix_seed(seed, 2 * u);
        out[u].truth = simulate_trajectory(net, s);
        out[u].observations = add_gps_noise(out[u].truth, sigma, mix_seed(seed, 2 * u + 1));
    });
    return out;
}

inline std::vector<Sample> decimate(const std::vector<Sample> &data, double period)
{
    std::vector<Sample> out;
    out.reserve(data.size());
    for (const Sample &s : data)
        out.push_back(decimate(s, period));
    return out;
}

struct PreparedTrellis
{
    std::size_t sample = 0;
    Trellis trellis;
    TrellisFeatures features;
    std::optional<Label> label; // set when every true state and path is among the candidates
};

/// Builds and featurizes the trellises of every sample, in sample order. Samples with an empty truth
/// yield unlabeled trellises.
inline std::vector<PreparedTrellis> prepare(const RoadNetwork &net, const std::vector<Sample> &data,
                                            const MatchingSetup &setup, const FeatureExtractor &fx,
                                            unsigned threads = 1)
{
    std::vector<std::vector<PreparedTrellis>> parts(data.size());
    parallel_for(data.size(), threads, [&](std::size_t u) {
        for (Trellis &tr : build_trellis(data[u].observations, net, setup.projection, setup.discovery)) {
            PreparedTrellis p;
            p.sample = u;
            p.features = featurize(net, tr, fx);
            if (data[u].truth.size() > 0) {
                const TruthLabels lab = label_trellis(tr, data[u].truth);
                if (lab.complete())
                    p.label = lab.trajectory();
            }
            p.trellis = std::move(tr);
            parts[u].push_back(std::move(p));
        }
    });
    std::vector<PreparedTrellis> out;
    for (auto &v : parts)
        for (auto &p : v)
            out.push_back(std::move(p));
    return out;
}

/// Supervised fit on the labeled trellises; unlabeled ones are counted in `excluded`.
inline TrainingResult train_supervised(const std::vector<PreparedTrellis> &data, FeatureKind kind,
                                       const TrainingConfig &cfg = {})
{
    std::vector<GeneralizedSequence> seqs;
    std::size_t skipped = 0;
    for (const PreparedTrellis &p : data) {
        if (p.label)
            seqs.push_back(to_generalized(p.trellis, p.features, *p.label));
        else
            ++skipped;
    }
    TrainingResult res = supervised_mle(seqs, default_theta0(kind), kind, cfg);
    res.excluded = skipped;
    return res;
}

inline TrainingResult train_em(const std::vector<PreparedTrellis> &data, const ModelParams &init,
                               const TrainingConfig &cfg = {})
{
    std::vector<EmInput> in;
    in.reserve(data.size());
    for (const PreparedTrellis &p : data)
        in.push_back({&p.trellis, &p.features});
    return em_train(in, init, cfg);
}

/// Mean distance between consecutive fixes, the unlabeled stand-in for the typical path length.
inline double characteristic_length(const std::vector<Sample> &data)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const Sample &s : data)
        for (std::size_t k = 1; k < s.observations.size(); ++k) {
            sum += distance(s.observations[k - 1].point, s.observations[k].point);
            ++n;
        }
    return n ? sum / static_cast<double>(n) : 0.0;
}

} // namespace crfmatch
