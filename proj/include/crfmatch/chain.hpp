#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace crfmatch {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(std::span<const double> v) noexcept
{
    double m = kNegInf;
    for (double x : v)
        m = std::max(m, x);
    if (m == kNegInf)
        return kNegInf;
    double s = 0.0;
    for (double x : v)
        s += std::exp(x - m);
    return m + std::log(s);
}

class DeadTrellis : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Normalizes log-weights in place to log-probabilities; returns the log normalizer.
inline double normalize_log(std::vector<double> &v)
{
    const double z = log_sum_exp(v);
    if (z == kNegInf || !std::isfinite(z))
        throw DeadTrellis("layer has no mass");
    for (double &x : v)
        x -= z;
    return z;
}

inline std::vector<double> to_probabilities(const std::vector<double> &log_p)
{
    std::vector<double> p(log_p.size());
    std::transform(log_p.begin(), log_p.end(), p.begin(), [](double x) { return std::exp(x); });
    return p;
}

inline double entropy(const std::vector<double> &p) noexcept
{
    double h = 0.0;
    for (double x : p)
        if (x > 0.0)
            h -= x * std::log(x);
    return std::max(0.0, h);
}

inline std::size_t argmax(const std::vector<double> &v) noexcept
{
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// A chain of discrete layers. Value i of layer l > 0 may follow the values listed in preds[l][i]
/// (ascending) of layer l-1; each value carries a log-weight.
struct LayeredChain
{
    std::vector<std::vector<double>> log_weight;
    std::vector<std::vector<std::vector<std::size_t>>> preds;

    std::size_t layers() const noexcept { return log_weight.size(); }
};

struct ForwardPass
{
    std::vector<std::vector<double>> log_alpha; // normalized per layer
    std::vector<double> log_scale;

    double log_z() const noexcept { return std::accumulate(log_scale.begin(), log_scale.end(), 0.0); }
};

inline void forward_step(const LayeredChain &c, std::size_t l, ForwardPass &out)
{
    std::vector<double> a(c.log_weight[l].size());
    if (l == 0) {
        a = c.log_weight[0];
    } else {
        const auto &prev = out.log_alpha[l - 1];
        std::vector<double> buf;
        for (std::size_t i = 0; i < a.size(); ++i) {
            buf.clear();
            for (std::size_t j : c.preds[l][i])
                buf.push_back(prev[j]);
            a[i] = c.log_weight[l][i] + log_sum_exp(buf);
        }
    }
    out.log_scale.push_back(normalize_log(a));
    out.log_alpha.push_back(std::move(a));
}

inline ForwardPass forward_pass(const LayeredChain &c)
{
    ForwardPass out;
    for (std::size_t l = 0; l < c.layers(); ++l)
        forward_step(c, l, out);
    return out;
}

/// Backward messages excluding each value's own weight, started uniform at layer `last` and run down to
/// layer `first`. Entries for layers outside [first, last] are left empty.
inline std::vector<std::vector<double>> backward_pass(const LayeredChain &c, std::size_t first, std::size_t last)
{
    std::vector<std::vector<double>> beta(c.layers());
    beta[last].assign(c.log_weight[last].size(), 0.0);
    normalize_log(beta[last]);
    for (std::size_t l = last; l > first; --l) {
        const auto &next = beta[l];
        std::vector<std::vector<double>> terms(c.log_weight[l - 1].size());
        for (std::size_t i = 0; i < next.size(); ++i) {
            const double v = c.log_weight[l][i] + next[i];
            for (std::size_t j : c.preds[l][i])
                terms[j].push_back(v);
        }
        std::vector<double> b(terms.size());
        for (std::size_t j = 0; j < b.size(); ++j)
            b[j] = log_sum_exp(terms[j]);
        normalize_log(b);
        beta[l - 1] = std::move(b);
    }
    return beta;
}

inline std::vector<std::vector<double>> backward_pass(const LayeredChain &c)
{
    return backward_pass(c, 0, c.layers() - 1);
}

/// Normalized product of forward and backward messages, as probabilities.
inline std::vector<double> combine(const std::vector<double> &log_alpha, const std::vector<double> &log_beta)
{
    std::vector<double> v(log_alpha.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = log_alpha[i] + log_beta[i];
    normalize_log(v);
    return to_probabilities(v);
}

struct ViterbiResult
{
    std::vector<std::size_t> values;
    double log_weight = kNegInf;
};

inline ViterbiResult viterbi_chain(const LayeredChain &c)
{
    const std::size_t L = c.layers();
    std::vector<std::vector<double>> score(L);
    std::vector<std::vector<std::size_t>> back(L);
    score[0] = c.log_weight[0];
    for (std::size_t l = 1; l < L; ++l) {
        const auto n = c.log_weight[l].size();
        score[l].assign(n, kNegInf);
        back[l].assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            double best = kNegInf;
            std::size_t arg = 0;
            bool any = false;
            for (std::size_t j : c.preds[l][i]) {
                if (!any || score[l - 1][j] > best) {
                    best = score[l - 1][j];
                    arg = j;
                    any = true;
                }
            }
            if (any && best > kNegInf) {
                score[l][i] = c.log_weight[l][i] + best;
                back[l][i] = arg;
            }
        }
    }
    ViterbiResult r;
    const auto &last = score[L - 1];
    if (last.empty())
        throw DeadTrellis("no compatible trajectory");
    std::size_t arg = 0;
    for (std::size_t i = 1; i < last.size(); ++i)
        if (last[i] > last[arg])
            arg = i;
    if (last[arg] == kNegInf)
        throw DeadTrellis("no compatible trajectory");
    r.log_weight = last[arg];
    r.values.assign(L, 0);
    r.values[L - 1] = arg;
    for (std::size_t l = L - 1; l > 0; --l)
        r.values[l - 1] = back[l][r.values[l]];
    return r;
}

} // namespace crfmatch
