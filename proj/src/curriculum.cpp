#include "seqlearn/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "seqlearn/common.hpp"

namespace seqlearn::curriculum {

std::string kind_name(Kind k) {
    switch (k) {
        case Kind::Balanced: return "balanced";
        case Kind::Ratio: return "ratio";
        case Kind::Power: return "power";
    }
    throw std::logic_error("bad curriculum kind");
}

Kind kind_from_name(const std::string& name) {
    if (name == "balanced") return Kind::Balanced;
    if (name == "ratio") return Kind::Ratio;
    if (name == "power") return Kind::Power;
    throw RunError("unknown curriculum kind: " + name);
}

std::vector<long long> largest_remainder(const std::vector<double>& quotas, long long total) {
    const size_t n = quotas.size();
    std::vector<long long> counts(n);
    std::vector<double> frac(n);
    long long assigned = 0;
    for (size_t i = 0; i < n; ++i) {
        if (quotas[i] < 0) throw std::invalid_argument("largest_remainder: negative quota");
        counts[i] = static_cast<long long>(std::floor(quotas[i]));
        frac[i] = quotas[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    long long seats = total - assigned;
    if (seats < 0 || seats > static_cast<long long>(n))
        throw std::logic_error("largest_remainder: quotas inconsistent with total");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return frac[a] > frac[b]; });
    for (long long s = 0; s < seats; ++s) counts[order[static_cast<size_t>(s)]] += 1;
    return counts;
}

namespace {

void check_feasible(int k, long long epoch_size) {
    if (k < 1) throw std::invalid_argument("episode index must be >= 1");
    if (epoch_size < k)
        throw RunError("epoch_size " + std::to_string(epoch_size) +
                       " cannot give every one of " + std::to_string(k) + " tasks an example");
}

// The allocation invariant demands at least one example per task; shift
// singles from the largest bins if rounding starved anyone.
void enforce_min_one(std::vector<long long>& counts) {
    for (size_t i = 0; i < counts.size(); ++i) {
        while (counts[i] == 0) {
            auto mx = std::max_element(counts.begin(), counts.end());
            if (*mx <= 1) throw std::logic_error("cannot enforce one example per task");
            *mx -= 1;
            counts[i] += 1;
        }
    }
}

EpisodeAllocation from_shares(int k, long long epoch_size, const std::vector<double>& shares) {
    std::vector<double> quotas(shares.size());
    for (size_t i = 0; i < shares.size(); ++i)
        quotas[i] = shares[i] * static_cast<double>(epoch_size);
    EpisodeAllocation out;
    out.episode = k;
    out.epoch_size = epoch_size;
    out.counts = largest_remainder(quotas, epoch_size);
    enforce_min_one(out.counts);
    return out;
}

std::vector<double> balanced_shares(int k) {
    std::vector<double> s(static_cast<size_t>(k));
    if (k == 1) {
        s[0] = 1.0;
        return s;
    }
    for (int t = 0; t < k - 1; ++t) s[static_cast<size_t>(t)] = 0.5 / static_cast<double>(k - 1);
    s[static_cast<size_t>(k - 1)] = 0.5;
    return s;
}

std::vector<double> ratio_shares(int k, double kappa) {
    if (k <= 2) return balanced_shares(k);
    std::vector<double> s(static_cast<size_t>(k));
    double sum = 0.0;
    for (int t = 0; t < k - 1; ++t) sum += std::pow(kappa, t);
    for (int t = 0; t < k - 1; ++t)
        s[static_cast<size_t>(t)] = 0.5 * std::pow(kappa, t) / sum;
    s[static_cast<size_t>(k - 1)] = 0.5;
    return s;
}

std::vector<double> power_shares(int k, double alpha) {
    std::vector<double> rho(static_cast<size_t>(k));
    double sum = 0.0;
    for (int t = 1; t <= k; ++t) {
        rho[static_cast<size_t>(t - 1)] = std::pow(static_cast<double>(k - t + 1), -alpha);
        sum += rho[static_cast<size_t>(t - 1)];
    }
    for (auto& r : rho) r /= sum;
    return rho;
}

}  // namespace

EpisodeAllocation balanced_allocation(int k, long long epoch_size) {
    check_feasible(k, epoch_size);
    return from_shares(k, epoch_size, balanced_shares(k));
}

EpisodeAllocation ratio_allocation(int k, double kappa, long long epoch_size) {
    check_feasible(k, epoch_size);
    if (kappa < 1.0) throw std::invalid_argument("ratio curriculum requires kappa >= 1");
    return from_shares(k, epoch_size, ratio_shares(k, kappa));
}

EpisodeAllocation power_allocation(int k, double alpha, long long epoch_size) {
    check_feasible(k, epoch_size);
    if (alpha <= 0.0) throw std::invalid_argument("power curriculum requires alpha > 0");
    return from_shares(k, epoch_size, power_shares(k, alpha));
}

EpisodeAllocation make_allocation(const Curriculum& c, int k, long long epoch_size) {
    switch (c.kind) {
        case Kind::Balanced: return balanced_allocation(k, epoch_size);
        case Kind::Ratio: return ratio_allocation(k, c.kappa, epoch_size);
        case Kind::Power: return power_allocation(k, c.alpha, epoch_size);
    }
    throw std::logic_error("bad curriculum kind");
}

std::vector<double> allocation_shares(const Curriculum& c, int k) {
    switch (c.kind) {
        case Kind::Balanced: return balanced_shares(k);
        case Kind::Ratio: return ratio_shares(k, c.kappa);
        case Kind::Power: return power_shares(k, c.alpha);
    }
    throw std::logic_error("bad curriculum kind");
}

BatchPlan make_batch_plan(const EpisodeAllocation& alloc, int n_batches, long long batch_size) {
    if (n_batches < 1) throw std::invalid_argument("n_batches must be >= 1");
    if (static_cast<long long>(n_batches) * batch_size != alloc.epoch_size)
        throw RunError("n_batches * batch_size = " +
                       std::to_string(static_cast<long long>(n_batches) * batch_size) +
                       " must equal epoch_size " + std::to_string(alloc.epoch_size));
    const size_t n_tasks = alloc.counts.size();
    BatchPlan plan;
    plan.n_batches = n_batches;
    plan.batch_size = batch_size;
    plan.per_batch_counts.assign(static_cast<size_t>(n_batches),
                                 std::vector<long long>(n_tasks, 0));

    // Extras rotate through batch indices with a running offset, which keeps
    // every batch total at exactly batch_size.
    long long offset = 0;
    for (size_t t = 0; t < n_tasks; ++t) {
        const long long base = alloc.counts[t] / n_batches;
        const long long extras = alloc.counts[t] % n_batches;
        for (int b = 0; b < n_batches; ++b)
            plan.per_batch_counts[static_cast<size_t>(b)][t] = base;
        for (long long j = 0; j < extras; ++j) {
            const auto b = static_cast<size_t>((offset + j) % n_batches);
            plan.per_batch_counts[b][t] += 1;
        }
        offset = (offset + extras) % n_batches;
    }
    return plan;
}

void write_allocation_csv(const std::filesystem::path& path,
                          const std::vector<EpisodeAllocation>& allocations) {
    std::ofstream os(path);
    if (!os) throw RunError("cannot write " + path.string());
    os << "episode,task,count\n";
    for (const auto& a : allocations)
        for (size_t t = 0; t < a.counts.size(); ++t)
            os << a.episode << ',' << (t + 1) << ',' << a.counts[t] << '\n';
}

void write_batch_plan_csv(const std::filesystem::path& path, const BatchPlan& plan) {
    std::ofstream os(path);
    if (!os) throw RunError("cannot write " + path.string());
    os << "batch,task,count\n";
    for (int b = 0; b < plan.n_batches; ++b)
        for (size_t t = 0; t < plan.per_batch_counts[static_cast<size_t>(b)].size(); ++t)
            os << (b + 1) << ',' << (t + 1) << ','
               << plan.per_batch_counts[static_cast<size_t>(b)][t] << '\n';
}

}  // namespace seqlearn::curriculum
