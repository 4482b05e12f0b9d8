#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seqlearn::curriculum {

enum class Kind { Balanced, Ratio, Power };

struct Curriculum {
    Kind kind = Kind::Balanced;
    double kappa = 1.25;  // Ratio: per-step allocation ratio between adjacent tasks, >= 1
    double alpha = 1.14;  // Power: recency exponent, > 0
};

std::string kind_name(Kind k);
Kind kind_from_name(const std::string& name);

// Per-epoch example counts for tasks 1..k of episode k. counts sum exactly
// to epoch_size and every count is >= 1.
struct EpisodeAllocation {
    int episode = 0;
    long long epoch_size = 0;
    std::vector<long long> counts;
};

// Hamilton apportionment: floor the quotas, then hand out the remaining
// seats by descending fractional part, ties to the lower index.
std::vector<long long> largest_remainder(const std::vector<double>& quotas, long long total);

EpisodeAllocation balanced_allocation(int k, long long epoch_size);
EpisodeAllocation ratio_allocation(int k, double kappa, long long epoch_size);
EpisodeAllocation power_allocation(int k, double alpha, long long epoch_size);
EpisodeAllocation make_allocation(const Curriculum& c, int k, long long epoch_size);

// Pre-rounding real-valued shares (sum to 1); exposed for the closed-form
// cross-checks in the tests.
std::vector<double> allocation_shares(const Curriculum& c, int k);

// Splits an allocation across the epoch's batches so that every batch has
// the same task mix: batch b's count for task t is counts[t]/n_batches
// rounded, each batch sums exactly to batch_size.
struct BatchPlan {
    int n_batches = 0;
    long long batch_size = 0;
    std::vector<std::vector<long long>> per_batch_counts;  // [batch][task]
};

BatchPlan make_batch_plan(const EpisodeAllocation& alloc, int n_batches, long long batch_size);

// Audit format: one "episode,task,count" row per task.
void write_allocation_csv(const std::filesystem::path& path,
                          const std::vector<EpisodeAllocation>& allocations);
void write_batch_plan_csv(const std::filesystem::path& path, const BatchPlan& plan);

}  // namespace seqlearn::curriculum
