#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seqlearn/curriculum.hpp"

namespace seqlearn::design {

// A task order is a sequence of global task ids (dimension * V + value).
using TaskOrder = std::vector<int>;

int global_task_id(int dimension, int value, int values_per_dim);
int task_dimension(int global_id, int values_per_dim);
int task_value(int global_id, int values_per_dim);

// n orders over symbols 0..n-1; each symbol appears exactly once in every
// ordinal position across the block.
struct LatinBlock {
    std::vector<std::vector<int>> orders;
};

LatinBlock latin_square(int n, uint64_t rng_seed);
bool is_latin(const LatinBlock& block);

struct RunModeFlags {
    int task_mod_layer = 0;  // 0 = off, 1..n_conv = modulated layer
    bool maml = false;
};

struct RunSpec {
    int run_id = 0;
    std::vector<int> dimensions;  // dimensions the sequence draws from
    TaskOrder order;              // global task ids, one per episode
    curriculum::Curriculum curriculum;
    uint64_t seed = 0;
    RunModeFlags flags;
};

struct ReplicationPlan {
    std::vector<RunSpec> runs;
};

// n_blocks Latin-square blocks of within-dimension task orders. Sequence
// length equals values_per_dim, so one block yields values_per_dim runs.
ReplicationPlan homogeneous_plan(int dimension, int n_blocks, int values_per_dim,
                                 uint64_t master_seed, const curriculum::Curriculum& c,
                                 const RunModeFlags& flags, int first_run_id = 0);

// Cycles dimensions dim_perm[0], dim_perm[1], dim_perm[2], dim_perm[0], ...
// for `length` slots, consuming each dimension's own order front to back.
// length 10 gives the 4/3/3 split.
TaskOrder heterogeneous_sequence(const std::array<int, 3>& dim_perm,
                                 const std::array<TaskOrder, 3>& per_dim_orders, int length);

// runs_per_permutation runs for each of the six dimension permutations,
// arranged so every consecutive block of six covers each permutation once.
ReplicationPlan heterogeneous_plan(int runs_per_permutation, int values_per_dim, int length,
                                   uint64_t master_seed, const curriculum::Curriculum& c,
                                   const RunModeFlags& flags, int first_run_id = 0);

void write_plan_csv(const std::filesystem::path& path, const ReplicationPlan& plan,
                    int values_per_dim);
void write_plan_json(const std::filesystem::path& path, const ReplicationPlan& plan);
ReplicationPlan read_plan_json(const std::filesystem::path& path);

}  // namespace seqlearn::design
