#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "seqlearn/curriculum.hpp"
#include "seqlearn/nnet.hpp"
#include "seqlearn/scenegen.hpp"

namespace seqlearn::config {

struct TrainParams {
    double criterion = 0.95;
    long long epoch_size = 45000;
    int n_batches = 30;
    long long batch_size = 1500;
    int episodes = 10;
    int max_epochs = 200;
    double lr = 0.0005;
    double weight_decay = 0.0001;
    long long budget_trials = 22500;
    bool reset_moments_between_episodes = false;
    bool abort_on_episode_failure = true;
};

struct MamlConfig {
    bool enabled = false;
    double inner_lr = 0.001;
    double outer_lr = 0.001;
    bool meta_test_adapt = true;  // micro-episode procedure at test time
};

struct ProbeConfig {
    bool enabled = false;
    int interval_batches = 1;
    int duration_batches = 30;
};

struct PlanConfig {
    std::string dimension = "color";  // shape | color | texture | heterogeneous
    int n_blocks = 6;                 // homogeneous latin-square blocks
    int runs_per_permutation = 19;    // heterogeneous only
};

struct RunConfig {
    std::string preset = "custom";  // paper | desk | custom
    uint64_t master_seed = 1;
    scenegen::GenConfig gen;
    nnet::ModelConfig model;
    curriculum::Curriculum curriculum;
    TrainParams train;
    MamlConfig maml;
    ProbeConfig probes;
    bool simultaneous = false;
    PlanConfig plan;
    std::string output_dir = "seqlearn_out";

    // Derives the dependent model fields (input dims, task universe) from
    // the generator config.
    void finalize();
    void validate() const;
};

RunConfig paper_preset();
RunConfig desk_preset();
RunConfig preset_by_name(const std::string& name);

// Strict loader: unknown keys anywhere are errors. A "preset" key selects
// the base values; every other key overrides.
RunConfig load_config(const std::filesystem::path& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);

// Hash of the semantically meaningful fields (excludes output_dir and the
// preset label).
uint64_t config_hash(const RunConfig& cfg);

}  // namespace seqlearn::config
