#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "seqlearn/config.hpp"
#include "seqlearn/design.hpp"
#include "seqlearn/nnet.hpp"
#include "seqlearn/scenegen.hpp"

namespace seqlearn::engine {

// One holdout evaluation of one task at an epoch boundary.
struct EvalRecord {
    int run_id = 0;
    int episode = 0;
    int task = 0;   // 1-based ordinal of the task in the sequence
    int epoch = 0;  // within-episode epoch, 1-based
    long long cumulative_task_trials = 0;  // within the episode
    double holdout_accuracy = 0;
};

// Outcome for one (task, episode) learning opportunity.
struct CellRecord {
    int ordinal = 0;        // episode the task was introduced in
    int episode = 0;
    int times_trained = 0;  // episode - ordinal + 1
    long long trials_to_criterion = -1;  // -1: criterion not reached this episode
    double accuracy_at_budget = -1;      // -1: episode ended before the budget
    int epochs_run = 0;
    bool converged = false;  // task was at criterion when the episode ended
};

struct ProbeRecord {
    int run_id = 0;
    int probe_episode = 0;
    int old_task = 0;  // 1-based ordinal
    long long batches_elapsed = 0;
    double accuracy = 0;
};

struct TrialLog {
    int run_id = 0;
    uint64_t config_hash = 0;
    std::vector<EvalRecord> evals;
    std::vector<CellRecord> cells;
    std::vector<int> epochs_per_episode;
    bool completed = false;
    int failed_episode = 0;  // 0 when none
};

struct ProbeLog {
    int run_id = 0;
    std::vector<ProbeRecord> records;
};

std::string eval_record_jsonl(const EvalRecord& r);
std::string probe_record_jsonl(const ProbeRecord& r);
EvalRecord eval_record_from_jsonl(const std::string& line);
ProbeRecord probe_record_from_jsonl(const std::string& line);

// Renders scenes once and keeps them while the byte budget lasts; beyond it
// images are re-rendered per request (identical output either way).
class ImageCache {
public:
    ImageCache(const scenegen::Dataset& dataset, size_t max_bytes = size_t{512} << 20);
    void get(scenegen::Split split, size_t index, float* out) const;
    size_t image_floats() const { return image_floats_; }

private:
    const scenegen::Dataset& dataset_;
    size_t image_floats_;
    bool cache_train_ = false, cache_holdout_ = false;
    mutable std::vector<float> train_, holdout_;
    mutable std::vector<uint8_t> train_done_, holdout_done_;
};

struct RunState {
    nnet::Snapshot<float> weights;
    nnet::OptimState<float> optim;
    int episode = 0;  // last completed episode
    std::vector<long long> trained_counts;  // per ordinal-1 slot
};

// Output sinks; null streams keep everything in memory only.
struct Sinks {
    std::ostream* run_log = nullptr;
    std::ostream* probe_log = nullptr;
    std::filesystem::path checkpoint_dir;
    bool write_checkpoints = false;
};

// Executes one replication: a task sequence under one config entry. All
// randomness is derived from (master seed, run id, episode, epoch), so a
// resumed run continues bit-identically.
class Runner {
public:
    Runner(const config::RunConfig& cfg, const design::RunSpec& spec,
           const scenegen::Dataset& dataset, const ImageCache& cache);

    const nnet::Network<float>& network() const { return net_; }
    const std::vector<scenegen::TaskSpec>& tasks() const { return tasks_; }

    RunState init_state() const;

    // Episodes from_episode+1 .. cfg.train.episodes. Pass a state loaded
    // from a checkpoint to resume.
    TrialLog run_sequence(Sinks sinks = {}, int from_episode = 0,
                          std::optional<RunState> resume = std::nullopt,
                          ProbeLog* probes_out = nullptr);

    // Single training phase on a uniform mixture of all catalog tasks.
    TrialLog run_simultaneous(Sinks sinks = {});

    // Exposed for the degeneration checks: one batch of (train image index,
    // slot) pairs split into matched halves, and the two update paths.
    using Batch = std::vector<std::pair<long long, int>>;
    static std::pair<Batch, Batch> split_batch_halves(const Batch& batch);
    void base_train_step(RunState& state, const Batch& batch);
    void maml_micro_episode(RunState& state, const Batch& batch);

    double evaluate_slot(const RunState& state, int slot) const;
    double meta_test_evaluate(const RunState& state, int slot, int episode, int epoch) const;

    // Forgetting probe from an episode-start snapshot: clones the state,
    // trains the clone on the new task only, and samples old-task accuracy.
    void run_probes(const RunState& state, int episode, Sinks& sinks, ProbeLog* out);

    std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int episode) const;
    RunState load_checkpoint(const std::filesystem::path& file, int episode) const;
    void save_checkpoint(const std::filesystem::path& dir, const RunState& state) const;

private:
    struct EpochResult {
        std::vector<double> accuracies;  // per active slot
    };

    void fill_batch(const Batch& batch, std::vector<float>& images, std::vector<int>& task_ids,
                    std::vector<uint8_t>& labels) const;
    std::vector<Batch> epoch_batches(int episode, int epoch,
                                     const std::vector<long long>& allocation,
                                     const std::vector<std::vector<long long>>& plan_counts,
                                     const std::vector<int>& active_slots) const;
    EpochResult run_epoch(RunState& state, int episode, int epoch,
                          const std::vector<long long>& allocation,
                          const std::vector<std::vector<long long>>& plan_counts,
                          const std::vector<int>& active_slots);
    bool run_phase(RunState& state, int episode, const std::vector<int>& active_slots,
                   const std::vector<long long>& allocation, TrialLog& log, Sinks& sinks);

    const config::RunConfig& cfg_;
    design::RunSpec spec_;
    const scenegen::Dataset& dataset_;
    const ImageCache& cache_;
    nnet::Network<float> net_;
    std::vector<scenegen::TaskSpec> tasks_;  // per slot
    uint64_t run_seed_ = 0;
    uint64_t cfg_hash_ = 0;
    // Holdout evaluation buffers (images shared across slots).
    mutable std::vector<float> holdout_images_;
    mutable std::vector<std::vector<uint8_t>> holdout_labels_;  // per slot
    mutable std::vector<uint8_t> train_labels_cache_ready_;
    mutable std::vector<std::vector<uint8_t>> train_labels_;  // per slot
    const std::vector<uint8_t>& train_labels(int slot) const;
};

}  // namespace seqlearn::engine
