#include "seqlearn/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "seqlearn/curriculum.hpp"

namespace seqlearn::engine {

using scenegen::Split;

std::string eval_record_jsonl(const EvalRecord& r) {
    return nlohmann::json{{"run_id", r.run_id},
                          {"episode", r.episode},
                          {"task", r.task},
                          {"epoch", r.epoch},
                          {"cumulative_task_trials", r.cumulative_task_trials},
                          {"holdout_accuracy", r.holdout_accuracy}}
        .dump();
}

std::string probe_record_jsonl(const ProbeRecord& r) {
    return nlohmann::json{{"run_id", r.run_id},
                          {"probe_episode", r.probe_episode},
                          {"old_task", r.old_task},
                          {"batches_elapsed", r.batches_elapsed},
                          {"accuracy", r.accuracy}}
        .dump();
}

EvalRecord eval_record_from_jsonl(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    EvalRecord r;
    r.run_id = j.at("run_id").get<int>();
    r.episode = j.at("episode").get<int>();
    r.task = j.at("task").get<int>();
    r.epoch = j.at("epoch").get<int>();
    r.cumulative_task_trials = j.at("cumulative_task_trials").get<long long>();
    r.holdout_accuracy = j.at("holdout_accuracy").get<double>();
    return r;
}

ProbeRecord probe_record_from_jsonl(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    ProbeRecord r;
    r.run_id = j.at("run_id").get<int>();
    r.probe_episode = j.at("probe_episode").get<int>();
    r.old_task = j.at("old_task").get<int>();
    r.batches_elapsed = j.at("batches_elapsed").get<long long>();
    r.accuracy = j.at("accuracy").get<double>();
    return r;
}

// --- ImageCache ----------------------------------------------------------------

ImageCache::ImageCache(const scenegen::Dataset& dataset, size_t max_bytes) : dataset_(dataset) {
    image_floats_ = 3 * static_cast<size_t>(dataset.config.height) * dataset.config.width;
    const size_t holdout_bytes = dataset.holdout.size() * image_floats_ * sizeof(float);
    const size_t train_bytes = dataset.train.size() * image_floats_ * sizeof(float);
    // Everything is rendered up front so shared use across run workers stays
    // read-only.
    if (holdout_bytes <= max_bytes) {
        cache_holdout_ = true;
        holdout_.resize(dataset.holdout.size() * image_floats_);
        for (size_t i = 0; i < dataset.holdout.size(); ++i)
            scenegen::render_into(dataset.holdout[i], dataset.config,
                                  holdout_.data() + i * image_floats_);
    }
    if (cache_holdout_ && holdout_bytes + train_bytes <= max_bytes) {
        cache_train_ = true;
        train_.resize(dataset.train.size() * image_floats_);
        for (size_t i = 0; i < dataset.train.size(); ++i)
            scenegen::render_into(dataset.train[i], dataset.config,
                                  train_.data() + i * image_floats_);
    }
}

void ImageCache::get(Split split, size_t index, float* out) const {
    const auto& scenes = dataset_.split(split);
    if (index >= scenes.size()) throw RunError("image index out of range");
    const bool cached = split == Split::Train ? cache_train_ : cache_holdout_;
    if (cached) {
        const auto& store = split == Split::Train ? train_ : holdout_;
        std::copy_n(store.data() + index * image_floats_, image_floats_, out);
    } else {
        scenegen::render_into(scenes[index], dataset_.config, out);
    }
}

// --- Runner ---------------------------------------------------------------------

Runner::Runner(const config::RunConfig& cfg, const design::RunSpec& spec,
               const scenegen::Dataset& dataset, const ImageCache& cache)
    : cfg_(cfg), spec_(spec), dataset_(dataset), cache_(cache), net_(cfg.model) {
    if (spec_.order.empty()) throw RunError("run spec has no task order");
    for (int gid : spec_.order)
        tasks_.push_back(scenegen::TaskSpec::from_global(gid, cfg_.gen.values_per_dim));
    run_seed_ = spec_.seed;
    cfg_hash_ = config::config_hash(cfg_);
    holdout_labels_.resize(tasks_.size());
    train_labels_.resize(tasks_.size());
}

const std::vector<uint8_t>& Runner::train_labels(int slot) const {
    auto& cached = train_labels_[static_cast<size_t>(slot)];
    if (cached.empty()) {
        cached.resize(dataset_.train.size());
        for (size_t i = 0; i < dataset_.train.size(); ++i)
            cached[i] = scenegen::label(dataset_.train[i], tasks_[static_cast<size_t>(slot)]) ? 1
                                                                                             : 0;
    }
    return cached;
}

RunState Runner::init_state() const {
    RunState s;
    s.weights = net_.init_snapshot(derive_seed(run_seed_, "init"));
    s.optim = net_.init_optim(cfg_.maml.enabled ? cfg_.maml.outer_lr : cfg_.train.lr,
                              cfg_.train.weight_decay);
    s.episode = 0;
    s.trained_counts.assign(tasks_.size(), 0);
    return s;
}

void Runner::fill_batch(const Batch& batch, std::vector<float>& images,
                        std::vector<int>& task_ids, std::vector<uint8_t>& labels) const {
    const size_t img = cache_.image_floats();
    images.resize(batch.size() * img);
    task_ids.resize(batch.size());
    labels.resize(batch.size());
    for (size_t e = 0; e < batch.size(); ++e) {
        const auto [idx, slot] = batch[e];
        cache_.get(Split::Train, static_cast<size_t>(idx), images.data() + e * img);
        task_ids[e] = tasks_[static_cast<size_t>(slot)].global_id;
        labels[e] = train_labels(slot)[static_cast<size_t>(idx)];
    }
}

double Runner::evaluate_slot(const RunState& state, int slot) const {
    auto& lab = holdout_labels_[static_cast<size_t>(slot)];
    if (lab.empty()) {
        lab.resize(dataset_.holdout.size());
        for (size_t i = 0; i < dataset_.holdout.size(); ++i)
            lab[i] = scenegen::label(dataset_.holdout[i], tasks_[static_cast<size_t>(slot)]) ? 1
                                                                                             : 0;
    }
    const size_t n = dataset_.holdout.size();
    const size_t img = cache_.image_floats();
    constexpr size_t kChunk = 512;
    std::vector<float> images(std::min(n, kChunk) * img);
    std::vector<int> ids(std::min(n, kChunk), tasks_[static_cast<size_t>(slot)].global_id);
    std::vector<float> logits;
    long long correct = 0;
    for (size_t start = 0; start < n; start += kChunk) {
        const size_t count = std::min(kChunk, n - start);
        for (size_t i = 0; i < count; ++i)
            cache_.get(Split::Holdout, start + i, images.data() + i * img);
        nnet::BatchView<float> view;
        view.images = images.data();
        view.task_ids = ids.data();
        view.labels = lab.data() + start;
        view.count = static_cast<int>(count);
        net_.forward(state.weights, view, nnet::Mode::Eval, logits);
        for (size_t i = 0; i < count; ++i) {
            const bool yes = logits[i] > 0.0f;
            if (yes == (lab[start + i] != 0)) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// Stratified single-task draw used by probes and meta-test adaptation.
namespace {

Runner::Batch stratified_task_batch(const std::vector<uint8_t>& labels, int slot,
                                    long long batch_size, Rng& rng) {
    std::vector<long long> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] ? pos : neg).push_back(static_cast<long long>(i));
    rng.shuffle(pos);
    rng.shuffle(neg);
    Runner::Batch out;
    out.reserve(static_cast<size_t>(batch_size));
    size_t pi = 0, ni = 0;
    bool want_pos = true;
    while (static_cast<long long>(out.size()) < batch_size) {
        bool take_pos;
        if (pi < pos.size() && ni < neg.size())
            take_pos = want_pos;
        else if (pi < pos.size())
            take_pos = true;
        else if (ni < neg.size())
            take_pos = false;
        else
            break;
        out.push_back({take_pos ? pos[pi++] : neg[ni++], slot});
        want_pos = !want_pos;
    }
    return out;
}

}  // namespace

std::vector<Runner::Batch> Runner::epoch_batches(
    int episode, int epoch, const std::vector<long long>& allocation,
    const std::vector<std::vector<long long>>& plan_counts,
    const std::vector<int>& active_slots) const {
    std::vector<scenegen::TaskSpec> active_tasks;
    for (int slot : active_slots) active_tasks.push_back(tasks_[static_cast<size_t>(slot)]);
    const auto assignment = scenegen::assign_epoch_tasks(
        dataset_, active_tasks, allocation,
        derive_seed(run_seed_, "assign", static_cast<uint64_t>(episode),
                    static_cast<uint64_t>(epoch)));

    std::vector<std::vector<long long>> per_slot(active_slots.size());
    for (size_t i = 0; i < assignment.slot_of_image.size(); ++i)
        per_slot[static_cast<size_t>(assignment.slot_of_image[i])].push_back(
            static_cast<long long>(i));

    Rng rng(derive_seed(run_seed_, "deal", static_cast<uint64_t>(episode),
                        static_cast<uint64_t>(epoch)));
    for (auto& list : per_slot) rng.shuffle(list);

    std::vector<Batch> batches(plan_counts.size());
    std::vector<size_t> cursor(active_slots.size(), 0);
    for (size_t b = 0; b < plan_counts.size(); ++b) {
        auto& batch = batches[b];
        for (size_t s = 0; s < active_slots.size(); ++s) {
            for (long long k = 0; k < plan_counts[b][s]; ++k)
                batch.push_back({per_slot[s][cursor[s]++], active_slots[s]});
        }
        rng.shuffle(batch);
    }
    return batches;
}

void Runner::base_train_step(RunState& state, const Batch& batch) {
    std::vector<float> images;
    std::vector<int> ids;
    std::vector<uint8_t> labels;
    fill_batch(batch, images, ids, labels);
    nnet::BatchView<float> view;
    view.images = images.data();
    view.task_ids = ids.data();
    view.labels = labels.data();
    view.count = static_cast<int>(batch.size());
    std::vector<float> grad(net_.layout().param_count);
    Rng drop(derive_seed(run_seed_, "dropout", state.weights.step));
    Rng* drop_ptr = cfg_.model.fc_dropout > 0 ? &drop : nullptr;
    net_.loss_and_grad(state.weights, view, grad, drop_ptr, true);
    net_.adam_step(state.weights, grad, state.optim);
}

std::pair<Runner::Batch, Runner::Batch> Runner::split_batch_halves(const Batch& batch) {
    // Alternate per slot so both halves carry the batch's task mix.
    std::pair<Batch, Batch> halves;
    std::map<int, int> seen;
    for (const auto& item : batch) {
        int& k = seen[item.second];
        (k % 2 == 0 ? halves.first : halves.second).push_back(item);
        ++k;
    }
    return halves;
}

void Runner::maml_micro_episode(RunState& state, const Batch& batch) {
    const auto [half1, half2] = split_batch_halves(batch);
    std::map<int, Batch> h1, h2;
    for (const auto& item : half1) h1[item.second].push_back(item);
    for (const auto& item : half2) h2[item.second].push_back(item);

    long long total2 = 0;
    for (const auto& [slot, items] : h2) total2 += static_cast<long long>(items.size());
    if (total2 == 0) throw RunError("micro-episode has an empty meta-training half");

    const size_t n_params = net_.layout().param_count;
    std::vector<float> agg(n_params, 0.0f);
    std::vector<float> grad(n_params);
    std::vector<float> images;
    std::vector<int> ids;
    std::vector<uint8_t> labels;

    nnet::Snapshot<float> adapted;
    for (const auto& [slot, meta_items] : h2) {
        // Inner step: one task-specific gradient step from the shared
        // weights. Skipped outright at inner lr 0 (adapted == shared).
        if (cfg_.maml.inner_lr > 0 && h1.count(slot) && !h1[slot].empty()) {
            fill_batch(h1[slot], images, ids, labels);
            nnet::BatchView<float> view;
            view.images = images.data();
            view.task_ids = ids.data();
            view.labels = labels.data();
            view.count = static_cast<int>(h1[slot].size());
            net_.loss_and_grad(state.weights, view, grad, nullptr, false);
            adapted = state.weights;
            const auto lr = static_cast<float>(cfg_.maml.inner_lr);
            for (size_t i = 0; i < n_params; ++i) adapted.params[i] -= lr * grad[i];
        } else {
            adapted = state.weights;
        }

        // Outer gradient at the adapted weights (first-order rule); running
        // statistics advance through the adapted copy.
        fill_batch(meta_items, images, ids, labels);
        nnet::BatchView<float> view;
        view.images = images.data();
        view.task_ids = ids.data();
        view.labels = labels.data();
        view.count = static_cast<int>(meta_items.size());
        net_.loss_and_grad(adapted, view, grad, nullptr, true);
        state.weights.stats = adapted.stats;

        const auto w = static_cast<float>(static_cast<double>(meta_items.size()) /
                                          static_cast<double>(total2));
        for (size_t i = 0; i < n_params; ++i) agg[i] += w * grad[i];
    }
    net_.adam_step(state.weights, agg, state.optim);
}

double Runner::meta_test_evaluate(const RunState& state, int slot, int episode, int epoch) const {
    if (!cfg_.maml.meta_test_adapt || cfg_.maml.inner_lr == 0.0)
        return evaluate_slot(state, slot);
    Rng rng(derive_seed(run_seed_, "adapt",
                        static_cast<uint64_t>(episode) * 100000 + static_cast<uint64_t>(epoch),
                        static_cast<uint64_t>(slot)));
    const auto batch = stratified_task_batch(train_labels(slot), slot, cfg_.train.batch_size / 2,
                                             rng);
    std::vector<float> images;
    std::vector<int> ids;
    std::vector<uint8_t> labels;
    fill_batch(batch, images, ids, labels);
    nnet::BatchView<float> view;
    view.images = images.data();
    view.task_ids = ids.data();
    view.labels = labels.data();
    view.count = static_cast<int>(batch.size());
    std::vector<float> grad(net_.layout().param_count);
    RunState adapted;
    adapted.weights = state.weights;
    net_.loss_and_grad(adapted.weights, view, grad, nullptr, false);
    const auto lr = static_cast<float>(cfg_.maml.inner_lr);
    for (size_t i = 0; i < grad.size(); ++i) adapted.weights.params[i] -= lr * grad[i];
    return evaluate_slot(adapted, slot);
}

Runner::EpochResult Runner::run_epoch(RunState& state, int episode, int epoch,
                                      const std::vector<long long>& allocation,
                                      const std::vector<std::vector<long long>>& plan_counts,
                                      const std::vector<int>& active_slots) {
    const auto batches = epoch_batches(episode, epoch, allocation, plan_counts, active_slots);
    for (const auto& batch : batches) {
        if (cfg_.maml.enabled)
            maml_micro_episode(state, batch);
        else
            base_train_step(state, batch);
    }
    EpochResult res;
    for (int slot : active_slots)
        res.accuracies.push_back(cfg_.maml.enabled ? meta_test_evaluate(state, slot, episode, epoch)
                                                   : evaluate_slot(state, slot));
    return res;
}

bool Runner::run_phase(RunState& state, int episode, const std::vector<int>& active_slots,
                       const std::vector<long long>& allocation, TrialLog& log, Sinks& sinks) {
    const auto plan =
        curriculum::make_batch_plan({episode, cfg_.train.epoch_size, allocation},
                                    cfg_.train.n_batches, cfg_.train.batch_size);

    std::vector<int> first_criterion(active_slots.size(), -1);
    std::vector<double> budget_accuracy(active_slots.size(), -1.0);
    std::vector<double> last_accuracy(active_slots.size(), 0.0);
    int epochs = 0;
    bool converged = false;
    for (int epoch = 1; epoch <= cfg_.train.max_epochs; ++epoch) {
        epochs = epoch;
        const auto res = run_epoch(state, episode, epoch, allocation, plan.per_batch_counts,
                                   active_slots);
        bool all_ok = true;
        for (size_t s = 0; s < active_slots.size(); ++s) {
            const double acc = res.accuracies[s];
            last_accuracy[s] = acc;
            const long long trials = static_cast<long long>(epoch) * allocation[s];
            EvalRecord rec;
            rec.run_id = spec_.run_id;
            rec.episode = episode;
            rec.task = active_slots[s] + 1;
            rec.epoch = epoch;
            rec.cumulative_task_trials = trials;
            rec.holdout_accuracy = acc;
            log.evals.push_back(rec);
            if (sinks.run_log) (*sinks.run_log) << eval_record_jsonl(rec) << '\n' << std::flush;
            if (acc >= cfg_.train.criterion && first_criterion[s] < 0) first_criterion[s] = epoch;
            if (budget_accuracy[s] < 0 && trials >= cfg_.train.budget_trials)
                budget_accuracy[s] = acc;
            if (acc < cfg_.train.criterion) all_ok = false;
        }
        if (all_ok) {
            converged = true;
            break;
        }
    }

    for (size_t s = 0; s < active_slots.size(); ++s) {
        CellRecord cell;
        cell.ordinal = active_slots[s] + 1;
        cell.episode = episode;
        cell.times_trained = episode - active_slots[s];
        cell.trials_to_criterion =
            first_criterion[s] > 0 ? static_cast<long long>(first_criterion[s]) * allocation[s]
                                   : -1;
        cell.accuracy_at_budget = budget_accuracy[s];
        cell.epochs_run = epochs;
        cell.converged = last_accuracy[s] >= cfg_.train.criterion;
        log.cells.push_back(cell);
    }
    log.epochs_per_episode.push_back(epochs);
    return converged;
}

void Runner::run_probes(const RunState& state, int episode, Sinks& sinks, ProbeLog* out) {
    auto emit = [&](const ProbeRecord& r) {
        if (out) out->records.push_back(r);
        if (sinks.probe_log) (*sinks.probe_log) << probe_record_jsonl(r) << '\n' << std::flush;
    };

    const int new_slot = episode - 1;
    for (int old = 0; old < new_slot; ++old) {
        ProbeRecord r;
        r.run_id = spec_.run_id;
        r.probe_episode = episode;
        r.old_task = old + 1;
        r.batches_elapsed = 0;
        r.accuracy = evaluate_slot(state, old);
        emit(r);
    }

    RunState clone;
    clone.weights = state.weights;
    clone.optim = state.optim;
    clone.episode = state.episode;
    clone.trained_counts = state.trained_counts;

    const long long per_epoch =
        static_cast<long long>(dataset_.train.size()) / cfg_.train.batch_size;
    if (per_epoch < 1) throw RunError("train split smaller than one probe batch");
    long long done = 0;
    for (int probe_epoch = 0; done < cfg_.probes.duration_batches; ++probe_epoch) {
        Rng rng(derive_seed(run_seed_, "probe", static_cast<uint64_t>(episode),
                            static_cast<uint64_t>(probe_epoch)));
        // One pass of stratified new-task batches; reshuffles every pass.
        auto pool = stratified_task_batch(train_labels(new_slot), new_slot,
                                          per_epoch * cfg_.train.batch_size, rng);
        for (long long b = 0; b < per_epoch && done < cfg_.probes.duration_batches; ++b) {
            Batch batch(pool.begin() + b * cfg_.train.batch_size,
                        pool.begin() + (b + 1) * cfg_.train.batch_size);
            base_train_step(clone, batch);
            ++done;
            if (done % cfg_.probes.interval_batches == 0) {
                for (int old = 0; old < new_slot; ++old) {
                    ProbeRecord r;
                    r.run_id = spec_.run_id;
                    r.probe_episode = episode;
                    r.old_task = old + 1;
                    r.batches_elapsed = done;
                    r.accuracy = evaluate_slot(clone, old);
                    emit(r);
                }
            }
        }
    }
}

std::filesystem::path Runner::checkpoint_path(const std::filesystem::path& dir,
                                              int episode) const {
    return dir / ("checkpoint_ep" + std::to_string(episode) + ".bin");
}

void Runner::save_checkpoint(const std::filesystem::path& dir, const RunState& state) const {
    std::filesystem::create_directories(dir);
    nnet::save_weights(checkpoint_path(dir, state.episode), net_.layout(), state.weights,
                       &state.optim);
}

RunState Runner::load_checkpoint(const std::filesystem::path& file, int episode) const {
    auto loaded = nnet::load_weights<float>(file, net_.layout());
    if (!loaded.optim.has_value())
        throw RunError("checkpoint has no optimizer state: " + file.string());
    RunState s;
    s.weights = std::move(loaded.snap);
    s.optim = std::move(*loaded.optim);
    s.episode = episode;
    s.trained_counts.assign(tasks_.size(), 0);
    for (size_t slot = 0; slot < tasks_.size(); ++slot)
        s.trained_counts[slot] =
            std::max(0LL, static_cast<long long>(episode) - static_cast<long long>(slot));
    return s;
}

TrialLog Runner::run_sequence(Sinks sinks, int from_episode, std::optional<RunState> resume,
                              ProbeLog* probes_out) {
    if (cfg_.train.episodes > static_cast<int>(tasks_.size()))
        throw RunError("plan order shorter than the episode count");
    TrialLog log;
    log.run_id = spec_.run_id;
    log.config_hash = cfg_hash_;
    if (probes_out) probes_out->run_id = spec_.run_id;

    RunState state = resume ? std::move(*resume) : init_state();
    if (from_episode == 0 && sinks.write_checkpoints) save_checkpoint(sinks.checkpoint_dir, state);

    for (int episode = from_episode + 1; episode <= cfg_.train.episodes; ++episode) {
        if (cfg_.probes.enabled && episode >= 2) run_probes(state, episode, sinks, probes_out);
        if (cfg_.train.reset_moments_between_episodes) {
            const double lr = state.optim.lr;
            const double wd = state.optim.weight_decay;
            state.optim = net_.init_optim(lr, wd);
        }
        std::vector<int> active(static_cast<size_t>(episode));
        std::iota(active.begin(), active.end(), 0);
        const auto allocation =
            curriculum::make_allocation(cfg_.curriculum, episode, cfg_.train.epoch_size).counts;
        const bool ok = run_phase(state, episode, active, allocation, log, sinks);
        state.episode = episode;
        for (int slot : active) state.trained_counts[static_cast<size_t>(slot)] += 1;
        if (sinks.write_checkpoints) save_checkpoint(sinks.checkpoint_dir, state);
        if (!ok) {
            if (log.failed_episode == 0) log.failed_episode = episode;
            if (cfg_.train.abort_on_episode_failure) {
                log.completed = false;
                return log;
            }
        }
    }
    log.completed = log.failed_episode == 0;
    return log;
}

TrialLog Runner::run_simultaneous(Sinks sinks) {
    if (static_cast<int>(tasks_.size()) != cfg_.gen.n_tasks())
        throw RunError("simultaneous mode needs the full task set in the plan order");
    TrialLog log;
    log.run_id = spec_.run_id;
    log.config_hash = cfg_hash_;

    RunState state = init_state();
    if (sinks.write_checkpoints) save_checkpoint(sinks.checkpoint_dir, state);
    std::vector<int> active(tasks_.size());
    std::iota(active.begin(), active.end(), 0);
    const std::vector<double> quotas(
        tasks_.size(), static_cast<double>(cfg_.train.epoch_size) /
                           static_cast<double>(tasks_.size()));
    const auto allocation = curriculum::largest_remainder(quotas, cfg_.train.epoch_size);
    const bool ok = run_phase(state, 1, active, allocation, log, sinks);
    // One phase trains every task exactly once regardless of slot position.
    for (auto& cell : log.cells) cell.times_trained = 1;
    state.episode = 1;
    if (sinks.write_checkpoints) save_checkpoint(sinks.checkpoint_dir, state);
    log.completed = ok;
    if (!ok) log.failed_episode = 1;
    return log;
}

}  // namespace seqlearn::engine
