#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>

#include "seqlearn/engine.hpp"

using namespace seqlearn;
using namespace seqlearn::engine;

namespace {

// Small enough to run episodes in milliseconds; criterion 0 makes every
// episode terminate at the first evaluation.
config::RunConfig micro_config() {
    config::RunConfig c;
    c.preset = "custom";
    c.master_seed = 404;
    c.gen.values_per_dim = 3;
    c.gen.min_objects = 2;
    c.gen.max_objects = 3;
    c.gen.width = 16;
    c.gen.height = 16;
    c.gen.radius_frac_min = 0.08;
    c.gen.radius_frac_max = 0.14;
    c.gen.n_train = 120;
    c.gen.n_holdout = 60;
    c.model.conv_filters = {4, 8};
    c.model.fc_widths = {32};
    c.train.criterion = 0.0;
    c.train.epoch_size = 120;
    c.train.n_batches = 4;
    c.train.batch_size = 30;
    c.train.episodes = 3;
    c.train.max_epochs = 3;
    c.train.budget_trials = 30;
    c.plan.dimension = "color";
    c.plan.n_blocks = 1;
    c.plan.runs_per_permutation = 1;
    c.finalize();
    c.validate();
    return c;
}

struct Fixture {
    config::RunConfig cfg;
    scenegen::Dataset dataset;
    std::unique_ptr<ImageCache> cache;
    design::RunSpec spec;

    explicit Fixture(config::RunConfig c) : cfg(std::move(c)) {
        dataset = scenegen::build_dataset(cfg.gen.n_train, cfg.gen.n_holdout,
                                          derive_seed(cfg.master_seed, "dataset"), cfg.gen);
        cache = std::make_unique<ImageCache>(dataset);
        auto plan = design::homogeneous_plan(scenegen::kColor, 1, cfg.gen.values_per_dim,
                                             cfg.master_seed, cfg.curriculum,
                                             design::RunModeFlags{});
        spec = plan.runs[0];
    }
};

std::string evals_text(const TrialLog& log) {
    std::string out;
    for (const auto& r : log.evals) out += eval_record_jsonl(r) + "\n";
    return out;
}

}  // namespace

TEST_CASE("three-episode run produces the triangular six cells") {
    Fixture f(micro_config());
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();
    CHECK(log.completed);
    CHECK(log.cells.size() == 6);  // 1 + 2 + 3
    CHECK(log.epochs_per_episode == std::vector<int>{1, 1, 1});  // criterion 0

    int seen = 0;
    for (int episode = 1; episode <= 3; ++episode)
        for (int ordinal = 1; ordinal <= episode; ++ordinal) {
            bool found = false;
            for (const auto& c : log.cells)
                if (c.episode == episode && c.ordinal == ordinal) {
                    found = true;
                    CHECK(c.times_trained == episode - ordinal + 1);
                }
            CHECK(found);
            ++seen;
        }
    CHECK(seen == 6);
}

TEST_CASE("single-episode run yields one cell") {
    auto cfg = micro_config();
    cfg.train.episodes = 1;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();
    CHECK(log.cells.size() == 1);
}

TEST_CASE("trial accounting: per-task trials equal epochs times allocation") {
    auto cfg = micro_config();
    cfg.train.criterion = 0.75;  // force a few epochs
    cfg.train.max_epochs = 2;
    cfg.train.abort_on_episode_failure = false;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();

    for (int episode = 1; episode <= 3; ++episode) {
        const auto alloc =
            curriculum::make_allocation(cfg.curriculum, episode, cfg.train.epoch_size).counts;
        const int epochs = log.epochs_per_episode[static_cast<size_t>(episode - 1)];
        long long total = 0;
        for (const auto& r : log.evals) {
            if (r.episode != episode) continue;
            CHECK(r.cumulative_task_trials ==
                  static_cast<long long>(r.epoch) * alloc[static_cast<size_t>(r.task - 1)]);
            if (r.epoch == epochs) total += r.cumulative_task_trials;
        }
        CHECK(total == static_cast<long long>(epochs) * cfg.train.epoch_size);
    }
}

TEST_CASE("criterion semantics: episodes end only when every task passes") {
    auto cfg = micro_config();
    cfg.train.criterion = 0.55;
    cfg.train.max_epochs = 4;
    cfg.train.abort_on_episode_failure = false;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();
    for (int episode = 1; episode <= 3; ++episode) {
        const int epochs = log.epochs_per_episode[static_cast<size_t>(episode - 1)];
        bool all_ok = true;
        for (const auto& r : log.evals)
            if (r.episode == episode && r.epoch == epochs && r.holdout_accuracy < 0.55)
                all_ok = false;
        if (epochs < cfg.train.max_epochs) CHECK(all_ok);
    }
}

TEST_CASE("identical config and seed reproduce the log byte for byte") {
    Fixture f(micro_config());
    Runner a(f.cfg, f.spec, f.dataset, *f.cache);
    Runner b(f.cfg, f.spec, f.dataset, *f.cache);
    auto la = a.run_sequence();
    auto lb = b.run_sequence();
    CHECK(evals_text(la) == evals_text(lb));

    auto cfg2 = micro_config();
    cfg2.master_seed = 405;
    Fixture g(cfg2);
    Runner c(g.cfg, g.spec, g.dataset, *g.cache);
    auto lc = c.run_sequence();
    CHECK(evals_text(la) != evals_text(lc));
}

TEST_CASE("probes leave the main run untouched and report the right series") {
    auto cfg_off = micro_config();
    auto cfg_on = micro_config();
    cfg_on.probes.enabled = true;
    cfg_on.probes.interval_batches = 2;
    cfg_on.probes.duration_batches = 4;

    Fixture base(cfg_off);
    Fixture probed(cfg_on);
    Runner off(base.cfg, base.spec, base.dataset, *base.cache);
    Runner on(probed.cfg, probed.spec, probed.dataset, *probed.cache);

    auto log_off = off.run_sequence();
    ProbeLog probes;
    auto log_on = on.run_sequence({}, 0, std::nullopt, &probes);
    CHECK(evals_text(log_off) == evals_text(log_on));

    // Episodes 2 and 3 probe 1 and 2 old tasks; each series has the t=0
    // sample plus duration/interval points.
    const int per_series = 1 + 4 / 2;
    CHECK(probes.records.size() == static_cast<size_t>((1 + 2) * per_series));
    for (const auto& r : probes.records) {
        CHECK(r.probe_episode >= 2);
        CHECK(r.old_task < r.probe_episode);
        CHECK(r.accuracy >= 0.0);
        CHECK(r.accuracy <= 1.0);
    }
    int zeros = 0;
    for (const auto& r : probes.records)
        if (r.batches_elapsed == 0) ++zeros;
    CHECK(zeros == 3);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "seqlearn_engine_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto cfg = micro_config();
    cfg.train.criterion = 0.55;
    cfg.train.max_epochs = 2;
    cfg.train.abort_on_episode_failure = false;
    Fixture f(cfg);

    Runner full(f.cfg, f.spec, f.dataset, *f.cache);
    Sinks sinks;
    sinks.write_checkpoints = true;
    sinks.checkpoint_dir = dir;
    auto log_full = full.run_sequence(sinks);

    // Interrupted variant: replay episodes 1..2 with checkpoints, then a
    // fresh runner resumes from the episode-2 checkpoint.
    auto cfg_cut = cfg;
    cfg_cut.train.episodes = 2;
    auto dir2 = fs::temp_directory_path() / "seqlearn_engine_ckpt2";
    fs::remove_all(dir2);
    fs::create_directories(dir2);
    Fixture f2(cfg_cut);
    Runner interrupted(f2.cfg, f2.spec, f2.dataset, *f2.cache);
    Sinks sinks2;
    sinks2.write_checkpoints = true;
    sinks2.checkpoint_dir = dir2;
    auto log_cut = interrupted.run_sequence(sinks2);

    Fixture f3(cfg);  // full episode count again
    Runner resumed(f3.cfg, f3.spec, f3.dataset, *f3.cache);
    auto state = resumed.load_checkpoint(dir2 / "checkpoint_ep2.bin", 2);
    auto log_tail = resumed.run_sequence({}, 2, std::move(state));

    // Records for episodes 1-2 match the interrupted run; episode 3 matches
    // the uninterrupted run's tail.
    std::string full_recs = evals_text(log_full);
    std::string stitched = evals_text(log_cut) + evals_text(log_tail);
    CHECK(full_recs == stitched);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("maml micro-episode with inner lr 0 equals the base update on the second half") {
    auto cfg_maml = micro_config();
    cfg_maml.maml.enabled = true;
    cfg_maml.maml.inner_lr = 0.0;
    cfg_maml.maml.outer_lr = cfg_maml.train.lr;
    auto cfg_base = micro_config();

    Fixture fm(cfg_maml);
    Fixture fb(cfg_base);
    Runner maml(fm.cfg, fm.spec, fm.dataset, *fm.cache);
    Runner base(fb.cfg, fb.spec, fb.dataset, *fb.cache);

    auto sm = maml.init_state();
    auto sb = base.init_state();
    REQUIRE(sm.weights.params == sb.weights.params);

    Runner::Batch batch;
    for (long long i = 0; i < 30; ++i) batch.push_back({i, 0});
    auto [h1, h2] = Runner::split_batch_halves(batch);
    CHECK(h1.size() == 15);
    CHECK(h2.size() == 15);

    maml.maml_micro_episode(sm, batch);
    base.base_train_step(sb, h2);

    REQUIRE(sm.weights.params.size() == sb.weights.params.size());
    double max_rel = 0;
    for (size_t i = 0; i < sm.weights.params.size(); ++i) {
        const double a = sm.weights.params[i], b = sb.weights.params[i];
        max_rel = std::max(max_rel, std::abs(a - b) / std::max(1e-12, std::abs(b)));
    }
    CHECK(max_rel < 1e-6);
    CHECK(sm.weights.stats == sb.weights.stats);
    CHECK(sm.optim.m == sb.optim.m);
}

TEST_CASE("maml with positive inner lr diverges from the base step") {
    auto cfg_maml = micro_config();
    cfg_maml.maml.enabled = true;
    cfg_maml.maml.inner_lr = 0.01;
    cfg_maml.maml.outer_lr = cfg_maml.train.lr;
    Fixture fm(cfg_maml);
    Fixture fb(micro_config());
    Runner maml(fm.cfg, fm.spec, fm.dataset, *fm.cache);
    Runner base(fb.cfg, fb.spec, fb.dataset, *fb.cache);
    auto sm = maml.init_state();
    auto sb = base.init_state();
    Runner::Batch batch;
    for (long long i = 0; i < 30; ++i) batch.push_back({i, 0});
    auto h2 = Runner::split_batch_halves(batch).second;
    maml.maml_micro_episode(sm, batch);
    base.base_train_step(sb, h2);
    CHECK(sm.weights.params != sb.weights.params);
}

TEST_CASE("maml run counts both half-batches in the trial accounting") {
    auto cfg = micro_config();
    cfg.maml.enabled = true;
    cfg.maml.inner_lr = 0.001;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();
    for (const auto& r : log.evals) {
        const auto alloc =
            curriculum::make_allocation(cfg.curriculum, r.episode, cfg.train.epoch_size).counts;
        CHECK(r.cumulative_task_trials ==
              static_cast<long long>(r.epoch) * alloc[static_cast<size_t>(r.task - 1)]);
    }
}

TEST_CASE("meta-test with inner lr 0 equals plain evaluation") {
    auto cfg = micro_config();
    cfg.maml.enabled = true;
    cfg.maml.inner_lr = 0.0;
    cfg.maml.meta_test_adapt = true;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto state = runner.init_state();
    CHECK(runner.meta_test_evaluate(state, 0, 1, 1) == runner.evaluate_slot(state, 0));

    cfg.maml.inner_lr = 0.05;
    Fixture g(cfg);
    Runner adapted(g.cfg, g.spec, g.dataset, *g.cache);
    auto state2 = adapted.init_state();
    const double a = adapted.meta_test_evaluate(state2, 0, 1, 1);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
}

TEST_CASE("simultaneous mode trains the full task set on a uniform mixture") {
    auto cfg = micro_config();
    cfg.simultaneous = true;
    Fixture f(cfg);
    // The plan order must cover all nine tasks.
    design::RunSpec spec = f.spec;
    spec.order.clear();
    for (int t = 0; t < cfg.gen.n_tasks(); ++t) spec.order.push_back(t);
    Runner runner(f.cfg, spec, f.dataset, *f.cache);
    auto log = runner.run_simultaneous();
    CHECK(log.cells.size() == 9);
    for (const auto& c : log.cells) CHECK(c.times_trained == 1);

    // Uniform mixture: allocations within one example of each other.
    std::vector<long long> trials;
    for (const auto& r : log.evals)
        if (r.epoch == 1) trials.push_back(r.cumulative_task_trials);
    REQUIRE(trials.size() == 9);
    const auto [lo, hi] = std::minmax_element(trials.begin(), trials.end());
    CHECK(*hi - *lo <= 1);
    CHECK(std::accumulate(trials.begin(), trials.end(), 0LL) == cfg.train.epoch_size);
}

TEST_CASE("a failed episode aborts with a partial log when configured") {
    auto cfg = micro_config();
    cfg.train.criterion = 1.0;
    cfg.train.max_epochs = 1;
    cfg.train.abort_on_episode_failure = true;
    Fixture f(cfg);
    Runner runner(f.cfg, f.spec, f.dataset, *f.cache);
    auto log = runner.run_sequence();
    CHECK(!log.completed);
    CHECK(log.failed_episode == 1);
    CHECK(log.cells.size() == 1);

    cfg.train.abort_on_episode_failure = false;
    Fixture g(cfg);
    Runner keep_going(g.cfg, g.spec, g.dataset, *g.cache);
    auto log2 = keep_going.run_sequence();
    CHECK(log2.failed_episode == 1);
    CHECK(log2.cells.size() == 6);
}

TEST_CASE("image cache and direct rendering agree") {
    auto cfg = micro_config();
    auto dataset = scenegen::build_dataset(20, 10, 7, cfg.gen);
    ImageCache cached(dataset);
    ImageCache uncached(dataset, 0);
    std::vector<float> a(cached.image_floats()), b(uncached.image_floats());
    for (size_t i = 0; i < 20; ++i) {
        cached.get(scenegen::Split::Train, i, a.data());
        uncached.get(scenegen::Split::Train, i, b.data());
        CHECK(a == b);
    }
}

TEST_CASE("eval and probe records round trip through jsonl") {
    EvalRecord r{3, 2, 1, 7, 1234, 0.9375};
    auto back = eval_record_from_jsonl(eval_record_jsonl(r));
    CHECK(back.run_id == 3);
    CHECK(back.episode == 2);
    CHECK(back.task == 1);
    CHECK(back.epoch == 7);
    CHECK(back.cumulative_task_trials == 1234);
    CHECK(back.holdout_accuracy == 0.9375);

    ProbeRecord p{4, 3, 2, 17, 0.8125};
    auto pb = probe_record_from_jsonl(probe_record_jsonl(p));
    CHECK(pb.run_id == 4);
    CHECK(pb.probe_episode == 3);
    CHECK(pb.old_task == 2);
    CHECK(pb.batches_elapsed == 17);
    CHECK(pb.accuracy == 0.8125);
}
