#include "seqlearn/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqlearn/analysis.hpp"
#include "seqlearn/common.hpp"
#include "seqlearn/engine.hpp"
#include "seqlearn/figures.hpp"

namespace seqlearn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "seqlearn 0.1.0";

// --- manifest -----------------------------------------------------------------

void update_manifest(const fs::path& out_dir, const config::RunConfig& cfg,
                     const std::vector<fs::path>& new_files) {
    const fs::path mpath = out_dir / "manifest.json";
    json m;
    if (fs::exists(mpath)) m = json::parse(read_text_file(mpath));
    m["version"] = kVersion;
    m["config_hash"] = hex64(config_hash(cfg));
    m["master_seed"] = cfg.master_seed;
    if (!m.contains("files")) m["files"] = json::object();
    for (const auto& f : new_files) {
        const auto rel = fs::relative(f, out_dir).generic_string();
        m["files"][rel] = {{"bytes", fs::file_size(f)}, {"checksum", hex64(file_checksum(f))}};
    }
    write_text_file(mpath, m.dump(2) + "\n");
}

void write_config_snapshot(const config::RunConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    write_text_file(fs::path(cfg.output_dir) / "config.json", config_to_json_text(cfg));
}

scenegen::Dataset load_or_build_dataset(const config::RunConfig& cfg) {
    const fs::path scenes = fs::path(cfg.output_dir) / "dataset" / "scenes.jsonl";
    if (fs::exists(scenes)) return scenegen::read_manifest(scenes, cfg.gen);
    return scenegen::build_dataset(cfg.gen.n_train, cfg.gen.n_holdout,
                                   derive_seed(cfg.master_seed, "dataset"), cfg.gen);
}

int dimension_index(const std::string& name) {
    if (name == "shape") return scenegen::kShape;
    if (name == "color") return scenegen::kColor;
    if (name == "texture") return scenegen::kTexture;
    throw RunError("not a dimension: " + name);
}

}  // namespace

design::ReplicationPlan build_plan(const config::RunConfig& cfg) {
    design::RunModeFlags flags;
    flags.task_mod_layer = cfg.model.task_mod_layer;
    flags.maml = cfg.maml.enabled;
    if (cfg.simultaneous) {
        design::ReplicationPlan plan;
        for (int b = 0; b < cfg.plan.n_blocks; ++b) {
            design::RunSpec spec;
            spec.run_id = b;
            spec.dimensions = {0, 1, 2};
            for (int t = 0; t < cfg.gen.n_tasks(); ++t) spec.order.push_back(t);
            spec.curriculum = cfg.curriculum;
            spec.seed = derive_seed(cfg.master_seed, "run", static_cast<uint64_t>(b));
            spec.flags = flags;
            plan.runs.push_back(std::move(spec));
        }
        return plan;
    }
    if (cfg.plan.dimension == "heterogeneous")
        return design::heterogeneous_plan(cfg.plan.runs_per_permutation, cfg.gen.values_per_dim,
                                          cfg.train.episodes, cfg.master_seed, cfg.curriculum,
                                          flags);
    return design::homogeneous_plan(dimension_index(cfg.plan.dimension), cfg.plan.n_blocks,
                                    cfg.gen.values_per_dim, cfg.master_seed, cfg.curriculum,
                                    flags);
}

void cmd_generate(const config::RunConfig& cfg) {
    write_config_snapshot(cfg);
    const fs::path dir = fs::path(cfg.output_dir) / "dataset";
    fs::create_directories(dir);
    auto dataset = scenegen::build_dataset(cfg.gen.n_train, cfg.gen.n_holdout,
                                           derive_seed(cfg.master_seed, "dataset"), cfg.gen);
    scenegen::write_manifest(dir / "scenes.jsonl", dataset);
    scenegen::write_tensor_file(dir / "train.f32", dataset.train, cfg.gen);
    scenegen::write_tensor_file(dir / "holdout.f32", dataset.holdout, cfg.gen);
    update_manifest(cfg.output_dir, cfg,
                    {dir / "scenes.jsonl", dir / "train.f32", dir / "holdout.f32",
                     fs::path(cfg.output_dir) / "config.json"});
    std::cout << "dataset: " << dataset.train.size() << " train / " << dataset.holdout.size()
              << " holdout scenes -> " << dir.string() << "\n";
}

void cmd_plan(const config::RunConfig& cfg) {
    write_config_snapshot(cfg);
    const fs::path dir = fs::path(cfg.output_dir) / "plan";
    fs::create_directories(dir);
    auto plan = build_plan(cfg);
    design::write_plan_json(dir / "plan.json", plan);
    design::write_plan_csv(dir / "plan.csv", plan, cfg.gen.values_per_dim);
    update_manifest(cfg.output_dir, cfg, {dir / "plan.json", dir / "plan.csv"});
    std::cout << "plan: " << plan.runs.size() << " runs -> " << (dir / "plan.json").string()
              << "\n";
}

namespace {

design::ReplicationPlan load_or_build_plan(const config::RunConfig& cfg) {
    const fs::path p = fs::path(cfg.output_dir) / "plan" / "plan.json";
    if (fs::exists(p)) return design::read_plan_json(p);
    return build_plan(cfg);
}

// Derives per-(task, episode) outcomes from a run log; the log is the one
// source of truth so resumed runs summarize correctly.
json summarize_run_log(const fs::path& log_file, const config::RunConfig& cfg) {
    std::ifstream is(log_file);
    if (!is) throw RunError("cannot open " + log_file.string());
    std::map<std::pair<int, int>, std::vector<engine::EvalRecord>> groups;
    for (std::string line; std::getline(is, line);) {
        if (line.empty()) continue;
        auto rec = engine::eval_record_from_jsonl(line);
        groups[{rec.episode, rec.task}].push_back(rec);
    }
    json cells = json::array();
    for (auto& [key, recs] : groups) {
        std::sort(recs.begin(), recs.end(),
                  [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
        long long trials_to_criterion = -1;
        double accuracy_at_budget = -1;
        for (const auto& r : recs) {
            if (trials_to_criterion < 0 && r.holdout_accuracy >= cfg.train.criterion)
                trials_to_criterion = r.cumulative_task_trials;
            if (accuracy_at_budget < 0 && r.cumulative_task_trials >= cfg.train.budget_trials)
                accuracy_at_budget = r.holdout_accuracy;
        }
        cells.push_back({{"episode", key.first},
                         {"task", key.second},
                         {"times_trained", key.first - key.second + 1},
                         {"trials_to_criterion", trials_to_criterion},
                         {"accuracy_at_budget", accuracy_at_budget},
                         {"epochs", recs.back().epoch},
                         {"final_accuracy", recs.back().holdout_accuracy}});
    }
    return cells;
}

int latest_checkpoint(const fs::path& run_dir, int max_episode) {
    int best = -1;
    for (int e = 0; e <= max_episode; ++e)
        if (fs::exists(run_dir / "checkpoints" / ("checkpoint_ep" + std::to_string(e) + ".bin")))
            best = e;
    return best;
}

void execute_run(const config::RunConfig& cfg, const design::RunSpec& spec,
                 const scenegen::Dataset& dataset, const engine::ImageCache& cache,
                 bool resume) {
    const fs::path run_dir =
        fs::path(cfg.output_dir) / "runs" / ("run_" + std::to_string(spec.run_id));
    fs::create_directories(run_dir / "checkpoints");

    engine::Runner runner(cfg, spec, dataset, cache);
    const int total_eps = cfg.simultaneous ? 1 : cfg.train.episodes;
    int from = 0;
    std::optional<engine::RunState> state;
    if (resume) {
        // An aborted run is a result, not an interruption; leave it alone.
        const fs::path summary_path = run_dir / "run_summary.json";
        if (cfg.train.abort_on_episode_failure && fs::exists(summary_path)) {
            const auto s = json::parse(read_text_file(summary_path));
            if (s.value("failed_episode", 0) > 0) {
                std::cout << "run " << spec.run_id << ": failed at episode "
                          << s["failed_episode"] << ", not resuming\n";
                return;
            }
        }
        const int have = latest_checkpoint(run_dir, total_eps);
        if (have >= total_eps) {
            std::cout << "run " << spec.run_id << ": already complete, skipping\n";
            return;
        }
        if (have > 0) {
            from = have;
            state = runner.load_checkpoint(
                run_dir / "checkpoints" / ("checkpoint_ep" + std::to_string(have) + ".bin"),
                have);
        }
    }

    std::ofstream run_log(run_dir / "run_log.jsonl",
                          from > 0 ? std::ios::app : std::ios::trunc);
    std::ofstream probe_log;
    if (cfg.probes.enabled)
        probe_log.open(run_dir / "probe_log.jsonl", from > 0 ? std::ios::app : std::ios::trunc);

    engine::Sinks sinks;
    sinks.run_log = &run_log;
    sinks.probe_log = cfg.probes.enabled ? &probe_log : nullptr;
    sinks.checkpoint_dir = run_dir / "checkpoints";
    sinks.write_checkpoints = true;

    engine::TrialLog log = cfg.simultaneous
                               ? runner.run_simultaneous(sinks)
                               : runner.run_sequence(sinks, from, std::move(state));

    json summary;
    summary["run_id"] = spec.run_id;
    summary["config_hash"] = hex64(config_hash(cfg));
    summary["completed"] = log.completed;
    summary["failed_episode"] = log.failed_episode;
    summary["maml_meta_test_adapt"] = cfg.maml.enabled ? json(cfg.maml.meta_test_adapt) : json();
    summary["cells"] = summarize_run_log(run_dir / "run_log.jsonl", cfg);
    write_text_file(run_dir / "run_summary.json", summary.dump(2) + "\n");
}

}  // namespace

void cmd_run(const config::RunConfig& cfg, int parallel, bool resume) {
    write_config_snapshot(cfg);
    auto dataset = load_or_build_dataset(cfg);
    engine::ImageCache cache(dataset);
    auto plan = load_or_build_plan(cfg);
    if (plan.runs.empty()) throw RunError("plan has no runs");

    parallel_for(plan.runs.size(), parallel, [&](size_t i) {
        execute_run(cfg, plan.runs[i], dataset, cache, resume);
    });

    std::vector<fs::path> files;
    for (const auto& spec : plan.runs) {
        const fs::path run_dir =
            fs::path(cfg.output_dir) / "runs" / ("run_" + std::to_string(spec.run_id));
        files.push_back(run_dir / "run_log.jsonl");
        files.push_back(run_dir / "run_summary.json");
        if (cfg.probes.enabled && fs::exists(run_dir / "probe_log.jsonl"))
            files.push_back(run_dir / "probe_log.jsonl");
    }
    update_manifest(cfg.output_dir, cfg, files);
    std::cout << "executed " << plan.runs.size() << " run(s) -> "
              << (fs::path(cfg.output_dir) / "runs").string() << "\n";
}

void cmd_probe(const config::RunConfig& cfg, int parallel) {
    auto dataset = load_or_build_dataset(cfg);
    engine::ImageCache cache(dataset);
    auto plan = load_or_build_plan(cfg);
    if (cfg.simultaneous) throw RunError("probes apply to sequential runs only");

    std::vector<fs::path> files;
    parallel_for(plan.runs.size(), parallel, [&](size_t i) {
        const auto& spec = plan.runs[i];
        const fs::path run_dir =
            fs::path(cfg.output_dir) / "runs" / ("run_" + std::to_string(spec.run_id));
        engine::Runner runner(cfg, spec, dataset, cache);
        std::ofstream probe_log(run_dir / "probe_log.jsonl", std::ios::trunc);
        if (!probe_log) throw RunError("cannot write probe log in " + run_dir.string());
        engine::Sinks sinks;
        sinks.probe_log = &probe_log;
        for (int episode = 2; episode <= cfg.train.episodes; ++episode) {
            const fs::path ckpt = run_dir / "checkpoints" /
                                  ("checkpoint_ep" + std::to_string(episode - 1) + ".bin");
            if (!fs::exists(ckpt))
                throw RunError("missing checkpoint for probe: " + ckpt.string() +
                               " (execute `run` first)");
            auto state = runner.load_checkpoint(ckpt, episode - 1);
            runner.run_probes(state, episode, sinks, nullptr);
        }
    });
    for (const auto& spec : plan.runs)
        files.push_back(fs::path(cfg.output_dir) / "runs" /
                        ("run_" + std::to_string(spec.run_id)) / "probe_log.jsonl");
    update_manifest(cfg.output_dir, cfg, files);
    std::cout << "probed " << plan.runs.size() << " run(s)\n";
}

// --- analysis -------------------------------------------------------------------

namespace {

struct RunLogs {
    std::vector<int> run_ids;
    std::vector<std::vector<engine::EvalRecord>> evals;      // per run
    std::vector<std::vector<engine::ProbeRecord>> probes;    // per run (may be empty)
};

RunLogs read_all_logs(const config::RunConfig& cfg) {
    RunLogs out;
    const fs::path runs_dir = fs::path(cfg.output_dir) / "runs";
    if (!fs::exists(runs_dir)) throw RunError("no runs directory under " + cfg.output_dir);
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(runs_dir))
        if (e.is_directory() && e.path().filename().string().starts_with("run_"))
            dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    const std::string expect_hash = hex64(config_hash(cfg));
    for (const auto& dir : dirs) {
        const fs::path log = dir / "run_log.jsonl";
        if (!fs::exists(log)) continue;
        const fs::path summary = dir / "run_summary.json";
        if (fs::exists(summary)) {
            const auto s = json::parse(read_text_file(summary));
            if (s.at("config_hash").get<std::string>() != expect_hash)
                throw RunError("mixed-config logs: " + dir.string() +
                               " was produced by a different config");
        }
        std::vector<engine::EvalRecord> evals;
        std::ifstream is(log);
        for (std::string line; std::getline(is, line);)
            if (!line.empty()) evals.push_back(engine::eval_record_from_jsonl(line));
        if (evals.empty()) continue;
        out.run_ids.push_back(evals.front().run_id);
        out.evals.push_back(std::move(evals));
        std::vector<engine::ProbeRecord> probes;
        if (fs::exists(dir / "probe_log.jsonl")) {
            std::ifstream ps(dir / "probe_log.jsonl");
            for (std::string line; std::getline(ps, line);)
                if (!line.empty()) probes.push_back(engine::probe_record_from_jsonl(line));
        }
        out.probes.push_back(std::move(probes));
    }
    if (out.evals.empty()) throw RunError("no run logs found under " + runs_dir.string());
    return out;
}

std::vector<analysis::CellObservation> observations_from_evals(
    const std::vector<engine::EvalRecord>& evals, const config::RunConfig& cfg) {
    std::map<std::pair<int, int>, std::vector<const engine::EvalRecord*>> groups;
    for (const auto& r : evals) groups[{r.episode, r.task}].push_back(&r);
    std::vector<analysis::CellObservation> cells;
    for (auto& [key, recs] : groups) {
        std::sort(recs.begin(), recs.end(),
                  [](const auto* a, const auto* b) { return a->epoch < b->epoch; });
        analysis::CellObservation obs;
        obs.ordinal = key.second;
        obs.times_trained = key.first - key.second + 1;
        for (const auto* r : recs) {
            if (obs.trials_to_criterion < 0 && r->holdout_accuracy >= cfg.train.criterion)
                obs.trials_to_criterion = r->cumulative_task_trials;
            if (obs.accuracy_at_budget < 0 &&
                r->cumulative_task_trials >= cfg.train.budget_trials)
                obs.accuracy_at_budget = r->holdout_accuracy;
        }
        cells.push_back(obs);
    }
    return cells;
}

struct ProbeSeriesData {
    int run_id = 0;
    int probe_episode = 0;
    int old_task = 0;
    std::vector<double> t, accuracy;
};

std::vector<ProbeSeriesData> collect_probe_series(const RunLogs& logs) {
    std::vector<ProbeSeriesData> series;
    for (size_t r = 0; r < logs.probes.size(); ++r) {
        std::map<std::pair<int, int>, ProbeSeriesData> by_key;
        for (const auto& rec : logs.probes[r]) {
            auto& s = by_key[{rec.probe_episode, rec.old_task}];
            s.run_id = rec.run_id;
            s.probe_episode = rec.probe_episode;
            s.old_task = rec.old_task;
            s.t.push_back(static_cast<double>(rec.batches_elapsed));
            s.accuracy.push_back(rec.accuracy);
        }
        for (auto& [key, s] : by_key) {
            // records arrive in batch order already, but sort defensively
            std::vector<size_t> idx(s.t.size());
            std::iota(idx.begin(), idx.end(), size_t{0});
            std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return s.t[a] < s.t[b]; });
            ProbeSeriesData sorted = s;
            for (size_t i = 0; i < idx.size(); ++i) {
                sorted.t[i] = s.t[idx[i]];
                sorted.accuracy[i] = s.accuracy[idx[i]];
            }
            series.push_back(std::move(sorted));
        }
    }
    return series;
}

void write_metric_table_csv(const fs::path& path, const analysis::MetricTable& table) {
    std::ofstream os(path);
    os << "ordinal,times_trained,n,mean_trials_to_criterion,sem_trials,mean_accuracy_at_budget,"
          "sem_accuracy,sem_valid\n";
    for (const auto& c : table.cells)
        os << c.ordinal << ',' << c.times_trained << ',' << c.n << ',' << c.mean_trials << ','
           << c.sem_trials << ',' << c.mean_accuracy_at_budget << ',' << c.sem_accuracy_at_budget
           << ',' << (c.sem_valid ? 1 : 0) << '\n';
}

void write_loglog_csv(const fs::path& path, const analysis::MetricTable& table) {
    std::ofstream os(path);
    os << "ordinal,loglog_slope,r_squared,n_points\n";
    for (const auto& c : table.ordinal_curves)
        os << c.ordinal << ',' << c.loglog_slope << ',' << c.r_squared << ',' << c.n_points
           << '\n';
}

// Mean y over matched x per group label.
std::map<int, std::map<double, std::pair<double, int>>> group_mean(
    const std::vector<std::tuple<int, double, double>>& rows) {
    std::map<int, std::map<double, std::pair<double, int>>> acc;
    for (const auto& [g, x, y] : rows) {
        auto& cell = acc[g][x];
        cell.first += y;
        cell.second += 1;
    }
    return acc;
}

void write_grouped_csv(const fs::path& path, const char* header,
                       const std::map<int, std::map<double, std::pair<double, int>>>& groups) {
    std::ofstream os(path);
    os << header << '\n';
    for (const auto& [g, xs] : groups)
        for (const auto& [x, sum_n] : xs)
            os << g << ',' << x << ',' << sum_n.first / sum_n.second << ',' << sum_n.second
               << '\n';
}

std::vector<figures::Series> grouped_series(
    const std::map<int, std::map<double, std::pair<double, int>>>& groups,
    const std::string& label_prefix) {
    std::vector<figures::Series> out;
    for (const auto& [g, xs] : groups) {
        figures::Series s;
        s.label = label_prefix + std::to_string(g);
        for (const auto& [x, sum_n] : xs) {
            s.x.push_back(x);
            s.y.push_back(sum_n.first / sum_n.second);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void write_figures(const config::RunConfig& cfg, const RunLogs& logs,
                   const analysis::MetricTable& table,
                   const std::vector<ProbeSeriesData>& probe_series,
                   const std::vector<analysis::ForgettingFit>& probe_beta_fits,
                   const fs::path& fig_dir) {
    fs::create_directories(fig_dir);

    // fig3a: new-task accuracy trajectories by ordinal.
    {
        std::vector<std::tuple<int, double, double>> rows;
        for (const auto& run : logs.evals)
            for (const auto& r : run)
                if (r.task == r.episode)
                    rows.push_back({r.task, static_cast<double>(r.cumulative_task_trials),
                                    r.holdout_accuracy});
        auto groups = group_mean(rows);
        write_grouped_csv(fig_dir / "fig3a.csv", "ordinal,trials,mean_accuracy,n", groups);
        figures::write_svg_plot(fig_dir / "fig3a.svg", grouped_series(groups, "task "),
                                {"New-task holdout accuracy", "training trials", "accuracy",
                                 true, false});
    }
    // fig3b: first task's accuracy per retraining pass.
    {
        std::vector<std::tuple<int, double, double>> rows;
        for (const auto& run : logs.evals)
            for (const auto& r : run)
                if (r.task == 1)
                    rows.push_back({r.episode, static_cast<double>(r.cumulative_task_trials),
                                    r.holdout_accuracy});
        auto groups = group_mean(rows);
        write_grouped_csv(fig_dir / "fig3b.csv", "times_trained,trials,mean_accuracy,n", groups);
        figures::write_svg_plot(fig_dir / "fig3b.svg", grouped_series(groups, "pass "),
                                {"Task 1 accuracy by retraining pass", "training trials",
                                 "accuracy", true, false});
    }
    // fig3c/fig3e from the metric table; fig3d/fig3f restrict to new tasks.
    {
        std::vector<std::tuple<int, double, double>> c_rows, e_rows, d_rows, f_rows;
        for (const auto& cell : table.cells) {
            if (cell.n > 0 && cell.mean_trials > 0)
                c_rows.push_back({cell.ordinal, static_cast<double>(cell.times_trained),
                                  cell.mean_trials});
            if (cell.mean_accuracy_at_budget > 0)
                e_rows.push_back({cell.ordinal, static_cast<double>(cell.times_trained),
                                  cell.mean_accuracy_at_budget});
            if (cell.times_trained == 1) {
                if (cell.mean_trials > 0) d_rows.push_back({1, cell.ordinal, cell.mean_trials});
                if (cell.mean_accuracy_at_budget > 0)
                    f_rows.push_back({1, cell.ordinal, cell.mean_accuracy_at_budget});
            }
        }
        auto gc = group_mean(c_rows);
        write_grouped_csv(fig_dir / "fig3c.csv", "ordinal,times_trained,mean_trials,n", gc);
        figures::write_svg_plot(fig_dir / "fig3c.svg", grouped_series(gc, "task "),
                                {"Trials to criterion vs times trained", "times trained",
                                 "trials to criterion", true, true});
        auto ge = group_mean(e_rows);
        write_grouped_csv(fig_dir / "fig3e.csv", "ordinal,times_trained,mean_accuracy,n", ge);
        figures::write_svg_plot(fig_dir / "fig3e.svg", grouped_series(ge, "task "),
                                {"Accuracy after the trial budget", "times trained", "accuracy",
                                 true, false});
        auto gd = group_mean(d_rows);
        write_grouped_csv(fig_dir / "fig3d.csv", "series,episode,mean_trials,n", gd);
        figures::write_svg_plot(fig_dir / "fig3d.svg", grouped_series(gd, "new task"),
                                {"New-task trials to criterion", "episode",
                                 "trials to criterion", true, true});
        auto gf = group_mean(f_rows);
        write_grouped_csv(fig_dir / "fig3f.csv", "series,episode,mean_accuracy,n", gf);
        figures::write_svg_plot(fig_dir / "fig3f.svg", grouped_series(gf, "new task"),
                                {"New-task accuracy after the budget", "episode", "accuracy",
                                 false, false});
    }
    // fig4a: forgetting curves of task 1; fig4b: exponential decay rates.
    if (!probe_series.empty()) {
        std::vector<std::tuple<int, double, double>> rows;
        for (const auto& s : probe_series)
            if (s.old_task == 1)
                for (size_t i = 0; i < s.t.size(); ++i)
                    rows.push_back({s.probe_episode, s.t[i], s.accuracy[i]});
        auto groups = group_mean(rows);
        write_grouped_csv(fig_dir / "fig4a.csv", "probe_episode,batches,mean_accuracy,n", groups);
        figures::write_svg_plot(fig_dir / "fig4a.svg", grouped_series(groups, "episode "),
                                {"Task 1 forgetting during new-task training",
                                 "training batches", "accuracy", false, false});

        std::vector<std::tuple<int, double, double>> beta_rows;
        for (size_t i = 0; i < probe_series.size(); ++i)
            beta_rows.push_back({probe_series[i].old_task,
                                 static_cast<double>(probe_series[i].probe_episode -
                                                     probe_series[i].old_task),
                                 probe_beta_fits[i].beta});
        auto gb = group_mean(beta_rows);
        write_grouped_csv(fig_dir / "fig4b.csv", "ordinal,times_trained,mean_beta,n", gb);
        figures::write_svg_plot(fig_dir / "fig4b.svg", grouped_series(gb, "task "),
                                {"Exponential decay rate vs times trained", "times trained",
                                 "decay rate", false, false});
    }
    // fig7: per-task trajectories for simultaneous runs.
    if (cfg.simultaneous) {
        std::vector<std::tuple<int, double, double>> rows;
        for (const auto& run : logs.evals)
            for (const auto& r : run)
                rows.push_back({r.task, static_cast<double>(r.cumulative_task_trials),
                                r.holdout_accuracy});
        auto groups = group_mean(rows);
        write_grouped_csv(fig_dir / "fig7.csv", "task,trials_per_task,mean_accuracy,n", groups);
        figures::write_svg_plot(fig_dir / "fig7.svg", grouped_series(groups, "task "),
                                {"Simultaneous training accuracy", "trials per task", "accuracy",
                                 true, false});
    }
}

config::RunConfig effective_config(const config::RunConfig& cli_cfg) {
    // The run directory's own snapshot wins; the command line only locates it.
    const fs::path snapshot = fs::path(cli_cfg.output_dir) / "config.json";
    if (fs::exists(snapshot)) {
        auto cfg = config::load_config(snapshot);
        cfg.output_dir = cli_cfg.output_dir;
        return cfg;
    }
    return cli_cfg;
}

}  // namespace

void cmd_analyze(const config::RunConfig& cli_cfg) {
    const auto cfg = effective_config(cli_cfg);
    const auto logs = read_all_logs(cfg);
    const fs::path adir = fs::path(cfg.output_dir) / "analysis";
    fs::create_directories(adir);
    std::vector<fs::path> files;

    // replication metrics
    std::vector<std::vector<analysis::CellObservation>> reps;
    for (const auto& evals : logs.evals) reps.push_back(observations_from_evals(evals, cfg));
    const auto table = analysis::aggregate_metrics(reps);
    write_metric_table_csv(adir / "metric_table.csv", table);
    write_loglog_csv(adir / "loglog_curves.csv", table);
    files.push_back(adir / "metric_table.csv");
    files.push_back(adir / "loglog_curves.csv");

    // forgetting fits
    auto probe_series = collect_probe_series(logs);
    std::vector<analysis::ForgettingFit> beta_fits;
    if (probe_series.empty()) {
        std::cout << "no probe logs found; skipping forgetting fits\n";
    } else {
        std::ofstream fits(adir / "fits.csv");
        fits << "run_id,probe_episode,task,family,alpha,beta,gamma,train_mse,eval_mse,winner\n";
        std::vector<analysis::ComparisonEntry> entries;
        for (const auto& s : probe_series) {
            const auto m = analysis::strength_transform(s.accuracy);
            // full-series exponential fit feeds the decay-rate figure
            beta_fits.push_back(analysis::fit_exponential(s.t, m));
            if (s.t.size() < 6) continue;
            auto entry = analysis::split_fit_evaluate(s.t, m);
            entries.push_back(entry);
            const auto win = analysis::family_name(entry.winner);
            for (const auto* fit : {&entry.exponential, &entry.power})
                fits << s.run_id << ',' << s.probe_episode << ',' << s.old_task << ','
                     << analysis::family_name(fit->family) << ',' << fit->alpha << ','
                     << fit->beta << ',' << fit->gamma << ',' << fit->train_mse << ','
                     << fit->eval_mse << ',' << win << '\n';
        }
        fits.close();
        files.push_back(adir / "fits.csv");
        const auto agg = analysis::aggregate_comparisons(entries);
        json cmp{{"series", entries.size()},
                 {"exponential_wins", agg.exponential_wins},
                 {"power_wins", agg.power_wins},
                 {"mean_train_mse_exponential", agg.mean_train_mse_exponential},
                 {"mean_train_mse_power", agg.mean_train_mse_power},
                 {"mean_eval_mse_exponential", agg.mean_eval_mse_exponential},
                 {"mean_eval_mse_power", agg.mean_eval_mse_power}};
        write_text_file(adir / "comparison.json", cmp.dump(2) + "\n");
        files.push_back(adir / "comparison.json");
    }

    write_figures(cfg, logs, table, probe_series, beta_fits,
                  fs::path(cfg.output_dir) / "figures");
    update_manifest(cfg.output_dir, cfg, files);
    std::cout << "analysis written to " << adir.string() << "\n";
}

void cmd_export_figures(const config::RunConfig& cli_cfg,
                        const std::optional<fs::path>& baseline_dir) {
    const auto cfg = effective_config(cli_cfg);
    const auto logs = read_all_logs(cfg);
    std::vector<std::vector<analysis::CellObservation>> reps;
    for (const auto& evals : logs.evals) reps.push_back(observations_from_evals(evals, cfg));
    const auto table = analysis::aggregate_metrics(reps);
    auto probe_series = collect_probe_series(logs);
    std::vector<analysis::ForgettingFit> beta_fits;
    for (const auto& s : probe_series)
        beta_fits.push_back(analysis::fit_exponential(s.t, analysis::strength_transform(s.accuracy)));
    const fs::path fig_dir = fs::path(cfg.output_dir) / "figures";
    write_figures(cfg, logs, table, probe_series, beta_fits, fig_dir);

    if (baseline_dir) {
        // Trials-to-criterion increase of the baseline relative to this
        // directory, per (ordinal, times trained) cell.
        auto base_cfg = cli_cfg;
        base_cfg.output_dir = baseline_dir->string();
        const auto bcfg = effective_config(base_cfg);
        const auto blogs = read_all_logs(bcfg);
        std::vector<std::vector<analysis::CellObservation>> breps;
        for (const auto& evals : blogs.evals)
            breps.push_back(observations_from_evals(evals, bcfg));
        const auto btable = analysis::aggregate_metrics(breps);

        std::map<std::pair<int, int>, double> ours, theirs;
        for (const auto& c : table.cells)
            if (c.n > 0 && c.mean_trials > 0) ours[{c.ordinal, c.times_trained}] = c.mean_trials;
        for (const auto& c : btable.cells)
            if (c.n > 0 && c.mean_trials > 0) theirs[{c.ordinal, c.times_trained}] = c.mean_trials;

        std::ofstream os(fig_dir / "fig_compare_trials.csv");
        os << "ordinal,times_trained,trials_increase\n";
        std::vector<std::tuple<int, double, double>> rows;
        for (const auto& [key, ot] : ours)
            if (auto it = theirs.find(key); it != theirs.end()) {
                os << key.first << ',' << key.second << ',' << it->second - ot << '\n';
                rows.push_back({key.first, static_cast<double>(key.second), it->second - ot});
            }
        os.close();
        figures::write_svg_plot(fig_dir / "fig_compare_trials.svg",
                                grouped_series(group_mean(rows), "task "),
                                {"Baseline minus this run: trials to criterion",
                                 "times trained", "trials increase", false, false});
    }
    std::cout << "figures written to " << fig_dir.string() << "\n";
}

// --- entry point ------------------------------------------------------------------

int run_main(int argc, char** argv) {
    CLI::App app{"continual-learning experiment engine for synthetic visual tasks"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, preset, out_dir, baseline;
    uint64_t seed = 0;
    bool seed_set = false, resume = false;
    int parallel = 1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--preset", preset, "paper|desk|custom (base when no --config)");
        sub->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
            seed_set = true;
        });
        sub->add_option("--out", out_dir, "output directory override");
    };

    auto* g = app.add_subcommand("generate", "build the dataset files");
    add_common(g);
    auto* p = app.add_subcommand("plan", "write the replication plan");
    add_common(p);
    auto* r = app.add_subcommand("run", "execute the planned runs");
    add_common(r);
    r->add_option("--parallel", parallel, "worker count");
    r->add_flag("--resume", resume, "resume from checkpoints");
    auto* pr = app.add_subcommand("probe", "run forgetting probes from checkpoints");
    add_common(pr);
    pr->add_option("--parallel", parallel, "worker count");
    auto* an = app.add_subcommand("analyze", "fit curves and aggregate metrics");
    add_common(an);
    auto* ex = app.add_subcommand("export-figures", "write figure data and plots");
    add_common(ex);
    ex->add_option("--baseline", baseline, "baseline run directory for comparison figures");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        config::RunConfig cfg;
        if (!config_path.empty())
            cfg = config::load_config(config_path);
        else if (!preset.empty())
            cfg = config::preset_by_name(preset);
        else
            throw RunError("pass --config FILE or --preset NAME");
        if (seed_set) cfg.master_seed = seed;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        cfg.finalize();
        cfg.validate();

        if (g->parsed()) cmd_generate(cfg);
        if (p->parsed()) cmd_plan(cfg);
        if (r->parsed()) cmd_run(cfg, parallel, resume);
        if (pr->parsed()) cmd_probe(cfg, parallel);
        if (an->parsed()) cmd_analyze(cfg);
        if (ex->parsed())
            cmd_export_figures(cfg, baseline.empty()
                                        ? std::nullopt
                                        : std::optional<fs::path>(baseline));
        return 0;
    } catch (const std::exception& e) {
        json err{{"error", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}

}  // namespace seqlearn::cli
