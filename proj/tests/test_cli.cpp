#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqlearn/cli.hpp"
#include "seqlearn/common.hpp"

using namespace seqlearn;
namespace fs = std::filesystem;

namespace {

config::RunConfig micro_config(const fs::path& out) {
    config::RunConfig c;
    c.preset = "custom";
    c.master_seed = 31;
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
    c.train.max_epochs = 2;
    c.train.budget_trials = 30;
    c.plan.dimension = "color";
    c.plan.n_blocks = 1;
    c.plan.runs_per_permutation = 1;
    c.output_dir = out.string();
    c.finalize();
    c.validate();
    return c;
}

std::string checksum_of(const fs::path& p) { return hex64(file_checksum(p)); }

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int call_main(std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "seqlearn");
    for (auto& a : args) argv.push_back(a.data());
    return cli::run_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("generate is deterministic: identical checksums on rerun") {
    auto dir = fresh_dir("seqlearn_cli_gen");
    auto cfg = micro_config(dir);
    cli::cmd_generate(cfg);
    REQUIRE(fs::exists(dir / "dataset" / "scenes.jsonl"));
    REQUIRE(fs::exists(dir / "dataset" / "train.f32"));
    REQUIRE(fs::exists(dir / "dataset" / "holdout.f32"));
    REQUIRE(fs::exists(dir / "manifest.json"));
    const auto c1 = checksum_of(dir / "dataset" / "scenes.jsonl");
    const auto t1 = checksum_of(dir / "dataset" / "train.f32");
    cli::cmd_generate(cfg);
    CHECK(checksum_of(dir / "dataset" / "scenes.jsonl") == c1);
    CHECK(checksum_of(dir / "dataset" / "train.f32") == t1);

    const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    CHECK(manifest.at("files").contains("dataset/train.f32"));
    CHECK(manifest.at("config_hash").get<std::string>() == hex64(config_hash(cfg)));
    fs::remove_all(dir);
}

TEST_CASE("plan command writes the replication plan") {
    auto dir = fresh_dir("seqlearn_cli_plan");
    auto cfg = micro_config(dir);
    cli::cmd_plan(cfg);
    auto plan = design::read_plan_json(dir / "plan" / "plan.json");
    CHECK(plan.runs.size() == 3);  // one latin block of three orders
    CHECK(fs::exists(dir / "plan" / "plan.csv"));
    fs::remove_all(dir);
}

TEST_CASE("parallel execution reproduces serial per-run logs") {
    auto dir1 = fresh_dir("seqlearn_cli_par1");
    auto dir4 = fresh_dir("seqlearn_cli_par4");
    auto cfg1 = micro_config(dir1);
    auto cfg4 = micro_config(dir4);
    cli::cmd_run(cfg1, 1, false);
    cli::cmd_run(cfg4, 4, false);
    for (int run = 0; run < 3; ++run) {
        const auto rel = fs::path("runs") / ("run_" + std::to_string(run)) / "run_log.jsonl";
        REQUIRE(fs::exists(dir1 / rel));
        REQUIRE(fs::exists(dir4 / rel));
        CHECK(checksum_of(dir1 / rel) == checksum_of(dir4 / rel));
    }
    fs::remove_all(dir1);
    fs::remove_all(dir4);
}

TEST_CASE("interrupted run resumes to an identical log") {
    auto full_dir = fresh_dir("seqlearn_cli_full");
    auto cut_dir = fresh_dir("seqlearn_cli_cut");

    auto full_cfg = micro_config(full_dir);
    full_cfg.train.criterion = 0.55;  // multiple epochs, nontrivial learning path
    full_cfg.train.abort_on_episode_failure = false;
    cli::cmd_run(full_cfg, 1, false);

    auto cut_cfg = micro_config(cut_dir);
    cut_cfg.train.criterion = 0.55;
    cut_cfg.train.abort_on_episode_failure = false;
    cut_cfg.train.episodes = 2;  // simulate the interruption after episode 2
    cli::cmd_run(cut_cfg, 1, false);
    auto resumed_cfg = micro_config(cut_dir);
    resumed_cfg.train.criterion = 0.55;
    resumed_cfg.train.abort_on_episode_failure = false;
    cli::cmd_run(resumed_cfg, 1, true);

    for (int run = 0; run < 3; ++run) {
        const auto rel = fs::path("runs") / ("run_" + std::to_string(run)) / "run_log.jsonl";
        CHECK(checksum_of(full_dir / rel) == checksum_of(cut_dir / rel));
    }
    fs::remove_all(full_dir);
    fs::remove_all(cut_dir);
}

TEST_CASE("analyze produces metrics, figure data, and skips fits without probes") {
    auto dir = fresh_dir("seqlearn_cli_analyze");
    auto cfg = micro_config(dir);
    cli::cmd_run(cfg, 2, false);
    cli::cmd_analyze(cfg);
    REQUIRE(fs::exists(dir / "analysis" / "metric_table.csv"));
    CHECK(fs::exists(dir / "analysis" / "loglog_curves.csv"));
    CHECK(!fs::exists(dir / "analysis" / "fits.csv"));  // no probes ran
    CHECK(fs::exists(dir / "figures" / "fig3a.csv"));
    CHECK(fs::exists(dir / "figures" / "fig3c.svg"));

    // Three runs contribute, so SEM columns are live.
    std::ifstream is(dir / "analysis" / "metric_table.csv");
    std::string header, row;
    std::getline(is, header);
    CHECK(header ==
          "ordinal,times_trained,n,mean_trials_to_criterion,sem_trials,mean_accuracy_at_budget,"
          "sem_accuracy,sem_valid");
    int rows = 0, valid = 0;
    for (; std::getline(is, row);)
        if (!row.empty()) {
            ++rows;
            if (row.back() == '1') ++valid;
        }
    CHECK(rows == 6);
    CHECK(valid == 6);
    fs::remove_all(dir);
}

TEST_CASE("probe command fits the forgetting pipeline end to end") {
    auto dir = fresh_dir("seqlearn_cli_probe");
    auto cfg = micro_config(dir);
    cfg.probes.enabled = true;
    cfg.probes.interval_batches = 1;
    cfg.probes.duration_batches = 8;
    cli::cmd_run(cfg, 2, false);
    // Standalone probing from checkpoints overwrites the probe logs with the
    // identical records (same seeds).
    const auto rel = fs::path("runs") / "run_0" / "probe_log.jsonl";
    const auto before = checksum_of(dir / rel);
    cli::cmd_probe(cfg, 2);
    CHECK(checksum_of(dir / rel) == before);

    cli::cmd_analyze(cfg);
    REQUIRE(fs::exists(dir / "analysis" / "fits.csv"));
    CHECK(fs::exists(dir / "analysis" / "comparison.json"));
    CHECK(fs::exists(dir / "figures" / "fig4a.csv"));
    CHECK(fs::exists(dir / "figures" / "fig4b.svg"));
    std::ifstream is(dir / "analysis" / "fits.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "run_id,probe_episode,task,family,alpha,beta,gamma,train_mse,eval_mse,winner");
    int rows = 0;
    for (std::string row; std::getline(is, row);)
        if (!row.empty()) ++rows;
    CHECK(rows == 2 * 3 * 3);  // (1+2) series per run, 3 runs, two families each
    fs::remove_all(dir);
}

TEST_CASE("export-figures with a baseline writes the comparison data") {
    auto dir_a = fresh_dir("seqlearn_cli_figA");
    auto dir_b = fresh_dir("seqlearn_cli_figB");
    auto cfg_a = micro_config(dir_a);
    cli::cmd_run(cfg_a, 2, false);
    auto cfg_b = micro_config(dir_b);
    cfg_b.master_seed = 77;
    cli::cmd_run(cfg_b, 2, false);
    cli::cmd_export_figures(cfg_a, dir_b);
    REQUIRE(fs::exists(dir_a / "figures" / "fig_compare_trials.csv"));
    std::ifstream is(dir_a / "figures" / "fig_compare_trials.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "ordinal,times_trained,trials_increase");
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("cli entry point: config file flow and machine-readable failure") {
    auto dir = fresh_dir("seqlearn_cli_main");
    auto cfg = micro_config(dir / "out");
    write_text_file(dir / "config.json", config::config_to_json_text(cfg));
    CHECK(call_main({"generate", "--config", (dir / "config.json").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "dataset" / "scenes.jsonl"));

    // bad config: named constraint surfaces through the error path
    write_text_file(dir / "bad.json", R"({"preset":"desk","train":{"n_batches":7}})");
    std::ostringstream captured;
    auto* old = std::cerr.rdbuf(captured.rdbuf());
    const int rc = call_main({"generate", "--config", (dir / "bad.json").string()});
    std::cerr.rdbuf(old);
    CHECK(rc == 1);
    const auto err = nlohmann::json::parse(captured.str());
    CHECK(err.at("error").get<std::string>().find("n_batches * batch_size") != std::string::npos);

    CHECK(call_main({"plan"}) == 1);  // neither --config nor --preset
    fs::remove_all(dir);
}
