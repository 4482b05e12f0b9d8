#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "seqlearn/config.hpp"
#include "seqlearn/design.hpp"

namespace seqlearn::cli {

// Directory layout under cfg.output_dir:
//   config.json                resolved config snapshot
//   manifest.json              file inventory with checksums
//   dataset/scenes.jsonl       scene manifest
//   dataset/train.f32|holdout.f32   rendered tensors
//   plan/plan.json|plan.csv    replication plan
//   runs/run_<id>/run_log.jsonl, probe_log.jsonl, run_summary.json,
//                 checkpoints/checkpoint_ep<N>.bin
//   analysis/*.csv|*.json      fits, metric table, comparison summary
//   figures/*.csv|*.svg        per-figure data and plots

design::ReplicationPlan build_plan(const config::RunConfig& cfg);

void cmd_generate(const config::RunConfig& cfg);
void cmd_plan(const config::RunConfig& cfg);
void cmd_run(const config::RunConfig& cfg, int parallel, bool resume);
void cmd_probe(const config::RunConfig& cfg, int parallel);
void cmd_analyze(const config::RunConfig& cfg);
void cmd_export_figures(const config::RunConfig& cfg,
                        const std::optional<std::filesystem::path>& baseline_dir);

int run_main(int argc, char** argv);

}  // namespace seqlearn::cli
