// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run orchestration: executes the processing stages in order inside one run
// directory, with completion markers so finished work is skipped on rerun.
// Everything a stage writes is stamped with the config hash, and the same
// (config, seed) pair reproduces every artifact byte for byte.
//
// Run directory layout:
//   config.ini            effective configuration, persisted verbatim
//   manifest.txt          machine-readable list of stages and artifacts
//   markers/<stage>.done  completion marker (hash + artifact list)
//   data/                 generated demonstrations
//   ckpt/                 planner and policy checkpoints (+ snapshots/)
//   report/               CSV and SVG outputs

#include <string>
#include <vector>

#include "latentplan/config.hpp"

namespace latentplan {

enum class Stage {
    gen_data,
    train_planner,
    train_policy,
    eval,
    mse_curves,
    ablate,
    report,
};

Stage parse_stage(const std::string& s);  // ConfigError on unknown names
std::string stage_name(Stage s);

struct PipelineOptions {
    std::vector<Stage> stages;  // executed in the order given
    std::string run_dir;        // required; created if absent
    bool force = false;         // re-run stages whose markers already exist

    // per-stage switches (empty -> the run-local default)
    std::vector<std::string> planner_kinds{"backward", "forward", "parallel"};
    std::string policy_ckpt;     // eval: checkpoint to roll out
    std::string planner_ckpt;    // eval: planner feeding an lbp policy
    std::string tasks_manifest;  // eval: take task ids from this dataset manifest
    std::string grid_path;       // ablate: cell table (name,mode,fusion,lambda,n)
    bool quiet = false;          // suppress per-stage progress lines
};

struct PipelineResult {
    std::string run_dir;
    std::vector<std::string> executed;   // stages that actually ran
    std::vector<std::string> skipped;    // stages satisfied by markers
    std::vector<std::string> artifacts;  // run-relative paths written this call
};

// Runs the requested stages.  A stage whose marker carries the current config
// hash is skipped (unless force); a marker from a different configuration in
// the same directory raises PipelineError rather than silently mixing runs.
// Missing upstream artifacts raise PipelineError naming the artifact and the
// stage that produces it.
PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opt);

// Reads the `tasks` line of a dataset manifest (comma-separated ids).
std::vector<std::size_t> tasks_from_manifest(const std::string& manifest_path);

// Parses an ablation cell table: one `name,mode,fusion,lambda,n` line per
// cell, '#' comments allowed.  ConfigError on malformed lines.
std::vector<AblationCellSpec> parse_grid(const std::string& path);

}  // namespace latentplan
