// SPDX-License-Identifier: Apache-2.0
#pragma once

// Evaluation harness.  Three instruments: closed-loop rollouts that score
// strict stage progression under the deployed replan-every-step stack,
// prediction-error curves that compare the planning paradigms at matched
// horizons on held-out trajectories, and an ablation grid that retrains the
// stack per cell and reports closed-loop outcomes.  Checkpoint aggregation
// and deterministic CSV/SVG emission round out the reporting path.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "latentplan/planner.hpp"
#include "latentplan/policy.hpp"
#include "latentplan/world.hpp"

namespace latentplan {

// --- closed-loop evaluation -------------------------------------------------

// One control decision: given the live state, its latent, and the step index,
// emit the next action chunk (chunk_len * 3 raw values).  The resolved task is
// available for oracle actors (the scripted expert); learned actors must not
// read it.  `stream` is the rollout's private randomness.
using ChunkActor = std::function<std::vector<double>(
    const WorldState& s, const Task& task, const std::vector<double>& z_t,
    std::size_t t, Rng& stream)>;

struct RolloutLog {
    std::size_t task_id = 0;
    std::size_t index = 0;            // rollout number within the task
    std::uint64_t episode_seed = 0;   // layout stream seed, for replay
    std::vector<int> stage_scores;    // per stage, each in {0,25,50,75,100}
    double mean_score = 0.0;          // mean over stages
    bool success = false;             // every stage completed
    std::size_t steps = 0;            // control steps consumed
};

struct TaskSummary {
    std::size_t task_id = 0;
    std::size_t rollouts = 0;                 // sample count behind every mean
    std::vector<double> stage_means;          // per stage, over rollouts
    std::vector<double> stage_stderr;
    double mean_score = 0.0;                  // over rollouts of per-rollout means
    double score_stderr = 0.0;
    double success_rate = 0.0;                // fraction in [0,1]
    double success_stderr = 0.0;
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::size_t rollouts_per_task = 0;
    std::string policy_id;                    // checkpoint identities for provenance
    std::string planner_id;
    std::vector<RolloutLog> rollouts;         // task-major, index-minor
    std::vector<TaskSummary> tasks;
    double average_success = 0.0;             // mean of task success rates
    double average_score = 0.0;               // mean of task mean scores
};

struct ClosedLoopConfig {
    std::vector<std::size_t> tasks{0, 1, 2};
    std::size_t rollouts_per_task = 10;
    std::size_t chunk_len = 6;
    std::size_t ensemble_capacity = 6;
    double ensemble_decay = 0.01;
    std::uint64_t seed = 0;
    std::string policy_id = "unspecified";
    std::string planner_id = "none";

    void validate() const;  // ConfigError on empty tasks / zero rollouts / zero chunk
};

// Runs rollouts_per_task episodes per task, blending overlapping chunks by
// age and scoring strict progression: finished stages hold 100, the live
// stage holds its best score so far, stages beyond the live one stay 0.
// Episode layouts and actor randomness come from per-rollout streams derived
// from cfg.seed, so rollouts are order-independent.
EvalReport closed_loop_eval(const WorldConfig& world, const LatentEncoder& encoder,
                            const ChunkActor& actor, const ClosedLoopConfig& cfg);

// The deployed stack as an actor: replan every step (lbp mode), fuse, denoise
// one chunk.  Task identity comes from the per-call Task, so one actor serves
// any task mix.  `planner` may be null for lcbc/glcbc; `refs` supplies glcbc
// reference latents.  Dimension or mode mismatches -> ConfigError at
// construction; a missing glcbc reference -> ConfigError at first use.  The
// policy, planner, and refs must outlive the returned actor.
ChunkActor stack_actor(const WorldConfig& world, const LatentEncoder& encoder,
                       const DiffusionPolicy& policy, const BackwardPlanner* planner,
                       const std::map<std::size_t, std::vector<double>>* refs);

// Scripted expert wrapped as a chunk emitter: simulates its own next
// chunk_len steps from the live state, so every emitted chunk agrees with
// the one action the expert would take.  The closed-loop ceiling.
ChunkActor expert_actor(const WorldConfig& world, std::size_t chunk_len);

// --- prediction error vs. lookahead ------------------------------------------

// Probes answer "what does paradigm P predict for trajectory tau at time t",
// leaving the harness to score against recorded latents.  backward/parallel
// return full chains with intended indices filled in (ContractError when a
// probe omits them); forward returns successive hops (hop j targets
// t + j*k_forward, clamped to the end).
struct MseProbes {
    std::function<PlanChain(const Trajectory&, std::size_t)> backward;
    std::function<PlanChain(const Trajectory&, std::size_t)> parallel;
    std::function<std::vector<std::vector<double>>(const Trajectory&, std::size_t,
                                                   std::size_t)> forward;
    std::size_t k_forward = 10;
};

// Wraps trained planners as probes; ContractError if any is untrained.
MseProbes probes_from(const BackwardPlanner& backward, const ForwardPlanner& forward,
                      const ParallelPlanner& parallel);

struct MseBin {
    double lo = 0.0, hi = 0.0;  // progress interval (target index / last index)
    double mean = 0.0;          // per-dimension squared error, raw latent scale
    double stderr_ = 0.0;
    std::size_t n = 0;
};

struct MseSeries {
    std::string paradigm;
    std::vector<MseBin> bins;
};

struct DepthPoint {
    std::size_t depth = 0;  // forward hop count, or chain level (0 = goal)
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

struct TaskCurves {
    std::size_t task_id = 0;
    MseSeries backward, forward, parallel;     // binned by target progress
    std::vector<DepthPoint> forward_by_depth;  // hops with in-range targets only
    std::vector<DepthPoint> backward_by_level; // 0 = goal, then coarse to fine
    std::vector<DepthPoint> parallel_by_level;
    DepthPoint forward_at_final;               // first hop whose reach crosses the end
    std::size_t samples = 0;                   // (trajectory, t) draws for this task
};

struct MseCurveSet {
    std::uint64_t seed = 0;
    std::size_t sample_count = 0;
    std::size_t bins = 0;
    std::string split;  // "holdout" or "train"
    std::vector<TaskCurves> tasks;
};

struct MseConfig {
    std::size_t sample_count = 3000;
    std::size_t bins = 10;
    std::size_t max_depth = 10;   // cap for the forward depth series
    bool holdout = true;          // probe held-out trajectories when any exist
    std::uint64_t seed = 0;
};

// Draws (trajectory, t) pairs, queries every probe, and bins per-dimension
// squared errors by target progress t'/last.  Chain levels are also
// aggregated per level, forward hops per depth, so matched-horizon
// comparisons don't wash out across bins.
MseCurveSet mse_vs_progress(const Dataset& ds, const MseProbes& probes,
                            const MseConfig& cfg);

// --- ablation grid ------------------------------------------------------------

struct AblationCellSpec {
    std::string name;           // row label in the emitted table
    PolicyMode mode = PolicyMode::lbp;
    FusionKind fusion = FusionKind::attention;
    double lambda = 0.5;
    std::size_t n = 2;          // subgoal count; 0 = goal-only conditioning
};

struct AblationResult {
    AblationCellSpec spec;
    double average_success = 0.0;
    double success_stderr = 0.0;
    double average_score = 0.0;
    double score_stderr = 0.0;
    std::size_t rollouts = 0;    // total episodes behind the cell
    double planner_loss = 0.0;   // final training losses, for provenance
    double policy_loss = 0.0;
};

struct AblationTable {
    std::uint64_t seed = 0;
    std::vector<AblationResult> cells;
};

// Trains a fresh stack per cell (skipping the planner for lcbc/glcbc rows)
// and scores it closed-loop.  Cell streams derive from (seed, cell index),
// so cells are independent and the table is order-deterministic.
AblationTable ablation_grid(const Dataset& ds, const std::vector<AblationCellSpec>& cells,
                            const PlannerConfig& planner_base, const PolicyConfig& policy_base,
                            const ClosedLoopConfig& eval_base, std::uint64_t seed);

// The stock grid: lambda {0.5, 0.75} x n {1, 2, 3} under attention fusion,
// both fusions at the default corner, goal-only, and the two planner-free
// baselines.
std::vector<AblationCellSpec> default_ablation_cells();

// --- checkpoint aggregation ---------------------------------------------------

enum class AggregateMode { top, last };
AggregateMode parse_aggregate_mode(const std::string& s);
std::string aggregate_mode_name(AggregateMode m);

struct CheckpointEval {
    std::string id;
    double average_success = 0.0;
    double average_score = 0.0;
    std::map<std::size_t, double> per_task_success;
};

// A mean with its evidence; stderr_ carries the trailing underscore because
// <cstdio> claims the bare name.
struct Stat {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

struct AggregateSummary {
    AggregateMode mode = AggregateMode::top;
    std::size_t k = 0;
    std::vector<std::string> chosen;  // ids in aggregation order
    Stat success;                     // over the chosen evaluations
    Stat score;
    std::map<std::size_t, Stat> per_task_success;
};

// Picks k evaluations -- best-k by average success, or the last k in run
// order -- and means their numbers.  Fewer than k runs -> ContractError.
AggregateSummary aggregate_checkpoints(const std::vector<CheckpointEval>& runs,
                                       std::size_t k, AggregateMode mode);

// --- emission -----------------------------------------------------------------

// All emitters write deterministic text: stable column order, shortest
// round-trip floats, provenance as leading `# key=value` comment lines
// (stage, seed, config hash, units), and an n + stderr column beside every
// mean.  Re-emission of the same value is byte-identical.  Each returns the
// paths it wrote; unwritable paths -> IoError.
std::vector<std::string> emit_eval_report(const EvalReport& report, const std::string& dir,
                                          const std::string& config_hash);
std::vector<std::string> emit_mse_curves(const MseCurveSet& curves, const std::string& dir,
                                         const std::string& config_hash);
std::vector<std::string> emit_ablation(const AblationTable& table, const std::string& dir,
                                       const std::string& config_hash);
std::vector<std::string> emit_aggregate(const AggregateSummary& summary, const std::string& dir,
                                        const std::string& config_hash);

// Everything a run produced, emitted in one call; null members are skipped.
struct ReportBundle {
    const EvalReport* eval = nullptr;
    const MseCurveSet* curves = nullptr;
    const AblationTable* ablation = nullptr;
    const AggregateSummary* aggregate = nullptr;
};
std::vector<std::string> emit_report(const ReportBundle& bundle, const std::string& dir,
                                     const std::string& config_hash);

}  // namespace latentplan
