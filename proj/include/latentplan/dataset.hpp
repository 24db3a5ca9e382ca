// SPDX-License-Identifier: Apache-2.0
#pragma once

// Expert demonstration store: generation, one binary file per trajectory plus
// a text manifest, deterministic regeneration, and the context samplers the
// planners and policy train from.

#include <cstdint>
#include <string>
#include <vector>

#include "latentplan/world.hpp"

namespace latentplan {

struct Trajectory {
    std::size_t task_id = 0;
    std::size_t num_stages = 0;
    std::size_t episode = 0;  // index within its task
    std::vector<double> phi;                  // task language embedding, N_l
    std::vector<Vec2> targets;                // resolved at episode start
    std::vector<WorldState> raw;              // H states
    std::vector<std::vector<double>> z;       // H latents
    std::vector<Action> actions;              // H-1

    std::size_t horizon() const { return z.size(); }
    std::size_t last() const { return z.size() - 1; }
};

struct DataConfig {
    std::vector<std::size_t> tasks = {0, 1, 2};
    std::size_t demos_per_task = 200;
    double max_failure_rate = 0.05;
    double holdout_fraction = 0.1;
};

struct Dataset {
    WorldConfig world;
    DataConfig data;
    std::uint64_t seed = 0;
    std::uint64_t encoder_checksum = 0;
    std::size_t failures = 0;
    std::vector<Trajectory> trajs;

    std::vector<std::size_t> task_trajs(std::size_t task_id, bool holdout) const;
    bool is_holdout(const Trajectory& t) const;
};

// runs the scripted expert; failed episodes are retried on a derived
// sub-stream and counted; persists everything under out_dir
Dataset generate_dataset(const WorldConfig& world, const DataConfig& data, std::uint64_t seed,
                         const std::string& out_dir, const std::string& config_hash = "none");

Dataset load_dataset(const std::string& dir);

// replays recorded actions through a fresh simulator; true iff the episode
// re-reaches full completion and every recorded state matches
bool verify_trajectory(const WorldConfig& world, const Trajectory& traj);

// index rule for the recursive subgoal ladder: ceil((1-lambda^i) t + lambda^i last),
// both time arguments in the same (0-based) indexing
std::size_t subgoal_index(std::size_t t, std::size_t last, double lambda, std::size_t i);

struct Context {
    std::size_t t = 0;
    std::vector<double> z_t;
    std::vector<double> phi;                  // language embedding, N_l
    std::vector<double> z_g;                  // hindsight goal = final latent
    std::vector<std::vector<double>> subgoals;  // i = 1..n, coarse to fine
    std::vector<std::size_t> indices;           // their time indices
};

// hindsight training context at time t: goal plus the ground-truth subgoal
// ladder.  t must precede the final state.
Context sample_context(const Trajectory& traj, std::size_t t, double lambda, std::size_t n);

// actions a_t..a_{t+len-1} flattened row-major; chunks crossing the episode
// end repeat the last action with mask 0 on padded rows
struct ActionChunk {
    std::vector<double> values;  // len*3
    std::vector<double> mask;    // len*3, 1 = real
};
ActionChunk action_chunk(const Trajectory& traj, std::size_t t, std::size_t len);

} // namespace latentplan
