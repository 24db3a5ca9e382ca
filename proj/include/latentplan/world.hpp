// SPDX-License-Identifier: Apache-2.0
#pragma once

// Kinematic pick-and-place world on the unit square: a point agent, M point
// objects, multi-stage tasks whose targets are resolved per episode from the
// (noisy) initial layout.  Includes the scripted expert and the exact linear
// latent encoder.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentplan/rng.hpp"

namespace latentplan {

struct WorldConfig {
    std::size_t num_objects = 4;    // M
    std::size_t max_stages = 5;     // one-hot width for the stage feature
    double speed = 0.02;            // max displacement per step
    double grab_radius = 0.03;
    double place_tol = 0.03;
    double approach_radius = 0.10;  // "approaching" score threshold
    double carry_radius = 0.10;     // "carried near target" threshold
    double init_noise = 0.025;      // jitter on nominal spawn slots
    std::size_t max_steps = 400;
    std::size_t latent_dim = 32;    // N_z
    std::size_t lang_dim = 8;       // N_l

    std::size_t feature_dim() const { return 2 + 2 * num_objects + 1 + max_stages; }
};

using Vec2 = std::array<double, 2>;

struct Action {
    double vx = 0.0, vy = 0.0;
    double grab = 0.0;  // held while >= 0.5
};

struct WorldState {
    Vec2 agent{0.5, 0.5};
    int held = -1;  // object id, -1 = empty gripper
    std::vector<Vec2> objects;
    std::size_t stage = 0;  // completed stage count, monotone
};

// How a stage's target point is derived when an episode starts.
struct StageRule {
    enum class Kind { fixed, slot_offset, target_offset, target_midpoint };
    std::size_t source = 0;  // object to move
    Kind kind = Kind::fixed;
    std::size_t anchor_a = 0;  // object id (slot_offset) or stage id (target_*)
    std::size_t anchor_b = 0;  // second stage id for target_midpoint
    Vec2 offset{0.0, 0.0};     // absolute point for Kind::fixed
};

struct TaskSpec {
    std::size_t task_id = 0;
    std::string name;
    std::vector<StageRule> stages;
    std::size_t num_stages() const { return stages.size(); }
};

// A spec resolved against a concrete initial layout.
struct Task {
    std::size_t task_id = 0;
    std::size_t num_stages = 0;
    std::vector<std::size_t> source;
    std::vector<Vec2> target;
};

// the three bundled tasks: K = 2, 3, 5
const std::vector<TaskSpec>& builtin_tasks();
const TaskSpec& task_spec(std::size_t task_id);

// pure target resolution from initial object positions (slots)
Task resolve_task(const TaskSpec& spec, const std::vector<Vec2>& slots);

// progress of one stage in isolation: 0 / 25 (agent near source) /
// 50 (source held) / 75 (held near target) / 100 (placed, released)
int stage_score(const WorldConfig& cfg, const WorldState& s, const Task& task, std::size_t stage);

class Simulator {
public:
    Simulator(WorldConfig cfg, TaskSpec spec);

    // fresh episode: rejection-samples a layout, resolves targets
    void reset(Rng& rng);
    // replay path: adopt a recorded initial state verbatim
    void reset_from(const WorldState& initial);
    // lookahead path: continue from a mid-episode state with targets already
    // resolved (reset_from would re-derive them from moved objects)
    void adopt(const WorldState& s, const Task& task);

    void step(const Action& a);
    const WorldState& state() const { return state_; }
    const Task& task() const { return task_; }
    const WorldConfig& config() const { return cfg_; }
    std::size_t steps() const { return steps_; }
    bool done() const { return state_.stage >= task_.num_stages; }

private:
    WorldConfig cfg_;
    TaskSpec spec_;
    Task task_;
    WorldState state_;
    std::size_t steps_ = 0;
};

// deterministic demonstrator; no-op once the task is complete
Action scripted_expert(const WorldConfig& cfg, const WorldState& s, const Task& task);

// --- latent encoding ------------------------------------------------------

// raw feature vector: [agent xy | object xys | held flag | stage one-hot]
std::vector<double> world_features(const WorldConfig& cfg, const WorldState& s,
                                   std::size_t num_stages);

// z = Q f with Q column-orthonormal (norm-preserving, injective); Q is fixed
// per dataset seed
class LatentEncoder {
public:
    LatentEncoder(const WorldConfig& cfg, std::uint64_t dataset_seed);
    std::vector<double> encode(const WorldState& s, std::size_t num_stages) const;
    std::vector<double> encode_features(const std::vector<double>& f) const;
    std::uint64_t checksum() const;
    std::size_t latent_dim() const { return nz_; }
    std::size_t feature_dim() const { return nf_; }

private:
    WorldConfig cfg_;
    std::size_t nz_, nf_;
    std::vector<double> q_;  // [nz x nf], row-major
};

// unit-norm language embedding from a fixed table (independent of dataset seed)
std::vector<double> lang_embedding(std::size_t task_id, std::size_t lang_dim);
// fixed column-orthonormal N_l -> N_z lift used to place phi_l in context rows
std::vector<double> lang_projection_matrix(std::size_t lang_dim, std::size_t latent_dim);
std::vector<double> project_lang(const std::vector<double>& phi, std::size_t latent_dim);

// shared helper: Gram-Schmidt over `cols` Gaussian columns in R^rows
std::vector<double> orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng);

} // namespace latentplan
