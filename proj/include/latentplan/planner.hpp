// SPDX-License-Identifier: Apache-2.0
#pragma once

// Latent planners.  The backward planner grounds a latent goal from the
// current state and task embedding, then walks a coarse-to-fine subgoal
// chain back toward the present: each level conditions on the current
// state and the previous (farther) anchor, so one parameter set serves
// every recursion depth.  Forward and parallel predictors implement the
// standard alternatives for the error-accumulation comparisons: fixed-step
// autoregressive rollout, and all chain levels from a single pass.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "latentplan/dataset.hpp"
#include "latentplan/nn.hpp"

namespace latentplan {

enum class PlannerKind { backward, forward, parallel };
PlannerKind parse_planner_kind(const std::string& s);
std::string planner_kind_name(PlannerKind k);

struct PlannerConfig {
    double lambda = 0.5;            // recursion coefficient, in (0,1)
    std::size_t n = 2;              // subgoal count (chain length beyond the goal)
    std::size_t hidden = 128;       // width of the two-layer heads
    std::size_t budget = 3000;      // optimizer steps
    std::size_t batch = 64;
    double lr = 1e-3;
    std::size_t k_forward = 10;     // forward baseline lookahead, in steps
    bool self_conditioning = true;  // include the self-conditioned loss term

    void validate() const;  // ConfigError on out-of-domain values
};

// One plan: the grounded goal plus subgoals ordered coarse to fine
// (subgoals[0] sits nearest the goal, subgoals[n-1] nearest the present).
// `intended` holds the time indices {goal, w_1..w_n} when the query time and
// final index are known (evaluation on recorded trajectories); it is empty
// for pure inference.  Indices are non-increasing; ties appear only when the
// remaining horizon is too short to separate levels.
struct PlanChain {
    double lambda = 0.5;
    std::vector<double> z_g;
    std::vector<std::vector<double>> subgoals;
    std::vector<std::size_t> intended;
};

struct TrainLog {
    std::vector<double> loss;    // one entry per optimizer step
    std::size_t collapsed = 0;   // sampled ladders with any level at the query time

    double final_loss() const { return loss.empty() ? 0.0 : loss.back(); }
};

// pluggable predictors so tests can swap in ground-truth lookups
using GoalFn = std::function<std::vector<double>(const std::vector<double>& z_t,
                                                 const std::vector<double>& phi)>;
using SubgoalFn = std::function<std::vector<double>(const std::vector<double>& z_t,
                                                    const std::vector<double>& anchor,
                                                    const std::vector<double>& phi)>;

// Chain objective on one training context, evaluated numerically (no
// gradients).  Teacher-forced term: predict level i from the ground-truth
// level i-1 anchor (level 0 = final latent).  Self-conditioned term: predict
// level i from the model's own level i-1 output.  Both terms sum over all
// levels; at depth 1 they coincide, so n=1 gives exactly twice the
// single-level error.  A ground-truth lookup predictor scores exactly zero.
double chain_loss(const Context& ctx, const SubgoalFn& fn, bool self_conditioning);

// goal grounding followed by the O(n)-evaluation backward recursion;
// NumericError names the level if any output is non-finite
PlanChain plan_backward_with(const GoalFn& goal, const SubgoalFn& sub,
                             const std::vector<double>& z_t, const std::vector<double>& phi,
                             std::size_t n, double lambda);

class BackwardPlanner {
public:
    BackwardPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                    std::uint64_t init_seed);

    // Trains the goal head on hindsight final latents and the subgoal head on
    // the two-term chain objective; uniform over training trajectories and
    // query times.  Divergence saves a rescue checkpoint (when a path is
    // given) and raises NumericError.
    TrainLog train(const Dataset& ds, std::uint64_t seed, const std::string& rescue_path = "");

    PlanChain plan(const std::vector<double>& z_t, const std::vector<double>& phi) const;
    // same, with intended time indices filled in from a known (t, last)
    PlanChain plan_at(const std::vector<double>& z_t, const std::vector<double>& phi,
                      std::size_t t, std::size_t last) const;

    std::vector<double> predict_goal(const std::vector<double>& z_t,
                                     const std::vector<double>& phi) const;
    std::vector<double> predict_subgoal(const std::vector<double>& z_t,
                                        const std::vector<double>& anchor,
                                        const std::vector<double>& phi) const;

    const PlannerConfig& config() const { return cfg_; }
    std::size_t latent_dim() const { return nz_; }
    std::size_t lang_dim() const { return nl_; }
    bool trained() const { return trained_; }
    NamedParams params() const;

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static BackwardPlanner load(const std::string& path);

private:
    std::size_t nz_ = 0, nl_ = 0;
    PlannerConfig cfg_;
    Mlp goal_;  // [z_t | phi] -> z_g
    Mlp sub_;   // [z_t | anchor | phi] -> next (finer) subgoal
    bool trained_ = false;
};

// fixed-lookahead regressor applied autoregressively at inference
class ForwardPlanner {
public:
    ForwardPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                   std::uint64_t init_seed);

    TrainLog train(const Dataset& ds, std::uint64_t seed, const std::string& rescue_path = "");

    // one lookahead hop from an arbitrary latent
    std::vector<double> step_once(const std::vector<double>& z,
                                  const std::vector<double>& phi) const;
    // `hops` successive predictions, each fed back as the next input
    std::vector<std::vector<double>> rollout(const std::vector<double>& z_t,
                                             const std::vector<double>& phi,
                                             std::size_t hops) const;

    const PlannerConfig& config() const { return cfg_; }
    std::size_t latent_dim() const { return nz_; }
    std::size_t lang_dim() const { return nl_; }
    bool trained() const { return trained_; }
    NamedParams params() const;

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static ForwardPlanner load(const std::string& path);

private:
    std::size_t nz_ = 0, nl_ = 0;
    PlannerConfig cfg_;
    Mlp net_;  // [z_t | phi] -> z_{t + k_forward}
    bool trained_ = false;
};

// single pass from (z_t, phi) to the goal plus every subgoal at once
class ParallelPlanner {
public:
    ParallelPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                    std::uint64_t init_seed);

    TrainLog train(const Dataset& ds, std::uint64_t seed, const std::string& rescue_path = "");

    PlanChain plan(const std::vector<double>& z_t, const std::vector<double>& phi) const;
    PlanChain plan_at(const std::vector<double>& z_t, const std::vector<double>& phi,
                      std::size_t t, std::size_t last) const;

    const PlannerConfig& config() const { return cfg_; }
    std::size_t latent_dim() const { return nz_; }
    std::size_t lang_dim() const { return nl_; }
    bool trained() const { return trained_; }
    NamedParams params() const;

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static ParallelPlanner load(const std::string& path);

private:
    std::size_t nz_ = 0, nl_ = 0;
    PlannerConfig cfg_;
    Mlp net_;  // [z_t | phi] -> [z_g | w_1 | ... | w_n]
    bool trained_ = false;
};

} // namespace latentplan
