// SPDX-License-Identifier: Apache-2.0
#pragma once

// Context-conditioned diffusion policy.  A single trainable query
// cross-attends over the context rows (subgoals nearest-first, goal, task
// embedding) and compresses them into one low-dimensional token; per-slot
// type embeddings added to the attention keys let the policy tell apart
// rows at different planning distances — without them single-query
// attention cannot distinguish slots at all.  Action chunks are denoised
// from Gaussian noise with a fixed-step schedule and blended across
// overlapping emissions by exponential age weighting.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "latentplan/dataset.hpp"
#include "latentplan/nn.hpp"
#include "latentplan/planner.hpp"

namespace latentplan {

enum class PolicyMode { lbp, lcbc, glcbc };
enum class FusionKind { attention, avgpool };
PolicyMode parse_policy_mode(const std::string& s);
std::string policy_mode_name(PolicyMode m);
FusionKind parse_fusion_kind(const std::string& s);
std::string fusion_kind_name(FusionKind k);

// Order-canonical total: sorts the terms, then reduces adjacent pairs in a
// balanced tree.  The sum is a function of the multiset of addends alone, so
// any permutation of equal inputs produces bit-identical output; power-of-two
// counts of equal terms also cancel the 1/count weight exactly.
double canonical_sum(std::vector<double> terms);

// Single-query cross-attention fusion: z_c = Wo^T(softmax(q K^T / sqrt(d)) V) + bo
// with K = C Wk + E, V = C Wv.  All row reductions use canonical_sum, so with
// E = 0 the output is bit-identical under any permutation of context rows.
Tensor attention_fuse(const Tensor& C, const Tensor& q, const Tensor& Wk, const Tensor& Wv,
                      const Tensor& E, const Tensor& Wo, const Tensor& bo);

// ablation: arithmetic mean of rows through the same output projection
Tensor avgpool_fuse(const Tensor& C, const Tensor& Wo, const Tensor& bo);

struct GoalFusion {
    FusionKind kind = FusionKind::attention;
    std::size_t rows = 0;     // configured context length
    std::size_t width = 0;    // N_z
    std::size_t out_dim = 0;  // D_c <= N_z
    Tensor q;                 // [1, N_z] single trainable query
    Tensor Wk, Wv;            // [N_z, N_z]
    Tensor E;                 // [rows, N_z] per-slot type embeddings, zero-initialized
    Tensor Wo;                // [N_z, D_c]
    Tensor bo;                // [1, D_c]

    GoalFusion() = default;
    GoalFusion(FusionKind kind, std::size_t rows, std::size_t width, std::size_t out_dim,
               Rng& rng);
    Tensor forward(const Tensor& C) const;  // [rows, N_z] -> [1, D_c]
    void collect(const std::string& prefix, NamedParams& out) const;
};

// fixed-step denoising schedule; signal(k) is the cumulative signal
// coefficient, signal(0) = 1, strictly decreasing, signal(K) < 0.05
struct DiffusionSchedule {
    std::vector<double> beta;       // K entries, strictly increasing in (0,1)
    std::vector<double> alpha_bar;  // prod(1-beta) prefix products

    static DiffusionSchedule make(std::size_t steps, double beta_lo, double beta_hi);
    std::size_t steps() const { return beta.size(); }
    double signal(std::size_t k) const;  // k in [0, K]
};

struct PolicyConfig {
    std::size_t chunk = 6;             // actions denoised per call
    std::size_t diffusion_steps = 25;  // K
    double beta_lo = 1e-4;
    double beta_hi = 0.5;
    std::size_t hidden = 96;
    std::size_t blocks = 2;
    std::size_t fused_dim = 16;        // D_c
    std::size_t time_dim = 16;         // sinusoidal step embedding width
    double lr = 1e-3;
    std::size_t budget = 2500;
    std::size_t batch = 32;
    double ensemble_decay = 0.01;      // m in exp(-m * age)
    PolicyMode mode = PolicyMode::lbp;
    FusionKind fusion = FusionKind::attention;
    std::size_t plan_n = 2;            // subgoal count the context carries (lbp)
    double lambda = 0.5;               // matches the planner that feeds this policy
    // actuator bounds used to whiten chunks before denoising: raw actions are
    // tiny against the unit noise prior, so the chain runs on values / scale
    // and sampled chunks are rescaled on the way out
    std::array<double, 3> action_scale{0.02, 0.02, 1.0};

    std::size_t context_rows() const;  // lbp: plan_n + 2, glcbc: 2, lcbc: 1
    void validate() const;
};

// forward corruption x_k = sqrt(signal(k)) * x0 + sqrt(1 - signal(k)) * eps,
// k in [1, K]; at k = K essentially no signal survives
std::vector<double> diffusion_corrupt(const DiffusionSchedule& s, std::size_t k,
                                      const std::vector<double>& x0,
                                      const std::vector<double>& eps);

// sinusoidal embedding of a diffusion step index, `dim` values
std::vector<double> timestep_embedding(std::size_t k, std::size_t dim);

// proprioception analog read straight off the simulator state
std::vector<double> proprio_features(const WorldState& s, std::size_t num_objects);

// Context row assembly shared by training (ground-truth ladders) and
// inference (planned chains).  Row order: subgoals nearest-first, then the
// goal, then the task embedding lifted to latent width.  lcbc keeps only the
// task row; glcbc swaps the predicted goal for a fixed reference latent and
// needs one (ConfigError otherwise).
std::vector<std::vector<double>> build_context_rows(
    PolicyMode mode, const std::vector<std::vector<double>>& subgoals_coarse_to_fine,
    const std::vector<double>& z_g, const std::vector<double>* z_g_ref,
    const std::vector<double>& phi, std::size_t latent_dim);

// overlapping action chunks blended by age: w = exp(-m * age), newest heaviest
class EnsembleBuffer {
public:
    EnsembleBuffer(std::size_t chunk_len, std::size_t capacity, double decay);

    void push(std::size_t emitted_at, std::vector<double> chunk);  // chunk_len*3 values
    Action blend(std::size_t now) const;  // ContractError if nothing covers `now`
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        std::size_t emitted_at;
        std::vector<double> chunk;
    };
    std::size_t chunk_len_;
    std::size_t capacity_;
    double decay_;
    std::vector<Entry> entries_;
};

class DiffusionPolicy {
public:
    DiffusionPolicy(std::size_t latent_dim, std::size_t lang_dim, PolicyConfig cfg,
                    std::uint64_t init_seed);

    // Denoising regression: corrupt a ground-truth chunk at a uniform step,
    // predict the injected noise from the fused context; padded chunk tails
    // are masked out of the loss.  Contexts come from hindsight ladders
    // (never from a planner).  Optionally snapshots parameters every
    // `snapshot_every` steps into `snapshot_dir` for top-k selection later.
    TrainLog train(const Dataset& ds, std::uint64_t seed, const std::string& rescue_path = "",
                   const std::string& snapshot_dir = "", std::size_t snapshot_every = 0);

    // ancestral denoising from unit Gaussian noise; the rollout owns `stream`
    std::vector<double> sample_chunk(const std::vector<double>& z_t,
                                     const std::vector<std::vector<double>>& context_rows,
                                     const std::vector<double>& phi,
                                     const std::vector<double>& proprio, Rng& stream) const;

    // loss of one assembled batch on the current parameters (shared by
    // training and tests; returns the scalar without stepping)
    double eval_batch_loss(const Dataset& ds, std::uint64_t seed, std::size_t batch) const;

    const PolicyConfig& config() const { return cfg_; }
    const DiffusionSchedule& schedule() const { return sched_; }
    GoalFusion& fusion() { return fusion_; }
    const GoalFusion& fusion() const { return fusion_; }
    const ResidualMlp& net() const { return eps_net_; }
    std::size_t latent_dim() const { return nz_; }
    std::size_t lang_dim() const { return nl_; }
    bool trained() const { return trained_; }
    NamedParams params() const;

    // reference goal latents for glcbc conditioning: task -> final latent of
    // the task's first training demonstration
    static std::map<std::size_t, std::vector<double>> reference_goals(const Dataset& ds);

    void save(const std::string& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static DiffusionPolicy load(const std::string& path);

private:
    Tensor batch_loss_graph(const Dataset& ds, const std::vector<std::size_t>& ids, Rng& rng,
                            const std::map<std::size_t, std::vector<double>>& refs,
                            std::size_t batch) const;
    std::map<std::string, std::string> meta_for_save(
        const std::map<std::string, std::string>& extra) const;

    std::size_t nz_ = 0, nl_ = 0;
    PolicyConfig cfg_;
    DiffusionSchedule sched_;
    GoalFusion fusion_;
    ResidualMlp eps_net_;
    bool trained_ = false;
};

} // namespace latentplan
