// SPDX-License-Identifier: Apache-2.0
#include "latentplan/evalkit.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "latentplan/rng.hpp"

namespace latentplan {

namespace {

// streaming mean/stderr; accumulation order is always fixed, so results are
// reproducible byte for byte
struct Accum {
    std::size_t n = 0;
    double sum = 0.0, sumsq = 0.0;
    void add(double x) {
        ++n;
        sum += x;
        sumsq += x * x;
    }
    double mean() const { return n ? sum / double(n) : 0.0; }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = (sumsq - sum * m) / double(n - 1);
        return var > 0.0 ? std::sqrt(var / double(n)) : 0.0;
    }
    Stat stat() const { return Stat{mean(), se(), n}; }
};

double mean_sq_err(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size())
        throw ShapeError("prediction/latent width mismatch in error scoring");
    double s = 0.0;
    for (std::size_t d = 0; d < pred.size(); ++d) {
        const double e = pred[d] - target[d];
        s += e * e;
    }
    return s / double(pred.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// closed-loop evaluation

void ClosedLoopConfig::validate() const {
    if (tasks.empty()) throw ConfigError("eval.tasks must name at least one task");
    if (rollouts_per_task == 0) throw ConfigError("eval.rollouts_per_task must be positive");
    if (chunk_len == 0) throw ConfigError("eval.chunk_len must be positive");
    if (ensemble_capacity == 0) throw ConfigError("eval.ensemble_capacity must be positive");
    if (!(ensemble_decay >= 0.0) || !std::isfinite(ensemble_decay))
        throw ConfigError("eval.ensemble_decay must be a finite non-negative value");
}

namespace {

RolloutLog run_rollout(const WorldConfig& world, const LatentEncoder& encoder,
                       const ChunkActor& actor, const ClosedLoopConfig& cfg,
                       std::size_t task_id, std::size_t index) {
    const TaskSpec& spec = task_spec(task_id);
    const std::size_t stages = spec.num_stages();

    RolloutLog log;
    log.task_id = task_id;
    log.index = index;
    log.episode_seed = derive_seed(cfg.seed, "eval-episode", {task_id, index});

    Rng layout(log.episode_seed);
    Simulator sim(world, spec);
    sim.reset(layout);

    Rng stream(derive_seed(cfg.seed, "eval-actor", {task_id, index}));
    EnsembleBuffer buf(cfg.chunk_len, cfg.ensemble_capacity, cfg.ensemble_decay);

    // strict progression: finished stages hold 100, the live stage keeps its
    // best score so far, stages past the live one stay untouched at 0
    std::vector<int> scores(stages, 0);
    scores[0] = stage_score(world, sim.state(), sim.task(), 0);

    for (std::size_t t = 0; t < world.max_steps && !sim.done(); ++t) {
        const std::vector<double> z = encoder.encode(sim.state(), stages);
        buf.push(t, actor(sim.state(), sim.task(), z, t, stream));
        sim.step(buf.blend(t));

        const WorldState& s = sim.state();
        for (std::size_t st = 0; st < std::min(s.stage, stages); ++st) scores[st] = 100;
        if (s.stage < stages)
            scores[s.stage] = std::max(scores[s.stage], stage_score(world, s, sim.task(), s.stage));
    }

    log.stage_scores = std::move(scores);
    log.steps = sim.steps();
    log.success = sim.done();
    double sum = 0.0;
    for (int v : log.stage_scores) sum += v;
    log.mean_score = sum / double(stages);
    return log;
}

}  // namespace

EvalReport closed_loop_eval(const WorldConfig& world, const LatentEncoder& encoder,
                            const ChunkActor& actor, const ClosedLoopConfig& cfg) {
    cfg.validate();
    if (!actor) throw ConfigError("closed_loop_eval needs an actor");

    EvalReport report;
    report.seed = cfg.seed;
    report.rollouts_per_task = cfg.rollouts_per_task;
    report.policy_id = cfg.policy_id;
    report.planner_id = cfg.planner_id;

    // every rollout owns derived streams, so they can run in any order
    const std::size_t jobs = cfg.tasks.size() * cfg.rollouts_per_task;
    std::vector<RolloutLog> logs(jobs);
    std::vector<std::exception_ptr> errors(jobs);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (std::size_t j = 0; j < jobs; ++j) {
        try {
            const std::size_t task_id = cfg.tasks[j / cfg.rollouts_per_task];
            const std::size_t index = j % cfg.rollouts_per_task;
            logs[j] = run_rollout(world, encoder, actor, cfg, task_id, index);
        } catch (...) {
            errors[j] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    report.rollouts = std::move(logs);

    // serial aggregation in task order
    double success_total = 0.0, score_total = 0.0;
    for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
        const std::size_t task_id = cfg.tasks[ti];
        const std::size_t stages = task_spec(task_id).num_stages();
        std::vector<Accum> stage_acc(stages);
        Accum score_acc, success_acc;
        for (std::size_t r = 0; r < cfg.rollouts_per_task; ++r) {
            const RolloutLog& log = report.rollouts[ti * cfg.rollouts_per_task + r];
            for (std::size_t st = 0; st < stages; ++st) stage_acc[st].add(log.stage_scores[st]);
            score_acc.add(log.mean_score);
            success_acc.add(log.success ? 1.0 : 0.0);
        }
        TaskSummary ts;
        ts.task_id = task_id;
        ts.rollouts = cfg.rollouts_per_task;
        for (std::size_t st = 0; st < stages; ++st) {
            ts.stage_means.push_back(stage_acc[st].mean());
            ts.stage_stderr.push_back(stage_acc[st].se());
        }
        ts.mean_score = score_acc.mean();
        ts.score_stderr = score_acc.se();
        ts.success_rate = success_acc.mean();
        ts.success_stderr = success_acc.se();
        report.tasks.push_back(std::move(ts));
        success_total += success_acc.mean();
        score_total += score_acc.mean();
    }
    report.average_success = success_total / double(cfg.tasks.size());
    report.average_score = score_total / double(cfg.tasks.size());
    return report;
}

ChunkActor stack_actor(const WorldConfig& world, const LatentEncoder& encoder,
                       const DiffusionPolicy& policy, const BackwardPlanner* planner,
                       const std::map<std::size_t, std::vector<double>>* refs) {
    if (encoder.latent_dim() != policy.latent_dim())
        throw ConfigError("encoder latent width " + std::to_string(encoder.latent_dim()) +
                          " does not match policy latent width " +
                          std::to_string(policy.latent_dim()));
    if (policy.lang_dim() != world.lang_dim)
        throw ConfigError("policy task-embedding width " + std::to_string(policy.lang_dim()) +
                          " does not match world lang_dim " + std::to_string(world.lang_dim));
    const PolicyMode mode = policy.config().mode;
    if (mode == PolicyMode::lbp) {
        if (planner == nullptr) throw ConfigError("an lbp policy needs a planner checkpoint");
        if (planner->latent_dim() != policy.latent_dim() ||
            planner->lang_dim() != policy.lang_dim())
            throw ConfigError("planner widths do not match the policy");
        if (planner->config().n != policy.config().plan_n)
            throw ConfigError("planner predicts " + std::to_string(planner->config().n) +
                              " subgoals but the policy conditions on " +
                              std::to_string(policy.config().plan_n));
    }
    if (mode == PolicyMode::glcbc && refs == nullptr)
        throw ConfigError("a glcbc policy needs reference goals");

    const DiffusionPolicy* pol = &policy;
    const WorldConfig w = world;
    return [pol, planner, refs, w](const WorldState& s, const Task& task,
                                   const std::vector<double>& z, std::size_t /*t*/,
                                   Rng& stream) {
        const std::vector<double> phi = lang_embedding(task.task_id, w.lang_dim);
        const PolicyMode m = pol->config().mode;
        std::vector<std::vector<double>> rows;
        if (m == PolicyMode::lbp) {
            const PlanChain chain = planner->plan(z, phi);  // replan every step
            rows = build_context_rows(m, chain.subgoals, chain.z_g, nullptr, phi,
                                      pol->latent_dim());
        } else if (m == PolicyMode::glcbc) {
            const auto it = refs->find(task.task_id);
            if (it == refs->end())
                throw ConfigError("no reference goal recorded for task " +
                                  std::to_string(task.task_id));
            rows = build_context_rows(m, {}, {}, &it->second, phi, pol->latent_dim());
        } else {
            rows = build_context_rows(m, {}, {}, nullptr, phi, pol->latent_dim());
        }
        return pol->sample_chunk(z, rows, phi, proprio_features(s, w.num_objects), stream);
    };
}

ChunkActor expert_actor(const WorldConfig& world, std::size_t chunk_len) {
    if (chunk_len == 0) throw ConfigError("expert actor needs a positive chunk length");
    const WorldConfig w = world;
    return [w, chunk_len](const WorldState& s, const Task& task, const std::vector<double>&,
                          std::size_t /*t*/, Rng&) {
        // roll the expert's own future so chunk position i holds the action it
        // will actually want at t + i
        Simulator sim(w, task_spec(task.task_id));
        sim.adopt(s, task);
        std::vector<double> chunk;
        chunk.reserve(chunk_len * 3);
        for (std::size_t i = 0; i < chunk_len; ++i) {
            const Action a = scripted_expert(w, sim.state(), task);
            chunk.push_back(a.vx);
            chunk.push_back(a.vy);
            chunk.push_back(a.grab);
            sim.step(a);
        }
        return chunk;
    };
}

// ---------------------------------------------------------------------------
// prediction error vs. lookahead

MseProbes probes_from(const BackwardPlanner& backward, const ForwardPlanner& forward,
                      const ParallelPlanner& parallel) {
    if (!backward.trained() || !forward.trained() || !parallel.trained())
        throw ContractError("probes need trained planners");
    MseProbes probes;
    const BackwardPlanner* bp = &backward;
    const ForwardPlanner* fp = &forward;
    const ParallelPlanner* pp = &parallel;
    probes.backward = [bp](const Trajectory& tau, std::size_t t) {
        return bp->plan_at(tau.z[t], tau.phi, t, tau.last());
    };
    probes.parallel = [pp](const Trajectory& tau, std::size_t t) {
        return pp->plan_at(tau.z[t], tau.phi, t, tau.last());
    };
    probes.forward = [fp](const Trajectory& tau, std::size_t t, std::size_t hops) {
        return fp->rollout(tau.z[t], tau.phi, hops);
    };
    probes.k_forward = forward.config().k_forward;
    return probes;
}

namespace {

struct TaskAcc {
    std::vector<Accum> backward_bins, forward_bins, parallel_bins;
    std::vector<Accum> backward_levels, parallel_levels;  // grown on demand
    std::map<std::size_t, Accum> forward_depths;
    Accum forward_final;
    std::size_t samples = 0;
    explicit TaskAcc(std::size_t bins)
        : backward_bins(bins), forward_bins(bins), parallel_bins(bins) {}
};

std::size_t progress_bin(std::size_t target_idx, std::size_t last, std::size_t bins) {
    const double p = double(target_idx) / double(last);
    const auto b = std::size_t(p * double(bins));
    return std::min(b, bins - 1);
}

void score_chain(const PlanChain& chain, const Trajectory& tau, std::vector<Accum>& bins,
                 std::vector<Accum>& levels, std::size_t nbins, const char* paradigm) {
    if (chain.intended.size() != chain.subgoals.size() + 1)
        throw ContractError(std::string(paradigm) +
                            " probe must fill intended indices for every chain level");
    if (levels.size() < chain.intended.size()) levels.resize(chain.intended.size());
    for (std::size_t level = 0; level < chain.intended.size(); ++level) {
        const std::vector<double>& pred = level == 0 ? chain.z_g : chain.subgoals[level - 1];
        const std::size_t idx = chain.intended[level];
        if (idx >= tau.z.size())
            throw ContractError(std::string(paradigm) + " probe intended an out-of-range index");
        const double err = mean_sq_err(pred, tau.z[idx]);
        bins[progress_bin(idx, tau.last(), nbins)].add(err);
        levels[level].add(err);
    }
}

std::vector<MseBin> finish_bins(const std::vector<Accum>& acc, std::size_t nbins) {
    std::vector<MseBin> out;
    for (std::size_t b = 0; b < nbins; ++b) {
        MseBin bin;
        bin.lo = double(b) / double(nbins);
        bin.hi = double(b + 1) / double(nbins);
        bin.mean = acc[b].mean();
        bin.stderr_ = acc[b].se();
        bin.n = acc[b].n;
        out.push_back(bin);
    }
    return out;
}

std::vector<DepthPoint> finish_levels(const std::vector<Accum>& acc) {
    std::vector<DepthPoint> out;
    for (std::size_t i = 0; i < acc.size(); ++i)
        out.push_back(DepthPoint{i, acc[i].mean(), acc[i].se(), acc[i].n});
    return out;
}

}  // namespace

MseCurveSet mse_vs_progress(const Dataset& ds, const MseProbes& probes, const MseConfig& cfg) {
    if (cfg.sample_count == 0) throw ConfigError("mse.sample_count must be positive");
    if (cfg.bins == 0) throw ConfigError("mse.bins must be positive");
    if (cfg.max_depth == 0) throw ConfigError("mse.max_depth must be positive");
    if (!probes.backward || !probes.forward || !probes.parallel)
        throw ContractError("mse_vs_progress needs all three probes");
    if (probes.k_forward == 0) throw ContractError("forward probe stride must be positive");

    // probe the held-out split when it exists; otherwise fall back to train
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ds.trajs.size(); ++i)
        if (ds.trajs[i].last() >= 1 && (!cfg.holdout || ds.is_holdout(ds.trajs[i])))
            eligible.push_back(i);
    std::string split = cfg.holdout ? "holdout" : "train";
    if (eligible.empty() && cfg.holdout) {
        for (std::size_t i = 0; i < ds.trajs.size(); ++i)
            if (ds.trajs[i].last() >= 1) eligible.push_back(i);
        split = "train";
    }
    if (eligible.empty()) throw ContractError("no trajectories to probe");

    Rng stream(derive_seed(cfg.seed, "mse-samples"));
    std::map<std::size_t, TaskAcc> acc;

    for (std::size_t draw = 0; draw < cfg.sample_count; ++draw) {
        const Trajectory& tau = ds.trajs[eligible[stream.below(eligible.size())]];
        const std::size_t t = stream.below(tau.last());
        const std::size_t last = tau.last();
        TaskAcc& ta = acc.try_emplace(tau.task_id, cfg.bins).first->second;
        ++ta.samples;

        score_chain(probes.backward(tau, t), tau, ta.backward_bins, ta.backward_levels,
                    cfg.bins, "backward");
        score_chain(probes.parallel(tau, t), tau, ta.parallel_bins, ta.parallel_levels,
                    cfg.bins, "parallel");

        // forward hops up to the first one whose reach crosses the end
        const std::size_t k = probes.k_forward;
        const std::size_t final_hop = (last - t + k - 1) / k;
        const auto preds = probes.forward(tau, t, final_hop);
        if (preds.size() < final_hop)
            throw ContractError("forward probe returned fewer hops than requested");
        for (std::size_t j = 1; j <= final_hop; ++j) {
            const std::size_t target_idx = std::min(t + j * k, last);
            const double err = mean_sq_err(preds[j - 1], tau.z[target_idx]);
            ta.forward_bins[progress_bin(target_idx, last, cfg.bins)].add(err);
            if (t + j * k <= last && j <= cfg.max_depth) ta.forward_depths[j].add(err);
            if (j == final_hop) ta.forward_final.add(err);
        }
    }

    MseCurveSet out;
    out.seed = cfg.seed;
    out.sample_count = cfg.sample_count;
    out.bins = cfg.bins;
    out.split = split;
    for (const auto& [task_id, ta] : acc) {
        TaskCurves tc;
        tc.task_id = task_id;
        tc.backward = MseSeries{"backward", finish_bins(ta.backward_bins, cfg.bins)};
        tc.forward = MseSeries{"forward", finish_bins(ta.forward_bins, cfg.bins)};
        tc.parallel = MseSeries{"parallel", finish_bins(ta.parallel_bins, cfg.bins)};
        for (const auto& [depth, a] : ta.forward_depths)
            tc.forward_by_depth.push_back(DepthPoint{depth, a.mean(), a.se(), a.n});
        tc.backward_by_level = finish_levels(ta.backward_levels);
        tc.parallel_by_level = finish_levels(ta.parallel_levels);
        tc.forward_at_final = DepthPoint{0, ta.forward_final.mean(), ta.forward_final.se(),
                                         ta.forward_final.n};
        tc.samples = ta.samples;
        out.tasks.push_back(std::move(tc));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ablation grid

namespace {

AblationResult run_cell(const Dataset& ds, const AblationCellSpec& cell,
                        const PlannerConfig& planner_base, const PolicyConfig& policy_base,
                        const ClosedLoopConfig& eval_base, std::uint64_t seed) {
    // the cell stream derives from the cell's settings, not its position, so
    // duplicate cells land on identical rows
    const std::uint64_t cell_seed =
        derive_seed(seed, "ablate-cell",
                    {std::uint64_t(cell.mode), std::uint64_t(cell.fusion),
                     std::bit_cast<std::uint64_t>(cell.lambda), cell.n});
    const std::size_t nz = ds.world.latent_dim;
    const std::size_t nl = ds.world.lang_dim;
    const LatentEncoder encoder(ds.world, ds.seed);

    AblationResult out;
    out.spec = cell;

    std::unique_ptr<BackwardPlanner> planner;
    if (cell.mode == PolicyMode::lbp) {
        PlannerConfig pc = planner_base;
        pc.lambda = cell.lambda;
        pc.n = cell.n;
        planner = std::make_unique<BackwardPlanner>(nz, nl, pc,
                                                    derive_seed(cell_seed, "planner-init"));
        out.planner_loss = planner->train(ds, derive_seed(cell_seed, "planner-train")).final_loss();
    }

    PolicyConfig qc = policy_base;
    qc.mode = cell.mode;
    qc.fusion = cell.fusion;
    qc.lambda = cell.lambda;
    qc.plan_n = cell.n;
    DiffusionPolicy policy(nz, nl, qc, derive_seed(cell_seed, "policy-init"));
    out.policy_loss = policy.train(ds, derive_seed(cell_seed, "policy-train")).final_loss();

    std::map<std::size_t, std::vector<double>> refs;
    const std::map<std::size_t, std::vector<double>>* refp = nullptr;
    if (cell.mode == PolicyMode::glcbc) {
        refs = DiffusionPolicy::reference_goals(ds);
        refp = &refs;
    }

    ClosedLoopConfig ec = eval_base;
    ec.seed = derive_seed(cell_seed, "eval");
    ec.chunk_len = qc.chunk;
    ec.ensemble_decay = qc.ensemble_decay;
    ec.policy_id = cell.name;
    ec.planner_id = planner ? "cell-planner" : "none";
    const EvalReport report =
        closed_loop_eval(ds.world, encoder, stack_actor(ds.world, encoder, policy,
                                                        planner.get(), refp), ec);

    Accum success, score;
    for (const RolloutLog& log : report.rollouts) {
        success.add(log.success ? 1.0 : 0.0);
        score.add(log.mean_score);
    }
    out.average_success = report.average_success;
    out.success_stderr = success.se();
    out.average_score = report.average_score;
    out.score_stderr = score.se();
    out.rollouts = report.rollouts.size();
    return out;
}

}  // namespace

AblationTable ablation_grid(const Dataset& ds, const std::vector<AblationCellSpec>& cells,
                            const PlannerConfig& planner_base, const PolicyConfig& policy_base,
                            const ClosedLoopConfig& eval_base, std::uint64_t seed) {
    if (cells.empty()) throw ConfigError("ablation grid needs at least one cell");
    planner_base.validate();
    policy_base.validate();
    eval_base.validate();

    AblationTable table;
    table.seed = seed;
    table.cells.resize(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (std::size_t i = 0; i < cells.size(); ++i) {
        try {
            table.cells[i] = run_cell(ds, cells[i], planner_base, policy_base, eval_base, seed);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return table;
}

std::vector<AblationCellSpec> default_ablation_cells() {
    std::vector<AblationCellSpec> cells;
    for (double lambda : {0.5, 0.75})
        for (std::size_t n : {std::size_t(1), std::size_t(2), std::size_t(3)}) {
            AblationCellSpec c;
            std::ostringstream name;
            name << "lbp-l" << int(lambda * 100) << "-n" << n;
            c.name = name.str();
            c.lambda = lambda;
            c.n = n;
            cells.push_back(c);
        }
    AblationCellSpec avg;
    avg.name = "lbp-avgpool";
    avg.fusion = FusionKind::avgpool;
    cells.push_back(avg);
    AblationCellSpec goal_only;
    goal_only.name = "goal-only";
    goal_only.n = 0;
    cells.push_back(goal_only);
    AblationCellSpec lcbc;
    lcbc.name = "lcbc";
    lcbc.mode = PolicyMode::lcbc;
    cells.push_back(lcbc);
    AblationCellSpec glcbc;
    glcbc.name = "glcbc";
    glcbc.mode = PolicyMode::glcbc;
    cells.push_back(glcbc);
    return cells;
}

// ---------------------------------------------------------------------------
// checkpoint aggregation

AggregateMode parse_aggregate_mode(const std::string& s) {
    if (s == "top") return AggregateMode::top;
    if (s == "last") return AggregateMode::last;
    throw ConfigError("unknown aggregate mode '" + s + "' (expected top or last)");
}

std::string aggregate_mode_name(AggregateMode m) {
    return m == AggregateMode::top ? "top" : "last";
}

AggregateSummary aggregate_checkpoints(const std::vector<CheckpointEval>& runs, std::size_t k,
                                       AggregateMode mode) {
    if (k == 0) throw ContractError("aggregation needs k >= 1");
    if (runs.size() < k)
        throw ContractError("aggregation over " + std::to_string(k) + " checkpoints but only " +
                            std::to_string(runs.size()) + " were evaluated");

    std::vector<std::size_t> order(runs.size());
    std::iota(order.begin(), order.end(), 0);
    if (mode == AggregateMode::top) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return runs[a].average_success > runs[b].average_success;
        });
        order.resize(k);
    } else {
        order.erase(order.begin(), order.end() - std::ptrdiff_t(k));
    }

    AggregateSummary out;
    out.mode = mode;
    out.k = k;
    Accum success, score;
    std::map<std::size_t, Accum> per_task;
    for (std::size_t i : order) {
        out.chosen.push_back(runs[i].id);
        success.add(runs[i].average_success);
        score.add(runs[i].average_score);
        for (const auto& [task_id, v] : runs[i].per_task_success) per_task[task_id].add(v);
    }
    out.success = success.stat();
    out.score = score.stat();
    for (const auto& [task_id, a] : per_task) out.per_task_success[task_id] = a.stat();
    return out;
}

// ---------------------------------------------------------------------------
// emission

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    out.flush();
    if (!out) throw IoError("cannot write " + path);
}

std::string ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    return dir;
}

std::string provenance(const std::string& stage, const std::string& config_hash) {
    return "# stage=" + stage + "\n# config=" + config_hash + "\n";
}

// --- tiny deterministic SVG line charts ---

struct SvgSeries {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> points;  // (x in [0,1], y raw)
};

// fixed geometry; all numbers go through fmt_double, so re-renders are
// byte-identical
std::string svg_chart(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<SvgSeries>& series) {
    const double width = 640.0, height = 400.0;
    const double x0 = 64.0, x1 = 616.0, y0 = 352.0, y1 = 48.0;  // plot box (y down)
    double ymax = 0.0;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) ymax = std::max(ymax, y);
    if (!(ymax > 0.0)) ymax = 1.0;
    ymax *= 1.05;

    const auto px = [&](double fx) { return x0 + fx * (x1 - x0); };
    const auto py = [&](double y) { return y0 - (y / ymax) * (y0 - y1); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << fmt_double(width)
        << " " << fmt_double(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"" << fmt_double(width) << "\" height=\"" << fmt_double(height)
        << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << fmt_double(width / 2) << "\" y=\"24\" text-anchor=\"middle\" "
           "font-size=\"15\">" << title << "</text>\n";

    // axes
    svg << "<line x1=\"" << fmt_double(x0) << "\" y1=\"" << fmt_double(y0) << "\" x2=\""
        << fmt_double(x1) << "\" y2=\"" << fmt_double(y0) << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << fmt_double(x0) << "\" y1=\"" << fmt_double(y0) << "\" x2=\""
        << fmt_double(x0) << "\" y2=\"" << fmt_double(y1) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = double(i) / 4.0;
        svg << "<text x=\"" << fmt_double(px(fx)) << "\" y=\"" << fmt_double(y0 + 18)
            << "\" text-anchor=\"middle\">" << fmt_double(fx) << "</text>\n";
        const double ty = ymax * double(i) / 4.2;  // ticks strictly inside the box
        svg << "<line x1=\"" << fmt_double(x0 - 4) << "\" y1=\"" << fmt_double(py(ty))
            << "\" x2=\"" << fmt_double(x0) << "\" y2=\"" << fmt_double(py(ty))
            << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << fmt_double(x0 - 8) << "\" y=\"" << fmt_double(py(ty) + 4)
            << "\" text-anchor=\"end\">" << fmt_double(ty) << "</text>\n";
    }
    svg << "<text x=\"" << fmt_double((x0 + x1) / 2) << "\" y=\"" << fmt_double(height - 8)
        << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    svg << "<text x=\"16\" y=\"" << fmt_double((y0 + y1) / 2)
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << fmt_double((y0 + y1) / 2) << ")\">" << y_label << "</text>\n";

    // series + legend
    double legend_y = y1 + 8;
    for (const auto& s : series) {
        std::ostringstream pts;
        for (const auto& [x, y] : s.points) {
            if (pts.tellp() > 0) pts << " ";
            pts << fmt_double(px(x)) << "," << fmt_double(py(y));
        }
        if (!s.points.empty())
            svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << s.color
                << "\" stroke-width=\"2\"/>\n";
        for (const auto& [x, y] : s.points)
            svg << "<circle cx=\"" << fmt_double(px(x)) << "\" cy=\"" << fmt_double(py(y))
                << "\" r=\"2.5\" fill=\"" << s.color << "\"/>\n";
        svg << "<line x1=\"" << fmt_double(x1 - 120) << "\" y1=\"" << fmt_double(legend_y)
            << "\" x2=\"" << fmt_double(x1 - 96) << "\" y2=\"" << fmt_double(legend_y)
            << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << fmt_double(x1 - 90) << "\" y=\"" << fmt_double(legend_y + 4)
            << "\">" << s.label << "</text>\n";
        legend_y += 16;
    }
    svg << "</svg>\n";
    return svg.str();
}

std::vector<std::pair<double, double>> bin_points(const MseSeries& series) {
    std::vector<std::pair<double, double>> pts;
    for (const MseBin& b : series.bins)
        if (b.n > 0) pts.push_back({(b.lo + b.hi) / 2.0, b.mean});
    return pts;
}

}  // namespace

std::vector<std::string> emit_eval_report(const EvalReport& report, const std::string& dir,
                                          const std::string& config_hash) {
    ensure_dir(dir);
    std::vector<std::string> written;

    std::string head = provenance("eval", config_hash);
    head += "# seed=" + std::to_string(report.seed) + "\n";
    head += "# policy=" + report.policy_id + "\n";
    head += "# planner=" + report.planner_id + "\n";
    head += "# rollouts_per_task=" + std::to_string(report.rollouts_per_task) + "\n";
    head += "# average_success=" + fmt_double(report.average_success) + "\n";
    head += "# average_score=" + fmt_double(report.average_score) + "\n";
    head += "# scores are strict-progression stage scores in {0,25,50,75,100}\n";

    std::ostringstream summary;
    summary << head << "task,n,mean_score,score_stderr,success_rate,success_stderr\n";
    for (const TaskSummary& ts : report.tasks)
        summary << ts.task_id << "," << ts.rollouts << "," << fmt_double(ts.mean_score) << ","
                << fmt_double(ts.score_stderr) << "," << fmt_double(ts.success_rate) << ","
                << fmt_double(ts.success_stderr) << "\n";
    write_file(dir + "/eval-summary.csv", summary.str());
    written.push_back(dir + "/eval-summary.csv");

    std::ostringstream stages;
    stages << head << "task,stage,n,mean,stderr\n";
    for (const TaskSummary& ts : report.tasks)
        for (std::size_t st = 0; st < ts.stage_means.size(); ++st)
            stages << ts.task_id << "," << st << "," << ts.rollouts << ","
                   << fmt_double(ts.stage_means[st]) << "," << fmt_double(ts.stage_stderr[st])
                   << "\n";
    write_file(dir + "/eval-stages.csv", stages.str());
    written.push_back(dir + "/eval-stages.csv");

    std::ostringstream rollouts;
    rollouts << head << "task,rollout,episode_seed,steps,success,mean_score,stage_scores\n";
    for (const RolloutLog& log : report.rollouts) {
        rollouts << log.task_id << "," << log.index << "," << log.episode_seed << "," << log.steps
                 << "," << (log.success ? 1 : 0) << "," << fmt_double(log.mean_score) << ",";
        for (std::size_t st = 0; st < log.stage_scores.size(); ++st)
            rollouts << (st ? ";" : "") << log.stage_scores[st];
        rollouts << "\n";
    }
    write_file(dir + "/eval-rollouts.csv", rollouts.str());
    written.push_back(dir + "/eval-rollouts.csv");
    return written;
}

std::vector<std::string> emit_mse_curves(const MseCurveSet& curves, const std::string& dir,
                                         const std::string& config_hash) {
    ensure_dir(dir);
    std::vector<std::string> written;

    std::string head = provenance("mse-curves", config_hash);
    head += "# seed=" + std::to_string(curves.seed) + "\n";
    head += "# samples=" + std::to_string(curves.sample_count) + "\n";
    head += "# bins=" + std::to_string(curves.bins) + "\n";
    head += "# split=" + curves.split + "\n";
    head += "# units=mean squared error per latent dimension, raw latent scale\n";

    std::ostringstream bins;
    bins << head << "task,paradigm,bin_lo,bin_hi,n,mean,stderr\n";
    for (const TaskCurves& tc : curves.tasks)
        for (const MseSeries* s : {&tc.backward, &tc.forward, &tc.parallel})
            for (const MseBin& b : s->bins)
                bins << tc.task_id << "," << s->paradigm << "," << fmt_double(b.lo) << ","
                     << fmt_double(b.hi) << "," << b.n << "," << fmt_double(b.mean) << ","
                     << fmt_double(b.stderr_) << "\n";
    write_file(dir + "/mse-curves.csv", bins.str());
    written.push_back(dir + "/mse-curves.csv");

    std::ostringstream depth;
    depth << head
          << "# forward_final aggregates each draw's first hop past the end, whatever its depth\n"
          << "task,series,depth,n,mean,stderr\n";
    for (const TaskCurves& tc : curves.tasks) {
        for (const DepthPoint& p : tc.forward_by_depth)
            depth << tc.task_id << ",forward_depth," << p.depth << "," << p.n << ","
                  << fmt_double(p.mean) << "," << fmt_double(p.stderr_) << "\n";
        for (const DepthPoint& p : tc.backward_by_level)
            depth << tc.task_id << ",backward_level," << p.depth << "," << p.n << ","
                  << fmt_double(p.mean) << "," << fmt_double(p.stderr_) << "\n";
        for (const DepthPoint& p : tc.parallel_by_level)
            depth << tc.task_id << ",parallel_level," << p.depth << "," << p.n << ","
                  << fmt_double(p.mean) << "," << fmt_double(p.stderr_) << "\n";
        depth << tc.task_id << ",forward_final," << tc.forward_at_final.depth << ","
              << tc.forward_at_final.n << "," << fmt_double(tc.forward_at_final.mean) << ","
              << fmt_double(tc.forward_at_final.stderr_) << "\n";
    }
    write_file(dir + "/mse-depth.csv", depth.str());
    written.push_back(dir + "/mse-depth.csv");

    for (const TaskCurves& tc : curves.tasks) {
        const std::vector<SvgSeries> series = {
            {"backward", "#1f77b4", bin_points(tc.backward)},
            {"forward", "#d62728", bin_points(tc.forward)},
            {"parallel", "#2ca02c", bin_points(tc.parallel)},
        };
        const std::string path = dir + "/mse-task-" + std::to_string(tc.task_id) + ".svg";
        write_file(path, svg_chart("prediction error vs. progress, task " +
                                       std::to_string(tc.task_id),
                                   "target progress through the trajectory",
                                   "squared error per latent dim", series));
        written.push_back(path);
    }
    return written;
}

std::vector<std::string> emit_ablation(const AblationTable& table, const std::string& dir,
                                       const std::string& config_hash) {
    ensure_dir(dir);
    std::string head = provenance("ablate", config_hash);
    head += "# seed=" + std::to_string(table.seed) + "\n";

    std::ostringstream csv;
    csv << head
        << "name,mode,fusion,lambda,n,rollouts,average_success,success_stderr,"
           "average_score,score_stderr,planner_loss,policy_loss\n";
    for (const AblationResult& r : table.cells)
        csv << r.spec.name << "," << policy_mode_name(r.spec.mode) << ","
            << fusion_kind_name(r.spec.fusion) << "," << fmt_double(r.spec.lambda) << ","
            << r.spec.n << "," << r.rollouts << "," << fmt_double(r.average_success) << ","
            << fmt_double(r.success_stderr) << "," << fmt_double(r.average_score) << ","
            << fmt_double(r.score_stderr) << "," << fmt_double(r.planner_loss) << ","
            << fmt_double(r.policy_loss) << "\n";
    write_file(dir + "/ablation.csv", csv.str());
    return {dir + "/ablation.csv"};
}

std::vector<std::string> emit_aggregate(const AggregateSummary& summary, const std::string& dir,
                                        const std::string& config_hash) {
    ensure_dir(dir);
    std::string head = provenance("report", config_hash);
    head += "# mode=" + aggregate_mode_name(summary.mode) + "\n";
    head += "# k=" + std::to_string(summary.k) + "\n";
    std::string chosen;
    for (const std::string& id : summary.chosen) chosen += (chosen.empty() ? "" : ";") + id;
    head += "# chosen=" + chosen + "\n";

    std::ostringstream csv;
    csv << head << "metric,task,n,mean,stderr\n";
    csv << "success,-," << summary.success.n << "," << fmt_double(summary.success.mean) << ","
        << fmt_double(summary.success.stderr_) << "\n";
    csv << "score,-," << summary.score.n << "," << fmt_double(summary.score.mean) << ","
        << fmt_double(summary.score.stderr_) << "\n";
    for (const auto& [task_id, stat] : summary.per_task_success)
        csv << "success," << task_id << "," << stat.n << "," << fmt_double(stat.mean) << ","
            << fmt_double(stat.stderr_) << "\n";
    write_file(dir + "/aggregate.csv", csv.str());
    return {dir + "/aggregate.csv"};
}

std::vector<std::string> emit_report(const ReportBundle& bundle, const std::string& dir,
                                     const std::string& config_hash) {
    std::vector<std::string> written;
    const auto append = [&](std::vector<std::string> more) {
        written.insert(written.end(), more.begin(), more.end());
    };
    if (bundle.eval) append(emit_eval_report(*bundle.eval, dir, config_hash));
    if (bundle.curves) append(emit_mse_curves(*bundle.curves, dir, config_hash));
    if (bundle.ablation) append(emit_ablation(*bundle.ablation, dir, config_hash));
    if (bundle.aggregate) append(emit_aggregate(*bundle.aggregate, dir, config_hash));
    return written;
}

}  // namespace latentplan
