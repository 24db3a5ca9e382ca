// SPDX-License-Identifier: Apache-2.0
#include "latentplan/planner.hpp"

#include <cmath>
#include <cstdio>

#include "latentplan/checkpoint.hpp"
#include "latentplan/optim.hpp"

namespace latentplan {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::vector<double> run_mlp(const Mlp& m, std::vector<double> row) {
    const std::size_t width = row.size();
    Tensor x = Tensor::from({1, width}, std::move(row));
    return m.forward(x).value();
}

std::vector<double> cat(std::initializer_list<const std::vector<double>*> parts) {
    std::vector<double> out;
    std::size_t total = 0;
    for (const auto* p : parts) total += p->size();
    out.reserve(total);
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

// indices of the trajectories a planner may learn from
std::vector<std::size_t> train_ids(const Dataset& ds) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < ds.trajs.size(); ++i)
        if (!ds.is_holdout(ds.trajs[i])) ids.push_back(i);
    if (ids.empty()) throw ContractError("planner: dataset has no training trajectories");
    return ids;
}

// one uniformly drawn hindsight context from the training split
Context draw_context(const Dataset& ds, const std::vector<std::size_t>& ids, Rng& rng,
                     double lambda, std::size_t n, TrainLog& log) {
    const Trajectory& tr = ds.trajs[ids[rng.below(ids.size())]];
    const std::size_t t = rng.below(tr.last());
    Context ctx = sample_context(tr, t, lambda, n);
    for (std::size_t idx : ctx.indices)
        if (idx == t) ++log.collapsed;
    return ctx;
}

// rows -> one leaf tensor, shape [rows.size(), width]
Tensor stack_rows(const std::vector<std::vector<double>>& rows, std::size_t width) {
    std::vector<double> flat;
    flat.reserve(rows.size() * width);
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({rows.size(), width}, std::move(flat));
}

std::string bool_name(bool b) { return b ? "true" : "false"; }

std::map<std::string, std::string> config_meta(PlannerKind kind, std::size_t nz, std::size_t nl,
                                               const PlannerConfig& cfg) {
    return {
        {"kind", planner_kind_name(kind)},
        {"latent_dim", std::to_string(nz)},
        {"lang_dim", std::to_string(nl)},
        {"hidden", std::to_string(cfg.hidden)},
        {"lambda", fmt_double(cfg.lambda)},
        {"n", std::to_string(cfg.n)},
        {"k_forward", std::to_string(cfg.k_forward)},
        {"budget", std::to_string(cfg.budget)},
        {"batch", std::to_string(cfg.batch)},
        {"lr", fmt_double(cfg.lr)},
        {"self_conditioning", bool_name(cfg.self_conditioning)},
    };
}

PlannerConfig config_from_meta(const CheckpointData& ck) {
    PlannerConfig cfg;
    cfg.hidden = std::stoull(require_meta(ck, "hidden"));
    cfg.lambda = std::stod(require_meta(ck, "lambda"));
    cfg.n = std::stoull(require_meta(ck, "n"));
    cfg.k_forward = std::stoull(require_meta(ck, "k_forward"));
    cfg.budget = std::stoull(require_meta(ck, "budget"));
    cfg.batch = std::stoull(require_meta(ck, "batch"));
    cfg.lr = std::stod(require_meta(ck, "lr"));
    cfg.self_conditioning = require_meta(ck, "self_conditioning") == "true";
    cfg.validate();
    return cfg;
}

void check_kind(const CheckpointData& ck, PlannerKind expect, const std::string& path) {
    if (require_meta(ck, "kind") != planner_kind_name(expect))
        throw IoError("checkpoint " + path + " holds a '" + require_meta(ck, "kind") +
                      "' planner, expected '" + planner_kind_name(expect) + "'");
}

// shared optimizer loop: per step `make_loss` builds the graph and returns
// the scalar loss; divergence rescues to `rescue_path` if non-empty
TrainLog run_training(const PlannerConfig& cfg, const NamedParams& named,
                      const std::function<Tensor(TrainLog&)>& make_loss,
                      const std::string& rescue_path, const std::string& model,
                      const std::map<std::string, std::string>& meta) {
    TrainLog log;
    AdamW::Options opt;
    opt.lr = cfg.lr;
    AdamW optim(param_tensors(named), opt);
    for (std::size_t step = 0; step < cfg.budget; ++step) {
        try {
            Tape tape;
            Tape::Scope scope(tape);
            optim.zero_grad();
            Tensor loss = make_loss(log);
            const double value = loss.item();
            if (!std::isfinite(value)) throw NumericError("training loss is not finite");
            tape.backward(loss);
            optim.step();
            log.loss.push_back(value);
        } catch (const NumericError& e) {
            if (!rescue_path.empty()) save_checkpoint(rescue_path, model, meta, named);
            throw NumericError(std::string(e.what()) + " at optimizer step " +
                               std::to_string(step) +
                               (rescue_path.empty() ? "" : "; state saved to " + rescue_path));
        }
    }
    return log;
}

void fill_intended(PlanChain& chain, std::size_t t, std::size_t last, std::size_t n,
                   double lambda) {
    chain.intended.clear();
    chain.intended.push_back(last);
    for (std::size_t i = 1; i <= n; ++i)
        chain.intended.push_back(subgoal_index(t, last, lambda, i));
}

} // namespace

PlannerKind parse_planner_kind(const std::string& s) {
    if (s == "backward") return PlannerKind::backward;
    if (s == "forward") return PlannerKind::forward;
    if (s == "parallel") return PlannerKind::parallel;
    throw ConfigError("unknown planner kind '" + s + "' (backward|forward|parallel)");
}

std::string planner_kind_name(PlannerKind k) {
    switch (k) {
        case PlannerKind::backward: return "backward";
        case PlannerKind::forward: return "forward";
        case PlannerKind::parallel: return "parallel";
    }
    throw ContractError("invalid planner kind value");
}

void PlannerConfig::validate() const {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("planner.lambda must lie in (0,1)");
    if (hidden == 0) throw ConfigError("planner.hidden must be positive");
    if (budget == 0) throw ConfigError("planner.budget must be positive");
    if (batch == 0) throw ConfigError("planner.batch must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("planner.lr must be positive");
    if (k_forward == 0) throw ConfigError("planner.k_forward must be positive");
}

double chain_loss(const Context& ctx, const SubgoalFn& fn, bool self_conditioning) {
    const std::size_t n = ctx.subgoals.size();
    auto mse_of = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return s / static_cast<double>(a.size());
    };
    double teacher = 0.0, selfcond = 0.0;
    const std::vector<double>* anchor_gt = &ctx.z_g;
    std::vector<double> anchor_own = ctx.z_g;
    for (std::size_t i = 0; i < n; ++i) {
        teacher += mse_of(fn(ctx.z_t, *anchor_gt, ctx.phi), ctx.subgoals[i]);
        if (self_conditioning) {
            anchor_own = fn(ctx.z_t, anchor_own, ctx.phi);
            selfcond += mse_of(anchor_own, ctx.subgoals[i]);
        }
        anchor_gt = &ctx.subgoals[i];
    }
    return teacher + selfcond;
}

PlanChain plan_backward_with(const GoalFn& goal, const SubgoalFn& sub,
                             const std::vector<double>& z_t, const std::vector<double>& phi,
                             std::size_t n, double lambda) {
    PlanChain chain;
    chain.lambda = lambda;
    chain.z_g = goal(z_t, phi);
    if (!all_finite(chain.z_g)) throw NumericError("plan: non-finite grounded goal");
    const std::vector<double>* anchor = &chain.z_g;
    for (std::size_t i = 1; i <= n; ++i) {
        std::vector<double> w = sub(z_t, *anchor, phi);
        if (!all_finite(w))
            throw NumericError("plan: non-finite output at chain level " + std::to_string(i));
        chain.subgoals.push_back(std::move(w));
        anchor = &chain.subgoals.back();
    }
    return chain;
}

// ---------------------------------------------------------------------------
// backward planner

BackwardPlanner::BackwardPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                                 std::uint64_t init_seed)
    : nz_(latent_dim), nl_(lang_dim), cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, "init-backward", {nz_, nl_}));
    goal_ = Mlp({nz_ + nl_, cfg_.hidden, nz_}, Activation::gelu, rng);
    sub_ = Mlp({2 * nz_ + nl_, cfg_.hidden, nz_}, Activation::gelu, rng);
}

NamedParams BackwardPlanner::params() const {
    NamedParams out;
    goal_.collect("goal", out);
    sub_.collect("sub", out);
    return out;
}

TrainLog BackwardPlanner::train(const Dataset& ds, std::uint64_t seed,
                                const std::string& rescue_path) {
    const std::vector<std::size_t> ids = train_ids(ds);
    Rng rng(derive_seed(seed, "train-backward", {cfg_.n}));
    const std::size_t n = cfg_.n;
    const NamedParams named = params();

    auto make_loss = [&](TrainLog& log) {
        std::vector<std::vector<double>> zt_rows, phi_rows, goal_rows;
        std::vector<std::vector<std::vector<double>>> anchor_rows(n), target_rows(n);
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            Context ctx = draw_context(ds, ids, rng, cfg_.lambda, n, log);
            zt_rows.push_back(cat({&ctx.z_t, &ctx.phi}));
            phi_rows.push_back(ctx.phi);
            goal_rows.push_back(ctx.z_g);
            const std::vector<double>* anchor = &ctx.z_g;
            for (std::size_t i = 0; i < n; ++i) {
                anchor_rows[i].push_back(cat({&ctx.z_t, anchor, &ctx.phi}));
                target_rows[i].push_back(ctx.subgoals[i]);
                anchor = &ctx.subgoals[i];
            }
        }
        Tensor goal_in = stack_rows(zt_rows, nz_ + nl_);
        Tensor goal_tgt = stack_rows(goal_rows, nz_);
        Tensor loss = mse(goal_.forward(goal_in), goal_tgt);

        if (n == 0) return loss;

        // teacher-forced pass, one level at a time on ground-truth anchors
        std::vector<Tensor> level_preds;
        for (std::size_t i = 0; i < n; ++i) {
            Tensor x = stack_rows(anchor_rows[i], 2 * nz_ + nl_);
            Tensor p = sub_.forward(x);
            level_preds.push_back(p);
            loss = add(loss, mse(p, stack_rows(target_rows[i], nz_)));
        }
        if (!cfg_.self_conditioning) return loss;

        // self-conditioned pass: level 1 coincides with the teacher-forced
        // one, deeper levels re-anchor on the model's own (detached) output
        loss = add(loss, mse(level_preds[0], stack_rows(target_rows[0], nz_)));
        Tensor own = detach(level_preds[0]);
        // the fixed [z_t | phi] flanks of every self-conditioned input row
        Tensor zt_only = slice_cols(stack_rows(zt_rows, nz_ + nl_), 0, nz_);
        Tensor phi_only = stack_rows(phi_rows, nl_);
        for (std::size_t i = 1; i < n; ++i) {
            Tensor x = concat_cols({zt_only, own, phi_only});
            Tensor p = sub_.forward(x);
            loss = add(loss, mse(p, stack_rows(target_rows[i], nz_)));
            own = detach(p);
        }
        return loss;
    };

    TrainLog log = run_training(cfg_, named, make_loss, rescue_path, "planner.backward",
                                config_meta(PlannerKind::backward, nz_, nl_, cfg_));
    trained_ = true;
    return log;
}

std::vector<double> BackwardPlanner::predict_goal(const std::vector<double>& z_t,
                                                  const std::vector<double>& phi) const {
    return run_mlp(goal_, cat({&z_t, &phi}));
}

std::vector<double> BackwardPlanner::predict_subgoal(const std::vector<double>& z_t,
                                                     const std::vector<double>& anchor,
                                                     const std::vector<double>& phi) const {
    return run_mlp(sub_, cat({&z_t, &anchor, &phi}));
}

PlanChain BackwardPlanner::plan(const std::vector<double>& z_t,
                                const std::vector<double>& phi) const {
    if (!trained_) throw ContractError("backward planner is untrained");
    auto goal = [this](const std::vector<double>& z, const std::vector<double>& p) {
        return predict_goal(z, p);
    };
    auto sub = [this](const std::vector<double>& z, const std::vector<double>& a,
                      const std::vector<double>& p) { return predict_subgoal(z, a, p); };
    return plan_backward_with(goal, sub, z_t, phi, cfg_.n, cfg_.lambda);
}

PlanChain BackwardPlanner::plan_at(const std::vector<double>& z_t, const std::vector<double>& phi,
                                   std::size_t t, std::size_t last) const {
    PlanChain chain = plan(z_t, phi);
    fill_intended(chain, t, last, cfg_.n, cfg_.lambda);
    return chain;
}

void BackwardPlanner::save(const std::string& path,
                           const std::map<std::string, std::string>& extra_meta) const {
    auto meta = config_meta(PlannerKind::backward, nz_, nl_, cfg_);
    meta.insert(extra_meta.begin(), extra_meta.end());
    save_checkpoint(path, "planner.backward", meta, params());
}

BackwardPlanner BackwardPlanner::load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    check_kind(ck, PlannerKind::backward, path);
    BackwardPlanner p(std::stoull(require_meta(ck, "latent_dim")),
                      std::stoull(require_meta(ck, "lang_dim")), config_from_meta(ck), 0);
    restore_params(ck, p.params());
    p.trained_ = true;
    return p;
}

// ---------------------------------------------------------------------------
// forward baseline

ForwardPlanner::ForwardPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                               std::uint64_t init_seed)
    : nz_(latent_dim), nl_(lang_dim), cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, "init-forward", {nz_, nl_}));
    net_ = Mlp({nz_ + nl_, cfg_.hidden, nz_}, Activation::gelu, rng);
}

NamedParams ForwardPlanner::params() const {
    NamedParams out;
    net_.collect("net", out);
    return out;
}

TrainLog ForwardPlanner::train(const Dataset& ds, std::uint64_t seed,
                               const std::string& rescue_path) {
    const std::vector<std::size_t> ids = train_ids(ds);
    Rng rng(derive_seed(seed, "train-forward", {cfg_.k_forward}));
    const NamedParams named = params();

    auto make_loss = [&](TrainLog&) {
        std::vector<std::vector<double>> in_rows, tgt_rows;
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            const Trajectory& tr = ds.trajs[ids[rng.below(ids.size())]];
            const std::size_t t = rng.below(tr.last());
            // lookahead clamps at the final frame, mirroring termination
            const std::size_t tgt = std::min(t + cfg_.k_forward, tr.last());
            in_rows.push_back(cat({&tr.z[t], &tr.phi}));
            tgt_rows.push_back(tr.z[tgt]);
        }
        Tensor x = stack_rows(in_rows, nz_ + nl_);
        Tensor y = stack_rows(tgt_rows, nz_);
        return mse(net_.forward(x), y);
    };

    TrainLog log = run_training(cfg_, named, make_loss, rescue_path, "planner.forward",
                                config_meta(PlannerKind::forward, nz_, nl_, cfg_));
    trained_ = true;
    return log;
}

std::vector<double> ForwardPlanner::step_once(const std::vector<double>& z,
                                              const std::vector<double>& phi) const {
    return run_mlp(net_, cat({&z, &phi}));
}

std::vector<std::vector<double>> ForwardPlanner::rollout(const std::vector<double>& z_t,
                                                         const std::vector<double>& phi,
                                                         std::size_t hops) const {
    if (!trained_) throw ContractError("forward planner is untrained");
    std::vector<std::vector<double>> out;
    const std::vector<double>* cur = &z_t;
    for (std::size_t h = 0; h < hops; ++h) {
        std::vector<double> next = step_once(*cur, phi);
        if (!all_finite(next))
            throw NumericError("rollout: non-finite latent at hop " + std::to_string(h + 1));
        out.push_back(std::move(next));
        cur = &out.back();
    }
    return out;
}

void ForwardPlanner::save(const std::string& path,
                          const std::map<std::string, std::string>& extra_meta) const {
    auto meta = config_meta(PlannerKind::forward, nz_, nl_, cfg_);
    meta.insert(extra_meta.begin(), extra_meta.end());
    save_checkpoint(path, "planner.forward", meta, params());
}

ForwardPlanner ForwardPlanner::load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    check_kind(ck, PlannerKind::forward, path);
    ForwardPlanner p(std::stoull(require_meta(ck, "latent_dim")),
                     std::stoull(require_meta(ck, "lang_dim")), config_from_meta(ck), 0);
    restore_params(ck, p.params());
    p.trained_ = true;
    return p;
}

// ---------------------------------------------------------------------------
// parallel baseline

ParallelPlanner::ParallelPlanner(std::size_t latent_dim, std::size_t lang_dim, PlannerConfig cfg,
                                 std::uint64_t init_seed)
    : nz_(latent_dim), nl_(lang_dim), cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, "init-parallel", {nz_, nl_}));
    net_ = Mlp({nz_ + nl_, cfg_.hidden, (cfg_.n + 1) * nz_}, Activation::gelu, rng);
}

NamedParams ParallelPlanner::params() const {
    NamedParams out;
    net_.collect("net", out);
    return out;
}

TrainLog ParallelPlanner::train(const Dataset& ds, std::uint64_t seed,
                                const std::string& rescue_path) {
    const std::vector<std::size_t> ids = train_ids(ds);
    Rng rng(derive_seed(seed, "train-parallel", {cfg_.n}));
    const std::size_t n = cfg_.n;
    const NamedParams named = params();

    auto make_loss = [&](TrainLog& log) {
        std::vector<std::vector<double>> in_rows, goal_rows;
        std::vector<std::vector<std::vector<double>>> target_rows(n);
        for (std::size_t b = 0; b < cfg_.batch; ++b) {
            Context ctx = draw_context(ds, ids, rng, cfg_.lambda, n, log);
            in_rows.push_back(cat({&ctx.z_t, &ctx.phi}));
            goal_rows.push_back(ctx.z_g);
            for (std::size_t i = 0; i < n; ++i) target_rows[i].push_back(ctx.subgoals[i]);
        }
        Tensor pred = net_.forward(stack_rows(in_rows, nz_ + nl_));
        // head order [z_g | w_1 | ... | w_n]; loss sums per-head errors
        Tensor loss = mse(slice_cols(pred, 0, nz_), stack_rows(goal_rows, nz_));
        for (std::size_t i = 0; i < n; ++i)
            loss = add(loss, mse(slice_cols(pred, (i + 1) * nz_, (i + 2) * nz_),
                                 stack_rows(target_rows[i], nz_)));
        return loss;
    };

    TrainLog log = run_training(cfg_, named, make_loss, rescue_path, "planner.parallel",
                                config_meta(PlannerKind::parallel, nz_, nl_, cfg_));
    trained_ = true;
    return log;
}

PlanChain ParallelPlanner::plan(const std::vector<double>& z_t,
                                const std::vector<double>& phi) const {
    if (!trained_) throw ContractError("parallel planner is untrained");
    const std::vector<double> flat = run_mlp(net_, cat({&z_t, &phi}));
    if (!all_finite(flat)) throw NumericError("plan: non-finite parallel head output");
    PlanChain chain;
    chain.lambda = cfg_.lambda;
    chain.z_g.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(nz_));
    for (std::size_t i = 1; i <= cfg_.n; ++i)
        chain.subgoals.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * nz_),
                                    flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * nz_));
    return chain;
}

PlanChain ParallelPlanner::plan_at(const std::vector<double>& z_t, const std::vector<double>& phi,
                                   std::size_t t, std::size_t last) const {
    PlanChain chain = plan(z_t, phi);
    fill_intended(chain, t, last, cfg_.n, cfg_.lambda);
    return chain;
}

void ParallelPlanner::save(const std::string& path,
                           const std::map<std::string, std::string>& extra_meta) const {
    auto meta = config_meta(PlannerKind::parallel, nz_, nl_, cfg_);
    meta.insert(extra_meta.begin(), extra_meta.end());
    save_checkpoint(path, "planner.parallel", meta, params());
}

ParallelPlanner ParallelPlanner::load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    check_kind(ck, PlannerKind::parallel, path);
    ParallelPlanner p(std::stoull(require_meta(ck, "latent_dim")),
                      std::stoull(require_meta(ck, "lang_dim")), config_from_meta(ck), 0);
    restore_params(ck, p.params());
    p.trained_ = true;
    return p;
}

} // namespace latentplan
