// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "latentplan/planner.hpp"

using namespace latentplan;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kNz = 8;
constexpr std::size_t kNl = 4;

std::vector<double> rand_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// straight-line latent path from a random start to `end`
Trajectory line_traj(Rng& rng, std::size_t h, const std::vector<double>& end,
                     const std::vector<double>& phi, std::size_t task, std::size_t episode) {
    Trajectory tr;
    tr.task_id = task;
    tr.episode = episode;
    tr.phi = phi;
    const std::vector<double> start = rand_vec(rng, end.size());
    for (std::size_t t = 0; t < h; ++t) {
        const double a = static_cast<double>(t) / static_cast<double>(h - 1);
        std::vector<double> z(end.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = (1.0 - a) * start[i] + a * end[i];
        tr.z.push_back(std::move(z));
    }
    return tr;
}

Dataset line_dataset(std::uint64_t seed, std::size_t n_traj, std::size_t h,
                     const std::vector<double>& end) {
    Dataset ds;
    ds.data.tasks = {0};
    ds.data.demos_per_task = n_traj;
    ds.data.holdout_fraction = 0.0;
    Rng rng(derive_seed(seed, "line-ds", {n_traj}));
    const std::vector<double> phi = rand_vec(rng, kNl);
    for (std::size_t e = 0; e < n_traj; ++e) ds.trajs.push_back(line_traj(rng, h, end, phi, 0, e));
    return ds;
}

PlannerConfig small_config() {
    PlannerConfig cfg;
    cfg.hidden = 64;
    cfg.budget = 800;
    cfg.batch = 16;
    return cfg;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

// a real (simulated) dataset shared by the heavier regressions below
const Dataset& sim_dataset() {
    static const Dataset ds = [] {
        WorldConfig world;
        DataConfig data;
        data.tasks = {0, 1};
        data.demos_per_task = 10;
        data.holdout_fraction = 0.2;
        const fs::path dir = fs::temp_directory_path() / "lp_planner_ds";
        fs::remove_all(dir);
        Dataset out = generate_dataset(world, data, 91, dir.string(), "t");
        fs::remove_all(dir);
        return out;
    }();
    return ds;
}

} // namespace

TEST_CASE("planner: kind parsing and config validation") {
    CHECK(parse_planner_kind("backward") == PlannerKind::backward);
    CHECK(planner_kind_name(PlannerKind::parallel) == "parallel");
    CHECK_THROWS_AS(parse_planner_kind("sideways"), ConfigError);

    PlannerConfig bad;
    bad.lambda = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PlannerConfig{};
    bad.k_forward = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PlannerConfig{};
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("planner: chain objective base case and ground-truth fixed point") {
    Rng rng(derive_seed(21, "chain", {0}));
    Context ctx;
    ctx.t = 3;
    ctx.z_t = rand_vec(rng, kNz);
    ctx.phi = rand_vec(rng, kNl);
    ctx.z_g = rand_vec(rng, kNz);
    ctx.subgoals = {rand_vec(rng, kNz), rand_vec(rng, kNz)};
    ctx.indices = {40, 21};

    // depth 1: teacher-forced and self-conditioned terms coincide
    Context one = ctx;
    one.subgoals.resize(1);
    one.indices.resize(1);
    const std::vector<double> fixed = rand_vec(rng, kNz);
    SubgoalFn constant = [&](const std::vector<double>&, const std::vector<double>&,
                             const std::vector<double>&) { return fixed; };
    const double mse1 = sq_dist(fixed, one.subgoals[0]) / static_cast<double>(kNz);
    CHECK(chain_loss(one, constant, true) == doctest::Approx(2.0 * mse1).epsilon(1e-12));
    CHECK(chain_loss(one, constant, false) == doctest::Approx(mse1).epsilon(1e-12));

    // a predictor that answers with the true next level scores exactly zero
    SubgoalFn oracle = [&](const std::vector<double>&, const std::vector<double>& anchor,
                           const std::vector<double>&) {
        if (anchor == ctx.z_g) return ctx.subgoals[0];
        if (anchor == ctx.subgoals[0]) return ctx.subgoals[1];
        FAIL("oracle queried with an unexpected anchor");
        return anchor;
    };
    CHECK(chain_loss(ctx, oracle, true) == 0.0);
    CHECK(chain_loss(ctx, oracle, false) == 0.0);
}

TEST_CASE("planner: backward recursion with pluggable predictors") {
    Rng rng(derive_seed(22, "recursion", {0}));
    const std::vector<double> z_t = rand_vec(rng, kNz);
    const std::vector<double> phi = rand_vec(rng, kNl);
    const std::vector<double> g = rand_vec(rng, kNz);
    const std::vector<double> s1 = rand_vec(rng, kNz);
    const std::vector<double> s2 = rand_vec(rng, kNz);

    GoalFn goal = [&](const std::vector<double>&, const std::vector<double>&) { return g; };
    SubgoalFn sub = [&](const std::vector<double>&, const std::vector<double>& anchor,
                        const std::vector<double>&) { return anchor == g ? s1 : s2; };

    // degenerate config: only the grounded goal
    PlanChain bare = plan_backward_with(goal, sub, z_t, phi, 0, 0.5);
    CHECK(bare.z_g == g);
    CHECK(bare.subgoals.empty());

    // ground-truth lookups reproduce the ladder exactly, coarse to fine
    PlanChain chain = plan_backward_with(goal, sub, z_t, phi, 2, 0.5);
    CHECK(chain.z_g == g);
    REQUIRE(chain.subgoals.size() == 2);
    CHECK(chain.subgoals[0] == s1);
    CHECK(chain.subgoals[1] == s2);

    // repeated evaluation is bit-identical
    PlanChain again = plan_backward_with(goal, sub, z_t, phi, 2, 0.5);
    CHECK(again.z_g == chain.z_g);
    CHECK(again.subgoals == chain.subgoals);

    SubgoalFn broken = [&](const std::vector<double>&, const std::vector<double>&,
                           const std::vector<double>&) {
        std::vector<double> bad(kNz, std::numeric_limits<double>::quiet_NaN());
        return bad;
    };
    CHECK_THROWS_AS(plan_backward_with(goal, broken, z_t, phi, 1, 0.5), NumericError);
}

TEST_CASE("planner: training loss matches the numeric chain objective") {
    Dataset ds = line_dataset(31, 4, 24, std::vector<double>(kNz, 0.25));
    PlannerConfig cfg = small_config();
    cfg.budget = 1;
    BackwardPlanner trainee(kNz, kNl, cfg, 5);
    BackwardPlanner frozen(kNz, kNl, cfg, 5);  // same init, never stepped
    TrainLog log = trainee.train(ds, 123);
    REQUIRE(log.loss.size() == 1);

    // replay the first batch's sampling stream and evaluate numerically
    Rng rng(derive_seed(123, "train-backward", {cfg.n}));
    SubgoalFn fn = [&](const std::vector<double>& z, const std::vector<double>& a,
                       const std::vector<double>& p) { return frozen.predict_subgoal(z, a, p); };
    double goal_mse = 0.0, chain = 0.0;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
        const Trajectory& tr = ds.trajs[rng.below(ds.trajs.size())];
        const std::size_t t = rng.below(tr.last());
        Context ctx = sample_context(tr, t, cfg.lambda, cfg.n);
        goal_mse += sq_dist(frozen.predict_goal(ctx.z_t, ctx.phi), ctx.z_g) /
                    static_cast<double>(kNz);
        chain += chain_loss(ctx, fn, cfg.self_conditioning);
    }
    const double expect = (goal_mse + chain) / static_cast<double>(cfg.batch);
    CHECK(log.loss[0] == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("planner: constant goal is regressed to within 1e-3") {
    const std::vector<double> c(kNz, 0.4);
    Dataset ds = line_dataset(32, 4, 16, c);
    PlannerConfig cfg = small_config();
    cfg.n = 0;  // goal head only
    cfg.budget = 6000;
    cfg.lr = 3e-3;
    BackwardPlanner planner(kNz, kNl, cfg, 6);
    planner.train(ds, 7);
    for (const Trajectory& tr : ds.trajs)
        for (std::size_t t = 0; t < tr.last(); t += 3) {
            const auto pred = planner.predict_goal(tr.z[t], tr.phi);
            for (std::size_t d = 0; d < kNz; ++d) CHECK(std::fabs(pred[d] - c[d]) < 1e-3);
        }
}

TEST_CASE("planner: a single demonstration is memorized") {
    Dataset ds = line_dataset(34, 1, 20, std::vector<double>(kNz, -0.3));
    PlannerConfig cfg = small_config();
    cfg.budget = 1500;
    BackwardPlanner planner(kNz, kNl, cfg, 8);
    TrainLog log = planner.train(ds, 9);
    CHECK(log.final_loss() < 1e-3);
    CHECK(log.collapsed == 0);  // ladder indices always land past the query time
}

TEST_CASE("planner: goal predictions separate tasks on simulated data") {
    const Dataset& ds = sim_dataset();
    const std::size_t nz = ds.trajs[0].z[0].size();
    const std::size_t nl = ds.trajs[0].phi.size();
    PlannerConfig cfg;
    cfg.hidden = 96;
    cfg.budget = 1200;
    cfg.batch = 32;
    cfg.n = 0;
    BackwardPlanner planner(nz, nl, cfg, 11);
    planner.train(ds, 12);

    // oracle quantities measured from the data itself
    double sep = 0.0, cnt = 0.0;
    for (std::size_t i : ds.task_trajs(0, false))
        for (std::size_t j : ds.task_trajs(1, false)) {
            sep += std::sqrt(sq_dist(ds.trajs[i].z.back(), ds.trajs[j].z.back()));
            cnt += 1.0;
        }
    sep /= cnt;

    for (std::size_t task : {0u, 1u}) {
        double err = 0.0, n = 0.0;
        for (std::size_t i : ds.task_trajs(task, false)) {
            const Trajectory& tr = ds.trajs[i];
            for (std::size_t t = 0; t < tr.last(); t += 25) {
                err += sq_dist(planner.predict_goal(tr.z[t], tr.phi), tr.z.back());
                n += 1.0;
            }
        }
        const double rmse = std::sqrt(err / n);
        CHECK(rmse < sep / 4.0);
    }
}

TEST_CASE("planner: held-out subgoal error beats the variance baseline") {
    const Dataset& ds = sim_dataset();
    const std::size_t nz = ds.trajs[0].z[0].size();
    const std::size_t nl = ds.trajs[0].phi.size();
    PlannerConfig cfg;
    cfg.hidden = 96;
    cfg.budget = 1200;
    cfg.batch = 32;
    BackwardPlanner planner(nz, nl, cfg, 13);
    planner.train(ds, 14);

    // level-1 targets across all held-out contexts
    std::vector<Context> ctxs;
    for (const Trajectory& tr : ds.trajs) {
        if (!ds.is_holdout(tr)) continue;
        for (std::size_t t = 0; t < tr.last(); t += 5)
            ctxs.push_back(sample_context(tr, t, cfg.lambda, 1));
    }
    REQUIRE(!ctxs.empty());
    std::vector<double> mean(nz, 0.0);
    for (const Context& c : ctxs)
        for (std::size_t d = 0; d < nz; ++d) mean[d] += c.subgoals[0][d];
    for (double& m : mean) m /= static_cast<double>(ctxs.size());
    double var = 0.0, mse_w1 = 0.0;
    for (const Context& c : ctxs) {
        var += sq_dist(c.subgoals[0], mean);
        mse_w1 += sq_dist(planner.predict_subgoal(c.z_t, c.z_g, c.phi), c.subgoals[0]);
    }
    var /= static_cast<double>(ctxs.size() * nz);
    mse_w1 /= static_cast<double>(ctxs.size() * nz);
    CHECK(mse_w1 < var);
}

TEST_CASE("planner: forward baseline fixes static dynamics and compounds error") {
    // constant latents: the lookahead map has a fixed point at the data
    Dataset still = line_dataset(35, 3, 30, std::vector<double>(kNz, 0.1));
    for (Trajectory& tr : still.trajs)
        for (auto& z : tr.z) z = tr.z.back();
    PlannerConfig cfg = small_config();
    ForwardPlanner fixed(kNz, kNl, cfg, 15);
    fixed.train(still, 16);
    const auto hops = fixed.rollout(still.trajs[0].z[0], still.trajs[0].phi, 5);
    for (const auto& h : hops)
        CHECK(std::sqrt(sq_dist(h, still.trajs[0].z[0])) < 5e-3);

    // simulated data: ten chained hops drift more than a single hop
    const Dataset& ds = sim_dataset();
    const std::size_t nz = ds.trajs[0].z[0].size();
    const std::size_t nl = ds.trajs[0].phi.size();
    PlannerConfig rcfg;
    rcfg.hidden = 96;
    rcfg.budget = 1200;
    rcfg.batch = 32;
    ForwardPlanner fwd(nz, nl, rcfg, 17);
    fwd.train(ds, 18);
    double one = 0.0, ten = 0.0, n = 0.0;
    for (const Trajectory& tr : ds.trajs) {
        if (!ds.is_holdout(tr)) continue;
        const std::size_t span = 10 * rcfg.k_forward;
        for (std::size_t t = 0; t + span <= tr.last(); t += 17) {
            const auto hops10 = fwd.rollout(tr.z[t], tr.phi, 10);
            one += sq_dist(hops10[0], tr.z[t + rcfg.k_forward]);
            ten += sq_dist(hops10[9], tr.z[t + span]);
            n += 1.0;
        }
    }
    REQUIRE(n > 0.0);
    CHECK(ten / n > one / n);
}

TEST_CASE("planner: parallel heads cover the goal and every level") {
    Dataset ds = line_dataset(36, 5, 24, std::vector<double>(kNz, 0.2));
    PlannerConfig cfg = small_config();
    ParallelPlanner par(kNz, kNl, cfg, 19);
    TrainLog log = par.train(ds, 20);
    CHECK(log.loss.front() > log.final_loss());

    PlanChain chain = par.plan(ds.trajs[0].z[2], ds.trajs[0].phi);
    CHECK(chain.z_g.size() == kNz);
    REQUIRE(chain.subgoals.size() == cfg.n);
    for (const auto& w : chain.subgoals) CHECK(w.size() == kNz);

    // n = 0 degenerates to a plain goal predictor
    PlannerConfig bare = small_config();
    bare.n = 0;
    bare.budget = 50;
    ParallelPlanner goal_only(kNz, kNl, bare, 21);
    goal_only.train(ds, 22);
    PlanChain just_goal = goal_only.plan(ds.trajs[0].z[2], ds.trajs[0].phi);
    CHECK(just_goal.z_g.size() == kNz);
    CHECK(just_goal.subgoals.empty());
}

TEST_CASE("planner: plans are deterministic and survive checkpointing") {
    Dataset ds = line_dataset(37, 4, 24, std::vector<double>(kNz, -0.1));
    PlannerConfig cfg = small_config();
    cfg.budget = 120;
    BackwardPlanner planner(kNz, kNl, cfg, 23);

    CHECK_THROWS_AS(planner.plan(ds.trajs[0].z[0], ds.trajs[0].phi), ContractError);
    planner.train(ds, 24);

    const auto& z0 = ds.trajs[0].z[0];
    const auto& phi = ds.trajs[0].phi;
    PlanChain a = planner.plan(z0, phi);
    PlanChain b = planner.plan(z0, phi);
    CHECK(a.z_g == b.z_g);
    CHECK(a.subgoals == b.subgoals);

    const fs::path path = fs::temp_directory_path() / "lp_planner.ckpt";
    planner.save(path.string(), {{"config_hash", "beef"}});
    BackwardPlanner back = BackwardPlanner::load(path.string());
    PlanChain c = back.plan(z0, phi);
    CHECK(c.z_g == a.z_g);
    CHECK(c.subgoals == a.subgoals);
    CHECK(back.config().lambda == cfg.lambda);

    // a checkpoint of one kind cannot be opened as another
    CHECK_THROWS_AS(ForwardPlanner::load(path.string()), IoError);

    // intended indices are present only when the query time is known
    CHECK(a.intended.empty());
    PlanChain timed = planner.plan_at(z0, phi, 0, 100);
    REQUIRE(timed.intended.size() == cfg.n + 1);
    CHECK(timed.intended[0] == 100);
    CHECK(timed.intended[1] == 50);
    CHECK(timed.intended[2] == 25);
    for (std::size_t i = 1; i < timed.intended.size(); ++i)
        CHECK(timed.intended[i] < timed.intended[i - 1]);

    fs::remove(path);
    fs::remove(path.string() + ".manifest");
}
