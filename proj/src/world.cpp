// SPDX-License-Identifier: Apache-2.0
#include "latentplan/world.hpp"

#include <cmath>

#include "latentplan/common.hpp"
#include "latentplan/kernels.hpp"

namespace latentplan {

namespace {
double dist(const Vec2& a, const Vec2& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// velocity clipped to max step length
Vec2 clip_speed(double vx, double vy, double speed) {
    const double n = std::sqrt(vx * vx + vy * vy);
    if (n <= speed || n == 0.0) return {vx, vy};
    const double s = speed / n;
    return {vx * s, vy * s};
}
} // namespace

const std::vector<TaskSpec>& builtin_tasks() {
    using K = StageRule::Kind;
    static const std::vector<TaskSpec> tasks = [] {
        std::vector<TaskSpec> t;
        // swap-pair: two objects into slots marked by two static objects
        t.push_back(TaskSpec{0, "swap-pair",
                             {StageRule{0, K::slot_offset, 2, 0, {0.07, 0.05}},
                              StageRule{1, K::slot_offset, 3, 0, {0.07, 0.05}}}});
        // gather: three objects onto fixed pads near the center
        t.push_back(TaskSpec{1, "gather",
                             {StageRule{0, K::fixed, 0, 0, {0.44, 0.50}},
                              StageRule{1, K::fixed, 0, 0, {0.56, 0.50}},
                              StageRule{2, K::fixed, 0, 0, {0.50, 0.60}}}});
        // relay: five stages, chained anchors, one object revisited
        t.push_back(TaskSpec{2, "relay",
                             {StageRule{0, K::slot_offset, 3, 0, {-0.08, 0.08}},
                              StageRule{1, K::slot_offset, 2, 0, {0.08, 0.08}},
                              StageRule{2, K::fixed, 0, 0, {0.20, 0.80}},
                              StageRule{3, K::target_offset, 1, 0, {0.00, -0.11}},
                              StageRule{0, K::target_midpoint, 2, 3, {0.00, 0.06}}}});
        return t;
    }();
    return tasks;
}

const TaskSpec& task_spec(std::size_t task_id) {
    const auto& all = builtin_tasks();
    if (task_id >= all.size())
        throw ConfigError("unknown task id " + std::to_string(task_id));
    return all[task_id];
}

Task resolve_task(const TaskSpec& spec, const std::vector<Vec2>& slots) {
    Task task;
    task.task_id = spec.task_id;
    task.num_stages = spec.num_stages();
    for (const StageRule& r : spec.stages) {
        if (r.source >= slots.size())
            throw ContractError("stage source id out of range for task " + spec.name);
        Vec2 tgt{};
        switch (r.kind) {
            case StageRule::Kind::fixed:
                tgt = r.offset;
                break;
            case StageRule::Kind::slot_offset:
                if (r.anchor_a >= slots.size()) throw ContractError("anchor slot out of range");
                tgt = {slots[r.anchor_a][0] + r.offset[0], slots[r.anchor_a][1] + r.offset[1]};
                break;
            case StageRule::Kind::target_offset:
                if (r.anchor_a >= task.target.size()) throw ContractError("anchor stage not yet resolved");
                tgt = {task.target[r.anchor_a][0] + r.offset[0],
                       task.target[r.anchor_a][1] + r.offset[1]};
                break;
            case StageRule::Kind::target_midpoint:
                if (r.anchor_a >= task.target.size() || r.anchor_b >= task.target.size())
                    throw ContractError("anchor stage not yet resolved");
                tgt = {0.5 * (task.target[r.anchor_a][0] + task.target[r.anchor_b][0]) + r.offset[0],
                       0.5 * (task.target[r.anchor_a][1] + task.target[r.anchor_b][1]) + r.offset[1]};
                break;
        }
        if (tgt[0] < 0.0 || tgt[0] > 1.0 || tgt[1] < 0.0 || tgt[1] > 1.0)
            throw ContractError("resolved target outside the unit square for task " + spec.name);
        task.source.push_back(r.source);
        task.target.push_back(tgt);
    }
    return task;
}

int stage_score(const WorldConfig& cfg, const WorldState& s, const Task& task, std::size_t stage) {
    if (stage >= task.num_stages) throw ContractError("stage_score: stage out of range");
    const std::size_t src = task.source[stage];
    const Vec2& tgt = task.target[stage];
    const Vec2& obj = s.objects[src];
    const bool held = s.held == static_cast<int>(src);
    if (!held && dist(obj, tgt) <= cfg.place_tol) return 100;
    if (held && dist(obj, tgt) <= cfg.carry_radius) return 75;
    if (held) return 50;
    if (dist(s.agent, obj) <= cfg.approach_radius) return 25;
    return 0;
}

Simulator::Simulator(WorldConfig cfg, TaskSpec spec) : cfg_(std::move(cfg)), spec_(std::move(spec)) {
    if (cfg_.num_objects < 1) throw ConfigError("world: need at least one object");
    for (const StageRule& r : spec_.stages)
        if (r.source >= cfg_.num_objects)
            throw ConfigError("task '" + spec_.name + "' uses object ids beyond num_objects");
    if (spec_.num_stages() > cfg_.max_stages)
        throw ConfigError("task '" + spec_.name + "' has more stages than max_stages");
}

void Simulator::reset(Rng& rng) {
    const std::size_t m = cfg_.num_objects;
    // nominal slots: rejection-sample until slots are well separated and all
    // resolved targets keep clear of every other point of interest
    for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<Vec2> slots(m);
        for (auto& p : slots) {
            p[0] = rng.uniform(0.15, 0.85) + rng.normal(0.0, cfg_.init_noise);
            p[1] = rng.uniform(0.15, 0.85) + rng.normal(0.0, cfg_.init_noise);
            p[0] = clamp01(p[0]);
            p[1] = clamp01(p[1]);
        }
        bool ok = true;
        for (std::size_t i = 0; i < m && ok; ++i)
            for (std::size_t j = i + 1; j < m && ok; ++j)
                if (dist(slots[i], slots[j]) < 0.18) ok = false;
        if (!ok) continue;

        Task task;
        try {
            task = resolve_task(spec_, slots);
        } catch (const ContractError&) {
            continue;  // jittered slot pushed a target out of bounds
        }
        std::vector<Vec2> points = slots;
        points.insert(points.end(), task.target.begin(), task.target.end());
        for (std::size_t i = 0; i < points.size() && ok; ++i)
            for (std::size_t j = i + 1; j < points.size() && ok; ++j)
                if (dist(points[i], points[j]) < 0.08) ok = false;
        if (!ok) continue;

        task_ = task;
        state_ = WorldState{};
        state_.objects = slots;
        state_.held = -1;
        state_.stage = 0;
        // agent spawn: clear of the first source so episodes start at score 0
        const Vec2& src0 = slots[task_.source[0]];
        do {
            state_.agent = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
        } while (dist(state_.agent, src0) < cfg_.approach_radius + 0.02);
        steps_ = 0;
        return;
    }
    throw NumericError("world reset: layout rejection sampling failed to converge");
}

void Simulator::reset_from(const WorldState& initial) {
    if (initial.objects.size() != cfg_.num_objects)
        throw ContractError("reset_from: object count mismatch");
    task_ = resolve_task(spec_, initial.objects);
    state_ = initial;
    state_.held = -1;
    state_.stage = 0;
    steps_ = 0;
}

void Simulator::adopt(const WorldState& s, const Task& task) {
    if (s.objects.size() != cfg_.num_objects)
        throw ContractError("adopt: object count mismatch");
    if (task.num_stages == 0 || task.num_stages > spec_.stages.size())
        throw ContractError("adopt: task does not fit this spec");
    task_ = task;
    state_ = s;
    steps_ = 0;
}

void Simulator::step(const Action& a) {
    const Vec2 v = clip_speed(a.vx, a.vy, cfg_.speed);
    state_.agent[0] = clamp01(state_.agent[0] + v[0]);
    state_.agent[1] = clamp01(state_.agent[1] + v[1]);

    const bool grip = a.grab >= 0.5;
    if (state_.held >= 0 && !grip) {
        state_.held = -1;  // release in place
    } else if (state_.held < 0 && grip) {
        int best = -1;
        double best_d = cfg_.grab_radius;
        for (std::size_t i = 0; i < state_.objects.size(); ++i) {
            const double d = dist(state_.agent, state_.objects[i]);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        state_.held = best;
    }
    if (state_.held >= 0) state_.objects[static_cast<std::size_t>(state_.held)] = state_.agent;

    while (state_.stage < task_.num_stages &&
           stage_score(cfg_, state_, task_, state_.stage) == 100)
        ++state_.stage;
    ++steps_;
}

Action scripted_expert(const WorldConfig& cfg, const WorldState& s, const Task& task) {
    if (s.stage >= task.num_stages) return Action{0.0, 0.0, 0.0};
    const std::size_t src = task.source[s.stage];
    const Vec2& tgt = task.target[s.stage];

    if (s.held == static_cast<int>(src)) {
        // carrying: head for the target, release when close enough to place
        const double d = dist(s.agent, tgt);
        if (d <= 0.5 * cfg.place_tol) return Action{0.0, 0.0, 0.0};
        const Vec2 v = clip_speed(tgt[0] - s.agent[0], tgt[1] - s.agent[1], cfg.speed);
        return Action{v[0], v[1], 1.0};
    }
    if (s.held >= 0) return Action{0.0, 0.0, 0.0};  // wrong object: drop it

    const Vec2& obj = s.objects[src];
    const double d = dist(s.agent, obj);
    if (d <= 0.5 * cfg.grab_radius) {
        const Vec2 v = clip_speed(obj[0] - s.agent[0], obj[1] - s.agent[1], cfg.speed);
        return Action{v[0], v[1], 1.0};
    }
    const Vec2 v = clip_speed(obj[0] - s.agent[0], obj[1] - s.agent[1], cfg.speed);
    return Action{v[0], v[1], 0.0};
}

std::vector<double> world_features(const WorldConfig& cfg, const WorldState& s,
                                   std::size_t num_stages) {
    if (s.objects.size() != cfg.num_objects)
        throw ContractError("world_features: object count mismatch");
    std::vector<double> f;
    f.reserve(cfg.feature_dim());
    f.push_back(s.agent[0]);
    f.push_back(s.agent[1]);
    for (const Vec2& o : s.objects) {
        f.push_back(o[0]);
        f.push_back(o[1]);
    }
    f.push_back(s.held < 0 ? 0.0
                           : static_cast<double>(s.held + 1) / static_cast<double>(cfg.num_objects));
    for (std::size_t k = 0; k < cfg.max_stages; ++k)
        f.push_back(s.stage < num_stages && s.stage == k ? 1.0 : 0.0);
    return f;
}

std::vector<double> orthonormal_columns(std::size_t rows, std::size_t cols, Rng& rng) {
    if (cols > rows) throw ContractError("orthonormal_columns: cols must not exceed rows");
    // column-major scratch for Gram-Schmidt, then transpose to row-major
    std::vector<std::vector<double>> col(cols, std::vector<double>(rows));
    for (std::size_t c = 0; c < cols; ++c) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            for (std::size_t r = 0; r < rows; ++r) col[c][r] = rng.normal();
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0.0;
                for (std::size_t r = 0; r < rows; ++r) dot += col[c][r] * col[p][r];
                for (std::size_t r = 0; r < rows; ++r) col[c][r] -= dot * col[p][r];
            }
            double norm = 0.0;
            for (double v : col[c]) norm += v * v;
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (double& v : col[c]) v /= norm;
                break;
            }
            if (attempt == 99) throw NumericError("orthonormal_columns: degenerate draw");
        }
    }
    std::vector<double> q(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) q[r * cols + c] = col[c][r];
    return q;
}

LatentEncoder::LatentEncoder(const WorldConfig& cfg, std::uint64_t dataset_seed)
    : cfg_(cfg), nz_(cfg.latent_dim), nf_(cfg.feature_dim()) {
    if (nz_ < nf_)
        throw ConfigError("latent_dim " + std::to_string(nz_) + " smaller than feature dim " +
                          std::to_string(nf_));
    Rng rng(derive_seed(dataset_seed, "encoder"));
    q_ = orthonormal_columns(nz_, nf_, rng);
}

std::vector<double> LatentEncoder::encode_features(const std::vector<double>& f) const {
    if (f.size() != nf_) throw ShapeError("encode: feature width mismatch");
    std::vector<double> z(nz_, 0.0);
    kernels::matmul_serial(q_.data(), f.data(), z.data(), nz_, nf_, 1);
    return z;
}

std::vector<double> LatentEncoder::encode(const WorldState& s, std::size_t num_stages) const {
    return encode_features(world_features(cfg_, s, num_stages));
}

std::uint64_t LatentEncoder::checksum() const {
    return fnv1a64(q_.data(), q_.size() * sizeof(double));
}

std::vector<double> lang_embedding(std::size_t task_id, std::size_t lang_dim) {
    Rng rng(derive_seed(0x6c616e672d746274ull, "lang-table", {task_id}));
    std::vector<double> phi(lang_dim);
    double norm = 0.0;
    for (double& v : phi) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("lang_embedding: degenerate draw");
    for (double& v : phi) v /= norm;
    return phi;
}

std::vector<double> lang_projection_matrix(std::size_t lang_dim, std::size_t latent_dim) {
    Rng rng(derive_seed(0x7068692d70726f6aull, "lang-proj", {lang_dim, latent_dim}));
    return orthonormal_columns(latent_dim, lang_dim, rng);
}

std::vector<double> project_lang(const std::vector<double>& phi, std::size_t latent_dim) {
    const std::vector<double> proj = lang_projection_matrix(phi.size(), latent_dim);
    std::vector<double> out(latent_dim, 0.0);
    kernels::matmul_serial(proj.data(), phi.data(), out.data(), latent_dim, phi.size(), 1);
    return out;
}

} // namespace latentplan
