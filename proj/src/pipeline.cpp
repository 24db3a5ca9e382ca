// SPDX-License-Identifier: Apache-2.0
#include "latentplan/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "latentplan/dataset.hpp"
#include "latentplan/planner.hpp"
#include "latentplan/policy.hpp"
#include "latentplan/world.hpp"

namespace latentplan {

namespace fs = std::filesystem;

namespace {

const char* kStageNames[] = {"gen-data", "train-planner", "train-policy", "eval",
                             "mse-curves", "ablate", "report"};

constexpr std::size_t kKindIds[] = {0, 1, 2};
const char* kPlannerKinds[] = {"backward", "forward", "parallel"};

std::size_t kind_id(const std::string& kind) {
    for (std::size_t i = 0; i < 3; ++i)
        if (kind == kPlannerKinds[i]) return kKindIds[i];
    throw ConfigError("unknown planner kind: " + kind);
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// one completed unit of work: a stage, or one planner kind within train-planner
struct Marker {
    std::string label;
    std::string hash;
    std::vector<std::string> artifacts;  // run-relative
};

std::optional<Marker> read_marker(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    Marker m;
    std::string line;
    while (std::getline(in, line)) {
        const std::string s = trim(line);
        if (s.rfind("stage ", 0) == 0) m.label = s.substr(6);
        else if (s.rfind("config_hash ", 0) == 0) m.hash = s.substr(12);
        else if (s.rfind("artifact ", 0) == 0) m.artifacts.push_back(s.substr(9));
    }
    return m;
}

void write_text(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << body;
    if (!out) throw IoError("short write to " + path.string());
}

void write_marker(const fs::path& path, const Marker& m) {
    std::ostringstream ss;
    ss << "stage " << m.label << "\n" << "config_hash " << m.hash << "\n";
    for (const std::string& a : m.artifacts) ss << "artifact " << a << "\n";
    write_text(path, ss.str());
}

// dependency gate: the artifact another stage should have produced
void require(const fs::path& root, const std::string& rel, const std::string& producer) {
    if (!fs::exists(root / rel))
        throw PipelineError("missing artifact " + rel + " (run " + producer + " first)");
}

std::string rel_to(const fs::path& root, const std::string& abs) {
    return fs::relative(abs, root).generic_string();
}

std::vector<std::string> snapshot_files(const fs::path& dir) {
    std::vector<std::string> names;
    if (fs::exists(dir))
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("ckpt-", 0) == 0 && name.size() > 5 &&
                name.substr(name.size() - 5) == ".ckpt")
                names.push_back(name);
        }
    std::sort(names.begin(), names.end());
    return names;
}

// --- stage bodies (each returns run-relative artifact paths) -------------------

std::vector<std::string> stage_gen_data(const RunConfig& cfg, const fs::path& root,
                                        const std::string& hash) {
    generate_dataset(cfg.world, cfg.data, cfg.seed, (root / "data").string(), hash);
    return {"data/manifest.txt"};
}

std::vector<std::string> stage_train_planner(const RunConfig& cfg, const fs::path& root,
                                             const std::string& hash, const std::string& kind) {
    require(root, "data/manifest.txt", "gen-data");
    const Dataset ds = load_dataset((root / "data").string());
    const std::size_t nz = ds.world.latent_dim, nl = ds.world.lang_dim;
    const std::size_t id = kind_id(kind);
    const std::uint64_t init = derive_seed(cfg.seed, "planner-init", {id});
    const std::uint64_t train = derive_seed(cfg.seed, "stage-train-planner", {id});
    fs::create_directories(root / "ckpt");
    const std::string rel = "ckpt/planner-" + kind + ".ckpt";
    const std::string path = (root / rel).string();
    const std::string rescue = path + ".rescue";
    const std::map<std::string, std::string> extra{{"config_hash", hash},
                                                   {"stage", "train-planner"}};
    if (kind == "backward") {
        BackwardPlanner p(nz, nl, cfg.planner, init);
        p.train(ds, train, rescue);
        p.save(path, extra);
    } else if (kind == "forward") {
        ForwardPlanner p(nz, nl, cfg.planner, init);
        p.train(ds, train, rescue);
        p.save(path, extra);
    } else {
        ParallelPlanner p(nz, nl, cfg.planner, init);
        p.train(ds, train, rescue);
        p.save(path, extra);
    }
    return {rel};
}

std::vector<std::string> stage_train_policy(const RunConfig& cfg, const fs::path& root,
                                            const std::string& hash) {
    require(root, "data/manifest.txt", "gen-data");
    const Dataset ds = load_dataset((root / "data").string());
    const PolicyConfig pc = cfg.policy_for_run();
    DiffusionPolicy pol(ds.world.latent_dim, ds.world.lang_dim, pc,
                        derive_seed(cfg.seed, "policy-init"));
    const fs::path snap_dir = root / "ckpt" / "snapshots";
    fs::remove_all(snap_dir);  // stale snapshots would leak into the report stage
    const std::size_t every = std::max<std::size_t>(1, pc.budget / cfg.snapshots);
    const std::string rel = "ckpt/policy.ckpt";
    const std::string path = (root / rel).string();
    pol.train(ds, derive_seed(cfg.seed, "stage-train-policy"), path + ".rescue",
              snap_dir.string(), every);
    pol.save(path, {{"config_hash", hash}, {"stage", "train-policy"}});
    std::vector<std::string> out{rel};
    for (const std::string& name : snapshot_files(snap_dir))
        out.push_back("ckpt/snapshots/" + name);
    return out;
}

// Loads the policy named by `policy_path` plus whatever its mode needs, wires
// the deployed stack, and rolls it out.  Shared by eval and report.
EvalReport run_closed_loop(const Dataset& ds, const RunConfig& cfg, const fs::path& root,
                           const std::string& policy_path, const std::string& planner_path,
                           const std::vector<std::size_t>& tasks, std::uint64_t seed) {
    const LatentEncoder encoder(ds.world, ds.seed);
    const DiffusionPolicy policy = DiffusionPolicy::load(policy_path);

    std::optional<BackwardPlanner> planner;
    if (policy.config().mode == PolicyMode::lbp)
        planner.emplace(BackwardPlanner::load(planner_path));
    std::map<std::size_t, std::vector<double>> refs;
    if (policy.config().mode == PolicyMode::glcbc) refs = DiffusionPolicy::reference_goals(ds);

    ClosedLoopConfig ec;
    ec.tasks = tasks;
    ec.rollouts_per_task = cfg.eval.rollouts;
    ec.chunk_len = policy.config().chunk;
    ec.ensemble_capacity = cfg.eval.ensemble_capacity;
    ec.ensemble_decay = policy.config().ensemble_decay;
    ec.seed = seed;
    ec.policy_id = fs::path(policy_path).filename().string();
    ec.planner_id = planner ? fs::path(planner_path).filename().string() : std::string("none");

    const ChunkActor actor = stack_actor(ds.world, encoder, policy,
                                         planner ? &*planner : nullptr,
                                         refs.empty() ? nullptr : &refs);
    return closed_loop_eval(ds.world, encoder, actor, ec);
}

std::vector<std::string> stage_eval(const RunConfig& cfg, const PipelineOptions& opt,
                                    const fs::path& root, const std::string& hash) {
    require(root, "data/manifest.txt", "gen-data");
    const Dataset ds = load_dataset((root / "data").string());

    std::string policy_path = opt.policy_ckpt;
    if (policy_path.empty()) {
        require(root, "ckpt/policy.ckpt", "train-policy");
        policy_path = (root / "ckpt/policy.ckpt").string();
    } else if (!fs::exists(policy_path)) {
        throw PipelineError("missing artifact " + policy_path + " (run train-policy first)");
    }

    // only an lbp policy needs a planner; resolve lazily so the other modes
    // never demand one
    std::string planner_path = opt.planner_ckpt;
    {
        const DiffusionPolicy probe = DiffusionPolicy::load(policy_path);
        if (probe.config().mode == PolicyMode::lbp) {
            if (planner_path.empty()) {
                require(root, "ckpt/planner-backward.ckpt", "train-planner");
                planner_path = (root / "ckpt/planner-backward.ckpt").string();
            } else if (!fs::exists(planner_path)) {
                throw PipelineError("missing artifact " + planner_path +
                                    " (run train-planner first)");
            }
        }
    }

    const std::vector<std::size_t> tasks = opt.tasks_manifest.empty()
                                               ? cfg.eval.tasks
                                               : tasks_from_manifest(opt.tasks_manifest);
    const EvalReport report = run_closed_loop(ds, cfg, root, policy_path, planner_path, tasks,
                                              derive_seed(cfg.seed, "stage-eval"));
    std::vector<std::string> out;
    for (const std::string& p : emit_eval_report(report, (root / "report").string(), hash))
        out.push_back(rel_to(root, p));
    return out;
}

std::vector<std::string> stage_mse_curves(const RunConfig& cfg, const fs::path& root,
                                          const std::string& hash) {
    require(root, "data/manifest.txt", "gen-data");
    for (const char* kind : kPlannerKinds)
        require(root, std::string("ckpt/planner-") + kind + ".ckpt", "train-planner");
    const Dataset ds = load_dataset((root / "data").string());
    const BackwardPlanner b = BackwardPlanner::load((root / "ckpt/planner-backward.ckpt").string());
    const ForwardPlanner f = ForwardPlanner::load((root / "ckpt/planner-forward.ckpt").string());
    const ParallelPlanner p = ParallelPlanner::load((root / "ckpt/planner-parallel.ckpt").string());
    MseConfig mc = cfg.mse;
    mc.seed = derive_seed(cfg.seed, "stage-mse");
    const MseCurveSet curves = mse_vs_progress(ds, probes_from(b, f, p), mc);
    std::vector<std::string> out;
    for (const std::string& path : emit_mse_curves(curves, (root / "report").string(), hash))
        out.push_back(rel_to(root, path));
    return out;
}

std::vector<std::string> stage_ablate(const RunConfig& cfg, const PipelineOptions& opt,
                                      const fs::path& root, const std::string& hash) {
    require(root, "data/manifest.txt", "gen-data");
    const Dataset ds = load_dataset((root / "data").string());
    const std::vector<AblationCellSpec> cells =
        opt.grid_path.empty() ? default_ablation_cells() : parse_grid(opt.grid_path);
    ClosedLoopConfig base;
    base.tasks = cfg.eval.tasks;
    base.rollouts_per_task = cfg.eval.rollouts;
    base.ensemble_capacity = cfg.eval.ensemble_capacity;
    const AblationTable table = ablation_grid(ds, cells, cfg.planner, cfg.policy_for_run(), base,
                                              derive_seed(cfg.seed, "stage-ablate"));
    std::vector<std::string> out;
    for (const std::string& path : emit_ablation(table, (root / "report").string(), hash))
        out.push_back(rel_to(root, path));
    return out;
}

std::vector<std::string> stage_report(const RunConfig& cfg, const fs::path& root,
                                      const std::string& hash) {
    require(root, "data/manifest.txt", "gen-data");
    const fs::path snap_dir = root / "ckpt" / "snapshots";
    const std::vector<std::string> snaps = snapshot_files(snap_dir);
    if (snaps.size() < cfg.report_k)
        throw PipelineError("report needs " + std::to_string(cfg.report_k) +
                            " policy snapshots but ckpt/snapshots holds " +
                            std::to_string(snaps.size()) + " (run train-policy first)");
    const Dataset ds = load_dataset((root / "data").string());

    std::vector<CheckpointEval> runs;
    for (std::size_t i = 0; i < snaps.size(); ++i) {
        const std::string policy_path = (snap_dir / snaps[i]).string();
        std::string planner_path;
        {
            const DiffusionPolicy probe = DiffusionPolicy::load(policy_path);
            if (probe.config().mode == PolicyMode::lbp) {
                require(root, "ckpt/planner-backward.ckpt", "train-planner");
                planner_path = (root / "ckpt/planner-backward.ckpt").string();
            }
        }
        const EvalReport rep = run_closed_loop(ds, cfg, root, policy_path, planner_path,
                                               cfg.eval.tasks,
                                               derive_seed(cfg.seed, "stage-report", {i}));
        CheckpointEval ce;
        ce.id = snaps[i];
        ce.average_success = rep.average_success;
        ce.average_score = rep.average_score;
        for (const TaskSummary& ts : rep.tasks) ce.per_task_success[ts.task_id] = ts.success_rate;
        runs.push_back(std::move(ce));
    }
    const AggregateSummary summary = aggregate_checkpoints(runs, cfg.report_k, cfg.report_mode);
    std::vector<std::string> out;
    for (const std::string& path : emit_aggregate(summary, (root / "report").string(), hash))
        out.push_back(rel_to(root, path));
    return out;
}

// Labels in manifest order; train-planner expands to one label per kind.
std::vector<std::string> unit_labels(Stage s, const PipelineOptions& opt) {
    if (s == Stage::train_planner) {
        std::vector<std::string> out;
        for (const std::string& kind : opt.planner_kinds) {
            kind_id(kind);  // validate
            out.push_back("train-planner-" + kind);
        }
        return out;
    }
    return {stage_name(s)};
}

const std::vector<std::string>& canonical_labels() {
    static const std::vector<std::string> order{
        "gen-data",      "train-planner-backward", "train-planner-forward",
        "train-planner-parallel", "train-policy",  "eval",
        "mse-curves",    "ablate",                 "report"};
    return order;
}

void assemble_manifest(const RunConfig& cfg, const fs::path& root, const std::string& hash) {
    std::ostringstream man;
    man << "format_version 1\n";
    man << "config_hash " << hash << "\n";
    man << "seed " << cfg.seed << "\n";
    for (const std::string& label : canonical_labels()) {
        const auto m = read_marker(root / "markers" / (label + ".done"));
        if (!m) continue;
        man << "stage " << label << " " << m->hash << "\n";
        for (const std::string& a : m->artifacts) man << "artifact " << a << "\n";
    }
    write_text(root / "manifest.txt", man.str());
}

}  // namespace

Stage parse_stage(const std::string& s) {
    for (std::size_t i = 0; i < 7; ++i)
        if (s == kStageNames[i]) return Stage(i);
    throw ConfigError("unknown stage: " + s);
}

std::string stage_name(Stage s) {
    return kStageNames[static_cast<std::size_t>(s)];
}

std::vector<std::size_t> tasks_from_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw PipelineError("missing artifact " + manifest_path + " (run gen-data first)");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("tasks ", 0) != 0) continue;
        std::vector<std::size_t> tasks;
        std::stringstream ss(line.substr(6));
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            tok = trim(tok);
            if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
                throw IoError(manifest_path + ": malformed tasks entry '" + tok + "'");
            tasks.push_back(std::stoull(tok));
        }
        if (tasks.empty()) throw IoError(manifest_path + ": empty tasks line");
        return tasks;
    }
    throw IoError(manifest_path + ": no tasks line");
}

std::vector<AblationCellSpec> parse_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read grid file " + path);
    std::vector<AblationCellSpec> cells;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hashpos = line.find('#');
        if (hashpos != std::string::npos) line = line.substr(0, hashpos);
        line = trim(line);
        if (line.empty()) continue;
        const std::string at = path + ":" + std::to_string(lineno);

        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(trim(tok));
        if (f.size() != 5)
            throw ConfigError(at + ": expected name,mode,fusion,lambda,n (got " +
                              std::to_string(f.size()) + " fields)");
        AblationCellSpec c;
        c.name = f[0];
        if (c.name.empty()) throw ConfigError(at + ": empty cell name");
        c.mode = parse_policy_mode(f[1]);
        c.fusion = parse_fusion_kind(f[2]);
        char* end = nullptr;
        c.lambda = std::strtod(f[3].c_str(), &end);
        if (end == f[3].c_str() || *end != '\0')
            throw ConfigError(at + ": malformed lambda '" + f[3] + "'");
        if (f[4].empty() || f[4].find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError(at + ": malformed subgoal count '" + f[4] + "'");
        c.n = std::stoull(f[4]);
        cells.push_back(std::move(c));
    }
    if (cells.empty()) throw ConfigError(path + ": grid file names no cells");
    return cells;
}

PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& opt) {
    if (opt.run_dir.empty()) throw ConfigError("pipeline needs a run directory");
    if (opt.stages.empty()) throw ConfigError("pipeline invoked with no stages");
    cfg.validate();
    const std::string hash = config_hash_hex(cfg);
    const fs::path root = opt.run_dir;
    fs::create_directories(root / "markers");

    // refuse to mix configurations in one directory before touching anything
    if (!opt.force)
        for (const std::string& label : canonical_labels()) {
            const auto m = read_marker(root / "markers" / (label + ".done"));
            if (m && m->hash != hash)
                throw PipelineError(opt.run_dir + " holds results for config " + m->hash +
                                    " (stage " + label + "), not " + hash +
                                    "; use --force to rebuild or pick a fresh directory");
        }

    write_text(root / "config.ini", serialize_config(cfg, /*include_location=*/true));

    PipelineResult result;
    result.run_dir = opt.run_dir;
    for (Stage s : opt.stages)
        for (const std::string& label : unit_labels(s, opt)) {
            const fs::path marker_path = root / "markers" / (label + ".done");
            const auto m = read_marker(marker_path);
            if (m && m->hash == hash && !opt.force) {
                const bool intact = std::all_of(
                    m->artifacts.begin(), m->artifacts.end(),
                    [&](const std::string& a) { return fs::exists(root / a); });
                if (intact) {
                    result.skipped.push_back(label);
                    if (!opt.quiet) std::printf("[skip] %s\n", label.c_str());
                    continue;
                }
            }

            std::vector<std::string> artifacts;
            if (s == Stage::gen_data) artifacts = stage_gen_data(cfg, root, hash);
            else if (s == Stage::train_planner)
                artifacts = stage_train_planner(cfg, root, hash, label.substr(14));
            else if (s == Stage::train_policy) artifacts = stage_train_policy(cfg, root, hash);
            else if (s == Stage::eval) artifacts = stage_eval(cfg, opt, root, hash);
            else if (s == Stage::mse_curves) artifacts = stage_mse_curves(cfg, root, hash);
            else if (s == Stage::ablate) artifacts = stage_ablate(cfg, opt, root, hash);
            else artifacts = stage_report(cfg, root, hash);

            write_marker(marker_path, Marker{label, hash, artifacts});
            result.executed.push_back(label);
            result.artifacts.insert(result.artifacts.end(), artifacts.begin(), artifacts.end());
            if (!opt.quiet) std::printf("[done] %s\n", label.c_str());
        }

    assemble_manifest(cfg, root, hash);
    return result;
}

}  // namespace latentplan
