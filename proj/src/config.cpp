// SPDX-License-Identifier: Apache-2.0
#include "latentplan/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace latentplan {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
    const std::size_t p = s.find('#');
    return p == std::string::npos ? s : s.substr(0, p);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v,
                            const char* expected) {
    throw ConfigError("config value for " + key + " is not " + expected + ": '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
    const char* s = v.c_str();
    char* end = nullptr;
    const double x = std::strtod(s, &end);
    if (end == s || *end != '\0') bad_value(key, v, "a number");
    return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    const char* s = v.c_str();
    char* end = nullptr;
    const unsigned long long x = std::strtoull(s, &end, 10);
    if (end == s || *end != '\0' || v.front() == '-') bad_value(key, v, "an unsigned integer");
    return std::uint64_t(x);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    return std::size_t(to_u64(key, v));
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : v) {
        if (c == ';' || c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const std::string& p : split_list(v)) out.push_back(to_size(key, p));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::ostringstream ss;
    for (std::size_t i = 0; i < xs.size(); ++i) ss << (i ? ";" : "") << xs[i];
    return ss.str();
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        using C = RunConfig;
        using S = const std::string;
        t["run.seed"] = [](C& c, S& k, S& v) { c.seed = to_u64(k, v); };
        t["run.out"] = [](C& c, S&, S& v) { c.out_root = v; };
        t["run.snapshots"] = [](C& c, S& k, S& v) { c.snapshots = to_size(k, v); };
        t["run.report_k"] = [](C& c, S& k, S& v) { c.report_k = to_size(k, v); };
        t["run.report_mode"] = [](C& c, S&, S& v) { c.report_mode = parse_aggregate_mode(v); };

        t["world.num_objects"] = [](C& c, S& k, S& v) { c.world.num_objects = to_size(k, v); };
        t["world.max_stages"] = [](C& c, S& k, S& v) { c.world.max_stages = to_size(k, v); };
        t["world.speed"] = [](C& c, S& k, S& v) { c.world.speed = to_double(k, v); };
        t["world.grab_radius"] = [](C& c, S& k, S& v) { c.world.grab_radius = to_double(k, v); };
        t["world.place_tol"] = [](C& c, S& k, S& v) { c.world.place_tol = to_double(k, v); };
        t["world.approach_radius"] = [](C& c, S& k, S& v) {
            c.world.approach_radius = to_double(k, v);
        };
        t["world.carry_radius"] = [](C& c, S& k, S& v) { c.world.carry_radius = to_double(k, v); };
        t["world.init_noise"] = [](C& c, S& k, S& v) { c.world.init_noise = to_double(k, v); };
        t["world.max_steps"] = [](C& c, S& k, S& v) { c.world.max_steps = to_size(k, v); };
        t["world.latent_dim"] = [](C& c, S& k, S& v) { c.world.latent_dim = to_size(k, v); };
        t["world.lang_dim"] = [](C& c, S& k, S& v) { c.world.lang_dim = to_size(k, v); };

        t["data.tasks"] = [](C& c, S& k, S& v) { c.data.tasks = to_size_list(k, v); };
        t["data.demos_per_task"] = [](C& c, S& k, S& v) {
            c.data.demos_per_task = to_size(k, v);
        };
        t["data.max_failure_rate"] = [](C& c, S& k, S& v) {
            c.data.max_failure_rate = to_double(k, v);
        };
        t["data.holdout_fraction"] = [](C& c, S& k, S& v) {
            c.data.holdout_fraction = to_double(k, v);
        };

        t["planner.lambda"] = [](C& c, S& k, S& v) { c.planner.lambda = to_double(k, v); };
        t["planner.n"] = [](C& c, S& k, S& v) { c.planner.n = to_size(k, v); };
        t["planner.hidden"] = [](C& c, S& k, S& v) { c.planner.hidden = to_size(k, v); };
        t["planner.budget"] = [](C& c, S& k, S& v) { c.planner.budget = to_size(k, v); };
        t["planner.batch"] = [](C& c, S& k, S& v) { c.planner.batch = to_size(k, v); };
        t["planner.lr"] = [](C& c, S& k, S& v) { c.planner.lr = to_double(k, v); };
        t["planner.k_forward"] = [](C& c, S& k, S& v) { c.planner.k_forward = to_size(k, v); };
        t["planner.self_conditioning"] = [](C& c, S& k, S& v) {
            c.planner.self_conditioning = to_bool(k, v);
        };

        t["policy.mode"] = [](C& c, S&, S& v) { c.policy.mode = parse_policy_mode(v); };
        t["policy.fusion"] = [](C& c, S&, S& v) { c.policy.fusion = parse_fusion_kind(v); };
        t["policy.chunk"] = [](C& c, S& k, S& v) { c.policy.chunk = to_size(k, v); };
        t["policy.diffusion_steps"] = [](C& c, S& k, S& v) {
            c.policy.diffusion_steps = to_size(k, v);
        };
        t["policy.beta_lo"] = [](C& c, S& k, S& v) { c.policy.beta_lo = to_double(k, v); };
        t["policy.beta_hi"] = [](C& c, S& k, S& v) { c.policy.beta_hi = to_double(k, v); };
        t["policy.hidden"] = [](C& c, S& k, S& v) { c.policy.hidden = to_size(k, v); };
        t["policy.blocks"] = [](C& c, S& k, S& v) { c.policy.blocks = to_size(k, v); };
        t["policy.fused_dim"] = [](C& c, S& k, S& v) { c.policy.fused_dim = to_size(k, v); };
        t["policy.time_dim"] = [](C& c, S& k, S& v) { c.policy.time_dim = to_size(k, v); };
        t["policy.lr"] = [](C& c, S& k, S& v) { c.policy.lr = to_double(k, v); };
        t["policy.budget"] = [](C& c, S& k, S& v) { c.policy.budget = to_size(k, v); };
        t["policy.batch"] = [](C& c, S& k, S& v) { c.policy.batch = to_size(k, v); };
        t["policy.ensemble_decay"] = [](C& c, S& k, S& v) {
            c.policy.ensemble_decay = to_double(k, v);
        };
        t["policy.action_scale"] = [](C& c, S& k, S& v) {
            const auto parts = split_list(v);
            if (parts.size() != 3) bad_value(k, v, "a list of exactly three numbers");
            for (std::size_t i = 0; i < 3; ++i)
                c.policy.action_scale[i] = to_double(k, parts[i]);
        };

        t["eval.tasks"] = [](C& c, S& k, S& v) { c.eval.tasks = to_size_list(k, v); };
        t["eval.rollouts"] = [](C& c, S& k, S& v) { c.eval.rollouts = to_size(k, v); };
        t["eval.ensemble_capacity"] = [](C& c, S& k, S& v) {
            c.eval.ensemble_capacity = to_size(k, v);
        };

        t["mse.samples"] = [](C& c, S& k, S& v) { c.mse.sample_count = to_size(k, v); };
        t["mse.bins"] = [](C& c, S& k, S& v) { c.mse.bins = to_size(k, v); };
        t["mse.max_depth"] = [](C& c, S& k, S& v) { c.mse.max_depth = to_size(k, v); };
        t["mse.holdout"] = [](C& c, S& k, S& v) { c.mse.holdout = to_bool(k, v); };
        return t;
    }();
    return table;
}

bool known_section(const std::string& s) {
    return s == "run" || s == "world" || s == "data" || s == "planner" || s == "policy" ||
           s == "eval" || s == "mse";
}

}  // namespace

PolicyConfig RunConfig::policy_for_run() const {
    PolicyConfig pc = policy;
    pc.lambda = planner.lambda;
    pc.plan_n = planner.n;
    return pc;
}

void RunConfig::validate() const {
    if (world.num_objects == 0) throw ConfigError("world.num_objects must be positive");
    if (world.max_stages == 0) throw ConfigError("world.max_stages must be positive");
    if (!(world.speed > 0.0)) throw ConfigError("world.speed must be positive");
    if (world.max_steps == 0) throw ConfigError("world.max_steps must be positive");
    if (world.latent_dim < world.feature_dim())
        throw ConfigError("world.latent_dim must be at least the feature width " +
                          std::to_string(world.feature_dim()));
    if (world.lang_dim == 0) throw ConfigError("world.lang_dim must be positive");

    if (data.tasks.empty()) throw ConfigError("data.tasks must name at least one task");
    for (std::size_t t : data.tasks)
        if (t >= builtin_tasks().size())
            throw ConfigError("data.tasks names unknown task " + std::to_string(t));
    if (data.demos_per_task == 0) throw ConfigError("data.demos_per_task must be positive");
    if (!(data.holdout_fraction >= 0.0 && data.holdout_fraction < 1.0))
        throw ConfigError("data.holdout_fraction must lie in [0,1)");
    if (!(data.max_failure_rate >= 0.0 && data.max_failure_rate <= 1.0))
        throw ConfigError("data.max_failure_rate must lie in [0,1]");

    planner.validate();
    policy_for_run().validate();

    if (eval.tasks.empty()) throw ConfigError("eval.tasks must name at least one task");
    for (std::size_t t : eval.tasks)
        if (t >= builtin_tasks().size())
            throw ConfigError("eval.tasks names unknown task " + std::to_string(t));
    if (eval.rollouts == 0) throw ConfigError("eval.rollouts must be positive");
    if (eval.ensemble_capacity == 0) throw ConfigError("eval.ensemble_capacity must be positive");

    if (mse.sample_count == 0) throw ConfigError("mse.samples must be positive");
    if (mse.bins == 0) throw ConfigError("mse.bins must be positive");
    if (mse.max_depth == 0) throw ConfigError("mse.max_depth must be positive");

    if (snapshots == 0) throw ConfigError("run.snapshots must be positive");
    if (report_k == 0) throw ConfigError("run.report_k must be positive");
    if (report_k > snapshots)
        throw ConfigError("run.report_k cannot exceed run.snapshots (" +
                          std::to_string(report_k) + " > " + std::to_string(snapshots) + ")");
}

RunConfig parse_config(const std::string& path, RunConfig base) {
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file " + path);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string s = trim(strip_comment(line));
            if (s.empty()) continue;
            const std::string at = path + ":" + std::to_string(lineno);
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError(at + ": malformed section header");
                section = trim(s.substr(1, s.size() - 2));
                if (!known_section(section))
                    throw ConfigError(at + ": unknown config section: " + section);
                continue;
            }
            const std::size_t eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
            const std::string key = trim(s.substr(0, eq));
            const std::string value = trim(s.substr(eq + 1));
            if (section.empty()) throw ConfigError(at + ": key outside any section: " + key);
            apply_override(base, section + "." + key, value);
        }
    }
    base.validate();
    return base;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    it->second(cfg, key, value);
}

std::string serialize_config(const RunConfig& cfg, bool include_location) {
    std::ostringstream out;
    out << "[run]\n";
    out << "seed = " << cfg.seed << "\n";
    if (include_location) out << "out = " << cfg.out_root << "\n";
    out << "snapshots = " << cfg.snapshots << "\n";
    out << "report_k = " << cfg.report_k << "\n";
    out << "report_mode = " << aggregate_mode_name(cfg.report_mode) << "\n";

    out << "[world]\n";
    out << "num_objects = " << cfg.world.num_objects << "\n";
    out << "max_stages = " << cfg.world.max_stages << "\n";
    out << "speed = " << fmt_double(cfg.world.speed) << "\n";
    out << "grab_radius = " << fmt_double(cfg.world.grab_radius) << "\n";
    out << "place_tol = " << fmt_double(cfg.world.place_tol) << "\n";
    out << "approach_radius = " << fmt_double(cfg.world.approach_radius) << "\n";
    out << "carry_radius = " << fmt_double(cfg.world.carry_radius) << "\n";
    out << "init_noise = " << fmt_double(cfg.world.init_noise) << "\n";
    out << "max_steps = " << cfg.world.max_steps << "\n";
    out << "latent_dim = " << cfg.world.latent_dim << "\n";
    out << "lang_dim = " << cfg.world.lang_dim << "\n";

    out << "[data]\n";
    out << "tasks = " << join(cfg.data.tasks) << "\n";
    out << "demos_per_task = " << cfg.data.demos_per_task << "\n";
    out << "max_failure_rate = " << fmt_double(cfg.data.max_failure_rate) << "\n";
    out << "holdout_fraction = " << fmt_double(cfg.data.holdout_fraction) << "\n";

    out << "[planner]\n";
    out << "lambda = " << fmt_double(cfg.planner.lambda) << "\n";
    out << "n = " << cfg.planner.n << "\n";
    out << "hidden = " << cfg.planner.hidden << "\n";
    out << "budget = " << cfg.planner.budget << "\n";
    out << "batch = " << cfg.planner.batch << "\n";
    out << "lr = " << fmt_double(cfg.planner.lr) << "\n";
    out << "k_forward = " << cfg.planner.k_forward << "\n";
    out << "self_conditioning = " << (cfg.planner.self_conditioning ? "true" : "false") << "\n";

    out << "[policy]\n";
    out << "mode = " << policy_mode_name(cfg.policy.mode) << "\n";
    out << "fusion = " << fusion_kind_name(cfg.policy.fusion) << "\n";
    out << "chunk = " << cfg.policy.chunk << "\n";
    out << "diffusion_steps = " << cfg.policy.diffusion_steps << "\n";
    out << "beta_lo = " << fmt_double(cfg.policy.beta_lo) << "\n";
    out << "beta_hi = " << fmt_double(cfg.policy.beta_hi) << "\n";
    out << "hidden = " << cfg.policy.hidden << "\n";
    out << "blocks = " << cfg.policy.blocks << "\n";
    out << "fused_dim = " << cfg.policy.fused_dim << "\n";
    out << "time_dim = " << cfg.policy.time_dim << "\n";
    out << "lr = " << fmt_double(cfg.policy.lr) << "\n";
    out << "budget = " << cfg.policy.budget << "\n";
    out << "batch = " << cfg.policy.batch << "\n";
    out << "ensemble_decay = " << fmt_double(cfg.policy.ensemble_decay) << "\n";
    out << "action_scale = " << fmt_double(cfg.policy.action_scale[0]) << ";"
        << fmt_double(cfg.policy.action_scale[1]) << ";"
        << fmt_double(cfg.policy.action_scale[2]) << "\n";

    out << "[eval]\n";
    out << "tasks = " << join(cfg.eval.tasks) << "\n";
    out << "rollouts = " << cfg.eval.rollouts << "\n";
    out << "ensemble_capacity = " << cfg.eval.ensemble_capacity << "\n";

    out << "[mse]\n";
    out << "samples = " << cfg.mse.sample_count << "\n";
    out << "bins = " << cfg.mse.bins << "\n";
    out << "max_depth = " << cfg.mse.max_depth << "\n";
    out << "holdout = " << (cfg.mse.holdout ? "true" : "false") << "\n";
    return out.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
    return fnv1a64(serialize_config(cfg, /*include_location=*/false));
}

std::string config_hash_hex(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)config_hash(cfg));
    return buf;
}

}  // namespace latentplan
