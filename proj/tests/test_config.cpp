// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "latentplan/config.hpp"

using namespace latentplan;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << body;
    return p;
}

// message of the ConfigError a callable throws (empty if it doesn't throw)
template <typename F>
std::string config_error_of(F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config: defaults validate and round-trip through text") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    const std::string text = serialize_config(cfg);
    const fs::path p = write_temp("lp_cfg_roundtrip.ini", text);
    const RunConfig back = parse_config(p.string());
    CHECK(serialize_config(back) == text);
    CHECK(config_hash(back) == config_hash(cfg));
    fs::remove(p);
}

TEST_CASE("config: empty file and empty path leave defaults untouched") {
    const fs::path p = write_temp("lp_cfg_empty.ini", "");
    const RunConfig from_file = parse_config(p.string());
    const RunConfig from_nothing = parse_config("");
    CHECK(serialize_config(from_file) == serialize_config(RunConfig{}));
    CHECK(serialize_config(from_nothing) == serialize_config(RunConfig{}));
    fs::remove(p);

    CHECK_THROWS_AS(parse_config("/nonexistent/latentplan.ini"), ConfigError);
}

TEST_CASE("config: file values land in the right fields") {
    const fs::path p = write_temp("lp_cfg_fields.ini",
                                  "# comment line\n"
                                  "[run]\n"
                                  "seed = 42\n"
                                  "report_mode = last\n"
                                  "[world]\n"
                                  "max_steps = 120   # trailing comment\n"
                                  "[data]\n"
                                  "tasks = 0;2\n"
                                  "demos_per_task = 12\n"
                                  "[planner]\n"
                                  "lambda = 0.75\n"
                                  "self_conditioning = false\n"
                                  "[policy]\n"
                                  "mode = glcbc\n"
                                  "fusion = avgpool\n"
                                  "action_scale = 0.5, 0.25, 2\n"
                                  "[eval]\n"
                                  "tasks = 1\n"
                                  "[mse]\n"
                                  "samples = 500\n"
                                  "holdout = false\n");
    const RunConfig cfg = parse_config(p.string());
    fs::remove(p);

    CHECK(cfg.seed == 42);
    CHECK(cfg.report_mode == AggregateMode::last);
    CHECK(cfg.world.max_steps == 120);
    CHECK(cfg.data.tasks == std::vector<std::size_t>{0, 2});
    CHECK(cfg.data.demos_per_task == 12);
    CHECK(cfg.planner.lambda == 0.75);
    CHECK(cfg.planner.self_conditioning == false);
    CHECK(cfg.policy.mode == PolicyMode::glcbc);
    CHECK(cfg.policy.fusion == FusionKind::avgpool);
    CHECK(cfg.policy.action_scale[0] == 0.5);
    CHECK(cfg.policy.action_scale[1] == 0.25);
    CHECK(cfg.policy.action_scale[2] == 2.0);
    CHECK(cfg.eval.tasks == std::vector<std::size_t>{1});
    CHECK(cfg.mse.sample_count == 500);
    CHECK(cfg.mse.holdout == false);

    // untouched sections keep their defaults
    CHECK(cfg.policy.chunk == PolicyConfig{}.chunk);
    CHECK(cfg.world.num_objects == WorldConfig{}.num_objects);
}

TEST_CASE("config: overrides land on top of file values") {
    const fs::path p = write_temp("lp_cfg_override.ini",
                                  "[planner]\nlambda = 0.5\n");
    RunConfig cfg = parse_config(p.string());
    fs::remove(p);
    CHECK(cfg.planner.lambda == 0.5);

    apply_override(cfg, "planner.lambda", "0.75");
    cfg.validate();
    CHECK(cfg.planner.lambda == 0.75);

    // the mirrored policy chain shape follows the planner section
    CHECK(cfg.policy_for_run().lambda == 0.75);
    apply_override(cfg, "planner.n", "4");
    CHECK(cfg.policy_for_run().plan_n == 4);
}

TEST_CASE("config: out-of-domain values are rejected on validate") {
    RunConfig cfg;
    apply_override(cfg, "planner.lambda", "1.5");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    apply_override(cfg, "data.holdout_fraction", "1.0");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    apply_override(cfg, "data.tasks", "7");  // only three built-in tasks
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = RunConfig{};
    apply_override(cfg, "world.latent_dim", "4");  // below the feature width
    const std::string msg = config_error_of([&] { cfg.validate(); });
    CHECK(msg.find("latent_dim") != std::string::npos);

    cfg = RunConfig{};
    apply_override(cfg, "run.report_k", "5");
    apply_override(cfg, "run.snapshots", "2");
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config: unknown keys and sections are named in the error") {
    RunConfig cfg;
    std::string msg = config_error_of([&] { apply_override(cfg, "planner.gamma", "1"); });
    CHECK(msg.find("planner.gamma") != std::string::npos);

    const fs::path bad_sec = write_temp("lp_cfg_badsec.ini", "[plans]\nlambda = 0.5\n");
    msg = config_error_of([&] { parse_config(bad_sec.string()); });
    CHECK(msg.find("plans") != std::string::npos);
    fs::remove(bad_sec);

    const fs::path orphan = write_temp("lp_cfg_orphan.ini", "lambda = 0.5\n");
    msg = config_error_of([&] { parse_config(orphan.string()); });
    CHECK(msg.find("outside any section") != std::string::npos);
    fs::remove(orphan);

    const fs::path noeq = write_temp("lp_cfg_noeq.ini", "[planner]\nlambda 0.5\n");
    CHECK_THROWS_AS(parse_config(noeq.string()), ConfigError);
    fs::remove(noeq);
}

TEST_CASE("config: malformed values are named with their key") {
    RunConfig cfg;
    std::string msg =
        config_error_of([&] { apply_override(cfg, "planner.lambda", "fast"); });
    CHECK(msg.find("planner.lambda") != std::string::npos);
    CHECK(msg.find("fast") != std::string::npos);

    msg = config_error_of([&] { apply_override(cfg, "run.seed", "-3"); });
    CHECK(msg.find("run.seed") != std::string::npos);

    msg = config_error_of([&] { apply_override(cfg, "run.seed", "12x"); });
    CHECK(msg.find("run.seed") != std::string::npos);

    msg = config_error_of([&] { apply_override(cfg, "mse.holdout", "maybe"); });
    CHECK(msg.find("boolean") != std::string::npos);

    msg = config_error_of([&] { apply_override(cfg, "policy.action_scale", "1;2"); });
    CHECK(msg.find("three") != std::string::npos);

    // bool spellings that do parse
    apply_override(cfg, "mse.holdout", "0");
    CHECK(cfg.mse.holdout == false);
    apply_override(cfg, "mse.holdout", "true");
    CHECK(cfg.mse.holdout == true);
}

TEST_CASE("config: hash ignores output location and tracks every setting") {
    RunConfig a;
    RunConfig b;
    b.out_root = "/somewhere/else";
    CHECK(config_hash(a) == config_hash(b));
    CHECK(serialize_config(a) != serialize_config(b));  // location still persisted

    RunConfig c;
    c.seed = 1;
    CHECK(config_hash(c) != config_hash(a));

    RunConfig d;
    apply_override(d, "planner.lambda", "0.75");
    CHECK(config_hash(d) != config_hash(a));

    CHECK(config_hash_hex(a).size() == 16);
    CHECK(config_hash_hex(a) != config_hash_hex(c));
}

TEST_CASE("config: policy chain shape cannot drift from the planner") {
    RunConfig cfg;
    apply_override(cfg, "planner.lambda", "0.67");
    apply_override(cfg, "planner.n", "3");
    const PolicyConfig pc = cfg.policy_for_run();
    CHECK(pc.lambda == 0.67);
    CHECK(pc.plan_n == 3);
    // everything else passes through
    CHECK(pc.mode == cfg.policy.mode);
    CHECK(pc.hidden == cfg.policy.hidden);

    // there is deliberately no direct key for the mirrored fields
    CHECK_THROWS_AS(apply_override(cfg, "policy.lambda", "0.9"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "policy.plan_n", "9"), ConfigError);
}
