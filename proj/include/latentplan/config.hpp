// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: one fully-defaulted value bundle covering the world,
// dataset, planner, policy, and evaluation knobs, read from a sectioned
// key/value file with flag overrides on top.  The canonical serialization is
// persisted verbatim with every run, and its hash (location-independent)
// stamps every artifact a run produces.

#include <cstdint>
#include <string>

#include "latentplan/evalkit.hpp"

namespace latentplan {

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_root = "runs";   // location only: excluded from the hash
    std::size_t snapshots = 3;       // policy checkpoints kept for aggregation
    std::size_t report_k = 3;        // checkpoints averaged by the report stage
    AggregateMode report_mode = AggregateMode::top;

    WorldConfig world;
    DataConfig data;
    PlannerConfig planner;
    PolicyConfig policy;   // chain shape (lambda, plan_n) mirrors [planner]
    struct EvalKnobs {
        std::vector<std::size_t> tasks{0, 1, 2};
        std::size_t rollouts = 10;
        std::size_t ensemble_capacity = 6;
    } eval;
    MseConfig mse;         // its seed field is derived per run, not configured

    // the policy configuration a run actually trains with: chain shape comes
    // from the planner section, so the two can never drift apart
    PolicyConfig policy_for_run() const;

    void validate() const;  // ConfigError on any out-of-domain value
};

// Reads a sectioned key/value file onto `base` (empty path -> base untouched)
// and validates.  Unknown keys and malformed values -> ConfigError naming the
// key; a missing file -> ConfigError.
RunConfig parse_config(const std::string& path, RunConfig base = RunConfig{});

// One `section.key = value` override, as given by --set or a sugar flag.
// Does not validate; callers re-validate after the last override.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical text form: fixed section and key order, shortest round-trip
// floats.  parse_config(serialize_config(cfg)) reproduces cfg exactly.
// include_location controls whether [run] out appears.
std::string serialize_config(const RunConfig& cfg, bool include_location = true);

// FNV-1a over the location-independent serialization: same settings -> same
// hash, wherever the run lands on disk.
std::uint64_t config_hash(const RunConfig& cfg);
std::string config_hash_hex(const RunConfig& cfg);

}  // namespace latentplan
