// SPDX-License-Identifier: Apache-2.0
#include "latentplan/dataset.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "latentplan/common.hpp"

namespace fs = std::filesystem;

namespace latentplan {

namespace {
constexpr std::uint32_t kTrajVersion = 1;

void put_u32(std::string& b, std::uint32_t v) {
    char t[4];
    std::memcpy(t, &v, 4);
    b.append(t, 4);
}
void put_u64(std::string& b, std::uint64_t v) {
    char t[8];
    std::memcpy(t, &v, 8);
    b.append(t, 8);
}
void put_f64(std::string& b, double v) {
    char t[8];
    std::memcpy(t, &v, 8);
    b.append(t, 8);
}

struct Cursor {
    const std::string& b;
    std::size_t pos = 0;
    const std::string& path;
    void need(std::size_t n) {
        if (pos + n > b.size()) throw IoError(path + ": truncated trajectory file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, b.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, b.data() + pos, 8);
        pos += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, b.data() + pos, 8);
        pos += 8;
        return v;
    }
};

std::string traj_bytes(const Trajectory& tr, std::size_t latent_dim) {
    std::string b;
    b.append("LPTR", 4);
    put_u32(b, kTrajVersion);
    put_u64(b, tr.task_id);
    put_u64(b, tr.num_stages);
    put_u64(b, tr.episode);
    put_u64(b, tr.horizon());
    put_u64(b, latent_dim);
    put_u64(b, tr.raw.empty() ? 0 : tr.raw[0].objects.size());
    put_u64(b, tr.phi.size());
    for (double v : tr.phi) put_f64(b, v);
    for (const Vec2& t : tr.targets) {
        put_f64(b, t[0]);
        put_f64(b, t[1]);
    }
    for (const WorldState& s : tr.raw) {
        put_f64(b, s.agent[0]);
        put_f64(b, s.agent[1]);
        put_f64(b, static_cast<double>(s.held));
        put_f64(b, static_cast<double>(s.stage));
        for (const Vec2& o : s.objects) {
            put_f64(b, o[0]);
            put_f64(b, o[1]);
        }
    }
    for (const auto& z : tr.z)
        for (double v : z) put_f64(b, v);
    for (const Action& a : tr.actions) {
        put_f64(b, a.vx);
        put_f64(b, a.vy);
        put_f64(b, a.grab);
    }
    return b;
}

Trajectory parse_traj(const std::string& bytes, const std::string& path) {
    Cursor c{bytes, 0, path};
    c.need(4);
    if (bytes.compare(0, 4, "LPTR") != 0) throw IoError(path + ": bad magic");
    c.pos = 4;
    const std::uint32_t ver = c.u32();
    if (ver != kTrajVersion) throw IoError(path + ": unsupported version " + std::to_string(ver));
    Trajectory tr;
    tr.task_id = static_cast<std::size_t>(c.u64());
    tr.num_stages = static_cast<std::size_t>(c.u64());
    tr.episode = static_cast<std::size_t>(c.u64());
    const std::size_t h = static_cast<std::size_t>(c.u64());
    const std::size_t nz = static_cast<std::size_t>(c.u64());
    const std::size_t m = static_cast<std::size_t>(c.u64());
    const std::size_t nl = static_cast<std::size_t>(c.u64());
    tr.phi.resize(nl);
    for (double& v : tr.phi) v = c.f64();
    tr.targets.resize(tr.num_stages);
    for (Vec2& t : tr.targets) {
        t[0] = c.f64();
        t[1] = c.f64();
    }
    tr.raw.resize(h);
    for (WorldState& s : tr.raw) {
        s.agent[0] = c.f64();
        s.agent[1] = c.f64();
        s.held = static_cast<int>(c.f64());
        s.stage = static_cast<std::size_t>(c.f64());
        s.objects.resize(m);
        for (Vec2& o : s.objects) {
            o[0] = c.f64();
            o[1] = c.f64();
        }
    }
    tr.z.assign(h, std::vector<double>(nz));
    for (auto& z : tr.z)
        for (double& v : z) v = c.f64();
    if (h == 0) throw IoError(path + ": empty trajectory");
    tr.actions.resize(h - 1);
    for (Action& a : tr.actions) {
        a.vx = c.f64();
        a.vy = c.f64();
        a.grab = c.f64();
    }
    if (c.pos != bytes.size()) throw IoError(path + ": trailing bytes");
    return tr;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string traj_filename(std::size_t task, std::size_t episode) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "task%zu_ep%04zu.traj", task, episode);
    return buf;
}

std::string join_tasks(const std::vector<std::size_t>& tasks) {
    std::string s;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(tasks[i]);
    }
    return s;
}
} // namespace

std::vector<std::size_t> Dataset::task_trajs(std::size_t task_id, bool holdout) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < trajs.size(); ++i)
        if (trajs[i].task_id == task_id && is_holdout(trajs[i]) == holdout) out.push_back(i);
    return out;
}

bool Dataset::is_holdout(const Trajectory& t) const {
    const std::size_t n = data.demos_per_task;
    std::size_t held = static_cast<std::size_t>(std::llround(
        static_cast<double>(n) * data.holdout_fraction));
    if (held >= n) held = n == 0 ? 0 : n - 1;
    return t.episode >= n - held;
}

Dataset generate_dataset(const WorldConfig& world, const DataConfig& data, std::uint64_t seed,
                         const std::string& out_dir, const std::string& config_hash) {
    if (!(data.max_failure_rate >= 0.0 && data.max_failure_rate <= 1.0))
        throw ConfigError("max_failure_rate out of [0,1]");
    fs::create_directories(out_dir);

    Dataset ds;
    ds.world = world;
    ds.data = data;
    ds.seed = seed;
    LatentEncoder enc(world, seed);
    ds.encoder_checksum = enc.checksum();

    std::ostringstream trajlines;
    for (std::size_t task : data.tasks) {
        const TaskSpec& spec = task_spec(task);
        Simulator sim(world, spec);
        const std::vector<double> phi = lang_embedding(task, world.lang_dim);
        for (std::size_t e = 0; e < data.demos_per_task; ++e) {
            bool saved = false;
            for (std::uint64_t attempt = 0; attempt < 64 && !saved; ++attempt) {
                Rng rng(derive_seed(seed, "episode", {task, e, attempt}));
                sim.reset(rng);
                Trajectory tr;
                tr.task_id = task;
                tr.num_stages = spec.num_stages();
                tr.episode = e;
                tr.targets = sim.task().target;
                tr.phi = phi;
                tr.raw.push_back(sim.state());
                tr.z.push_back(enc.encode(sim.state(), tr.num_stages));
                while (!sim.done() && sim.steps() < world.max_steps) {
                    const Action a = scripted_expert(world, sim.state(), sim.task());
                    sim.step(a);
                    tr.actions.push_back(a);
                    tr.raw.push_back(sim.state());
                    tr.z.push_back(enc.encode(sim.state(), tr.num_stages));
                }
                if (!sim.done()) {
                    ++ds.failures;
                    continue;
                }
                const std::string fname = traj_filename(task, e);
                const std::string bytes = traj_bytes(tr, world.latent_dim);
                write_file((fs::path(out_dir) / fname).string(), bytes);
                trajlines << "traj " << fname << " " << task << " " << tr.horizon() << " "
                          << hex64(fnv1a64(bytes.data(), bytes.size())) << "\n";
                ds.trajs.push_back(std::move(tr));
                saved = true;
            }
            if (!saved)
                throw ConfigError("gen-data: expert cannot complete task " + std::to_string(task) +
                                  " episode " + std::to_string(e) + " (world misconfigured)");
        }
    }

    const std::size_t total = ds.trajs.size();
    const double rate = total + ds.failures == 0
                            ? 0.0
                            : static_cast<double>(ds.failures) / static_cast<double>(total + ds.failures);
    if (rate > data.max_failure_rate)
        throw ConfigError("gen-data: expert failure rate " + fmt_double(rate) + " exceeds " +
                          fmt_double(data.max_failure_rate) + " (world misconfigured)");

    std::ostringstream man;
    man << "format_version 1\n";
    man << "stage gen-data\n";
    man << "config_hash " << config_hash << "\n";
    man << "seed " << seed << "\n";
    man << "encoder_checksum " << hex64(ds.encoder_checksum) << "\n";
    man << "num_objects " << world.num_objects << "\n";
    man << "max_stages " << world.max_stages << "\n";
    man << "latent_dim " << world.latent_dim << "\n";
    man << "lang_dim " << world.lang_dim << "\n";
    man << "speed " << fmt_double(world.speed) << "\n";
    man << "grab_radius " << fmt_double(world.grab_radius) << "\n";
    man << "place_tol " << fmt_double(world.place_tol) << "\n";
    man << "approach_radius " << fmt_double(world.approach_radius) << "\n";
    man << "carry_radius " << fmt_double(world.carry_radius) << "\n";
    man << "init_noise " << fmt_double(world.init_noise) << "\n";
    man << "max_steps " << world.max_steps << "\n";
    man << "tasks " << join_tasks(data.tasks) << "\n";
    man << "demos_per_task " << data.demos_per_task << "\n";
    man << "max_failure_rate " << fmt_double(data.max_failure_rate) << "\n";
    man << "holdout_fraction " << fmt_double(data.holdout_fraction) << "\n";
    man << "failures " << ds.failures << "\n";
    man << "trajectories " << total << "\n";
    man << trajlines.str();
    write_file((fs::path(out_dir) / "manifest.txt").string(), man.str());
    return ds;
}

Dataset load_dataset(const std::string& dir) {
    const std::string man = read_file((fs::path(dir) / "manifest.txt").string());
    std::istringstream in(man);
    Dataset ds;
    std::string key;
    struct TrajEntry {
        std::string file;
        std::size_t task;
        std::size_t horizon;
        std::string checksum;
    };
    std::vector<TrajEntry> entries;
    std::uint64_t want_encoder = 0;
    while (in >> key) {
        if (key == "format_version") {
            int v;
            in >> v;
            if (v != 1) throw IoError(dir + ": unsupported manifest version");
        } else if (key == "stage" || key == "config_hash") {
            std::string ignored;
            in >> ignored;
        } else if (key == "seed") {
            in >> ds.seed;
        } else if (key == "encoder_checksum") {
            std::string hex;
            in >> hex;
            want_encoder = std::stoull(hex, nullptr, 16);
        } else if (key == "num_objects") {
            in >> ds.world.num_objects;
        } else if (key == "max_stages") {
            in >> ds.world.max_stages;
        } else if (key == "latent_dim") {
            in >> ds.world.latent_dim;
        } else if (key == "lang_dim") {
            in >> ds.world.lang_dim;
        } else if (key == "speed") {
            in >> ds.world.speed;
        } else if (key == "grab_radius") {
            in >> ds.world.grab_radius;
        } else if (key == "place_tol") {
            in >> ds.world.place_tol;
        } else if (key == "approach_radius") {
            in >> ds.world.approach_radius;
        } else if (key == "carry_radius") {
            in >> ds.world.carry_radius;
        } else if (key == "init_noise") {
            in >> ds.world.init_noise;
        } else if (key == "max_steps") {
            in >> ds.world.max_steps;
        } else if (key == "tasks") {
            std::string list;
            in >> list;
            ds.data.tasks.clear();
            std::istringstream ls(list);
            std::string tok;
            while (std::getline(ls, tok, ',')) ds.data.tasks.push_back(std::stoul(tok));
        } else if (key == "demos_per_task") {
            in >> ds.data.demos_per_task;
        } else if (key == "max_failure_rate") {
            in >> ds.data.max_failure_rate;
        } else if (key == "holdout_fraction") {
            in >> ds.data.holdout_fraction;
        } else if (key == "failures") {
            in >> ds.failures;
        } else if (key == "trajectories") {
            std::size_t n;
            in >> n;
        } else if (key == "traj") {
            TrajEntry e;
            in >> e.file >> e.task >> e.horizon >> e.checksum;
            entries.push_back(std::move(e));
        } else {
            throw IoError(dir + ": unknown manifest key '" + key + "'");
        }
    }

    LatentEncoder enc(ds.world, ds.seed);
    ds.encoder_checksum = enc.checksum();
    if (want_encoder != ds.encoder_checksum)
        throw IoError(dir + ": encoder checksum mismatch (manifest vs rebuilt)");

    for (const auto& e : entries) {
        const std::string path = (fs::path(dir) / e.file).string();
        const std::string bytes = read_file(path);
        if (hex64(fnv1a64(bytes.data(), bytes.size())) != e.checksum)
            throw IoError(path + ": checksum mismatch");
        Trajectory tr = parse_traj(bytes, path);
        if (tr.task_id != e.task || tr.horizon() != e.horizon)
            throw IoError(path + ": manifest disagreement");
        ds.trajs.push_back(std::move(tr));
    }
    return ds;
}

bool verify_trajectory(const WorldConfig& world, const Trajectory& traj) {
    if (traj.raw.size() != traj.horizon() || traj.raw.empty()) return false;
    Simulator sim(world, task_spec(traj.task_id));
    sim.reset_from(traj.raw[0]);
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
        sim.step(traj.actions[t]);
        const WorldState& got = sim.state();
        const WorldState& want = traj.raw[t + 1];
        if (got.agent != want.agent || got.held != want.held || got.stage != want.stage ||
            got.objects != want.objects)
            return false;
    }
    return sim.done();
}

std::size_t subgoal_index(std::size_t t, std::size_t last, double lambda, std::size_t i) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must lie in (0,1)");
    if (t >= last) throw ContractError("subgoal_index: t must precede the final index");
    double lam = 1.0;
    for (std::size_t k = 0; k < i; ++k) lam *= lambda;
    const double idx =
        std::ceil((1.0 - lam) * static_cast<double>(t) + lam * static_cast<double>(last));
    return static_cast<std::size_t>(idx);
}

Context sample_context(const Trajectory& traj, std::size_t t, double lambda, std::size_t n) {
    if (t >= traj.last())
        throw ContractError("sample_context: t=" + std::to_string(t) +
                            " must precede the final index " + std::to_string(traj.last()));
    Context ctx;
    ctx.t = t;
    ctx.z_t = traj.z[t];
    ctx.phi = traj.phi;
    ctx.z_g = traj.z[traj.last()];
    for (std::size_t i = 1; i <= n; ++i) {
        const std::size_t idx = subgoal_index(t, traj.last(), lambda, i);
        ctx.indices.push_back(idx);
        ctx.subgoals.push_back(traj.z[idx]);
    }
    return ctx;
}

ActionChunk action_chunk(const Trajectory& traj, std::size_t t, std::size_t len) {
    if (traj.actions.empty()) throw ContractError("action_chunk: trajectory has no actions");
    if (t >= traj.actions.size())
        throw ContractError("action_chunk: t beyond the last action");
    ActionChunk ch;
    ch.values.reserve(len * 3);
    ch.mask.reserve(len * 3);
    for (std::size_t r = 0; r < len; ++r) {
        const bool real = t + r < traj.actions.size();
        const Action& a = real ? traj.actions[t + r] : traj.actions.back();
        ch.values.push_back(a.vx);
        ch.values.push_back(a.vy);
        ch.values.push_back(a.grab);
        const double m = real ? 1.0 : 0.0;
        ch.mask.push_back(m);
        ch.mask.push_back(m);
        ch.mask.push_back(m);
    }
    return ch;
}

} // namespace latentplan
