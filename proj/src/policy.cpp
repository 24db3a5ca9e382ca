// SPDX-License-Identifier: Apache-2.0
#include "latentplan/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "latentplan/checkpoint.hpp"
#include "latentplan/optim.hpp"

namespace latentplan {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string fused_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt-%04zu.ckpt", i);
    return buf;
}

} // namespace

PolicyMode parse_policy_mode(const std::string& s) {
    if (s == "lbp") return PolicyMode::lbp;
    if (s == "lcbc") return PolicyMode::lcbc;
    if (s == "glcbc") return PolicyMode::glcbc;
    throw ConfigError("unknown policy mode '" + s + "' (lbp|lcbc|glcbc)");
}

std::string policy_mode_name(PolicyMode m) {
    switch (m) {
        case PolicyMode::lbp: return "lbp";
        case PolicyMode::lcbc: return "lcbc";
        case PolicyMode::glcbc: return "glcbc";
    }
    throw ContractError("invalid policy mode value");
}

FusionKind parse_fusion_kind(const std::string& s) {
    if (s == "attention") return FusionKind::attention;
    if (s == "avgpool") return FusionKind::avgpool;
    throw ConfigError("unknown fusion kind '" + s + "' (attention|avgpool)");
}

std::string fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::attention: return "attention";
        case FusionKind::avgpool: return "avgpool";
    }
    throw ContractError("invalid fusion kind value");
}

double canonical_sum(std::vector<double> terms) {
    if (terms.empty()) return 0.0;
    std::sort(terms.begin(), terms.end());
    while (terms.size() > 1) {
        std::size_t keep = 0;
        for (std::size_t i = 0; i + 1 < terms.size(); i += 2)
            terms[keep++] = terms[i] + terms[i + 1];
        if (terms.size() % 2 == 1) terms[keep++] = terms.back();
        terms.resize(keep);
    }
    return terms[0];
}

// ---------------------------------------------------------------------------
// fusion ops

Tensor attention_fuse(const Tensor& C, const Tensor& q, const Tensor& Wk, const Tensor& Wv,
                      const Tensor& E, const Tensor& Wo, const Tensor& bo) {
    const std::size_t r = C.rows(), d = C.cols();
    const std::size_t dc = Wo.cols();
    if (q.rows() != 1 || q.cols() != d) throw ShapeError("attention_fuse: query must be [1,d]");
    if (Wk.rows() != d || Wk.cols() != d || Wv.rows() != d || Wv.cols() != d)
        throw ShapeError("attention_fuse: projection matrices must be [d,d]");
    if (E.rows() != r || E.cols() != d)
        throw ShapeError("attention_fuse: type embeddings must match context rows");
    if (Wo.rows() != d || bo.rows() != 1 || bo.cols() != dc)
        throw ShapeError("attention_fuse: output projection shape");

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const std::vector<double>& c = C.value();
    const std::vector<double>& qv = q.value();

    // keys and values; each row depends only on its own content (and slot)
    std::vector<double> K(r * d), V(r * d);
    for (std::size_t j = 0; j < r; ++j)
        for (std::size_t y = 0; y < d; ++y) {
            double sk = 0.0, sv = 0.0;
            for (std::size_t p = 0; p < d; ++p) {
                sk += c[j * d + p] * Wk.value()[p * d + y];
                sv += c[j * d + p] * Wv.value()[p * d + y];
            }
            K[j * d + y] = sk + E.value()[j * d + y];
            V[j * d + y] = sv;
        }

    std::vector<double> s(r);
    for (std::size_t j = 0; j < r; ++j) {
        double dot = 0.0;
        for (std::size_t y = 0; y < d; ++y) dot += qv[y] * K[j * d + y];
        s[j] = dot * inv_scale;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    std::vector<double> e(r);
    for (std::size_t j = 0; j < r; ++j) e[j] = std::exp(s[j] - mx);
    const double z = canonical_sum(e);
    std::vector<double> a(r);
    for (std::size_t j = 0; j < r; ++j) a[j] = e[j] / z;

    // attention-weighted value, reduced in canonical order per dimension
    std::vector<double> f(d);
    std::vector<double> terms(r);
    for (std::size_t y = 0; y < d; ++y) {
        for (std::size_t j = 0; j < r; ++j) terms[j] = a[j] * V[j * d + y];
        f[y] = canonical_sum(terms);
    }

    Tensor out = Tensor::zeros({1, dc});
    for (std::size_t o = 0; o < dc; ++o) {
        double acc = bo.value()[o];
        for (std::size_t y = 0; y < d; ++y) acc += f[y] * Wo.value()[y * dc + o];
        out.value()[o] = acc;
    }

    return custom_op("attention_fuse", out, {C, q, Wk, Wv, E, Wo, bo},
                     [C, q, Wk, Wv, E, Wo, bo, out, K, V, a, f, r, d, dc, inv_scale]() mutable {
        const std::vector<double>& go = out.grad();
        if (bo.requires_grad())
            for (std::size_t o = 0; o < dc; ++o) bo.grad()[o] += go[o];
        if (Wo.requires_grad())
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t o = 0; o < dc; ++o) Wo.grad()[y * dc + o] += f[y] * go[o];

        std::vector<double> df(d);
        for (std::size_t y = 0; y < d; ++y) {
            double acc = 0.0;
            for (std::size_t o = 0; o < dc; ++o) acc += Wo.value()[y * dc + o] * go[o];
            df[y] = acc;
        }
        std::vector<double> da(r, 0.0), dV(r * d);
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t y = 0; y < d; ++y) {
                da[j] += df[y] * V[j * d + y];
                dV[j * d + y] = a[j] * df[y];
            }
        double pivot = 0.0;
        for (std::size_t j = 0; j < r; ++j) pivot += a[j] * da[j];
        std::vector<double> dK(r * d);
        for (std::size_t j = 0; j < r; ++j) {
            const double ds = a[j] * (da[j] - pivot) * inv_scale;
            for (std::size_t y = 0; y < d; ++y) dK[j * d + y] = ds * q.value()[y];
            if (q.requires_grad())
                for (std::size_t y = 0; y < d; ++y) q.grad()[y] += ds * K[j * d + y];
        }
        if (E.requires_grad())
            for (std::size_t i = 0; i < r * d; ++i) E.grad()[i] += dK[i];
        if (Wk.requires_grad() || Wv.requires_grad())
            for (std::size_t p = 0; p < d; ++p)
                for (std::size_t y = 0; y < d; ++y) {
                    double gk = 0.0, gv = 0.0;
                    for (std::size_t j = 0; j < r; ++j) {
                        gk += C.value()[j * d + p] * dK[j * d + y];
                        gv += C.value()[j * d + p] * dV[j * d + y];
                    }
                    if (Wk.requires_grad()) Wk.grad()[p * d + y] += gk;
                    if (Wv.requires_grad()) Wv.grad()[p * d + y] += gv;
                }
        if (C.requires_grad())
            for (std::size_t j = 0; j < r; ++j)
                for (std::size_t p = 0; p < d; ++p) {
                    double acc = 0.0;
                    for (std::size_t y = 0; y < d; ++y)
                        acc += dK[j * d + y] * Wk.value()[p * d + y] +
                               dV[j * d + y] * Wv.value()[p * d + y];
                    C.grad()[j * d + p] += acc;
                }
    });
}

Tensor avgpool_fuse(const Tensor& C, const Tensor& Wo, const Tensor& bo) {
    const std::size_t r = C.rows(), d = C.cols();
    const std::size_t dc = Wo.cols();
    if (Wo.rows() != d || bo.rows() != 1 || bo.cols() != dc)
        throw ShapeError("avgpool_fuse: output projection shape");
    const double inv_r = 1.0 / static_cast<double>(r);
    std::vector<double> mean(d);
    std::vector<double> terms(r);
    for (std::size_t y = 0; y < d; ++y) {
        for (std::size_t j = 0; j < r; ++j) terms[j] = C.value()[j * d + y];
        mean[y] = canonical_sum(terms) * inv_r;
    }
    Tensor out = Tensor::zeros({1, dc});
    for (std::size_t o = 0; o < dc; ++o) {
        double acc = bo.value()[o];
        for (std::size_t y = 0; y < d; ++y) acc += mean[y] * Wo.value()[y * dc + o];
        out.value()[o] = acc;
    }
    return custom_op("avgpool_fuse", out, {C, Wo, bo},
                     [C, Wo, bo, out, mean, r, d, dc, inv_r]() mutable {
        const std::vector<double>& go = out.grad();
        if (bo.requires_grad())
            for (std::size_t o = 0; o < dc; ++o) bo.grad()[o] += go[o];
        if (Wo.requires_grad())
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t o = 0; o < dc; ++o) Wo.grad()[y * dc + o] += mean[y] * go[o];
        if (C.requires_grad()) {
            for (std::size_t y = 0; y < d; ++y) {
                double dm = 0.0;
                for (std::size_t o = 0; o < dc; ++o) dm += Wo.value()[y * dc + o] * go[o];
                dm *= inv_r;
                for (std::size_t j = 0; j < r; ++j) C.grad()[j * d + y] += dm;
            }
        }
    });
}

GoalFusion::GoalFusion(FusionKind kind_, std::size_t rows_, std::size_t width_,
                       std::size_t out_dim_, Rng& rng)
    : kind(kind_), rows(rows_), width(width_), out_dim(out_dim_) {
    if (rows == 0 || width == 0 || out_dim == 0) throw ConfigError("fusion: zero dimension");
    if (out_dim > width) throw ConfigError("fusion: fused token must not exceed context width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    auto uniform_mat = [&](std::size_t a, std::size_t b) {
        std::vector<double> v(a * b);
        for (double& x : v) x = rng.uniform(-bound, bound);
        return Tensor::from({a, b}, std::move(v), true);
    };
    q = uniform_mat(1, width);
    Wk = uniform_mat(width, width);
    Wv = uniform_mat(width, width);
    // slot identities start at zero: the fusion begins permutation-invariant
    // and learns to distinguish planning distances only if that helps
    E = Tensor::zeros({rows, width}, true);
    Wo = uniform_mat(width, out_dim);
    bo = Tensor::zeros({1, out_dim}, true);
}

Tensor GoalFusion::forward(const Tensor& C) const {
    if (C.rows() != rows || C.cols() != width)
        throw ShapeError("fusion: expected " + std::to_string(rows) + "x" +
                         std::to_string(width) + " context, got " + std::to_string(C.rows()) +
                         "x" + std::to_string(C.cols()));
    if (kind == FusionKind::attention) return attention_fuse(C, q, Wk, Wv, E, Wo, bo);
    return avgpool_fuse(C, Wo, bo);
}

void GoalFusion::collect(const std::string& prefix, NamedParams& out) const {
    if (kind == FusionKind::attention) {
        out.emplace_back(prefix + ".q", q);
        out.emplace_back(prefix + ".Wk", Wk);
        out.emplace_back(prefix + ".Wv", Wv);
        out.emplace_back(prefix + ".E", E);
    }
    out.emplace_back(prefix + ".Wo", Wo);
    out.emplace_back(prefix + ".bo", bo);
}

// ---------------------------------------------------------------------------
// schedule

DiffusionSchedule DiffusionSchedule::make(std::size_t steps, double beta_lo, double beta_hi) {
    if (steps < 2) throw ConfigError("schedule: need at least two steps");
    if (!(beta_lo > 0.0 && beta_lo < beta_hi && beta_hi < 1.0))
        throw ConfigError("schedule: need 0 < beta_lo < beta_hi < 1");
    DiffusionSchedule s;
    s.beta.resize(steps);
    s.alpha_bar.resize(steps);
    double prod = 1.0;
    for (std::size_t k = 0; k < steps; ++k) {
        s.beta[k] = beta_lo + (beta_hi - beta_lo) * static_cast<double>(k) /
                                  static_cast<double>(steps - 1);
        prod *= 1.0 - s.beta[k];
        s.alpha_bar[k] = prod;
    }
    return s;
}

double DiffusionSchedule::signal(std::size_t k) const {
    if (k > steps()) throw ContractError("schedule: step index beyond K");
    return k == 0 ? 1.0 : alpha_bar[k - 1];
}

// ---------------------------------------------------------------------------
// config & feature helpers

std::size_t PolicyConfig::context_rows() const {
    switch (mode) {
        case PolicyMode::lbp: return plan_n + 2;
        case PolicyMode::glcbc: return 2;
        case PolicyMode::lcbc: return 1;
    }
    throw ContractError("invalid policy mode value");
}

void PolicyConfig::validate() const {
    if (chunk == 0) throw ConfigError("policy.chunk must be positive");
    if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("policy.time_dim must be even");
    if (hidden == 0 || fused_dim == 0) throw ConfigError("policy.hidden/fused_dim must be positive");
    if (budget == 0 || batch == 0) throw ConfigError("policy.budget/batch must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("policy.lr must be positive");
    if (ensemble_decay < 0.0) throw ConfigError("policy.ensemble_decay must be >= 0");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("policy.lambda must lie in (0,1)");
    for (double s : action_scale)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ConfigError("policy.action_scale entries must be positive");
    const DiffusionSchedule sched = DiffusionSchedule::make(diffusion_steps, beta_lo, beta_hi);
    // terminal corruption must carry essentially no signal, under both the
    // coefficient itself and its square-root reading
    const double tail = sched.signal(sched.steps());
    if (!(tail < 0.05 && std::sqrt(tail) < 0.05))
        throw ConfigError("policy schedule leaves too much signal at the final step");
}

std::vector<double> diffusion_corrupt(const DiffusionSchedule& s, std::size_t k,
                                      const std::vector<double>& x0,
                                      const std::vector<double>& eps) {
    if (k == 0 || k > s.steps())
        throw ContractError("diffusion_corrupt: step must lie in [1, K]");
    if (x0.size() != eps.size()) throw ShapeError("diffusion_corrupt: value/noise size mismatch");
    const double sig = std::sqrt(s.signal(k));
    const double noise = std::sqrt(1.0 - s.signal(k));
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = sig * x0[i] + noise * eps[i];
    return out;
}

std::vector<double> timestep_embedding(std::size_t k, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) throw ConfigError("timestep embedding width must be even");
    std::vector<double> emb(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(2 * i) /
                                                static_cast<double>(dim));
        emb[2 * i] = std::sin(static_cast<double>(k) * w);
        emb[2 * i + 1] = std::cos(static_cast<double>(k) * w);
    }
    return emb;
}

std::vector<double> proprio_features(const WorldState& s, std::size_t num_objects) {
    return {s.agent[0], s.agent[1],
            s.held < 0 ? 0.0
                       : static_cast<double>(s.held + 1) / static_cast<double>(num_objects)};
}

std::vector<std::vector<double>> build_context_rows(
    PolicyMode mode, const std::vector<std::vector<double>>& subgoals_coarse_to_fine,
    const std::vector<double>& z_g, const std::vector<double>* z_g_ref,
    const std::vector<double>& phi, std::size_t latent_dim) {
    std::vector<std::vector<double>> rows;
    switch (mode) {
        case PolicyMode::lbp:
            // nearest-first: the last (finest) chain level leads
            for (auto it = subgoals_coarse_to_fine.rbegin();
                 it != subgoals_coarse_to_fine.rend(); ++it)
                rows.push_back(*it);
            rows.push_back(z_g);
            break;
        case PolicyMode::glcbc:
            if (z_g_ref == nullptr)
                throw ConfigError("glcbc conditioning needs a reference demonstration goal");
            rows.push_back(*z_g_ref);
            break;
        case PolicyMode::lcbc:
            break;
    }
    rows.push_back(project_lang(phi, latent_dim));
    for (const auto& r : rows)
        if (r.size() != latent_dim) throw ShapeError("context row width mismatch");
    return rows;
}

// ---------------------------------------------------------------------------
// ensemble buffer

EnsembleBuffer::EnsembleBuffer(std::size_t chunk_len, std::size_t capacity, double decay)
    : chunk_len_(chunk_len), capacity_(capacity), decay_(decay) {
    if (chunk_len_ == 0 || capacity_ == 0) throw ConfigError("ensemble: zero capacity");
    if (decay_ < 0.0) throw ConfigError("ensemble: negative decay");
}

void EnsembleBuffer::push(std::size_t emitted_at, std::vector<double> chunk) {
    if (chunk.size() != chunk_len_ * 3) throw ShapeError("ensemble: chunk length mismatch");
    entries_.push_back(Entry{emitted_at, std::move(chunk)});
    if (entries_.size() > capacity_) entries_.erase(entries_.begin());
}

Action EnsembleBuffer::blend(std::size_t now) const {
    double wsum = 0.0;
    double acc[3] = {0.0, 0.0, 0.0};
    const Entry* only = nullptr;
    std::size_t only_age = 0, covering = 0;
    for (const Entry& en : entries_) {
        if (now < en.emitted_at) continue;
        const std::size_t age = now - en.emitted_at;
        if (age >= chunk_len_) continue;  // chunk no longer covers `now`
        ++covering;
        only = &en;
        only_age = age;
        const double w = std::exp(-decay_ * static_cast<double>(age));
        wsum += w;
        for (std::size_t d = 0; d < 3; ++d) acc[d] += w * en.chunk[age * 3 + d];
    }
    if (covering == 0) throw ContractError("ensemble: no chunk covers the requested step");
    if (covering == 1)  // a lone chunk passes through untouched
        return Action{only->chunk[only_age * 3], only->chunk[only_age * 3 + 1],
                      only->chunk[only_age * 3 + 2]};
    return Action{acc[0] / wsum, acc[1] / wsum, acc[2] / wsum};
}

// ---------------------------------------------------------------------------
// diffusion policy

DiffusionPolicy::DiffusionPolicy(std::size_t latent_dim, std::size_t lang_dim, PolicyConfig cfg,
                                 std::uint64_t init_seed)
    : nz_(latent_dim), nl_(lang_dim), cfg_(cfg) {
    cfg_.validate();
    if (cfg_.fused_dim > nz_)
        throw ConfigError("policy.fused_dim must not exceed the latent width");
    sched_ = DiffusionSchedule::make(cfg_.diffusion_steps, cfg_.beta_lo, cfg_.beta_hi);
    Rng rng(derive_seed(init_seed, "init-policy",
                        {static_cast<std::uint64_t>(cfg_.mode),
                         static_cast<std::uint64_t>(cfg_.fusion), nz_, nl_}));
    fusion_ = GoalFusion(cfg_.fusion, cfg_.context_rows(), nz_, cfg_.fused_dim, rng);
    const std::size_t in_dim =
        cfg_.chunk * 3 + cfg_.time_dim + nz_ + cfg_.fused_dim + nl_ + 3;
    eps_net_ = ResidualMlp(in_dim, cfg_.hidden, cfg_.chunk * 3, cfg_.blocks, Activation::gelu,
                           rng);
}

NamedParams DiffusionPolicy::params() const {
    NamedParams out;
    fusion_.collect("fusion", out);
    eps_net_.collect("eps", out);
    return out;
}

std::map<std::size_t, std::vector<double>> DiffusionPolicy::reference_goals(const Dataset& ds) {
    std::map<std::size_t, std::vector<double>> refs;
    for (std::size_t task : ds.data.tasks) {
        const auto ids = ds.task_trajs(task, false);
        if (!ids.empty()) refs[task] = ds.trajs[ids.front()].z.back();
    }
    return refs;
}

Tensor DiffusionPolicy::batch_loss_graph(const Dataset& ds, const std::vector<std::size_t>& ids,
                                         Rng& rng,
                                         const std::map<std::size_t, std::vector<double>>& refs,
                                         std::size_t batch) const {
    const std::size_t cdim = cfg_.chunk * 3;
    const std::size_t n_ctx = cfg_.mode == PolicyMode::lbp ? cfg_.plan_n : 0;
    std::vector<double> chunk_in, eps_tgt, mask_in, time_in, zt_in, phi_in, prop_in;
    std::vector<Tensor> fused_parts;
    chunk_in.reserve(batch * cdim);
    for (std::size_t b = 0; b < batch; ++b) {
        const Trajectory& tr = ds.trajs[ids[rng.below(ids.size())]];
        const std::size_t t = rng.below(tr.last());
        if (t >= tr.raw.size())
            throw ContractError("policy training: trajectory lacks raw states");
        Context ctx = sample_context(tr, t, cfg_.lambda, n_ctx);

        const std::vector<double>* ref = nullptr;
        if (cfg_.mode == PolicyMode::glcbc) {
            auto it = refs.find(tr.task_id);
            if (it == refs.end())
                throw ConfigError("glcbc: no reference demonstration for task " +
                                  std::to_string(tr.task_id));
            ref = &it->second;
        }
        const auto rows = build_context_rows(cfg_.mode, ctx.subgoals, ctx.z_g, ref, ctx.phi, nz_);
        std::vector<double> flat;
        flat.reserve(rows.size() * nz_);
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        Tensor C = Tensor::from({rows.size(), nz_}, std::move(flat));
        fused_parts.push_back(fusion_.forward(C));

        ActionChunk chunk = action_chunk(tr, t, cfg_.chunk);
        for (std::size_t i = 0; i < cdim; ++i) chunk.values[i] /= cfg_.action_scale[i % 3];
        const std::size_t k = 1 + rng.below(sched_.steps());
        std::vector<double> eps(cdim);
        for (double& e : eps) e = rng.normal();
        const std::vector<double> corrupted = diffusion_corrupt(sched_, k, chunk.values, eps);
        for (std::size_t i = 0; i < cdim; ++i) {
            eps_tgt.push_back(eps[i]);
            chunk_in.push_back(corrupted[i]);
            mask_in.push_back(chunk.mask[i]);
        }
        const auto emb = timestep_embedding(k, cfg_.time_dim);
        time_in.insert(time_in.end(), emb.begin(), emb.end());
        zt_in.insert(zt_in.end(), ctx.z_t.begin(), ctx.z_t.end());
        phi_in.insert(phi_in.end(), ctx.phi.begin(), ctx.phi.end());
        const auto prop = proprio_features(tr.raw[t], ds.world.num_objects);
        prop_in.insert(prop_in.end(), prop.begin(), prop.end());
    }
    Tensor in = concat_cols({Tensor::from({batch, cdim}, std::move(chunk_in)),
                             Tensor::from({batch, cfg_.time_dim}, std::move(time_in)),
                             Tensor::from({batch, nz_}, std::move(zt_in)),
                             concat_rows(fused_parts),
                             Tensor::from({batch, nl_}, std::move(phi_in)),
                             Tensor::from({batch, 3}, std::move(prop_in))});
    Tensor pred = eps_net_.forward(in);
    return masked_mse(pred, Tensor::from({batch, cdim}, std::move(eps_tgt)),
                      Tensor::from({batch, cdim}, std::move(mask_in)));
}

TrainLog DiffusionPolicy::train(const Dataset& ds, std::uint64_t seed,
                                const std::string& rescue_path, const std::string& snapshot_dir,
                                std::size_t snapshot_every) {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < ds.trajs.size(); ++i)
        if (!ds.is_holdout(ds.trajs[i])) ids.push_back(i);
    if (ids.empty()) throw ContractError("policy training: dataset has no training trajectories");
    const auto refs =
        cfg_.mode == PolicyMode::glcbc ? reference_goals(ds)
                                       : std::map<std::size_t, std::vector<double>>{};

    Rng rng(derive_seed(seed, "train-policy",
                        {static_cast<std::uint64_t>(cfg_.mode),
                         static_cast<std::uint64_t>(cfg_.fusion)}));
    const NamedParams named = params();
    AdamW::Options opt;
    opt.lr = cfg_.lr;
    AdamW optim(param_tensors(named), opt);

    TrainLog log;
    std::size_t snapshots = 0;
    if (!snapshot_dir.empty() && snapshot_every > 0)
        std::filesystem::create_directories(snapshot_dir);
    for (std::size_t step = 0; step < cfg_.budget; ++step) {
        // cosine decay to a tenth of the base rate: late steps average out
        // gradient noise, which sets the precision floor of the denoiser
        const double frac = static_cast<double>(step) / static_cast<double>(cfg_.budget);
        optim.set_lr(cfg_.lr * (0.1 + 0.45 * (1.0 + std::cos(3.141592653589793 * frac))));
        try {
            Tape tape;
            Tape::Scope scope(tape);
            optim.zero_grad();
            Tensor loss = batch_loss_graph(ds, ids, rng, refs, cfg_.batch);
            const double value = loss.item();
            if (!std::isfinite(value)) throw NumericError("training loss is not finite");
            tape.backward(loss);
            optim.step();
            log.loss.push_back(value);
        } catch (const NumericError& e) {
            if (!rescue_path.empty())
                save_checkpoint(rescue_path, "policy.diffusion", meta_for_save({}), named);
            throw NumericError(std::string(e.what()) + " at optimizer step " +
                               std::to_string(step) +
                               (rescue_path.empty() ? "" : "; state saved to " + rescue_path));
        }
        if (!snapshot_dir.empty() && snapshot_every > 0 && (step + 1) % snapshot_every == 0) {
            std::map<std::string, std::string> extra;
            extra["step"] = std::to_string(step + 1);
            extra["train_loss"] = fmt_double(log.loss.back());
            extra["trained"] = "1";  // mid-run snapshots are meant for evaluation
            save_checkpoint(snapshot_dir + "/" + fused_name(snapshots++), "policy.diffusion",
                            meta_for_save(extra), named);
        }
    }
    trained_ = true;
    return log;
}

double DiffusionPolicy::eval_batch_loss(const Dataset& ds, std::uint64_t seed,
                                        std::size_t batch) const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < ds.trajs.size(); ++i)
        if (!ds.is_holdout(ds.trajs[i])) ids.push_back(i);
    if (ids.empty()) throw ContractError("policy eval: dataset has no training trajectories");
    const auto refs =
        cfg_.mode == PolicyMode::glcbc ? reference_goals(ds)
                                       : std::map<std::size_t, std::vector<double>>{};
    Rng rng(derive_seed(seed, "train-policy",
                        {static_cast<std::uint64_t>(cfg_.mode),
                         static_cast<std::uint64_t>(cfg_.fusion)}));
    return batch_loss_graph(ds, ids, rng, refs, batch).item();
}

std::vector<double> DiffusionPolicy::sample_chunk(
    const std::vector<double>& z_t, const std::vector<std::vector<double>>& context_rows,
    const std::vector<double>& phi, const std::vector<double>& proprio, Rng& stream) const {
    const std::size_t cdim = cfg_.chunk * 3;
    std::vector<double> flat;
    flat.reserve(context_rows.size() * nz_);
    for (const auto& r : context_rows) flat.insert(flat.end(), r.begin(), r.end());
    Tensor C = Tensor::from({context_rows.size(), nz_}, std::move(flat));
    const std::vector<double> fused = fusion_.forward(C).value();

    std::vector<double> x(cdim);
    for (double& v : x) v = stream.normal();
    const std::size_t in_dim = cdim + cfg_.time_dim + nz_ + cfg_.fused_dim + nl_ + 3;
    for (std::size_t k = sched_.steps(); k >= 1; --k) {
        std::vector<double> row;
        row.reserve(in_dim);
        row.insert(row.end(), x.begin(), x.end());
        const auto emb = timestep_embedding(k, cfg_.time_dim);
        row.insert(row.end(), emb.begin(), emb.end());
        row.insert(row.end(), z_t.begin(), z_t.end());
        row.insert(row.end(), fused.begin(), fused.end());
        row.insert(row.end(), phi.begin(), phi.end());
        row.insert(row.end(), proprio.begin(), proprio.end());
        Tensor in = Tensor::from({1, in_dim}, std::move(row));
        const std::vector<double> eps_hat = eps_net_.forward(in).value();

        const double beta = sched_.beta[k - 1];
        const double abar = sched_.signal(k);
        const double abar_prev = sched_.signal(k - 1);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
        const double eps_coef = beta / std::sqrt(1.0 - abar);
        for (std::size_t i = 0; i < cdim; ++i)
            x[i] = inv_sqrt_alpha * (x[i] - eps_coef * eps_hat[i]);
        if (k > 1) {
            const double sigma = std::sqrt((1.0 - abar_prev) / (1.0 - abar) * beta);
            for (double& v : x) v += sigma * stream.normal();
        }
        if (!all_finite(x))
            throw NumericError("sampling produced a non-finite chunk at denoise step " +
                               std::to_string(k));
    }
    for (std::size_t i = 0; i < cdim; ++i) x[i] *= cfg_.action_scale[i % 3];
    return x;
}

std::map<std::string, std::string> DiffusionPolicy::meta_for_save(
    const std::map<std::string, std::string>& extra) const {
    std::map<std::string, std::string> meta = extra;  // caller keys win
    const std::map<std::string, std::string> base = {
        {"mode", policy_mode_name(cfg_.mode)},
        {"fusion", fusion_kind_name(cfg_.fusion)},
        {"chunk", std::to_string(cfg_.chunk)},
        {"diffusion_steps", std::to_string(cfg_.diffusion_steps)},
        {"beta_lo", fmt_double(cfg_.beta_lo)},
        {"beta_hi", fmt_double(cfg_.beta_hi)},
        {"hidden", std::to_string(cfg_.hidden)},
        {"blocks", std::to_string(cfg_.blocks)},
        {"fused_dim", std::to_string(cfg_.fused_dim)},
        {"time_dim", std::to_string(cfg_.time_dim)},
        {"lr", fmt_double(cfg_.lr)},
        {"budget", std::to_string(cfg_.budget)},
        {"batch", std::to_string(cfg_.batch)},
        {"ensemble_decay", fmt_double(cfg_.ensemble_decay)},
        {"plan_n", std::to_string(cfg_.plan_n)},
        {"lambda", fmt_double(cfg_.lambda)},
        {"action_scale_0", fmt_double(cfg_.action_scale[0])},
        {"action_scale_1", fmt_double(cfg_.action_scale[1])},
        {"action_scale_2", fmt_double(cfg_.action_scale[2])},
        {"latent_dim", std::to_string(nz_)},
        {"lang_dim", std::to_string(nl_)},
        {"trained", trained_ ? "1" : "0"},
    };
    meta.insert(base.begin(), base.end());
    return meta;
}

void DiffusionPolicy::save(const std::string& path,
                           const std::map<std::string, std::string>& extra_meta) const {
    save_checkpoint(path, "policy.diffusion", meta_for_save(extra_meta), params());
}

DiffusionPolicy DiffusionPolicy::load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    if (ck.model != "policy.diffusion")
        throw IoError("checkpoint " + path + " holds '" + ck.model +
                      "', expected 'policy.diffusion'");
    PolicyConfig cfg;
    cfg.mode = parse_policy_mode(require_meta(ck, "mode"));
    cfg.fusion = parse_fusion_kind(require_meta(ck, "fusion"));
    cfg.chunk = std::stoull(require_meta(ck, "chunk"));
    cfg.diffusion_steps = std::stoull(require_meta(ck, "diffusion_steps"));
    cfg.beta_lo = std::stod(require_meta(ck, "beta_lo"));
    cfg.beta_hi = std::stod(require_meta(ck, "beta_hi"));
    cfg.hidden = std::stoull(require_meta(ck, "hidden"));
    cfg.blocks = std::stoull(require_meta(ck, "blocks"));
    cfg.fused_dim = std::stoull(require_meta(ck, "fused_dim"));
    cfg.time_dim = std::stoull(require_meta(ck, "time_dim"));
    cfg.lr = std::stod(require_meta(ck, "lr"));
    cfg.budget = std::stoull(require_meta(ck, "budget"));
    cfg.batch = std::stoull(require_meta(ck, "batch"));
    cfg.ensemble_decay = std::stod(require_meta(ck, "ensemble_decay"));
    cfg.plan_n = std::stoull(require_meta(ck, "plan_n"));
    cfg.lambda = std::stod(require_meta(ck, "lambda"));
    for (std::size_t d = 0; d < 3; ++d)
        cfg.action_scale[d] =
            std::stod(require_meta(ck, "action_scale_" + std::to_string(d)));
    DiffusionPolicy p(std::stoull(require_meta(ck, "latent_dim")),
                      std::stoull(require_meta(ck, "lang_dim")), cfg, 0);
    restore_params(ck, p.params());
    p.trained_ = require_meta(ck, "trained") == "1";
    return p;
}

} // namespace latentplan
