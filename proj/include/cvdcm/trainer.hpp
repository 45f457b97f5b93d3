#pragma once

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvdcm/gradient.hpp"
#include "cvdcm/model.hpp"

namespace cvdcm {

struct TrainConfig {
    int batch_size = 10;
    double learning_rate = 5e-5;
    double l2_lambda = 0.1;
    unsigned l2_groups = kGroupAll;                 // which trainable groups the penalty touches
    std::array<double, 3> kappa = {1.0, 0.0, 0.0};  // per phase
    std::array<int, 3> max_epochs = {500, 500, 500};
    int patience = 20;                              // epochs without validation improvement
    double min_improvement = 1e-6;
    std::uint64_t rng_seed = 0;

    void validate() const {
        require(batch_size >= 1, "batch_size must be >= 1");
        require(learning_rate > 0.0, "learning_rate must be > 0");
        require(l2_lambda >= 0.0, "l2_lambda must be >= 0");
        for (double k : kappa) require(k >= 0.0 && k <= 1.0, "kappa must be in [0,1]");
    }
};

struct PhaseResult {
    int phase = 0;
    int epochs_run = 0;
    double train_ce = 0.0;
    double train_rmse = 0.0;
    double val_ce = 0.0;
    double val_rmse = 0.0;
    double wall_seconds = 0.0;
    std::array<std::uint64_t, 4> checksums_before{};  // head, beta_num, beta_sem, beta_res
    std::array<std::uint64_t, 4> checksums_after{};
};

inline std::array<std::uint64_t, 4> group_checksums(const ModelParams& p) {
    return {p.checksum(kGroupHead), p.checksum(kGroupBetaNum),
            p.checksum(kGroupBetaSem), p.checksum(kGroupBetaRes)};
}

// One SGD update with decoupled L2: theta -= lr * (g + lambda * theta).
// The penalty never touches frozen entries or the reference-class zero.
inline void sgd_step(ModelParams& p, const Gradient& g, const TrainConfig& cfg, unsigned trainable) {
    const double lr = cfg.learning_rate;
    auto update = [&](double& theta, double grad, bool penalise) {
        theta -= lr * (grad + (penalise ? cfg.l2_lambda * theta : 0.0));
    };
    if (trainable & kGroupBetaNum) {
        const bool pen = (cfg.l2_groups & kGroupBetaNum) != 0;
        for (std::size_t i = 0; i < p.beta_num.size(); ++i) update(p.beta_num[i], g.beta_num[i], pen);
    }
    if (trainable & kGroupBetaSem) {
        const bool pen = (cfg.l2_groups & kGroupBetaSem) != 0;
        for (int t = 0; t < kNumAttributes; ++t) {
            const auto zt = static_cast<std::size_t>(t);
            if (p.fixed_sem[zt]) continue;
            update(p.beta_sem[zt], g.beta_sem[zt], pen);
        }
    }
    if (trainable & kGroupHead) {
        const bool pen = (cfg.l2_groups & kGroupHead) != 0;
        for (std::size_t i = 0; i < p.head_weights.size(); ++i) update(p.head_weights[i], g.head_weights[i], pen);
        for (int t = 0; t < kNumTargets; ++t) {
            const auto zt = static_cast<std::size_t>(t);
            update(p.head_bias[zt], g.head_bias[zt], pen);
        }
    }
    if (trainable & kGroupBetaRes) {
        const bool pen = (cfg.l2_groups & kGroupBetaRes) != 0;
        for (std::size_t i = 0; i < p.beta_res.size(); ++i) update(p.beta_res[i], g.beta_res[i], pen);
    }
}

inline unsigned phase_trainable_groups(int phase) {
    switch (phase) {
        case 1: return kGroupHead;
        case 2: return kGroupBetaNum | kGroupBetaSem;
        case 3: return kGroupBetaRes;
        default: throw std::runtime_error("phase must be 1, 2 or 3");
    }
}

// Seeded Fisher-Yates; the shuffle schedule is part of the determinism
// contract, so it only depends on (seed, phase, epoch order).
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = rng() % i;
        std::swap(idx[i - 1], idx[j]);
    }
}

namespace detail {
struct EpochMetrics {
    double ce = 0.0, rmse = 0.0;
};

inline EpochMetrics epoch_metrics(const ModelParams& p, const Dataset& d,
                                  std::span<const std::size_t> idx, const RawCache* cache) {
    EpochMetrics m;
    if (idx.empty()) return m;
    m.ce = cross_entropy(p, d, idx, cache);
    if (d.has_labels()) m.rmse = semantic_rmse(p, d, idx, cache);
    return m;
}
}  // namespace detail

inline PhaseResult run_phase(ModelParams& params, const Dataset& d, const TrainConfig& cfg, int phase) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const unsigned trainable = phase_trainable_groups(phase);
    const double kappa = cfg.kappa[static_cast<std::size_t>(phase - 1)];
    if (kappa > 0.0)
        require(d.has_labels(), "phase " + std::to_string(phase) + " needs semantic labels (kappa > 0)");

    PhaseResult result;
    result.phase = phase;
    result.checksums_before = group_checksums(params);

    std::vector<std::size_t> train_idx = d.split_indices(true);
    if (train_idx.empty() && d.split.test_ids.empty()) train_idx = all_indices(d);
    require(!train_idx.empty(), "no training observations");
    std::vector<std::size_t> val_idx = d.split_indices(false);
    const bool has_val = !val_idx.empty();

    // Head outputs are constant in phases 2 and 3.
    RawCache cache;
    const RawCache* cache_ptr = nullptr;
    if (!(trainable & kGroupHead)) {
        cache.build(params, d.embeddings);
        cache_ptr = &cache;
    }

    std::mt19937_64 rng(cfg.rng_seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(phase));
    std::vector<std::size_t> order = train_idx;

    double best_val = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;
    double prev_train_ll = -std::numeric_limits<double>::infinity();

    const int max_epochs = cfg.max_epochs[static_cast<std::size_t>(phase - 1)];
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        shuffle_indices(order, rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t len = std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            std::span<const std::size_t> batch(order.data() + start, len);
            Gradient g = gradient(params, d, batch, kappa, trainable, cache_ptr);
            sgd_step(params, g, cfg, trainable);
        }
        ++result.epochs_run;

        auto train_m = detail::epoch_metrics(params, d, train_idx, cache_ptr);
        auto val_m = has_val ? detail::epoch_metrics(params, d, val_idx, cache_ptr) : train_m;
        result.train_ce = train_m.ce;
        result.train_rmse = train_m.rmse;
        result.val_ce = val_m.ce;
        result.val_rmse = val_m.rmse;
        params.history.push_back({phase, epoch, train_m.ce, train_m.rmse, val_m.ce, val_m.rmse});

        // Early stop on stagnating validation loss.
        double val_loss = (1.0 - kappa) * val_m.ce + kappa * val_m.rmse;
        if (val_loss < best_val - cfg.min_improvement) {
            best_val = val_loss;
            stale_epochs = 0;
        } else if (++stale_epochs >= cfg.patience) {
            break;
        }

        if (phase == 3) {
            // The residual phase must not degrade the choice fit it starts from.
            double train_ll = -train_m.ce * static_cast<double>(train_idx.size());
            if (train_ll < prev_train_ll - 1e-6) break;
            prev_train_ll = train_ll;
        }
    }

    result.checksums_after = group_checksums(params);
    for (int gidx = 0; gidx < 4; ++gidx) {
        const unsigned mask = 1u << gidx;
        if (!(trainable & mask)) {
            const auto zi = static_cast<std::size_t>(gidx);
            if (result.checksums_before[zi] != result.checksums_after[zi])
                throw std::runtime_error("frozen parameter group changed during phase " + std::to_string(phase));
        }
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

inline PhaseResult train_phase1(ModelParams& p, const Dataset& d, const TrainConfig& cfg) {
    return run_phase(p, d, cfg, 1);
}
inline PhaseResult train_phase2(ModelParams& p, const Dataset& d, const TrainConfig& cfg) {
    return run_phase(p, d, cfg, 2);
}
inline PhaseResult train_phase3(ModelParams& p, const Dataset& d, const TrainConfig& cfg) {
    return run_phase(p, d, cfg, 3);
}

struct SplitFit {
    std::size_t n = 0;
    double log_likelihood = 0.0;
    double rho_squared = 0.0;
    double cross_entropy = 0.0;
};

struct FitReport {
    SplitFit train;
    SplitFit test;
    bool has_test = false;
};

inline SplitFit fit_on(const ModelParams& p, const Dataset& d, std::span<const std::size_t> idx) {
    SplitFit f;
    f.n = idx.size();
    if (idx.empty()) return f;
    f.log_likelihood = log_likelihood(p, d, idx);
    f.cross_entropy = -f.log_likelihood / static_cast<double>(f.n);
    f.rho_squared = rho_squared(f.log_likelihood, f.n, kNumAlternatives);
    return f;
}

inline FitReport compute_fit_report(const ModelParams& p, const Dataset& d) {
    FitReport r;
    std::vector<std::size_t> train_idx = d.split_indices(true);
    if (train_idx.empty() && d.split.test_ids.empty()) train_idx = all_indices(d);
    std::vector<std::size_t> test_idx = d.split_indices(false);
    r.train = fit_on(p, d, train_idx);
    r.has_test = !test_idx.empty();
    if (r.has_test) r.test = fit_on(p, d, test_idx);
    return r;
}

// Plain-text summary in the usual train/test fit-table layout.
inline std::string fit_report_text(const FitReport& r) {
    auto row = [](const std::string& label, const SplitFit& f) {
        std::string s;
        s += label + " (N = " + std::to_string(f.n) + ")\n";
        s += "  Log-likelihood  " + fmt_double(f.log_likelihood, 8) + "\n";
        s += "  rho^2           " + fmt_double(f.rho_squared, 5) + "\n";
        s += "  Cross entropy   " + fmt_double(f.cross_entropy, 5) + "\n";
        return s;
    };
    std::string s = row("Train data", r.train);
    if (r.has_test) s += row("Test data", r.test);
    return s;
}

inline std::string fit_report_json(const FitReport& r) {
    auto obj = [](const SplitFit& f) {
        return std::string("{\"n\": ") + std::to_string(f.n) +
               ", \"log_likelihood\": " + fmt_double(f.log_likelihood) +
               ", \"rho_squared\": " + fmt_double(f.rho_squared) +
               ", \"cross_entropy\": " + fmt_double(f.cross_entropy) + "}";
    };
    std::string s = "{\n  \"train\": " + obj(r.train);
    if (r.has_test) s += ",\n  \"test\": " + obj(r.test);
    s += "\n}\n";
    return s;
}

struct TrainOutcome {
    ModelParams params;
    std::array<PhaseResult, 3> phases;
    FitReport fit;
};

// Seeded head initialisation: uniform(-0.01, 0.01) weights, zero bias.
// The residual coefficients start at zero so phase 2 estimates are taken
// before the residual path can absorb any semantic utility.
inline void init_params(ModelParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 17);
    std::uniform_real_distribution<double> u(-0.01, 0.01);
    for (double& w : p.head_weights) w = u(rng);
    p.head_bias.fill(0.0);
    std::fill(p.beta_res.begin(), p.beta_res.end(), 0.0);
    p.seed = seed;
}

inline TrainOutcome train_sequential(const Dataset& d, const TrainConfig& cfg) {
    cfg.validate();
    TrainOutcome out;
    out.params = ModelParams::zeros(d.embeddings.k());
    init_params(out.params, cfg.rng_seed);
    out.phases[0] = train_phase1(out.params, d, cfg);
    out.phases[1] = train_phase2(out.params, d, cfg);
    out.phases[2] = train_phase3(out.params, d, cfg);
    out.fit = compute_fit_report(out.params, d);
    return out;
}

}  // namespace cvdcm
