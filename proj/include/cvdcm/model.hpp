#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "cvdcm/dataset.hpp"
#include "cvdcm/params.hpp"

namespace cvdcm {

// Floor on log-probabilities so degenerate fixtures cannot produce -inf.
inline constexpr double kLogProbFloor = -745.0;

// Raw affine head outputs: car_count followed by the 9 class proportions.
// No clamping; this is what the RMSE loss and the utility evaluation see.
inline std::array<double, kNumTargets> predict_raw_targets(const ModelParams& p, const float* z) {
    std::array<double, kNumTargets> out{};
    const double* w = p.head_weights.data();
    for (int t = 0; t < kNumTargets; ++t) {
        double acc = p.head_bias[static_cast<std::size_t>(t)];
        const double* wt = w + static_cast<std::size_t>(t) * static_cast<std::size_t>(p.k);
        for (int j = 0; j < p.k; ++j) acc += wt[j] * static_cast<double>(z[j]);
        out[static_cast<std::size_t>(t)] = acc;
    }
    return out;
}

// Full T=11 attribute vector with the unsegmented remainder derived
// linearly. The 10 proportions sum to 1 by construction, which is what
// makes the reference-class normalisation necessary.
inline std::array<double, kNumAttributes> raw_to_attributes(const std::array<double, kNumTargets>& raw) {
    std::array<double, kNumAttributes> s{};
    double prop_sum = 0.0;
    s[0] = raw[0];
    for (int i = 1; i < kNumTargets; ++i) {
        s[static_cast<std::size_t>(i)] = raw[static_cast<std::size_t>(i)];
        prop_sum += raw[static_cast<std::size_t>(i)];
    }
    s[kAttrUnsegmented] = 1.0 - prop_sum;
    return s;
}

// Reported/scored semantics: clamped to their domains and, if the clamped
// proportions overflow the simplex, renormalised to sum 1.
inline SemanticVector predict_semantics(const ModelParams& p, const float* z, int z_len) {
    require(z_len == p.k, "embedding length " + std::to_string(z_len) + " != K=" + std::to_string(p.k));
    auto raw = predict_raw_targets(p, z);
    SemanticVector s;
    s.car_count = std::max(0.0, raw[0]);
    double sum = 0.0;
    for (int i = 0; i < kNumProportions; ++i) {
        double v = std::clamp(raw[static_cast<std::size_t>(i + 1)], 0.0, 1.0);
        s.proportions[static_cast<std::size_t>(i)] = v;
        sum += v;
    }
    s.unsegmented = std::clamp(1.0 - sum, 0.0, 1.0);
    double total = sum + s.unsegmented;
    if (total > 1.0) {
        for (double& v : s.proportions) v /= total;
        s.unsegmented /= total;
    }
    return s;
}

struct UtilityBreakdown {
    double v_numeric = 0.0;
    double v_semantic = 0.0;
    std::array<double, kNumAttributes> per_attribute{};
    double v_residual = 0.0;
    double v_total = 0.0;
};

inline UtilityBreakdown systematic_utility(const ModelParams& p,
                                           std::span<const double> numeric_attrs,
                                           const std::array<double, kNumAttributes>& semantics,
                                           const float* z,
                                           bool include_numeric = true,
                                           bool include_residual = true) {
    UtilityBreakdown u;
    if (include_numeric) {
        require(static_cast<int>(numeric_attrs.size()) == p.m, "numeric attribute dimension mismatch");
        for (int i = 0; i < p.m; ++i) {
            require(std::isfinite(numeric_attrs[static_cast<std::size_t>(i)]), "non-finite numeric attribute");
            u.v_numeric += p.beta_num[static_cast<std::size_t>(i)] * numeric_attrs[static_cast<std::size_t>(i)];
        }
    }
    for (int t = 0; t < kNumAttributes; ++t) {
        require(std::isfinite(semantics[static_cast<std::size_t>(t)]), "non-finite semantic attribute");
        u.per_attribute[static_cast<std::size_t>(t)] = p.beta_sem[static_cast<std::size_t>(t)] * semantics[static_cast<std::size_t>(t)];
        u.v_semantic += u.per_attribute[static_cast<std::size_t>(t)];
    }
    if (include_residual) {
        for (int j = 0; j < p.k; ++j) u.v_residual += p.beta_res[static_cast<std::size_t>(j)] * static_cast<double>(z[j]);
    }
    u.v_total = u.v_numeric + u.v_semantic + u.v_residual;
    return u;
}

inline UtilityBreakdown systematic_utility(const ModelParams& p,
                                           std::span<const double> numeric_attrs,
                                           const SemanticVector& semantics, const float* z,
                                           bool include_numeric = true, bool include_residual = true) {
    return systematic_utility(p, numeric_attrs, semantics.as_array(), z, include_numeric, include_residual);
}

// Softmax with max-subtraction; translation invariant and overflow safe.
inline void choice_probabilities(std::span<const double> v, std::span<double> out) {
    require(v.size() >= 2 && v.size() == out.size(), "need at least 2 alternatives");
    double vmax = v[0];
    for (double x : v) {
        require(std::isfinite(x), "non-finite utility");
        vmax = std::max(vmax, x);
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - vmax);
        denom += out[i];
    }
    for (std::size_t i = 0; i < v.size(); ++i) out[i] /= denom;
}

inline std::vector<double> choice_probabilities(std::span<const double> v) {
    std::vector<double> out(v.size());
    choice_probabilities(v, out);
    return out;
}

// Cached raw head outputs per embedding row; valid only while the head is
// frozen. Lets phases 2 and 3 skip the affine map in the epoch loop.
struct RawCache {
    std::vector<std::array<double, kNumTargets>> raw;

    void build(const ModelParams& p, const EmbeddingStore& store) {
        raw.resize(store.rows());
        for (std::size_t r = 0; r < store.rows(); ++r)
            raw[r] = predict_raw_targets(p, store.row_ptr(r));
    }
};

inline std::array<double, kNumTargets> raw_targets_at(const ModelParams& p, const EmbeddingStore& store,
                                                      std::size_t row, const RawCache* cache) {
    return cache ? cache->raw[row] : predict_raw_targets(p, store.row_ptr(row));
}

// Systematic utilities of one observation's alternatives, evaluated with
// the model's own (pre-clamp) semantic predictions.
inline std::array<double, kNumAlternatives> observation_utilities(const ModelParams& p,
                                                                  const Dataset& d,
                                                                  std::size_t obs_index,
                                                                  const RawCache* cache = nullptr) {
    const ChoiceObservation& obs = d.observations[obs_index];
    std::array<double, kNumAlternatives> v{};
    for (int a = 0; a < kNumAlternatives; ++a) {
        const auto za = static_cast<std::size_t>(a);
        std::size_t row = d.alt_rows[obs_index][za];
        const float* z = d.embeddings.row_ptr(row);
        auto s = raw_to_attributes(raw_targets_at(p, d.embeddings, row, cache));
        v[za] = systematic_utility(p, obs.alternatives[za].numeric_attrs, s, z).v_total;
    }
    return v;
}

inline double log_likelihood(const ModelParams& p, const Dataset& d,
                             std::span<const std::size_t> indices,
                             const RawCache* cache = nullptr) {
    double ll = 0.0;
    std::array<double, kNumAlternatives> probs{};
    for (std::size_t i : indices) {
        auto v = observation_utilities(p, d, i, cache);
        choice_probabilities(v, probs);
        double lp = std::log(probs[static_cast<std::size_t>(d.observations[i].chosen)]);
        ll += std::max(lp, kLogProbFloor);
    }
    return ll;
}

inline double cross_entropy(const ModelParams& p, const Dataset& d,
                            std::span<const std::size_t> indices,
                            const RawCache* cache = nullptr) {
    require(!indices.empty(), "cross_entropy needs at least one observation");
    return -log_likelihood(p, d, indices, cache) / static_cast<double>(indices.size());
}

// McFadden's rho-squared against the equal-shares null.
inline double rho_squared(double ll, std::size_t n, int j) {
    require(n > 0 && j >= 2, "rho_squared needs n>0 and j>=2");
    require(ll <= 0.0, "log-likelihood must be non-positive");
    return 1.0 - ll / (static_cast<double>(n) * std::log(1.0 / static_cast<double>(j)));
}

// RMSE of the raw head outputs against ground-truth labels over the S=10
// predicted targets, per-target weighted.
inline double semantic_rmse(const ModelParams& p, const Dataset& d,
                            std::span<const std::size_t> indices,
                            const RawCache* cache = nullptr) {
    require(!indices.empty(), "semantic_rmse needs at least one observation");
    double sq = 0.0;
    for (std::size_t i : indices) {
        const ChoiceObservation& obs = d.observations[i];
        for (int a = 0; a < kNumAlternatives; ++a) {
            const auto za = static_cast<std::size_t>(a);
            auto it = d.labels.find(obs.alternatives[za].image_id);
            require(it != d.labels.end(), "missing label for image '" + obs.alternatives[za].image_id + "'");
            auto raw = raw_targets_at(p, d.embeddings, d.alt_rows[i][za], cache);
            auto truth = it->second.targets();
            for (int t = 0; t < kNumTargets; ++t) {
                double diff = truth[static_cast<std::size_t>(t)] - raw[static_cast<std::size_t>(t)];
                sq += p.rmse_weights[static_cast<std::size_t>(t)] * diff * diff;
            }
        }
    }
    double denom = static_cast<double>(indices.size()) * kNumAlternatives * kNumTargets;
    return std::sqrt(sq / denom);
}

inline double combined_loss(const ModelParams& p, const Dataset& d,
                            std::span<const std::size_t> indices, double kappa,
                            const RawCache* cache = nullptr) {
    require(kappa >= 0.0 && kappa <= 1.0, "kappa must be in [0,1]");
    double loss = 0.0;
    if (kappa < 1.0) loss += (1.0 - kappa) * cross_entropy(p, d, indices, cache);
    if (kappa > 0.0) loss += kappa * semantic_rmse(p, d, indices, cache);
    return loss;
}

inline std::vector<std::size_t> all_indices(const Dataset& d) {
    std::vector<std::size_t> idx(d.observations.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

}  // namespace cvdcm
