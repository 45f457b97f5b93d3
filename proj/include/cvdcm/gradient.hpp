#pragma once

#include <array>
#include <span>
#include <vector>

#include "cvdcm/model.hpp"

namespace cvdcm {

// Gradient of the combined loss, same shapes as the trainable parameters.
// Frozen groups and fixed beta_sem entries hold exact zeros.
struct Gradient {
    std::vector<double> beta_num;
    std::array<double, kNumAttributes> beta_sem{};
    std::vector<double> head_weights;
    std::array<double, kNumTargets> head_bias{};
    std::vector<double> beta_res;

    static Gradient zeros(const ModelParams& p) {
        Gradient g;
        g.beta_num.assign(p.beta_num.size(), 0.0);
        g.head_weights.assign(p.head_weights.size(), 0.0);
        g.beta_res.assign(p.beta_res.size(), 0.0);
        return g;
    }

    void check_finite() const {
        bool ok = all_finite(beta_num.data(), beta_num.size()) &&
                  all_finite(beta_sem.data(), beta_sem.size()) &&
                  all_finite(head_weights.data(), head_weights.size()) &&
                  all_finite(head_bias.data(), head_bias.size()) &&
                  all_finite(beta_res.data(), beta_res.size());
        if (!ok) throw std::runtime_error("non-finite gradient");
    }
};

// Analytic gradient of combined_loss over a batch. The cross-entropy part
// uses the standard (P - y) residual composed with the linear utility
// features; the head couples in through the semantic term, where the
// derived unsegmented remainder contributes -beta_unsegmented per
// proportion target. The RMSE part is the chain rule through sqrt.
inline Gradient gradient(const ModelParams& p, const Dataset& d,
                         std::span<const std::size_t> batch, double kappa,
                         unsigned trainable, const RawCache* cache = nullptr) {
    require(!batch.empty(), "gradient needs a non-empty batch");
    require(kappa >= 0.0 && kappa <= 1.0, "kappa must be in [0,1]");
    Gradient g = Gradient::zeros(p);
    const double n = static_cast<double>(batch.size());
    const int K = p.k;

    if (kappa < 1.0) {
        const double ce_w = (1.0 - kappa) / n;
        std::array<double, kNumAlternatives> v{}, probs{};
        for (std::size_t i : batch) {
            const ChoiceObservation& obs = d.observations[i];
            std::array<std::array<double, kNumAttributes>, kNumAlternatives> attrs;
            for (int a = 0; a < kNumAlternatives; ++a) {
                const auto za = static_cast<std::size_t>(a);
                std::size_t row = d.alt_rows[i][za];
                attrs[za] = raw_to_attributes(raw_targets_at(p, d.embeddings, row, cache));
                const float* z = d.embeddings.row_ptr(row);
                v[za] = systematic_utility(p, obs.alternatives[za].numeric_attrs, attrs[za], z).v_total;
            }
            choice_probabilities(v, probs);
            for (int a = 0; a < kNumAlternatives; ++a) {
                const auto za = static_cast<std::size_t>(a);
                const double r = ce_w * (probs[za] - (obs.chosen == a ? 1.0 : 0.0));
                if (r == 0.0) continue;
                const float* z = d.embeddings.row_ptr(d.alt_rows[i][za]);
                if (trainable & kGroupBetaNum)
                    for (int mi = 0; mi < p.m; ++mi)
                        g.beta_num[static_cast<std::size_t>(mi)] += r * obs.alternatives[za].numeric_attrs[static_cast<std::size_t>(mi)];
                if (trainable & kGroupBetaSem)
                    for (int t = 0; t < kNumAttributes; ++t)
                        if (!p.fixed_sem[static_cast<std::size_t>(t)])
                            g.beta_sem[static_cast<std::size_t>(t)] += r * attrs[za][static_cast<std::size_t>(t)];
                if (trainable & kGroupBetaRes)
                    for (int j = 0; j < K; ++j)
                        g.beta_res[static_cast<std::size_t>(j)] += r * static_cast<double>(z[j]);
                if (trainable & kGroupHead) {
                    const double b_unseg = p.beta_sem[kAttrUnsegmented];
                    for (int t = 0; t < kNumTargets; ++t) {
                        const double dv_dtarget =
                            t == kAttrCarCount ? p.beta_sem[0]
                                               : p.beta_sem[static_cast<std::size_t>(t)] - b_unseg;
                        const double c = r * dv_dtarget;
                        if (c == 0.0) continue;
                        double* gw = g.head_weights.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(K);
                        for (int j = 0; j < K; ++j) gw[j] += c * static_cast<double>(z[j]);
                        g.head_bias[static_cast<std::size_t>(t)] += c;
                    }
                }
            }
        }
    }

    if (kappa > 0.0 && (trainable & kGroupHead)) {
        // d sqrt(Q)/dw = dQ/dw / (2 sqrt(Q)); accumulate dQ/dw first.
        std::vector<double> dq_w(p.head_weights.size(), 0.0);
        std::array<double, kNumTargets> dq_b{};
        const double denom = n * kNumAlternatives * kNumTargets;
        double q = 0.0;
        for (std::size_t i : batch) {
            const ChoiceObservation& obs = d.observations[i];
            for (int a = 0; a < kNumAlternatives; ++a) {
                const auto za = static_cast<std::size_t>(a);
                auto it = d.labels.find(obs.alternatives[za].image_id);
                require(it != d.labels.end(), "missing label for image '" + obs.alternatives[za].image_id + "'");
                std::size_t row = d.alt_rows[i][za];
                auto raw = raw_targets_at(p, d.embeddings, row, cache);
                auto truth = it->second.targets();
                const float* z = d.embeddings.row_ptr(row);
                for (int t = 0; t < kNumTargets; ++t) {
                    const double diff = raw[static_cast<std::size_t>(t)] - truth[static_cast<std::size_t>(t)];
                    const double wt = p.rmse_weights[static_cast<std::size_t>(t)];
                    q += wt * diff * diff;
                    const double c = 2.0 * wt * diff / denom;
                    double* gw = dq_w.data() + static_cast<std::size_t>(t) * static_cast<std::size_t>(K);
                    for (int j = 0; j < K; ++j) gw[j] += c * static_cast<double>(z[j]);
                    dq_b[static_cast<std::size_t>(t)] += c;
                }
            }
        }
        q /= denom;
        if (q > 0.0) {
            const double scale = kappa / (2.0 * std::sqrt(q));
            for (std::size_t j = 0; j < dq_w.size(); ++j) g.head_weights[j] += scale * dq_w[j];
            for (int t = 0; t < kNumTargets; ++t) g.head_bias[static_cast<std::size_t>(t)] += scale * dq_b[static_cast<std::size_t>(t)];
        }
    }

    g.check_finite();
    return g;
}

}  // namespace cvdcm
