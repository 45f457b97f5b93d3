#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvdcm/common.hpp"
#include "cvdcm/semantics.hpp"

namespace cvdcm {

// Parameter groups, used for training-phase freeze masks and gradients.
enum ParamGroup : unsigned {
    kGroupHead = 1u,
    kGroupBetaNum = 2u,
    kGroupBetaSem = 4u,
    kGroupBetaRes = 8u,
    kGroupAll = 15u,
};

struct PhaseRecord {
    int phase = 0;
    int epoch = 0;
    double train_ce = 0.0;
    double train_rmse = 0.0;
    double val_ce = 0.0;
    double val_rmse = 0.0;
};

struct ModelParams {
    int k = 0;
    int m = kNumNumericAttrs;

    std::vector<double> beta_num;                       // M marginal utilities
    std::array<double, kNumAttributes> beta_sem{};      // attribute order of attribute_names()
    std::array<bool, kNumAttributes> fixed_sem{};       // true = frozen at current value
    std::vector<double> head_weights;                   // kNumTargets x K, row-major
    std::array<double, kNumTargets> head_bias{};
    std::vector<double> beta_res;                       // K
    std::array<double, kNumTargets> rmse_weights{};     // per-target weights in the RMSE loss

    int reference_class = kAttrBuilding;
    std::uint64_t seed = 0;
    std::vector<PhaseRecord> history;

    static ModelParams zeros(int k) {
        require(k > 0, "K must be positive");
        ModelParams p;
        p.k = k;
        p.beta_num.assign(kNumNumericAttrs, 0.0);
        p.head_weights.assign(static_cast<std::size_t>(kNumTargets) * static_cast<std::size_t>(k), 0.0);
        p.beta_res.assign(static_cast<std::size_t>(k), 0.0);
        p.rmse_weights.fill(1.0);
        p.fixed_sem[kAttrBuilding] = true;  // reference class pinned at 0
        return p;
    }

    double head_weight(int target, int j) const {
        return head_weights[static_cast<std::size_t>(target) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
    }
    double& head_weight(int target, int j) {
        return head_weights[static_cast<std::size_t>(target) * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
    }

    // Exactly one proportion coefficient must be fixed at zero; which one is
    // configurable but building is the default.
    void set_reference_class(int attr) {
        require(attr >= 1 && attr <= kNumAttributes - 1 && attr != kAttrCarCount,
                "reference class must be a proportion attribute");
        fixed_sem[static_cast<std::size_t>(reference_class)] = false;
        reference_class = attr;
        beta_sem[static_cast<std::size_t>(attr)] = 0.0;
        fixed_sem[static_cast<std::size_t>(attr)] = true;
    }

    void validate() const {
        require(k > 0, "K must be positive");
        require(static_cast<int>(beta_num.size()) == m, "beta_num size mismatch");
        require(static_cast<int>(beta_res.size()) == k, "beta_res size mismatch");
        require(head_weights.size() == static_cast<std::size_t>(kNumTargets) * static_cast<std::size_t>(k),
                "head_weights size mismatch");
        require(fixed_sem[static_cast<std::size_t>(reference_class)], "reference class must be fixed");
        require(beta_sem[static_cast<std::size_t>(reference_class)] == 0.0, "reference class coefficient must be 0");
        require(all_finite(beta_num.data(), beta_num.size()) &&
                    all_finite(beta_sem.data(), beta_sem.size()) &&
                    all_finite(head_weights.data(), head_weights.size()) &&
                    all_finite(head_bias.data(), head_bias.size()) &&
                    all_finite(beta_res.data(), beta_res.size()),
                "non-finite parameter value");
    }

    std::uint64_t checksum(unsigned group) const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](const double* p, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) h = fnv1a_bytes(&p[i], sizeof(double), h);
        };
        if (group & kGroupHead) {
            mix(head_weights.data(), head_weights.size());
            mix(head_bias.data(), head_bias.size());
        }
        if (group & kGroupBetaNum) mix(beta_num.data(), beta_num.size());
        if (group & kGroupBetaSem) mix(beta_sem.data(), beta_sem.size());
        if (group & kGroupBetaRes) mix(beta_res.data(), beta_res.size());
        return h;
    }
};

namespace detail {
inline void json_array(std::string& out, const double* p, std::size_t n) {
    out += '[';
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ',';
        out += fmt_double(p[i]);
    }
    out += ']';
}
}  // namespace detail

// model.json is written by hand so floats carry 17 significant digits and
// the byte layout is deterministic.
inline std::string model_to_json(const ModelParams& p) {
    std::string s;
    s += "{\n";
    s += "  \"k\": " + std::to_string(p.k) + ",\n";
    s += "  \"m\": " + std::to_string(p.m) + ",\n";
    s += "  \"t\": " + std::to_string(kNumAttributes) + ",\n";
    s += "  \"reference_class\": \"" + attribute_names()[static_cast<std::size_t>(p.reference_class)] + "\",\n";
    s += "  \"seed\": " + std::to_string(p.seed) + ",\n";
    s += "  \"beta_num\": ";
    detail::json_array(s, p.beta_num.data(), p.beta_num.size());
    s += ",\n  \"beta_sem\": ";
    detail::json_array(s, p.beta_sem.data(), p.beta_sem.size());
    s += ",\n  \"fixed_mask_sem\": [";
    for (int t = 0; t < kNumAttributes; ++t) {
        if (t) s += ',';
        s += p.fixed_sem[static_cast<std::size_t>(t)] ? "true" : "false";
    }
    s += "],\n  \"head_weights\": ";
    detail::json_array(s, p.head_weights.data(), p.head_weights.size());
    s += ",\n  \"head_bias\": ";
    detail::json_array(s, p.head_bias.data(), p.head_bias.size());
    s += ",\n  \"beta_res\": ";
    detail::json_array(s, p.beta_res.data(), p.beta_res.size());
    s += ",\n  \"rmse_weights\": ";
    detail::json_array(s, p.rmse_weights.data(), p.rmse_weights.size());
    s += ",\n  \"history\": [";
    for (std::size_t i = 0; i < p.history.size(); ++i) {
        const PhaseRecord& r = p.history[i];
        if (i) s += ',';
        s += "\n    {\"phase\": " + std::to_string(r.phase) + ", \"epoch\": " + std::to_string(r.epoch);
        s += ", \"train_ce\": " + fmt_double(r.train_ce) + ", \"train_rmse\": " + fmt_double(r.train_rmse);
        s += ", \"val_ce\": " + fmt_double(r.val_ce) + ", \"val_rmse\": " + fmt_double(r.val_rmse) + "}";
    }
    if (!p.history.empty()) s += "\n  ";
    s += "]\n}\n";
    return s;
}

inline void save_model(const std::string& path, const ModelParams& p) {
    p.validate();
    csv::write_file(path, model_to_json(p));
}

inline ModelParams load_model(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open model " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed model " + path + ": " + e.what());
    }
    ModelParams p = ModelParams::zeros(j.at("k").get<int>());
    p.m = j.at("m").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.beta_num = j.at("beta_num").get<std::vector<double>>();
    auto sem = j.at("beta_sem").get<std::vector<double>>();
    auto mask = j.at("fixed_mask_sem").get<std::vector<bool>>();
    require(sem.size() == kNumAttributes && mask.size() == kNumAttributes, "beta_sem size mismatch in " + path);
    for (int t = 0; t < kNumAttributes; ++t) {
        p.beta_sem[static_cast<std::size_t>(t)] = sem[static_cast<std::size_t>(t)];
        p.fixed_sem[static_cast<std::size_t>(t)] = mask[static_cast<std::size_t>(t)];
    }
    const std::string ref = j.at("reference_class").get<std::string>();
    bool found = false;
    for (int t = 0; t < kNumAttributes; ++t) {
        if (attribute_names()[static_cast<std::size_t>(t)] == ref) {
            p.reference_class = t;
            found = true;
        }
    }
    require(found, "unknown reference_class '" + ref + "' in " + path);
    p.head_weights = j.at("head_weights").get<std::vector<double>>();
    auto bias = j.at("head_bias").get<std::vector<double>>();
    auto weights = j.at("rmse_weights").get<std::vector<double>>();
    require(bias.size() == kNumTargets && weights.size() == kNumTargets, "head_bias size mismatch in " + path);
    for (int t = 0; t < kNumTargets; ++t) {
        p.head_bias[static_cast<std::size_t>(t)] = bias[static_cast<std::size_t>(t)];
        p.rmse_weights[static_cast<std::size_t>(t)] = weights[static_cast<std::size_t>(t)];
    }
    p.beta_res = j.at("beta_res").get<std::vector<double>>();
    for (const auto& h : j.value("history", nlohmann::json::array())) {
        PhaseRecord r;
        r.phase = h.at("phase").get<int>();
        r.epoch = h.at("epoch").get<int>();
        r.train_ce = h.at("train_ce").get<double>();
        r.train_rmse = h.at("train_rmse").get<double>();
        r.val_ce = h.at("val_ce").get<double>();
        r.val_rmse = h.at("val_rmse").get<double>();
        p.history.push_back(r);
    }
    p.validate();
    return p;
}

}  // namespace cvdcm
