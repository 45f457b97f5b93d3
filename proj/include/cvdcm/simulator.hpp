#pragma once

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cvdcm/dataset.hpp"
#include "cvdcm/model.hpp"
#include "cvdcm/trainer.hpp"

namespace cvdcm {

// Ground-truth generator configuration. Defaults reproduce a realistic
// regime: the published coefficient magnitudes, Dirichlet class mixes and a
// Poisson car count.
struct SyntheticSpec {
    std::array<double, kNumNumericAttrs> beta_num_true = {-0.94, -0.24};
    std::array<double, kNumAttributes> beta_sem_true = {
        -0.25,  // car_count
        -0.59,  // p_car
        0.00,   // p_building (reference)
        0.96,   // p_grass
        -0.59,  // p_road
        1.42,   // p_sky
        1.40,   // p_trees
        1.05,   // p_plants
        -0.81,  // p_fence
        0.13,   // p_water
        -0.25,  // unsegmented
    };
    std::size_t n_observations = 1000;
    std::size_t n_images = 0;  // 0 -> n_observations, at least 4
    int k = 16;
    double dirichlet_alpha = 2.0;
    // Total segmented pixel share per image; unsegmented is the remainder.
    double coverage_min = 0.85;
    double coverage_max = 0.85;
    double poisson_mean = 3.0;
    double sigma_z = 0.0;
    std::array<double, kNumNumericAttrs> attr_low = {-1.0, -1.0};
    std::array<double, kNumNumericAttrs> attr_high = {1.0, 1.0};
    int n_zones = 0;
    double test_fraction = 0.2;
    std::uint64_t rng_seed = 0;

    enum class ChoiceMode { logit_sampling, gumbel_argmax };
    ChoiceMode choice_mode = ChoiceMode::logit_sampling;

    void validate() const {
        require(n_observations > 0, "n_observations must be positive");
        require(k >= 1, "K must be positive");
        require(dirichlet_alpha > 0.0, "dirichlet_alpha must be positive");
        require(coverage_min > 0.0 && coverage_max <= 1.0 && coverage_min <= coverage_max,
                "coverage range must satisfy 0 < min <= max <= 1");
        require(poisson_mean >= 0.0, "poisson_mean must be >= 0");
        require(sigma_z >= 0.0, "sigma_z must be >= 0");
        require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction must be in [0,1)");
        require(beta_sem_true[kAttrBuilding] == 0.0, "reference-class coefficient must be 0");
    }

    std::size_t image_count() const {
        std::size_t n = n_images ? n_images : n_observations;
        return std::max<std::size_t>(n, 4);
    }
};

inline std::string synthetic_image_id(std::size_t i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "img%07zu", i);
    return buf;
}

// 9 proportions ~ Dirichlet(alpha) scaled to a sampled coverage; the
// unsegmented remainder falls out of the simplex derivation.
inline LabelStore simulate_semantics(const SyntheticSpec& spec, std::size_t n_images,
                                     std::vector<std::string>* ids_out = nullptr) {
    spec.validate();
    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 101);
    std::gamma_distribution<double> gamma(spec.dirichlet_alpha, 1.0);
    std::uniform_real_distribution<double> coverage(spec.coverage_min, spec.coverage_max);
    std::poisson_distribution<int> poisson(spec.poisson_mean > 0.0 ? spec.poisson_mean : 1.0);

    LabelStore labels;
    for (std::size_t i = 0; i < n_images; ++i) {
        std::array<double, kNumProportions> g{};
        double sum = 0.0;
        for (double& x : g) {
            x = gamma(rng);
            sum += x;
        }
        const double cov = coverage(rng);
        for (double& x : g) x = sum > 0.0 ? x / sum * cov : cov / kNumProportions;
        const double cars = spec.poisson_mean > 0.0 ? static_cast<double>(poisson(rng)) : 0.0;
        std::string id = synthetic_image_id(i);
        labels[id] = make_semantic_vector(cars, g, "synthetic image " + id);
        if (ids_out) ids_out->push_back(id);
    }
    return labels;
}

// Seeded target-to-embedding mixing matrix, kNumTargets x K row-major.
inline std::vector<double> mixing_matrix(const SyntheticSpec& spec) {
    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 211);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> a(static_cast<std::size_t>(kNumTargets) * static_cast<std::size_t>(spec.k));
    for (double& x : a) x = n01(rng);
    return a;
}

// Row rank of the mixing matrix via modified Gram-Schmidt.
inline int mixing_rank(const std::vector<double>& a, int k) {
    std::vector<std::vector<double>> basis;
    for (int t = 0; t < kNumTargets; ++t) {
        std::vector<double> v(a.begin() + static_cast<std::ptrdiff_t>(t) * k,
                              a.begin() + static_cast<std::ptrdiff_t>(t + 1) * k);
        for (const auto& b : basis) {
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += v[static_cast<std::size_t>(j)] * b[static_cast<std::size_t>(j)];
            for (int j = 0; j < k; ++j) v[static_cast<std::size_t>(j)] -= dot * b[static_cast<std::size_t>(j)];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-9) {
            for (double& x : v) x /= norm;
            basis.push_back(std::move(v));
        }
    }
    return static_cast<int>(basis.size());
}

// z = A^T * targets + Gaussian noise. With sigma_z = 0 and a full-row-rank
// A the semantics are exactly linearly decodable, which is what gives
// phase 1 a recoverable optimum.
inline EmbeddingStore simulate_embeddings(const SyntheticSpec& spec, const LabelStore& labels,
                                          const std::vector<double>* mixing = nullptr) {
    spec.validate();
    std::vector<double> a_local;
    if (!mixing) {
        a_local = mixing_matrix(spec);
        mixing = &a_local;
    }
    require(mixing->size() == static_cast<std::size_t>(kNumTargets) * static_cast<std::size_t>(spec.k),
            "mixing matrix shape mismatch");
    if (spec.sigma_z == 0.0)
        require(mixing_rank(*mixing, spec.k) == kNumTargets,
                "rank-deficient mixing matrix with sigma_z = 0: semantics are not decodable");

    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 307);
    std::normal_distribution<double> noise(0.0, 1.0);
    EmbeddingStore store(spec.k, labels.size());
    std::vector<float> z(static_cast<std::size_t>(spec.k));
    for (const auto& [id, sem] : labels) {
        auto targets = sem.targets();
        for (int j = 0; j < spec.k; ++j) {
            double acc = 0.0;
            for (int t = 0; t < kNumTargets; ++t)
                acc += (*mixing)[static_cast<std::size_t>(t) * static_cast<std::size_t>(spec.k) + static_cast<std::size_t>(j)] *
                       targets[static_cast<std::size_t>(t)];
            if (spec.sigma_z > 0.0) acc += spec.sigma_z * noise(rng);
            z[static_cast<std::size_t>(j)] = static_cast<float>(acc);
        }
        store.add(id, z);
    }
    return store;
}

inline double true_utility(const SyntheticSpec& spec, const SemanticVector& sem,
                           const std::array<double, kNumNumericAttrs>& x) {
    double v = 0.0;
    for (int mi = 0; mi < kNumNumericAttrs; ++mi)
        v += spec.beta_num_true[static_cast<std::size_t>(mi)] * x[static_cast<std::size_t>(mi)];
    auto s = sem.as_array();
    for (int t = 0; t < kNumAttributes; ++t)
        v += spec.beta_sem_true[static_cast<std::size_t>(t)] * s[static_cast<std::size_t>(t)];
    return v;
}

// Random-utility sampling. Both modes draw from the same choice
// distribution: logit-probability sampling uses the closed form, the
// Gumbel mode adds EV-I errors and takes the argmax.
inline std::vector<ChoiceObservation> simulate_choices(const SyntheticSpec& spec,
                                                       const std::vector<std::string>& image_ids,
                                                       const LabelStore& labels,
                                                       std::size_t n_obs, std::uint64_t stream,
                                                       std::size_t first_obs_index = 0) {
    require(image_ids.size() >= 2, "need at least 2 images to form choice tasks");
    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 401 + stream);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    std::vector<ChoiceObservation> out;
    out.reserve(n_obs);
    for (std::size_t n = 0; n < n_obs; ++n) {
        ChoiceObservation obs;
        char buf[24];
        std::snprintf(buf, sizeof(buf), "obs%08zu", first_obs_index + n);
        obs.obs_id = buf;
        std::snprintf(buf, sizeof(buf), "resp%06zu", (first_obs_index + n) / 15);
        obs.respondent_id = buf;

        std::size_t i0 = rng() % image_ids.size();
        std::size_t i1 = rng() % (image_ids.size() - 1);
        if (i1 >= i0) ++i1;
        const std::array<std::size_t, 2> img = {i0, i1};

        std::array<double, kNumAlternatives> v{};
        for (int a = 0; a < kNumAlternatives; ++a) {
            const auto za = static_cast<std::size_t>(a);
            Alternative& alt = obs.alternatives[za];
            alt.image_id = image_ids[img[za]];
            for (int mi = 0; mi < kNumNumericAttrs; ++mi) {
                const auto zm = static_cast<std::size_t>(mi);
                alt.numeric_attrs[zm] = spec.attr_low[zm] + (spec.attr_high[zm] - spec.attr_low[zm]) * u01(rng);
            }
            v[za] = true_utility(spec, labels.at(alt.image_id), alt.numeric_attrs);
        }

        if (spec.choice_mode == SyntheticSpec::ChoiceMode::gumbel_argmax) {
            std::array<double, kNumAlternatives> total = v;
            for (double& t : total) t += -std::log(-std::log(u01(rng)));
            obs.chosen = total[1] > total[0] ? 1 : 0;
        } else {
            auto probs = choice_probabilities(v);
            obs.chosen = u01(rng) < probs[0] ? 0 : 1;
        }
        out.push_back(std::move(obs));
    }
    return out;
}

inline ZoneMap simulate_zones(const SyntheticSpec& spec, const std::vector<std::string>& image_ids) {
    ZoneMap zones;
    if (spec.n_zones <= 0) return zones;
    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 503);
    for (const auto& id : image_ids) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "Z%04zu", static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(spec.n_zones)));
        zones[id] = {buf, std::nullopt, std::nullopt};
    }
    return zones;
}

struct SyntheticData {
    Dataset dataset;
    std::vector<std::string> image_ids;
};

// Full pipeline: images -> labels -> embeddings -> image-disjoint split ->
// choices drawn within each image pool so train and test never share
// imagery.
inline SyntheticData simulate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;
    out.dataset.labels = simulate_semantics(spec, spec.image_count(), &out.image_ids);
    out.dataset.embeddings = simulate_embeddings(spec, out.dataset.labels);
    out.dataset.zones = simulate_zones(spec, out.image_ids);

    std::vector<std::string> shuffled = out.image_ids;
    std::mt19937_64 rng(spec.rng_seed * 0x9e3779b97f4a7c15ull + 601);
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng() % i]);
    auto n_test_imgs = static_cast<std::size_t>(spec.test_fraction * static_cast<double>(shuffled.size()));
    if (spec.test_fraction > 0.0 && n_test_imgs < 2) n_test_imgs = 2;
    std::vector<std::string> test_imgs(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_test_imgs));
    std::vector<std::string> train_imgs(shuffled.begin() + static_cast<std::ptrdiff_t>(n_test_imgs), shuffled.end());

    auto n_test_obs = static_cast<std::size_t>(spec.test_fraction * static_cast<double>(spec.n_observations));
    auto n_train_obs = spec.n_observations - n_test_obs;
    auto train_obs = simulate_choices(spec, train_imgs, out.dataset.labels, n_train_obs, 0, 0);
    auto test_obs = n_test_obs
                        ? simulate_choices(spec, test_imgs, out.dataset.labels, n_test_obs, 1, n_train_obs)
                        : std::vector<ChoiceObservation>{};

    for (auto& obs : train_obs) {
        out.dataset.split.train_ids.insert(obs.obs_id);
        out.dataset.observations.push_back(std::move(obs));
    }
    for (auto& obs : test_obs) {
        out.dataset.split.test_ids.insert(obs.obs_id);
        out.dataset.observations.push_back(std::move(obs));
    }
    out.dataset.split.validate(out.dataset.observations);
    out.dataset.bind();
    return out;
}

inline void write_truth(const std::string& path, const SyntheticSpec& spec) {
    std::string s = "{\n  \"beta_num\": ";
    detail::json_array(s, spec.beta_num_true.data(), spec.beta_num_true.size());
    s += ",\n  \"beta_sem\": ";
    detail::json_array(s, spec.beta_sem_true.data(), spec.beta_sem_true.size());
    s += ",\n  \"n_observations\": " + std::to_string(spec.n_observations);
    s += ",\n  \"k\": " + std::to_string(spec.k);
    s += ",\n  \"sigma_z\": " + fmt_double(spec.sigma_z);
    s += ",\n  \"dirichlet_alpha\": " + fmt_double(spec.dirichlet_alpha);
    s += ",\n  \"coverage_min\": " + fmt_double(spec.coverage_min);
    s += ",\n  \"coverage_max\": " + fmt_double(spec.coverage_max);
    s += ",\n  \"poisson_mean\": " + fmt_double(spec.poisson_mean);
    s += ",\n  \"seed\": " + std::to_string(spec.rng_seed);
    s += "\n}\n";
    csv::write_file(path, s);
}

// Writes the dataset in the standard on-disk formats plus manifest and
// ground-truth parameters.
inline void write_synthetic_dataset(const std::string& dir, const SyntheticData& data,
                                    const SyntheticSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto at = [&](const std::string& name) { return (fs::path(dir) / name).string(); };
    write_choice_data(at("choices.csv"), data.dataset.observations);
    data.dataset.embeddings.save(at("embeddings.bin"), at("embeddings.idx.csv"));
    write_semantic_labels(at("semantics.csv"), data.dataset.labels);
    if (!data.dataset.zones.empty()) write_zone_map(at("zones.csv"), data.dataset.zones);
    write_split(at("split.csv"), data.dataset.split);
    Manifest m;
    m.choices_path = at("choices.csv");
    m.embeddings_path = at("embeddings.bin");
    m.embeddings_index_path = at("embeddings.idx.csv");
    m.semantics_path = at("semantics.csv");
    if (!data.dataset.zones.empty()) m.zones_path = at("zones.csv");
    m.split_path = at("split.csv");
    m.k = spec.k;
    m.hhcost_unit = "simulated";
    m.tt_unit = "simulated";
    m.save(at("manifest.json"));
    write_truth(at("truth.json"), spec);
}

struct CoefficientRecovery {
    std::string name;
    double truth = 0.0;
    double estimate = 0.0;
    double abs_error = 0.0;
};

struct RecoveryReport {
    std::vector<CoefficientRecovery> coefficients;
    double max_abs_error = 0.0;
    double mean_abs_error = 0.0;
    double bayes_ce_test = 0.0;  // test CE of the generating model
    FitReport fit;
    TrainOutcome outcome;
};

// Test-set cross entropy of the true generating model; no estimator can
// beat this except by sampling luck.
inline double bayes_ce(const SyntheticSpec& spec, const Dataset& d,
                       std::span<const std::size_t> idx) {
    if (idx.empty()) return 0.0;
    double ll = 0.0;
    for (std::size_t i : idx) {
        const ChoiceObservation& obs = d.observations[i];
        std::array<double, kNumAlternatives> v{};
        for (int a = 0; a < kNumAlternatives; ++a) {
            const auto za = static_cast<std::size_t>(a);
            v[za] = true_utility(spec, d.labels.at(obs.alternatives[za].image_id),
                                 obs.alternatives[za].numeric_attrs);
        }
        auto probs = choice_probabilities(v);
        ll += std::log(probs[static_cast<std::size_t>(obs.chosen)]);
    }
    return -ll / static_cast<double>(idx.size());
}

inline RecoveryReport parameter_recovery_experiment(const SyntheticSpec& spec, const TrainConfig& cfg) {
    auto data = simulate_dataset(spec);
    RecoveryReport report;
    report.outcome = train_sequential(data.dataset, cfg);
    report.fit = report.outcome.fit;

    const ModelParams& est = report.outcome.params;
    auto add = [&](const std::string& name, double truth, double estimate) {
        report.coefficients.push_back({name, truth, estimate, std::abs(truth - estimate)});
    };
    add("beta_hhcost", spec.beta_num_true[0], est.beta_num[0]);
    add("beta_tt", spec.beta_num_true[1], est.beta_num[1]);
    for (int t = 0; t < kNumAttributes; ++t) {
        const auto zt = static_cast<std::size_t>(t);
        if (est.fixed_sem[zt]) continue;
        add(attribute_names()[zt], spec.beta_sem_true[zt], est.beta_sem[zt]);
    }
    double sum = 0.0;
    for (const auto& c : report.coefficients) {
        report.max_abs_error = std::max(report.max_abs_error, c.abs_error);
        sum += c.abs_error;
    }
    report.mean_abs_error = sum / static_cast<double>(report.coefficients.size());

    auto test_idx = data.dataset.split_indices(false);
    report.bayes_ce_test = bayes_ce(spec, data.dataset, test_idx);
    return report;
}

}  // namespace cvdcm
