#pragma once

#include <set>
#include <string>
#include <vector>

#include "cvdcm/choice_data.hpp"
#include "cvdcm/embedding.hpp"
#include "cvdcm/manifest.hpp"
#include "cvdcm/semantics.hpp"
#include "cvdcm/zones.hpp"

namespace cvdcm {

struct ValidationIssue {
    std::string kind;   // "missing embedding" | "missing label" | "unmapped image" | ...
    std::string id;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    int k = 0;
    int m = kNumNumericAttrs;
    int t = kNumAttributes;
    std::size_t n_observations = 0;
    int j = kNumAlternatives;
    bool trainable_phase1 = false;  // every referenced image has a ground-truth label
    bool trainable_phase23 = false; // every referenced image has an embedding

    std::size_t count(const std::string& kind) const {
        std::size_t n = 0;
        for (const auto& i : issues)
            if (i.kind == kind) ++n;
        return n;
    }
};

// Immutable after load/bind; safe for concurrent read.
struct Dataset {
    std::vector<ChoiceObservation> observations;
    EmbeddingStore embeddings;
    LabelStore labels;
    ZoneMap zones;
    DatasetSplit split;

    // Embedding rows per observation alternative, resolved once so the
    // evaluation hot path never touches the string index.
    std::vector<std::array<std::size_t, kNumAlternatives>> alt_rows;

    bool has_labels() const { return !labels.empty(); }

    void bind() {
        alt_rows.clear();
        alt_rows.reserve(observations.size());
        for (const auto& obs : observations) {
            std::array<std::size_t, kNumAlternatives> rows{};
            for (int a = 0; a < kNumAlternatives; ++a)
                rows[static_cast<std::size_t>(a)] = embeddings.row_of(obs.alternatives[static_cast<std::size_t>(a)].image_id);
            alt_rows.push_back(rows);
        }
    }

    std::vector<std::size_t> split_indices(bool train) const {
        const auto& ids = train ? split.train_ids : split.test_ids;
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < observations.size(); ++i)
            if (ids.count(observations[i].obs_id)) out.push_back(i);
        return out;
    }

    static Dataset load(const Manifest& m) {
        Dataset d;
        d.observations = load_choice_data(m.choices_path);
        d.embeddings = EmbeddingStore::load(m.embeddings_path, m.embeddings_index_path);
        if (m.k > 0)
            require(d.embeddings.k() == m.k,
                    "manifest declares K=" + std::to_string(m.k) + " but embeddings have K=" +
                        std::to_string(d.embeddings.k()));
        if (!m.semantics_path.empty()) d.labels = load_semantic_labels(m.semantics_path);
        if (!m.zones_path.empty()) d.zones = load_zone_map(m.zones_path);
        if (!m.split_path.empty()) {
            d.split = load_split(m.split_path);
            d.split.validate(d.observations);
        }
        return d;
    }
};

// Report-only consistency check; never throws.
inline ValidationReport validate_dataset(const std::vector<ChoiceObservation>& choices,
                                         const EmbeddingStore& embeddings,
                                         const LabelStore* labels = nullptr,
                                         const ZoneMap* zones = nullptr) {
    ValidationReport r;
    r.k = embeddings.k();
    r.n_observations = choices.size();

    std::set<std::string> referenced;
    for (const auto& obs : choices)
        for (const auto& alt : obs.alternatives) referenced.insert(alt.image_id);

    bool all_embedded = true, all_labelled = true;
    for (const std::string& img : referenced) {
        if (!embeddings.contains(img)) {
            r.issues.push_back({"missing embedding", img});
            all_embedded = false;
        }
        if (labels && !labels->count(img)) {
            r.issues.push_back({"missing label", img});
            all_labelled = false;
        }
        if (zones && !zones->count(img)) r.issues.push_back({"unmapped image", img});
    }
    r.trainable_phase23 = all_embedded;
    r.trainable_phase1 = all_embedded && labels != nullptr && all_labelled;
    return r;
}

inline ValidationReport validate_dataset(const Dataset& d) {
    return validate_dataset(d.observations, d.embeddings,
                            d.has_labels() ? &d.labels : nullptr,
                            d.zones.empty() ? nullptr : &d.zones);
}

}  // namespace cvdcm
