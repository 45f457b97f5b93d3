#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "cvdcm/common.hpp"
#include "cvdcm/csv.hpp"

namespace cvdcm {

// Attribute layout shared by labels, coefficients, and reports.
// Index 0 is the car count; 1..9 are pixel proportions; 10 is the
// unsegmented remainder (always derived, never read from file).
inline constexpr int kNumProportions = 9;
inline constexpr int kNumAttributes = 11;   // car_count + 9 proportions + unsegmented
inline constexpr int kNumTargets = 10;      // predicted by the semantic head (no unsegmented)
inline constexpr int kAttrCarCount = 0;
inline constexpr int kAttrBuilding = 2;     // default reference class
inline constexpr int kAttrUnsegmented = 10;

inline const std::array<std::string, kNumAttributes>& attribute_names() {
    static const std::array<std::string, kNumAttributes> names = {
        "car_count", "p_car", "p_building", "p_grass", "p_road", "p_sky",
        "p_trees", "p_plants", "p_fence", "p_water", "unsegmented"};
    return names;
}

struct SemanticVector {
    double car_count = 0.0;
    std::array<double, kNumProportions> proportions{};
    double unsegmented = 1.0;

    double attribute(int t) const {
        if (t == kAttrCarCount) return car_count;
        if (t == kAttrUnsegmented) return unsegmented;
        return proportions[static_cast<std::size_t>(t - 1)];
    }

    std::array<double, kNumAttributes> as_array() const {
        std::array<double, kNumAttributes> a{};
        a[0] = car_count;
        for (int i = 0; i < kNumProportions; ++i) a[static_cast<std::size_t>(i + 1)] = proportions[static_cast<std::size_t>(i)];
        a[kAttrUnsegmented] = unsegmented;
        return a;
    }

    // The 10 targets the head regresses on: car_count + 9 proportions.
    std::array<double, kNumTargets> targets() const {
        std::array<double, kNumTargets> a{};
        a[0] = car_count;
        for (int i = 0; i < kNumProportions; ++i) a[static_cast<std::size_t>(i + 1)] = proportions[static_cast<std::size_t>(i)];
        return a;
    }
};

// Builds a validated SemanticVector from a car count and 9 raw proportions.
// Over-coverage up to tau is renormalised (segmentation masks can overlap);
// beyond tau the row is rejected. `renormalised` reports whether the
// tolerance rule fired.
inline SemanticVector make_semantic_vector(double car_count,
                                           const std::array<double, kNumProportions>& props,
                                           const std::string& context,
                                           bool* renormalised = nullptr,
                                           double tau = 0.02) {
    require(std::isfinite(car_count) && car_count >= 0.0, "negative car_count in " + context);
    double sum = 0.0;
    for (double p : props) {
        require(std::isfinite(p) && p >= 0.0, "negative proportion in " + context);
        require(p <= 1.0 + tau, "proportion > 1 in " + context);
        sum += p;
    }
    SemanticVector v;
    v.car_count = car_count;
    v.proportions = props;
    if (renormalised) *renormalised = false;
    if (sum > 1.0 + tau) {
        throw ValidationError("proportions sum to " + fmt_double(sum, 6) + " > 1+tau in " + context);
    }
    if (sum > 1.0) {
        for (double& p : v.proportions) p /= sum;
        sum = 0.0;
        for (double p : v.proportions) sum += p;
        if (renormalised) *renormalised = true;
    }
    v.unsegmented = 1.0 - sum;
    if (v.unsegmented < 0.0) v.unsegmented = 0.0;  // roundoff after renormalisation
    return v;
}

struct SemanticLoadReport {
    std::vector<std::string> renormalised_ids;
};

using LabelStore = std::map<std::string, SemanticVector>;

inline const std::string kSemanticsHeader =
    "image_id,car_count,p_car,p_building,p_grass,p_road,p_sky,p_trees,p_plants,p_fence,p_water";

inline LabelStore load_semantic_labels(const std::string& path, SemanticLoadReport* report = nullptr) {
    LabelStore out;
    for (const auto& row : csv::read_rows(path, kSemanticsHeader)) {
        require(row.size() == 11, "semantics row has " + std::to_string(row.size()) + " fields in " + path);
        const std::string& id = row[0];
        require(!out.count(id), "duplicate image_id '" + id + "' in " + path);
        std::array<double, kNumProportions> props{};
        for (int i = 0; i < kNumProportions; ++i)
            props[static_cast<std::size_t>(i)] = csv::parse_double(row[static_cast<std::size_t>(i + 2)], path + " row " + id);
        bool renorm = false;
        out[id] = make_semantic_vector(csv::parse_double(row[1], path + " row " + id), props,
                                       path + " row " + id, &renorm);
        if (renorm && report) report->renormalised_ids.push_back(id);
    }
    return out;
}

inline std::string semantics_to_csv(const LabelStore& labels) {
    std::string s = kSemanticsHeader + "\n";
    for (const auto& [id, v] : labels) {
        s += id;
        s += ',' + fmt_double(v.car_count);
        for (double p : v.proportions) s += ',' + fmt_double(p);
        s += '\n';
    }
    return s;
}

inline void write_semantic_labels(const std::string& path, const LabelStore& labels) {
    csv::write_file(path, semantics_to_csv(labels));
}

}  // namespace cvdcm
