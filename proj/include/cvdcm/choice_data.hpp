#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cvdcm/common.hpp"
#include "cvdcm/csv.hpp"

namespace cvdcm {

inline constexpr int kNumAlternatives = 2;     // J
inline constexpr int kNumNumericAttrs = 2;     // M: housing cost, travel time

struct Alternative {
    std::string image_id;
    std::array<double, kNumNumericAttrs> numeric_attrs{};
};

struct ChoiceObservation {
    std::string obs_id;
    std::string respondent_id;
    std::array<Alternative, kNumAlternatives> alternatives;
    int chosen = 0;  // index into alternatives
};

inline const std::string kChoicesHeader =
    "obs_id,respondent_id,alt_id,image_id,attr_hhcost,attr_tt,chosen";

// Two rows per observation, grouped by obs_id; exactly one row flagged chosen.
inline std::vector<ChoiceObservation> load_choice_data(const std::string& path) {
    struct Partial {
        ChoiceObservation obs;
        std::array<bool, kNumAlternatives> seen{};
        int chosen_count = 0;
    };
    std::map<std::string, Partial> partials;
    for (const auto& row : csv::read_rows(path, kChoicesHeader)) {
        require(row.size() == 7, "choices row has " + std::to_string(row.size()) + " fields in " + path);
        const std::string& obs_id = row[0];
        const std::string ctx = path + " obs " + obs_id;
        long alt_id = csv::parse_long(row[2], ctx);
        require(alt_id == 0 || alt_id == 1, "alt_id must be 0 or 1 in " + ctx);
        long chosen = csv::parse_long(row[6], ctx);
        require(chosen == 0 || chosen == 1, "chosen must be 0 or 1 in " + ctx);

        auto [it, inserted] = partials.try_emplace(obs_id);
        Partial& p = it->second;
        if (inserted) {
            p.obs.obs_id = obs_id;
            p.obs.respondent_id = row[1];
        } else {
            require(p.obs.respondent_id == row[1], "respondent_id differs across rows in " + ctx);
        }
        auto a = static_cast<std::size_t>(alt_id);
        require(!p.seen[a], "duplicate (obs_id, alt_id) in " + ctx);
        p.seen[a] = true;
        p.obs.alternatives[a].image_id = row[3];
        p.obs.alternatives[a].numeric_attrs[0] = csv::parse_double(row[4], ctx);
        p.obs.alternatives[a].numeric_attrs[1] = csv::parse_double(row[5], ctx);
        if (chosen == 1) {
            p.obs.chosen = static_cast<int>(alt_id);
            ++p.chosen_count;
        }
    }
    // Map iteration keeps the result keyed by obs_id, so row permutations
    // in the file produce the same observation list.
    std::vector<ChoiceObservation> out;
    out.reserve(partials.size());
    for (const auto& [id, p] : partials) {
        require(p.seen[0] && p.seen[1], "obs '" + id + "' does not have exactly 2 alternatives in " + path);
        require(p.chosen_count == 1, "chosen-count != 1 for obs '" + id + "' in " + path);
        out.push_back(p.obs);
    }
    return out;
}

inline std::string choices_to_csv(const std::vector<ChoiceObservation>& observations) {
    std::string s = kChoicesHeader + "\n";
    for (const auto& obs : observations) {
        for (int a = 0; a < kNumAlternatives; ++a) {
            const Alternative& alt = obs.alternatives[static_cast<std::size_t>(a)];
            s += obs.obs_id + ',' + obs.respondent_id + ',' + std::to_string(a) + ',' + alt.image_id;
            s += ',' + fmt_double(alt.numeric_attrs[0]);
            s += ',' + fmt_double(alt.numeric_attrs[1]);
            s += obs.chosen == a ? ",1\n" : ",0\n";
        }
    }
    return s;
}

inline void write_choice_data(const std::string& path, const std::vector<ChoiceObservation>& observations) {
    csv::write_file(path, choices_to_csv(observations));
}

// Train/test partition over observation ids; the induced image-id sets must
// be disjoint so the encoder head never sees test imagery.
struct DatasetSplit {
    std::set<std::string> train_ids;
    std::set<std::string> test_ids;

    void validate(const std::vector<ChoiceObservation>& observations) const {
        for (const std::string& id : train_ids)
            require(!test_ids.count(id), "obs '" + id + "' appears in both splits");
        std::set<std::string> train_images, test_images;
        for (const auto& obs : observations) {
            bool in_train = train_ids.count(obs.obs_id) != 0;
            bool in_test = test_ids.count(obs.obs_id) != 0;
            for (const auto& alt : obs.alternatives) {
                if (in_train) train_images.insert(alt.image_id);
                if (in_test) test_images.insert(alt.image_id);
            }
        }
        for (const std::string& img : train_images)
            require(!test_images.count(img), "image '" + img + "' appears in both train and test observations");
    }
};

inline const std::string kSplitHeader = "obs_id,split";

inline DatasetSplit load_split(const std::string& path) {
    DatasetSplit split;
    for (const auto& row : csv::read_rows(path, kSplitHeader)) {
        require(row.size() == 2, "bad split row in " + path);
        if (row[1] == "train") {
            require(split.train_ids.insert(row[0]).second, "duplicate obs '" + row[0] + "' in " + path);
        } else if (row[1] == "test") {
            require(split.test_ids.insert(row[0]).second, "duplicate obs '" + row[0] + "' in " + path);
        } else {
            throw ValidationError("split must be train|test, got '" + row[1] + "' in " + path);
        }
    }
    return split;
}

inline std::string split_to_csv(const DatasetSplit& split) {
    std::string s = kSplitHeader + "\n";
    for (const auto& id : split.train_ids) s += id + ",train\n";
    for (const auto& id : split.test_ids) s += id + ",test\n";
    return s;
}

inline void write_split(const std::string& path, const DatasetSplit& split) {
    csv::write_file(path, split_to_csv(split));
}

}  // namespace cvdcm
