#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cvdcm/model.hpp"
#include "cvdcm/zones.hpp"

namespace cvdcm {

// Street-level score of one image: numeric attributes excluded so the
// utility reflects only what the image encodes.
struct ImageScore {
    std::string image_id;
    SemanticVector semantics;
    UtilityBreakdown utility;
};

inline ImageScore score_image(const ModelParams& p, const std::string& image_id, const float* z,
                              bool include_residual = true) {
    ImageScore s;
    s.image_id = image_id;
    s.semantics = predict_semantics(p, z, p.k);
    s.utility = systematic_utility(p, {}, s.semantics, z,
                                   /*include_numeric=*/false, include_residual);
    return s;
}

// Scores every image in the store. Thread partitioning is by row block and
// results land in preassigned slots, so the output is order-stable.
inline std::vector<ImageScore> score_images(const ModelParams& p, const EmbeddingStore& store,
                                            bool include_residual = true, int threads = 1) {
    require(store.k() == p.k, "embedding K=" + std::to_string(store.k()) +
                                  " does not match model K=" + std::to_string(p.k));
    std::vector<const std::string*> ids(store.rows());
    for (const auto& [id, row] : store.index()) ids[row] = &id;

    std::vector<ImageScore> out(store.rows());
    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r)
            out[r] = score_image(p, ids[r] ? *ids[r] : std::to_string(r), store.row_ptr(r), include_residual);
    };
    threads = std::max(1, threads);
    if (threads == 1 || store.rows() < 1024) {
        worker(0, store.rows());
    } else {
        std::vector<std::thread> pool;
        std::size_t chunk = (store.rows() + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
        for (int t = 0; t < threads; ++t) {
            std::size_t begin = static_cast<std::size_t>(t) * chunk;
            std::size_t end = std::min(begin + chunk, store.rows());
            if (begin >= end) break;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

struct ZoneReport {
    std::string zone_id;
    std::size_t image_count = 0;
    double mean_utility = 0.0;
    double median_utility = 0.0;
    std::array<double, kNumAttributes> mean_attributes{};
    double mean_residual = 0.0;
    bool low_confidence = false;
    // Deviation decomposition against the citywide means.
    std::array<double, kNumAttributes> delta{};
    double delta_residual = 0.0;
    double total_deviation = 0.0;
};

struct CitywideMeans {
    std::size_t image_count = 0;
    double mean_utility = 0.0;
    std::array<double, kNumAttributes> mean_attributes{};
    double mean_residual = 0.0;
};

struct AggregateResult {
    std::vector<ZoneReport> zones;  // sorted by zone_id
    CitywideMeans citywide;
    std::vector<std::string> unmapped_images;
};

// Streaming zone aggregation; add() may be fed chunk by chunk.
class ZoneAccumulator {
public:
    explicit ZoneAccumulator(const ZoneMap& zones, std::size_t min_zone_count = 5)
        : zones_(&zones), min_count_(min_zone_count) {
        require(!zones.empty(), "empty zone map");
    }

    void add(const ImageScore& score) {
        auto it = zones_->find(score.image_id);
        if (it == zones_->end()) {
            unmapped_.push_back(score.image_id);
            return;
        }
        Cell& c = cells_[it->second.zone_id];
        accumulate(c, score);
        accumulate(city_, score);
    }

    AggregateResult finalize() const {
        AggregateResult r;
        r.unmapped_images = unmapped_;
        require(city_.count > 0, "no mapped images to aggregate");
        r.citywide = to_means(city_);
        r.zones.reserve(cells_.size());
        for (const auto& [zone_id, c] : cells_) {
            ZoneReport z;
            z.zone_id = zone_id;
            z.image_count = c.count;
            const double n = static_cast<double>(c.count);
            z.mean_utility = c.utility_sum / n;
            z.mean_residual = c.residual_sum / n;
            for (int t = 0; t < kNumAttributes; ++t)
                z.mean_attributes[static_cast<std::size_t>(t)] = c.attr_sum[static_cast<std::size_t>(t)] / n;
            std::vector<double> u = c.utilities;
            std::sort(u.begin(), u.end());
            z.median_utility = u.size() % 2 ? u[u.size() / 2]
                                            : 0.5 * (u[u.size() / 2 - 1] + u[u.size() / 2]);
            z.low_confidence = c.count < min_count_;
            r.zones.push_back(std::move(z));
        }
        return r;
    }

private:
    struct Cell {
        std::size_t count = 0;
        double utility_sum = 0.0;
        double residual_sum = 0.0;
        std::array<double, kNumAttributes> attr_sum{};
        std::vector<double> utilities;
    };

    static void accumulate(Cell& c, const ImageScore& s) {
        ++c.count;
        c.utility_sum += s.utility.v_total;
        c.residual_sum += s.utility.v_residual;
        auto a = s.semantics.as_array();
        for (int t = 0; t < kNumAttributes; ++t) c.attr_sum[static_cast<std::size_t>(t)] += a[static_cast<std::size_t>(t)];
        c.utilities.push_back(s.utility.v_total);
    }

    static CitywideMeans to_means(const Cell& c) {
        CitywideMeans m;
        m.image_count = c.count;
        const double n = static_cast<double>(c.count);
        m.mean_utility = c.utility_sum / n;
        m.mean_residual = c.residual_sum / n;
        for (int t = 0; t < kNumAttributes; ++t)
            m.mean_attributes[static_cast<std::size_t>(t)] = c.attr_sum[static_cast<std::size_t>(t)] / n;
        return m;
    }

    const ZoneMap* zones_;
    std::size_t min_count_;
    std::map<std::string, Cell> cells_;
    Cell city_;
    std::vector<std::string> unmapped_;
};

// Per-attribute contribution to a zone's deviation from the citywide mean.
// The reference class carries a zero coefficient, so its bar is identically
// zero no matter how much its proportion deviates.
inline void decompose_zone(ZoneReport& zone, const CitywideMeans& city, const ModelParams& params) {
    double total = 0.0;
    for (int t = 0; t < kNumAttributes; ++t) {
        const auto zt = static_cast<std::size_t>(t);
        zone.delta[zt] = params.beta_sem[zt] * (zone.mean_attributes[zt] - city.mean_attributes[zt]);
        total += zone.delta[zt];
    }
    zone.delta_residual = zone.mean_residual - city.mean_residual;
    zone.total_deviation = total + zone.delta_residual;
}

// Attribute indices ordered by |delta| descending, for bar-plot style output.
inline std::vector<int> deviation_order(const ZoneReport& zone) {
    std::vector<int> order(kNumAttributes);
    for (int t = 0; t < kNumAttributes; ++t) order[static_cast<std::size_t>(t)] = t;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(zone.delta[static_cast<std::size_t>(a)]) > std::abs(zone.delta[static_cast<std::size_t>(b)]);
    });
    return order;
}

inline AggregateResult aggregate_zones(const std::vector<ImageScore>& scores, const ZoneMap& zones,
                                       const ModelParams& params, std::size_t min_zone_count = 5) {
    ZoneAccumulator acc(zones, min_zone_count);
    for (const auto& s : scores) acc.add(s);
    AggregateResult r = acc.finalize();
    for (auto& z : r.zones) decompose_zone(z, r.citywide, params);
    return r;
}

// Zone-level joint-distribution summary: Pearson correlations and
// min/max/mean per variable (the 11 attribute means plus utility).
struct JointDistributionStats {
    std::vector<std::string> variables;
    std::vector<double> min, max, mean;
    std::vector<std::vector<double>> correlation;  // NaN marks undefined (zero variance)
};

inline JointDistributionStats joint_distribution_stats(const std::vector<ZoneReport>& zones) {
    require(zones.size() >= 3, "joint distribution statistics need at least 3 zones");
    JointDistributionStats s;
    for (const auto& name : attribute_names()) s.variables.push_back(name);
    s.variables.push_back("utility");
    const std::size_t nvar = s.variables.size();
    const std::size_t n = zones.size();

    std::vector<std::vector<double>> cols(nvar, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (int t = 0; t < kNumAttributes; ++t)
            cols[static_cast<std::size_t>(t)][i] = zones[i].mean_attributes[static_cast<std::size_t>(t)];
        cols[nvar - 1][i] = zones[i].mean_utility;
    }

    s.min.resize(nvar);
    s.max.resize(nvar);
    s.mean.resize(nvar);
    std::vector<double> sd(nvar);
    for (std::size_t v = 0; v < nvar; ++v) {
        double lo = cols[v][0], hi = cols[v][0], sum = 0.0;
        for (double x : cols[v]) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            sum += x;
        }
        s.min[v] = lo;
        s.max[v] = hi;
        s.mean[v] = sum / static_cast<double>(n);
        double ss = 0.0;
        for (double x : cols[v]) ss += (x - s.mean[v]) * (x - s.mean[v]);
        // A constant column has zero variance by definition; min == max detects
        // this exactly, where the rounded mean could leave ss a hair above 0.
        sd[v] = (lo == hi) ? 0.0 : std::sqrt(ss);
    }

    s.correlation.assign(nvar, std::vector<double>(nvar, 0.0));
    for (std::size_t a = 0; a < nvar; ++a) {
        for (std::size_t b = 0; b < nvar; ++b) {
            if (sd[a] == 0.0 || sd[b] == 0.0) {
                s.correlation[a][b] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double cov = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                cov += (cols[a][i] - s.mean[a]) * (cols[b][i] - s.mean[b]);
            s.correlation[a][b] = cov / (sd[a] * sd[b]);
        }
    }
    return s;
}

inline std::string joint_stats_to_csv(const JointDistributionStats& s) {
    std::string out = "variable,min,max,mean";
    for (const auto& v : s.variables) out += ",corr_" + v;
    out += '\n';
    for (std::size_t a = 0; a < s.variables.size(); ++a) {
        out += s.variables[a] + ',' + fmt_double(s.min[a]) + ',' + fmt_double(s.max[a]) + ',' + fmt_double(s.mean[a]);
        for (std::size_t b = 0; b < s.variables.size(); ++b) {
            double r = s.correlation[a][b];
            out += ',';
            out += std::isnan(r) ? "undefined" : fmt_double(r);
        }
        out += '\n';
    }
    return out;
}

inline std::string zone_scores_header() {
    std::string h = "zone_id,image_count,mean_utility";
    for (const auto& name : attribute_names()) h += ",mean_" + name;
    h += ",mean_residual";
    return h;
}

inline std::string zone_scores_to_csv(const AggregateResult& agg) {
    std::string s = zone_scores_header() + '\n';
    for (const auto& z : agg.zones) {
        s += z.zone_id + ',' + std::to_string(z.image_count) + ',' + fmt_double(z.mean_utility);
        for (int t = 0; t < kNumAttributes; ++t) s += ',' + fmt_double(z.mean_attributes[static_cast<std::size_t>(t)]);
        s += ',' + fmt_double(z.mean_residual);
        s += '\n';
    }
    return s;
}

inline std::string decomposition_to_csv(const AggregateResult& agg) {
    std::string s = "zone_id,attribute,delta\n";
    for (const auto& z : agg.zones) {
        for (int t = 0; t < kNumAttributes; ++t)
            s += z.zone_id + ',' + attribute_names()[static_cast<std::size_t>(t)] + ',' +
                 fmt_double(z.delta[static_cast<std::size_t>(t)]) + '\n';
        s += z.zone_id + ",residual," + fmt_double(z.delta_residual) + '\n';
        s += z.zone_id + ",total," + fmt_double(z.total_deviation) + '\n';
    }
    return s;
}

struct GeoJoinResult {
    nlohmann::json joined;
    std::vector<std::string> zones_without_geometry;
    std::vector<std::string> features_without_zone;
};

// Attaches utility and deviation properties to features matched by their
// `zone_id` property. Geometry and CRS pass through untouched.
inline GeoJoinResult join_geojson(const nlohmann::json& geo, const AggregateResult& agg) {
    require(geo.is_object() && geo.value("type", "") == "FeatureCollection" && geo.contains("features"),
            "GeoJSON must be a FeatureCollection with features");
    GeoJoinResult r;
    r.joined = geo;
    std::map<std::string, const ZoneReport*> by_id;
    for (const auto& z : agg.zones) by_id[z.zone_id] = &z;

    std::map<std::string, int> seen;
    for (auto& feature : r.joined["features"]) {
        require(feature.is_object() && feature.contains("properties"), "GeoJSON feature lacks properties");
        auto& props = feature["properties"];
        require(props.contains("zone_id"), "GeoJSON feature lacks a zone_id property");
        std::string zone_id = props["zone_id"].get<std::string>();
        require(++seen[zone_id] == 1, "duplicate zone_id '" + zone_id + "' in GeoJSON");
        auto it = by_id.find(zone_id);
        if (it == by_id.end()) {
            r.features_without_zone.push_back(zone_id);
            continue;
        }
        const ZoneReport& z = *it->second;
        props["mean_utility"] = z.mean_utility;
        props["image_count"] = z.image_count;
        props["total_deviation"] = z.total_deviation;
        for (int t = 0; t < kNumAttributes; ++t)
            props["delta_" + attribute_names()[static_cast<std::size_t>(t)]] = z.delta[static_cast<std::size_t>(t)];
        props["delta_residual"] = z.delta_residual;
    }
    for (const auto& z : agg.zones)
        if (!seen.count(z.zone_id)) r.zones_without_geometry.push_back(z.zone_id);
    return r;
}

// zone_scores.csv and decomposition.csv always; a joined GeoJSON when
// geometry is supplied.
inline GeoJoinResult export_results(const std::string& out_dir, const AggregateResult& agg,
                                    const std::string& geojson_path = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    csv::write_file((fs::path(out_dir) / "zone_scores.csv").string(), zone_scores_to_csv(agg));
    csv::write_file((fs::path(out_dir) / "decomposition.csv").string(), decomposition_to_csv(agg));
    GeoJoinResult r;
    if (!geojson_path.empty()) {
        std::ifstream in(geojson_path);
        require(in.good(), "cannot open " + geojson_path);
        nlohmann::json geo;
        try {
            in >> geo;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed GeoJSON " + geojson_path + ": " + e.what());
        }
        r = join_geojson(geo, agg);
        std::ofstream out((fs::path(out_dir) / "zone_scores.geojson").string());
        out << r.joined.dump(2) << '\n';
        require(out.good(), "write failed for zone_scores.geojson");
    }
    return r;
}

}  // namespace cvdcm
