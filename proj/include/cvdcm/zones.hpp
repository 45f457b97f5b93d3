#pragma once

#include <map>
#include <optional>
#include <string>

#include "cvdcm/common.hpp"
#include "cvdcm/csv.hpp"

namespace cvdcm {

struct ZoneEntry {
    std::string zone_id;
    std::optional<double> lon;
    std::optional<double> lat;
};

using ZoneMap = std::map<std::string, ZoneEntry>;  // image_id -> zone

inline const std::string kZonesHeader = "image_id,zone_id,lon,lat";

inline ZoneMap load_zone_map(const std::string& path) {
    ZoneMap out;
    for (const auto& row : csv::read_rows(path, kZonesHeader)) {
        require(row.size() == 4, "zones row has " + std::to_string(row.size()) + " fields in " + path);
        require(!row[1].empty(), "empty zone_id for image '" + row[0] + "' in " + path);
        ZoneEntry e{row[1], std::nullopt, std::nullopt};
        if (!row[2].empty()) e.lon = csv::parse_double(row[2], path);
        if (!row[3].empty()) e.lat = csv::parse_double(row[3], path);
        require(out.emplace(row[0], e).second,
                "image '" + row[0] + "' mapped to more than one zone in " + path);
    }
    return out;
}

inline std::string zones_to_csv(const ZoneMap& zones) {
    std::string s = kZonesHeader + "\n";
    for (const auto& [image_id, e] : zones) {
        s += image_id + ',' + e.zone_id + ',';
        if (e.lon) s += fmt_double(*e.lon);
        s += ',';
        if (e.lat) s += fmt_double(*e.lat);
        s += '\n';
    }
    return s;
}

inline void write_zone_map(const std::string& path, const ZoneMap& zones) {
    csv::write_file(path, zones_to_csv(zones));
}

}  // namespace cvdcm
