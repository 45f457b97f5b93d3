#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "cvdcm/common.hpp"

namespace cvdcm {

// Declares where a dataset lives and the units its numeric attributes are
// measured in. Numeric attributes are ingested pre-scaled; the unit strings
// are carried into reports verbatim.
struct Manifest {
    std::string choices_path;
    std::string embeddings_path;
    std::string embeddings_index_path;
    std::string semantics_path;   // optional, empty if absent
    std::string zones_path;       // optional
    std::string split_path;       // optional
    int k = 0;
    std::string hhcost_unit = "unspecified";
    std::string tt_unit = "unspecified";

    static Manifest load(const std::string& path) {
        std::ifstream in(path);
        require(in.good(), "cannot open manifest " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("malformed manifest " + path + ": " + e.what());
        }
        Manifest m;
        auto base = std::filesystem::path(path).parent_path();
        auto resolve = [&](const std::string& p) {
            if (p.empty()) return p;
            std::filesystem::path fp(p);
            return fp.is_absolute() ? p : (base / fp).string();
        };
        require(j.contains("choices") && j.contains("embeddings") && j.contains("embeddings_index"),
                "manifest " + path + " must declare choices, embeddings, embeddings_index");
        m.choices_path = resolve(j.at("choices").get<std::string>());
        m.embeddings_path = resolve(j.at("embeddings").get<std::string>());
        m.embeddings_index_path = resolve(j.at("embeddings_index").get<std::string>());
        m.semantics_path = resolve(j.value("semantics", std::string{}));
        m.zones_path = resolve(j.value("zones", std::string{}));
        m.split_path = resolve(j.value("split", std::string{}));
        m.k = j.value("k", 0);
        if (j.contains("units")) {
            m.hhcost_unit = j["units"].value("hhcost", m.hhcost_unit);
            m.tt_unit = j["units"].value("tt", m.tt_unit);
        }
        return m;
    }

    // Paths are written relative to the manifest's own directory.
    void save(const std::string& path) const {
        auto base = std::filesystem::path(path).parent_path();
        auto relative = [&](const std::string& p) {
            if (p.empty()) return p;
            auto rel = std::filesystem::relative(p, base.empty() ? "." : base);
            return rel.string();
        };
        nlohmann::json j;
        j["choices"] = relative(choices_path);
        j["embeddings"] = relative(embeddings_path);
        j["embeddings_index"] = relative(embeddings_index_path);
        if (!semantics_path.empty()) j["semantics"] = relative(semantics_path);
        if (!zones_path.empty()) j["zones"] = relative(zones_path);
        if (!split_path.empty()) j["split"] = relative(split_path);
        j["k"] = k;
        j["units"] = {{"hhcost", hhcost_unit}, {"tt", tt_unit}};
        std::ofstream out(path);
        require(out.good(), "cannot write manifest " + path);
        out << j.dump(2) << '\n';
    }
};

}  // namespace cvdcm
