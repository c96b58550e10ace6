// SPDX-License-Identifier: Apache-2.0
#include "invdet/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

namespace invdet::data {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetManifest DatasetManifest::load(const std::string& manifest_path, const std::string& root) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("manifest: cannot open " + manifest_path);
    DatasetManifest m;
    m.root = root.empty() ? fs::path(manifest_path).parent_path().string() : root;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest: bad json at line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.path = j.at("path").get<std::string>();
        std::replace(r.path.begin(), r.path.end(), '\\', '/');
        const std::string label = j.at("label").get<std::string>();
        if (label == "real")
            r.label = 0;
        else if (label == "fake")
            r.label = 1;
        else
            throw std::runtime_error("manifest: label must be real|fake at line " +
                                     std::to_string(lineno));
        r.generator = j.value("generator", "");
        r.split = j.value("split", "test");
        r.pair_id = j.value("pair_id", "");
        r.class_id = j.value("class_id", -1);
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

void DatasetManifest::save(const std::string& manifest_path) const {
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("manifest: cannot write " + manifest_path);
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["path"] = r.path;
        j["label"] = r.label == 1 ? "fake" : "real";
        j["generator"] = r.generator;
        j["split"] = r.split;
        if (!r.pair_id.empty()) j["pair_id"] = r.pair_id;
        if (r.class_id >= 0) j["class_id"] = r.class_id;
        out << j.dump() << "\n";
    }
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    std::map<std::string, std::pair<int, int>> pairs;  // pair_id -> (#real, #fake)
    for (const auto& r : records) {
        if (!ids.insert(r.id).second) throw std::runtime_error("manifest: duplicate id " + r.id);
        if (r.label != 0 && r.label != 1) throw std::runtime_error("manifest: bad label for " + r.id);
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw std::runtime_error("manifest: bad split '" + r.split + "' for " + r.id);
        if (!r.pair_id.empty()) {
            auto& p = pairs[r.pair_id];
            (r.label == 0 ? p.first : p.second) += 1;
        }
    }
    for (const auto& [pid, counts] : pairs)
        if (counts.first != 1 || counts.second != 1)
            throw std::runtime_error("manifest: pair_id " + pid +
                                     " must link exactly one real and one fake");
}

std::vector<const ManifestRecord*> DatasetManifest::split(const std::string& name) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

std::string DatasetManifest::resolve(const ManifestRecord& r) const {
    return (fs::path(root) / fs::path(r.path)).string();
}

}  // namespace invdet::data
