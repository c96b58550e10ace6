// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace invdet::data {

struct ManifestRecord {
    std::string id;
    std::string path;  // '/'-separated, relative to the manifest root
    int label = 0;     // 0 real, 1 fake
    std::string generator;
    std::string split;    // train | val | test
    std::string pair_id;  // optional link between an aligned real/fake pair
    int class_id = -1;    // optional rendering class, used for backbone training
};

/// JSON-lines dataset manifest. Paths resolve against `root`.
struct DatasetManifest {
    std::string root;
    std::vector<ManifestRecord> records;

    static DatasetManifest load(const std::string& manifest_path, const std::string& root = "");
    void save(const std::string& manifest_path) const;
    void validate() const;  // unique ids, labels, splits, pair integrity

    std::vector<const ManifestRecord*> split(const std::string& name) const;
    std::string resolve(const ManifestRecord& r) const;
};

}  // namespace invdet::data
