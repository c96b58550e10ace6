// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace invdet::config {

using nlohmann::json;

/// Full default configuration tree. Every tunable in the library appears
/// here so a run directory always carries a complete resolved snapshot.
json default_config();

/// defaults <- optional file <- repeated "dotted.key=value" overrides.
json load_layered(const std::string& config_file, const std::vector<std::string>& overrides);

/// Applies one dotted-key override in place; value text parses as JSON when
/// possible and falls back to a plain string.
void apply_override(json& tree, const std::string& dotted_kv);

/// Serializes the resolved config into <run_dir>/resolved_config.json.
std::string write_run_config(const json& cfg, const std::string& run_dir);

}  // namespace invdet::config
