#pragma once

#include "cgnet/network.hpp"
#include "cgnet/optim.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cgnet {

/// Network + training settings and paths for one command.
struct RunConfig {
  NetworkConfig net;
  TrainConfig train;
  bool means_given = false;   // otherwise computed from the training set
  std::string manifest;
  std::string out_dir = "run";
  std::set<std::string> explicit_keys;  // keys set by file or flag
};

struct ConfigKey {
  std::string name;  // config-file spelling; flags use '-' for '_'
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  bool network = false;  // part of the architecture
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey& config_key(const std::string& name);

/// Sets one key from text; throws invalid_argument for an unknown key or bad value.
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Flat `key = value` lines, `#` starts a comment. Unknown keys are errors.
void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Every key as `key = value`, keys not set explicitly marked `# default`.
void write_run_config(std::ostream& os, const RunConfig& cfg, bool network_only = false);

/// Checks network and training settings together.
void validate(const RunConfig& cfg);

}  // namespace cgnet
