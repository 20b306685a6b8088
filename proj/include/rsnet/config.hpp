#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsnet/trainer.hpp"

namespace rsn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything a run needs: experiment identity, model, data source and the
/// trainer settings. Declarative key=value text, overridable per key from the
/// command line.
struct RunConfig {
  std::string name = "run";
  std::string arch = "tinyresnet";
  std::vector<int> resolutions = {32, 24, 16};
  int num_classes = 10;
  std::string dataset = "synthetic";  // synthetic | folder:<root> | index:<file>
  std::string val_dataset;            // empty: synthetic val split / same-source folders
  int train_count = 2000;             // synthetic only
  int val_count = 512;                // synthetic only
  int source_side = 64;               // synthetic only
  int cdf_resolution = 0;             // 0 = largest profile entry
  TrainConfig train;

  ResolutionProfile profile() const { return ResolutionProfile::make(resolutions); }
};

const std::vector<std::string>& valid_config_keys();

/// key=value lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies one "key=value" override string.
void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment);

/// Builds and validates a RunConfig. Unknown keys raise ConfigError listing
/// every valid key; malformed values raise ConfigError naming the key.
RunConfig make_run_config(const std::map<std::string, std::string>& kv);

/// Canonical serialization of every key (stable order); parsing the snapshot
/// reproduces the config.
std::string config_snapshot(const RunConfig& cfg);

std::string mode_name(TrainMode mode);
std::string variant_name(DistillVariant variant);

}  // namespace rsn
