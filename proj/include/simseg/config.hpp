#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "simseg/augment.hpp"
#include "simseg/metrics.hpp"
#include "simseg/network.hpp"
#include "simseg/phantom.hpp"
#include "simseg/trainer.hpp"

namespace simseg {

using Json = nlohmann::json;

struct DataConfig {
  HuWindow finetune_window = HuWindow::finetune();
  HuWindow pretrain_window = HuWindow::pretrain();
  std::array<double, 3> split_ratios{0.70, 0.15, 0.15};
  std::string pretrain_roi = "GTV";
  std::string finetune_roi = "IGTV";
};

struct EvalConfig {
  double threshold = 0.5;
  DistanceUnits units = DistanceUnits::mm;
  AggregationLevel level = AggregationLevel::per_slice;
};

// Everything a CLI run can be configured with. Sections: seed, data, phantom,
// network, pretrain, finetune, early_stop, augment, eval.
struct RunConfig {
  std::uint64_t seed = 7;
  DataConfig data;
  int phantom_patients = 20;
  CohortDistribution phantom;
  NetworkConfig network = NetworkConfig::stack_25d(true);
  OptimConfig pretrain = OptimConfig::pretrain_defaults();
  OptimConfig finetune = OptimConfig::finetune_defaults();
  EarlyStopPolicy early_stop;
  AugmentConfig augment;
  bool augment_enabled = true;
  EvalConfig eval;

  void validate() const;
};

Json to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const Json& j);
Json to_json(const RunConfig& c);

// Overlays `doc` onto the defaults. Unknown keys and type mismatches throw
// ConfigError naming the offending key path.
RunConfig run_config_from_json(const Json& doc);

// Reads a JSON config file (ConfigError on I/O or parse failure).
Json read_config_file(const std::string& path);

// Applies "section.key=value" to `doc`; the value is parsed as JSON and falls
// back to a string.
void apply_override(Json& doc, const std::string& assignment);

// Resolves defaults <- file <- overrides.
RunConfig resolve_config(const std::string& file,
                         const std::vector<std::string>& overrides);

}  // namespace simseg
