#pragma once

#include <map>
#include <string>

#include "scribda/trainer.hpp"

namespace scribda {

// On-disk experiment record: TrainConfig plus the kernel block, parsed from
// JSON with flat command-line overrides. Unknown keys are rejected so stale
// configs fail loudly.
TrainConfig parse_train_config(const std::string& json_text,
                               const std::map<std::string, std::string>& overrides = {});

TrainConfig load_train_config(const std::string& path,
                              const std::map<std::string, std::string>& overrides = {});

std::string train_config_to_json(const TrainConfig& config);

}  // namespace scribda
