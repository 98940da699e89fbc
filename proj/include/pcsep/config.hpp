#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "pcsep/trainer.hpp"

namespace pcsep::config {

// JSON object whose keys are TrainConfig field names ("conditioning" takes
// depth | rgb-depth | label). Unknown keys and wrong types raise ConfigError.
void apply_json(train::TrainConfig& config, std::string_view json_text);
train::TrainConfig load_file(const std::filesystem::path& path);

// PCSEP_SEED, when set, replaces the seed. A non-integer value is a
// ConfigError.
void apply_env(train::TrainConfig& config);

std::string to_json(const train::TrainConfig& config);

}  // namespace pcsep::config
