#include "pcsep/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pcsep/errors.hpp"

namespace pcsep::config {

using nlohmann::json;

namespace {

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

void apply_json(train::TrainConfig& c, std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : doc.items()) {
    if (key == "iterations") c.iterations = as_count(v, key);
    else if (key == "batch_size") c.batch_size = as_count(v, key);
    else if (key == "momentum") c.momentum = as_number(v, key);
    else if (key == "lr_vision") c.lr_vision = as_number(v, key);
    else if (key == "lr_rest") c.lr_rest = as_number(v, key);
    else if (key == "K") c.K = as_count(v, key);
    else if (key == "N") c.N = as_count(v, key);
    else if (key == "F") c.F = as_count(v, key);
    else if (key == "seed") c.seed = as_count(v, key);
    else if (key == "vision_base_channels") c.vision_base_channels = as_count(v, key);
    else if (key == "unet_base_channels") c.unet_base_channels = as_count(v, key);
    else if (key == "unet_levels") c.unet_levels = as_count(v, key);
    else if (key == "voxel_size") c.voxel_size = as_number(v, key);
    else if (key == "validation_every") c.validation_every = as_count(v, key);
    else if (key == "validation_batches") c.validation_batches = as_count(v, key);
    else if (key == "checkpoint_every") c.checkpoint_every = as_count(v, key);
    else if (key == "augment") {
      if (!v.is_boolean()) throw ConfigError("config key 'augment' must be true or false");
      c.augment = v.get<bool>();
    } else if (key == "conditioning") {
      if (!v.is_string()) throw ConfigError("config key 'conditioning' must be a string");
      c.conditioning = train::parse_conditioning(v.get<std::string>());
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
}

train::TrainConfig load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  train::TrainConfig c;
  apply_json(c, ss.str());
  return c;
}

void apply_env(train::TrainConfig& c) {
  const char* seed = std::getenv("PCSEP_SEED");
  if (!seed) return;
  std::string text(seed);
  std::size_t used = 0;
  try {
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') throw std::invalid_argument("trailing");
    c.seed = v;
  } catch (const std::exception&) {
    throw ConfigError("PCSEP_SEED must be a non-negative integer, got '" + text + "'");
  }
}

std::string to_json(const train::TrainConfig& c) {
  json doc{{"iterations", c.iterations},
           {"batch_size", c.batch_size},
           {"momentum", c.momentum},
           {"lr_vision", c.lr_vision},
           {"lr_rest", c.lr_rest},
           {"K", c.K},
           {"N", c.N},
           {"F", c.F},
           {"conditioning", std::string(train::conditioning_name(c.conditioning))},
           {"seed", c.seed},
           {"vision_base_channels", c.vision_base_channels},
           {"unet_base_channels", c.unet_base_channels},
           {"unet_levels", c.unet_levels},
           {"voxel_size", c.voxel_size},
           {"augment", c.augment},
           {"validation_every", c.validation_every},
           {"validation_batches", c.validation_batches},
           {"checkpoint_every", c.checkpoint_every}};
  return doc.dump(2);
}

}  // namespace pcsep::config
