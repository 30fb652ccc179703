#include "qtseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qtseg/errors.hpp"

namespace qtseg {

using json = nlohmann::json;

std::string to_string(Aggregation a) {
  return a == Aggregation::kAdd ? "add" : "concat";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "add") return Aggregation::kAdd;
  if (s == "concat") return Aggregation::kConcat;
  throw ConfigError("aggregation must be \"add\" or \"concat\", got \"" + s + "\"");
}

void ModelConfig::validate() const {
  if (n < 4 || n % 4 != 0) {
    throw ConfigError("width multiplier n must be a positive multiple of 4, got " +
                      std::to_string(n));
  }
  if (num_classes < 1) {
    throw ConfigError("num_classes must be >= 1, got " + std::to_string(num_classes));
  }
  if (input_channels != 1 && input_channels != 3) {
    throw ConfigError("input_channels must be 1 or 3, got " +
                      std::to_string(input_channels));
  }
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " +
                      std::to_string(input_size));
  }
  if (heads < 1) {
    throw ConfigError("heads must be >= 1, got " + std::to_string(heads));
  }
  for (int h : h_blocks) {
    if (h < 1) throw ConfigError("h_blocks entries must be >= 1");
  }
  if (mlp_hidden < 1) {
    throw ConfigError("mlp_hidden must be >= 1, got " + std::to_string(mlp_hidden));
  }
  // Attention splits n*4 (finest stage) across heads at half width; require
  // divisibility so every stage's head dim is integral.
  if ((n * 2) % heads != 0) {
    throw ConfigError("n*2 must be divisible by heads (head dim of the down-projected "
                      "attention at the finest stage)");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["n"] = n;
  j["num_classes"] = num_classes;
  j["input_channels"] = input_channels;
  j["input_size"] = input_size;
  j["heads"] = heads;
  j["h_blocks"] = h_blocks;
  j["mlp_hidden"] = mlp_hidden;
  j["use_mlff"] = use_mlff;
  j["aggregation"] = to_string(aggregation);
  j["seed"] = seed;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  static const std::set<std::string> known = {
      "n",          "num_classes", "input_channels", "input_size", "heads",
      "h_blocks",   "mlp_hidden",  "use_mlff",       "aggregation", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key \"" + key + "\"");
  }

  ModelConfig c;
  try {
    if (j.contains("n")) c.n = j["n"].get<int64_t>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int64_t>();
    if (j.contains("input_channels"))
      c.input_channels = j["input_channels"].get<int64_t>();
    if (j.contains("input_size")) c.input_size = j["input_size"].get<int64_t>();
    if (j.contains("heads")) c.heads = j["heads"].get<int>();
    if (j.contains("h_blocks")) {
      const auto arr = j["h_blocks"].get<std::vector<int>>();
      if (arr.size() != 3) throw ConfigError("h_blocks must have exactly 3 entries");
      std::copy(arr.begin(), arr.end(), c.h_blocks.begin());
    }
    if (j.contains("mlp_hidden")) c.mlp_hidden = j["mlp_hidden"].get<int64_t>();
    if (j.contains("use_mlff")) c.use_mlff = j["use_mlff"].get<bool>();
    if (j.contains("aggregation"))
      c.aggregation = aggregation_from_string(j["aggregation"].get<std::string>());
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace qtseg
