#pragma once

// Run configuration: a flat JSON object with dotted keys, e.g.
//
//   { "paths.data_dir": "data", "split.train_start": "2020-01-01",
//     "model.embed_dim": 32, "train.epochs": 500, "seeds": [0, 1] }
//
// Relative paths resolve against the config file's directory. Any key can be
// overridden from the environment as MGDPR_<KEY> with dots replaced by
// underscores and letters uppercased (MGDPR_TRAIN_EPOCHS=5).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdpr/error.hpp"
#include "mgdpr/io.hpp"
#include "mgdpr/market_data.hpp"
#include "mgdpr/model.hpp"
#include "mgdpr/training.hpp"

namespace mgdpr {

struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  std::string market = "market";
  double coverage = 0.98;
  DateRange train_period, val_period, test_period;
  ModelConfig model;  // num_stocks comes from the panel
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
};

namespace detail {

using json = nlohmann::json;

inline ConfigError bad_value(const std::string& key, const std::string& want, const json& got) {
  return ConfigError("config key '" + key + "' expects " + want + ", got " + got.dump());
}

inline std::uint64_t as_uint(const std::string& key, const json& j) {
  if (!j.is_number_unsigned()) throw bad_value(key, "a nonnegative integer", j);
  return j.get<std::uint64_t>();
}

inline double as_double(const std::string& key, const json& j) {
  if (!j.is_number()) throw bad_value(key, "a number", j);
  return j.get<double>();
}

inline std::string as_string(const std::string& key, const json& j) {
  if (!j.is_string()) throw bad_value(key, "a string", j);
  return j.get<std::string>();
}

inline bool as_bool(const std::string& key, const json& j) {
  if (!j.is_boolean()) throw bad_value(key, "true or false", j);
  return j.get<bool>();
}

inline Date as_date(const std::string& key, const json& j) {
  auto d = Date::parse(as_string(key, j));
  if (!d) throw bad_value(key, "a YYYY-MM-DD date", j);
  return *d;
}

enum class Kind { Path, String, Uint, Double, Bool, Date, SeedList };

struct Field {
  std::string key;
  Kind kind;
  bool required;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

inline const std::vector<Field>& fields() {
  using K = Kind;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto path = [&f](std::string key, std::filesystem::path RunConfig::*m) {
      f.push_back({key, K::Path, true, [key, m](RunConfig& c, const json& j) { c.*m = as_string(key, j); },
                   [m](const RunConfig& c) { return json((c.*m).string()); }});
    };
    auto date = [&f](std::string key, DateRange RunConfig::*range, Date DateRange::*end) {
      f.push_back({key, K::Date, true, [key, range, end](RunConfig& c, const json& j) { c.*range.*end = as_date(key, j); },
                   [range, end](const RunConfig& c) { return json((c.*range.*end).str()); }});
    };
    auto model_uint = [&f](std::string key, std::size_t ModelConfig::*m) {
      f.push_back({key, K::Uint, false, [key, m](RunConfig& c, const json& j) { c.model.*m = as_uint(key, j); },
                   [m](const RunConfig& c) { return json(c.model.*m); }});
    };
    auto model_double = [&f](std::string key, double ModelConfig::*m) {
      f.push_back({key, K::Double, false, [key, m](RunConfig& c, const json& j) { c.model.*m = as_double(key, j); },
                   [m](const RunConfig& c) { return json(c.model.*m); }});
    };
    auto train_double = [&f](std::string key, double TrainConfig::*m) {
      f.push_back({key, K::Double, false, [key, m](RunConfig& c, const json& j) { c.train.*m = as_double(key, j); },
                   [m](const RunConfig& c) { return json(c.train.*m); }});
    };
    auto train_uint = [&f](std::string key, std::size_t TrainConfig::*m) {
      f.push_back({key, K::Uint, false, [key, m](RunConfig& c, const json& j) { c.train.*m = as_uint(key, j); },
                   [m](const RunConfig& c) { return json(c.train.*m); }});
    };

    path("paths.data_dir", &RunConfig::data_dir);
    path("paths.cache_dir", &RunConfig::cache_dir);
    path("paths.output_dir", &RunConfig::output_dir);
    f.push_back({"market", K::String, false, [](RunConfig& c, const json& j) { c.market = as_string("market", j); },
                 [](const RunConfig& c) { return json(c.market); }});
    f.push_back({"data.coverage", K::Double, false,
                 [](RunConfig& c, const json& j) { c.coverage = as_double("data.coverage", j); },
                 [](const RunConfig& c) { return json(c.coverage); }});
    date("split.train_start", &RunConfig::train_period, &DateRange::first);
    date("split.train_end", &RunConfig::train_period, &DateRange::last);
    date("split.val_start", &RunConfig::val_period, &DateRange::first);
    date("split.val_end", &RunConfig::val_period, &DateRange::last);
    date("split.test_start", &RunConfig::test_period, &DateRange::first);
    date("split.test_end", &RunConfig::test_period, &DateRange::last);
    model_uint("model.window", &ModelConfig::window);
    model_uint("model.num_layers", &ModelConfig::num_layers);
    model_uint("model.expansion_steps", &ModelConfig::expansion_steps);
    model_uint("model.embed_dim", &ModelConfig::embed_dim);
    model_double("model.decay", &ModelConfig::decay);
    model_uint("model.num_groups", &ModelConfig::num_groups);
    model_double("model.activation_slope", &ModelConfig::activation_slope);
    f.push_back({"model.normalized_adjacency", K::Bool, false,
                 [](RunConfig& c, const json& j) { c.model.normalized_adjacency = as_bool("model.normalized_adjacency", j); },
                 [](const RunConfig& c) { return json(c.model.normalized_adjacency); }});
    train_double("train.learning_rate", &TrainConfig::learning_rate);
    train_uint("train.epochs", &TrainConfig::epochs);
    train_uint("train.batch_size", &TrainConfig::batch_size);
    train_double("train.beta1", &TrainConfig::beta1);
    train_double("train.beta2", &TrainConfig::beta2);
    train_double("train.epsilon", &TrainConfig::epsilon);
    f.push_back({"seeds", K::SeedList, false,
                 [](RunConfig& c, const json& j) {
                   if (!j.is_array() || j.empty()) throw bad_value("seeds", "a nonempty list of integers", j);
                   c.seeds.clear();
                   for (const auto& s : j) c.seeds.push_back(as_uint("seeds", s));
                 },
                 [](const RunConfig& c) { return json(c.seeds); }});
    return f;
  }();
  return table;
}

inline std::string env_name(const std::string& key) {
  std::string out = "MGDPR_";
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

// Environment strings are typed by the key they override.
inline json env_value(const Field& f, const std::string& text) {
  if (f.kind == Kind::Path || f.kind == Kind::String || f.kind == Kind::Date) return json(text);
  if (f.kind == Kind::SeedList) {
    json arr = json::array();
    for (auto part : io::split(text)) {
      auto v = io::parse_int(io::trim(part));
      if (!v || *v < 0) throw ConfigError(env_name(f.key) + ": '" + text + "' is not a comma-separated seed list");
      arr.push_back(static_cast<std::uint64_t>(*v));
    }
    return arr;
  }
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    throw ConfigError(env_name(f.key) + ": cannot parse '" + text + "'");
  }
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  if (!(c.coverage > 0.0 && c.coverage <= 1.0)) throw ConfigError("data.coverage must be in (0, 1]");
  auto check_range = [](const DateRange& r, const char* name) {
    if (r.last < r.first) throw ConfigError(std::string("split.") + name + " ends before it starts");
  };
  check_range(c.train_period, "train");
  check_range(c.val_period, "val");
  check_range(c.test_period, "test");
  if (!(c.train_period.last < c.val_period.first) || !(c.val_period.last < c.test_period.first)) {
    throw ConfigError("split periods must be disjoint and ordered train < val < test");
  }
  if (c.model.num_relations != kNumIndicators) throw ConfigError("model.num_relations must be 5");
  auto m = c.model;
  m.num_stocks = 1;
  m.validate();
  if (!(c.train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0) || !(c.train.beta2 >= 0.0 && c.train.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(c.train.epsilon > 0.0)) throw ConfigError("train.epsilon must be positive");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
}

// Builds a config from a flat JSON object, then applies MGDPR_* overrides
// from `getenv` (pass nullptr to ignore the environment).
inline RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  const std::function<const char*(const char*)>& getenv = ::getenv) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const auto& f : detail::fields()) known = known || f.key == key;
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig c;
  for (const auto& f : detail::fields()) {
    const char* env = getenv ? getenv(detail::env_name(f.key).c_str()) : nullptr;
    if (env) {
      f.set(c, detail::env_value(f, env));
    } else if (j.contains(f.key)) {
      f.set(c, j.at(f.key));
    } else if (f.required) {
      throw ConfigError("missing required config key '" + f.key + "'");
    }
  }
  for (auto* p : {&c.data_dir, &c.cache_dir, &c.output_dir}) {
    if (p->is_relative()) *p = base_dir / *p;
    *p = p->lexically_normal();
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::function<const char*(const char*)>& getenv = ::getenv) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j, std::filesystem::absolute(path).parent_path(), getenv);
}

// Every key with its effective value; loading this reproduces the run.
inline nlohmann::ordered_json resolved_config(const RunConfig& c) {
  nlohmann::ordered_json out;
  for (const auto& f : detail::fields()) out[f.key] = f.get(c);
  return out;
}

// Hash of everything except filesystem locations.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::ordered_json j = resolved_config(c);
  for (const auto& f : detail::fields()) {
    if (f.kind == detail::Kind::Path) j.erase(f.key);
  }
  return io::hex64(io::fnv1a(j.dump()));
}

}  // namespace mgdpr
