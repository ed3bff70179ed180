#pragma once

// Parameter checkpoints.
//
//   bytes 0..7    "MGDPRCK1"
//   bytes 8..15   header length H, uint64 little-endian
//   next H bytes  JSON: {"config": {...}, "tensors": [{name, shape, offset, count}]}
//   remainder     tensor data, float64 little-endian; offsets are byte offsets
//                 into this section

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdpr/error.hpp"
#include "mgdpr/io.hpp"
#include "mgdpr/model.hpp"

namespace mgdpr {

inline constexpr char kCheckpointMagic[9] = "MGDPRCK1";

inline nlohmann::ordered_json model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["num_stocks"] = c.num_stocks;
  j["window"] = c.window;
  j["num_relations"] = c.num_relations;
  j["num_layers"] = c.num_layers;
  j["expansion_steps"] = c.expansion_steps;
  j["embed_dim"] = c.embed_dim;
  j["decay"] = c.decay;
  j["num_groups"] = c.num_groups;
  j["activation_slope"] = c.activation_slope;
  j["normalized_adjacency"] = c.normalized_adjacency;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_stocks = j.at("num_stocks").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.num_relations = j.at("num_relations").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.expansion_steps = j.at("expansion_steps").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.decay = j.at("decay").get<double>();
  c.num_groups = j.at("num_groups").get<std::size_t>();
  c.activation_slope = j.at("activation_slope").get<double>();
  c.normalized_adjacency = j.at("normalized_adjacency").get<bool>();
  return c;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | static_cast<unsigned char>(p[b]);
  return v;
}

}  // namespace detail

inline std::string checkpoint_bytes(const ModelConfig& cfg, const ModelParams& params) {
  nlohmann::ordered_json header;
  header["config"] = model_config_json(cfg);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::string data;
  for (const auto& [name, var] : params.named()) {
    const Tensor& t = var.value();
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", data.size()}, {"count", t.size()}});
    for (double v : t.values()) detail::put_u64(data, std::bit_cast<std::uint64_t>(v));
  }
  header["tensors"] = tensors;
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, h.size());
  return out + h + data;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParams& params) {
  io::write_file(path, checkpoint_bytes(cfg, params));
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

// Parses and validates a checkpoint. When `expected` is given, its
// shape-determining fields must match the stored configuration.
inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& where,
                                   const ModelConfig* expected = nullptr) {
  auto fail = [&](const std::string& why) { return CheckpointError(where + ": " + why); };
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic) != 0) throw fail("not a checkpoint (bad magic)");
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw fail("header length " + std::to_string(hlen) + " exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("corrupt header: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(header.at("config"));
    ck.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("corrupt header config: ") + e.what());
  } catch (const ConfigError& e) {
    throw fail(std::string("invalid stored config: ") + e.what());
  }
  if (expected) {
    const auto& e = *expected;
    auto check = [&](const char* name, std::size_t want, std::size_t got) {
      if (want != got) {
        throw fail(std::string("model.") + name + " is " + std::to_string(want) + " but the checkpoint has " +
                   std::to_string(got));
      }
    };
    check("num_stocks", e.num_stocks, ck.config.num_stocks);
    check("window", e.window, ck.config.window);
    check("num_relations", e.num_relations, ck.config.num_relations);
    check("num_layers", e.num_layers, ck.config.num_layers);
    check("expansion_steps", e.expansion_steps, ck.config.expansion_steps);
    check("embed_dim", e.embed_dim, ck.config.embed_dim);
  }
  ck.params = init_params(ck.config, 0);
  const auto slots = ck.params.named();
  const char* data = bytes.data() + 16 + hlen;
  const std::size_t data_size = bytes.size() - 16 - hlen;
  try {
    const auto& tensors = header.at("tensors");
    if (!tensors.is_array() || tensors.size() != slots.size()) {
      throw fail("expected " + std::to_string(slots.size()) + " tensors, header lists " +
                 std::to_string(tensors.is_array() ? tensors.size() : 0));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& [name, var] = slots[i];
      const auto& entry = tensors[i];
      if (entry.at("name").get<std::string>() != name) {
        throw fail("tensor " + std::to_string(i) + " is '" + entry.at("name").get<std::string>() + "', expected '" +
                   name + "'");
      }
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != var.shape()) {
        throw fail("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " + shape_str(var.shape()));
      }
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (count != shape_size(shape) || offset % 8 != 0 || offset > data_size || count > (data_size - offset) / 8) {
        throw fail("tensor '" + name + "' points outside the data section");
      }
      std::vector<double> values(count);
      for (std::size_t k = 0; k < count; ++k) values[k] = std::bit_cast<double>(detail::get_u64(data + offset + 8 * k));
      ad::Var slot = var;
      slot.assign(Tensor(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("corrupt tensor table: ") + e.what());
  }
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  return parse_checkpoint(io::read_file(path), path.string(), expected);
}

}  // namespace mgdpr
