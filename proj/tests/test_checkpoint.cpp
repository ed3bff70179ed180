#include <gtest/gtest.h>

#include <random>

#include "mgdpr/checkpoint.hpp"
#include "support/random_tensor.hpp"
#include "support/temp_dir.hpp"

using namespace mgdpr;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.num_stocks = 3;
  c.window = 4;
  c.num_relations = 2;
  c.num_layers = 2;
  c.expansion_steps = 2;
  c.embed_dim = 4;
  c.num_groups = 2;
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  auto cfg = small();
  auto params = init_params(cfg, 5);
  std::mt19937_64 rng(1);
  for (auto& v : params.all()) {
    ad::Var w = v;
    w.assign(mgdpr::testing::random_tensor(rng, w.shape(), -1e3, 1e3));
  }
  const std::string bytes = checkpoint_bytes(cfg, params);
  auto ck = parse_checkpoint(bytes, "mem", &cfg);
  EXPECT_EQ(ck.params.snapshot(), params.snapshot());
  EXPECT_EQ(model_config_json(ck.config), model_config_json(cfg));
  EXPECT_EQ(checkpoint_bytes(ck.config, ck.params), bytes);
}

TEST(Checkpoint, LayoutIsLittleEndianWithJsonHeader) {
  auto cfg = small();
  auto params = init_params(cfg, 5);
  const std::string bytes = checkpoint_bytes(cfg, params);
  ASSERT_EQ(bytes.substr(0, 8), "MGDPRCK1");
  std::uint64_t hlen = 0;
  for (int b = 7; b >= 0; --b) hlen = hlen * 256 + static_cast<unsigned char>(bytes[8 + b]);
  auto header = nlohmann::json::parse(bytes.substr(16, hlen));
  const auto& first = header["tensors"][0];
  EXPECT_EQ(first["name"], "embed.weight");
  EXPECT_EQ(first["shape"], nlohmann::json::array({2, 4}));
  EXPECT_EQ(first["offset"], 0);
  // first double of the data section, byte by byte
  std::uint64_t raw = 0;
  for (int b = 7; b >= 0; --b) raw = (raw << 8) | static_cast<unsigned char>(bytes[16 + hlen + b]);
  EXPECT_EQ(std::bit_cast<double>(raw), params.embed_w.value()[0]);
  std::size_t total = 0;
  for (const auto& t : header["tensors"]) total += t["count"].get<std::size_t>();
  EXPECT_EQ(bytes.size(), 16 + hlen + 8 * total);
}

TEST(Checkpoint, ConfigMismatchIsCheckpointError) {
  auto cfg = small();
  const std::string bytes = checkpoint_bytes(cfg, init_params(cfg, 1));
  auto other = cfg;
  other.embed_dim = 8;
  try {
    parse_checkpoint(bytes, "mem", &other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("embed_dim"), std::string::npos);
  }
  other = cfg;
  other.num_stocks = 4;
  EXPECT_THROW(parse_checkpoint(bytes, "mem", &other), CheckpointError);
}

TEST(Checkpoint, CorruptionIsCheckpointError) {
  auto cfg = small();
  const std::string bytes = checkpoint_bytes(cfg, init_params(cfg, 1));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad, "mem"), CheckpointError);
  bad = bytes;
  bad[20] = '#';  // inside the JSON header
  EXPECT_THROW(parse_checkpoint(bad, "mem"), CheckpointError);
  bad = bytes;
  bad[8] = static_cast<char>(0xff);
  bad[14] = static_cast<char>(0x7f);
  EXPECT_THROW(parse_checkpoint(bad, "mem"), CheckpointError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 8), "mem"), CheckpointError);
  EXPECT_THROW(parse_checkpoint("", "mem"), CheckpointError);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  mgdpr::testing::TempDir dir;
  auto cfg = small();
  auto params = init_params(cfg, 2);
  save_checkpoint(dir.path() / "sub" / "ck.bin", cfg, params);
  auto ck = load_checkpoint(dir.path() / "sub" / "ck.bin", &cfg);
  EXPECT_EQ(ck.params.snapshot(), params.snapshot());
  EXPECT_THROW(load_checkpoint(dir.path() / "nope.bin"), CheckpointError);
}
