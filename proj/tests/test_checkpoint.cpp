// Checkpoint tests: bit-exact round trips at the tensor and whole-model
// level, config embedding, and corruption detection (magic, version,
// truncation, payload bit flips, entry-set mismatches).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qtseg/checkpoint.hpp"
#include "qtseg/errors.hpp"
#include "qtseg/rng.hpp"

using namespace qtseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_file(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / "qtseg_test_ckpt";
  fs::create_directories(dir);
  return dir / (tag + ".qtseg");
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a.shape(), b.shape())) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n = 4;
  cfg.input_size = 32;
  cfg.heads = 2;
  cfg.mlp_hidden = 16;
  return cfg;
}

}  // namespace

TEST_CASE("named tensors round-trip bit-exactly") {
  Rng rng(1);
  nn::NamedTensorList tensors;
  tensors.emplace_back("a.weight", Tensor::uniform({3, 4}, rng, -2.0f, 2.0f));
  tensors.emplace_back("a.bias", Tensor::normal({4}, rng, 0.0f, 3.0f));
  tensors.emplace_back("b.scale", Tensor::full({2, 2, 2}, -0.125f));

  const fs::path path = scratch_file("roundtrip");
  save_checkpoint(path.string(), ModelConfig{}, tensors);
  CheckpointData loaded = load_checkpoint(path.string());

  REQUIRE(loaded.tensors.size() == tensors.size());
  for (size_t i = 0; i < tensors.size(); ++i) {
    CHECK(loaded.tensors[i].first == tensors[i].first);
    CHECK(bitwise_equal(loaded.tensors[i].second, tensors[i].second));
  }
}

TEST_CASE("checkpoint embeds the configuration") {
  ModelConfig cfg = tiny_config();
  cfg.num_classes = 3;
  cfg.aggregation = Aggregation::kConcat;
  cfg.use_mlff = false;

  const fs::path path = scratch_file("config");
  save_checkpoint(path.string(), cfg, {});
  CheckpointData loaded = load_checkpoint(path.string());
  CHECK(loaded.config.n == 4);
  CHECK(loaded.config.num_classes == 3);
  CHECK(loaded.config.aggregation == Aggregation::kConcat);
  CHECK(loaded.config.use_mlff == false);
  CHECK(loaded.config.input_size == 32);
}

TEST_CASE("duplicate entry names are rejected at save time") {
  nn::NamedTensorList tensors;
  tensors.emplace_back("w", Tensor::zeros({2}));
  tensors.emplace_back("w", Tensor::zeros({2}));
  const fs::path path = scratch_file("dup");
  CHECK_THROWS_AS(save_checkpoint(path.string(), ModelConfig{}, tensors),
                  UsageError);
}

TEST_CASE("model forward is bit-identical after save and load") {
  ModelConfig cfg = tiny_config();
  QTSegModel model = QTSegModel::build(cfg);
  const fs::path path = scratch_file("model");
  save_model(path.string(), model);
  QTSegModel reloaded = load_model(path.string());

  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor image = Tensor::uniform({1, 3, 32, 32}, rng, 0.0f, 1.0f);
    CHECK(bitwise_equal(model.forward(image), reloaded.forward(image)));
  }
}

TEST_CASE("stored parameters are bit-identical after save and load") {
  QTSegModel model = QTSegModel::build(tiny_config());
  const fs::path path = scratch_file("params");
  save_model(path.string(), model);
  QTSegModel reloaded = load_model(path.string());

  nn::NamedTensorList before = model.named_parameters();
  nn::NamedTensorList after = reloaded.named_parameters();
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i].first == after[i].first);
    CHECK(bitwise_equal(before[i].second, after[i].second));
  }
}

TEST_CASE("bad magic is rejected") {
  QTSegModel model = QTSegModel::build(tiny_config());
  const fs::path path = scratch_file("magic");
  save_model(path.string(), model);

  std::vector<char> bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("version skew is rejected") {
  QTSegModel model = QTSegModel::build(tiny_config());
  const fs::path path = scratch_file("version");
  save_model(path.string(), model);

  std::vector<char> bytes = read_bytes(path);
  bytes[4] = 99;  // little-endian u32 version right after the magic
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("truncated files are rejected") {
  QTSegModel model = QTSegModel::build(tiny_config());
  const fs::path path = scratch_file("trunc");
  save_model(path.string(), model);

  std::vector<char> bytes = read_bytes(path);
  bytes.resize(bytes.size() - 11);
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);

  bytes.resize(3);  // even the magic is incomplete
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("payload corruption fails the checksum") {
  QTSegModel model = QTSegModel::build(tiny_config());
  const fs::path path = scratch_file("corrupt");
  save_model(path.string(), model);

  // The file tail is the last entry's payload; flip one bit there.
  std::vector<char> bytes = read_bytes(path);
  bytes[bytes.size() - 2] = static_cast<char>(bytes[bytes.size() - 2] ^ 0x10);
  write_bytes(path, bytes);
  CHECK_THROWS_AS(load_checkpoint(path.string()), IoError);
}

TEST_CASE("model loading rejects unknown, missing, and misshapen entries") {
  QTSegModel model = QTSegModel::build(tiny_config());
  nn::NamedTensorList tensors = model.named_parameters();
  nn::NamedTensorList buffers = model.named_buffers();
  tensors.insert(tensors.end(), buffers.begin(), buffers.end());

  const fs::path path = scratch_file("entries");

  SUBCASE("extra entry") {
    nn::NamedTensorList extra = tensors;
    extra.emplace_back("bogus.weight", Tensor::zeros({2, 2}));
    save_checkpoint(path.string(), model.config, extra);
    CHECK_THROWS_AS(load_model(path.string()), IoError);
  }
  SUBCASE("missing entry") {
    nn::NamedTensorList partial(tensors.begin(), tensors.end() - 1);
    save_checkpoint(path.string(), model.config, partial);
    CHECK_THROWS_AS(load_model(path.string()), IoError);
  }
  SUBCASE("shape mismatch") {
    nn::NamedTensorList wrong = tensors;
    wrong[0].second = Tensor::zeros({1, 1, 1, 1});
    save_checkpoint(path.string(), model.config, wrong);
    CHECK_THROWS_AS(load_model(path.string()), IoError);
  }
}

TEST_CASE("missing files surface as i/o errors") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.qtseg"), IoError);
  CHECK_THROWS_AS(save_checkpoint("/nonexistent/dir/x.qtseg", ModelConfig{}, {}),
                  IoError);
}
