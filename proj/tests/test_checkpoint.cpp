#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tseg/checkpoint.hpp"
#include "tseg/rng.hpp"

namespace fs = std::filesystem;
using namespace tseg;

namespace {

UNetModel<float> make_model(std::uint64_t seed, bool warm = true) {
  UNetConfig cfg;
  cfg.depth = 2;
  cfg.base_filters = 4;
  cfg.in_channels = 3;
  cfg.n_classes = 4;
  cfg.input_size = 16;
  UNetModel<float> model = build_unet<float>(cfg, seed);
  if (warm) {
    Rng rng(1);
    TensorF batch({2, 3, 16, 16});
    for (std::int64_t i = 0; i < batch.numel(); ++i)
      batch[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    Rng fwd(2);
    unet_forward(model, batch, Mode::train, fwd);
  }
  return model;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every tensor bit for bit") {
  UNetModel<float> model = make_model(99);
  const fs::path path = fs::temp_directory_path() / "tseg_ckpt_rt.ckpt";
  const CheckpointMeta meta{12, 99, 0xDEADBEEFull};
  save_checkpoint(path, model, meta);

  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta.epoch == 12);
  CHECK(loaded.meta.seed == 99);
  CHECK(loaded.meta.metric_digest == 0xDEADBEEFull);
  CHECK(loaded.model.param_names == model.param_names);
  for (const std::string& name : model.param_names)
    CHECK(loaded.model.params.at(name).vec() == model.params.at(name).vec());
  for (const std::string& name : model.bn_names) {
    CHECK(loaded.model.bn.at(name).running_mean.vec() ==
          model.bn.at(name).running_mean.vec());
    CHECK(loaded.model.bn.at(name).running_var.vec() ==
          model.bn.at(name).running_var.vec());
    CHECK(loaded.model.bn.at(name).initialized);
  }
  CHECK_FALSE(loaded.adam.has_value());

  // save -> load -> save is byte-identical
  const fs::path path2 = fs::temp_directory_path() / "tseg_ckpt_rt2.ckpt";
  save_checkpoint(path2, loaded.model, loaded.meta);
  CHECK(read_bytes(path) == read_bytes(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("checkpoint carries adam state for resume") {
  UNetModel<float> model = make_model(5);
  AdamConfig cfg;
  cfg.alpha = 0.01;
  AdamState<float> adam = AdamState<float>::init(model.params, cfg);

  // advance the optimizer a few steps
  GradMap<float> grads;
  for (const std::string& name : model.param_names)
    grads.emplace(name, TensorF::full(model.params.at(name).shape(), 0.125f));
  for (int i = 0; i < 3; ++i) adam_step(model.params, grads, adam);
  CHECK(adam.t == 3);

  const fs::path path = fs::temp_directory_path() / "tseg_ckpt_adam.ckpt";
  save_checkpoint(path, model, CheckpointMeta{3, 5, 0}, &adam);
  Checkpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.adam.has_value());
  CHECK(loaded.adam->t == 3);
  CHECK(loaded.adam->cfg.alpha == 0.01);
  for (const std::string& name : model.param_names) {
    CHECK(loaded.adam->m.at(name).vec() == adam.m.at(name).vec());
    CHECK(loaded.adam->v.at(name).vec() == adam.v.at(name).vec());
  }

  // resuming continues the step counter monotonically
  adam_step(loaded.model.params, grads, *loaded.adam);
  CHECK(loaded.adam->t == 4);
  fs::remove(path);
}

TEST_CASE("checkpoint rejects corruption without partial state") {
  UNetModel<float> model = make_model(7);
  const fs::path path = fs::temp_directory_path() / "tseg_ckpt_bad.ckpt";
  save_checkpoint(path, model, CheckpointMeta{});
  const std::vector<char> good = read_bytes(path);

  // flipped magic byte
  std::vector<char> bad = good;
  bad[3] ^= 0x40;
  write_bytes(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                       std::runtime_error);

  // unsupported version
  bad = good;
  bad[8] = 42;
  write_bytes(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                       std::runtime_error);

  // truncation mid-tensor
  bad.assign(good.begin(), good.begin() + static_cast<long>(good.size() * 3 / 4));
  write_bytes(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                       std::runtime_error);

  // trailing garbage
  bad = good;
  bad.push_back('x');
  write_bytes(path, bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"),
                       std::runtime_error);
  fs::remove(path);
}

TEST_CASE("checkpoint save leaves no partial file behind on rename") {
  UNetModel<float> model = make_model(8);
  const fs::path path = fs::temp_directory_path() / "tseg_ckpt_atomic.ckpt";
  save_checkpoint(path, model, CheckpointMeta{});
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
  fs::remove(path);
}

TEST_CASE("eval metrics are identical before save and after load") {
  UNetModel<float> model = make_model(21);
  TensorF batch({1, 3, 16, 16});
  Rng rng(4);
  for (std::int64_t i = 0; i < batch.numel(); ++i)
    batch[i] = static_cast<float>(rng.uniform(0.0, 1.0));

  Rng e1(0);
  const TensorF before = unet_forward(model, batch, Mode::eval, e1).first;

  const fs::path path = fs::temp_directory_path() / "tseg_ckpt_eval.ckpt";
  save_checkpoint(path, model, CheckpointMeta{});
  Checkpoint loaded = load_checkpoint(path);
  Rng e2(0);
  const TensorF after =
      unet_forward(loaded.model, batch, Mode::eval, e2).first;
  CHECK(before.vec() == after.vec());
  fs::remove(path);
}
