#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tseg/rng.hpp"
#include "tseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace tseg;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TrainConfig small_train_config(const fs::path& root, const fs::path& out_dir) {
  TrainConfig cfg;
  cfg.dataset_root = root.string();
  cfg.depth = 1;
  cfg.base_filters = 4;
  cfg.in_channels = 4;
  cfg.n_classes = 4;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.seed = 11;
  cfg.checkpoint_out = (out_dir / "model.ckpt").string();
  return cfg;
}

}  // namespace

TEST_CASE("train config validation fires before any work") {
  TrainConfig cfg;
  cfg.dataset_root = "";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = TrainConfig{};
  cfg.dataset_root = "x";
  cfg.in_channels = 3;  // contradicts use_height=true
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("in_channels"),
                       std::invalid_argument);

  cfg = TrainConfig{};
  cfg.dataset_root = "x";
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = TrainConfig{};
  cfg.dataset_root = "/nonexistent/tseg_root";
  CHECK_THROWS_AS(train(cfg), std::runtime_error);  // no partial outputs
}

TEST_CASE("one_hot_targets places a single one per pixel") {
  MaskGrid m({2, 2}, {0, 3, 1, 2});
  const TensorF t = one_hot_targets({&m}, 4);
  CHECK(t.shape() == std::vector<int>{1, 4, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      float sum = 0.0f;
      for (int c = 0; c < 4; ++c) sum += t.at(0, c, y, x);
      CHECK(sum == 1.0f);
      CHECK(t.at(0, m.at(y, x), y, x) == 1.0f);
    }
  MaskGrid bad({1, 1}, {7});
  CHECK_THROWS_AS(one_hot_targets({&bad}, 4), std::invalid_argument);
}

TEST_CASE("slice_image extracts one CHW sample") {
  TensorF batch({2, 3, 2, 2});
  for (std::int64_t i = 0; i < batch.numel(); ++i)
    batch[i] = static_cast<float>(i);
  const TensorF s1 = slice_image(batch, 1);
  CHECK(s1.shape() == std::vector<int>{3, 2, 2});
  CHECK(s1[0] == 12.0f);
  CHECK_THROWS_AS(slice_image(batch, 2), std::invalid_argument);
}

TEST_CASE("evaluate_masks on ground truth vs itself is perfect") {
  Rng rng(3);
  std::vector<MaskGrid> masks;
  for (int i = 0; i < 5; ++i) {
    MaskGrid m({8, 8});
    for (std::int64_t j = 0; j < m.numel(); ++j)
      m[j] = static_cast<std::uint8_t>(rng.below(4));
    masks.push_back(std::move(m));
  }
  const EvalReport report = evaluate_masks(masks, masks);
  CHECK(report.macro_dice == 1.0);
  CHECK(report.accuracy == 1.0);
  for (double d : report.per_class_dice) CHECK(d == 1.0);
  CHECK(report.tiles == 5);

  CHECK_THROWS_AS(evaluate_masks({}, {}), std::invalid_argument);
}

TEST_CASE("training produces logs, checkpoints and deterministic reruns") {
  TempDir data("tseg_trainer_data");
  TempDir out_a("tseg_trainer_out_a");
  TempDir out_b("tseg_trainer_out_b");
  write_dataset({10, 3, 16, 0.8, 4}, data.path / "ds", false);

  TrainConfig cfg = small_train_config(data.path / "ds", out_a.path);
  const TrainResult result = train(cfg);
  CHECK(result.rows.size() == 2);
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(fs::exists(result.best_checkpoint));

  const std::string log = read_text(result.log_path);
  CHECK(log.starts_with(kMetricsHeader));
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);  // header + 2 rows

  // checkpoints load and carry the trained config
  const Checkpoint final_ckpt = load_checkpoint(result.final_checkpoint);
  CHECK(final_ckpt.model.config.depth == 1);
  CHECK(final_ckpt.adam.has_value());
  CHECK(final_ckpt.adam->t == 2 * 2);  // 2 epochs x ceil(8/4) steps

  // identical config + seed reproduce the run bit for bit
  TrainConfig cfg_b = small_train_config(data.path / "ds", out_b.path);
  const TrainResult result_b = train(cfg_b);
  CHECK(read_text(result_b.log_path) == log);
  CHECK(read_bytes(result_b.final_checkpoint) ==
        read_bytes(result.final_checkpoint));

  // a different seed diverges
  TrainConfig cfg_c = small_train_config(data.path / "ds", out_b.path);
  cfg_c.seed = 12;
  cfg_c.checkpoint_out = (out_b.path / "other.ckpt").string();
  const TrainResult result_c = train(cfg_c);
  CHECK(read_text(result_c.log_path) != log);
}

TEST_CASE("eval metrics match an independent per-tile recomputation") {
  TempDir data("tseg_trainer_xcheck");
  TempDir out("tseg_trainer_xcheck_out");
  write_dataset({10, 21, 16, 0.8, 4}, data.path / "ds", false);
  TrainConfig cfg = small_train_config(data.path / "ds", out.path);
  cfg.epochs = 1;
  train(cfg);

  Checkpoint ckpt = load_checkpoint(cfg.checkpoint_out);
  const EvalReport report =
      evaluate_split(ckpt.model, data.path / "ds", "val", true, 4);

  // independent route: single-image forwards, per-pixel tallies
  const LoadedSplit val = load_split(data.path / "ds", "val", true);
  std::int64_t inter[kNumClasses] = {}, pred_n[kNumClasses] = {},
               true_n[kNumClasses] = {};
  std::int64_t agree = 0, total = 0;
  for (std::size_t i = 0; i < val.inputs.size(); ++i) {
    const TensorF& img = val.inputs[i];
    TensorF batch({1, img.dim(0), img.dim(1), img.dim(2)}, img.vec());
    Rng rng(0);
    auto [probs, trace] = unet_forward(ckpt.model, batch, Mode::eval, rng);
    const MaskGrid pred = class_assign(slice_image(probs, 0));
    const MaskGrid& truth = val.masks[i];
    for (std::int64_t p = 0; p < pred.numel(); ++p) {
      if (pred[p] == truth[p]) ++agree;
      ++total;
      ++pred_n[pred[p]];
      ++true_n[truth[p]];
      if (pred[p] == truth[p]) ++inter[pred[p]];
    }
  }
  double macro = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    const std::int64_t denom = pred_n[c] + true_n[c];
    const double dice =
        denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter[c]) / denom;
    CHECK(report.per_class_dice[static_cast<std::size_t>(c)] ==
          doctest::Approx(dice).epsilon(1e-15));
    macro += dice;
  }
  CHECK(report.macro_dice == doctest::Approx(macro / 4).epsilon(1e-15));
  CHECK(report.accuracy ==
        doctest::Approx(static_cast<double>(agree) / total).epsilon(1e-15));
}

TEST_CASE("training aborts on a diverged run naming epoch and step") {
  TempDir data("tseg_trainer_nan");
  TempDir out("tseg_trainer_nan_out");
  write_dataset({10, 5, 16, 0.8, 4}, data.path / "ds", false);
  TrainConfig cfg = small_train_config(data.path / "ds", out.path);
  cfg.learning_rate = 1e25;  // drives activations to overflow
  cfg.epochs = 3;
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("epoch"),
                       std::runtime_error);
}
