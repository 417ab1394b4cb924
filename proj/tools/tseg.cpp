#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "tseg/cbir.hpp"
#include "tseg/checkpoint.hpp"
#include "tseg/dataset.hpp"
#include "tseg/gradcheck_suite.hpp"
#include "tseg/png_io.hpp"
#include "tseg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct GendataArgs {
  int n = 0;
  int size = 64;
  std::uint64_t seed = 0;
  double split = 0.8;
  int octaves = tseg::kDefaultOctaves;
  std::string out;
  bool overwrite = false;
};

void run_gendata(const GendataArgs& args) {
  tseg::DatasetParams params{args.n, args.seed, args.size, args.split,
                             args.octaves};
  const tseg::Manifest manifest =
      tseg::write_dataset(params, args.out, args.overwrite);
  const std::size_t train = manifest.ids("train").size();
  const std::size_t val = manifest.ids("val").size();
  std::cout << "wrote " << manifest.tiles.size() << " tiles (" << train
            << " train, " << val << " val) of size " << args.size << "x"
            << args.size << " under " << args.out << "\n";
}

void run_train(const tseg::TrainConfig& config) {
  const tseg::TrainResult result = tseg::train(config, &std::cout);
  std::cout << "best val dice " << result.best_val_dice << " at epoch "
            << result.best_epoch << "\n";
  std::cout << "metrics log: " << result.log_path << "\n";
  std::cout << "checkpoints: " << result.final_checkpoint << " (final), "
            << result.best_checkpoint << " (best)\n";
}

void run_eval(const std::string& ckpt_path, const std::string& root,
              const std::string& split, int batch_size) {
  tseg::Checkpoint ckpt = tseg::load_checkpoint(ckpt_path);
  const bool use_height = ckpt.model.config.in_channels == 4;
  const tseg::EvalReport report =
      tseg::evaluate_split(ckpt.model, root, split, use_height, batch_size);
  std::cout << std::setprecision(6);
  std::cout << "split: " << split << "\n";
  std::cout << "tiles: " << report.tiles << "\n";
  for (int c = 0; c < tseg::kNumClasses; ++c)
    std::cout << "dice." << tseg::class_name(c) << ": "
              << report.per_class_dice[static_cast<std::size_t>(c)] << "\n";
  std::cout << "macro_dice: " << report.macro_dice << "\n";
  std::cout << "pixel_accuracy: " << report.accuracy << "\n";
}

tseg::TensorF load_query_input(const tseg::UNetModel<float>& model,
                               const std::string& image_path,
                               const std::string& height_path) {
  const tseg::TensorF landform =
      tseg::image_to_tensor(tseg::png_read_file(image_path));
  tseg::check_arg(landform.dim(0) == 3,
                  tseg::cat("input '", image_path, "' must be an RGB image"));
  if (model.config.in_channels == 3) return landform;
  tseg::check_arg(!height_path.empty(),
                  "this checkpoint was trained with a height channel; pass "
                  "--height <png>");
  const tseg::TensorF height =
      tseg::image_to_tensor(tseg::png_read_file(height_path));
  tseg::check_arg(height.dim(0) == 1,
                  tseg::cat("height map '", height_path,
                            "' must be grayscale"));
  tseg::check_arg(height.dim(1) == landform.dim(1) &&
                      height.dim(2) == landform.dim(2),
                  "landform and height images disagree on size");
  tseg::TensorF input({4, landform.dim(1), landform.dim(2)});
  std::copy(landform.data(), landform.data() + landform.numel(), input.data());
  std::copy(height.data(), height.data() + height.numel(),
            input.data() + landform.numel());
  return input;
}

void run_segment(const std::string& ckpt_path, const std::string& image_path,
                 const std::string& height_path, const std::string& out_stem) {
  tseg::Checkpoint ckpt = tseg::load_checkpoint(ckpt_path);
  tseg::UNetModel<float>& model = ckpt.model;
  const tseg::TensorF input = load_query_input(model, image_path, height_path);

  const int multiple = 1 << model.config.depth;
  tseg::check_arg(input.dim(1) % multiple == 0 && input.dim(2) % multiple == 0,
                  tseg::cat("segment: input size ", input.dim(1), "x",
                            input.dim(2), " must be a multiple of 2^depth = ",
                            multiple));
  tseg::check_arg(input.dim(1) == input.dim(2),
                  "segment: input must be square");
  model.config.input_size = input.dim(1);  // conv weights are size-agnostic

  tseg::TensorF batch({1, input.dim(0), input.dim(1), input.dim(2)},
                      input.vec());
  tseg::Rng rng(0);
  auto [probs, trace] = tseg::unet_forward(model, batch, tseg::Mode::eval, rng);
  const tseg::MaskGrid mask = tseg::class_assign(tseg::slice_image(probs, 0));

  const fs::path mask_path = out_stem + "_mask.png";
  const fs::path color_path = out_stem + "_color.png";
  tseg::png_write_file(mask_path, tseg::mask_to_image(mask));
  tseg::png_write_file(color_path, tseg::mask_to_rgb(mask));

  std::int64_t counts[tseg::kNumClasses] = {};
  for (std::int64_t i = 0; i < mask.numel(); ++i) ++counts[mask[i]];
  std::cout << std::setprecision(4);
  for (int c = 0; c < tseg::kNumClasses; ++c)
    std::cout << tseg::class_name(c) << ": "
              << static_cast<double>(counts[c]) /
                     static_cast<double>(mask.numel())
              << "\n";
  std::cout << "wrote " << mask_path.string() << " and " << color_path.string()
            << "\n";
}

void run_index(const std::string& ckpt_path, const std::string& root,
               const std::string& split, const std::string& out_path) {
  tseg::Checkpoint ckpt = tseg::load_checkpoint(ckpt_path);
  const bool use_height = ckpt.model.config.in_channels == 4;
  const tseg::LoadedSplit data = tseg::load_split(root, split, use_height);
  std::vector<std::pair<std::string, tseg::TensorF>> images;
  for (std::size_t i = 0; i < data.ids.size(); ++i)
    images.emplace_back(data.ids[i], data.inputs[i]);
  const tseg::HashIndex index = tseg::build_index(ckpt.model, images);
  tseg::save_index(index, out_path);
  std::cout << "indexed " << index.entries.size() << " tiles (" << index.bits
            << "-bit codes) into " << out_path << "\n";
}

void run_retrieve(const std::string& ckpt_path, const std::string& index_path,
                  const std::string& image_path, const std::string& height_path,
                  int k) {
  tseg::Checkpoint ckpt = tseg::load_checkpoint(ckpt_path);
  const tseg::HashIndex index = tseg::load_index(index_path);
  const tseg::TensorF input =
      load_query_input(ckpt.model, image_path, height_path);
  const auto ranked = tseg::query_index(index, ckpt.model, input, k);
  for (std::size_t i = 0; i < ranked.size(); ++i)
    std::cout << i + 1 << " " << ranked[i].first << " " << ranked[i].second
              << "\n";
}

int run_gradcheck() {
  const std::vector<tseg::SuiteResult> results = tseg::run_gradcheck_suite();
  bool ok = true;
  for (const tseg::SuiteResult& r : results) {
    double worst = 0.0;
    bool finite = true;
    for (const auto& e : r.report.entries) {
      worst = std::max(worst, e.max_rel_err);
      finite = finite && e.finite;
    }
    ok = ok && r.report.passed;
    std::cout << (r.report.passed ? "PASS" : "FAIL") << " " << r.op
              << "  max rel err " << std::setprecision(3) << worst
              << " (tolerance " << r.report.tolerance << ")"
              << (finite ? "" : " [non-finite gradient]") << "\n";
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"U-Net landform segmentation over synthetic terrain tiles"};
  app.require_subcommand(1);

  GendataArgs gen;
  CLI::App* gendata = app.add_subcommand(
      "gendata", "Generate a deterministic synthetic tile dataset");
  gendata->add_option("--n", gen.n, "Number of tiles")->required();
  gendata->add_option("--size", gen.size, "Tile edge length")
      ->capture_default_str();
  gendata->add_option("--seed", gen.seed, "Generator seed")
      ->capture_default_str();
  gendata->add_option("--split", gen.split, "Train fraction")
      ->capture_default_str();
  gendata->add_option("--octaves", gen.octaves, "Noise octaves")
      ->capture_default_str();
  gendata->add_option("--out", gen.out, "Dataset root directory")->required();
  gendata->add_flag("--overwrite", gen.overwrite,
                    "Allow regenerating into a non-empty directory");

  // A config file, when given, seeds the training defaults; explicit flags
  // still override it. Loaded before the parse so every option sees it.
  tseg::TrainConfig train_cfg;
  std::string train_config_path;
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") train_config_path = argv[i + 1];
  if (!train_config_path.empty()) {
    try {
      tseg::apply_train_config_file(train_cfg, train_config_path);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }

  CLI::App* train = app.add_subcommand("train", "Train a U-Net");
  std::string config_path_display;
  train->add_option("--config", config_path_display,
                    "Plain-text key=value file; keys match the option names");
  train->add_option("--dataset_root", train_cfg.dataset_root, "Dataset root");
  train->add_option("--depth", train_cfg.depth)->capture_default_str();
  train->add_option("--base_filters", train_cfg.base_filters)
      ->capture_default_str();
  train->add_option("--in_channels", train_cfg.in_channels)
      ->capture_default_str();
  train->add_option("--n_classes", train_cfg.n_classes)->capture_default_str();
  train->add_option("--dropout_rate", train_cfg.dropout_rate)
      ->capture_default_str();
  train->add_option("--learning_rate", train_cfg.learning_rate)
      ->capture_default_str();
  train->add_option("--beta1", train_cfg.beta1)->capture_default_str();
  train->add_option("--beta2", train_cfg.beta2)->capture_default_str();
  train->add_option("--epsilon", train_cfg.epsilon)->capture_default_str();
  train->add_option("--batch_size", train_cfg.batch_size)
      ->capture_default_str();
  train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  train->add_option("--seed", train_cfg.seed)->capture_default_str();
  train->add_flag("--deterministic,!--no-deterministic",
                  train_cfg.deterministic, "Bit-reproducible runs")
      ->capture_default_str();
  train->add_flag("--use_height,!--no-use_height", train_cfg.use_height,
                  "Feed the height map as a fourth input channel")
      ->capture_default_str();
  train->add_flag("--use_batchnorm,!--no-use_batchnorm",
                  train_cfg.use_batchnorm)
      ->capture_default_str();
  train->add_option("--checkpoint_out", train_cfg.checkpoint_out,
                    "Final checkpoint path (best gets a _best suffix)")
      ->capture_default_str();
  train->add_option("--log_path", train_cfg.log_path,
                    "Metrics CSV (defaults next to the checkpoint)");

  std::string eval_ckpt, eval_root, eval_split = "val";
  int eval_batch = 8;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--dataset_root", eval_root)->required();
  eval->add_option("--split", eval_split)
      ->check(CLI::IsMember({"train", "val"}))
      ->capture_default_str();
  eval->add_option("--batch_size", eval_batch)->capture_default_str();

  std::string seg_ckpt, seg_input, seg_height, seg_out;
  CLI::App* segment =
      app.add_subcommand("segment", "Segment one landform image");
  segment->add_option("--checkpoint", seg_ckpt)->required();
  segment->add_option("--input", seg_input, "Landform RGB png")->required();
  segment->add_option("--height", seg_height, "Height map png");
  segment->add_option("--out", seg_out, "Output stem")->required();

  std::string idx_ckpt, idx_root, idx_split = "train", idx_out;
  CLI::App* index =
      app.add_subcommand("index", "Build a CBIR hash index over a split");
  index->add_option("--checkpoint", idx_ckpt)->required();
  index->add_option("--dataset_root", idx_root)->required();
  index->add_option("--split", idx_split)
      ->check(CLI::IsMember({"train", "val"}))
      ->capture_default_str();
  index->add_option("--out", idx_out, "Index file path")->required();

  std::string ret_ckpt, ret_index, ret_query, ret_height;
  int ret_k = 5;
  CLI::App* retrieve =
      app.add_subcommand("retrieve", "Rank indexed tiles by Hamming distance");
  retrieve->add_option("--checkpoint", ret_ckpt)->required();
  retrieve->add_option("--index", ret_index)->required();
  retrieve->add_option("--query", ret_query, "Query landform png")->required();
  retrieve->add_option("--height", ret_height, "Query height png");
  retrieve->add_option("--k", ret_k)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference checks for every layer op");

  try {
    app.parse(argc, argv);
    if (*gendata) run_gendata(gen);
    if (*train) {
      if (train_cfg.dataset_root.empty())
        throw CLI::RequiredError("--dataset_root (flag or config file)");
      run_train(train_cfg);
    }
    if (*eval) run_eval(eval_ckpt, eval_root, eval_split, eval_batch);
    if (*segment) run_segment(seg_ckpt, seg_input, seg_height, seg_out);
    if (*index) run_index(idx_ckpt, idx_root, idx_split, idx_out);
    if (*retrieve) run_retrieve(ret_ckpt, ret_index, ret_query, ret_height, ret_k);
    if (*gradcheck) return run_gradcheck();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0, usage errors exit 1
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
