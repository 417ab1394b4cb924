#include "tseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tseg/optim.hpp"
#include "tseg/rng.hpp"

namespace fs = std::filesystem;

namespace tseg {

void TrainConfig::validate() const {
  check_arg(!dataset_root.empty(), "train config: dataset_root is required");
  check_arg(!checkpoint_out.empty(), "train config: checkpoint_out is required");
  check_arg(batch_size >= 1,
            cat("train config: batch_size must be >= 1, got ", batch_size));
  check_arg(epochs >= 1, cat("train config: epochs must be >= 1, got ", epochs));
  check_arg(learning_rate > 0.0,
            cat("train config: learning_rate must be positive, got ",
                learning_rate));
  check_arg(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "train config: betas must be in [0, 1)");
  check_arg(epsilon > 0.0, "train config: epsilon must be positive");
  check_arg(in_channels == (use_height ? 4 : 3),
            cat("train config: in_channels (", in_channels,
                ") must be 4 with use_height or 3 without"));
  UNetConfig probe = unet_config(8 << depth);
  probe.validate();
}

UNetConfig TrainConfig::unet_config(int input_size) const {
  UNetConfig cfg;
  cfg.depth = depth;
  cfg.base_filters = base_filters;
  cfg.in_channels = in_channels;
  cfg.n_classes = n_classes;
  cfg.dropout_rate = static_cast<float>(dropout_rate);
  cfg.use_batchnorm = use_batchnorm;
  cfg.input_size = input_size;
  return cfg;
}

std::string TrainConfig::resolved_log_path() const {
  if (!log_path.empty()) return log_path;
  fs::path p(checkpoint_out);
  fs::path stem = p.parent_path() / p.stem();
  return stem.string() + "_metrics.csv";
}

std::string TrainConfig::best_checkpoint_path() const {
  fs::path p(checkpoint_out);
  fs::path stem = p.parent_path() / p.stem();
  return stem.string() + "_best" + p.extension().string();
}

void apply_train_config_file(TrainConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(cat("config: cannot open '", path.string(), "'"));

  auto parse_bool = [](const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument(
        cat("config: '", key, "' must be true/false, got '", value, "'"));
  };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    check_arg(eq != std::string::npos,
              cat("config: line ", line_no, " is not key=value: '", line, "'"));
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "dataset_root")
      config.dataset_root = value;
    else if (key == "depth")
      config.depth = std::stoi(value);
    else if (key == "base_filters")
      config.base_filters = std::stoi(value);
    else if (key == "in_channels")
      config.in_channels = std::stoi(value);
    else if (key == "n_classes")
      config.n_classes = std::stoi(value);
    else if (key == "dropout_rate")
      config.dropout_rate = std::stod(value);
    else if (key == "learning_rate")
      config.learning_rate = std::stod(value);
    else if (key == "beta1")
      config.beta1 = std::stod(value);
    else if (key == "beta2")
      config.beta2 = std::stod(value);
    else if (key == "epsilon")
      config.epsilon = std::stod(value);
    else if (key == "batch_size")
      config.batch_size = std::stoi(value);
    else if (key == "epochs")
      config.epochs = std::stoi(value);
    else if (key == "seed")
      config.seed = std::stoull(value);
    else if (key == "deterministic")
      config.deterministic = parse_bool(key, value);
    else if (key == "use_height")
      config.use_height = parse_bool(key, value);
    else if (key == "use_batchnorm")
      config.use_batchnorm = parse_bool(key, value);
    else if (key == "checkpoint_out")
      config.checkpoint_out = value;
    else if (key == "log_path")
      config.log_path = value;
    else
      throw std::invalid_argument(
          cat("config: unknown key '", key, "' on line ", line_no));
  }
}

LoadedSplit load_split(const fs::path& root, const std::string& split,
                       bool use_height) {
  const Manifest manifest = read_manifest(root);
  LoadedSplit out;
  out.ids = manifest.ids(split);
  if (out.ids.empty())
    fail(cat("load_split: split '", split, "' under '", root.string(),
             "' has no tiles"));
  out.inputs.reserve(out.ids.size());
  out.masks.reserve(out.ids.size());
  for (const std::string& id : out.ids) {
    TileTriplet tile = load_tile(root, split, id);
    out.inputs.push_back(assemble_input(tile, use_height));
    out.masks.push_back(std::move(tile.mask));
  }
  return out;
}

TensorF one_hot_targets(const std::vector<const MaskGrid*>& masks,
                        int n_classes) {
  check_arg(!masks.empty(), "one_hot_targets: empty batch");
  const int h = masks.front()->dim(0), w = masks.front()->dim(1);
  const int n = static_cast<int>(masks.size());
  TensorF target({n, n_classes, h, w});
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const MaskGrid& mask = *masks[static_cast<std::size_t>(i)];
    check_arg(mask.dim(0) == h && mask.dim(1) == w,
              "one_hot_targets: mask sizes differ within the batch");
    for (std::int64_t p = 0; p < plane; ++p) {
      const int cls = mask[p];
      check_arg(cls < n_classes,
                cat("one_hot_targets: class id ", cls, " exceeds n_classes ",
                    n_classes));
      target[(static_cast<std::int64_t>(i) * n_classes + cls) * plane + p] =
          1.0f;
    }
  }
  return target;
}

TensorF slice_image(const TensorF& batch, int index) {
  check_arg(batch.rank() == 4, "slice_image: batch must be NCHW");
  check_arg(index >= 0 && index < batch.dim(0),
            cat("slice_image: index ", index, " out of range for batch of ",
                batch.dim(0)));
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::int64_t count = static_cast<std::int64_t>(c) * h * w;
  std::vector<float> data(
      batch.data() + static_cast<std::int64_t>(index) * count,
      batch.data() + static_cast<std::int64_t>(index + 1) * count);
  return TensorF({c, h, w}, std::move(data));
}

std::uint64_t text_digest(const std::string& text) {
  std::uint64_t hash = 0xCBF29CE484222325ull;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 0x100000001B3ull;
  }
  return hash;
}

namespace {

TensorF stack_inputs(const std::vector<TensorF>& inputs,
                     const std::vector<int>& indices) {
  const TensorF& first = inputs[static_cast<std::size_t>(indices.front())];
  const int c = first.dim(0), h = first.dim(1), w = first.dim(2);
  TensorF batch({static_cast<int>(indices.size()), c, h, w});
  const std::int64_t count = static_cast<std::int64_t>(c) * h * w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const TensorF& img = inputs[static_cast<std::size_t>(indices[i])];
    check_arg(img.dim(0) == c && img.dim(1) == h && img.dim(2) == w,
              "stack_inputs: image shapes differ");
    std::copy(img.data(), img.data() + count,
              batch.data() + static_cast<std::int64_t>(i) * count);
  }
  return batch;
}

std::string format_row(const EpochRow& row) {
  std::ostringstream out;
  out << row.epoch << ',' << std::setprecision(17) << row.train_loss << ','
      << row.train_accuracy << ',' << row.val_dice << ',' << row.val_accuracy;
  return out.str();
}

}  // namespace

EvalReport evaluate_masks(const std::vector<MaskGrid>& preds,
                          const std::vector<MaskGrid>& truths) {
  check_arg(!preds.empty(), "evaluate_masks: empty prediction set");
  check_arg(preds.size() == truths.size(),
            "evaluate_masks: prediction/truth counts differ");

  std::vector<ConfusionCounts> counts(kNumClasses);
  std::int64_t agree = 0, total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const MaskGrid& pred = preds[i];
    const MaskGrid& truth = truths[i];
    for (int c = 0; c < kNumClasses; ++c) {
      const ConfusionCounts cc = confusion(pred, truth, c);
      counts[static_cast<std::size_t>(c)].tp += cc.tp;
      counts[static_cast<std::size_t>(c)].fp += cc.fp;
      counts[static_cast<std::size_t>(c)].fn += cc.fn;
      counts[static_cast<std::size_t>(c)].tn += cc.tn;
    }
    for (std::int64_t p = 0; p < pred.numel(); ++p)
      if (pred[p] == truth[p]) ++agree;
    total += pred.numel();
  }

  EvalReport report;
  report.tiles = static_cast<int>(preds.size());
  for (int c = 0; c < kNumClasses; ++c)
    report.per_class_dice.push_back(
        dice_from_counts(counts[static_cast<std::size_t>(c)]));
  report.macro_dice =
      std::accumulate(report.per_class_dice.begin(),
                      report.per_class_dice.end(), 0.0) /
      report.per_class_dice.size();
  report.accuracy = static_cast<double>(agree) / static_cast<double>(total);
  return report;
}

EvalReport evaluate_tiles(UNetModel<float>& model,
                          const std::vector<TensorF>& inputs,
                          const std::vector<MaskGrid>& masks, int batch_size) {
  check_arg(!inputs.empty(), "evaluate_tiles: empty split");
  check_arg(inputs.size() == masks.size(),
            "evaluate_tiles: input/mask counts differ");

  std::vector<MaskGrid> preds;
  preds.reserve(inputs.size());
  Rng rng(0);  // eval mode draws nothing

  for (std::size_t start = 0; start < inputs.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::vector<int> indices;
    for (std::size_t i = start;
         i < std::min(inputs.size(), start + static_cast<std::size_t>(batch_size));
         ++i)
      indices.push_back(static_cast<int>(i));
    const TensorF batch = stack_inputs(inputs, indices);
    auto [probs, trace] = unet_forward(model, batch, Mode::eval, rng);
    for (std::size_t i = 0; i < indices.size(); ++i)
      preds.push_back(class_assign(slice_image(probs, static_cast<int>(i))));
  }
  return evaluate_masks(preds, masks);
}

EvalReport evaluate_split(UNetModel<float>& model, const fs::path& root,
                          const std::string& split, bool use_height,
                          int batch_size) {
  const LoadedSplit data = load_split(root, split, use_height);
  return evaluate_tiles(model, data.inputs, data.masks, batch_size);
}

TrainResult train(const TrainConfig& config, std::ostream* progress) {
  config.validate();
  const fs::path root(config.dataset_root);
  const LoadedSplit train_data = load_split(root, "train", config.use_height);
  const LoadedSplit val_data = load_split(root, "val", config.use_height);

  const int size = train_data.inputs.front().dim(1);
  UNetModel<float> model =
      build_unet<float>(config.unet_config(size), config.seed);

  AdamConfig adam_cfg{config.learning_rate, config.beta1, config.beta2,
                      config.epsilon};
  AdamState<float> adam = AdamState<float>::init(model.params, adam_cfg);

  const std::string log_path = config.resolved_log_path();
  if (const fs::path dir = fs::path(log_path).parent_path(); !dir.empty())
    fs::create_directories(dir);
  if (const fs::path dir = fs::path(config.checkpoint_out).parent_path();
      !dir.empty())
    fs::create_directories(dir);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail(cat("train: cannot open metrics log '", log_path, "'"));
  log << kMetricsHeader << "\n";

  const std::int64_t n_train = static_cast<std::int64_t>(train_data.inputs.size());
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.log_path = log_path;
  result.final_checkpoint = config.checkpoint_out;
  result.best_checkpoint = config.best_checkpoint_path();
  result.best_val_dice = -1.0;
  std::string log_text = std::string(kMetricsHeader) + "\n";

  Rng base_rng(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    // Seeded epoch shuffle; the dropout stream is derived per epoch so runs
    // with the same seed consume randomness identically.
    Rng shuffle_rng = base_rng.split(0x5u * static_cast<std::uint64_t>(epoch));
    for (std::int64_t i = n_train - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(
                    shuffle_rng.below(static_cast<std::uint64_t>(i + 1)))]);
    Rng dropout_rng =
        base_rng.split(0x9000u + static_cast<std::uint64_t>(epoch));

    double loss_sum = 0.0;
    std::int64_t loss_elems = 0, agree = 0, total = 0;
    int step = 0;
    for (std::int64_t start = 0; start < n_train;
         start += config.batch_size, ++step) {
      std::vector<int> indices(
          order.begin() + start,
          order.begin() + std::min(n_train, start + config.batch_size));
      const TensorF batch = stack_inputs(train_data.inputs, indices);
      std::vector<const MaskGrid*> batch_masks;
      for (int idx : indices)
        batch_masks.push_back(&train_data.masks[static_cast<std::size_t>(idx)]);
      const TensorF targets = one_hot_targets(batch_masks, config.n_classes);

      auto [probs, trace] = unet_forward(model, batch, Mode::train, dropout_rng);
      BceResult<float> bce = bce_loss(probs, targets);
      if (!std::isfinite(bce.loss))
        fail(cat("train: non-finite loss at epoch ", epoch, " step ", step));
      loss_sum += bce.loss * static_cast<double>(probs.numel());
      loss_elems += probs.numel();

      GradMap<float> grads = unet_backward(model, trace, bce.grad_probs);
      try {
        adam_step(model.params, grads, adam);
      } catch (const std::exception& e) {
        fail(cat("train: optimizer refused step at epoch ", epoch, " step ",
                 step, ": ", e.what()));
      }

      for (std::size_t i = 0; i < indices.size(); ++i) {
        const MaskGrid pred =
            class_assign(slice_image(probs, static_cast<int>(i)));
        const MaskGrid& truth =
            train_data.masks[static_cast<std::size_t>(indices[i])];
        for (std::int64_t p = 0; p < pred.numel(); ++p)
          if (pred[p] == truth[p]) ++agree;
        total += pred.numel();
      }
    }

    const EvalReport val =
        evaluate_tiles(model, val_data.inputs, val_data.masks,
                       config.batch_size);

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(loss_elems);
    row.train_accuracy = static_cast<double>(agree) / static_cast<double>(total);
    row.val_dice = val.macro_dice;
    row.val_accuracy = val.accuracy;
    result.rows.push_back(row);

    const std::string row_text = format_row(row);
    log << row_text << "\n";
    log.flush();
    log_text += row_text + "\n";
    if (progress)
      *progress << "epoch " << epoch << "/" << config.epochs
                << "  loss " << row.train_loss << "  train_acc "
                << row.train_accuracy << "  val_dice " << row.val_dice
                << "  val_acc " << row.val_accuracy << "\n";

    if (val.macro_dice > result.best_val_dice) {
      result.best_val_dice = val.macro_dice;
      result.best_epoch = epoch;
      CheckpointMeta meta{static_cast<std::uint32_t>(epoch), config.seed,
                          text_digest(log_text)};
      save_checkpoint(result.best_checkpoint, model, meta);
    }
  }

  CheckpointMeta meta{static_cast<std::uint32_t>(config.epochs), config.seed,
                      text_digest(log_text)};
  save_checkpoint(result.final_checkpoint, model, meta, &adam);
  return result;
}

}  // namespace tseg
