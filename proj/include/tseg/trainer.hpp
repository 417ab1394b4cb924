#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tseg/checkpoint.hpp"
#include "tseg/dataset.hpp"
#include "tseg/metrics.hpp"
#include "tseg/unet.hpp"

namespace tseg {

struct TrainConfig {
  std::string dataset_root;
  int depth = 3;
  int base_filters = 16;
  int in_channels = 4;
  int n_classes = 4;
  double dropout_rate = 0.07;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 8;
  int epochs = 10;
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool use_height = true;
  bool use_batchnorm = true;
  std::string checkpoint_out = "checkpoint.ckpt";
  std::string log_path;  // defaults to <checkpoint_out stem>_metrics.csv

  void validate() const;
  UNetConfig unet_config(int input_size) const;
  std::string resolved_log_path() const;
  std::string best_checkpoint_path() const;  // <stem>_best<ext>
};

// Applies a plain-text key=value file onto a TrainConfig. Keys are exactly
// the field names (dataset_root, depth, base_filters, in_channels, n_classes,
// dropout_rate, learning_rate, beta1, beta2, epsilon, batch_size, epochs,
// seed, deterministic, use_height, use_batchnorm, checkpoint_out, log_path);
// unknown keys are rejected. Lines that are blank or start with # are skipped.
void apply_train_config_file(TrainConfig& config,
                             const std::filesystem::path& path);

// In-memory split: assembled model inputs plus ground-truth masks.
struct LoadedSplit {
  std::vector<std::string> ids;
  std::vector<TensorF> inputs;  // CHW
  std::vector<MaskGrid> masks;
};

LoadedSplit load_split(const std::filesystem::path& root,
                       const std::string& split, bool use_height);

struct EvalReport {
  std::vector<double> per_class_dice;
  double macro_dice = 0.0;
  double accuracy = 0.0;
  int tiles = 0;
};

// Dice/accuracy over a split treated as one pixel population: per-class
// confusion counts are aggregated over every tile, macro Dice averages the
// per-class values.
EvalReport evaluate_masks(const std::vector<MaskGrid>& preds,
                          const std::vector<MaskGrid>& truths);

EvalReport evaluate_tiles(UNetModel<float>& model,
                          const std::vector<TensorF>& inputs,
                          const std::vector<MaskGrid>& masks, int batch_size);

EvalReport evaluate_split(UNetModel<float>& model,
                          const std::filesystem::path& root,
                          const std::string& split, bool use_height,
                          int batch_size = 8);

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_dice = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> rows;
  double best_val_dice = 0.0;
  int best_epoch = 0;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::string log_path;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,train_accuracy,val_dice,val_accuracy";

// Full training run: seeded shuffles, BCE against one-hot masks, Adam steps,
// per-epoch validation, metrics log, best/final checkpoints. `progress`, when
// given, receives one line per epoch.
TrainResult train(const TrainConfig& config, std::ostream* progress = nullptr);

// One-hot targets for a batch of masks.
TensorF one_hot_targets(const std::vector<const MaskGrid*>& masks,
                        int n_classes);

// Digest used to fingerprint a metrics log in checkpoint metadata.
std::uint64_t text_digest(const std::string& text);

// Per-image probability slice (CHW) of a batched NCHW output.
TensorF slice_image(const TensorF& batch, int index);

}  // namespace tseg
