#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tseg/png_io.hpp"
#include "tseg/tensor.hpp"

namespace tseg {

// Landform classes and their presentation colors.
inline constexpr int kNumClasses = 4;
enum LandformClass : std::uint8_t {
  kWater = 0,
  kForest = 1,
  kSand = 2,
  kMountain = 3,
};

struct Rgb {
  std::uint8_t r, g, b;
  bool operator==(const Rgb&) const = default;
};

const std::array<Rgb, kNumClasses>& palette();
const char* class_name(int class_id);

// Height thresholds: h < 0.30 water, [0.30, 0.40) sand, [0.40, 0.70) forest,
// >= 0.70 mountain. Rejects h outside [0, 1].
int classify_height(double h);

// One dataset sample. landform is (3, S, S) RGB in [0,1], height is
// (1, S, S) in [0,1] (both snapped to the 8-bit grid so disk round trips are
// exact), mask is (S, S) class indices derived from the height field.
struct TileTriplet {
  TensorF landform;
  TensorF height;
  MaskGrid mask;
};

inline constexpr int kDefaultOctaves = 4;

// Deterministic procedural tile: value-noise height, threshold mask, palette
// colors with per-pixel texture noise and hillshading. size must be a
// multiple of 8 so tiles fit any depth <= 3 model (larger depths need
// correspondingly larger sizes).
TileTriplet generate_tile(std::uint64_t seed, int size,
                          int octaves = kDefaultOctaves);

// Mask persistence: single-channel 8-bit image, pixel value = class id.
ImageU8 mask_to_image(const MaskGrid& mask);
MaskGrid image_to_mask(const ImageU8& image);
std::vector<std::uint8_t> encode_mask(const MaskGrid& mask);  // PNG bytes
MaskGrid decode_mask(const std::vector<std::uint8_t>& png_bytes);

// Presentation rendering via the palette.
ImageU8 mask_to_rgb(const MaskGrid& mask);

// CHW [0,1] float <-> 8-bit image (1 or 3 channels).
ImageU8 tensor_to_image(const TensorF& t);
TensorF image_to_tensor(const ImageU8& image);

struct DatasetParams {
  int n_tiles = 0;
  std::uint64_t seed = 0;
  int size = 64;
  double split_fraction = 0.8;
  int octaves = kDefaultOctaves;
};

struct ManifestEntry {
  std::string id;     // zero-padded tile index
  std::string split;  // "train" or "val"
};

struct Manifest {
  DatasetParams params;
  std::vector<ManifestEntry> tiles;

  std::vector<std::string> ids(const std::string& split) const;
};

// Layout: root/{train,val}/{landform,height,mask}/{id}.png plus manifest.txt.
// Tile i uses seed + i, so any subset regenerates identically. An existing
// non-empty root is rejected unless overwrite is set.
Manifest write_dataset(const DatasetParams& params,
                       const std::filesystem::path& root, bool overwrite);
Manifest read_manifest(const std::filesystem::path& root);

TileTriplet load_tile(const std::filesystem::path& root,
                      const std::string& split, const std::string& id);

// Model input channels: RGB landform, optionally followed by height.
TensorF assemble_input(const TileTriplet& tile, bool use_height);

}  // namespace tseg
