#include "tseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tseg/noise.hpp"
#include "tseg/rng.hpp"

namespace fs = std::filesystem;

namespace tseg {

const std::array<Rgb, kNumClasses>& palette() {
  static const std::array<Rgb, kNumClasses> colors = {{
      {60, 100, 200},    // water
      {34, 139, 34},     // forest
      {237, 201, 81},    // sand
      {255, 218, 185},   // mountain
  }};
  return colors;
}

const char* class_name(int class_id) {
  static const char* names[kNumClasses] = {"water", "forest", "sand",
                                           "mountain"};
  check_arg(class_id >= 0 && class_id < kNumClasses,
            cat("class_name: invalid class id ", class_id));
  return names[class_id];
}

int classify_height(double h) {
  check_arg(h >= 0.0 && h <= 1.0,
            cat("classify_height: height ", h, " outside [0, 1]"));
  if (h < 0.30) return kWater;
  if (h < 0.40) return kSand;
  if (h < 0.70) return kForest;
  return kMountain;
}

namespace {

constexpr double kBaseFrequency = 4.0;   // lattice cells per tile edge
constexpr double kTextureAmplitude = 0.08;
constexpr double kShadeStrength = 2.0;

double quantize8(double v) {
  return static_cast<double>(std::lround(v * 255.0)) / 255.0;
}

double texture_hash(std::uint64_t seed, int x, int y, int c) {
  std::uint64_t h = Rng::mix64(seed ^ static_cast<std::uint64_t>(x) *
                                          0x9E3779B97F4A7C15ull);
  h = Rng::mix64(h ^ static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full);
  h = Rng::mix64(h ^ static_cast<std::uint64_t>(c) * 0x165667B19E3779F9ull);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace

TileTriplet generate_tile(std::uint64_t seed, int size, int octaves) {
  check_arg(size >= 8 && size % 8 == 0,
            cat("generate_tile: size ", size, " must be a multiple of 8"));

  TileTriplet tile;
  tile.height = TensorF({1, size, size});
  tile.landform = TensorF({3, size, size});
  tile.mask = MaskGrid({size, size});

  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double nx = (x + 0.5) * kBaseFrequency / size;
      const double ny = (y + 0.5) * kBaseFrequency / size;
      const double h = quantize8(value_noise(seed, nx, ny, octaves));
      tile.height[static_cast<std::int64_t>(y) * size + x] =
          static_cast<float>(h);
      tile.mask[static_cast<std::int64_t>(y) * size + x] =
          static_cast<std::uint8_t>(classify_height(h));
    }
  }

  const std::uint64_t texture_seed = Rng::mix64(seed ^ 0xA24BAED4963EE407ull);
  auto height_at = [&](int x, int y) {
    x = std::clamp(x, 0, size - 1);
    y = std::clamp(y, 0, size - 1);
    return static_cast<double>(
        tile.height[static_cast<std::int64_t>(y) * size + x]);
  };
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gx = height_at(x + 1, y) - height_at(x - 1, y);
      const double gy = height_at(x, y + 1) - height_at(x, y - 1);
      const double shade =
          std::clamp(1.0 - kShadeStrength * (gx + gy), 0.75, 1.25);
      const int cls = tile.mask[static_cast<std::int64_t>(y) * size + x];
      const Rgb base = palette()[static_cast<std::size_t>(cls)];
      const double rgb[3] = {base.r / 255.0, base.g / 255.0, base.b / 255.0};
      for (int c = 0; c < 3; ++c) {
        const double t =
            (texture_hash(texture_seed, x, y, c) - 0.5) * 2.0 *
            kTextureAmplitude;
        const double v = std::clamp(rgb[c] * shade + t, 0.0, 1.0);
        tile.landform[static_cast<std::int64_t>(c) * plane +
                      static_cast<std::int64_t>(y) * size + x] =
            static_cast<float>(quantize8(v));
      }
    }
  }
  return tile;
}

ImageU8 mask_to_image(const MaskGrid& mask) {
  check_arg(mask.rank() == 2, "mask_to_image: mask must be (H, W)");
  ImageU8 image;
  image.height = mask.dim(0);
  image.width = mask.dim(1);
  image.channels = 1;
  image.pixels.assign(mask.vec().begin(), mask.vec().end());
  return image;
}

MaskGrid image_to_mask(const ImageU8& image) {
  check_arg(image.channels == 1,
            cat("mask decode: expected a single-channel image, got ",
                image.channels, " channels"));
  MaskGrid mask({image.height, image.width});
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t v = image.at(y, x, 0);
      if (v >= kNumClasses)
        fail(cat("mask decode: pixel value ", static_cast<int>(v), " at (",
                 y, ", ", x, ") is not a valid class id (0..",
                 kNumClasses - 1, ")"));
      mask.at(y, x) = v;
    }
  return mask;
}

std::vector<std::uint8_t> encode_mask(const MaskGrid& mask) {
  return png_encode(mask_to_image(mask));
}

MaskGrid decode_mask(const std::vector<std::uint8_t>& png_bytes) {
  return image_to_mask(png_decode(png_bytes));
}

ImageU8 mask_to_rgb(const MaskGrid& mask) {
  check_arg(mask.rank() == 2, "mask_to_rgb: mask must be (H, W)");
  ImageU8 image;
  image.height = mask.dim(0);
  image.width = mask.dim(1);
  image.channels = 3;
  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t v = mask.at(y, x);
      check_arg(v < kNumClasses,
                cat("mask_to_rgb: pixel value ", static_cast<int>(v), " at (",
                    y, ", ", x, ") is not a valid class id"));
      const Rgb color = palette()[v];
      image.at(y, x, 0) = color.r;
      image.at(y, x, 1) = color.g;
      image.at(y, x, 2) = color.b;
    }
  return image;
}

ImageU8 tensor_to_image(const TensorF& t) {
  check_arg(t.rank() == 3 && (t.dim(0) == 1 || t.dim(0) == 3),
            cat("tensor_to_image: expected (1|3, H, W), got ",
                shape_str(t.shape())));
  ImageU8 image;
  image.channels = t.dim(0);
  image.height = t.dim(1);
  image.width = t.dim(2);
  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height *
                      image.channels);
  const std::int64_t plane =
      static_cast<std::int64_t>(image.height) * image.width;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        const float v = t[static_cast<std::int64_t>(c) * plane +
                          static_cast<std::int64_t>(y) * image.width + x];
        check_arg(v >= 0.0f && v <= 1.0f,
                  cat("tensor_to_image: value ", v, " outside [0, 1]"));
        image.at(y, x, c) =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return image;
}

TensorF image_to_tensor(const ImageU8& image) {
  TensorF t({image.channels, image.height, image.width});
  const std::int64_t plane =
      static_cast<std::int64_t>(image.height) * image.width;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        t[static_cast<std::int64_t>(c) * plane +
          static_cast<std::int64_t>(y) * image.width + x] =
            static_cast<float>(image.at(y, x, c)) / 255.0f;
  return t;
}

namespace {

std::string tile_id(int index) {
  std::string s = std::to_string(index);
  return std::string(5 - std::min<std::size_t>(5, s.size()), '0') + s;
}

fs::path tile_path(const fs::path& root, const std::string& split,
                   const std::string& kind, const std::string& id) {
  return root / split / kind / (id + ".png");
}

}  // namespace

std::vector<std::string> Manifest::ids(const std::string& split) const {
  std::vector<std::string> out;
  for (const ManifestEntry& e : tiles)
    if (e.split == split) out.push_back(e.id);
  return out;
}

Manifest write_dataset(const DatasetParams& params, const fs::path& root,
                       bool overwrite) {
  check_arg(params.n_tiles >= 1, cat("write_dataset: n_tiles must be >= 1, got ",
                                     params.n_tiles));
  check_arg(params.split_fraction > 0.0 && params.split_fraction < 1.0,
            cat("write_dataset: split_fraction must be in (0, 1), got ",
                params.split_fraction));

  if (fs::exists(root) && !fs::is_empty(root) && !overwrite)
    fail(cat("write_dataset: '", root.string(),
             "' exists and is not empty (pass overwrite to regenerate)"));

  const int n_train =
      static_cast<int>(std::llround(params.n_tiles * params.split_fraction));
  check_arg(n_train >= 1 && n_train < params.n_tiles,
            cat("write_dataset: split ", params.split_fraction, " of ",
                params.n_tiles, " tiles leaves an empty train or val set"));

  for (const char* split : {"train", "val"})
    for (const char* kind : {"landform", "height", "mask"})
      fs::create_directories(root / split / kind);

  Manifest manifest;
  manifest.params = params;
  for (int i = 0; i < params.n_tiles; ++i) {
    const std::string id = tile_id(i);
    const std::string split = i < n_train ? "train" : "val";
    const TileTriplet tile =
        generate_tile(params.seed + static_cast<std::uint64_t>(i), params.size,
                      params.octaves);
    png_write_file(tile_path(root, split, "landform", id),
                   tensor_to_image(tile.landform));
    png_write_file(tile_path(root, split, "height", id),
                   tensor_to_image(tile.height));
    png_write_file(tile_path(root, split, "mask", id),
                   mask_to_image(tile.mask));
    manifest.tiles.push_back({id, split});
  }

  std::ofstream out(root / "manifest.txt", std::ios::trunc);
  if (!out) fail(cat("write_dataset: cannot write manifest under '",
                     root.string(), "'"));
  out << "tseg-dataset 1\n";
  out << "n_tiles=" << params.n_tiles << "\n";
  out << "seed=" << params.seed << "\n";
  out << "size=" << params.size << "\n";
  out << "split_fraction=" << params.split_fraction << "\n";
  out << "octaves=" << params.octaves << "\n";
  out << "tiles:\n";
  for (const ManifestEntry& e : manifest.tiles)
    out << e.id << " " << e.split << "\n";
  if (!out) fail("write_dataset: manifest write failed");
  return manifest;
}

Manifest read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.txt");
  if (!in)
    fail(cat("read_manifest: no manifest.txt under '", root.string(), "'"));
  std::string line;
  std::getline(in, line);
  if (line != "tseg-dataset 1")
    fail(cat("read_manifest: unrecognized header '", line, "'"));

  Manifest manifest;
  bool in_tiles = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "tiles:") {
      in_tiles = true;
      continue;
    }
    if (!in_tiles) {
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos)
        fail(cat("read_manifest: malformed line '", line, "'"));
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "n_tiles")
        manifest.params.n_tiles = std::stoi(value);
      else if (key == "seed")
        manifest.params.seed = std::stoull(value);
      else if (key == "size")
        manifest.params.size = std::stoi(value);
      else if (key == "split_fraction")
        manifest.params.split_fraction = std::stod(value);
      else if (key == "octaves")
        manifest.params.octaves = std::stoi(value);
      else
        fail(cat("read_manifest: unknown key '", key, "'"));
    } else {
      const std::size_t space = line.find(' ');
      if (space == std::string::npos)
        fail(cat("read_manifest: malformed tile row '", line, "'"));
      manifest.tiles.push_back(
          {line.substr(0, space), line.substr(space + 1)});
    }
  }
  if (static_cast<int>(manifest.tiles.size()) != manifest.params.n_tiles)
    fail(cat("read_manifest: tile count ", manifest.tiles.size(),
             " does not match n_tiles=", manifest.params.n_tiles));
  return manifest;
}

TileTriplet load_tile(const fs::path& root, const std::string& split,
                      const std::string& id) {
  TileTriplet tile;
  tile.landform =
      image_to_tensor(png_read_file(tile_path(root, split, "landform", id)));
  tile.height =
      image_to_tensor(png_read_file(tile_path(root, split, "height", id)));
  tile.mask = image_to_mask(png_read_file(tile_path(root, split, "mask", id)));
  check_arg(tile.landform.dim(0) == 3,
            cat("load_tile: landform image for ", id, " is not RGB"));
  check_arg(tile.height.dim(0) == 1,
            cat("load_tile: height map for ", id, " is not grayscale"));
  return tile;
}

TensorF assemble_input(const TileTriplet& tile, bool use_height) {
  const int s = tile.landform.dim(1);
  check_arg(tile.landform.dim(2) == s && tile.height.dim(1) == s &&
                tile.height.dim(2) == s && tile.mask.dim(0) == s &&
                tile.mask.dim(1) == s,
            "assemble_input: tile components disagree on spatial size");
  const int channels = use_height ? 4 : 3;
  TensorF input({channels, s, s});
  const std::int64_t plane = static_cast<std::int64_t>(s) * s;
  std::copy(tile.landform.data(), tile.landform.data() + 3 * plane,
            input.data());
  if (use_height)
    std::copy(tile.height.data(), tile.height.data() + plane,
              input.data() + 3 * plane);
  return input;
}

}  // namespace tseg
