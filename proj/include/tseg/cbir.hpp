#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tseg/unet.hpp"

namespace tseg {

// Binary hash index over bottleneck descriptors. Bits are set by comparing
// each descriptor dimension against a per-dimension corpus threshold
// (strict >); queries rank corpus entries by Hamming distance.
struct HashIndex {
  std::uint32_t bits = 0;
  std::vector<float> thresholds;
  std::uint64_t model_fingerprint = 0;

  struct Entry {
    std::string id;
    std::vector<std::uint64_t> code;  // packed bits, little-endian words
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  bool operator==(const HashIndex&) const = default;
};

// Per-dimension corpus median (mean of the two middle values for even
// counts). Needs at least 2 descriptors.
std::vector<float> compute_thresholds(
    const std::vector<std::vector<float>>& descriptors);

// bit d = 1 iff v[d] > thresholds[d].
std::vector<std::uint64_t> hash_descriptor(
    const std::vector<float>& descriptor, const std::vector<float>& thresholds);

int hamming_distance(const std::vector<std::uint64_t>& a,
                     const std::vector<std::uint64_t>& b);

// Digest of model weights and running statistics (order-fixed FNV-1a); used
// to detect stale indexes.
std::uint64_t model_fingerprint(const UNetModel<float>& model);

// Extracts bottleneck descriptors for every (id, CHW image) pair, computes
// corpus thresholds, and hashes every member.
HashIndex build_index(
    UNetModel<float>& model,
    const std::vector<std::pair<std::string, TensorF>>& images);

// Ranked (id, Hamming distance), ascending distance then ascending id;
// returns min(k, corpus size) results. Rejects an index whose fingerprint
// does not match the model.
std::vector<std::pair<std::string, int>> query_index(const HashIndex& index,
                                                     UNetModel<float>& model,
                                                     const TensorF& image,
                                                     int k);

void save_index(const HashIndex& index, const std::filesystem::path& path);
HashIndex load_index(const std::filesystem::path& path);

}  // namespace tseg
