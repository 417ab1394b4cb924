#include "tseg/cbir.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace tseg {
namespace {

constexpr char kMagic[8] = {'T', 'S', 'E', 'G', 'I', 'D', 'X', '1'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t len) {
  const auto* bytes = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001B3ull;
  }
  return hash;
}

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ull;

template <class T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& value, const char* what) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(cat("index load: truncated file while reading ", what));
}

}  // namespace

std::vector<float> compute_thresholds(
    const std::vector<std::vector<float>>& descriptors) {
  check_arg(descriptors.size() >= 2,
            cat("compute_thresholds: need at least 2 descriptors, got ",
                descriptors.size()));
  const std::size_t dims = descriptors.front().size();
  for (const auto& d : descriptors)
    check_arg(d.size() == dims, "compute_thresholds: ragged descriptor list");

  std::vector<float> thresholds(dims);
  std::vector<float> column(descriptors.size());
  for (std::size_t d = 0; d < dims; ++d) {
    for (std::size_t i = 0; i < descriptors.size(); ++i)
      column[i] = descriptors[i][d];
    std::sort(column.begin(), column.end());
    const std::size_t n = column.size();
    thresholds[d] = (n % 2 == 1)
                        ? column[n / 2]
                        : (column[n / 2 - 1] + column[n / 2]) / 2.0f;
  }
  return thresholds;
}

std::vector<std::uint64_t> hash_descriptor(
    const std::vector<float>& descriptor,
    const std::vector<float>& thresholds) {
  check_arg(descriptor.size() == thresholds.size(),
            cat("hash_descriptor: descriptor length ", descriptor.size(),
                " does not match thresholds length ", thresholds.size()));
  std::vector<std::uint64_t> code((descriptor.size() + 63) / 64, 0);
  for (std::size_t d = 0; d < descriptor.size(); ++d)
    if (descriptor[d] > thresholds[d]) code[d / 64] |= 1ull << (d % 64);
  return code;
}

int hamming_distance(const std::vector<std::uint64_t>& a,
                     const std::vector<std::uint64_t>& b) {
  check_arg(a.size() == b.size(), "hamming_distance: code lengths differ");
  int distance = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    distance += std::popcount(a[i] ^ b[i]);
  return distance;
}

std::uint64_t model_fingerprint(const UNetModel<float>& model) {
  std::uint64_t hash = kFnvOffset;
  const UNetConfig& c = model.config;
  const std::int32_t header[6] = {c.depth,     c.base_filters, c.in_channels,
                                  c.n_classes, c.use_batchnorm, c.input_size};
  hash = fnv1a(hash, header, sizeof(header));
  for (const std::string& name : model.param_names) {
    hash = fnv1a(hash, name.data(), name.size());
    const TensorF& p = model.params.at(name);
    hash = fnv1a(hash, p.data(), sizeof(float) * static_cast<std::size_t>(p.numel()));
  }
  for (const std::string& name : model.bn_names) {
    const auto& state = model.bn.at(name);
    hash = fnv1a(hash, state.running_mean.data(),
                 sizeof(float) * static_cast<std::size_t>(state.running_mean.numel()));
    hash = fnv1a(hash, state.running_var.data(),
                 sizeof(float) * static_cast<std::size_t>(state.running_var.numel()));
  }
  return hash;
}

HashIndex build_index(
    UNetModel<float>& model,
    const std::vector<std::pair<std::string, TensorF>>& images) {
  check_arg(!images.empty(), "build_index: empty image set");
  if (!model.stats_ready())
    fail("build_index: model running statistics are uninitialized");

  std::vector<std::vector<float>> descriptors;
  descriptors.reserve(images.size());
  for (const auto& [id, image] : images)
    descriptors.push_back(encode_bottleneck(model, image));

  HashIndex index;
  index.bits = static_cast<std::uint32_t>(descriptors.front().size());
  index.thresholds = descriptors.size() >= 2
                         ? compute_thresholds(descriptors)
                         : descriptors.front();  // single entry: all bits 0
  index.model_fingerprint = model_fingerprint(model);
  for (std::size_t i = 0; i < images.size(); ++i)
    index.entries.push_back(
        {images[i].first, hash_descriptor(descriptors[i], index.thresholds)});
  return index;
}

std::vector<std::pair<std::string, int>> query_index(const HashIndex& index,
                                                     UNetModel<float>& model,
                                                     const TensorF& image,
                                                     int k) {
  check_arg(k >= 1, cat("query: k must be >= 1, got ", k));
  const std::uint64_t fp = model_fingerprint(model);
  if (fp != index.model_fingerprint)
    fail(cat("query: index fingerprint ", index.model_fingerprint,
             " does not match model fingerprint ", fp,
             " (stale index; rebuild it with this checkpoint)"));

  const std::vector<float> descriptor = encode_bottleneck(model, image);
  const std::vector<std::uint64_t> code =
      hash_descriptor(descriptor, index.thresholds);

  std::vector<std::pair<std::string, int>> ranked;
  ranked.reserve(index.entries.size());
  for (const HashIndex::Entry& e : index.entries)
    ranked.emplace_back(e.id, hamming_distance(code, e.code));
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) {
              return a.second != b.second ? a.second < b.second
                                          : a.first < b.first;
            });
  if (static_cast<int>(ranked.size()) > k) ranked.resize(static_cast<std::size_t>(k));
  return ranked;
}

void save_index(const HashIndex& index, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(cat("index save: cannot open '", tmp.string(), "'"));
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, index.bits);
    write_pod(out, index.model_fingerprint);
    out.write(reinterpret_cast<const char*>(index.thresholds.data()),
              static_cast<std::streamsize>(sizeof(float) * index.thresholds.size()));
    const auto count = static_cast<std::uint32_t>(index.entries.size());
    write_pod(out, count);
    const std::size_t code_bytes = (index.bits + 7) / 8;
    for (const HashIndex::Entry& e : index.entries) {
      const auto id_len = static_cast<std::uint32_t>(e.id.size());
      write_pod(out, id_len);
      out.write(e.id.data(), id_len);
      out.write(reinterpret_cast<const char*>(e.code.data()),
                static_cast<std::streamsize>(code_bytes));
    }
    if (!out) fail(cat("index save: write failed for '", tmp.string(), "'"));
  }
  fs::rename(tmp, path);
}

HashIndex load_index(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(cat("index load: cannot open '", path.string(), "'"));

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(cat("index load: '", path.string(), "' is not an index file "
             "(bad magic)"));
  std::uint32_t version = 0;
  read_pod(in, version, "version");
  if (version != kVersion)
    fail(cat("index load: unsupported version ", version, " (expected ",
             kVersion, ")"));

  HashIndex index;
  read_pod(in, index.bits, "bits");
  read_pod(in, index.model_fingerprint, "fingerprint");
  index.thresholds.resize(index.bits);
  in.read(reinterpret_cast<char*>(index.thresholds.data()),
          static_cast<std::streamsize>(sizeof(float) * index.thresholds.size()));
  if (!in) fail("index load: truncated file while reading thresholds");

  std::uint32_t count = 0;
  read_pod(in, count, "entry count");
  const std::size_t code_bytes = (index.bits + 7) / 8;
  const std::size_t code_words = (index.bits + 63) / 64;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t id_len = 0;
    read_pod(in, id_len, "entry id length");
    HashIndex::Entry entry;
    entry.id.resize(id_len);
    in.read(entry.id.data(), id_len);
    entry.code.assign(code_words, 0);
    in.read(reinterpret_cast<char*>(entry.code.data()),
            static_cast<std::streamsize>(code_bytes));
    if (!in) fail(cat("index load: truncated file in entry ", i));
    index.entries.push_back(std::move(entry));
  }
  char extra;
  if (in.read(&extra, 1))
    fail(cat("index load: trailing bytes after ", count, " entries"));
  return index;
}

}  // namespace tseg
