#include "tseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace fs = std::filesystem;

namespace tseg {
namespace {

constexpr char kMagic[8] = {'U', 'N', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

template <class T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& value, const char* what) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail(cat("checkpoint load: truncated file while reading ", what));
}

void write_tensor(std::ostream& out, const std::string& name,
                  const TensorF& t) {
  const auto name_len = static_cast<std::uint32_t>(name.size());
  write_pod(out, name_len);
  out.write(name.data(), name_len);
  write_pod(out, kDtypeF32);
  const auto rank = static_cast<std::uint8_t>(t.rank());
  write_pod(out, rank);
  for (int i = 0; i < t.rank(); ++i)
    write_pod(out, static_cast<std::uint32_t>(t.dim(i)));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * t.numel()));
}

std::pair<std::string, TensorF> read_tensor(std::istream& in) {
  std::uint32_t name_len = 0;
  read_pod(in, name_len, "tensor name length");
  if (name_len > 4096) fail("checkpoint load: implausible tensor name length");
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  if (!in) fail("checkpoint load: truncated tensor name");
  std::uint8_t dtype = 0, rank = 0;
  read_pod(in, dtype, "dtype");
  if (dtype != kDtypeF32)
    fail(cat("checkpoint load: unsupported dtype code ",
             static_cast<int>(dtype), " for tensor '", name, "'"));
  read_pod(in, rank, "rank");
  std::vector<int> shape(rank);
  for (int i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    read_pod(in, d, "dimension");
    shape[i] = static_cast<int>(d);
  }
  TensorF t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(float) * t.numel()));
  if (!in) fail(cat("checkpoint load: truncated data for tensor '", name, "'"));
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const fs::path& path, const UNetModel<float>& model,
                     const CheckpointMeta& meta, const AdamState<float>* adam) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(cat("checkpoint save: cannot open '", tmp.string(), "'"));

    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    const UNetConfig& c = model.config;
    write_pod(out, static_cast<std::int32_t>(c.depth));
    write_pod(out, static_cast<std::int32_t>(c.base_filters));
    write_pod(out, static_cast<std::int32_t>(c.in_channels));
    write_pod(out, static_cast<std::int32_t>(c.n_classes));
    write_pod(out, c.dropout_rate);
    write_pod(out, static_cast<std::uint8_t>(c.use_batchnorm));
    write_pod(out, static_cast<std::int32_t>(c.input_size));
    write_pod(out, static_cast<std::uint8_t>(model.stats_ready()));
    write_pod(out, meta.epoch);
    write_pod(out, meta.seed);
    write_pod(out, meta.metric_digest);

    const std::uint8_t has_adam = adam != nullptr;
    write_pod(out, has_adam);
    if (adam) {
      write_pod(out, adam->t);
      write_pod(out, adam->cfg.alpha);
      write_pod(out, adam->cfg.beta1);
      write_pod(out, adam->cfg.beta2);
      write_pod(out, adam->cfg.epsilon);
    }

    std::uint32_t n_tensors =
        static_cast<std::uint32_t>(model.param_names.size()) +
        2 * static_cast<std::uint32_t>(model.bn_names.size());
    if (adam)
      n_tensors += 2 * static_cast<std::uint32_t>(model.param_names.size());
    write_pod(out, n_tensors);

    for (const std::string& name : model.param_names)
      write_tensor(out, name, model.params.at(name));
    for (const std::string& name : model.bn_names) {
      const auto& state = model.bn.at(name);
      write_tensor(out, name + ".running_mean", state.running_mean);
      write_tensor(out, name + ".running_var", state.running_var);
    }
    if (adam) {
      for (const std::string& name : model.param_names)
        write_tensor(out, "adam.m." + name, adam->m.at(name));
      for (const std::string& name : model.param_names)
        write_tensor(out, "adam.v." + name, adam->v.at(name));
    }
    if (!out) fail(cat("checkpoint save: write failed for '", tmp.string(), "'"));
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(cat("checkpoint load: cannot open '", path.string(), "'"));

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(cat("checkpoint load: '", path.string(),
             "' is not a checkpoint (bad magic)"));
  std::uint32_t version = 0;
  read_pod(in, version, "version");
  if (version != kVersion)
    fail(cat("checkpoint load: unsupported version ", version, " (expected ",
             kVersion, ")"));

  UNetConfig config;
  std::int32_t v32 = 0;
  read_pod(in, v32, "depth");
  config.depth = v32;
  read_pod(in, v32, "base_filters");
  config.base_filters = v32;
  read_pod(in, v32, "in_channels");
  config.in_channels = v32;
  read_pod(in, v32, "n_classes");
  config.n_classes = v32;
  read_pod(in, config.dropout_rate, "dropout_rate");
  std::uint8_t flag = 0;
  read_pod(in, flag, "use_batchnorm");
  config.use_batchnorm = flag != 0;
  read_pod(in, v32, "input_size");
  config.input_size = v32;
  config.validate();

  std::uint8_t stats_ready = 0;
  read_pod(in, stats_ready, "stats flag");

  Checkpoint ckpt;
  read_pod(in, ckpt.meta.epoch, "epoch");
  read_pod(in, ckpt.meta.seed, "seed");
  read_pod(in, ckpt.meta.metric_digest, "metric digest");

  std::uint8_t has_adam = 0;
  read_pod(in, has_adam, "adam flag");
  AdamConfig adam_cfg;
  std::int64_t adam_t = 0;
  if (has_adam) {
    read_pod(in, adam_t, "adam step");
    read_pod(in, adam_cfg.alpha, "adam alpha");
    read_pod(in, adam_cfg.beta1, "adam beta1");
    read_pod(in, adam_cfg.beta2, "adam beta2");
    read_pod(in, adam_cfg.epsilon, "adam epsilon");
  }

  std::uint32_t n_tensors = 0;
  read_pod(in, n_tensors, "tensor count");

  // The architecture fixes the expected name/shape set.
  ckpt.model = build_unet<float>(config, 0);
  if (has_adam) {
    ckpt.adam = AdamState<float>::init(ckpt.model.params, adam_cfg);
    ckpt.adam->t = adam_t;
  }

  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, tensor] = read_tensor(in);
    TensorF* dst = nullptr;
    if (name.starts_with("adam.m.")) {
      if (!ckpt.adam) fail("checkpoint load: adam tensor without adam header");
      auto it = ckpt.adam->m.find(name.substr(7));
      if (it != ckpt.adam->m.end()) dst = &it->second;
    } else if (name.starts_with("adam.v.")) {
      if (!ckpt.adam) fail("checkpoint load: adam tensor without adam header");
      auto it = ckpt.adam->v.find(name.substr(7));
      if (it != ckpt.adam->v.end()) dst = &it->second;
    } else if (name.ends_with(".running_mean")) {
      auto it = ckpt.model.bn.find(name.substr(0, name.size() - 13));
      if (it != ckpt.model.bn.end()) dst = &it->second.running_mean;
    } else if (name.ends_with(".running_var")) {
      auto it = ckpt.model.bn.find(name.substr(0, name.size() - 12));
      if (it != ckpt.model.bn.end()) dst = &it->second.running_var;
    } else {
      auto it = ckpt.model.params.find(name);
      if (it != ckpt.model.params.end()) dst = &it->second;
    }
    if (!dst)
      fail(cat("checkpoint load: tensor '", name,
               "' does not belong to the embedded config"));
    if (tensor.shape() != dst->shape())
      fail(cat("checkpoint load: tensor '", name, "' has shape ",
               shape_str(tensor.shape()), " but the config requires ",
               shape_str(dst->shape())));
    *dst = std::move(tensor);
    ++filled;
  }
  const std::size_t expected =
      ckpt.model.param_names.size() + 2 * ckpt.model.bn_names.size() +
      (has_adam ? 2 * ckpt.model.param_names.size() : 0);
  if (filled != expected)
    fail(cat("checkpoint load: file holds ", filled, " tensors, config needs ",
             expected));
  char extra;
  if (in.read(&extra, 1)) fail("checkpoint load: trailing bytes after tensors");

  for (const std::string& name : ckpt.model.bn_names)
    ckpt.model.bn.at(name).initialized = stats_ready != 0;
  return ckpt;
}

}  // namespace tseg
