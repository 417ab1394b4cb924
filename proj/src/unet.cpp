#include "tseg/unet.hpp"

#include <cmath>

#include "tseg/rng.hpp"

namespace tseg {

void UNetConfig::validate() const {
  check_arg(depth >= 1, cat("unet config: depth must be >= 1, got ", depth));
  check_arg(base_filters >= 1,
            cat("unet config: base_filters must be >= 1, got ", base_filters));
  check_arg(in_channels >= 1,
            cat("unet config: in_channels must be >= 1, got ", in_channels));
  check_arg(n_classes >= 1,
            cat("unet config: n_classes must be >= 1, got ", n_classes));
  check_arg(dropout_rate >= 0.0f && dropout_rate < 1.0f,
            cat("unet config: dropout_rate must be in [0, 1), got ",
                dropout_rate));
  check_arg(input_size >= 1,
            cat("unet config: input_size must be positive, got ", input_size));
  check_arg(input_size % (1 << depth) == 0,
            cat("unet config: input_size ", input_size,
                " must be a multiple of 2^depth = ", 1 << depth));
}

template <class T>
Tensor<T>& UNetModel<T>::param(const std::string& name) {
  auto it = params.find(name);
  check_arg(it != params.end(), cat("unet model: no parameter named '", name, "'"));
  return it->second;
}

template <class T>
const Tensor<T>& UNetModel<T>::param(const std::string& name) const {
  auto it = params.find(name);
  check_arg(it != params.end(), cat("unet model: no parameter named '", name, "'"));
  return it->second;
}

template <class T>
bool UNetModel<T>::stats_ready() const {
  for (const auto& [name, state] : bn)
    if (!state.initialized) return false;
  return true;
}

template <class T>
std::int64_t UNetModel<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.numel();
  return n;
}

namespace {

template <class T>
void add_conv(UNetModel<T>& m, const std::string& name, int out_c, int in_c,
              int k) {
  m.params.emplace(name + ".kernel", Tensor<T>({out_c, in_c, k, k}));
  m.params.emplace(name + ".bias", Tensor<T>({out_c}));
  m.param_names.push_back(name + ".kernel");
  m.param_names.push_back(name + ".bias");
}

template <class T>
void add_bn(UNetModel<T>& m, const std::string& name, int channels) {
  m.params.emplace(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  m.params.emplace(name + ".beta", Tensor<T>({channels}));
  m.param_names.push_back(name + ".gamma");
  m.param_names.push_back(name + ".beta");
  BatchNormState<T> state;
  state.running_mean = Tensor<T>({channels});
  state.running_var = Tensor<T>::full({channels}, T(1));
  m.bn.emplace(name, std::move(state));
  m.bn_names.push_back(name);
}

template <class T>
void add_block(UNetModel<T>& m, const std::string& prefix, int in_c,
               int out_c) {
  add_conv(m, prefix + ".conv1", out_c, in_c, 3);
  if (m.config.use_batchnorm) add_bn(m, prefix + ".bn1", out_c);
  add_conv(m, prefix + ".conv2", out_c, out_c, 3);
  if (m.config.use_batchnorm) add_bn(m, prefix + ".bn2", out_c);
}

}  // namespace

template <class T>
UNetModel<T> build_unet(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNetModel<T> m;
  m.config = config;
  const int depth = config.depth, base = config.base_filters;

  for (int i = 0; i < depth; ++i)
    add_block(m, cat("enc", i), i == 0 ? config.in_channels : base << (i - 1),
              base << i);
  add_block(m, "bottleneck", base << (depth - 1), base << depth);
  for (int i = depth - 1; i >= 0; --i) {
    add_conv(m, cat("dec", i, ".up"), base << i, base << (i + 1), 2);
    add_block(m, cat("dec", i), 2 * (base << i), base << i);
  }
  add_conv(m, "head", config.n_classes, base, 1);

  // Fan-in-scaled uniform init for conv kernels, drawn in canonical order so
  // identical seeds give bit-identical models.
  Rng rng(seed);
  for (const std::string& name : m.param_names) {
    if (!name.ends_with(".kernel")) continue;
    Tensor<T>& k = m.params.at(name);
    const int fan_in = k.dim(1) * k.dim(2) * k.dim(3);
    const double bound = std::sqrt(6.0 / fan_in);
    for (std::int64_t j = 0; j < k.numel(); ++j)
      k[j] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return m;
}

template <class T>
Tensor<T> conv2d_block_forward(UNetModel<T>& model, const std::string& prefix,
                               const Tensor<T>& x, Mode mode,
                               ConvBlockTrace<T>& trace) {
  ConvParams<T> c1{model.param(prefix + ".conv1.kernel"),
                   model.param(prefix + ".conv1.bias"), 1, Padding::same};
  auto [y1, ctx1] = conv2d_forward(x, c1);
  trace.conv1 = std::move(ctx1);
  Tensor<T> y = std::move(y1);
  if (model.config.use_batchnorm) {
    auto [yb, ctxb] = batchnorm2d_forward(
        y, model.param(prefix + ".bn1.gamma"),
        model.param(prefix + ".bn1.beta"), model.bn.at(prefix + ".bn1"), mode);
    trace.bn1 = std::move(ctxb);
    y = std::move(yb);
  }
  auto [yr, ctxr] = relu_forward(y);
  trace.relu1 = std::move(ctxr);
  y = std::move(yr);

  ConvParams<T> c2{model.param(prefix + ".conv2.kernel"),
                   model.param(prefix + ".conv2.bias"), 1, Padding::same};
  auto [y2, ctx2] = conv2d_forward(y, c2);
  trace.conv2 = std::move(ctx2);
  y = std::move(y2);
  if (model.config.use_batchnorm) {
    auto [yb, ctxb] = batchnorm2d_forward(
        y, model.param(prefix + ".bn2.gamma"),
        model.param(prefix + ".bn2.beta"), model.bn.at(prefix + ".bn2"), mode);
    trace.bn2 = std::move(ctxb);
    y = std::move(yb);
  }
  auto [yr2, ctxr2] = relu_forward(y);
  trace.relu2 = std::move(ctxr2);
  return std::move(yr2);
}

template <class T>
Tensor<T> conv2d_block_backward(const UNetModel<T>& model,
                                const std::string& prefix,
                                const ConvBlockTrace<T>& trace,
                                const Tensor<T>& grad_out, GradMap<T>& grads) {
  Tensor<T> g = relu_backward(trace.relu2, grad_out);
  if (model.config.use_batchnorm) {
    auto bg = batchnorm2d_backward(trace.bn2,
                                   model.param(prefix + ".bn2.gamma"), g);
    grads[prefix + ".bn2.gamma"] = std::move(bg.gamma);
    grads[prefix + ".bn2.beta"] = std::move(bg.beta);
    g = std::move(bg.input);
  }
  ConvParams<T> c2{model.param(prefix + ".conv2.kernel"),
                   model.param(prefix + ".conv2.bias"), 1, Padding::same};
  auto cg2 = conv2d_backward(trace.conv2, c2, g);
  grads[prefix + ".conv2.kernel"] = std::move(cg2.kernel);
  grads[prefix + ".conv2.bias"] = std::move(cg2.bias);
  g = std::move(cg2.input);

  g = relu_backward(trace.relu1, g);
  if (model.config.use_batchnorm) {
    auto bg = batchnorm2d_backward(trace.bn1,
                                   model.param(prefix + ".bn1.gamma"), g);
    grads[prefix + ".bn1.gamma"] = std::move(bg.gamma);
    grads[prefix + ".bn1.beta"] = std::move(bg.beta);
    g = std::move(bg.input);
  }
  ConvParams<T> c1{model.param(prefix + ".conv1.kernel"),
                   model.param(prefix + ".conv1.bias"), 1, Padding::same};
  auto cg1 = conv2d_backward(trace.conv1, c1, g);
  grads[prefix + ".conv1.kernel"] = std::move(cg1.kernel);
  grads[prefix + ".conv1.bias"] = std::move(cg1.bias);
  return std::move(cg1.input);
}

template <class T>
std::pair<Tensor<T>, UNetTrace<T>> unet_forward(UNetModel<T>& model,
                                                const Tensor<T>& batch,
                                                Mode mode, Rng& rng) {
  const UNetConfig& cfg = model.config;
  check_arg(batch.rank() == 4,
            cat("unet forward: batch must be NCHW, got rank ", batch.rank()));
  check_arg(batch.dim(1) == cfg.in_channels,
            cat("unet forward: batch channels (", batch.dim(1),
                ") do not match config.in_channels (", cfg.in_channels, ")"));
  check_arg(batch.dim(2) == cfg.input_size && batch.dim(3) == cfg.input_size,
            cat("unet forward: batch spatial dims (", batch.dim(2), "x",
                batch.dim(3), ") do not match config.input_size (",
                cfg.input_size, ")"));

  const int depth = cfg.depth;
  UNetTrace<T> trace;
  trace.mode = mode;
  trace.enc.resize(depth);
  trace.pool.resize(depth);
  trace.enc_drop.resize(depth);
  trace.up.resize(depth);
  trace.dec_drop.resize(depth);
  trace.dec.resize(depth);
  trace.skip_channels.assign(depth, 0);

  std::vector<Tensor<T>> skips(depth);
  Tensor<T> x = batch;
  for (int i = 0; i < depth; ++i) {
    x = conv2d_block_forward(model, cat("enc", i), x, mode, trace.enc[i]);
    skips[i] = x;
    auto [pooled, pctx] = maxpool2d_forward(x, 2);
    trace.pool[i] = std::move(pctx);
    auto [dropped, dctx] =
        dropout_forward(pooled, cfg.dropout_rate, mode, rng);
    trace.enc_drop[i] = std::move(dctx);
    x = std::move(dropped);
  }

  x = conv2d_block_forward(model, "bottleneck", x, mode, trace.bottleneck);

  for (int i = depth - 1; i >= 0; --i) {
    ConvParams<T> up{model.param(cat("dec", i, ".up.kernel")),
                     model.param(cat("dec", i, ".up.bias")), 2, Padding::valid};
    auto [upsampled, uctx] = conv_transpose2d_forward(x, up);
    trace.up[i] = std::move(uctx);
    trace.skip_channels[i] = skips[i].dim(1);
    Tensor<T> joined = concat_channels(skips[i], upsampled);
    auto [dropped, dctx] =
        dropout_forward(joined, cfg.dropout_rate, mode, rng);
    trace.dec_drop[i] = std::move(dctx);
    x = conv2d_block_forward(model, cat("dec", i), dropped, mode,
                             trace.dec[i]);
  }

  ConvParams<T> head{model.param("head.kernel"), model.param("head.bias"), 1,
                     Padding::same};
  auto [logits, hctx] = conv2d_forward(x, head);
  trace.head = std::move(hctx);
  auto [probs, sctx] = sigmoid_forward(logits);
  trace.sig = std::move(sctx);
  return {std::move(probs), std::move(trace)};
}

template <class T>
GradMap<T> unet_backward(const UNetModel<T>& model, const UNetTrace<T>& trace,
                         const Tensor<T>& grad_probs) {
  const UNetConfig& cfg = model.config;
  check_arg(trace.mode == Mode::train,
            "unet backward: trace must come from a train-mode forward");
  check_arg(static_cast<int>(trace.enc.size()) == cfg.depth,
            cat("unet backward: trace depth ", trace.enc.size(),
                " does not match model depth ", cfg.depth));

  GradMap<T> grads;
  Tensor<T> g = sigmoid_backward(trace.sig, grad_probs);

  ConvParams<T> head{model.param("head.kernel"), model.param("head.bias"), 1,
                     Padding::same};
  auto hg = conv2d_backward(trace.head, head, g);
  grads["head.kernel"] = std::move(hg.kernel);
  grads["head.bias"] = std::move(hg.bias);
  g = std::move(hg.input);

  std::vector<Tensor<T>> skip_grads(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    g = conv2d_block_backward(model, cat("dec", i), trace.dec[i], g, grads);
    g = dropout_backward(trace.dec_drop[i], g);
    auto [gskip, gup] = split_channels(g, trace.skip_channels[i]);
    skip_grads[i] = std::move(gskip);
    ConvParams<T> up{model.param(cat("dec", i, ".up.kernel")),
                     model.param(cat("dec", i, ".up.bias")), 2, Padding::valid};
    auto ug = conv_transpose2d_backward(trace.up[i], up, gup);
    grads[cat("dec", i, ".up.kernel")] = std::move(ug.kernel);
    grads[cat("dec", i, ".up.bias")] = std::move(ug.bias);
    g = std::move(ug.input);
  }

  g = conv2d_block_backward(model, "bottleneck", trace.bottleneck, g, grads);

  for (int i = cfg.depth - 1; i >= 0; --i) {
    g = dropout_backward(trace.enc_drop[i], g);
    g = maxpool2d_backward(trace.pool[i], g);
    // Skip connections feed both the decoder concat and the pooling path.
    const Tensor<T>& sg = skip_grads[i];
    check_arg(sg.same_shape(g), "unet backward: skip gradient shape mismatch");
    for (std::int64_t j = 0; j < g.numel(); ++j) g[j] += sg[j];
    g = conv2d_block_backward(model, cat("enc", i), trace.enc[i], g, grads);
  }
  return grads;
}

template <class T>
std::vector<T> encode_bottleneck(UNetModel<T>& model, const Tensor<T>& image) {
  check_arg(image.rank() == 3,
            cat("encode_bottleneck: image must be CHW, got rank ",
                image.rank()));
  if (!model.stats_ready())
    fail("encode_bottleneck: model running statistics are uninitialized "
         "(train first or load a trained checkpoint)");

  Tensor<T> x(
      {1, image.dim(0), image.dim(1), image.dim(2)},
      image.vec());
  Rng rng(0);  // eval mode draws nothing
  ConvBlockTrace<T> scratch;
  for (int i = 0; i < model.config.depth; ++i) {
    x = conv2d_block_forward(model, cat("enc", i), x, Mode::eval, scratch);
    auto [pooled, pctx] = maxpool2d_forward(x, 2);
    auto [dropped, dctx] =
        dropout_forward(pooled, model.config.dropout_rate, Mode::eval, rng);
    x = std::move(dropped);
  }
  x = conv2d_block_forward(model, "bottleneck", x, Mode::eval, scratch);

  const int channels = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  std::vector<T> descriptor(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    const T* p = x.data() + static_cast<std::int64_t>(c) * plane;
    for (std::int64_t j = 0; j < plane; ++j) acc += p[j];
    descriptor[static_cast<std::size_t>(c)] =
        static_cast<T>(acc / static_cast<double>(plane));
  }
  return descriptor;
}

#define TSEG_INSTANTIATE(T)                                                    \
  template struct UNetModel<T>;                                                \
  template UNetModel<T> build_unet<T>(const UNetConfig&, std::uint64_t);       \
  template Tensor<T> conv2d_block_forward<T>(UNetModel<T>&,                    \
                                             const std::string&,               \
                                             const Tensor<T>&, Mode,           \
                                             ConvBlockTrace<T>&);              \
  template Tensor<T> conv2d_block_backward<T>(                                 \
      const UNetModel<T>&, const std::string&, const ConvBlockTrace<T>&,       \
      const Tensor<T>&, GradMap<T>&);                                          \
  template std::pair<Tensor<T>, UNetTrace<T>> unet_forward<T>(                 \
      UNetModel<T>&, const Tensor<T>&, Mode, Rng&);                            \
  template GradMap<T> unet_backward<T>(const UNetModel<T>&,                    \
                                       const UNetTrace<T>&, const Tensor<T>&); \
  template std::vector<T> encode_bottleneck<T>(UNetModel<T>&,                  \
                                               const Tensor<T>&);

TSEG_INSTANTIATE(float)
TSEG_INSTANTIATE(double)

#undef TSEG_INSTANTIATE

}  // namespace tseg
