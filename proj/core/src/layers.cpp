#include "ctrl/layers.hpp"

#include <cmath>
#include <random>

#include "ctrl/error.hpp"

namespace ctrl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_width(const Tensor& x, std::size_t width, const char* layer) {
  require_rank(x, 2, layer);
  if (x.dim(0) != width) {
    throw ShapeError(std::string(layer) + " expects " + std::to_string(width) + " input channels, got " +
                     shape_to_string(x.shape()));
  }
}

Param make_param(std::string name, Shape shape, Group group) {
  return Param{std::move(name), Tensor(std::move(shape)), group, group != Group::kEmb};
}

}  // namespace

std::string_view group_name(Group group) {
  switch (group) {
    case Group::kEmb: return "EMB";
    case Group::kCnn: return "CNN";
    case Group::kCtrl: return "CTRL";
    case Group::kFc: return "FC";
  }
  return "?";
}

Group parse_group(std::string_view name) {
  for (Group g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

std::span<double> grad_sink(Param& p) {
  if (!p.trainable) return {};
  return p.value.ensure_grad();
}

std::uint64_t param_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

void init_fan_in(Tensor& t, std::size_t fan_in, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

DoubleEmbedding make_double_embedding(Tensor general, Tensor domain) {
  require_rank(general, 2, "general embedding table");
  require_rank(domain, 2, "domain embedding table");
  if (general.dim(0) != domain.dim(0)) {
    throw ShapeError("embedding tables disagree on vocabulary size: " + shape_to_string(general.shape()) + " vs " +
                     shape_to_string(domain.shape()));
  }
  for (std::size_t c = 0; c < general.dim(1); ++c) general.at(0, c) = 0.0;
  for (std::size_t c = 0; c < domain.dim(1); ++c) domain.at(0, c) = 0.0;
  return DoubleEmbedding{Param{"emb.general", std::move(general), Group::kEmb, false},
                         Param{"emb.domain", std::move(domain), Group::kEmb, false}};
}

EmbCtrl make_emb_ctrl(const std::string& prefix, std::size_t width) {
  return EmbCtrl{make_param(prefix + ".w", {width, width}, Group::kCtrl),
                 make_param(prefix + ".b", {width}, Group::kCtrl)};
}

CnnCtrl make_cnn_ctrl(const std::string& prefix, std::size_t channels, std::size_t bottleneck, double dropout_rate,
                      std::uint64_t seed) {
  if (bottleneck == 0 || bottleneck >= channels) {
    throw ConfigError("CNN control bottleneck (" + std::to_string(bottleneck) +
                      ") must be positive and smaller than the channel width (" + std::to_string(channels) + ")");
  }
  CnnCtrl m{make_param(prefix + ".w_red", {bottleneck, channels}, Group::kCtrl),
            make_param(prefix + ".b_red", {bottleneck}, Group::kCtrl),
            make_param(prefix + ".w_exp", {channels, bottleneck}, Group::kCtrl),
            make_param(prefix + ".b_exp", {channels}, Group::kCtrl), dropout_rate};
  init_fan_in(m.w_red.value, channels, param_seed(seed, m.w_red.name));
  init_fan_in(m.b_red.value, channels, param_seed(seed, m.b_red.name));
  return m;
}

LinearCtrl make_linear_ctrl(const std::string& prefix, std::size_t width) {
  LinearCtrl m{make_param(prefix + ".w", {width, width}, Group::kCtrl),
               make_param(prefix + ".b", {width}, Group::kCtrl)};
  for (std::size_t i = 0; i < width; ++i) m.w.value.at(i, i) = 1.0;
  return m;
}

Conv1d make_conv1d(const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                   std::uint64_t seed) {
  if (kernel % 2 == 0) throw ConfigError(prefix + ": kernel size must be odd, got " + std::to_string(kernel));
  Conv1d m{make_param(prefix + ".w", {c_out, c_in, kernel}, Group::kCnn), make_param(prefix + ".b", {c_out}, Group::kCnn)};
  init_fan_in(m.w.value, c_in * kernel, param_seed(seed, m.w.name));
  init_fan_in(m.b.value, c_in * kernel, param_seed(seed, m.b.name));
  return m;
}

OutputLayer make_output_layer(const std::string& prefix, std::size_t width, std::size_t classes, std::uint64_t seed) {
  OutputLayer m{make_param(prefix + ".w", {classes, width}, Group::kFc), make_param(prefix + ".b", {classes}, Group::kFc)};
  init_fan_in(m.w.value, width, param_seed(seed, m.w.name));
  init_fan_in(m.b.value, width, param_seed(seed, m.b.name));
  return m;
}

Tensor embed(std::span<const std::int32_t> ids, const DoubleEmbedding& emb) {
  if (ids.empty()) throw ShapeError("cannot embed an empty sequence");
  const Tensor& general = emb.general.value;
  const Tensor& domain = emb.domain.value;
  const std::size_t vocab = emb.vocab_size(), dg = general.dim(1), dd = domain.dim(1);
  Tensor out({dg + dd, ids.size()});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const std::int32_t id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw LookupError("token id " + std::to_string(id) + " at position " + std::to_string(t) +
                        " outside vocabulary of size " + std::to_string(vocab));
    }
    const auto row = static_cast<std::size_t>(id);
    for (std::size_t c = 0; c < dg; ++c) out.at(c, t) = general.at(row, c);
    for (std::size_t c = 0; c < dd; ++c) out.at(dg + c, t) = domain.at(row, c);
  }
  return out;
}

Tensor emb_ctrl_forward(const Tensor& x, const EmbCtrl& m) {
  require_width(x, m.w.value.dim(1), "embedding control");
  return add(matvec_batched(m.w.value, x, m.b.value), x);
}

Tensor emb_ctrl_backward(EmbCtrl& m, const Tensor& x, const Tensor& dout) {
  Tensor dx = matvec_batched_backward(m.w.value, x, dout, grad_sink(m.w), grad_sink(m.b));
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i];
  return dx;
}

Tensor cnn_ctrl_forward(const Tensor& x, const CnnCtrl& m, Mode mode, Rng& rng, CnnCtrlCache* cache) {
  require_width(x, m.w_red.value.dim(1), "CNN control");
  Tensor hidden = activation(Activation::kTanh, matvec_batched(m.w_red.value, x, m.b_red.value));
  DropoutMask mask;
  const Tensor dropped = dropout(hidden, m.dropout_rate, mode, rng, &mask);
  Tensor pre_relu = add(matvec_batched(m.w_exp.value, dropped, m.b_exp.value), x);
  Tensor out = activation(Activation::kRelu, pre_relu);
  if (cache) {
    cache->x = x;
    cache->hidden = std::move(hidden);
    cache->mask = std::move(mask);
    cache->pre_relu = std::move(pre_relu);
    cache->out = out;
  }
  return out;
}

Tensor cnn_ctrl_backward(CnnCtrl& m, const CnnCtrlCache& cache, const Tensor& dout) {
  const Tensor d_pre = activation_backward(Activation::kRelu, cache.pre_relu, cache.out, dout);
  const Tensor dropped = apply_dropout_mask(cache.hidden, cache.mask);
  const Tensor d_dropped = matvec_batched_backward(m.w_exp.value, dropped, d_pre, grad_sink(m.w_exp), grad_sink(m.b_exp));
  const Tensor d_hidden = apply_dropout_mask(d_dropped, cache.mask);
  const Tensor d_red = activation_backward(Activation::kTanh, cache.hidden, cache.hidden, d_hidden);
  Tensor dx = matvec_batched_backward(m.w_red.value, cache.x, d_red, grad_sink(m.w_red), grad_sink(m.b_red));
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d_pre[i];
  return dx;
}

Tensor linear_ctrl_forward(const Tensor& x, const LinearCtrl& m) {
  require_width(x, m.w.value.dim(1), "linear control");
  return matvec_batched(m.w.value, x, m.b.value);
}

Tensor linear_ctrl_backward(LinearCtrl& m, const Tensor& x, const Tensor& dout) {
  return matvec_batched_backward(m.w.value, x, dout, grad_sink(m.w), grad_sink(m.b));
}

Tensor conv1d_forward(const Tensor& x, const Conv1d& m) { return conv1d_same(x, m.w.value, m.b.value); }

Tensor conv1d_backward(Conv1d& m, const Tensor& x, const Tensor& dout) {
  return conv1d_same_backward(x, m.w.value, dout, grad_sink(m.w), grad_sink(m.b));
}

Tensor transpose(const Tensor& t) {
  require_rank(t, 2, "transpose input");
  Tensor out({t.dim(1), t.dim(0)});
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    for (std::size_t c = 0; c < t.dim(1); ++c) out.at(c, r) = t.at(r, c);
  }
  return out;
}

Tensor output_layer_forward(const Tensor& x, const OutputLayer& m) {
  require_width(x, m.w.value.dim(1), "output layer");
  return transpose(matvec_batched(m.w.value, x, m.b.value));
}

Tensor output_layer_backward(OutputLayer& m, const Tensor& x, const Tensor& dout) {
  return matvec_batched_backward(m.w.value, x, transpose(dout), grad_sink(m.w), grad_sink(m.b));
}

}  // namespace ctrl
