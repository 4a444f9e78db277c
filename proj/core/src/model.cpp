#include "ctrl/model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <cctype>
#include <utility>

#include "ctrl/error.hpp"

namespace ctrl {

std::size_t Batch::length(std::size_t b) const {
  std::size_t n = 0;
  for (auto m : row_mask(b)) n += m ? 1 : 0;
  return n;
}

std::size_t Batch::token_count() const {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

namespace {

struct VariantEntry {
  Variant variant;
  std::string_view name;
  std::string_view alias;
};

constexpr VariantEntry kVariants[] = {
    {Variant::kDecnn, "decnn", "de-cnn"},
    {Variant::kCtrl, "ctrl", "ctrl"},
    {Variant::kCtrlMinus, "ctrl-minus", "ctrl-"},
    {Variant::kCtrlMinusMinus, "ctrl-minusminus", "ctrl--"},
    {Variant::kDan, "dan", "dan"},
    {Variant::kDanMinus, "dan-minus", "dan-"},
    {Variant::kDanMinusMinus, "dan-minusminus", "dan--"},
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(lower.begin(), lower.end(), '_', '-');
  for (const auto& e : kVariants) {
    if (lower == e.name || lower == e.alias) return e.variant;
  }
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

ControlKind control_kind(Variant v) {
  switch (v) {
    case Variant::kDecnn: return ControlKind::kNone;
    case Variant::kCtrl:
    case Variant::kCtrlMinus:
    case Variant::kCtrlMinusMinus: return ControlKind::kResidual;
    case Variant::kDan:
    case Variant::kDanMinus:
    case Variant::kDanMinusMinus: return ControlKind::kLinear;
  }
  return ControlKind::kNone;
}

bool cnn_frozen(Variant v) { return v == Variant::kCtrlMinusMinus || v == Variant::kDanMinusMinus; }

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (vocab_size < 2) fail("vocab_size must be >= 2 (padding and unknown are reserved), got " + std::to_string(vocab_size));
  if (general_dim == 0 || domain_dim == 0) fail("embedding dims must be positive");
  if (conv2_filters == 0) fail("conv2_filters must be positive");
  if (conv2_kernel_a % 2 == 0 || conv2_kernel_b % 2 == 0 || upper_kernel % 2 == 0) fail("kernel sizes must be odd");
  if (conv2_kernel_a == conv2_kernel_b) fail("the two layer-2 kernel sizes must differ");
  if (channels != 2 * conv2_filters) {
    fail("channels (" + std::to_string(channels) + ") must equal 2 * conv2_filters (" +
         std::to_string(2 * conv2_filters) + ")");
  }
  if (bottleneck == 0 || bottleneck >= channels) {
    fail("bottleneck (" + std::to_string(bottleneck) + ") must be in [1, channels)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1), got " + format_double(dropout));
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "variant=" << variant_name(variant) << '\n'
     << "vocab_size=" << vocab_size << '\n'
     << "general_dim=" << general_dim << '\n'
     << "domain_dim=" << domain_dim << '\n'
     << "conv2_filters=" << conv2_filters << '\n'
     << "conv2_kernel_a=" << conv2_kernel_a << '\n'
     << "conv2_kernel_b=" << conv2_kernel_b << '\n'
     << "channels=" << channels << '\n'
     << "upper_kernel=" << upper_kernel << '\n'
     << "bottleneck=" << bottleneck << '\n'
     << "dropout=" << format_double(dropout) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  auto to_size = [](const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
    return out;
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "vocab_size") c.vocab_size = to_size(key, value);
    else if (key == "general_dim") c.general_dim = to_size(key, value);
    else if (key == "domain_dim") c.domain_dim = to_size(key, value);
    else if (key == "conv2_filters") c.conv2_filters = to_size(key, value);
    else if (key == "conv2_kernel_a") c.conv2_kernel_a = to_size(key, value);
    else if (key == "conv2_kernel_b") c.conv2_kernel_b = to_size(key, value);
    else if (key == "channels") c.channels = to_size(key, value);
    else if (key == "upper_kernel") c.upper_kernel = to_size(key, value);
    else if (key == "bottleneck") c.bottleneck = to_size(key, value);
    else if (key == "dropout") c.dropout = std::stod(value);
    else if (key == "seed") c.seed = to_size(key, value);
    else throw ConfigError("unknown model config key '" + key + "'");
  }
  return c;
}

Model::Model(const ModelConfig& config, DoubleEmbedding emb) : config_(config), emb_(std::move(emb)) {
  const ControlKind kind = control_kind(config.variant);
  const std::uint64_t seed = config.seed;
  const std::size_t width = config.embedding_width();

  if (kind == ControlKind::kResidual) emb_ctrl_ = make_emb_ctrl("ctrl.emb", width);
  if (kind == ControlKind::kLinear) emb_ctrl_ = make_linear_ctrl("ctrl.emb", width);

  conv2a_ = make_conv1d("conv2.k" + std::to_string(config.conv2_kernel_a), width, config.conv2_filters,
                        config.conv2_kernel_a, seed);
  conv2b_ = make_conv1d("conv2.k" + std::to_string(config.conv2_kernel_b), width, config.conv2_filters,
                        config.conv2_kernel_b, seed);
  for (std::size_t i = 0; i < ModelConfig::kUpperConvs; ++i) {
    const std::string prefix = "ctrl.l" + std::to_string(i + 2);
    if (kind == ControlKind::kResidual) {
      ctrl_[i] = make_cnn_ctrl(prefix, config.channels, config.bottleneck, config.dropout, seed);
    } else if (kind == ControlKind::kLinear) {
      ctrl_[i] = make_linear_ctrl(prefix, config.channels);
    }
    conv_[i] = make_conv1d("conv" + std::to_string(i + 3), config.channels, config.channels, config.upper_kernel, seed);
  }
  fc_ = make_output_layer("fc", config.channels, ModelConfig::kClasses, seed);

  if (cnn_frozen(config.variant)) {
    for (Param* p : params()) {
      if (p->group == Group::kCnn) p->trainable = false;
    }
  }

  std::set<std::string_view> names;
  for (const Param* p : std::as_const(*this).params()) {
    if (!names.insert(p->name).second) throw ConfigError("duplicate parameter name '" + p->name + "'");
  }
}

Model Model::build(const ModelConfig& config) {
  config.validate();
  Tensor general({config.vocab_size, config.general_dim});
  Tensor domain({config.vocab_size, config.domain_dim});
  std::mt19937_64 rng(param_seed(config.seed, "emb"));
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (double& v : general.data()) v = dist(rng);
  for (double& v : domain.data()) v = dist(rng);
  return Model(config, make_double_embedding(std::move(general), std::move(domain)));
}

Model Model::build(const ModelConfig& config, Tensor general, Tensor domain) {
  config.validate();
  const Shape want_g{config.vocab_size, config.general_dim}, want_d{config.vocab_size, config.domain_dim};
  if (general.shape() != want_g || domain.shape() != want_d) {
    throw ConfigError("embedding tables " + shape_to_string(general.shape()) + ", " + shape_to_string(domain.shape()) +
                      " do not match config " + shape_to_string(want_g) + ", " + shape_to_string(want_d));
  }
  return Model(config, make_double_embedding(std::move(general), std::move(domain)));
}

template <class Self, class F>
void Model::visit_params(Self& self, F&& f) {
  f(self.emb_.general);
  f(self.emb_.domain);
  auto visit_slot = [&](auto& slot) {
    std::visit(
        [&](auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, EmbCtrl> || std::is_same_v<T, LinearCtrl>) {
            f(m.w);
            f(m.b);
          } else if constexpr (std::is_same_v<T, CnnCtrl>) {
            f(m.w_red);
            f(m.b_red);
            f(m.w_exp);
            f(m.b_exp);
          }
        },
        slot);
  };
  visit_slot(self.emb_ctrl_);
  f(self.conv2a_.w);
  f(self.conv2a_.b);
  f(self.conv2b_.w);
  f(self.conv2b_.b);
  for (std::size_t i = 0; i < ModelConfig::kUpperConvs; ++i) {
    visit_slot(self.ctrl_[i]);
    f(self.conv_[i].w);
    f(self.conv_[i].b);
  }
  f(self.fc_.w);
  f(self.fc_.b);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  visit_params(*this, [&](Param& p) { out.push_back(&p); });
  return out;
}

std::vector<const Param*> Model::params() const {
  std::vector<const Param*> out;
  visit_params(*this, [&](const Param& p) { out.push_back(&p); });
  return out;
}

Param* Model::find(std::string_view name) {
  for (Param* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

const Param* Model::find(std::string_view name) const {
  for (const Param* p : params()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::map<Group, std::vector<std::string>> Model::param_groups() const {
  std::map<Group, std::vector<std::string>> groups;
  for (Group g : kAllGroups) groups[g];
  for (const Param* p : params()) groups[p->group].push_back(p->name);
  return groups;
}

std::size_t Model::parameter_count(Group group) const {
  std::size_t n = 0;
  for (const Param* p : params()) {
    if (p->group == group) n += p->value.size();
  }
  return n;
}

void Model::zero_grad() {
  for (Param* p : params()) p->value.zero_grad();
}

void Model::drop_grads() {
  for (Param* p : params()) p->value.drop_grad();
}

void Model::copy_values_from(const Model& other, GroupSet groups) {
  for (Param* p : params()) {
    if (!groups.contains(p->group)) continue;
    const Param* src = other.find(p->name);
    if (!src) continue;
    if (src->value.shape() != p->value.shape()) {
      throw ShapeError("cannot copy '" + p->name + "': shape " + shape_to_string(src->value.shape()) + " vs " +
                       shape_to_string(p->value.shape()));
    }
    std::copy(src->value.data().begin(), src->value.data().end(), p->value.data().begin());
  }
}

Tensor Model::forward_sentence(std::span<const std::int32_t> ids, Mode mode, Rng& rng, SentenceTrace* trace) const {
  SentenceTrace local;
  SentenceTrace& tr = trace ? *trace : local;
  const double rate = config_.dropout;

  tr.ids.assign(ids.begin(), ids.end());
  tr.embedded = embed(ids, emb_);
  if (const auto* m = std::get_if<EmbCtrl>(&emb_ctrl_)) {
    tr.emb_out = emb_ctrl_forward(tr.embedded, *m);
  } else if (const auto* m = std::get_if<LinearCtrl>(&emb_ctrl_)) {
    tr.emb_out = linear_ctrl_forward(tr.embedded, *m);
  } else {
    tr.emb_out = tr.embedded;
  }
  tr.d0 = dropout(tr.emb_out, rate, mode, rng, &tr.drop0);

  Tensor conv_out = concat_channels(conv1d_forward(tr.d0, conv2a_), conv1d_forward(tr.d0, conv2b_));
  for (std::size_t i = 0; i < ModelConfig::kUpperConvs; ++i) {
    auto& slot = tr.slots[i];
    slot.input = std::move(conv_out);
    if (const auto* m = std::get_if<CnnCtrl>(&ctrl_[i])) {
      slot.out = cnn_ctrl_forward(slot.input, *m, mode, rng, &slot.residual);
    } else if (const auto* m = std::get_if<LinearCtrl>(&ctrl_[i])) {
      slot.linear_out = linear_ctrl_forward(slot.input, *m);
      slot.out = activation(Activation::kRelu, slot.linear_out);
    } else {
      slot.out = activation(Activation::kRelu, slot.input);
    }
    slot.dropped = dropout(slot.out, rate, mode, rng, &slot.drop);
    if (i + 1 < ModelConfig::kUpperConvs) conv_out = conv1d_forward(slot.dropped, conv_[i]);
  }
  tr.c5 = conv1d_forward(tr.slots.back().dropped, conv_.back());
  tr.r5 = activation(Activation::kRelu, tr.c5);
  tr.d5 = dropout(tr.r5, rate, mode, rng, &tr.drop5);
  return output_layer_forward(tr.d5, fc_);
}

void Model::backward_sentence(const SentenceTrace& tr, const Tensor& grad_logits) {
  Tensor g = output_layer_backward(fc_, tr.d5, grad_logits);
  g = apply_dropout_mask(g, tr.drop5);
  g = activation_backward(Activation::kRelu, tr.c5, tr.r5, g);
  g = conv1d_backward(conv_.back(), tr.slots.back().dropped, g);

  for (std::size_t i = ModelConfig::kUpperConvs; i-- > 0;) {
    const auto& slot = tr.slots[i];
    if (i + 1 < ModelConfig::kUpperConvs) g = conv1d_backward(conv_[i], slot.dropped, g);
    g = apply_dropout_mask(g, slot.drop);
    if (auto* m = std::get_if<CnnCtrl>(&ctrl_[i])) {
      g = cnn_ctrl_backward(*m, slot.residual, g);
    } else if (auto* m = std::get_if<LinearCtrl>(&ctrl_[i])) {
      g = activation_backward(Activation::kRelu, slot.linear_out, slot.out, g);
      g = linear_ctrl_backward(*m, slot.input, g);
    } else {
      g = activation_backward(Activation::kRelu, slot.input, slot.out, g);
    }
  }

  const std::size_t filters = config_.conv2_filters;
  const Tensor ga = slice_rows(g, 0, filters);
  const Tensor gb = slice_rows(g, filters, filters);
  Tensor gd0 = add(conv1d_backward(conv2a_, tr.d0, ga), conv1d_backward(conv2b_, tr.d0, gb));

  // Embedding tables are frozen; only the control module sees a gradient.
  const Tensor g_emb_out = apply_dropout_mask(gd0, tr.drop0);
  if (auto* m = std::get_if<EmbCtrl>(&emb_ctrl_)) {
    emb_ctrl_backward(*m, tr.embedded, g_emb_out);
  } else if (auto* m = std::get_if<LinearCtrl>(&emb_ctrl_)) {
    linear_ctrl_backward(*m, tr.embedded, g_emb_out);
  }
}

Tensor Model::forward(const Batch& batch, Mode mode, Rng& rng, ForwardTrace* trace) const {
  const std::size_t B = batch.batch_size, L = batch.max_len, K = ModelConfig::kClasses;
  if (batch.ids.size() != B * L || batch.mask.size() != B * L) {
    throw ShapeError("batch matrices do not match " + std::to_string(B) + " x " + std::to_string(L));
  }
  if (trace) {
    trace->max_len = L;
    trace->sentences.assign(B, SentenceTrace{});
  }
  Tensor logits({B, L, K});
  for (std::size_t b = 0; b < B; ++b) {
    const auto mask = batch.row_mask(b);
    const std::size_t n = batch.length(b);
    if (n == 0) throw ShapeError("batch row " + std::to_string(b) + " has no tokens");
    for (std::size_t t = 0; t < L; ++t) {
      if ((mask[t] != 0) != (t < n)) throw ShapeError("batch row " + std::to_string(b) + " mask is not a prefix");
    }
    const Tensor row = forward_sentence(batch.row_ids(b).first(n), mode, rng, trace ? &trace->sentences[b] : nullptr);
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t k = 0; k < K; ++k) logits.at(b, t, k) = t < n ? row.at(t, k) : fc_.b.value[k];
    }
  }
  return logits;
}

void Model::backward(const ForwardTrace& trace, const Tensor& grad_logits) {
  const std::size_t B = trace.sentences.size(), L = trace.max_len, K = ModelConfig::kClasses;
  if (grad_logits.shape() != Shape{B, L, K}) {
    throw ShapeError("logit gradient " + shape_to_string(grad_logits.shape()) + " does not match trace " +
                     shape_to_string({B, L, K}));
  }
  for (std::size_t b = 0; b < B; ++b) {
    const auto& tr = trace.sentences[b];
    const std::size_t n = tr.ids.size();
    Tensor g({n, K});
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < K; ++k) g.at(t, k) = grad_logits.at(b, t, k);
    }
    // Padded positions hold the output bias, so their gradient goes to fc.b.
    if (auto sink = grad_sink(fc_.b); !sink.empty()) {
      for (std::size_t t = n; t < L; ++t) {
        for (std::size_t k = 0; k < K; ++k) sink[k] += grad_logits.at(b, t, k);
      }
    }
    backward_sentence(tr, g);
  }
}

}  // namespace ctrl
