#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ctrl/batch.hpp"
#include "ctrl/layers.hpp"

namespace ctrl {

/// Architecture family. The *_MINUS / *_MINUSMINUS variants share the
/// architecture of their base; they differ in how they are trained, and the
/// MINUSMINUS variants additionally freeze the randomly initialized CNN layers.
enum class Variant { kDecnn, kCtrl, kCtrlMinus, kCtrlMinusMinus, kDan, kDanMinus, kDanMinusMinus };

std::string_view variant_name(Variant v);
/// Accepts the canonical names ("ctrl-minus") and the short forms ("ctrl-").
Variant parse_variant(std::string_view name);

enum class ControlKind { kNone, kResidual, kLinear };
ControlKind control_kind(Variant v);
bool cnn_frozen(Variant v);

struct ModelConfig {
  static constexpr std::size_t kClasses = 3;
  static constexpr std::size_t kUpperConvs = 3;

  Variant variant = Variant::kCtrl;
  std::size_t vocab_size = 2;
  std::size_t general_dim = 300;
  std::size_t domain_dim = 100;
  std::size_t conv2_filters = 128;  // per kernel size
  std::size_t conv2_kernel_a = 3;
  std::size_t conv2_kernel_b = 5;
  std::size_t channels = 256;       // must equal 2 * conv2_filters
  std::size_t upper_kernel = 5;
  std::size_t bottleneck = 128;
  double dropout = 0.55;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  std::size_t embedding_width() const { return general_dim + domain_dim; }

  /// key=value lines, one per field, in a fixed order.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  bool operator==(const ModelConfig&) const = default;
};

/// Everything a backward pass over one sentence needs.
struct SentenceTrace {
  struct Slot {
    Tensor input;
    CnnCtrlCache residual;
    Tensor linear_out;
    Tensor out;
    DropoutMask drop;
    Tensor dropped;
  };

  std::vector<std::int32_t> ids;
  Tensor embedded;
  Tensor emb_out;
  DropoutMask drop0;
  Tensor d0;
  std::array<Slot, ModelConfig::kUpperConvs> slots;
  Tensor c5;
  Tensor r5;
  DropoutMask drop5;
  Tensor d5;
};

struct ForwardTrace {
  std::size_t max_len = 0;
  std::vector<SentenceTrace> sentences;
};

/// The full tagger: double embedding, optional embedding control, conv layer 2
/// (two kernel sizes concatenated), three (control, conv) stages, ReLU and a
/// position-shared output layer.
class Model {
 public:
  /// Embedding tables are filled with seeded placeholder values.
  static Model build(const ModelConfig& config);
  /// Tables must be [vocab x general_dim] and [vocab x domain_dim].
  static Model build(const ModelConfig& config, Tensor general, Tensor domain);

  const ModelConfig& config() const noexcept { return config_; }

  /// Logits [n x 3] for one sentence of n tokens.
  Tensor forward_sentence(std::span<const std::int32_t> ids, Mode mode, Rng& rng, SentenceTrace* trace = nullptr) const;
  void backward_sentence(const SentenceTrace& trace, const Tensor& grad_logits);

  /// Logits [B x L x 3]. Each row is run at its real length, so padding never
  /// influences real positions; padded positions receive the output bias.
  Tensor forward(const Batch& batch, Mode mode, Rng& rng, ForwardTrace* trace = nullptr) const;
  void backward(const ForwardTrace& trace, const Tensor& grad_logits);

  /// Registry in layer order. Names are unique.
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;

  /// Partition of parameter names by group, in registry order.
  std::map<Group, std::vector<std::string>> param_groups() const;
  std::size_t parameter_count(Group group) const;

  void zero_grad();
  void drop_grads();

  /// Copies values of same-named, same-shaped parameters of the given groups.
  void copy_values_from(const Model& other, GroupSet groups);

  const DoubleEmbedding& embedding() const noexcept { return emb_; }

 private:
  using EmbSlot = std::variant<std::monostate, EmbCtrl, LinearCtrl>;
  using CnnSlot = std::variant<std::monostate, CnnCtrl, LinearCtrl>;

  explicit Model(const ModelConfig& config, DoubleEmbedding emb);

  template <class Self, class F>
  static void visit_params(Self& self, F&& f);

  ModelConfig config_;
  DoubleEmbedding emb_;
  EmbSlot emb_ctrl_;
  Conv1d conv2a_;
  Conv1d conv2b_;
  std::array<CnnSlot, ModelConfig::kUpperConvs> ctrl_;
  std::array<Conv1d, ModelConfig::kUpperConvs> conv_;
  OutputLayer fc_;
};

}  // namespace ctrl
