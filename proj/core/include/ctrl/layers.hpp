#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>

#include "ctrl/ops.hpp"
#include "ctrl/tensor.hpp"

namespace ctrl {

/// Freeze unit. EMB parameters are never trainable.
enum class Group : std::uint8_t { kEmb = 0, kCnn = 1, kCtrl = 2, kFc = 3 };

inline constexpr Group kAllGroups[] = {Group::kEmb, Group::kCnn, Group::kCtrl, Group::kFc};

std::string_view group_name(Group group);
Group parse_group(std::string_view name);

/// Small set of groups, e.g. the groups an optimizer step may touch.
class GroupSet {
 public:
  constexpr GroupSet() = default;
  constexpr GroupSet(std::initializer_list<Group> groups) {
    for (Group g : groups) bits_ |= bit(g);
  }
  constexpr bool contains(Group g) const noexcept { return (bits_ & bit(g)) != 0; }
  constexpr void insert(Group g) noexcept { bits_ |= bit(g); }
  constexpr bool empty() const noexcept { return bits_ == 0; }
  constexpr bool operator==(const GroupSet&) const = default;

 private:
  static constexpr std::uint8_t bit(Group g) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(g)); }
  std::uint8_t bits_ = 0;
};

struct Param {
  std::string name;
  Tensor value;
  Group group = Group::kCnn;
  bool trainable = true;
};

/// Gradient buffer of a trainable parameter, or an empty span for a frozen
/// one (backward rules skip accumulation into empty spans).
std::span<double> grad_sink(Param& p);

/// Deterministic per-parameter seed derived from the model seed and the
/// parameter name, so initialization does not depend on construction order.
std::uint64_t param_seed(std::uint64_t seed, std::string_view name);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill.
void init_fan_in(Tensor& t, std::size_t fan_in, std::uint64_t seed);

struct DoubleEmbedding {
  Param general;  // [vocab x general_dim]
  Param domain;   // [vocab x domain_dim]

  std::size_t vocab_size() const { return general.value.dim(0); }
  std::size_t width() const { return general.value.dim(1) + domain.value.dim(1); }
};

/// Wraps two tables into frozen EMB parameters; row 0 (padding) is zeroed.
DoubleEmbedding make_double_embedding(Tensor general, Tensor domain);

/// Residual square affine map on the embedding output: z = (W x + b) + x.
struct EmbCtrl {
  Param w;  // [D x D]
  Param b;  // [D]
};

/// Bottleneck control between CNN layers:
/// z = relu(x + (W_exp dropout(tanh(W_red x + b_red)) + b_exp)).
struct CnnCtrl {
  Param w_red;  // [bottleneck x channels]
  Param b_red;  // [bottleneck]
  Param w_exp;  // [channels x bottleneck]
  Param b_exp;  // [channels]
  double dropout_rate = 0.55;
};

/// Plain square linear transform z = W x + b (DAN-style control).
struct LinearCtrl {
  Param w;  // [D x D]
  Param b;  // [D]
};

struct Conv1d {
  Param w;  // [C_out x C_in x K]
  Param b;  // [C_out]
};

/// Affine map shared across positions, producing [L x classes] logits.
struct OutputLayer {
  Param w;  // [classes x D]
  Param b;  // [classes]
};

/// w_emb and b_emb start at zero so the module is an exact identity.
EmbCtrl make_emb_ctrl(const std::string& prefix, std::size_t width);

/// w_red, b_red use fan-in init; w_exp, b_exp start at zero so the module
/// reduces to relu(x).
CnnCtrl make_cnn_ctrl(const std::string& prefix, std::size_t channels, std::size_t bottleneck, double dropout_rate,
                      std::uint64_t seed);

/// Identity weight, zero bias.
LinearCtrl make_linear_ctrl(const std::string& prefix, std::size_t width);

Conv1d make_conv1d(const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t kernel,
                   std::uint64_t seed);

OutputLayer make_output_layer(const std::string& prefix, std::size_t width, std::size_t classes, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Forward / backward rules. Backward functions return dL/dx and accumulate
// parameter gradients into trainable parameters only.

/// [width x L] embedding columns. Throws LookupError naming the position of
/// the first out-of-range id.
Tensor embed(std::span<const std::int32_t> ids, const DoubleEmbedding& emb);

Tensor emb_ctrl_forward(const Tensor& x, const EmbCtrl& m);
Tensor emb_ctrl_backward(EmbCtrl& m, const Tensor& x, const Tensor& dout);

struct CnnCtrlCache {
  Tensor x;
  Tensor hidden;   // tanh output, before dropout
  DropoutMask mask;
  Tensor pre_relu;
  Tensor out;
};

Tensor cnn_ctrl_forward(const Tensor& x, const CnnCtrl& m, Mode mode, Rng& rng, CnnCtrlCache* cache = nullptr);
Tensor cnn_ctrl_backward(CnnCtrl& m, const CnnCtrlCache& cache, const Tensor& dout);

Tensor linear_ctrl_forward(const Tensor& x, const LinearCtrl& m);
Tensor linear_ctrl_backward(LinearCtrl& m, const Tensor& x, const Tensor& dout);

Tensor conv1d_forward(const Tensor& x, const Conv1d& m);
Tensor conv1d_backward(Conv1d& m, const Tensor& x, const Tensor& dout);

/// x: [D x L] -> logits [L x classes].
Tensor output_layer_forward(const Tensor& x, const OutputLayer& m);
/// dout: [L x classes]; returns [D x L].
Tensor output_layer_backward(OutputLayer& m, const Tensor& x, const Tensor& dout);

/// Transpose of a rank-2 tensor.
Tensor transpose(const Tensor& t);

}  // namespace ctrl
