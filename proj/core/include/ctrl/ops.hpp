#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ctrl/tensor.hpp"

namespace ctrl {

enum class Mode { kTrain, kEval };

/// Seeded generator used for dropout masks, shuffling and initialization.
using Rng = std::mt19937_64;

// Sequences are laid out channel-major: a sentence of L tokens with C features
// per token is a [C x L] tensor, one column per position.

/// out[:, t] = w * x[:, t] + b for every position t.
/// w: [out x in], x: [in x L], b: [out]  ->  [out x L]
Tensor matvec_batched(const Tensor& w, const Tensor& x, const Tensor& b);

/// Returns dL/dx. Accumulates dL/dw and dL/db into the given buffers unless
/// they are empty.
Tensor matvec_batched_backward(const Tensor& w, const Tensor& x, const Tensor& dout, std::span<double> dw,
                               std::span<double> db);

/// 1-D convolution with symmetric zero padding of (K-1)/2, so output length
/// equals input length.
/// x: [C_in x L], w: [C_out x C_in x K], b: [C_out]  ->  [C_out x L]
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor conv1d_same_backward(const Tensor& x, const Tensor& w, const Tensor& dout, std::span<double> dw,
                            std::span<double> db);

enum class Activation { kRelu, kTanh };

Tensor activation(Activation kind, const Tensor& x);

/// `x` is the activation input, `y` its output. The ReLU derivative at exactly
/// zero is zero.
Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y, const Tensor& dout);

/// Inverted-dropout mask. An empty `keep` vector means identity.
struct DropoutMask {
  std::vector<std::uint8_t> keep;
  double scale = 1.0;

  bool is_identity() const noexcept { return keep.empty(); }
};

/// Draws a fresh mask for `x` in train mode (identity in eval mode or at rate
/// 0) and applies it. Throws ConfigError unless 0 <= rate < 1.
Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng, DropoutMask* mask_out = nullptr);

/// Applies a fixed mask. Also the backward rule, since the map is linear.
Tensor apply_dropout_mask(const Tensor& x, const DropoutMask& mask);

DropoutMask make_dropout_mask(std::vector<std::uint8_t> keep, double rate);

/// Row-wise softmax of a [N x K] tensor, max-subtracted.
Tensor softmax_rows(const Tensor& logits);

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean token cross-entropy over positions with mask = 1.
/// logits: [N x K]; labels in [0, K) at masked-in positions (other cells are
/// ignored). Throws DegenerateInputError when the mask is all zero.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                                   std::span<const std::uint8_t> mask);

/// Stacks two [C_a x L] and [C_b x L] tensors into [(C_a + C_b) x L].
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Copies rows [first, first + count) of a rank-2 tensor.
Tensor slice_rows(const Tensor& t, std::size_t first, std::size_t count);

/// Elementwise sum of two tensors of identical shape.
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace ctrl
