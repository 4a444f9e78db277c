#include "ctrl/gradcheck_suite.hpp"

#include <cmath>
#include <random>

#include "ctrl/layers.hpp"
#include "ctrl/ops.hpp"

namespace ctrl {

namespace {

constexpr std::size_t kInChannels = 2;
constexpr std::size_t kLength = 7;
constexpr std::size_t kChannels = 8;
constexpr std::size_t kBottleneck = 4;
constexpr double kKinkMargin = 1e-3;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Param as_param(const char* name, const Tensor& t, Group group) { return Param{name, t, group, true}; }

Tensor grad_of(const Param& p) {
  Tensor g(p.value.shape());
  if (p.value.has_grad()) std::copy(p.value.grad().begin(), p.value.grad().end(), g.data().begin());
  return g;
}

bool near_kink(double v) { return std::abs(v) < kKinkMargin; }

}  // namespace

std::vector<std::string> standard_grad_check_names() {
  std::vector<std::string> names;
  for (const auto& c : standard_grad_checks(1)) names.push_back(c.op.name);
  return names;
}

std::vector<GradCheckCase> standard_grad_checks(std::uint64_t seed, const std::string& faulty_op) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;
  const std::uint64_t dropout_seed = seed ^ 0x5eedULL;

  cases.push_back({{"matvec",
                    [](std::span<const Tensor> in) { return matvec_batched(in[0], in[1], in[2]); },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      Tensor dw(in[0].shape()), db(in[2].shape());
                      Tensor dx = matvec_batched_backward(in[0], in[1], dout, dw.data(), db.data());
                      return std::vector<Tensor>{dw, dx, db};
                    }},
                   {random_tensor({kChannels, kInChannels}, rng), random_tensor({kInChannels, kLength}, rng),
                    random_tensor({kChannels}, rng)},
                   {}});

  cases.push_back({{"conv1d",
                    [](std::span<const Tensor> in) { return conv1d_same(in[0], in[1], in[2]); },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      Tensor dw(in[1].shape()), db(in[2].shape());
                      Tensor dx = conv1d_same_backward(in[0], in[1], dout, dw.data(), db.data());
                      return std::vector<Tensor>{dx, dw, db};
                    }},
                   {random_tensor({kInChannels, kLength}, rng), random_tensor({kChannels, kInChannels, 3}, rng),
                    random_tensor({kChannels}, rng)},
                   {}});

  GradCheckOptions away_from_zero;
  away_from_zero.skip = [](std::size_t, std::size_t, double v) { return near_kink(v); };
  cases.push_back({{"relu",
                    [](std::span<const Tensor> in) { return activation(Activation::kRelu, in[0]); },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      const Tensor y = activation(Activation::kRelu, in[0]);
                      return std::vector<Tensor>{activation_backward(Activation::kRelu, in[0], y, dout)};
                    }},
                   {random_tensor({kChannels, kLength}, rng)},
                   away_from_zero});

  cases.push_back({{"tanh",
                    [](std::span<const Tensor> in) { return activation(Activation::kTanh, in[0]); },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      const Tensor y = activation(Activation::kTanh, in[0]);
                      return std::vector<Tensor>{activation_backward(Activation::kTanh, in[0], y, dout)};
                    }},
                   {random_tensor({kChannels, kLength}, rng)},
                   {}});

  cases.push_back({{"dropout",
                    [dropout_seed](std::span<const Tensor> in) {
                      Rng r(dropout_seed);
                      return dropout(in[0], 0.55, Mode::kTrain, r);
                    },
                    [dropout_seed](std::span<const Tensor> in, const Tensor& dout) {
                      Rng r(dropout_seed);
                      DropoutMask mask;
                      dropout(in[0], 0.55, Mode::kTrain, r, &mask);
                      return std::vector<Tensor>{apply_dropout_mask(dout, mask)};
                    }},
                   {random_tensor({kChannels, kLength}, rng)},
                   {}});

  {
    std::vector<std::int32_t> labels(kLength);
    std::vector<std::uint8_t> mask(kLength, 1);
    std::uniform_int_distribution<int> cls(0, 2);
    for (auto& l : labels) l = cls(rng);
    mask[kLength - 1] = 0;
    cases.push_back({{"softmax_xent",
                      [labels, mask](std::span<const Tensor> in) {
                        return Tensor({1}, {softmax_cross_entropy(in[0], labels, mask).loss});
                      },
                      [labels, mask](std::span<const Tensor> in, const Tensor& dout) {
                        Tensor g = softmax_cross_entropy(in[0], labels, mask).grad_logits;
                        for (double& v : g.data()) v *= dout[0];
                        return std::vector<Tensor>{g};
                      }},
                     {random_tensor({kLength, 3}, rng, 2.0)},
                     {}});
  }

  cases.push_back({{"emb_ctrl",
                    [](std::span<const Tensor> in) {
                      const EmbCtrl m{as_param("w", in[1], Group::kCtrl), as_param("b", in[2], Group::kCtrl)};
                      return emb_ctrl_forward(in[0], m);
                    },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      EmbCtrl m{as_param("w", in[1], Group::kCtrl), as_param("b", in[2], Group::kCtrl)};
                      Tensor dx = emb_ctrl_backward(m, in[0], dout);
                      return std::vector<Tensor>{dx, grad_of(m.w), grad_of(m.b)};
                    }},
                   {random_tensor({kChannels, kLength}, rng), random_tensor({kChannels, kChannels}, rng, 0.5),
                    random_tensor({kChannels}, rng)},
                   {}});

  auto make_cnn_ctrl_from = [](std::span<const Tensor> in) {
    return CnnCtrl{as_param("w_red", in[1], Group::kCtrl), as_param("b_red", in[2], Group::kCtrl),
                   as_param("w_exp", in[3], Group::kCtrl), as_param("b_exp", in[4], Group::kCtrl), 0.55};
  };
  cases.push_back({{"cnn_ctrl",
                    [=](std::span<const Tensor> in) {
                      Rng r(dropout_seed);
                      return cnn_ctrl_forward(in[0], make_cnn_ctrl_from(in), Mode::kTrain, r);
                    },
                    [=](std::span<const Tensor> in, const Tensor& dout) {
                      CnnCtrl m = make_cnn_ctrl_from(in);
                      Rng r(dropout_seed);
                      CnnCtrlCache cache;
                      cnn_ctrl_forward(in[0], m, Mode::kTrain, r, &cache);
                      Tensor dx = cnn_ctrl_backward(m, cache, dout);
                      return std::vector<Tensor>{dx, grad_of(m.w_red), grad_of(m.b_red), grad_of(m.w_exp),
                                                 grad_of(m.b_exp)};
                    }},
                   {random_tensor({kChannels, kLength}, rng), random_tensor({kBottleneck, kChannels}, rng),
                    random_tensor({kBottleneck}, rng), random_tensor({kChannels, kBottleneck}, rng),
                    random_tensor({kChannels}, rng)},
                   {}});

  cases.push_back({{"linear_ctrl",
                    [](std::span<const Tensor> in) {
                      const LinearCtrl m{as_param("w", in[1], Group::kCtrl), as_param("b", in[2], Group::kCtrl)};
                      return linear_ctrl_forward(in[0], m);
                    },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      LinearCtrl m{as_param("w", in[1], Group::kCtrl), as_param("b", in[2], Group::kCtrl)};
                      Tensor dx = linear_ctrl_backward(m, in[0], dout);
                      return std::vector<Tensor>{dx, grad_of(m.w), grad_of(m.b)};
                    }},
                   {random_tensor({kChannels, kLength}, rng), random_tensor({kChannels, kChannels}, rng),
                    random_tensor({kChannels}, rng)},
                   {}});

  cases.push_back({{"output_layer",
                    [](std::span<const Tensor> in) {
                      const OutputLayer m{as_param("w", in[1], Group::kFc), as_param("b", in[2], Group::kFc)};
                      return output_layer_forward(in[0], m);
                    },
                    [](std::span<const Tensor> in, const Tensor& dout) {
                      OutputLayer m{as_param("w", in[1], Group::kFc), as_param("b", in[2], Group::kFc)};
                      Tensor dx = output_layer_backward(m, in[0], dout);
                      return std::vector<Tensor>{dx, grad_of(m.w), grad_of(m.b)};
                    }},
                   {random_tensor({kChannels, kLength}, rng), random_tensor({3, kChannels}, rng),
                    random_tensor({3}, rng)},
                   {}});

  // Embedding control (2 channels) -> conv to 8 channels -> CNN control.
  auto chain_forward = [=](std::span<const Tensor> in, CnnCtrlCache* cache, Tensor* ctrl_out, Tensor* conv_out) {
    const EmbCtrl emb{as_param("w_emb", in[1], Group::kCtrl), as_param("b_emb", in[2], Group::kCtrl)};
    const Tensor z1 = emb_ctrl_forward(in[0], emb);
    const Tensor c = conv1d_same(z1, in[3], in[4]);
    const CnnCtrl m{as_param("w_red", in[5], Group::kCtrl), as_param("b_red", in[6], Group::kCtrl),
                    as_param("w_exp", in[7], Group::kCtrl), as_param("b_exp", in[8], Group::kCtrl), 0.55};
    Rng r(dropout_seed);
    if (ctrl_out) *ctrl_out = z1;
    if (conv_out) *conv_out = c;
    return cnn_ctrl_forward(c, m, Mode::kTrain, r, cache);
  };
  cases.push_back({{"ctrl_chain",
                    [=](std::span<const Tensor> in) { return chain_forward(in, nullptr, nullptr, nullptr); },
                    [=](std::span<const Tensor> in, const Tensor& dout) {
                      CnnCtrlCache cache;
                      Tensor z1, c;
                      chain_forward(in, &cache, &z1, &c);
                      CnnCtrl m{as_param("w_red", in[5], Group::kCtrl), as_param("b_red", in[6], Group::kCtrl),
                                as_param("w_exp", in[7], Group::kCtrl), as_param("b_exp", in[8], Group::kCtrl), 0.55};
                      const Tensor dc = cnn_ctrl_backward(m, cache, dout);
                      Tensor dw_conv(in[3].shape()), db_conv(in[4].shape());
                      const Tensor dz1 = conv1d_same_backward(z1, in[3], dc, dw_conv.data(), db_conv.data());
                      EmbCtrl emb{as_param("w_emb", in[1], Group::kCtrl), as_param("b_emb", in[2], Group::kCtrl)};
                      Tensor dx = emb_ctrl_backward(emb, in[0], dz1);
                      return std::vector<Tensor>{dx, grad_of(emb.w), grad_of(emb.b), dw_conv, db_conv,
                                                 grad_of(m.w_red), grad_of(m.b_red), grad_of(m.w_exp),
                                                 grad_of(m.b_exp)};
                    }},
                   {random_tensor({kInChannels, kLength}, rng), random_tensor({kInChannels, kInChannels}, rng, 0.5),
                    random_tensor({kInChannels}, rng), random_tensor({kChannels, kInChannels, 5}, rng),
                    random_tensor({kChannels}, rng), random_tensor({kBottleneck, kChannels}, rng),
                    random_tensor({kBottleneck}, rng), random_tensor({kChannels, kBottleneck}, rng),
                    random_tensor({kChannels}, rng)},
                   {}});

  for (auto& c : cases) {
    c.options.seed = seed + 101;
    if (c.op.name != faulty_op) continue;
    auto backward = c.op.backward;
    c.op.backward = [backward](std::span<const Tensor> in, const Tensor& dout) {
      auto grads = backward(in, dout);
      for (auto& g : grads) {
        for (double& v : g.data()) v *= 1.5;
      }
      return grads;
    };
  }
  return cases;
}

}  // namespace ctrl
