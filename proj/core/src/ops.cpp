#include "ctrl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ctrl/error.hpp"

namespace ctrl {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                   shape_to_string(b.shape()));
}

void check_sink(std::span<double> sink, std::size_t expected, const char* what) {
  if (!sink.empty() && sink.size() != expected) {
    throw ShapeError(std::string(what) + " gradient buffer has " + std::to_string(sink.size()) +
                     " entries, expected " + std::to_string(expected));
  }
}

}  // namespace

Tensor matvec_batched(const Tensor& w, const Tensor& x, const Tensor& b) {
  require_rank(w, 2, "matvec weight");
  require_rank(x, 2, "matvec input");
  require_rank(b, 1, "matvec bias");
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1), len = x.dim(1);
  if (x.dim(0) != in_dim) shape_mismatch("matvec_batched", w, x);
  if (b.dim(0) != out_dim) shape_mismatch("matvec_batched", w, b);

  Tensor out({out_dim, len});
  for (std::size_t o = 0; o < out_dim; ++o) {
    double* row = &out.at(o, 0);
    std::fill(row, row + len, b[o]);
    for (std::size_t j = 0; j < in_dim; ++j) {
      const double wj = w.at(o, j);
      if (wj == 0.0) continue;
      const double* xr = &x.at(j, 0);
      for (std::size_t t = 0; t < len; ++t) row[t] += wj * xr[t];
    }
  }
  return out;
}

Tensor matvec_batched_backward(const Tensor& w, const Tensor& x, const Tensor& dout, std::span<double> dw,
                               std::span<double> db) {
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1), len = x.dim(1);
  if (dout.rank() != 2 || dout.dim(0) != out_dim || dout.dim(1) != len) shape_mismatch("matvec_batched_backward", w, dout);
  check_sink(dw, w.size(), "matvec weight");
  check_sink(db, out_dim, "matvec bias");

  Tensor dx({in_dim, len});
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double* g = &dout.at(o, 0);
    if (!db.empty()) {
      double s = 0.0;
      for (std::size_t t = 0; t < len; ++t) s += g[t];
      db[o] += s;
    }
    for (std::size_t j = 0; j < in_dim; ++j) {
      const double* xr = &x.at(j, 0);
      double* dxr = &dx.at(j, 0);
      const double wj = w.at(o, j);
      double acc = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        acc += g[t] * xr[t];
        dxr[t] += wj * g[t];
      }
      if (!dw.empty()) dw[o * in_dim + j] += acc;
    }
  }
  return dx;
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "conv1d input");
  require_rank(w, 3, "conv1d weight");
  require_rank(b, 1, "conv1d bias");
  const std::size_t c_out = w.dim(0), c_in = w.dim(1), k = w.dim(2), len = x.dim(1);
  if (k % 2 == 0) throw ConfigError("conv1d_same needs an odd kernel size, got " + std::to_string(k));
  if (x.dim(0) != c_in) shape_mismatch("conv1d_same", x, w);
  if (b.dim(0) != c_out) shape_mismatch("conv1d_same", w, b);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);

  Tensor out({c_out, len});
  for (std::size_t c = 0; c < c_out; ++c) {
    double* row = &out.at(c, 0);
    std::fill(row, row + len, b[c]);
    for (std::size_t i = 0; i < c_in; ++i) {
      const double* xr = &x.at(i, 0);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wk = w.at(c, i, kk);
        if (wk == 0.0) continue;
        // out[t] += wk * x[t + kk - pad] for positions where the tap lands inside x
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - shift);
        for (std::ptrdiff_t t = lo; t < hi; ++t) row[t] += wk * xr[t + shift];
      }
    }
  }
  return out;
}

Tensor conv1d_same_backward(const Tensor& x, const Tensor& w, const Tensor& dout, std::span<double> dw,
                            std::span<double> db) {
  const std::size_t c_out = w.dim(0), c_in = w.dim(1), k = w.dim(2), len = x.dim(1);
  if (dout.rank() != 2 || dout.dim(0) != c_out || dout.dim(1) != len) shape_mismatch("conv1d_same_backward", w, dout);
  check_sink(dw, w.size(), "conv1d weight");
  check_sink(db, c_out, "conv1d bias");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto n = static_cast<std::ptrdiff_t>(len);

  Tensor dx({c_in, len});
  for (std::size_t c = 0; c < c_out; ++c) {
    const double* g = &dout.at(c, 0);
    if (!db.empty()) {
      double s = 0.0;
      for (std::size_t t = 0; t < len; ++t) s += g[t];
      db[c] += s;
    }
    for (std::size_t i = 0; i < c_in; ++i) {
      const double* xr = &x.at(i, 0);
      double* dxr = &dx.at(i, 0);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wk = w.at(c, i, kk);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - pad;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - shift);
        double acc = 0.0;
        for (std::ptrdiff_t t = lo; t < hi; ++t) {
          acc += g[t] * xr[t + shift];
          dxr[t + shift] += wk * g[t];
        }
        if (!dw.empty()) dw[(c * c_in + i) * k + kk] += acc;
      }
    }
  }
  return dx;
}

Tensor activation(Activation kind, const Tensor& x) {
  Tensor y = x;
  auto d = y.data();
  if (kind == Activation::kRelu) {
    for (double& v : d) v = v > 0.0 ? v : 0.0;
  } else {
    for (double& v : d) v = std::tanh(v);
  }
  y.drop_grad();
  return y;
}

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& y, const Tensor& dout) {
  if (x.shape() != dout.shape()) shape_mismatch("activation_backward", x, dout);
  if (y.shape() != dout.shape()) shape_mismatch("activation_backward", y, dout);
  Tensor dx(dout.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (kind == Activation::kRelu) {
      dx[i] = x[i] > 0.0 ? dout[i] : 0.0;
    } else {
      dx[i] = (1.0 - y[i] * y[i]) * dout[i];
    }
  }
  return dx;
}

DropoutMask make_dropout_mask(std::vector<std::uint8_t> keep, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  return DropoutMask{std::move(keep), 1.0 / (1.0 - rate)};
}

Tensor dropout(const Tensor& x, double rate, Mode mode, Rng& rng, DropoutMask* mask_out) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  DropoutMask mask;
  if (mode == Mode::kTrain && rate > 0.0) {
    std::bernoulli_distribution keep(1.0 - rate);
    mask.keep.resize(x.size());
    for (auto& k : mask.keep) k = keep(rng) ? 1 : 0;
    mask.scale = 1.0 / (1.0 - rate);
  }
  Tensor out = apply_dropout_mask(x, mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

Tensor apply_dropout_mask(const Tensor& x, const DropoutMask& mask) {
  Tensor out(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  if (mask.is_identity()) return out;
  if (mask.keep.size() != x.size()) {
    throw ShapeError("dropout mask has " + std::to_string(mask.keep.size()) + " entries for tensor " +
                     shape_to_string(x.shape()));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.keep[i] ? out[i] * mask.scale : 0.0;
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax input");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = logits.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      p.at(r, c) = std::exp(logits.at(r, c) - m);
      z += p.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) p.at(r, c) /= z;
  }
  return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels,
                                   std::span<const std::uint8_t> mask) {
  require_rank(logits, 2, "cross-entropy logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows || mask.size() != rows) {
    throw ShapeError("cross-entropy: " + std::to_string(rows) + " logit rows but " + std::to_string(labels.size()) +
                     " labels and " + std::to_string(mask.size()) + " mask entries");
  }
  std::size_t active = 0;
  for (auto m : mask) active += m ? 1 : 0;
  if (active == 0) throw DegenerateInputError("cross-entropy mask selects no positions");

  const Tensor p = softmax_rows(logits);
  CrossEntropy result{0.0, Tensor(logits.shape())};
  const double inv = 1.0 / static_cast<double>(active);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const std::int32_t y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw ShapeError("cross-entropy label " + std::to_string(y) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(cols) + ")");
    }
    // log-softmax computed directly for accuracy when p is tiny
    double m = logits.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, logits.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(logits.at(r, c) - m);
    result.loss -= (logits.at(r, static_cast<std::size_t>(y)) - m - std::log(z)) * inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double onehot = c == static_cast<std::size_t>(y) ? 1.0 : 0.0;
      result.grad_logits.at(r, c) = (p.at(r, c) - onehot) * inv;
    }
  }
  return result;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat input");
  require_rank(b, 2, "concat input");
  if (a.dim(1) != b.dim(1)) shape_mismatch("concat_channels", a, b);
  std::vector<double> values(a.data().begin(), a.data().end());
  values.insert(values.end(), b.data().begin(), b.data().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1)}, std::move(values));
}

Tensor slice_rows(const Tensor& t, std::size_t first, std::size_t count) {
  require_rank(t, 2, "slice input");
  if (count == 0 || first + count > t.dim(0)) {
    throw ShapeError("row slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") out of range for " + shape_to_string(t.shape()));
  }
  const std::size_t cols = t.dim(1);
  auto begin = t.data().begin() + static_cast<std::ptrdiff_t>(first * cols);
  return Tensor({count, cols}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * cols)));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace ctrl
