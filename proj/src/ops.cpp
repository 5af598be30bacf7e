#include "sos/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sos/errors.hpp"

namespace sos::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << shape_string(a.shape()) << " vs " << shape_string(b.shape());
    throw ShapeError(os.str());
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    std::ostringstream os;
    os << op << ": expected rank " << rank << ", got " << shape_string(a.shape());
    throw ShapeError(os.str());
  }
}

// Elementwise unary op whose derivative is expressed through the input x and
// output y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto in = a.data();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), fwd);
  Tensor x = a;
  std::vector<double> saved = out;
  return apply_op(name, a.shape(), std::move(out), {a},
                  [x, saved = std::move(saved), deriv](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (grads[0].empty()) return;
                    auto xs = x.data();
                    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * deriv(xs[i], saved[i]);
                  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return apply_op("add", a.shape(), std::move(out), {a, b},
                  [](std::span<const double> g, std::span<std::span<double>> grads) {
                    for (auto& dst : grads) {
                      if (dst.empty()) continue;
                      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                    }
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return apply_op("sub", a.shape(), std::move(out), {a, b},
                  [](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] -= g[i];
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return apply_op("mul", a.shape(), std::move(out), {a, b},
                  [a, b](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * b[i];
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] += g[i] * a[i];
                  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (b[i] == 0.0) throw DomainError("div: division by zero");
    out[i] = a[i] / b[i];
  }
  return apply_op("div", a.shape(), std::move(out), {a, b},
                  [a, b](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] / b[i];
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[1][i] -= g[i] * a[i] / (b[i] * b[i]);
                  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw ShapeError("mul_scalar: expected a scalar, got " + shape_string(s.shape()));
  const double factor = s[0];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return apply_op("mul_scalar", a.shape(), std::move(out), {a, s},
                  [a, factor](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i] * factor;
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < g.size(); ++i) grads[1][0] += g[i] * a[i];
                  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "maximum");
  std::vector<double> out(a.size());
  // Ties route the gradient to the first argument.
  std::vector<bool> first(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    first[i] = a[i] >= b[i];
    out[i] = first[i] ? a[i] : b[i];
  }
  return apply_op("maximum", a.shape(), std::move(out), {a, b},
                  [first = std::move(first)](std::span<const double> g, std::span<std::span<double>> grads) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      auto& dst = grads[first[i] ? 0 : 1];
                      if (!dst.empty()) dst[i] += g[i];
                    }
                  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (!(x > 0.0)) throw DomainError("log: non-positive input");
  }
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor log_clamped(const Tensor& a, double floor) {
  return unary("log_clamped", a, [floor](double x) { return std::log(std::max(x, floor)); },
               [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  return apply_op("sum", {}, {total}, {a},
                  [](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (grads[0].empty()) return;
                    for (auto& v : grads[0]) v += g[0];
                  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) throw ShapeError("pick: index out of range");
  return apply_op("pick", {}, {a[index]}, {a},
                  [index](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (!grads[0].empty()) grads[0][index] += g[0];
                  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> values(a.data().begin(), a.data().end());
  return apply_op("reshape", std::move(shape), std::move(values), {a},
                  [](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (grads[0].empty()) return;
                    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += g[i];
                  });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  auto in = logits.data();
  for (double x : in) {
    if (!std::isfinite(x)) throw DomainError("softmax: non-finite logit");
  }
  double peak = *std::max_element(in.begin(), in.end());
  std::vector<double> out(in.size());
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  std::vector<double> probs = out;
  return apply_op("softmax", logits.shape(), std::move(out), {logits},
                  [probs = std::move(probs)](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (grads[0].empty()) return;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * probs[i];
                    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += probs[i] * (g[i] - dot);
                  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double aip = ad[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bd[p * n + j];
    }
  return apply_op("matmul", {m, n}, std::move(out), {a, b},
                  [a, b, m, k, n](std::span<const double> g, std::span<std::span<double>> grads) {
                    auto ad = a.data();
                    auto bd = b.data();
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
                          grads[0][i * k + p] += acc;
                        }
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                          double aip = ad[i * k + p];
                          for (std::size_t j = 0; j < n; ++j) grads[1][p * n + j] += aip * g[i * n + j];
                        }
                  });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  require_rank(a, 2, "matvec");
  require_rank(x, 1, "matvec");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  if (x.size() != k) {
    throw ShapeError("matvec: " + shape_string(a.shape()) + " x " + shape_string(x.shape()));
  }
  std::vector<double> out(m, 0.0);
  auto ad = a.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ad[i * k + p] * xd[p];
    out[i] = acc;
  }
  return apply_op("matvec", {m}, std::move(out), {a, x},
                  [a, x, m, k](std::span<const double> g, std::span<std::span<double>> grads) {
                    auto ad = a.data();
                    auto xd = x.data();
                    if (!grads[0].empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) grads[0][i * k + p] += g[i] * xd[p];
                    if (!grads[1].empty())
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) grads[1][p] += g[i] * ad[i * k + p];
                  });
}

Tensor affine(const Tensor& weight, const Tensor& bias, const Tensor& x) {
  require_rank(bias, 1, "affine");
  if (weight.rank() != 2 || bias.size() != weight.shape()[0]) {
    throw ShapeError("affine: weight " + shape_string(weight.shape()) + " with bias " +
                     shape_string(bias.shape()));
  }
  return add(matvec(weight, x), bias);
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& part : parts) {
    require_rank(part, 1, "concat");
    offsets.push_back(out.size());
    out.insert(out.end(), part.data().begin(), part.data().end());
  }
  std::size_t total = out.size();
  return apply_op("concat", {total}, std::move(out), {parts.begin(), parts.end()},
                  [offsets = std::move(offsets)](std::span<const double> g, std::span<std::span<double>> grads) {
                    for (std::size_t p = 0; p < grads.size(); ++p) {
                      auto& dst = grads[p];
                      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[p] + i];
                    }
                  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_rank(bias, 1, "conv2d bias");
  if (stride == 0) throw UsageError("conv2d: stride must be positive");
  const std::size_t cin = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t cout = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != cin || bias.size() != cout) {
    throw ShapeError("conv2d: input " + shape_string(input.shape()) + ", weight " +
                     shape_string(weight.shape()) + ", bias " + shape_string(bias.shape()));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  // Visits every (output, input, weight) index triple that contributes.
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((o * cin + c) * kh + ky) * kw + kx;
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const std::size_t in_row = (c * h + static_cast<std::size_t>(iy)) * w;
              const std::size_t out_row = (o * oh + y) * ow;
              for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                body(out_row + x, in_row + static_cast<std::size_t>(ix), widx);
              }
            }
          }
  };

  std::vector<double> out(cout * oh * ow);
  auto bd = bias.data();
  for (std::size_t o = 0; o < cout; ++o)
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(o * oh * ow),
              out.begin() + static_cast<std::ptrdiff_t>((o + 1) * oh * ow), bd[o]);
  {
    auto in = input.data();
    auto wd = weight.data();
    for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { out[oi] += wd[wi] * in[ii]; });
  }

  return apply_op("conv2d", {cout, oh, ow}, std::move(out), {input, weight, bias},
                  [=](std::span<const double> g, std::span<std::span<double>> grads) {
                    auto in = input.data();
                    auto wd = weight.data();
                    auto& gin = grads[0];
                    auto& gw = grads[1];
                    auto& gb = grads[2];
                    if (!gin.empty())
                      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gin[ii] += wd[wi] * g[oi]; });
                    if (!gw.empty())
                      for_each_tap([&](std::size_t oi, std::size_t ii, std::size_t wi) { gw[wi] += in[ii] * g[oi]; });
                    if (!gb.empty())
                      for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t i = 0; i < oh * ow; ++i) gb[o] += g[o * oh * ow + i];
                  });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 3, "global_avg_pool");
  const std::size_t c = input.shape()[0], plane = input.shape()[1] * input.shape()[2];
  std::vector<double> out(c, 0.0);
  auto in = input.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += in[ch * plane + i];
    out[ch] = acc / static_cast<double>(plane);
  }
  return apply_op("global_avg_pool", {c}, std::move(out), {input},
                  [c, plane](std::span<const double> g, std::span<std::span<double>> grads) {
                    if (grads[0].empty()) return;
                    const double inv = 1.0 / static_cast<double>(plane);
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t i = 0; i < plane; ++i) grads[0][ch * plane + i] += g[ch] * inv;
                  });
}

}  // namespace sos::ops
