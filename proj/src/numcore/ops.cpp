#include <cmath>
#include <numbers>
#include <string>

#include "sgac/tape.hpp"

namespace sgac {
namespace {

using Array = Eigen::ArrayXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

// Elementwise op whose derivative is a function of the input and output values.
template <typename F, typename DF>
Var unary(const char* op, Var a, F f, DF df) {
  Tape& tape = *a.tape();
  Tensor out(a.shape(), f(a.value().data()));
  return tape.record(op, std::move(out), {a}, [a, df](Tape& t, const Array& g) {
    t.accumulate(a, g * df(t.value(a).data()));
  });
}

// Patch matrix of a [C,H,W] image: rows (c, ki, kj), columns (oi, oj).
struct ConvGeometry {
  Index channels, height, width, kernel, stride, padding, out_h, out_w;
};

RowMat im2col(const double* img, const ConvGeometry& g) {
  RowMat cols = RowMat::Zero(g.channels * g.kernel * g.kernel, g.out_h * g.out_w);
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj) {
        double* row = cols.row((c * g.kernel + ki) * g.kernel + kj).data();
        for (Index oi = 0; oi < g.out_h; ++oi) {
          const Index i = oi * g.stride - g.padding + ki;
          if (i < 0 || i >= g.height) continue;
          const double* src = img + (c * g.height + i) * g.width;
          for (Index oj = 0; oj < g.out_w; ++oj) {
            const Index j = oj * g.stride - g.padding + kj;
            if (j >= 0 && j < g.width) row[oi * g.out_w + oj] = src[j];
          }
        }
      }
  return cols;
}

void col2im_add(const RowMat& cols, const ConvGeometry& g, double* img) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ki = 0; ki < g.kernel; ++ki)
      for (Index kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols.row((c * g.kernel + ki) * g.kernel + kj).data();
        for (Index oi = 0; oi < g.out_h; ++oi) {
          const Index i = oi * g.stride - g.padding + ki;
          if (i < 0 || i >= g.height) continue;
          double* dst = img + (c * g.height + i) * g.width;
          for (Index oj = 0; oj < g.out_w; ++oj) {
            const Index j = oj * g.stride - g.padding + kj;
            if (j >= 0 && j < g.width) dst[j] += row[oi * g.out_w + oj];
          }
        }
      }
}

Eigen::Map<const RowMat> as_matrix(const Tensor& t, Index rows, Index cols) {
  return Eigen::Map<const RowMat>(t.data().data(), rows, cols);
}

void check_conv_args(const char* op, Var x, Var w, Index stride, Index padding) {
  if (x.shape().rank() != 3 || w.shape().rank() != 4)
    throw ShapeError(std::string(op) + ": expected [C,H,W] input and 4-d weight");
  if (w.shape()[2] != w.shape()[3]) throw ShapeError(std::string(op) + ": kernel must be square");
  if (stride < 1 || padding < 0) throw ShapeError(std::string(op) + ": bad stride/padding");
}

Index channel_block(Var x, Var p, const char* op) {
  if (x.shape().rank() < 1 || p.shape().rank() != 1 || p.shape()[0] != x.shape()[0])
    throw ShapeError(std::string(op) + ": parameter " + p.shape().str() + " does not match channels of " +
                     x.shape().str());
  return x.size() / x.shape()[0];
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape(), a.value().data() + b.value().data());
  return a.tape()->record("add", std::move(out), {a, b}, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape(), a.value().data() - b.value().data());
  return a.tape()->record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), a.value().data() * b.value().data());
  return a.tape()->record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Array& g) {
    t.accumulate(a, g * t.value(b).data());
    t.accumulate(b, g * t.value(a).data());
  });
}

Var div(Var a, Var b) {
  require_same_shape("div", a, b);
  if ((b.value().data() == 0.0).any()) throw DomainError("div: division by zero");
  Tensor out(a.shape(), a.value().data() / b.value().data());
  return a.tape()->record("div", std::move(out), {a, b}, [a, b](Tape& t, const Array& g) {
    const Array& bv = t.value(b).data();
    t.accumulate(a, g / bv);
    t.accumulate(b, -g * t.value(a).data() / bv.square());
  });
}

Var scale(Var a, double factor) {
  Tensor out(a.shape(), a.value().data() * factor);
  return a.tape()->record("scale", std::move(out), {a},
                          [a, factor](Tape& t, const Array& g) { t.accumulate(a, g * factor); });
}

Var add_scalar(Var a, double offset) {
  Tensor out(a.shape(), a.value().data() + offset);
  return a.tape()->record("add_scalar", std::move(out), {a}, [a](Tape& t, const Array& g) { t.accumulate(a, g); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var a, Var b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() != 2 || sb.rank() != 2 || sa[1] != sb[0])
    throw ShapeError("matmul: incompatible shapes " + sa.str() + " x " + sb.str());
  const Index m = sa[0], k = sa[1], n = sb[1];
  Tensor out(Shape{m, n});
  Eigen::Map<RowMat>(out.data().data(), m, n).noalias() = as_matrix(a.value(), m, k) * as_matrix(b.value(), k, n);
  return a.tape()->record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Array& g) {
    Eigen::Map<const RowMat> G(g.data(), m, n);
    if (a.requires_grad()) {
      Array ga(m * k);
      Eigen::Map<RowMat>(ga.data(), m, k).noalias() = G * as_matrix(t.value(b), k, n).transpose();
      t.accumulate(a, ga);
    }
    if (b.requires_grad()) {
      Array gb(k * n);
      Eigen::Map<RowMat>(gb.data(), k, n).noalias() = as_matrix(t.value(a), m, k).transpose() * G;
      t.accumulate(b, gb);
    }
  });
}

Var conv2d(Var x, Var weight, Index stride, Index padding) {
  check_conv_args("conv2d", x, weight, stride, padding);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != xs[0]) throw ShapeError("conv2d: weight " + ws.str() + " does not match input " + xs.str());
  const Index k = ws[2];
  const Index out_h = (xs[1] + 2 * padding - k) / stride + 1;
  const Index out_w = (xs[2] + 2 * padding - k) / stride + 1;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv2d: input " + xs.str() + " smaller than kernel");
  const ConvGeometry geo{xs[0], xs[1], xs[2], k, stride, padding, out_h, out_w};
  const Index cout = ws[0];
  const Index patch = xs[0] * k * k;

  const RowMat cols = im2col(x.value().data().data(), geo);
  Tensor out(Shape{cout, out_h, out_w});
  Eigen::Map<RowMat>(out.data().data(), cout, out_h * out_w).noalias() = as_matrix(weight.value(), cout, patch) * cols;

  return x.tape()->record("conv2d", std::move(out), {x, weight}, [x, weight, geo, cout, patch](Tape& t, const Array& g) {
    Eigen::Map<const RowMat> G(g.data(), cout, geo.out_h * geo.out_w);
    if (weight.requires_grad()) {
      const RowMat cols = im2col(t.value(x).data().data(), geo);
      Array gw(cout * patch);
      Eigen::Map<RowMat>(gw.data(), cout, patch).noalias() = G * cols.transpose();
      t.accumulate(weight, gw);
    }
    if (x.requires_grad()) {
      const RowMat dcols = as_matrix(t.value(weight), cout, patch).transpose() * G;
      Array gx = Array::Zero(t.value(x).size());
      col2im_add(dcols, geo, gx.data());
      t.accumulate(x, gx);
    }
  });
}

Var conv_transpose2d(Var x, Var weight, Index stride, Index padding) {
  check_conv_args("conv_transpose2d", x, weight, stride, padding);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws[0] != xs[0]) throw ShapeError("conv_transpose2d: weight " + ws.str() + " does not match input " + xs.str());
  const Index cin = xs[0], cout = ws[1], k = ws[2];
  const Index out_h = (xs[1] - 1) * stride - 2 * padding + k;
  const Index out_w = (xs[2] - 1) * stride - 2 * padding + k;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d: empty output");
  // The output image is the "input" side of the adjoint convolution.
  const ConvGeometry geo{cout, out_h, out_w, k, stride, padding, xs[1], xs[2]};
  const Index patch = cout * k * k;
  const Index pixels = xs[1] * xs[2];

  const RowMat cols = as_matrix(weight.value(), cin, patch).transpose() * as_matrix(x.value(), cin, pixels);
  Tensor out(Shape{cout, out_h, out_w});
  col2im_add(cols, geo, out.data().data());

  return x.tape()->record("conv_transpose2d", std::move(out), {x, weight},
                          [x, weight, geo, cin, patch, pixels](Tape& t, const Array& g) {
                            const RowMat dcols = im2col(g.data(), geo);
                            if (x.requires_grad()) {
                              Array gx(cin * pixels);
                              Eigen::Map<RowMat>(gx.data(), cin, pixels).noalias() =
                                  as_matrix(t.value(weight), cin, patch) * dcols;
                              t.accumulate(x, gx);
                            }
                            if (weight.requires_grad()) {
                              Array gw(cin * patch);
                              Eigen::Map<RowMat>(gw.data(), cin, patch).noalias() =
                                  as_matrix(t.value(x), cin, pixels) * dcols.transpose();
                              t.accumulate(weight, gw);
                            }
                          });
}

Var channel_add(Var x, Var p) {
  const Index block = channel_block(x, p, "channel_add");
  const Index channels = x.shape()[0];
  Tensor out = x.value();
  for (Index c = 0; c < channels; ++c) out.data().segment(c * block, block) += p.value()[c];
  return x.tape()->record("channel_add", std::move(out), {x, p}, [x, p, block, channels](Tape& t, const Array& g) {
    t.accumulate(x, g);
    if (p.requires_grad()) {
      Array gp(channels);
      for (Index c = 0; c < channels; ++c) gp[c] = g.segment(c * block, block).sum();
      t.accumulate(p, gp);
    }
  });
}

Var channel_mul(Var x, Var p) {
  const Index block = channel_block(x, p, "channel_mul");
  const Index channels = x.shape()[0];
  Tensor out = x.value();
  for (Index c = 0; c < channels; ++c) out.data().segment(c * block, block) *= p.value()[c];
  return x.tape()->record("channel_mul", std::move(out), {x, p}, [x, p, block, channels](Tape& t, const Array& g) {
    const Array& xv = t.value(x).data();
    const Array& pv = t.value(p).data();
    if (x.requires_grad()) {
      Array gx(xv.size());
      for (Index c = 0; c < channels; ++c) gx.segment(c * block, block) = g.segment(c * block, block) * pv[c];
      t.accumulate(x, gx);
    }
    if (p.requires_grad()) {
      Array gp(channels);
      for (Index c = 0; c < channels; ++c)
        gp[c] = (g.segment(c * block, block) * xv.segment(c * block, block)).sum();
      t.accumulate(p, gp);
    }
  });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      "leaky_relu", a, [slope](const Array& v) -> Array { return (v > 0).select(v, slope * v); },
      [slope](const Array& v) -> Array { return (v > 0).select(Array::Ones(v.size()), slope); });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](const Array& v) -> Array { return v.exp(); }, [](const Array& v) -> Array { return v.exp(); });
}

Var log(Var a) {
  if ((a.value().data() <= 0).any()) throw DomainError("log: nonpositive input");
  return unary(
      "log", a, [](const Array& v) -> Array { return v.log(); }, [](const Array& v) -> Array { return v.inverse(); });
}

Var softplus(Var a) {
  return unary(
      "softplus", a, [](const Array& v) -> Array { return v.unaryExpr(&stable_softplus); },
      [](const Array& v) -> Array { return v.unaryExpr(&stable_sigmoid); });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](const Array& v) -> Array { return v.unaryExpr(&stable_sigmoid); },
      [](const Array& v) -> Array {
        const Array s = v.unaryExpr(&stable_sigmoid);
        return s * (1.0 - s);
      });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](const Array& v) -> Array { return v.tanh(); },
      [](const Array& v) -> Array { return 1.0 - v.tanh().square(); });
}

Var atanh(Var a) {
  if ((a.value().data().abs() >= 1.0).any()) throw DomainError("atanh: input outside (-1, 1)");
  return unary(
      "atanh", a, [](const Array& v) -> Array { return v.unaryExpr([](double e) { return std::atanh(e); }); },
      [](const Array& v) -> Array { return (1.0 - v.square()).inverse(); });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](const Array& v) -> Array { return v.abs(); },
      [](const Array& v) -> Array { return v.sign(); });
}

Var square(Var a) {
  return unary(
      "square", a, [](const Array& v) -> Array { return v.square(); }, [](const Array& v) -> Array { return 2.0 * v; });
}

Var normal_cdf(Var a) {
  return unary(
      "normal_cdf", a,
      [](const Array& v) -> Array {
        return v.unaryExpr([](double e) { return 0.5 * std::erfc(-e * std::numbers::sqrt2 / 2.0); });
      },
      [](const Array& v) -> Array {
        return (-0.5 * v.square()).exp() * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: empty interval");
  return unary(
      "clamp", a, [lo, hi](const Array& v) -> Array { return v.max(lo).min(hi); },
      [lo, hi](const Array& v) -> Array { return ((v >= lo) && (v <= hi)).cast<double>(); });
}

Var sum(Var a) {
  Tensor out = Tensor::scalar(a.value().data().sum());
  return a.tape()->record("sum", std::move(out), {a}, [a](Tape& t, const Array& g) {
    t.accumulate(a, Array::Constant(t.value(a).size(), g[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var reshape(Var a, Shape shape) {
  if (shape.numel() != a.size()) throw ShapeError("reshape: " + a.shape().str() + " -> " + shape.str());
  Tensor out(std::move(shape), a.value().data());
  return a.tape()->record("reshape", std::move(out), {a}, [a](Tape& t, const Array& g) { t.accumulate(a, g); });
}

Var slice_channels(Var a, Index begin, Index count) {
  const Shape& s = a.shape();
  if (s.rank() < 1 || begin < 0 || count < 1 || begin + count > s[0])
    throw ShapeError("slice_channels: range out of bounds for " + s.str());
  const Index block = a.size() / s[0];
  std::vector<Index> dims = s.dims();
  dims[0] = count;
  Tensor out(Shape(std::move(dims)), a.value().data().segment(begin * block, count * block));
  return a.tape()->record("slice_channels", std::move(out), {a}, [a, begin, count, block](Tape& t, const Array& g) {
    if (!a.requires_grad()) return;
    Array ga = Array::Zero(t.value(a).size());
    ga.segment(begin * block, count * block) = g;
    t.accumulate(a, ga);
  });
}

}  // namespace sgac
