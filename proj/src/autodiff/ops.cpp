#include "xinv/autodiff/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>

#include "xinv/error.hpp"

namespace xinv::ops {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using ColMap = Eigen::Map<ColMatrix>;
using ConstColMap = Eigen::Map<const ColMatrix>;

[[noreturn]] void shape_error(std::string_view op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(std::string_view op, std::string_view name, const Tensor& t,
                  std::size_t rank) {
  if (t.rank() != rank) {
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) +
                        ", got shape " + to_string(t.shape()));
  }
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "operand shapes differ: " + to_string(a.shape()) + " vs " +
                        to_string(b.shape()));
  }
}

// Elementwise op with derivative expressed through input and output values.
template <typename Fwd, typename Deriv>
Tensor unary(Graph& g, OpKind kind, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
  if (!g.should_record({&x, 1})) return out;
  return g.record(kind, op_name(kind), {x}, out, [x, out, deriv] {
    if (!x.requires_grad()) return;
    auto gx = grad_buffer(x);
    auto go = out.grad();
    auto xv = x.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * deriv(xv[i], ov[i]);
  });
}

}  // namespace

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("matmul", "lhs", a, 2);
  require_rank("matmul", "rhs", b, 2);
  const auto n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    shape_error("matmul", "inner dimensions differ: lhs " + to_string(a.shape()) + " rhs " +
                              to_string(b.shape()));
  }
  Tensor out({n, m});
  ConstRowMap A(a.data().data(), n, k);
  ConstRowMap B(b.data().data(), k, m);
  RowMap(out.data().data(), n, m).noalias() = A * B;

  const Tensor inputs[] = {a, b};
  if (!g.should_record(inputs)) return out;
  return g.record(OpKind::MatMul, "matmul", {a, b}, out, [a, b, out, n, k, m] {
    ConstRowMap dC(out.grad().data(), n, m);
    if (a.requires_grad()) {
      RowMap(grad_buffer(a).data(), n, k).noalias() +=
          dC * ConstRowMap(b.data().data(), k, m).transpose();
    }
    if (b.requires_grad()) {
      RowMap(grad_buffer(b).data(), k, m).noalias() +=
          ConstRowMap(a.data().data(), n, k).transpose() * dC;
    }
  });
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", "input", x, 2);
  require_rank("add_bias", "bias", bias, 1);
  const auto n = x.dim(0), m = x.dim(1);
  if (bias.dim(0) != m) {
    shape_error("add_bias", "bias length " + std::to_string(bias.dim(0)) +
                                " does not match columns " + std::to_string(m));
  }
  Tensor out(x.shape());
  auto xd = x.data();
  auto bd = bias.data();
  auto od = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) od[i * m + j] = xd[i * m + j] + bd[j];

  const Tensor inputs[] = {x, bias};
  if (!g.should_record(inputs)) return out;
  return g.record(OpKind::AddBias, "add_bias", {x, bias}, out, [x, bias, out, n, m] {
    auto go = out.grad();
    if (x.requires_grad()) {
      auto gx = grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (bias.requires_grad()) {
      auto gb = grad_buffer(bias);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += go[i * m + j];
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, pad;
  std::size_t patch() const { return c * k * k; }
  std::size_t pixels() const { return h * w; }
  std::size_t columns() const { return n * h * w; }
};

// Column j = (image, row, col) holds the zero-padded receptive field in
// (channel, ky, kx) order.
void im2col(const ConvGeometry& geo, std::span<const double> x, std::span<double> col) {
  const auto rows = geo.patch();
  for (std::size_t img = 0; img < geo.n; ++img) {
    const double* xi = x.data() + img * geo.c * geo.pixels();
    for (std::size_t y = 0; y < geo.h; ++y) {
      for (std::size_t xpos = 0; xpos < geo.w; ++xpos) {
        double* dst = col.data() + ((img * geo.h + y) * geo.w + xpos) * rows;
        for (std::size_t ch = 0; ch < geo.c; ++ch) {
          const double* plane = xi + ch * geo.pixels();
          for (std::size_t ky = 0; ky < geo.k; ++ky) {
            const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(geo.pad);
            for (std::size_t kx = 0; kx < geo.k; ++kx) {
              const auto sx = static_cast<std::ptrdiff_t>(xpos + kx) - static_cast<std::ptrdiff_t>(geo.pad);
              const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(geo.h) &&
                                  sx < static_cast<std::ptrdiff_t>(geo.w);
              *dst++ = inside ? plane[static_cast<std::size_t>(sy) * geo.w + static_cast<std::size_t>(sx)] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const ConvGeometry& geo, std::span<const double> col, std::span<double> x) {
  const auto rows = geo.patch();
  for (std::size_t img = 0; img < geo.n; ++img) {
    double* xi = x.data() + img * geo.c * geo.pixels();
    for (std::size_t y = 0; y < geo.h; ++y) {
      for (std::size_t xpos = 0; xpos < geo.w; ++xpos) {
        const double* src = col.data() + ((img * geo.h + y) * geo.w + xpos) * rows;
        for (std::size_t ch = 0; ch < geo.c; ++ch) {
          double* plane = xi + ch * geo.pixels();
          for (std::size_t ky = 0; ky < geo.k; ++ky) {
            const auto sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(geo.pad);
            for (std::size_t kx = 0; kx < geo.k; ++kx, ++src) {
              const auto sx = static_cast<std::ptrdiff_t>(xpos + kx) - static_cast<std::ptrdiff_t>(geo.pad);
              if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(geo.h) &&
                  sx < static_cast<std::ptrdiff_t>(geo.w)) {
                plane[static_cast<std::size_t>(sy) * geo.w + static_cast<std::size_t>(sx)] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("conv2d", "input", x, 4);
  require_rank("conv2d", "kernel", weight, 4);
  require_rank("conv2d", "bias", bias, 1);
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), 0};
  if (weight.dim(1) != geo.c) {
    shape_error("conv2d", "kernel expects " + std::to_string(weight.dim(1)) +
                              " input channels, input " + to_string(x.shape()) + " has " +
                              std::to_string(geo.c));
  }
  if (weight.dim(3) != geo.k || geo.k % 2 == 0) {
    shape_error("conv2d", "kernel must be square with odd extent, got " + to_string(weight.shape()));
  }
  if (bias.dim(0) != geo.o) {
    shape_error("conv2d", "bias length " + std::to_string(bias.dim(0)) + " does not match " +
                              std::to_string(geo.o) + " output channels");
  }
  geo.pad = geo.k / 2;

  auto col = std::make_shared<std::vector<double>>(geo.patch() * geo.columns());
  im2col(geo, x.data(), *col);

  // prod(o, j) = sum_r W(o, r) col(r, j)
  ColMatrix prod = ConstRowMap(weight.data().data(), geo.o, geo.patch()) *
                   ConstColMap(col->data(), geo.patch(), geo.columns());

  Tensor out({geo.n, geo.o, geo.h, geo.w});
  auto od = out.data();
  auto bd = bias.data();
  const auto hw = geo.pixels();
  for (std::size_t img = 0; img < geo.n; ++img)
    for (std::size_t oc = 0; oc < geo.o; ++oc) {
      double* dst = od.data() + (img * geo.o + oc) * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] = prod(oc, img * hw + p) + bd[oc];
    }

  const Tensor inputs[] = {x, weight, bias};
  if (!g.should_record(inputs)) return out;
  return g.record(OpKind::Conv2d, "conv2d", {x, weight, bias}, out,
                  [x, weight, bias, out, geo, col] {
                    const auto hw = geo.pixels();
                    auto go = out.grad();
                    ColMatrix dprod(geo.o, geo.columns());
                    for (std::size_t img = 0; img < geo.n; ++img)
                      for (std::size_t oc = 0; oc < geo.o; ++oc) {
                        const double* src = go.data() + (img * geo.o + oc) * hw;
                        for (std::size_t p = 0; p < hw; ++p) dprod(oc, img * hw + p) = src[p];
                      }
                    if (bias.requires_grad()) {
                      auto gb = grad_buffer(bias);
                      for (std::size_t oc = 0; oc < geo.o; ++oc) gb[oc] += dprod.row(oc).sum();
                    }
                    if (weight.requires_grad()) {
                      RowMap(grad_buffer(weight).data(), geo.o, geo.patch()).noalias() +=
                          dprod * ConstColMap(col->data(), geo.patch(), geo.columns()).transpose();
                    }
                    if (x.requires_grad()) {
                      ColMatrix dcol =
                          ConstRowMap(weight.data().data(), geo.o, geo.patch()).transpose() * dprod;
                      col2im_accumulate(geo, {dcol.data(), static_cast<std::size_t>(dcol.size())},
                                        grad_buffer(x));
                    }
                  });
}

Tensor relu(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary(
      g, OpKind::Sigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor avg_pool2(Graph& g, const Tensor& x) {
  require_rank("avg_pool2", "input", x, 4);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) shape_error("avg_pool2", "spatial extents must be even, got " + to_string(x.shape()));
  const auto oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xd.data() + plane * h * w;
    double* dst = od.data() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* p = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  }
  if (!g.should_record({&x, 1})) return out;
  return g.record(OpKind::AvgPool2, "avg_pool2", {x}, out, [x, out, n, c, h, w, oh, ow] {
    if (!x.requires_grad()) return;
    auto gx = grad_buffer(x);
    auto go = out.grad();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      double* dst = gx.data() + plane * h * w;
      const double* src = go.data() + plane * oh * ow;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * src[y * ow + xx];
          double* p = dst + 2 * y * w + 2 * xx;
          p[0] += v;
          p[1] += v;
          p[w] += v;
          p[w + 1] += v;
        }
    }
  });
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
  require_rank("global_avg_pool", "input", x, 4);
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c});
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    const double* src = xd.data() + plane * hw;
    for (std::size_t p = 0; p < hw; ++p) acc += src[p];
    od[plane] = acc / static_cast<double>(hw);
  }
  if (!g.should_record({&x, 1})) return out;
  return g.record(OpKind::GlobalAvgPool, "global_avg_pool", {x}, out, [x, out, n, c, hw] {
    if (!x.requires_grad()) return;
    auto gx = grad_buffer(x);
    auto go = out.grad();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const double v = go[plane] / static_cast<double>(hw);
      double* dst = gx.data() + plane * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] += v;
    }
  });
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  const Tensor inputs[] = {a, b};
  if (!g.should_record(inputs)) return out;
  return g.record(OpKind::Add, "add", {a, b}, out, [a, b, out] {
    auto go = out.grad();
    for (const auto& t : {a, b}) {
      if (!t.requires_grad()) continue;
      auto gt = grad_buffer(t);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += go[i];
    }
  });
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  const Tensor inputs[] = {a, b};
  if (!g.should_record(inputs)) return out;
  return g.record(OpKind::Mul, "mul", {a, b}, out, [a, b, out] {
    auto go = out.grad();
    if (a.requires_grad()) {
      auto ga = grad_buffer(a);
      auto bv = b.data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = grad_buffer(b);
      auto av = a.data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  return unary(
      g, OpKind::Scale, x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor log(Graph& g, const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: argument must be positive, got " + std::to_string(v));
  }
  return unary(
      g, OpKind::Log, x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sum(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (!g.should_record({&x, 1})) return out;
  return g.record(OpKind::Sum, "sum", {x}, out, [x, out] {
    if (!x.requires_grad()) return;
    const double go = out.grad()[0];
    for (auto& v : grad_buffer(x)) v += go;
  });
}

Tensor gradient_reversal(Graph& g, const Tensor& x, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw DomainError("gradient_reversal: lambda must be finite and >= 0, got " +
                      std::to_string(lambda));
  }
  Tensor out(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  if (!g.should_record({&x, 1})) return out;
  return g.record(OpKind::GradientReversal, "gradient_reversal", {x}, out, [x, out, lambda] {
    if (!x.requires_grad()) return;
    auto gx = grad_buffer(x);
    auto go = out.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += -lambda * go[i];
  });
}

Tensor detach(const Tensor& x) { return x.clone(); }

}  // namespace xinv::ops
