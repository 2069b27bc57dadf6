#include "pimms/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace pimms::ad {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, Var a, Var b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

struct Window {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

Window window_geometry(const char* op, std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  require(stride >= 1, std::string(op) + ": stride must be >= 1");
  Window w;
  if (padding == Padding::valid) {
    require(k <= in, std::string(op) + ": window " + std::to_string(k) + " exceeds unpadded extent " +
                         std::to_string(in));
    w.out = (in - k) / stride + 1;
  } else {
    w.out = (in + stride - 1) / stride;
    const std::size_t needed = (w.out - 1) * stride + k;
    const std::size_t total = needed > in ? needed - in : 0;
    w.pad_before = total / 2;
  }
  return w;
}

// Binary elementwise op with derivative callbacks da(a, b, out), db(a, b, out).
template <typename F, typename DA, typename DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  require_same_shape(op, a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [ia, ib, da, db](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(ib);
    const Tensor& o = t.value(self);
    if (t.needs_grad(ia)) {
      auto ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i], o[i]);
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i], o[i]);
    }
  });
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, Padding padding, std::size_t stride) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const Tensor& b = bias.value();
  require(x.rank() == 3, "conv2d: input must be [H, W, Cin], got " + shape_string(x.shape()));
  require(k.rank() == 4, "conv2d: kernel must be [kh, kw, Cin, Cout], got " + shape_string(k.shape()));
  const std::size_t H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const std::size_t KH = k.dim(0), KW = k.dim(1), Cout = k.dim(3);
  require(k.dim(2) == Cin, "conv2d: kernel expects " + std::to_string(k.dim(2)) + " input channels, input has " +
                               std::to_string(Cin));
  require(b.shape() == Shape{Cout}, "conv2d: bias must be [" + std::to_string(Cout) + "], got " +
                                        shape_string(b.shape()));
  const Window wy = window_geometry("conv2d", H, KH, stride, padding);
  const Window wx = window_geometry("conv2d", W, KW, stride, padding);
  const std::size_t Ho = wy.out, Wo = wx.out;
  const long pt = static_cast<long>(wy.pad_before), pl = static_cast<long>(wx.pad_before);

  Tensor out(Shape{Ho, Wo, Cout});
  const double* xp = x.data().data();
  const double* kp = k.data().data();
  double* op = out.data().data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* orow = op + (oy * Wo + ox) * Cout;
      for (std::size_t co = 0; co < Cout; ++co) orow[co] = b[co];
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - pt;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - pl;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* px = xp + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
          const double* kk = kp + (ky * KW + kx) * Cin * Cout;
          for (std::size_t ci = 0; ci < Cin; ++ci) {
            const double v = px[ci];
            const double* krow = kk + ci * Cout;
            for (std::size_t co = 0; co < Cout; ++co) orow[co] += v * krow[co];
          }
        }
      }
    }
  }

  const std::size_t ii = input.id(), ik = kernel.id(), ib = bias.id();
  return input.tape().record(
      "conv2d", std::move(out), {input, kernel, bias},
      [=](Tape& t, std::size_t self) {
        auto g = t.grad_buffer(self);
        const double* gp = g.data();
        const bool need_x = t.needs_grad(ii), need_k = t.needs_grad(ik);
        const double* xp = t.value(ii).data().data();
        const double* kp = t.value(ik).data().data();
        double* gx = need_x ? t.grad_buffer(ii).data() : nullptr;
        double* gk = need_k ? t.grad_buffer(ik).data() : nullptr;
        if (t.needs_grad(ib)) {
          auto gb = t.grad_buffer(ib);
          for (std::size_t p = 0; p < Ho * Wo; ++p)
            for (std::size_t co = 0; co < Cout; ++co) gb[co] += gp[p * Cout + co];
        }
        if (!need_x && !need_k) return;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double* grow = gp + (oy * Wo + ox) * Cout;
            for (std::size_t ky = 0; ky < KH; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - pt;
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - pl;
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                const std::size_t pix = (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Cin;
                const std::size_t koff = (ky * KW + kx) * Cin * Cout;
                for (std::size_t ci = 0; ci < Cin; ++ci) {
                  const double* krow = kp + koff + ci * Cout;
                  if (need_x) {
                    double acc = 0.0;
                    for (std::size_t co = 0; co < Cout; ++co) acc += grow[co] * krow[co];
                    gx[pix + ci] += acc;
                  }
                  if (need_k) {
                    const double v = xp[pix + ci];
                    double* gkrow = gk + koff + ci * Cout;
                    for (std::size_t co = 0; co < Cout; ++co) gkrow[co] += v * grow[co];
                  }
                }
              }
            }
          }
        }
      });
}

Var relu(Var x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  Tape& tape = x.tape();
  if (tape.tracking_branches()) {
    BranchHash h;
    for (std::size_t i = 0; i < v.size(); ++i) h.add(v[i] > 0.0 ? 1u : 0u);
    tape.note_branch(h.value());
  }
  const std::size_t ix = x.id();
  return tape.record("relu", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    const Tensor& v = t.value(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > 0.0) gx[i] += g[i];
  });
}

Var maxpool2d(Var x, std::size_t window, std::size_t stride, Padding padding) {
  const Tensor& v = x.value();
  require(v.rank() == 3, "maxpool2d: input must be [H, W, C], got " + shape_string(v.shape()));
  require(window >= 1, "maxpool2d: window must be >= 1");
  const std::size_t H = v.dim(0), W = v.dim(1), C = v.dim(2);
  const Window wy = window_geometry("maxpool2d", H, window, stride, padding);
  const Window wx = window_geometry("maxpool2d", W, window, stride, padding);
  const std::size_t Ho = wy.out, Wo = wx.out;
  Tensor out(Shape{Ho, Wo, C});
  // Source index per output element; -1 marks a padding winner.
  std::vector<long> arg(out.size(), -1);
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      for (std::size_t c = 0; c < C; ++c) {
        double best = 0.0;
        long best_idx = -2;
        for (std::size_t ky = 0; ky < window; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(wy.pad_before);
          for (std::size_t kx = 0; kx < window; ++kx) {
            const long ixx = static_cast<long>(ox * stride + kx) - static_cast<long>(wx.pad_before);
            const bool inside = iy >= 0 && iy < static_cast<long>(H) && ixx >= 0 && ixx < static_cast<long>(W);
            const long idx = inside ? (iy * static_cast<long>(W) + ixx) * static_cast<long>(C) + static_cast<long>(c) : -1;
            const double val = inside ? v[static_cast<std::size_t>(idx)] : 0.0;
            if (best_idx == -2 || val > best) {
              best = val;
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * Wo + ox) * C + c;
        out[o] = best;
        arg[o] = best_idx;
      }
    }
  }
  Tape& tape = x.tape();
  if (tape.tracking_branches()) {
    BranchHash h;
    for (long a : arg) h.add(static_cast<std::uint64_t>(a));
    tape.note_branch(h.value());
  }
  const std::size_t ix = x.id();
  return tape.record("maxpool2d", std::move(out), {x}, [ix, arg = std::move(arg)](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t o = 0; o < g.size(); ++o)
      if (arg[o] >= 0) gx[static_cast<std::size_t>(arg[o])] += g[o];
  });
}

Var softmax(Var x, std::size_t axis) {
  const Tensor& v = x.value();
  require(axis < v.rank(), "softmax: axis out of range for " + shape_string(v.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= v.dim(d);
  for (std::size_t d = axis + 1; d < v.rank(); ++d) inner *= v.dim(d);
  const std::size_t n = v.dim(axis);
  Tensor out(v.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = v[base];
      for (std::size_t j = 1; j < n; ++j) m = std::max(m, v[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(v[base + j * inner] - m);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record("softmax", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    const Tensor& y = t.value(self);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[base + j * inner] * g[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Var dense(Var x, Var weights, Var bias) {
  const Tensor& v = x.value();
  const Tensor& w = weights.value();
  const Tensor& b = bias.value();
  require(v.rank() == 1, "dense: input must be rank 1, got " + shape_string(v.shape()));
  require(w.rank() == 2 && w.dim(0) == v.dim(0),
          "dense: weights " + shape_string(w.shape()) + " incompatible with input " + shape_string(v.shape()));
  const std::size_t F = w.dim(0), O = w.dim(1);
  require(b.shape() == Shape{O}, "dense: bias must be [" + std::to_string(O) + "], got " + shape_string(b.shape()));
  Tensor out(Shape{O});
  for (std::size_t o = 0; o < O; ++o) out[o] = b[o];
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t o = 0; o < O; ++o) out[o] += v[f] * w[f * O + o];
  const std::size_t ix = x.id(), iw = weights.id(), ib = bias.id();
  return x.tape().record("dense", std::move(out), {x, weights, bias}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    const Tensor& v = t.value(ix);
    const Tensor& w = t.value(iw);
    if (t.needs_grad(ix)) {
      auto gx = t.grad_buffer(ix);
      for (std::size_t f = 0; f < F; ++f) {
        double acc = 0.0;
        for (std::size_t o = 0; o < O; ++o) acc += g[o] * w[f * O + o];
        gx[f] += acc;
      }
    }
    if (t.needs_grad(iw)) {
      auto gw = t.grad_buffer(iw);
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t o = 0; o < O; ++o) gw[f * O + o] += v[f] * g[o];
    }
    if (t.needs_grad(ib)) {
      auto gb = t.grad_buffer(ib);
      for (std::size_t o = 0; o < O; ++o) gb[o] += g[o];
    }
  });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var add_n(std::span<const Var> xs) {
  require(!xs.empty(), "add_n: empty input list");
  for (const auto& v : xs) require_same_shape("add_n", xs[0], v);
  Tensor out(xs[0].shape());
  for (const auto& v : xs) {
    const Tensor& t = v.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[i];
  }
  std::vector<std::size_t> ids;
  for (const auto& v : xs) ids.push_back(v.id());
  return xs[0].tape().record("add_n", std::move(out), xs, [ids](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    for (auto id : ids) {
      if (!t.needs_grad(id)) continue;
      auto gx = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var scale(Var x, double c) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = c * v[i];
  const std::size_t ix = x.id();
  return x.tape().record("scale", std::move(out), {x}, [ix, c](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

Var add_scalar(Var x, double c) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] + c;
  const std::size_t ix = x.id();
  return x.tape().record("add_scalar", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var scale_by(Var x, Var s) {
  require(s.value().size() == 1, "scale_by: scale must have one element, got " + shape_string(s.shape()));
  const Tensor& v = x.value();
  const double c = s.value()[0];
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = c * v[i];
  const std::size_t ix = x.id(), is = s.id();
  return x.tape().record("scale_by", std::move(out), {x, s}, [ix, is](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    const Tensor& v = t.value(ix);
    const double c = t.value(is)[0];
    if (t.needs_grad(ix)) {
      auto gx = t.grad_buffer(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    }
    if (t.needs_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += v[i] * g[i];
      t.grad_buffer(is)[0] += acc;
    }
  });
}

Var square(Var x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i];
  const std::size_t ix = x.id();
  return x.tape().record("square", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    const Tensor& v = t.value(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * v[i] * g[i];
  });
}

Var log_clamped(Var x, double floor) {
  require(floor > 0.0, "log_clamped: floor must be positive");
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::log(std::max(v[i], floor));
  Tape& tape = x.tape();
  if (tape.tracking_branches()) {
    BranchHash h;
    for (std::size_t i = 0; i < v.size(); ++i) h.add(v[i] > floor ? 1u : 0u);
    tape.note_branch(h.value());
  }
  const std::size_t ix = x.id();
  return tape.record("log_clamped", std::move(out), {x}, [ix, floor](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    const Tensor& v = t.value(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > floor) gx[i] += g[i] / v[i];
  });
}

Var sum(Var x) {
  const Tensor& v = x.value();
  double s = 0.0;
  for (double e : v.data()) s += e;
  const std::size_t ix = x.id();
  return x.tape().record("sum", Tensor::scalar(s), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    auto gx = t.grad_buffer(ix);
    for (auto& e : gx) e += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var element(Var x, std::size_t index) {
  const Tensor& v = x.value();
  require(index < v.size(), "element: index " + std::to_string(index) + " out of range for " + shape_string(v.shape()));
  const std::size_t ix = x.id();
  return x.tape().record("element", Tensor::scalar(v[index]), {x}, [ix, index](Tape& t, std::size_t self) {
    t.grad_buffer(ix)[index] += t.grad_buffer(self)[0];
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var take_channel(Var x, std::size_t c) {
  const Tensor& v = x.value();
  require(v.rank() == 3, "take_channel: input must be [H, W, C], got " + shape_string(v.shape()));
  const std::size_t H = v.dim(0), W = v.dim(1), C = v.dim(2);
  require(c < C, "take_channel: channel " + std::to_string(c) + " out of range");
  Tensor out(Shape{H, W});
  for (std::size_t p = 0; p < H * W; ++p) out[p] = v[p * C + c];
  const std::size_t ix = x.id();
  return x.tape().record("take_channel", std::move(out), {x}, [ix, c, C](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t p = 0; p < g.size(); ++p) gx[p * C + c] += g[p];
  });
}

Var concat_last(std::span<const Var> xs) {
  require(!xs.empty(), "concat_last: empty input list");
  const Shape& s0 = xs[0].shape();
  Shape lead(s0.begin(), s0.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    require(s.size() == s0.size() && Shape(s.begin(), s.end() - 1) == lead,
            "concat_last: incompatible shapes " + shape_string(s0) + " and " + shape_string(s));
    widths.push_back(s.back());
    total += s.back();
  }
  const std::size_t rows = shape_size(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& v = xs[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + off + j] = v[r * widths[k] + j];
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& v : xs) ids.push_back(v.id());
  return xs[0].tape().record("concat_last", std::move(out), xs, [=](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        auto gx = t.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[k]; ++j) gx[r * widths[k] + j] += g[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var global_avg_pool(Var x) {
  const Tensor& v = x.value();
  require(v.rank() == 3, "global_avg_pool: input must be [H, W, C], got " + shape_string(v.shape()));
  const std::size_t P = v.dim(0) * v.dim(1), C = v.dim(2);
  Tensor out(Shape{C});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += v[p * C + c];
  const double inv = 1.0 / static_cast<double>(P);
  for (std::size_t c = 0; c < C; ++c) out[c] *= inv;
  const std::size_t ix = x.id();
  return x.tape().record("global_avg_pool", std::move(out), {x}, [=](Tape& t, std::size_t self) {
    auto g = t.grad_buffer(self);
    auto gx = t.grad_buffer(ix);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) gx[p * C + c] += g[c] * inv;
  });
}

}  // namespace pimms::ad
