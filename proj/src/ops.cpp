// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dife/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dife/errors.hpp"

namespace dife::ops {
namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("op on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractError("operands on different tapes");
  return tape_of(a);
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  double* d = dst->ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Unrolls one sample into a (c_in*kh*kw, ho*wo) column matrix.
// Four running sums keep the loop vectorizable without reassociation flags.
double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void im2col(const double* x, int c_in, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, double* cols) {
  const int p_count = ho * wo;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* row = cols + ((c * kh + ky) * kw + kx) * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* out = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, 0.0);
            continue;
          }
          const double* in_row = x + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            out[ox] = (ix >= 0 && ix < w) ? in_row[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c_in, int h, int w, int kh, int kw,
            int stride, int pad, int ho, int wo, double* dx) {
  const int p_count = ho * wo;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* row = cols + ((c * kh + ky) * kw + kx) * p_count;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* out_row = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          const double* in = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) out_row[ix] += in[ox];
          }
        }
      }
    }
  }
}

Var unary(const Var& x, std::string_view name, double (*f)(double),
          double (*df)(double, double)) {
  Tape& tape = tape_of(x);
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor saved_in = in;
  Tensor saved_out = out;
  return tape.record(
      name, std::move(out), {x},
      [saved_in, saved_out, df](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        double* d = pg[0]->ptr();
        for (std::size_t i = 0; i < g.size(); ++i) {
          d[i] += g[i] * df(saved_in[i], saved_out[i]);
        }
      });
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  Tape& tape = tape_of(x, w);
  tape_of(x, b);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (stride < 1) throw ContractError("conv2d stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d pad must be >= 0");
  if (ws.c != xs.c) {
    throw DimensionError("conv2d input channels: x has c=" +
                         std::to_string(xs.c) + ", kernel expects c_in=" +
                         std::to_string(ws.c));
  }
  if (!(b.shape() == Shape{1, ws.n, 1, 1})) {
    throw DimensionError("conv2d bias shape " + b.shape().str() +
                         " does not match c_out=" + std::to_string(ws.n));
  }
  const int c_out = ws.n;
  const int kh = ws.h;
  const int kw = ws.w;
  const int num_h = xs.h + 2 * pad - kh;
  const int num_w = xs.w + 2 * pad - kw;
  if (num_h < 0 || num_w < 0) {
    throw DimensionError("conv2d kernel " + ws.str() + " larger than padded input " +
                         xs.str() + " along h/w");
  }
  const int ho = num_h / stride + 1;
  const int wo = num_w / stride + 1;
  const int k_count = xs.c * kh * kw;
  const int p_count = ho * wo;

  Tensor out(Shape{xs.n, c_out, ho, wo});
  std::vector<double> cols(static_cast<std::size_t>(k_count) * p_count);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  for (int n = 0; n < xs.n; ++n) {
    im2col(xv.ptr() + xv.index(n, 0, 0, 0), xs.c, xs.h, xs.w, kh, kw, stride,
           pad, ho, wo, cols.data());
    double* o = out.ptr() + out.index(n, 0, 0, 0);
    for (int co = 0; co < c_out; ++co) {
      double* orow = o + static_cast<std::size_t>(co) * p_count;
      std::fill(orow, orow + p_count, bv[co]);
      const double* wrow = wv.ptr() + static_cast<std::size_t>(co) * k_count;
      for (int k = 0; k < k_count; ++k) {
        const double wk = wrow[k];
        if (wk == 0.0) continue;
        const double* crow = cols.data() + static_cast<std::size_t>(k) * p_count;
        for (int p = 0; p < p_count; ++p) orow[p] += wk * crow[p];
      }
    }
  }

  Tensor saved_x = xv;
  Tensor saved_w = wv;
  return tape.record(
      "conv2d", std::move(out), {x, w, b},
      [saved_x, saved_w, stride, pad, ho, wo](const Tensor& g,
                                              std::span<Tensor*> pg) {
        const Shape xs = saved_x.shape();
        const Shape ws = saved_w.shape();
        const int c_out = ws.n;
        const int k_count = ws.c * ws.h * ws.w;
        const int p_count = ho * wo;
        std::vector<double> cols(static_cast<std::size_t>(k_count) * p_count);
        std::vector<double> dcols;
        if (pg[0] != nullptr) dcols.resize(cols.size());
        for (int n = 0; n < xs.n; ++n) {
          const double* gn = g.ptr() + g.index(n, 0, 0, 0);
          if (pg[2] != nullptr) {
            for (int co = 0; co < c_out; ++co) {
              const double* grow = gn + static_cast<std::size_t>(co) * p_count;
              double s = 0.0;
              for (int p = 0; p < p_count; ++p) s += grow[p];
              (*pg[2])[co] += s;
            }
          }
          if (pg[1] == nullptr && pg[0] == nullptr) continue;
          im2col(saved_x.ptr() + saved_x.index(n, 0, 0, 0), xs.c, xs.h, xs.w,
                 ws.h, ws.w, stride, pad, ho, wo, cols.data());
          if (pg[1] != nullptr) {
            double* dw = pg[1]->ptr();
            for (int co = 0; co < c_out; ++co) {
              const double* grow = gn + static_cast<std::size_t>(co) * p_count;
              double* dwrow = dw + static_cast<std::size_t>(co) * k_count;
              for (int k = 0; k < k_count; ++k) {
                const double* crow =
                    cols.data() + static_cast<std::size_t>(k) * p_count;
                dwrow[k] += dot(grow, crow, p_count);
              }
            }
          }
          if (pg[0] != nullptr) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            for (int co = 0; co < c_out; ++co) {
              const double* grow = gn + static_cast<std::size_t>(co) * p_count;
              const double* wrow =
                  saved_w.ptr() + static_cast<std::size_t>(co) * k_count;
              for (int k = 0; k < k_count; ++k) {
                const double wk = wrow[k];
                if (wk == 0.0) continue;
                double* drow = dcols.data() + static_cast<std::size_t>(k) * p_count;
                for (int p = 0; p < p_count; ++p) drow[p] += wk * grow[p];
              }
            }
            col2im(dcols.data(), xs.c, xs.h, xs.w, ws.h, ws.w, stride, pad, ho,
                   wo, pg[0]->ptr() + pg[0]->index(n, 0, 0, 0));
          }
        }
      });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x) {
  return unary(x, "sigmoid", stable_sigmoid,
               [](double, double out) { return out * (1.0 - out); });
}

Var abs(const Var& x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double in, double) {
        return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0);
      });
}

Var softplus(const Var& x) {
  return unary(x, "softplus", stable_softplus,
               [](double in, double) { return stable_sigmoid(in); });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  expect_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record("add", std::move(out), {a, b},
                     [](const Tensor& g, std::span<Tensor*> pg) {
                       accumulate(pg[0], g);
                       accumulate(pg[1], g);
                     });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  expect_same_shape(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record("sub", std::move(out), {a, b},
                     [](const Tensor& g, std::span<Tensor*> pg) {
                       accumulate(pg[0], g);
                       if (pg[1] != nullptr) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           (*pg[1])[i] -= g[i];
                         }
                       }
                     });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  expect_same_shape(a.shape(), b.shape(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", std::move(out), {a, b},
                     [av, bv](const Tensor& g, std::span<Tensor*> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (pg[0] != nullptr) (*pg[0])[i] += g[i] * bv[i];
                         if (pg[1] != nullptr) (*pg[1])[i] += g[i] * av[i];
                       }
                     });
}

Var scale(const Var& x, double s) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return tape.record("scale", std::move(out), {x},
                     [s](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0] == nullptr) return;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += s * g[i];
                       }
                     });
}

Var mul_channel(const Var& x, const Var& s) {
  Tape& tape = tape_of(x, s);
  const Shape xs = x.shape();
  if (!(s.shape() == Shape{xs.n, xs.c, 1, 1})) {
    throw DimensionError("mul_channel scale " + s.shape().str() +
                         " does not match (n,c) of " + xs.str());
  }
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  Tensor out(xs);
  const std::size_t plane = xs.plane();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(xs.n) * xs.c; ++nc) {
    for (std::size_t p = 0; p < plane; ++p) {
      out[nc * plane + p] = xv[nc * plane + p] * sv[nc];
    }
  }
  return tape.record(
      "mul_channel", std::move(out), {x, s},
      [xv, sv, plane](const Tensor& g, std::span<Tensor*> pg) {
        for (std::size_t nc = 0; nc < sv.size(); ++nc) {
          double ds = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = nc * plane + p;
            if (pg[0] != nullptr) (*pg[0])[i] += g[i] * sv[nc];
            ds += g[i] * xv[i];
          }
          if (pg[1] != nullptr) (*pg[1])[nc] += ds;
        }
      });
}

Var global_avg_pool(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape xs = x.shape();
  const Tensor& xv = x.value();
  Tensor out(Shape{xs.n, xs.c, 1, 1});
  const std::size_t plane = xs.plane();
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[nc * plane + p];
    out[nc] = s / static_cast<double>(plane);
  }
  return tape.record("global_avg_pool", std::move(out), {x},
                     [plane](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0] == nullptr) return;
                       const double inv = 1.0 / static_cast<double>(plane);
                       for (std::size_t nc = 0; nc < g.size(); ++nc) {
                         for (std::size_t p = 0; p < plane; ++p) {
                           (*pg[0])[nc * plane + p] += g[nc] * inv;
                         }
                       }
                     });
}

Var fully_connected(const Var& x, const Var& w, const Var& b) {
  Tape& tape = tape_of(x, w);
  tape_of(x, b);
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (xs.h != 1 || xs.w != 1) {
    throw DimensionError("fully_connected expects (n,c,1,1) input, got " +
                         xs.str());
  }
  if (ws.c != xs.c || ws.h != 1 || ws.w != 1) {
    throw DimensionError("fully_connected weight " + ws.str() +
                         " does not accept input channels c=" +
                         std::to_string(xs.c));
  }
  if (!(b.shape() == Shape{1, ws.n, 1, 1})) {
    throw DimensionError("fully_connected bias " + b.shape().str() +
                         " does not match c_out=" + std::to_string(ws.n));
  }
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  const int c_in = xs.c;
  const int c_out = ws.n;
  Tensor out(Shape{xs.n, c_out, 1, 1});
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < c_out; ++o) {
      double s = bv[o];
      for (int i = 0; i < c_in; ++i) {
        s += wv[static_cast<std::size_t>(o) * c_in + i] *
             xv[static_cast<std::size_t>(n) * c_in + i];
      }
      out[static_cast<std::size_t>(n) * c_out + o] = s;
    }
  }
  return tape.record(
      "fully_connected", std::move(out), {x, w, b},
      [xv, wv, c_in, c_out](const Tensor& g, std::span<Tensor*> pg) {
        const int batch = xv.shape().n;
        for (int n = 0; n < batch; ++n) {
          for (int o = 0; o < c_out; ++o) {
            const double go = g[static_cast<std::size_t>(n) * c_out + o];
            if (pg[2] != nullptr) (*pg[2])[o] += go;
            for (int i = 0; i < c_in; ++i) {
              const std::size_t wi = static_cast<std::size_t>(o) * c_in + i;
              const std::size_t xi = static_cast<std::size_t>(n) * c_in + i;
              if (pg[0] != nullptr) (*pg[0])[xi] += go * wv[wi];
              if (pg[1] != nullptr) (*pg[1])[wi] += go * xv[xi];
            }
          }
        }
      });
}

namespace {

// log-softmax over channels at every pixel.
Tensor log_softmax_channels(const Tensor& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double m = -INFINITY;
      for (int c = 0; c < s.c; ++c) m = std::max(m, x[base + c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(x[base + c * plane + p] - m);
      const double lse = m + std::log(z);
      for (int c = 0; c < s.c; ++c) {
        out[base + c * plane + p] = x[base + c * plane + p] - lse;
      }
    }
  }
  return out;
}

}  // namespace

Var softmax_channels(const Var& x) {
  Tape& tape = tape_of(x);
  Tensor out = log_softmax_channels(x.value());
  for (double& v : out.data()) v = std::exp(v);
  Tensor saved = out;
  return tape.record(
      "softmax_channels", std::move(out), {x},
      [saved](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        const Shape s = saved.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            double dot = 0.0;
            for (int c = 0; c < s.c; ++c) {
              dot += g[base + c * plane + p] * saved[base + c * plane + p];
            }
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = base + c * plane + p;
              (*pg[0])[i] += saved[i] * (g[i] - dot);
            }
          }
        }
      });
}

Var channel_entropy(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor logp = log_softmax_channels(x.value());
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double e = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double lp = logp[base + c * plane + p];
        e -= std::exp(lp) * lp;
      }
      out[static_cast<std::size_t>(n) * plane + p] = e;
    }
  }
  Tensor saved_h = out;
  return tape.record(
      "channel_entropy", std::move(out), {x},
      [logp, saved_h](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        const Shape s = logp.shape();
        const std::size_t plane = s.plane();
        // dH/dz_c = -p_c (ln p_c + H)
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>(n) * s.c * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t hi = static_cast<std::size_t>(n) * plane + p;
            const double h = saved_h[hi];
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = base + c * plane + p;
              (*pg[0])[i] -= g[hi] * std::exp(logp[i]) * (logp[i] + h);
            }
          }
        }
      });
}

Var cross_entropy(const Var& logits, std::span<const int> labels,
                  int ignore_index) {
  Tape& tape = tape_of(logits);
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  if (labels.size() != static_cast<std::size_t>(s.n) * plane) {
    throw DimensionError("cross_entropy labels hold " +
                         std::to_string(labels.size()) +
                         " entries for logits " + s.str());
  }
  Tensor logp = log_softmax_channels(logits.value());
  double total = 0.0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const int y = labels[static_cast<std::size_t>(n) * plane + p];
      if (y == ignore_index) continue;
      if (y < 0 || y >= s.c) {
        throw DataError("label " + std::to_string(y) + " at n=" +
                        std::to_string(n) + " y=" + std::to_string(p / s.w) +
                        " x=" + std::to_string(p % s.w) + " outside [0," +
                        std::to_string(s.c) + ")");
      }
      total -= logp[(static_cast<std::size_t>(n) * s.c + y) * plane + p];
      ++count;
    }
  }
  const double loss = count > 0 ? total / static_cast<double>(count) : 0.0;
  std::vector<int> saved_labels(labels.begin(), labels.end());
  return tape.record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logp, saved_labels, ignore_index, count](const Tensor& g,
                                                std::span<Tensor*> pg) {
        if (pg[0] == nullptr || count == 0) return;
        const Shape s = logp.shape();
        const std::size_t plane = s.plane();
        const double k = g[0] / static_cast<double>(count);
        for (int n = 0; n < s.n; ++n) {
          for (std::size_t p = 0; p < plane; ++p) {
            const int y = saved_labels[static_cast<std::size_t>(n) * plane + p];
            if (y == ignore_index) continue;
            for (int c = 0; c < s.c; ++c) {
              const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * plane + p;
              (*pg[0])[i] += k * (std::exp(logp[i]) - (c == y ? 1.0 : 0.0));
            }
          }
        }
      });
}

namespace {

struct Tap {
  int i0;
  int i1;
  double frac;
};

// Half-pixel source coordinates for a 2x upsample along one axis.
std::vector<Tap> upsample_taps(int in_len) {
  std::vector<Tap> taps(static_cast<std::size_t>(in_len) * 2);
  for (int o = 0; o < in_len * 2; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_len - 1) i0 = in_len - 1;
    const int i1 = std::min(i0 + 1, in_len - 1);
    taps[o] = Tap{i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Var upsample_bilinear2x(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape s = x.shape();
  const Tensor& xv = x.value();
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  const int oh = s.h * 2;
  const int ow = s.w * 2;
  Tensor out(Shape{s.n, s.c, oh, ow});
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* in = xv.ptr() + static_cast<std::size_t>(nc) * s.plane();
    double* o = out.ptr() + static_cast<std::size_t>(nc) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const Tap& a = ty[y];
      for (int xx = 0; xx < ow; ++xx) {
        const Tap& b = tx[xx];
        const double top = in[a.i0 * s.w + b.i0] * (1 - b.frac) +
                           in[a.i0 * s.w + b.i1] * b.frac;
        const double bot = in[a.i1 * s.w + b.i0] * (1 - b.frac) +
                           in[a.i1 * s.w + b.i1] * b.frac;
        o[y * ow + xx] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  return tape.record(
      "upsample_bilinear2x", std::move(out), {x},
      [s, ty, tx](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        const int oh = s.h * 2;
        const int ow = s.w * 2;
        for (int nc = 0; nc < s.n * s.c; ++nc) {
          double* d = pg[0]->ptr() + static_cast<std::size_t>(nc) * s.plane();
          const double* go = g.ptr() + static_cast<std::size_t>(nc) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            const Tap& a = ty[y];
            for (int xx = 0; xx < ow; ++xx) {
              const Tap& b = tx[xx];
              const double v = go[y * ow + xx];
              d[a.i0 * s.w + b.i0] += v * (1 - a.frac) * (1 - b.frac);
              d[a.i0 * s.w + b.i1] += v * (1 - a.frac) * b.frac;
              d[a.i1 * s.w + b.i0] += v * a.frac * (1 - b.frac);
              d[a.i1 * s.w + b.i1] += v * a.frac * b.frac;
            }
          }
        }
      });
}

Var avg_pool2x(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError("avg_pool2x needs even h and w, got " + s.str());
  }
  const int oh = s.h / 2;
  const int ow = s.w / 2;
  const Tensor& xv = x.value();
  Tensor out(Shape{s.n, s.c, oh, ow});
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* in = xv.ptr() + static_cast<std::size_t>(nc) * s.plane();
    double* o = out.ptr() + static_cast<std::size_t>(nc) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        o[y * ow + xx] = 0.25 * (in[2 * y * s.w + 2 * xx] + in[2 * y * s.w + 2 * xx + 1] +
                                 in[(2 * y + 1) * s.w + 2 * xx] +
                                 in[(2 * y + 1) * s.w + 2 * xx + 1]);
      }
    }
  }
  return tape.record(
      "avg_pool2x", std::move(out), {x},
      [s](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        const int oh = s.h / 2;
        const int ow = s.w / 2;
        for (int nc = 0; nc < s.n * s.c; ++nc) {
          double* d = pg[0]->ptr() + static_cast<std::size_t>(nc) * s.plane();
          const double* go = g.ptr() + static_cast<std::size_t>(nc) * oh * ow;
          for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
              const double v = 0.25 * go[y * ow + xx];
              d[2 * y * s.w + 2 * xx] += v;
              d[2 * y * s.w + 2 * xx + 1] += v;
              d[(2 * y + 1) * s.w + 2 * xx] += v;
              d[(2 * y + 1) * s.w + 2 * xx + 1] += v;
            }
          }
        }
      });
}

Var concat_channels(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    expect_same_shape(sa, Shape{sb.n, sa.c, sb.h, sb.w}, "concat_channels");
  }
  const std::size_t block_a = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t block_b = static_cast<std::size_t>(sb.c) * sb.plane();
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().ptr() + n * block_a, block_a,
                out.ptr() + n * (block_a + block_b));
    std::copy_n(b.value().ptr() + n * block_b, block_b,
                out.ptr() + n * (block_a + block_b) + block_a);
  }
  return tape.record(
      "concat_channels", std::move(out), {a, b},
      [block_a, block_b, batch = sa.n](const Tensor& g, std::span<Tensor*> pg) {
        for (int n = 0; n < batch; ++n) {
          const double* src = g.ptr() + n * (block_a + block_b);
          if (pg[0] != nullptr) {
            double* d = pg[0]->ptr() + n * block_a;
            for (std::size_t i = 0; i < block_a; ++i) d[i] += src[i];
          }
          if (pg[1] != nullptr) {
            double* d = pg[1]->ptr() + n * block_b;
            for (std::size_t i = 0; i < block_b; ++i) d[i] += src[block_a + i];
          }
        }
      });
}

Var instance_norm(const Var& x, double eps) {
  Tape& tape = tape_of(x);
  if (eps < 0.0) throw ContractError("instance_norm eps must be >= 0");
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const Tensor& xv = x.value();
  Tensor out(s);
  std::vector<double> inv_std(static_cast<std::size_t>(s.n) * s.c);
  for (std::size_t nc = 0; nc < inv_std.size(); ++nc) {
    const double* in = xv.ptr() + nc * plane;
    double mean = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mean += in[p];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t p = 0; p < plane; ++p) var += (in[p] - mean) * (in[p] - mean);
    var /= static_cast<double>(plane);
    const double denom = std::sqrt(var + eps);
    inv_std[nc] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      out[nc * plane + p] = (in[p] - mean) * inv_std[nc];
    }
  }
  Tensor saved_y = out;
  return tape.record(
      "instance_norm", std::move(out), {x},
      [saved_y, inv_std, plane](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        const double m = static_cast<double>(plane);
        // dx = inv/M * (M g - sum g - y sum(g y))
        for (std::size_t nc = 0; nc < inv_std.size(); ++nc) {
          const double* gy = g.ptr() + nc * plane;
          const double* y = saved_y.ptr() + nc * plane;
          double sg = 0.0;
          double sgy = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            sg += gy[p];
            sgy += gy[p] * y[p];
          }
          double* d = pg[0]->ptr() + nc * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            d[p] += inv_std[nc] / m * (m * gy[p] - sg - y[p] * sgy);
          }
        }
      });
}

Var center_spatial(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor out = x.value();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(s.n) * s.c; ++nc) {
    double mean = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mean += out[nc * plane + p];
    mean /= static_cast<double>(plane);
    for (std::size_t p = 0; p < plane; ++p) out[nc * plane + p] -= mean;
  }
  return tape.record(
      "center_spatial", std::move(out), {x},
      [plane](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        for (std::size_t base = 0; base < g.size(); base += plane) {
          double mean = 0.0;
          for (std::size_t p = 0; p < plane; ++p) mean += g[base + p];
          mean /= static_cast<double>(plane);
          for (std::size_t p = 0; p < plane; ++p) {
            (*pg[0])[base + p] += g[base + p] - mean;
          }
        }
      });
}

Var reshape(const Var& x, Shape shape) {
  Tape& tape = tape_of(x);
  Tensor out = x.value().reshaped(shape);
  return tape.record("reshape", std::move(out), {x},
                     [](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0] == nullptr) return;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         (*pg[0])[i] += g[i];
                       }
                     });
}

Var to_matrix(const Var& x) {
  const Shape s = x.shape();
  return reshape(x, Shape{s.n, 1, s.c, s.h * s.w});
}

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.c != 1 || sb.c != 1 || sa.n != sb.n || sa.w != sb.h) {
    throw DimensionError("matmul " + sa.str() + " x " + sb.str() +
                         " (need matching n, c=1 and a.w == b.h)");
  }
  const int rows = sa.h;
  const int inner = sa.w;
  const int cols = sb.w;
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(Shape{sa.n, 1, rows, cols});
  for (int n = 0; n < sa.n; ++n) {
    const double* A = av.ptr() + static_cast<std::size_t>(n) * rows * inner;
    const double* B = bv.ptr() + static_cast<std::size_t>(n) * inner * cols;
    double* C = out.ptr() + static_cast<std::size_t>(n) * rows * cols;
    for (int i = 0; i < rows; ++i) {
      for (int k = 0; k < inner; ++k) {
        const double aik = A[i * inner + k];
        for (int j = 0; j < cols; ++j) C[i * cols + j] += aik * B[k * cols + j];
      }
    }
  }
  return tape.record(
      "matmul", std::move(out), {a, b},
      [av, bv, rows, inner, cols](const Tensor& g, std::span<Tensor*> pg) {
        const int batch = av.shape().n;
        for (int n = 0; n < batch; ++n) {
          const double* A = av.ptr() + static_cast<std::size_t>(n) * rows * inner;
          const double* B = bv.ptr() + static_cast<std::size_t>(n) * inner * cols;
          const double* G = g.ptr() + static_cast<std::size_t>(n) * rows * cols;
          if (pg[0] != nullptr) {
            double* dA = pg[0]->ptr() + static_cast<std::size_t>(n) * rows * inner;
            for (int i = 0; i < rows; ++i) {
              for (int k = 0; k < inner; ++k) {
                double s = 0.0;
                for (int j = 0; j < cols; ++j) s += G[i * cols + j] * B[k * cols + j];
                dA[i * inner + k] += s;
              }
            }
          }
          if (pg[1] != nullptr) {
            double* dB = pg[1]->ptr() + static_cast<std::size_t>(n) * inner * cols;
            for (int i = 0; i < rows; ++i) {
              for (int k = 0; k < inner; ++k) {
                const double aik = A[i * inner + k];
                for (int j = 0; j < cols; ++j) dB[k * cols + j] += aik * G[i * cols + j];
              }
            }
          }
        }
      });
}

Var transpose(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape s = x.shape();
  const Tensor& xv = x.value();
  Tensor out(Shape{s.n, s.c, s.w, s.h});
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* in = xv.ptr() + static_cast<std::size_t>(nc) * s.plane();
    double* o = out.ptr() + static_cast<std::size_t>(nc) * s.plane();
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) o[j * s.h + i] = in[i * s.w + j];
    }
  }
  return tape.record(
      "transpose", std::move(out), {x},
      [s](const Tensor& g, std::span<Tensor*> pg) {
        if (pg[0] == nullptr) return;
        for (int nc = 0; nc < s.n * s.c; ++nc) {
          const double* go = g.ptr() + static_cast<std::size_t>(nc) * s.plane();
          double* d = pg[0]->ptr() + static_cast<std::size_t>(nc) * s.plane();
          for (int i = 0; i < s.h; ++i) {
            for (int j = 0; j < s.w; ++j) d[i * s.w + j] += go[j * s.h + i];
          }
        }
      });
}

Var sum_all(const Var& x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return tape.record("sum_all", Tensor::scalar(s), {x},
                     [](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0] == nullptr) return;
                       for (double& d : pg[0]->data()) d += g[0];
                     });
}

Var mean_all(const Var& x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const double count = static_cast<double>(x.value().size());
  return tape.record("mean_all", Tensor::scalar(s / count), {x},
                     [count](const Tensor& g, std::span<Tensor*> pg) {
                       if (pg[0] == nullptr) return;
                       for (double& d : pg[0]->data()) d += g[0] / count;
                     });
}

}  // namespace dife::ops
