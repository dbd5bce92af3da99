#include "simseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "simseg/errors.hpp"

namespace simseg::ag {
namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_reduced_precision = false;

Tensor* grad_of(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return (p && p->requires_grad) ? &p->grad_buffer() : nullptr;
}

const Tensor& value_of(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw InputError(msg);
}

// Lays out every k*k receptive field of one sample as a column.
void im2col(const double* x, int channels, int h, int w, int k, int pad,
            int out_h, int out_w, double* cols) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy + ki - pad;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, out_w, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox + kj - pad;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int channels, int h, int w, int k, int pad,
            int out_h, int out_w, double* dx) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    double* dxc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row =
            cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy + ki - pad;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = dxc + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox + kj - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void round_to_float(Tensor& t) {
  for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

Var conv2d_dense(const Var& x, const Var& weight, const Var& bias, int pad) {
  const Shape4 xs = x.shape();
  const Shape4 ws = weight.shape();
  const int k = ws.h;
  const int out_h = xs.h + 2 * pad - k + 1;
  const int out_w = xs.w + 2 * pad - k + 1;
  require(out_h >= 1 && out_w >= 1, "conv2d: kernel larger than padded input");
  const int cout = ws.n;
  const int kdim = xs.c * k * k;
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  const bool pointwise = (k == 1 && pad == 0);

  Tensor out({xs.n, cout, out_h, out_w});
  std::vector<double> cols(pointwise ? 0 : kdim * p);
  CMapMat wm(weight.value().data(), cout, kdim);
  for (int n = 0; n < xs.n; ++n) {
    const double* xn = x.value().plane(n, 0);
    if (!pointwise) im2col(xn, xs.c, xs.h, xs.w, k, pad, out_h, out_w, cols.data());
    CMapMat cm(pointwise ? xn : cols.data(), kdim, p);
    MapMat ym(out.plane(n, 0), cout, p);
    ym.noalias() = wm * cm;
    if (bias) {
      for (int o = 0; o < cout; ++o) ym.row(o).array() += bias.value()[o];
    }
  }
  if (g_reduced_precision) round_to_float(out);

  return make_result(
      std::move(out), {x, weight, bias},
      [=](Node& self) {
        const Tensor& xv = value_of(self, 0);
        const Tensor& wv = value_of(self, 1);
        Tensor* dx = grad_of(self, 0);
        Tensor* dw = grad_of(self, 1);
        Tensor* db = self.parents[2] ? grad_of(self, 2) : nullptr;
        std::vector<double> cols_b(pointwise ? 0 : kdim * p);
        std::vector<double> dcols(dx && !pointwise ? kdim * p : 0);
        CMapMat wmb(wv.data(), cout, kdim);
        for (int n = 0; n < xs.n; ++n) {
          CMapMat dy(self.grad.plane(n, 0), cout, p);
          const double* xn = xv.plane(n, 0);
          if (dw) {
            if (!pointwise)
              im2col(xn, xs.c, xs.h, xs.w, k, pad, out_h, out_w, cols_b.data());
            CMapMat cm(pointwise ? xn : cols_b.data(), kdim, p);
            MapMat(dw->data(), cout, kdim).noalias() += dy * cm.transpose();
          }
          if (db) {
            for (int o = 0; o < cout; ++o) (*db)[o] += dy.row(o).sum();
          }
          if (dx) {
            if (pointwise) {
              MapMat(dx->plane(n, 0), kdim, p).noalias() += wmb.transpose() * dy;
            } else {
              MapMat dc(dcols.data(), kdim, p);
              dc.noalias() = wmb.transpose() * dy;
              col2im(dcols.data(), xs.c, xs.h, xs.w, k, pad, out_h, out_w,
                     dx->plane(n, 0));
            }
          }
        }
      });
}

Var conv2d_depthwise(const Var& x, const Var& weight, const Var& bias,
                     int pad) {
  const Shape4 xs = x.shape();
  const int k = weight.shape().h;
  const int out_h = xs.h + 2 * pad - k + 1;
  const int out_w = xs.w + 2 * pad - k + 1;
  require(out_h >= 1 && out_w >= 1, "conv2d: kernel larger than padded input");
  Tensor out({xs.n, xs.c, out_h, out_w});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const double b = bias ? bias.value()[c] : 0.0;
      const double* wc = wv.plane(c, 0);
      const double* xc = xv.plane(n, c);
      double* yc = out.plane(n, c);
      for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
          double acc = b;
          for (int ki = 0; ki < k; ++ki) {
            const int iy = oy + ki - pad;
            if (iy < 0 || iy >= xs.h) continue;
            for (int kj = 0; kj < k; ++kj) {
              const int ix = ox + kj - pad;
              if (ix < 0 || ix >= xs.w) continue;
              acc += wc[ki * k + kj] * xc[iy * xs.w + ix];
            }
          }
          yc[oy * out_w + ox] = acc;
        }
      }
    }
  }
  if (g_reduced_precision) round_to_float(out);

  return make_result(
      std::move(out), {x, weight, bias},
      [=](Node& self) {
        const Tensor& xv = value_of(self, 0);
        const Tensor& wv = value_of(self, 1);
        Tensor* dx = grad_of(self, 0);
        Tensor* dw = grad_of(self, 1);
        Tensor* db = self.parents[2] ? grad_of(self, 2) : nullptr;
        for (int n = 0; n < xs.n; ++n) {
          for (int c = 0; c < xs.c; ++c) {
            const double* dy = self.grad.plane(n, c);
            const double* xc = xv.plane(n, c);
            const double* wc = wv.plane(c, 0);
            double* dxc = dx ? dx->plane(n, c) : nullptr;
            double* dwc = dw ? dw->plane(c, 0) : nullptr;
            for (int oy = 0; oy < out_h; ++oy) {
              for (int ox = 0; ox < out_w; ++ox) {
                const double g = dy[oy * out_w + ox];
                if (db) (*db)[c] += g;
                for (int ki = 0; ki < k; ++ki) {
                  const int iy = oy + ki - pad;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int kj = 0; kj < k; ++kj) {
                    const int ix = ox + kj - pad;
                    if (ix < 0 || ix >= xs.w) continue;
                    if (dwc) dwc[ki * k + kj] += g * xc[iy * xs.w + ix];
                    if (dxc) dxc[iy * xs.w + ix] += g * wc[ki * k + kj];
                  }
                }
              }
            }
          }
        }
      });
}

// Shared tail of the three normalisation flavours: y = gamma * xhat + beta
// where xhat = (x - mean) * invstd and statistics are taken per group.
// group_of(n, c) maps a plane to its statistics slot.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> invstd;
};

}  // namespace

void set_reduced_precision(bool enabled) { g_reduced_precision = enabled; }
bool reduced_precision() { return g_reduced_precision; }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = grad_of(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape4 as = a.shape();
  const Shape4 bs = b.shape();
  auto dim_ok = [](int ad, int bd) { return bd == ad || bd == 1; };
  require(dim_ok(as.n, bs.n) && dim_ok(as.c, bs.c) && dim_ok(as.h, bs.h) &&
              dim_ok(as.w, bs.w),
          "mul: cannot broadcast " + bs.str() + " onto " + as.str());
  // Strides into b; zero along broadcast axes.
  const std::size_t sw = bs.w == 1 ? 0 : 1;
  const std::size_t sh = bs.h == 1 ? 0 : static_cast<std::size_t>(bs.w);
  const std::size_t sc = bs.c == 1 ? 0 : static_cast<std::size_t>(bs.h) * bs.w;
  const std::size_t sn =
      bs.n == 1 ? 0 : static_cast<std::size_t>(bs.c) * bs.h * bs.w;
  auto b_index = [=](int n, int c, int h, int w) {
    return n * sn + c * sc + h * sh + w * sw;
  };

  Tensor out(as);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t i = 0;
  for (int n = 0; n < as.n; ++n)
    for (int c = 0; c < as.c; ++c)
      for (int h = 0; h < as.h; ++h)
        for (int w = 0; w < as.w; ++w, ++i) out[i] = av[i] * bv[b_index(n, c, h, w)];

  return make_result(std::move(out), {a, b}, [=](Node& self) {
    const Tensor& av = value_of(self, 0);
    const Tensor& bv = value_of(self, 1);
    Tensor* da = grad_of(self, 0);
    Tensor* db = grad_of(self, 1);
    std::size_t i = 0;
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c)
        for (int h = 0; h < as.h; ++h)
          for (int w = 0; w < as.w; ++w, ++i) {
            const std::size_t j = b_index(n, c, h, w);
            if (da) (*da)[i] += self.grad[i] * bv[j];
            if (db) (*db)[j] += self.grad[i] * av[i];
          }
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& xv = value_of(self, 0);
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double s = self.value[i];
        (*g)[i] += self.grad[i] * s * (1.0 - s);
      }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad,
           int groups) {
  const Shape4 xs = x.shape();
  const Shape4 ws = weight.shape();
  require(ws.h == ws.w, "conv2d: kernel must be square, got " + ws.str());
  require(pad >= 0, "conv2d: negative padding");
  if (bias)
    require(bias.shape() == Shape4{1, ws.n, 1, 1},
            "conv2d: bias shape " + bias.shape().str() + " for " +
                std::to_string(ws.n) + " outputs");
  if (groups == 1) {
    require(ws.c == xs.c, "conv2d: weight " + ws.str() + " expects " +
                              std::to_string(ws.c) + " input channels, got " +
                              std::to_string(xs.c));
    return conv2d_dense(x, weight, bias, pad);
  }
  require(groups == xs.c && ws.n == xs.c && ws.c == 1,
          "conv2d: depthwise weight " + ws.str() + " does not match input " +
              xs.str());
  return conv2d_depthwise(x, weight, bias, pad);
}

Var global_avg_pool(const Var& x) {
  const Shape4 s = x.shape();
  Tensor out({s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out(n, c, 0, 0) = acc * inv;
    }
  return make_result(std::move(out), {x}, [s, inv](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const double d = self.grad(n, c, 0, 0) * inv;
          double* p = g->plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] += d;
        }
    }
  });
}

Var max_pool2(const Var& x) {
  const Shape4 s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0,
          "max_pool2: spatial dims must be even, got " + s.str());
  const int oh = s.h / 2;
  const int ow = s.w / 2;
  Tensor out({s.n, s.c, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          std::uint32_t best = static_cast<std::uint32_t>(2 * y * s.w + 2 * xx);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const auto idx =
                  static_cast<std::uint32_t>((2 * y + dy) * s.w + 2 * xx + dx);
              if (p[idx] > p[best]) best = idx;
            }
          out[o] = p[best];
          argmax[o] = best;
        }
    }
  return make_result(std::move(out), {x},
                     [s, oh, ow, argmax = std::move(argmax)](Node& self) {
                       Tensor* g = grad_of(self, 0);
                       if (!g) return;
                       std::size_t o = 0;
                       for (int n = 0; n < s.n; ++n)
                         for (int c = 0; c < s.c; ++c) {
                           double* p = g->plane(n, c);
                           for (int i = 0; i < oh * ow; ++i, ++o)
                             p[argmax[o]] += self.grad[o];
                         }
                     });
}

Var upsample2(const Var& x) {
  const Shape4 s = x.shape();
  Tensor out({s.n, s.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double* q = out.plane(n, c);
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx)
          q[y * 2 * s.w + xx] = p[(y / 2) * s.w + xx / 2];
    }
  return make_result(std::move(out), {x}, [s](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* q = self.grad.plane(n, c);
        double* p = g->plane(n, c);
        for (int y = 0; y < 2 * s.h; ++y)
          for (int xx = 0; xx < 2 * s.w; ++xx)
            p[(y / 2) * s.w + xx / 2] += q[y * 2 * s.w + xx];
      }
  });
}

Var concat_channels(std::span<const Var> parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const Shape4 s0 = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape4 s = p.shape();
    require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: incompatible shapes " + s0.str() + " and " +
                s.str());
    total += s.c;
  }
  Tensor out({s0.n, total, s0.h, s0.w});
  const std::size_t plane = s0.plane();
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (int n = 0; n < s0.n; ++n)
      std::copy_n(p.value().plane(n, 0), p.shape().c * plane, out.plane(n, off));
    off += p.shape().c;
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(parents),
                     [offsets, plane, s0](Node& self) {
                       for (std::size_t k = 0; k < offsets.size(); ++k) {
                         Tensor* g = grad_of(self, k);
                         if (!g) continue;
                         const int c = g->c();
                         for (int n = 0; n < s0.n; ++n) {
                           const double* src = self.grad.plane(n, offsets[k]);
                           double* dst = g->plane(n, 0);
                           for (std::size_t i = 0; i < c * plane; ++i)
                             dst[i] += src[i];
                         }
                       }
                     });
}

Var sum(const Var& x) {
  Tensor out({1, 1, 1, 1}, x.value().sum());
  return make_result(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const double d = self.grad[0];
      for (double& v : g->values()) v += d;
    }
  });
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

namespace {

// y = gamma * (x - mean[s]) * invstd[s] + beta, s = slot(n, c).
template <class SlotFn>
Tensor apply_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const NormStats& st, SlotFn slot) {
  const Shape4 s = x.shape();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t k = slot(n, c);
      const double* p = x.plane(n, c);
      double* q = out.plane(n, c);
      const double g = gamma[c] * st.invstd[k];
      const double b = beta[c] - st.mean[k] * g;
      for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] * g + b;
    }
  return out;
}

// Backward for statistics computed from the input itself. Groups are the
// sets of planes sharing a slot; each group has `count` elements.
template <class SlotFn>
void norm_backward_batchstats(Node& self, const NormStats& st, SlotFn slot,
                              std::size_t slots, double count) {
  const Tensor& x = value_of(self, 0);
  const Tensor& gamma = value_of(self, 1);
  Tensor* dx = grad_of(self, 0);
  Tensor* dgamma = grad_of(self, 1);
  Tensor* dbeta = grad_of(self, 2);
  const Shape4 s = x.shape();
  std::vector<double> sum_dy(slots, 0.0), sum_dy_xhat(slots, 0.0);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t k = slot(n, c);
      const double* p = x.plane(n, c);
      const double* dy = self.grad.plane(n, c);
      double a = 0.0, b = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xhat = (p[i] - st.mean[k]) * st.invstd[k];
        a += dy[i];
        b += dy[i] * xhat;
      }
      sum_dy[k] += a;
      sum_dy_xhat[k] += b;
      if (dbeta) (*dbeta)[c] += a;
      if (dgamma) (*dgamma)[c] += b;
    }
  if (!dx) return;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const std::size_t k = slot(n, c);
      const double* p = x.plane(n, c);
      const double* dy = self.grad.plane(n, c);
      double* q = dx->plane(n, c);
      const double g = gamma[c] * st.invstd[k];
      const double m_dy = sum_dy[k] / count;
      const double m_dyx = sum_dy_xhat[k] / count;
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const double xhat = (p[i] - st.mean[k]) * st.invstd[k];
        q[i] += g * (dy[i] - m_dy - xhat * m_dyx);
      }
    }
}

void check_norm_params(const Var& x, const Var& gamma, const Var& beta) {
  const Shape4 want{1, x.shape().c, 1, 1};
  require(gamma.shape() == want && beta.shape() == want,
          "normalisation parameters " + gamma.shape().str() + "/" +
              beta.shape().str() + " do not match input " + x.shape().str());
}

}  // namespace

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta,
                     double eps, Tensor* batch_mean, Tensor* batch_var) {
  check_norm_params(x, gamma, beta);
  const Shape4 s = x.shape();
  const double count = static_cast<double>(s.n) * s.plane();
  NormStats st{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  std::vector<double> var(s.c, 0.0);
  for (int c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    const double m = acc / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const double* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - m) * (p[i] - m);
    }
    st.mean[c] = m;
    var[c] = sq / count;
    st.invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  if (batch_mean) *batch_mean = Tensor({1, s.c, 1, 1}, st.mean);
  if (batch_var) *batch_var = Tensor({1, s.c, 1, 1}, var);
  auto slot = [](int, int c) { return static_cast<std::size_t>(c); };
  Tensor out = apply_norm(x.value(), gamma.value(), beta.value(), st, slot);
  return make_result(std::move(out), {x, gamma, beta},
                     [st, slot, count, c = s.c](Node& self) {
                       norm_backward_batchstats(self, st, slot, c, count);
                     });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta,
                  double eps) {
  check_norm_params(x, gamma, beta);
  const Shape4 s = x.shape();
  const std::size_t slots = static_cast<std::size_t>(s.n) * s.c;
  const double count = static_cast<double>(s.plane());
  NormStats st{std::vector<double>(slots), std::vector<double>(slots)};
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      const double m = acc / count;
      double sq = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - m) * (p[i] - m);
      const std::size_t k = static_cast<std::size_t>(n) * s.c + c;
      st.mean[k] = m;
      st.invstd[k] = 1.0 / std::sqrt(sq / count + eps);
    }
  auto slot = [c = s.c](int n, int ch) {
    return static_cast<std::size_t>(n) * c + ch;
  };
  Tensor out = apply_norm(x.value(), gamma.value(), beta.value(), st, slot);
  return make_result(std::move(out), {x, gamma, beta},
                     [st, slot, count, slots](Node& self) {
                       norm_backward_batchstats(self, st, slot, slots, count);
                     });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& mean, const Tensor& var, double eps) {
  check_norm_params(x, gamma, beta);
  const Shape4 s = x.shape();
  require(mean.size() == static_cast<std::size_t>(s.c) &&
              var.size() == static_cast<std::size_t>(s.c),
          "batch_norm_eval: running statistics do not match " + s.str());
  NormStats st{std::vector<double>(s.c), std::vector<double>(s.c)};
  for (int c = 0; c < s.c; ++c) {
    st.mean[c] = mean[c];
    st.invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  }
  auto slot = [](int, int c) { return static_cast<std::size_t>(c); };
  Tensor out = apply_norm(x.value(), gamma.value(), beta.value(), st, slot);
  return make_result(std::move(out), {x, gamma, beta}, [st, s](Node& self) {
    const Tensor& xv = value_of(self, 0);
    const Tensor& gamma = value_of(self, 1);
    Tensor* dx = grad_of(self, 0);
    Tensor* dgamma = grad_of(self, 1);
    Tensor* dbeta = grad_of(self, 2);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double* p = xv.plane(n, c);
        const double* dy = self.grad.plane(n, c);
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < s.plane(); ++i) {
          a += dy[i];
          b += dy[i] * (p[i] - st.mean[c]) * st.invstd[c];
        }
        if (dbeta) (*dbeta)[c] += a;
        if (dgamma) (*dgamma)[c] += b;
        if (dx) {
          double* q = dx->plane(n, c);
          const double g = gamma[c] * st.invstd[c];
          for (std::size_t i = 0; i < s.plane(); ++i) q[i] += dy[i] * g;
        }
      }
  });
}

}  // namespace simseg::ag
