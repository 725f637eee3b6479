#include "d2ip/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "d2ip/error.hpp"

namespace d2ip::nn {

Shape ConvSpec::output_shape(const Shape& in) const noexcept {
  const int pad = padding();
  const int reach = dilation * (kernel - 1);
  auto out_dim = [&](int n) { return (n + 2 * pad - reach - 1) / stride + 1; };
  return {out_channels, out_dim(in.depth), out_dim(in.height), out_dim(in.width)};
}

Var Tape::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size()) throw InvalidArgument("tape constant: size/shape mismatch");
  Node n;
  n.shape = shape;
  n.owned = std::move(values);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::parameter(int slot, std::span<const double> values) {
  Node n;
  n.shape = {static_cast<int>(values.size()), 1, 1, 1};
  n.external = values.data();
  n.slot = slot;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::push(Shape shape, std::vector<double> values,
               std::function<void(Tape&, Var)> backward) {
  Node n;
  n.shape = shape;
  n.owned = std::move(values);
  n.backward = std::move(backward);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

std::vector<double>& Tape::grad(Var v) {
  Node& n = nodes_[v];
  if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var output, std::span<const double> seed,
                    std::vector<std::vector<double>>& grads) {
  if (seed.size() != nodes_[output].shape.size()) {
    throw InvalidArgument("backward seed does not match the output shape");
  }
  auto& g = grad(output);
  std::copy(seed.begin(), seed.end(), g.begin());
  for (Var v = output; v >= 0; --v) {
    Node& n = nodes_[v];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, v);
    if (n.slot >= 0) {
      auto& dst = grads.at(static_cast<std::size_t>(n.slot));
      if (dst.size() != n.grad.size()) throw InvalidArgument("gradient slot has wrong size");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }
}

namespace {

// Valid output range [lo, hi) along one axis for a kernel tap at `offset`
// (= tap * dilation - pad), so that in = out * stride + offset stays inside.
inline void tap_range(int out_size, int in_size, int stride, int offset, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = in_size - 1 - offset;
  hi = last < 0 ? 0 : std::min(out_size, last / stride + 1);
  if (lo > hi) lo = hi;
}

void check_conv(const Tape& t, Var x, Var w, Var b, const ConvSpec& s) {
  const Shape in = t.shape(x);
  if (in.channels != s.in_channels) {
    throw InvalidArgument("conv3d: expected " + std::to_string(s.in_channels) +
                          " input channels, got " + std::to_string(in.channels));
  }
  if (s.in_channels % s.groups != 0 || s.out_channels % s.groups != 0) {
    throw InvalidArgument("conv3d: channels not divisible by groups");
  }
  if (t.value(w).size() != s.weight_size()) throw InvalidArgument("conv3d: weight size mismatch");
  if (b >= 0 && t.value(b).size() != static_cast<std::size_t>(s.out_channels)) {
    throw InvalidArgument("conv3d: bias size mismatch");
  }
}

// Shared loop nest for the forward pass and both backward products.
template <typename Body>
void conv_loops(const Shape& in, const Shape& out, const ConvSpec& s, Body&& body) {
  const int k = s.kernel;
  const int pad = s.padding();
  const int cin_g = s.in_channels / s.groups;
  const int cout_g = s.out_channels / s.groups;
  const std::size_t in_sp = in.spatial();
  const std::size_t out_sp = out.spatial();
  for (int co = 0; co < s.out_channels; ++co) {
    const int g = co / cout_g;
    for (int cl = 0; cl < cin_g; ++cl) {
      const int ci = g * cin_g + cl;
      const std::size_t w_base = (static_cast<std::size_t>(co) * cin_g + cl) * k * k * k;
      for (int kd = 0; kd < k; ++kd) {
        int d_lo, d_hi;
        tap_range(out.depth, in.depth, s.stride, kd * s.dilation - pad, d_lo, d_hi);
        for (int kh = 0; kh < k; ++kh) {
          int h_lo, h_hi;
          tap_range(out.height, in.height, s.stride, kh * s.dilation - pad, h_lo, h_hi);
          for (int kw = 0; kw < k; ++kw) {
            int w_lo, w_hi;
            const int w_off = kw * s.dilation - pad;
            tap_range(out.width, in.width, s.stride, w_off, w_lo, w_hi);
            if (w_lo >= w_hi) continue;
            const std::size_t widx = w_base + (static_cast<std::size_t>(kd) * k + kh) * k + kw;
            for (int od = d_lo; od < d_hi; ++od) {
              const int id = od * s.stride + kd * s.dilation - pad;
              for (int oh = h_lo; oh < h_hi; ++oh) {
                const int ih = oh * s.stride + kh * s.dilation - pad;
                const std::size_t in_row =
                    ci * in_sp + (static_cast<std::size_t>(id) * in.height + ih) * in.width;
                const std::size_t out_row =
                    co * out_sp + (static_cast<std::size_t>(od) * out.height + oh) * out.width;
                body(widx, in_row, out_row, w_lo, w_hi, w_off);
              }
            }
          }
        }
      }
    }
  }
}

// 1x1x1 stride-1 dense convolution as a matrix product over [C x spatial].
Var pointwise_conv(Tape& t, Var x, Var weight, Var bias, const ConvSpec& spec) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  using CVec = Eigen::Map<const Eigen::VectorXd>;
  const Shape in = t.shape(x);
  const Shape out = spec.output_shape(in);
  const auto sp = static_cast<Eigen::Index>(in.spatial());
  const int ci = spec.in_channels;
  const int co = spec.out_channels;

  std::vector<double> y(out.size());
  Map Y(y.data(), co, sp);
  Y.noalias() = CMap(t.value(weight).data(), co, ci) * CMap(t.value(x).data(), ci, sp);
  if (bias >= 0) Y.colwise() += CVec(t.value(bias).data(), co);

  return t.push(out, std::move(y), [x, weight, bias, ci, co, sp](Tape& tp, Var self) {
    const CMap G(tp.grad(self).data(), co, sp);
    const CMap X(tp.value(x).data(), ci, sp);
    Map(tp.grad(weight).data(), co, ci).noalias() += G * X.transpose();
    if (tp.requires_grad(x)) {
      Map(tp.grad(x).data(), ci, sp).noalias() +=
          CMap(tp.value(weight).data(), co, ci).transpose() * G;
    }
    if (bias >= 0) {
      Eigen::Map<Eigen::VectorXd>(tp.grad(bias).data(), co) += G.rowwise().sum();
    }
  });
}

}  // namespace

Var conv3d(Tape& t, Var x, Var weight, Var bias, const ConvSpec& spec) {
  check_conv(t, x, weight, bias, spec);
  if (spec.kernel == 1 && spec.stride == 1 && spec.groups == 1) {
    return pointwise_conv(t, x, weight, bias, spec);
  }
  const Shape in = t.shape(x);
  const Shape out = spec.output_shape(in);
  const auto xv = t.value(x);
  const auto wv = t.value(weight);
  const int stride = spec.stride;

  std::vector<double> y(out.size(), 0.0);
  if (bias >= 0) {
    const auto bv = t.value(bias);
    for (int co = 0; co < out.channels; ++co) {
      std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(co * out.spatial()), out.spatial(),
                  bv[co]);
    }
  }
  conv_loops(in, out, spec,
             [&](std::size_t widx, std::size_t in_row, std::size_t out_row, int lo, int hi,
                 int off) {
               const double w = wv[widx];
               const double* src = xv.data() + in_row;
               double* dst = y.data() + out_row;
               if (stride == 1) {
                 for (int ow = lo; ow < hi; ++ow) dst[ow] += w * src[ow + off];
               } else {
                 for (int ow = lo; ow < hi; ++ow) dst[ow] += w * src[ow * stride + off];
               }
             });

  return t.push(out, std::move(y), [x, weight, bias, spec, in, out](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto xv = tp.value(x);
    const auto wv = tp.value(weight);
    const int stride = spec.stride;
    auto& gw = tp.grad(weight);
    const bool need_x = tp.requires_grad(x);
    double* gx = need_x ? tp.grad(x).data() : nullptr;
    conv_loops(in, out, spec,
               [&](std::size_t widx, std::size_t in_row, std::size_t out_row, int lo, int hi,
                   int off) {
                 const double* gout = gy.data() + out_row;
                 const double* src = xv.data() + in_row;
                 double acc = 0.0;
                 if (stride == 1) {
                   for (int ow = lo; ow < hi; ++ow) acc += src[ow + off] * gout[ow];
                   if (gx) {
                     const double w = wv[widx];
                     double* gsrc = gx + in_row;
                     for (int ow = lo; ow < hi; ++ow) gsrc[ow + off] += w * gout[ow];
                   }
                 } else {
                   for (int ow = lo; ow < hi; ++ow) acc += src[ow * stride + off] * gout[ow];
                   if (gx) {
                     const double w = wv[widx];
                     double* gsrc = gx + in_row;
                     for (int ow = lo; ow < hi; ++ow) gsrc[ow * stride + off] += w * gout[ow];
                   }
                 }
                 gw[widx] += acc;
               });
    if (bias >= 0) {
      auto& gb = tp.grad(bias);
      for (int co = 0; co < out.channels; ++co) {
        double acc = 0.0;
        const double* g = gy.data() + co * out.spatial();
        for (std::size_t i = 0; i < out.spatial(); ++i) acc += g[i];
        gb[co] += acc;
      }
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Shape s = t.shape(x);
  const int C = s.channels;
  const std::size_t S = s.spatial();
  if (t.value(gamma).size() != static_cast<std::size_t>(C) ||
      t.value(beta).size() != static_cast<std::size_t>(C)) {
    throw InvalidArgument("layer_norm: affine parameters do not match channel count");
  }
  const auto xv = t.value(x);
  const auto gv = t.value(gamma);
  const auto bv = t.value(beta);

  std::vector<double> mean(S, 0.0), inv_std(S, 0.0);
  for (int c = 0; c < C; ++c) {
    const double* src = xv.data() + c * S;
    for (std::size_t i = 0; i < S; ++i) mean[i] += src[i];
  }
  for (double& m : mean) m /= C;
  for (int c = 0; c < C; ++c) {
    const double* src = xv.data() + c * S;
    for (std::size_t i = 0; i < S; ++i) {
      const double d = src[i] - mean[i];
      inv_std[i] += d * d;
    }
  }
  for (double& v : inv_std) v = 1.0 / std::sqrt(v / C + eps);

  std::vector<double> xhat(s.size());
  std::vector<double> y(s.size());
  for (int c = 0; c < C; ++c) {
    const double* src = xv.data() + c * S;
    double* xh = xhat.data() + c * S;
    double* dst = y.data() + c * S;
    for (std::size_t i = 0; i < S; ++i) {
      xh[i] = (src[i] - mean[i]) * inv_std[i];
      dst[i] = gv[c] * xh[i] + bv[c];
    }
  }

  Var out = t.push(s, std::move(y), [x, gamma, beta, C, S](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto& cache = tp.scratch(self);
    const double* xhat = cache.data();
    const double* inv_std = cache.data() + C * S;
    const auto gv = tp.value(gamma);
    auto& gg = tp.grad(gamma);
    auto& gb = tp.grad(beta);
    for (int c = 0; c < C; ++c) {
      double acc_g = 0.0, acc_b = 0.0;
      const double* g = gy.data() + c * S;
      const double* xh = xhat + c * S;
      for (std::size_t i = 0; i < S; ++i) {
        acc_g += g[i] * xh[i];
        acc_b += g[i];
      }
      gg[c] += acc_g;
      gb[c] += acc_b;
    }
    if (!tp.requires_grad(x)) return;
    std::vector<double> sum_d(S, 0.0), sum_dx(S, 0.0);
    for (int c = 0; c < C; ++c) {
      const double* g = gy.data() + c * S;
      const double* xh = xhat + c * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double d = g[i] * gv[c];
        sum_d[i] += d;
        sum_dx[i] += d * xh[i];
      }
    }
    auto& gx = tp.grad(x);
    const double inv_c = 1.0 / C;
    for (int c = 0; c < C; ++c) {
      const double* g = gy.data() + c * S;
      const double* xh = xhat + c * S;
      double* dst = gx.data() + c * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double d = g[i] * gv[c];
        dst[i] += inv_std[i] * (d - inv_c * sum_d[i] - xh[i] * inv_c * sum_dx[i]);
      }
    }
  });
  auto& cache = t.scratch(out);
  cache = std::move(xhat);
  cache.insert(cache.end(), inv_std.begin(), inv_std.end());
  return out;
}

Var silu(Tape& t, Var x) {
  const auto xv = t.value(x);
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  return t.push(t.shape(x), std::move(y), [x](Tape& tp, Var self) {
    if (!tp.requires_grad(x)) return;
    const auto& gy = tp.grad(self);
    const auto xv = tp.value(x);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double sg = 1.0 / (1.0 + std::exp(-xv[i]));
      gx[i] += gy[i] * sg * (1.0 + xv[i] * (1.0 - sg));
    }
  });
}

Var sigmoid(Tape& t, Var x) {
  const auto xv = t.value(x);
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  return t.push(t.shape(x), std::move(y), [x](Tape& tp, Var self) {
    if (!tp.requires_grad(x)) return;
    const auto& gy = tp.grad(self);
    const auto yv = tp.value(self);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  });
}

Var add(Tape& t, Var a, Var b) {
  if (!(t.shape(a) == t.shape(b))) throw InvalidArgument("add: shape mismatch");
  const auto av = t.value(a);
  const auto bv = t.value(b);
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return t.push(t.shape(a), std::move(y), [a, b](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& g = tp.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
    }
  });
}

Var scale_channels(Tape& t, Var x, Var s) {
  const Shape sh = t.shape(x);
  if (t.shape(s).size() != static_cast<std::size_t>(sh.channels)) {
    throw InvalidArgument("scale_channels: scale must have one entry per channel");
  }
  const std::size_t S = sh.spatial();
  const auto xv = t.value(x);
  const auto sv = t.value(s);
  std::vector<double> y(xv.size());
  for (int c = 0; c < sh.channels; ++c) {
    for (std::size_t i = 0; i < S; ++i) y[c * S + i] = xv[c * S + i] * sv[c];
  }
  return t.push(sh, std::move(y), [x, s, sh, S](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto xv = tp.value(x);
    const auto sv = tp.value(s);
    if (tp.requires_grad(s)) {
      auto& gs = tp.grad(s);
      for (int c = 0; c < sh.channels; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < S; ++i) acc += gy[c * S + i] * xv[c * S + i];
        gs[c] += acc;
      }
    }
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad(x);
      for (int c = 0; c < sh.channels; ++c) {
        for (std::size_t i = 0; i < S; ++i) gx[c * S + i] += gy[c * S + i] * sv[c];
      }
    }
  });
}

Var gate_spatial(Tape& t, Var x, Var a) {
  const Shape sh = t.shape(x);
  const Shape ash = t.shape(a);
  if (ash.channels != 1 || ash.depth != sh.depth || ash.height != sh.height ||
      ash.width != sh.width) {
    throw InvalidArgument("gate_spatial: gate must be single-channel with matching extent");
  }
  const std::size_t S = sh.spatial();
  const auto xv = t.value(x);
  const auto av = t.value(a);
  std::vector<double> y(xv.size());
  for (int c = 0; c < sh.channels; ++c) {
    for (std::size_t i = 0; i < S; ++i) y[c * S + i] = xv[c * S + i] * av[i];
  }
  return t.push(sh, std::move(y), [x, a, sh, S](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    const auto xv = tp.value(x);
    const auto av = tp.value(a);
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad(a);
      for (int c = 0; c < sh.channels; ++c) {
        for (std::size_t i = 0; i < S; ++i) ga[i] += gy[c * S + i] * xv[c * S + i];
      }
    }
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad(x);
      for (int c = 0; c < sh.channels; ++c) {
        for (std::size_t i = 0; i < S; ++i) gx[c * S + i] += gy[c * S + i] * av[i];
      }
    }
  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Shape sh = t.shape(x);
  const std::size_t S = sh.spatial();
  const auto xv = t.value(x);
  std::vector<double> y(static_cast<std::size_t>(sh.channels));
  for (int c = 0; c < sh.channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < S; ++i) acc += xv[c * S + i];
    y[c] = acc / static_cast<double>(S);
  }
  return t.push({sh.channels, 1, 1, 1}, std::move(y), [x, sh, S](Tape& tp, Var self) {
    if (!tp.requires_grad(x)) return;
    const auto& gy = tp.grad(self);
    auto& gx = tp.grad(x);
    for (int c = 0; c < sh.channels; ++c) {
      const double g = gy[c] / static_cast<double>(S);
      for (std::size_t i = 0; i < S; ++i) gx[c * S + i] += g;
    }
  });
}

Var concat_channels(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: nothing to concatenate");
  Shape out = t.shape(parts[0]);
  out.channels = 0;
  for (Var v : parts) {
    const Shape s = t.shape(v);
    if (s.depth != out.depth || s.height != out.height || s.width != out.width) {
      throw InvalidArgument("concat_channels: spatial extents differ");
    }
    out.channels += s.channels;
  }
  std::vector<double> y;
  y.reserve(out.size());
  for (Var v : parts) {
    const auto pv = t.value(v);
    y.insert(y.end(), pv.begin(), pv.end());
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(out, std::move(y), [inputs](Tape& tp, Var self) {
    const auto& gy = tp.grad(self);
    std::size_t offset = 0;
    for (Var v : inputs) {
      const std::size_t n = tp.shape(v).size();
      if (tp.requires_grad(v)) {
        auto& g = tp.grad(v);
        for (std::size_t i = 0; i < n; ++i) g[i] += gy[offset + i];
      }
      offset += n;
    }
  });
}

namespace {

struct AxisTable {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

// Half-pixel-center sampling positions for an exact x2 upsampling.
AxisTable upsample_axis(int in_size) {
  const int out_size = 2 * in_size;
  AxisTable t{std::vector<int>(out_size), std::vector<int>(out_size),
              std::vector<double>(out_size)};
  for (int o = 0; o < out_size; ++o) {
    const double src = std::max(0.0, (o + 0.5) * 0.5 - 0.5);
    const int i0 = std::min(static_cast<int>(src), in_size - 1);
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in_size - 1);
    t.frac[o] = src - i0;
  }
  return t;
}

}  // namespace

Var upsample2x(Tape& t, Var x) {
  const Shape in = t.shape(x);
  const Shape out{in.channels, 2 * in.depth, 2 * in.height, 2 * in.width};
  const AxisTable td = upsample_axis(in.depth);
  const AxisTable th = upsample_axis(in.height);
  const AxisTable tw = upsample_axis(in.width);
  const auto xv = t.value(x);

  auto visit = [in, out, td, th, tw](auto&& fn) {
    const std::size_t in_sp = in.spatial(), out_sp = out.spatial();
    for (int c = 0; c < in.channels; ++c) {
      for (int od = 0; od < out.depth; ++od) {
        const int d0 = td.lo[od], d1 = td.hi[od];
        const double fd = td.frac[od];
        for (int oh = 0; oh < out.height; ++oh) {
          const int h0 = th.lo[oh], h1 = th.hi[oh];
          const double fh = th.frac[oh];
          const std::size_t base = c * in_sp;
          const std::size_t r00 = base + (static_cast<std::size_t>(d0) * in.height + h0) * in.width;
          const std::size_t r01 = base + (static_cast<std::size_t>(d0) * in.height + h1) * in.width;
          const std::size_t r10 = base + (static_cast<std::size_t>(d1) * in.height + h0) * in.width;
          const std::size_t r11 = base + (static_cast<std::size_t>(d1) * in.height + h1) * in.width;
          const double w00 = (1 - fd) * (1 - fh), w01 = (1 - fd) * fh;
          const double w10 = fd * (1 - fh), w11 = fd * fh;
          for (int ow = 0; ow < out.width; ++ow) {
            const int a = tw.lo[ow], b = tw.hi[ow];
            const double fw = tw.frac[ow];
            const std::size_t o =
                c * out_sp + (static_cast<std::size_t>(od) * out.height + oh) * out.width + ow;
            fn(o, r00 + a, r00 + b, w00 * (1 - fw), w00 * fw);
            fn(o, r01 + a, r01 + b, w01 * (1 - fw), w01 * fw);
            fn(o, r10 + a, r10 + b, w10 * (1 - fw), w10 * fw);
            fn(o, r11 + a, r11 + b, w11 * (1 - fw), w11 * fw);
          }
        }
      }
    }
  };

  std::vector<double> y(out.size(), 0.0);
  visit([&](std::size_t o, std::size_t i0, std::size_t i1, double w0, double w1) {
    y[o] += w0 * xv[i0] + w1 * xv[i1];
  });
  return t.push(out, std::move(y), [x, visit](Tape& tp, Var self) {
    if (!tp.requires_grad(x)) return;
    const auto& gy = tp.grad(self);
    auto& gx = tp.grad(x);
    visit([&](std::size_t o, std::size_t i0, std::size_t i1, double w0, double w1) {
      gx[i0] += w0 * gy[o];
      gx[i1] += w1 * gy[o];
    });
  });
}

}  // namespace d2ip::nn
