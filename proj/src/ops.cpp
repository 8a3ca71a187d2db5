#include "odvc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace odvc {

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

namespace {

template <typename Scalar>
using Mat = typename Tensor<Scalar>::Matrix;

template <typename Scalar, typename F>
Tensor<Scalar> map(const Tensor<Scalar>& x, F&& f) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.array().unaryExpr(std::forward<F>(f));
  return out;
}

// Unfolds x into a (C*k*k) x (out_h*out_w) patch matrix.
template <typename Scalar>
Mat<Scalar> im2col(const Tensor<Scalar>& x, int k, int stride, int pad, int out_h, int out_w) {
  const int h = x.height();
  const int w = x.width();
  Mat<Scalar> col(Eigen::Index(x.channels()) * k * k, Eigen::Index(out_h) * out_w);
  for (int c = 0; c < x.channels(); ++c) {
    const Scalar* src = x.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = col.data() + ((Eigen::Index(c) * k + ky) * k + kx) * col.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* row = dst + Eigen::Index(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + out_w, Scalar(0));
            continue;
          }
          const Scalar* line = src + Eigen::Index(iy) * w;
          if (stride == 1) {
            const int x_begin = std::clamp(pad - kx, 0, out_w);
            const int x_end = std::clamp(w + pad - kx, 0, out_w);
            std::fill(row, row + x_begin, Scalar(0));
            std::copy(line + x_begin - pad + kx, line + x_end - pad + kx, row + x_begin);
            std::fill(row + x_end, row + out_w, Scalar(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              row[ox] = (ix >= 0 && ix < w) ? line[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatters patch rows back into an image of `shape`.
template <typename Scalar>
Tensor<Scalar> col2im(const Mat<Scalar>& col, const Shape& shape, int k, int stride, int pad, int out_h, int out_w) {
  Tensor<Scalar> x(shape);
  const int h = shape.height;
  const int w = shape.width;
  for (int c = 0; c < shape.channels; ++c) {
    Scalar* dst = x.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = col.data() + ((Eigen::Index(c) * k + ky) * k + kx) * col.cols();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const Scalar* row = src + Eigen::Index(oy) * out_w;
          Scalar* line = dst + Eigen::Index(iy) * w;
          if (stride == 1) {
            const int x_begin = std::clamp(pad - kx, 0, out_w);
            const int x_end = std::clamp(w + pad - kx, 0, out_w);
            Scalar* base = line - pad + kx;
            for (int ox = x_begin; ox < x_end; ++ox) base[ox] += row[ox];
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) line[ix] += row[ox];
          }
        }
      }
    }
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> row_sums(const Tensor<Scalar>& g) {
  Tensor<Scalar> out(g.channels(), 1, 1);
  out.matrix().col(0) = g.matrix().rowwise().sum();
  return out;
}

void require_channel_operand(const Shape& x, const Shape& s, const char* what) {
  if (s.height != 1 || s.width != 1 || (s.channels != x.channels && s.channels != 1)) {
    throw std::invalid_argument(std::string(what) + ": expected a per-channel operand, got " + s.str());
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape());
  out.matrix() = a.value().matrix() + b.value().matrix();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& g) {
    a.accumulate(g);
    b.accumulate(g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape());
  out.matrix() = a.value().matrix() - b.value().matrix();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& g) {
    a.accumulate(g);
    if (b.requires_grad()) {
      Tensor<Scalar> neg(g.shape());
      neg.matrix() = -g.matrix();
      b.accumulate(neg);
    }
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& g) {
    if (a.requires_grad()) {
      Tensor<Scalar> ga(g.shape());
      ga.array() = g.array() * b.value().array();
      a.accumulate(ga);
    }
    if (b.requires_grad()) {
      Tensor<Scalar> gb(g.shape());
      gb.array() = g.array() * a.value().array();
      b.accumulate(gb);
    }
  });
}

template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() / b.value().array();
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b](const Tensor<Scalar>& g) {
    if (a.requires_grad()) {
      Tensor<Scalar> ga(g.shape());
      ga.array() = g.array() / b.value().array();
      a.accumulate(ga);
    }
    if (b.requires_grad()) {
      Tensor<Scalar> gb(g.shape());
      gb.array() = -g.array() * a.value().array() / b.value().array().square();
      b.accumulate(gb);
    }
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  out.matrix() = x.value().matrix() * factor;
  return Var<Scalar>::from_op(std::move(out), {x}, [x, factor](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.matrix() = g.matrix() * factor;
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar offset) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() + offset;
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) { x.accumulate(g); });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out = map(x.value(), [](Scalar v) { return v <= Scalar(0) ? Scalar(0) : v; });
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = (x.value().array() > Scalar(0)).select(g.array(), Scalar(0));
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Tensor<Scalar> out = map(x.value(), [](Scalar v) { return std::tanh(v); });
  Tensor<Scalar> y = out;
  return Var<Scalar>::from_op(std::move(out), {x}, [x, y = std::move(y)](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = g.array() * (Scalar(1) - y.array().square());
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  Tensor<Scalar> out = map(x.value(), [](Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  Tensor<Scalar> y = out;
  return Var<Scalar>::from_op(std::move(out), {x}, [x, y = std::move(y)](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = g.array() * y.array() * (Scalar(1) - y.array());
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& x) {
  Tensor<Scalar> out = map(x.value(), [](Scalar v) {
    return v > Scalar(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  });
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = g.array() * x.value().array().unaryExpr([](Scalar v) {
      return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
    });
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().square();
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = Scalar(2) * g.array() * x.value().array();
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().abs();
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = g.array() * x.value().array().sign();
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> pow_scalar(const Var<Scalar>& x, Scalar exponent) {
  Tensor<Scalar> out = map(x.value(), [exponent](Scalar v) { return v > Scalar(0) ? std::pow(v, exponent) : Scalar(0); });
  return Var<Scalar>::from_op(std::move(out), {x}, [x, exponent](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = g.array() * x.value().array().unaryExpr([exponent](Scalar v) {
      return v > Scalar(0) ? exponent * std::pow(v, exponent - Scalar(1)) : Scalar(0);
    });
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> lower_bound(const Var<Scalar>& x, Scalar bound) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().max(bound);
  return Var<Scalar>::from_op(std::move(out), {x}, [x, bound](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = (x.value().array() >= bound || g.array() < Scalar(0)).select(g.array(), Scalar(0));
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& x, Scalar lo, Scalar hi) {
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array().max(lo).min(hi);
  return Var<Scalar>::from_op(std::move(out), {x}, [x, lo, hi](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(g.shape());
    gx.array() = (x.value().array() >= lo && x.value().array() <= hi).select(g.array(), Scalar(0));
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> mul_channel(const Var<Scalar>& x, const Var<Scalar>& s) {
  require_channel_operand(x.shape(), s.shape(), "mul_channel");
  const bool broadcast = s.shape().channels == 1;
  Tensor<Scalar> out(x.shape());
  if (broadcast) {
    out.matrix() = x.value().matrix() * s.value().item();
  } else {
    out.matrix() = s.value().matrix().col(0).asDiagonal() * x.value().matrix();
  }
  return Var<Scalar>::from_op(std::move(out), {x, s}, [x, s, broadcast](const Tensor<Scalar>& g) {
    if (x.requires_grad()) {
      Tensor<Scalar> gx(g.shape());
      if (broadcast) {
        gx.matrix() = g.matrix() * s.value().item();
      } else {
        gx.matrix() = s.value().matrix().col(0).asDiagonal() * g.matrix();
      }
      x.accumulate(gx);
    }
    if (s.requires_grad()) {
      Tensor<Scalar> gs(s.shape());
      const auto per_channel = (g.array() * x.value().array()).matrix().rowwise().sum();
      if (broadcast) {
        gs.matrix()(0, 0) = per_channel.sum();
      } else {
        gs.matrix().col(0) = per_channel;
      }
      s.accumulate(gs);
    }
  });
}

template <typename Scalar>
Var<Scalar> add_channel(const Var<Scalar>& x, const Var<Scalar>& b) {
  require_channel_operand(x.shape(), b.shape(), "add_channel");
  const bool broadcast = b.shape().channels == 1;
  Tensor<Scalar> out = x.value();
  if (broadcast) {
    out.array() += b.value().item();
  } else {
    out.matrix().colwise() += b.value().matrix().col(0);
  }
  return Var<Scalar>::from_op(std::move(out), {x, b}, [x, b, broadcast](const Tensor<Scalar>& g) {
    x.accumulate(g);
    if (b.requires_grad()) {
      Tensor<Scalar> gb(b.shape());
      if (broadcast) {
        gb.matrix()(0, 0) = g.matrix().sum();
      } else {
        gb.matrix().col(0) = g.matrix().rowwise().sum();
      }
      b.accumulate(gb);
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  auto out = Tensor<Scalar>::scalar(x.value().matrix().sum());
  return Var<Scalar>::from_op(std::move(out), {x}, [x](const Tensor<Scalar>& g) {
    x.accumulate(Tensor<Scalar>::constant(x.shape(), g.item()));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Scalar n = Scalar(x.value().size());
  auto out = Tensor<Scalar>::scalar(x.value().matrix().sum() / n);
  return Var<Scalar>::from_op(std::move(out), {x}, [x, n](const Tensor<Scalar>& g) {
    x.accumulate(Tensor<Scalar>::constant(x.shape(), g.item() / n));
  });
}

template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const Scalar n = Scalar(a.value().size());
  Tensor<Scalar> diff(a.shape());
  diff.matrix() = a.value().matrix() - b.value().matrix();
  auto out = Tensor<Scalar>::scalar(diff.matrix().squaredNorm() / n);
  return Var<Scalar>::from_op(std::move(out), {a, b}, [a, b, n, diff = std::move(diff)](const Tensor<Scalar>& g) {
    Tensor<Scalar> ga(diff.shape());
    ga.matrix() = diff.matrix() * (Scalar(2) * g.item() / n);
    if (b.requires_grad()) {
      Tensor<Scalar> gb(diff.shape());
      gb.matrix() = -ga.matrix();
      b.accumulate(gb);
    }
    a.accumulate(ga);
  });
}

template <typename Scalar>
Var<Scalar> neg_log2_sum(const Var<Scalar>& p) {
  if ((p.value().array() <= Scalar(0)).any()) {
    throw std::domain_error("neg_log2_sum: probabilities must be positive");
  }
  const Scalar inv_ln2 = Scalar(1) / std::log(Scalar(2));
  auto out = Tensor<Scalar>::scalar(-p.value().array().log().sum() * inv_ln2);
  return Var<Scalar>::from_op(std::move(out), {p}, [p, inv_ln2](const Tensor<Scalar>& g) {
    Tensor<Scalar> gp(p.shape());
    gp.array() = -g.item() * inv_ln2 / p.value().array();
    p.accumulate(gp);
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const int h = parts.front().shape().height;
  const int w = parts.front().shape().width;
  int channels = 0;
  for (const auto& p : parts) {
    if (p.shape().height != h || p.shape().width != w) {
      throw std::invalid_argument("concat_channels: spatial mismatch " + p.shape().str());
    }
    channels += p.shape().channels;
  }
  Tensor<Scalar> out(channels, h, w);
  int offset = 0;
  for (const auto& p : parts) {
    out.matrix().middleRows(offset, p.shape().channels) = p.value().matrix();
    offset += p.shape().channels;
  }
  return Var<Scalar>::from_op(std::move(out), parts, [parts](const Tensor<Scalar>& g) {
    int begin = 0;
    for (const auto& p : parts) {
      const int c = p.shape().channels;
      if (p.requires_grad()) {
        Tensor<Scalar> gp(p.shape());
        gp.matrix() = g.matrix().middleRows(begin, c);
        p.accumulate(gp);
      }
      begin += c;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.shape().channels) {
    throw std::invalid_argument("slice_channels: range out of bounds");
  }
  Tensor<Scalar> out(count, x.shape().height, x.shape().width);
  out.matrix() = x.value().matrix().middleRows(begin, count);
  return Var<Scalar>::from_op(std::move(out), {x}, [x, begin, count](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(x.shape());
    gx.matrix().middleRows(begin, count) = g.matrix();
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> crop_spatial(const Var<Scalar>& x, int top, int left, int height, int width) {
  const Shape in = x.shape();
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > in.height || left + width > in.width) {
    throw std::invalid_argument("crop_spatial: window out of bounds for " + in.str());
  }
  Tensor<Scalar> out(in.channels, height, width);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int xx = 0; xx < width; ++xx) out(c, y, xx) = x.value()(c, top + y, left + xx);
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, in, top, left](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(in);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < g.height(); ++y) {
        for (int xx = 0; xx < g.width(); ++xx) gx(c, top + y, left + xx) = g(c, y, xx);
      }
    }
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, const ConvSpec& spec) {
  const Shape in = x.shape();
  const int k = spec.kernel;
  const Eigen::Index patch = Eigen::Index(in.channels) * k * k;
  if (weight.shape().height != 1 || weight.shape().width != patch) {
    throw std::invalid_argument("conv2d: weight " + weight.shape().str() + " does not match input " + in.str());
  }
  const int out_h = (in.height + 2 * spec.pad - k) / spec.stride + 1;
  const int out_w = (in.width + 2 * spec.pad - k) / spec.stride + 1;
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv2d: input too small " + in.str());

  Mat<Scalar> col = im2col(x.value(), k, spec.stride, spec.pad, out_h, out_w);
  Tensor<Scalar> out(weight.shape().channels, out_h, out_w);
  out.matrix().noalias() = weight.value().matrix() * col;
  if (bias.defined()) out.matrix().colwise() += bias.value().matrix().col(0);

  if (!detail::grad_mode()) return Var<Scalar>(std::move(out));
  std::vector<Var<Scalar>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var<Scalar>::from_op(
      std::move(out), inputs, [x, weight, bias, spec, in, out_h, out_w, col = std::move(col)](const Tensor<Scalar>& g) {
        if (weight.requires_grad()) {
          Tensor<Scalar> gw(weight.shape());
          gw.matrix().noalias() = g.matrix() * col.transpose();
          weight.accumulate(gw);
        }
        if (bias.defined() && bias.requires_grad()) bias.accumulate(row_sums(g));
        if (x.requires_grad()) {
          Mat<Scalar> gcol = weight.value().matrix().transpose() * g.matrix();
          x.accumulate(col2im<Scalar>(gcol, in, spec.kernel, spec.stride, spec.pad, out_h, out_w));
        }
      });
}

template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                             const ConvSpec& spec) {
  const Shape in = x.shape();
  const int k = spec.kernel;
  if (weight.shape().channels != in.channels || weight.shape().height != 1 || weight.shape().width % (k * k) != 0) {
    throw std::invalid_argument("conv_transpose2d: weight " + weight.shape().str() + " does not match input " +
                                in.str());
  }
  const int out_c = weight.shape().width / (k * k);
  const Shape out_shape{out_c, (in.height - 1) * spec.stride - 2 * spec.pad + k + spec.output_pad,
                        (in.width - 1) * spec.stride - 2 * spec.pad + k + spec.output_pad};

  Mat<Scalar> col = weight.value().matrix().transpose() * x.value().matrix();
  Tensor<Scalar> out = col2im<Scalar>(col, out_shape, k, spec.stride, spec.pad, in.height, in.width);
  if (bias.defined()) out.matrix().colwise() += bias.value().matrix().col(0);

  if (!detail::grad_mode()) return Var<Scalar>(std::move(out));
  std::vector<Var<Scalar>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var<Scalar>::from_op(std::move(out), inputs, [x, weight, bias, spec, in](const Tensor<Scalar>& g) {
    Mat<Scalar> gcol = im2col(g, spec.kernel, spec.stride, spec.pad, in.height, in.width);
    if (weight.requires_grad()) {
      Tensor<Scalar> gw(weight.shape());
      gw.matrix().noalias() = x.value().matrix() * gcol.transpose();
      weight.accumulate(gw);
    }
    if (bias.defined() && bias.requires_grad()) bias.accumulate(row_sums(g));
    if (x.requires_grad()) {
      Tensor<Scalar> gx(in);
      gx.matrix().noalias() = weight.value().matrix() * gcol;
      x.accumulate(gx);
    }
  });
}

template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x) {
  const Shape in = x.shape();
  if (in.height % 2 || in.width % 2) throw std::invalid_argument("avg_pool2: odd dimensions " + in.str());
  Tensor<Scalar> out(in.channels, in.height / 2, in.width / 2);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int xx = 0; xx < out.width(); ++xx) {
        const auto& v = x.value();
        out(c, y, xx) =
            (v(c, 2 * y, 2 * xx) + v(c, 2 * y, 2 * xx + 1) + v(c, 2 * y + 1, 2 * xx) + v(c, 2 * y + 1, 2 * xx + 1)) /
            Scalar(4);
      }
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, in](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(in);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < in.height; ++y) {
        for (int xx = 0; xx < in.width; ++xx) gx(c, y, xx) = g(c, y / 2, xx / 2) / Scalar(4);
      }
    }
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2(const Var<Scalar>& x) {
  const Shape in = x.shape();
  Tensor<Scalar> out(in.channels, in.height * 2, in.width * 2);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int xx = 0; xx < out.width(); ++xx) out(c, y, xx) = x.value()(c, y / 2, xx / 2);
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, in](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(in);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < g.height(); ++y) {
        for (int xx = 0; xx < g.width(); ++xx) gx(c, y / 2, xx / 2) += g(c, y, xx);
      }
    }
    x.accumulate(gx);
  });
}

namespace {

// Output index o of a half-pixel x2 upsample reads source o/2 - 0.25, i.e.
// two taps with weights 3/4 and 1/4 (edge-clamped).
struct UpsampleTaps {
  int near;
  int far;
};

inline UpsampleTaps upsample_taps(int o, int n) {
  const int i = o / 2;
  const int far = (o % 2 == 0) ? std::max(i - 1, 0) : std::min(i + 1, n - 1);
  return {i, far};
}

}  // namespace

template <typename Scalar>
Var<Scalar> upsample_bilinear2(const Var<Scalar>& x) {
  const Shape in = x.shape();
  const Scalar a = Scalar(0.75);
  const Scalar b = Scalar(0.25);
  Tensor<Scalar> out(in.channels, in.height * 2, in.width * 2);
  const auto& v = x.value();
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height(); ++y) {
      const auto ty = upsample_taps(y, in.height);
      for (int xx = 0; xx < out.width(); ++xx) {
        const auto tx = upsample_taps(xx, in.width);
        out(c, y, xx) = a * (a * v(c, ty.near, tx.near) + b * v(c, ty.near, tx.far)) +
                        b * (a * v(c, ty.far, tx.near) + b * v(c, ty.far, tx.far));
      }
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, in, a, b](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(in);
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < g.height(); ++y) {
        const auto ty = upsample_taps(y, in.height);
        for (int xx = 0; xx < g.width(); ++xx) {
          const auto tx = upsample_taps(xx, in.width);
          const Scalar gv = g(c, y, xx);
          gx(c, ty.near, tx.near) += a * a * gv;
          gx(c, ty.near, tx.far) += a * b * gv;
          gx(c, ty.far, tx.near) += b * a * gv;
          gx(c, ty.far, tx.far) += b * b * gv;
        }
      }
    }
    x.accumulate(gx);
  });
}

template <typename Scalar>
Var<Scalar> filter1d_valid(const Var<Scalar>& x, std::span<const Scalar> taps, int axis) {
  const Shape in = x.shape();
  const int n = static_cast<int>(taps.size());
  const Shape out_shape = axis == 1 ? Shape{in.channels, in.height, in.width - n + 1}
                                    : Shape{in.channels, in.height - n + 1, in.width};
  if (out_shape.height <= 0 || out_shape.width <= 0) {
    throw std::invalid_argument("filter1d_valid: input " + in.str() + " smaller than the window");
  }
  std::vector<Scalar> kernel(taps.begin(), taps.end());
  Tensor<Scalar> out(out_shape);
  const auto& v = x.value();
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out_shape.height; ++y) {
      for (int xx = 0; xx < out_shape.width; ++xx) {
        Scalar acc = 0;
        for (int t = 0; t < n; ++t) acc += kernel[t] * (axis == 1 ? v(c, y, xx + t) : v(c, y + t, xx));
        out(c, y, xx) = acc;
      }
    }
  }
  return Var<Scalar>::from_op(std::move(out), {x}, [x, in, axis, kernel = std::move(kernel)](const Tensor<Scalar>& g) {
    Tensor<Scalar> gx(in);
    const int n = static_cast<int>(kernel.size());
    for (int c = 0; c < in.channels; ++c) {
      for (int y = 0; y < g.height(); ++y) {
        for (int xx = 0; xx < g.width(); ++xx) {
          const Scalar gv = g(c, y, xx);
          for (int t = 0; t < n; ++t) {
            if (axis == 1) {
              gx(c, y, xx + t) += kernel[t] * gv;
            } else {
              gx(c, y + t, xx) += kernel[t] * gv;
            }
          }
        }
      }
    }
    x.accumulate(gx);
  });
}

namespace {

template <typename Scalar>
struct BilinearSample {
  int x0, x1, y0, y1;
  Scalar ax, ay;
  bool free_x, free_y;  // false where the coordinate was clamped
};

template <typename Scalar>
BilinearSample<Scalar> locate(Scalar sx, Scalar sy, int w, int h) {
  BilinearSample<Scalar> s{};
  if (!std::isfinite(sx) || !std::isfinite(sy)) {
    // poison the sample instead of indexing with garbage
    s.ax = s.ay = std::numeric_limits<Scalar>::quiet_NaN();
    return s;
  }
  const Scalar max_x = Scalar(w - 1);
  const Scalar max_y = Scalar(h - 1);
  s.free_x = sx > Scalar(0) && sx < max_x;
  s.free_y = sy > Scalar(0) && sy < max_y;
  sx = std::clamp(sx, Scalar(0), max_x);
  sy = std::clamp(sy, Scalar(0), max_y);
  s.x0 = static_cast<int>(std::floor(sx));
  s.y0 = static_cast<int>(std::floor(sy));
  s.x1 = std::min(s.x0 + 1, w - 1);
  s.y1 = std::min(s.y0 + 1, h - 1);
  s.ax = sx - Scalar(s.x0);
  s.ay = sy - Scalar(s.y0);
  return s;
}

}  // namespace

template <typename Scalar>
Var<Scalar> warp(const Var<Scalar>& image, const Var<Scalar>& flow) {
  const Shape in = image.shape();
  if (flow.shape().channels != 2 || flow.shape().height != in.height || flow.shape().width != in.width) {
    throw std::invalid_argument("warp: flow " + flow.shape().str() + " not aligned with image " + in.str());
  }
  const int h = in.height;
  const int w = in.width;
  const auto& img = image.value();
  const auto& f = flow.value();
  Tensor<Scalar> out(in);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto s = locate(Scalar(x) + f(0, y, x), Scalar(y) + f(1, y, x), w, h);
      for (int c = 0; c < in.channels; ++c) {
        const Scalar top = (Scalar(1) - s.ax) * img(c, s.y0, s.x0) + s.ax * img(c, s.y0, s.x1);
        const Scalar bottom = (Scalar(1) - s.ax) * img(c, s.y1, s.x0) + s.ax * img(c, s.y1, s.x1);
        out(c, y, x) = (Scalar(1) - s.ay) * top + s.ay * bottom;
      }
    }
  }
  return Var<Scalar>::from_op(std::move(out), {image, flow}, [image, flow, in](const Tensor<Scalar>& g) {
    const int h = in.height;
    const int w = in.width;
    const auto& img = image.value();
    const auto& f = flow.value();
    Tensor<Scalar> gi(image.requires_grad() ? in : Shape{});
    Tensor<Scalar> gf(flow.requires_grad() ? flow.shape() : Shape{});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto s = locate(Scalar(x) + f(0, y, x), Scalar(y) + f(1, y, x), w, h);
        Scalar du = 0;
        Scalar dv = 0;
        for (int c = 0; c < in.channels; ++c) {
          const Scalar gv = g(c, y, x);
          if (image.requires_grad()) {
            gi(c, s.y0, s.x0) += (Scalar(1) - s.ay) * (Scalar(1) - s.ax) * gv;
            gi(c, s.y0, s.x1) += (Scalar(1) - s.ay) * s.ax * gv;
            gi(c, s.y1, s.x0) += s.ay * (Scalar(1) - s.ax) * gv;
            gi(c, s.y1, s.x1) += s.ay * s.ax * gv;
          }
          if (flow.requires_grad()) {
            const Scalar p00 = img(c, s.y0, s.x0);
            const Scalar p01 = img(c, s.y0, s.x1);
            const Scalar p10 = img(c, s.y1, s.x0);
            const Scalar p11 = img(c, s.y1, s.x1);
            du += gv * ((Scalar(1) - s.ay) * (p01 - p00) + s.ay * (p11 - p10));
            dv += gv * ((Scalar(1) - s.ax) * (p10 - p00) + s.ax * (p11 - p01));
          }
        }
        if (flow.requires_grad()) {
          gf(0, y, x) = s.free_x ? du : Scalar(0);
          gf(1, y, x) = s.free_y ? dv : Scalar(0);
        }
      }
    }
    if (image.requires_grad()) image.accumulate(gi);
    if (flow.requires_grad()) flow.accumulate(gf);
  });
}

namespace {

template <typename Scalar>
void check_gdn_params(const Shape& x, const Var<Scalar>& beta, const Var<Scalar>& gamma, const char* what) {
  const int c = x.channels;
  if (!(beta.shape() == Shape{c, 1, 1}) || !(gamma.shape() == Shape{c, 1, c})) {
    throw std::invalid_argument(std::string(what) + ": parameters " + beta.shape().str() + "/" + gamma.shape().str() +
                                " do not match " + std::to_string(c) + " channels");
  }
}

// beta_i + sum_j gamma_ij x_j^2 for every spatial position.
template <typename Scalar>
Mat<Scalar> gdn_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& beta, const Tensor<Scalar>& gamma) {
  Mat<Scalar> norm = gamma.matrix() * x.array().square().matrix();
  norm.colwise() += beta.matrix().col(0);
  return norm;
}

// Shared backward for y = x * norm^e with e = -1/2 (gdn) or +1/2 (igdn).
template <typename Scalar>
void gdn_backward(const Var<Scalar>& x, const Var<Scalar>& beta, const Var<Scalar>& gamma, const Mat<Scalar>& norm,
                  Scalar e, const Tensor<Scalar>& g) {
  const auto& xv = x.value().array();
  // dy_k/dnorm_k = e * x_k * norm_k^(e-1)
  Mat<Scalar> t = (g.array() * xv * e * norm.array().pow(e - Scalar(1))).matrix();
  if (x.requires_grad()) {
    Tensor<Scalar> gx(x.shape());
    gx.matrix() = (g.array() * norm.array().pow(e)).matrix();
    gx.array() += Scalar(2) * xv * (gamma.value().matrix().transpose() * t).array();
    x.accumulate(gx);
  }
  if (beta.requires_grad()) {
    Tensor<Scalar> gb(beta.shape());
    gb.matrix().col(0) = t.rowwise().sum();
    beta.accumulate(gb);
  }
  if (gamma.requires_grad()) {
    Tensor<Scalar> gg(gamma.shape());
    gg.matrix().noalias() = t * xv.square().matrix().transpose();
    gamma.accumulate(gg);
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> gdn(const Var<Scalar>& x, const Var<Scalar>& beta, const Var<Scalar>& gamma) {
  check_gdn_params(x.shape(), beta, gamma, "gdn");
  Mat<Scalar> norm = gdn_norm(x.value(), beta.value(), gamma.value());
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() * norm.array().rsqrt();
  return Var<Scalar>::from_op(std::move(out), {x, beta, gamma},
                              [x, beta, gamma, norm = std::move(norm)](const Tensor<Scalar>& g) {
                                gdn_backward(x, beta, gamma, norm, Scalar(-0.5), g);
                              });
}

template <typename Scalar>
Var<Scalar> igdn(const Var<Scalar>& x, const Var<Scalar>& beta, const Var<Scalar>& gamma) {
  check_gdn_params(x.shape(), beta, gamma, "igdn");
  Mat<Scalar> norm = gdn_norm(x.value(), beta.value(), gamma.value());
  Tensor<Scalar> out(x.shape());
  out.array() = x.value().array() * norm.array().sqrt();
  return Var<Scalar>::from_op(std::move(out), {x, beta, gamma},
                              [x, beta, gamma, norm = std::move(norm)](const Tensor<Scalar>& g) {
                                gdn_backward(x, beta, gamma, norm, Scalar(0.5), g);
                              });
}

#define ODVC_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> add(const Var<S>&, const Var<S>&);                                            \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                            \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                            \
  template Var<S> div(const Var<S>&, const Var<S>&);                                            \
  template Var<S> scale(const Var<S>&, S);                                                      \
  template Var<S> add_scalar(const Var<S>&, S);                                                 \
  template Var<S> relu(const Var<S>&);                                                          \
  template Var<S> tanh(const Var<S>&);                                                          \
  template Var<S> sigmoid(const Var<S>&);                                                       \
  template Var<S> softplus(const Var<S>&);                                                      \
  template Var<S> square(const Var<S>&);                                                        \
  template Var<S> abs(const Var<S>&);                                                           \
  template Var<S> pow_scalar(const Var<S>&, S);                                                 \
  template Var<S> lower_bound(const Var<S>&, S);                                                \
  template Var<S> clamp(const Var<S>&, S, S);                                                   \
  template Var<S> mul_channel(const Var<S>&, const Var<S>&);                                    \
  template Var<S> add_channel(const Var<S>&, const Var<S>&);                                    \
  template Var<S> sum(const Var<S>&);                                                           \
  template Var<S> mean(const Var<S>&);                                                          \
  template Var<S> mse(const Var<S>&, const Var<S>&);                                            \
  template Var<S> neg_log2_sum(const Var<S>&);                                                  \
  template Var<S> concat_channels(const std::vector<Var<S>>&);                                  \
  template Var<S> slice_channels(const Var<S>&, int, int);                                      \
  template Var<S> crop_spatial(const Var<S>&, int, int, int, int);                              \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvSpec&);         \
  template Var<S> conv_transpose2d(const Var<S>&, const Var<S>&, const Var<S>&, const ConvSpec&); \
  template Var<S> avg_pool2(const Var<S>&);                                                     \
  template Var<S> upsample_nearest2(const Var<S>&);                                             \
  template Var<S> upsample_bilinear2(const Var<S>&);                                            \
  template Var<S> filter1d_valid(const Var<S>&, std::span<const S>, int);                       \
  template Var<S> warp(const Var<S>&, const Var<S>&);                                           \
  template Var<S> gdn(const Var<S>&, const Var<S>&, const Var<S>&);                             \
  template Var<S> igdn(const Var<S>&, const Var<S>&, const Var<S>&);

ODVC_INSTANTIATE_OPS(float)
ODVC_INSTANTIATE_OPS(double)

}  // namespace odvc
