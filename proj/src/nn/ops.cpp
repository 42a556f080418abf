#include "earsr/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "earsr/error.hpp"

namespace earsr::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Column matrix for a k x k window sweep: rows indexed by (c, ky, kx),
// columns by output position (oy, ox). Input position is oy*stride - pad + ky.
void im2col(const double* img, int channels, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* cols) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
void col2im(const double* cols, int channels, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* img) {
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * ow;
          double* dst = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::ShapeError,
                std::string(op) + ": shape " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Tensor& in = x->value;
  const Tensor& wt = weight->value;
  const int k = wt.h;
  if (wt.c != in.c || wt.w != k) {
    throw Error(ErrorCode::ShapeError, "conv2d: weight " + wt.shape_string() +
                                           " does not fit input " + in.shape_string());
  }
  const int oh = (in.h + 2 * pad - k) / stride + 1;
  const int ow = (in.w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw Error(ErrorCode::ShapeError, "conv2d: input smaller than kernel");
  const int cout = wt.n;
  const int krows = in.c * k * k;
  const int opix = oh * ow;

  Tensor out(in.n, cout, oh, ow);
  std::vector<double> cols(static_cast<std::size_t>(krows) * opix);
  const ConstMatMap wm(wt.data.data(), cout, krows);
  for (int n = 0; n < in.n; ++n) {
    im2col(&in.data[n * in.c * in.plane()], in.c, in.h, in.w, k, stride, pad, oh, ow, cols.data());
    MatMap om(&out.data[n * cout * static_cast<std::size_t>(opix)], cout, opix);
    om.noalias() = wm * ConstMatMap(cols.data(), krows, opix);
    for (int c = 0; c < cout; ++c) om.row(c).array() += bias->value.data[c];
  }

  return make_node(std::move(out), {x, weight, bias}, [=](Node& self) {
    const Tensor& in = x->value;
    const Tensor& g = self.grad;
    std::vector<double> cols(static_cast<std::size_t>(krows) * opix);
    std::vector<double> dcols;
    const ConstMatMap wm(weight->value.data.data(), cout, krows);
    if (bias->requires_grad) {
      Tensor& db = bias->grad_buffer();
      for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < cout; ++c) {
          const double* gp = &g.data[(static_cast<std::size_t>(n) * cout + c) * opix];
          double s = 0.0;
          for (int i = 0; i < opix; ++i) s += gp[i];
          db.data[c] += s;
        }
      }
    }
    for (int n = 0; n < in.n; ++n) {
      const ConstMatMap gm(&g.data[n * cout * static_cast<std::size_t>(opix)], cout, opix);
      if (weight->requires_grad) {
        im2col(&in.data[n * in.c * in.plane()], in.c, in.h, in.w, k, stride, pad, oh, ow,
               cols.data());
        MatMap dw(weight->grad_buffer().data.data(), cout, krows);
        dw.noalias() += gm * ConstMatMap(cols.data(), krows, opix).transpose();
      }
      if (x->requires_grad) {
        dcols.resize(static_cast<std::size_t>(krows) * opix);
        MatMap dc(dcols.data(), krows, opix);
        dc.noalias() = wm.transpose() * gm;
        Tensor& dx = x->grad_buffer();
        col2im(dcols.data(), in.c, in.h, in.w, k, stride, pad, oh, ow,
               &dx.data[n * in.c * in.plane()]);
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad,
                     int output_pad) {
  const Tensor& in = x->value;
  const Tensor& wt = weight->value;
  const int k = wt.h;
  if (wt.n != in.c || wt.w != k) {
    throw Error(ErrorCode::ShapeError, "conv_transpose2d: weight " + wt.shape_string() +
                                           " does not fit input " + in.shape_string());
  }
  const int cout = wt.c;
  const int oh = (in.h - 1) * stride - 2 * pad + k + output_pad;
  const int ow = (in.w - 1) * stride - 2 * pad + k + output_pad;
  const int krows = cout * k * k;
  const int ipix = in.h * in.w;
  const std::size_t oplane = static_cast<std::size_t>(oh) * ow;

  Tensor out(in.n, cout, oh, ow);
  std::vector<double> cols(static_cast<std::size_t>(krows) * ipix);
  const ConstMatMap wm(wt.data.data(), in.c, krows);
  for (int n = 0; n < in.n; ++n) {
    const ConstMatMap xm(&in.data[n * in.c * static_cast<std::size_t>(ipix)], in.c, ipix);
    MatMap(cols.data(), krows, ipix).noalias() = wm.transpose() * xm;
    double* op = &out.data[n * cout * oplane];
    col2im(cols.data(), cout, oh, ow, k, stride, pad, in.h, in.w, op);
    for (int c = 0; c < cout; ++c) {
      const double b = bias->value.data[c];
      for (std::size_t i = 0; i < oplane; ++i) op[c * oplane + i] += b;
    }
  }

  return make_node(std::move(out), {x, weight, bias}, [=](Node& self) {
    const Tensor& in = x->value;
    const Tensor& g = self.grad;
    std::vector<double> dcols(static_cast<std::size_t>(krows) * ipix);
    const ConstMatMap wm(weight->value.data.data(), in.c, krows);
    if (bias->requires_grad) {
      Tensor& db = bias->grad_buffer();
      for (int n = 0; n < in.n; ++n) {
        for (int c = 0; c < cout; ++c) {
          const double* gp = &g.data[(static_cast<std::size_t>(n) * cout + c) * oplane];
          double s = 0.0;
          for (std::size_t i = 0; i < oplane; ++i) s += gp[i];
          db.data[c] += s;
        }
      }
    }
    for (int n = 0; n < in.n; ++n) {
      im2col(&g.data[n * cout * oplane], cout, oh, ow, k, stride, pad, in.h, in.w, dcols.data());
      const ConstMatMap dc(dcols.data(), krows, ipix);
      if (weight->requires_grad) {
        const ConstMatMap xm(&in.data[n * in.c * static_cast<std::size_t>(ipix)], in.c, ipix);
        MatMap(weight->grad_buffer().data.data(), in.c, krows).noalias() += xm * dc.transpose();
      }
      if (x->requires_grad) {
        MatMap dx(&x->grad_buffer().data[n * in.c * static_cast<std::size_t>(ipix)], in.c, ipix);
        dx.noalias() += wm * dc;
      }
    }
  });
}

namespace {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Var reflect_pad(const Var& x, int pad) {
  const Tensor& in = x->value;
  if (pad >= in.h || pad >= in.w) {
    throw Error(ErrorCode::ShapeError, "reflect_pad: pad " + std::to_string(pad) +
                                           " too large for " + in.shape_string());
  }
  const int oh = in.h + 2 * pad;
  const int ow = in.w + 2 * pad;
  Tensor out(in.n, in.c, oh, ow);
  std::vector<int> ry(oh), rx(ow);
  for (int y = 0; y < oh; ++y) ry[y] = reflect_index(y - pad, in.h);
  for (int x2 = 0; x2 < ow; ++x2) rx[x2] = reflect_index(x2 - pad, in.w);
  const int planes = in.n * in.c;
  for (int p = 0; p < planes; ++p) {
    const double* src = &in.data[p * in.plane()];
    double* dst = &out.data[p * out.plane()];
    for (int y = 0; y < oh; ++y) {
      for (int x2 = 0; x2 < ow; ++x2) dst[y * ow + x2] = src[ry[y] * in.w + rx[x2]];
    }
  }
  return make_node(std::move(out), {x}, [=](Node& self) {
    Tensor& dx = x->grad_buffer();
    const Tensor& g = self.grad;
    const int iw = x->value.w;
    const std::size_t ip = x->value.plane();
    for (int p = 0; p < planes; ++p) {
      const double* src = &g.data[p * static_cast<std::size_t>(oh) * ow];
      double* dst = &dx.data[p * ip];
      for (int y = 0; y < oh; ++y) {
        for (int x2 = 0; x2 < ow; ++x2) dst[ry[y] * iw + rx[x2]] += src[y * ow + x2];
      }
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  const Tensor& in = x->value;
  const int planes = in.n * in.c;
  const std::size_t np = in.plane();
  Tensor out(in.n, in.c, in.h, in.w);
  std::vector<double> inv_std(planes);
  for (int p = 0; p < planes; ++p) {
    const double* src = &in.data[p * np];
    double mean = 0.0;
    for (std::size_t i = 0; i < np; ++i) mean += src[i];
    mean /= static_cast<double>(np);
    double var = 0.0;
    for (std::size_t i = 0; i < np; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(np);
    inv_std[p] = 1.0 / std::sqrt(var + eps);
    double* dst = &out.data[p * np];
    for (std::size_t i = 0; i < np; ++i) dst[i] = (src[i] - mean) * inv_std[p];
  }
  return make_node(std::move(out), {x}, [x, inv_std, planes, np](Node& self) {
      const Tensor& y = self.value;
      Tensor& dx = x->grad_buffer();
      for (int p = 0; p < planes; ++p) {
        const double* g = &self.grad.data[p * np];
        const double* yh = &y.data[p * np];
        double mg = 0.0, mgy = 0.0;
        for (std::size_t i = 0; i < np; ++i) {
          mg += g[i];
          mgy += g[i] * yh[i];
        }
        mg /= static_cast<double>(np);
        mgy /= static_cast<double>(np);
        double* d = &dx.data[p * np];
        for (std::size_t i = 0; i < np; ++i) d[i] += inv_std[p] * (g[i] - mg - yh[i] * mgy);
      }
  });
}

namespace {

template <class F, class DF>
Var elementwise(const Var& x, F f, DF df) {
  const Tensor& in = x->value;
  Tensor out(in.n, in.c, in.h, in.w);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = f(in.data[i]);
  return make_node(std::move(out), {x}, [x, df](Node& self) {
    Tensor& dx = x->grad_buffer();
    const auto& xin = x->value.data;
    const auto& y = self.value.data;
    for (std::size_t i = 0; i < xin.size(); ++i) dx.data[i] += self.grad.data[i] * df(xin[i], y[i]);
  });
}

}  // namespace

Var relu(const Var& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return elementwise(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var dropout(const Var& x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::BadConfig, "dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const Tensor& in = x->value;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(in.size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out(in.n, in.c, in.h, in.w);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] * mask[i];
  return make_node(std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
    Tensor& dx = x->grad_buffer();
    for (std::size_t i = 0; i < mask.size(); ++i) dx.data[i] += self.grad.data[i] * mask[i];
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->accumulate(self.grad.data);
    if (b->requires_grad) b->accumulate(self.grad.data);
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  require_same_shape(a->value, b->value, "mean_abs_diff");
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += std::abs(a->value.data[i] - b->value.data[i]);
  return make_node(Tensor(1, 1, 1, 1, s / n), {a, b}, [a, b, n](Node& self) {
    const double g = self.grad.data[0] / n;
    const auto& av = a->value.data;
    const auto& bv = b->value.data;
    if (a->requires_grad) {
      Tensor& da = a->grad_buffer();
      for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        da.data[i] += d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
      }
    }
    if (b->requires_grad) {
      Tensor& db = b->grad_buffer();
      for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        db.data[i] += d > 0.0 ? -g : (d < 0.0 ? g : 0.0);
      }
    }
  });
}

Var mean_log(const Var& p, double floor) {
  const auto& v = p->value.data;
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += std::log(std::max(x, floor));
  return make_node(Tensor(1, 1, 1, 1, s / n), {p}, [p, floor, n](Node& self) {
    const double g = self.grad.data[0] / n;
    Tensor& dp = p->grad_buffer();
    const auto& v = p->value.data;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > floor) dp.data[i] += g / v[i];
    }
  });
}

Var mean_log1m(const Var& p, double floor) {
  const auto& v = p->value.data;
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += std::log(std::max(1.0 - x, floor));
  return make_node(Tensor(1, 1, 1, 1, s / n), {p}, [p, floor, n](Node& self) {
    const double g = self.grad.data[0] / n;
    Tensor& dp = p->grad_buffer();
    const auto& v = p->value.data;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (1.0 - v[i] > floor) dp.data[i] -= g / (1.0 - v[i]);
    }
  });
}

Var weighted_sum(const std::vector<std::pair<Var, double>>& terms) {
  double s = 0.0;
  std::vector<Var> parents;
  std::vector<double> weights;
  for (const auto& [v, w] : terms) {
    s += w * scalar(v);
    parents.push_back(v);
    weights.push_back(w);
  }
  return make_node(Tensor(1, 1, 1, 1, s), parents, [parents, weights](Node& self) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (parents[i]->requires_grad) {
        parents[i]->grad_buffer().data[0] += weights[i] * self.grad.data[0];
      }
    }
  });
}

Var detach(const Var& x) { return constant(x->value); }

}  // namespace earsr::nn
