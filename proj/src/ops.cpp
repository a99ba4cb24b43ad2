#include <cmath>

#include "m2m/graph.hpp"

namespace m2m {
namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void require_same_graph(Var<Scalar> a, Var<Scalar> b) {
  if (a.graph != b.graph) throw ShapeError("operands belong to different graphs");
}

// Copies sample n of x into a zero-padded buffer laid out with row pitch W+2,
// plus two trailing guard columns so every 3×3 tap is one contiguous slice.
template <typename Scalar>
RowMatrix<Scalar> pad_sample(const Tensor<Scalar>& x, int n) {
  const int c = x.channels(), h = x.height(), w = x.width(), pitch = w + 2;
  RowMatrix<Scalar> padded = RowMatrix<Scalar>::Zero(c, Eigen::Index(h + 2) * pitch + 2);
  for (int ch = 0; ch < c; ++ch) {
    const auto src = x.plane(n, ch);
    for (int y = 0; y < h; ++y) padded.row(ch).segment(Eigen::Index(y + 1) * pitch + 1, w) = src.row(y);
  }
  return padded;
}

// Weight slice for tap k as an (out × in) strided view of the (out, in, 3, 3) tensor.
template <typename Scalar>
auto tap(const Tensor<Scalar>& w, int k) {
  using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  return Eigen::Map<const RowMatrix<Scalar>, 0, Stride>(w.data() + k, w.batch(), w.channels(),
                                                        Stride(Eigen::Index(w.channels()) * 9, 9));
}

template <typename Scalar>
auto tap(Tensor<Scalar>& w, int k) {
  using Stride = Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>;
  return Eigen::Map<RowMatrix<Scalar>, 0, Stride>(w.data() + k, w.batch(), w.channels(),
                                                  Stride(Eigen::Index(w.channels()) * 9, 9));
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv3x3(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  require_same_graph(x, w);
  require_same_graph(x, b);
  const Tensor<Scalar>& xv = x.value();
  const Tensor<Scalar>& wv = w.value();
  const Tensor<Scalar>& bv = b.value();
  if (wv.height() != 3 || wv.width() != 3) throw ShapeError("conv3x3: kernel must be 3x3");
  if (wv.channels() != xv.channels())
    throw ShapeError("conv3x3: input has " + std::to_string(xv.channels()) + " channels, kernel expects " +
                     std::to_string(wv.channels()));
  if (bv.size() != wv.batch()) throw ShapeError("conv3x3: bias size mismatch");

  const int n_batch = xv.batch(), out_ch = wv.batch(), h = xv.height(), wd = xv.width(), pitch = wd + 2;
  const Eigen::Index span = Eigen::Index(h) * pitch;
  Tensor<Scalar> out({n_batch, out_ch, h, wd});
  RowMatrix<Scalar> acc(out_ch, span);
  for (int n = 0; n < n_batch; ++n) {
    const RowMatrix<Scalar> padded = pad_sample(xv, n);
    acc.setZero();
    for (int k = 0; k < 9; ++k) {
      const Eigen::Index offset = Eigen::Index(k / 3) * pitch + k % 3;
      acc.noalias() += tap(wv, k) * padded.middleCols(offset, span);
    }
    for (int o = 0; o < out_ch; ++o) {
      auto dst = out.plane(n, o);
      for (int y = 0; y < h; ++y)
        dst.row(y) = acc.row(o).segment(Eigen::Index(y) * pitch, wd).array() + bv.data()[o];
    }
  }

  const bool needs = x.requires_grad() || w.requires_grad() || b.requires_grad();
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), needs, [x, w, b, self](Graph<Scalar>& g) {
    const Tensor<Scalar>& xv = g.value(x);
    const Tensor<Scalar>& wv = g.value(w);
    const Tensor<Scalar>& gy = g.grad(self);
    const int n_batch = xv.batch(), out_ch = wv.batch(), in_ch = wv.channels();
    const int h = xv.height(), wd = xv.width(), pitch = wd + 2;
    const Eigen::Index span = Eigen::Index(h) * pitch;
    const bool gx_on = g.requires_grad(x), gw_on = g.requires_grad(w), gb_on = g.requires_grad(b);

    RowMatrix<Scalar> gpad(out_ch, span);
    for (int n = 0; n < n_batch; ++n) {
      // Output gradient in the pitched layout; guard columns stay zero.
      gpad.setZero();
      for (int o = 0; o < out_ch; ++o) {
        const auto src = gy.plane(n, o);
        for (int y = 0; y < h; ++y) gpad.row(o).segment(Eigen::Index(y) * pitch, wd) = src.row(y);
      }
      if (gb_on) {
        Tensor<Scalar>& gb = g.grad(b);
        for (int o = 0; o < out_ch; ++o) gb.data()[o] += gy.plane(n, o).sum();
      }
      if (gw_on) {
        const RowMatrix<Scalar> padded = pad_sample(xv, n);
        Tensor<Scalar>& gw = g.grad(w);
        for (int k = 0; k < 9; ++k) {
          const Eigen::Index offset = Eigen::Index(k / 3) * pitch + k % 3;
          tap(gw, k).noalias() += gpad * padded.middleCols(offset, span).transpose();
        }
      }
      if (gx_on) {
        RowMatrix<Scalar> gxpad = RowMatrix<Scalar>::Zero(in_ch, Eigen::Index(h + 2) * pitch + 2);
        for (int k = 0; k < 9; ++k) {
          const Eigen::Index offset = Eigen::Index(k / 3) * pitch + k % 3;
          gxpad.middleCols(offset, span).noalias() += tap(wv, k).transpose() * gpad;
        }
        Tensor<Scalar>& gx = g.grad(x);
        for (int c = 0; c < in_ch; ++c) {
          auto dst = gx.plane(n, c);
          for (int y = 0; y < h; ++y) dst.row(y) += gxpad.row(c).segment(Eigen::Index(y + 1) * pitch + 1, wd);
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, BnState<Scalar>& state, Mode mode) {
  require_same_graph(x, gamma);
  require_same_graph(x, beta);
  const Tensor<Scalar>& xv = x.value();
  const int n_batch = xv.batch(), ch = xv.channels();
  const Eigen::Index plane = xv.plane_size();
  const Eigen::Index count = Eigen::Index(n_batch) * plane;
  if (count == 0) throw ShapeError("batch_norm: empty batch");
  if (gamma.value().size() != ch || beta.value().size() != ch) throw ShapeError("batch_norm: gamma/beta size mismatch");
  if (state.running_mean.size() != ch || state.running_var.size() != ch)
    throw ShapeError("batch_norm: running statistics size mismatch");

  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Array mean(ch), inv_std(ch);
  if (mode == Mode::Train) {
    for (int c = 0; c < ch; ++c) {
      double s = 0.0;
      for (int n = 0; n < n_batch; ++n) s += double(xv.plane(n, c).sum());
      const double mu = s / double(count);
      double v = 0.0;
      for (int n = 0; n < n_batch; ++n) v += double((xv.plane(n, c).array() - Scalar(mu)).square().sum());
      v /= double(count);
      mean[c] = Scalar(mu);
      inv_std[c] = Scalar(1.0 / std::sqrt(v + double(state.eps)));
      const double unbiased = count > 1 ? v * double(count) / double(count - 1) : v;
      state.running_mean[c] = (Scalar(1) - state.momentum) * state.running_mean[c] + state.momentum * Scalar(mu);
      state.running_var[c] = (Scalar(1) - state.momentum) * state.running_var[c] + state.momentum * Scalar(unbiased);
    }
  } else {
    mean = state.running_mean;
    inv_std = (state.running_var + state.eps).rsqrt();
  }

  Tensor<Scalar> xhat(xv.shape());
  Tensor<Scalar> out(xv.shape());
  const Scalar* gm = gamma.value().data();
  const Scalar* bt = beta.value().data();
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < ch; ++c) {
      xhat.plane(n, c) = ((xv.plane(n, c).array() - mean[c]) * inv_std[c]).matrix();
      out.plane(n, c) = (xhat.plane(n, c).array() * gm[c] + bt[c]).matrix();
    }

  const bool needs = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), needs,
                  [x, gamma, beta, self, mode, xhat = std::move(xhat), inv_std](Graph<Scalar>& g) {
                    const Tensor<Scalar>& gy = g.grad(self);
                    const int n_batch = gy.batch(), ch = gy.channels();
                    const double count = double(n_batch) * double(gy.plane_size());
                    const Scalar* gm = g.value(gamma).data();
                    for (int c = 0; c < ch; ++c) {
                      double sum_gy = 0.0, sum_gy_xhat = 0.0;
                      for (int n = 0; n < n_batch; ++n) {
                        sum_gy += double(gy.plane(n, c).sum());
                        sum_gy_xhat += double(gy.plane(n, c).cwiseProduct(xhat.plane(n, c)).sum());
                      }
                      if (g.requires_grad(gamma)) g.grad(gamma).data()[c] += Scalar(sum_gy_xhat);
                      if (g.requires_grad(beta)) g.grad(beta).data()[c] += Scalar(sum_gy);
                      if (!g.requires_grad(x)) continue;
                      Tensor<Scalar>& gx = g.grad(x);
                      const Scalar k = gm[c] * inv_std[c];
                      if (mode == Mode::Eval) {
                        for (int n = 0; n < n_batch; ++n) gx.plane(n, c) += k * gy.plane(n, c);
                      } else {
                        const Scalar mean_gy = Scalar(sum_gy / count);
                        const Scalar mean_gy_xhat = Scalar(sum_gy_xhat / count);
                        for (int n = 0; n < n_batch; ++n)
                          gx.plane(n, c).array() +=
                              k * (gy.plane(n, c).array() - mean_gy - xhat.plane(n, c).array() * mean_gy_xhat);
                      }
                    }
                  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tensor<Scalar> out(x.value().shape());
  out.values() = x.value().values().max(Scalar(0));
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self](Graph<Scalar>& g) {
    g.grad(x).values() += (g.value(x).values() > Scalar(0)).select(g.grad(self).values(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> x, Var<Scalar> y) {
  require_same_graph(x, y);
  if (x.shape() != y.shape()) throw ShapeError("add: shape mismatch " + x.value().shape_string() + " vs " + y.value().shape_string());
  Tensor<Scalar> out(x.shape());
  out.values() = x.value().values() + y.value().values();
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad() || y.requires_grad(), [x, y, self](Graph<Scalar>& g) {
    if (g.requires_grad(x)) g.grad(x).values() += g.grad(self).values();
    if (g.requires_grad(y)) g.grad(y).values() += g.grad(self).values();
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> x, Var<Scalar> y) {
  require_same_graph(x, y);
  if (x.shape() != y.shape()) throw ShapeError("sub: shape mismatch");
  Tensor<Scalar> out(x.shape());
  out.values() = x.value().values() - y.value().values();
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad() || y.requires_grad(), [x, y, self](Graph<Scalar>& g) {
    if (g.requires_grad(x)) g.grad(x).values() += g.grad(self).values();
    if (g.requires_grad(y)) g.grad(y).values() -= g.grad(self).values();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  out.values() = x.value().values() * factor;
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self, factor](Graph<Scalar>& g) {
    g.grad(x).values() += factor * g.grad(self).values();
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out({1, 1, 1, 1}, x.value().values().sum());
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self](Graph<Scalar>& g) {
    g.grad(x).values() += g.grad(self).values()[0];
  });
}

template <typename Scalar>
Var<Scalar> dot(Var<Scalar> x, const Tensor<Scalar>& weights) {
  if (x.shape() != weights.shape()) throw ShapeError("dot: shape mismatch");
  Tensor<Scalar> out({1, 1, 1, 1}, (x.value().values() * weights.values()).sum());
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self, weights](Graph<Scalar>& g) {
    g.grad(x).values() += g.grad(self).values()[0] * weights.values();
  });
}

namespace {

// wide(n, c, y·r+i, x·r+j) ↔ deep(n, c·r²+i·r+j, y, x). Both directions accumulate.
template <typename Scalar, typename Fn>
void for_each_shuffle_pair(const Tensor<Scalar>& deep, int r, Fn&& fn) {
  const int n_batch = deep.batch(), ch = deep.channels() / (r * r), h = deep.height(), w = deep.width();
  for (int n = 0; n < n_batch; ++n)
    for (int c = 0; c < ch; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) fn(n, c * r * r + i * r + j, y, x, c, y * r + i, x * r + j);
}

template <typename Scalar>
void shuffle_to_wide(const Tensor<Scalar>& deep, Tensor<Scalar>& wide, int r) {
  for_each_shuffle_pair(deep, r, [&](int n, int dc, int y, int x, int c, int wy, int wx) {
    wide(n, c, wy, wx) += deep(n, dc, y, x);
  });
}

template <typename Scalar>
void shuffle_to_deep(const Tensor<Scalar>& wide, Tensor<Scalar>& deep, int r) {
  for_each_shuffle_pair(deep, r, [&](int n, int dc, int y, int x, int c, int wy, int wx) {
    deep(n, dc, y, x) += wide(n, c, wy, wx);
  });
}

}  // namespace

template <typename Scalar>
Var<Scalar> depth_to_space(Var<Scalar> x, int factor) {
  const Tensor<Scalar>& xv = x.value();
  if (factor < 1 || xv.channels() % (factor * factor) != 0)
    throw ShapeError("depth_to_space: channels not divisible by factor^2");
  Tensor<Scalar> out({xv.batch(), xv.channels() / (factor * factor), xv.height() * factor, xv.width() * factor});
  shuffle_to_wide(xv, out, factor);
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self, factor](Graph<Scalar>& g) {
    shuffle_to_deep(g.grad(self), g.grad(x), factor);
  });
}

template <typename Scalar>
Var<Scalar> space_to_depth(Var<Scalar> x, int factor) {
  const Tensor<Scalar>& xv = x.value();
  if (factor < 1 || xv.height() % factor != 0 || xv.width() % factor != 0)
    throw ShapeError("space_to_depth: spatial size not divisible by factor");
  Tensor<Scalar> out({xv.batch(), xv.channels() * factor * factor, xv.height() / factor, xv.width() / factor});
  shuffle_to_deep(xv, out, factor);
  Graph<Scalar>& g = *x.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), x.requires_grad(), [x, self, factor](Graph<Scalar>& g) {
    shuffle_to_wide(g.grad(self), g.grad(x), factor);
  });
}

template <typename Scalar>
Var<Scalar> masked_loss(Var<Scalar> pred, const Tensor<Scalar>& target, const Tensor<Scalar>& mask, int p) {
  if (p != 1 && p != 2) throw ParameterError("masked_loss: p must be 1 or 2");
  const Tensor<Scalar>& pv = pred.value();
  if (pv.shape() != target.shape() || pv.shape() != mask.shape()) throw ShapeError("masked_loss: shape mismatch");
  const double count = mask.values().template cast<double>().sum();
  if (!(count > 0.0)) throw DegenerateLossError("masked_loss: empty mask");

  const auto diff = (pv.values() - target.values()).template cast<double>();
  const auto m = mask.values().template cast<double>();
  const double total = p == 1 ? (diff.abs() * m).sum() : (diff.square() * m).sum();
  Tensor<Scalar> out({1, 1, 1, 1}, Scalar(total / count));

  Graph<Scalar>& g = *pred.graph;
  Var<Scalar> self{&g, int(g.size())};
  return g.record(std::move(out), pred.requires_grad(), [pred, self, target, mask, p, count](Graph<Scalar>& g) {
    const Scalar seed = g.grad(self).values()[0] / Scalar(count);
    const auto d = g.value(pred).values() - target.values();
    if (p == 1)
      g.grad(pred).values() += seed * mask.values() * d.sign();
    else
      g.grad(pred).values() += seed * Scalar(2) * mask.values() * d;
  });
}

#define M2M_INSTANTIATE_OPS(S)                                                             \
  template Var<S> conv3x3(Var<S>, Var<S>, Var<S>);                                         \
  template Var<S> batch_norm(Var<S>, Var<S>, Var<S>, BnState<S>&, Mode);                   \
  template Var<S> relu(Var<S>);                                                            \
  template Var<S> add(Var<S>, Var<S>);                                                     \
  template Var<S> sub(Var<S>, Var<S>);                                                     \
  template Var<S> scale(Var<S>, S);                                                        \
  template Var<S> sum(Var<S>);                                                             \
  template Var<S> dot(Var<S>, const Tensor<S>&);                                           \
  template Var<S> depth_to_space(Var<S>, int);                                             \
  template Var<S> space_to_depth(Var<S>, int);                                             \
  template Var<S> masked_loss(Var<S>, const Tensor<S>&, const Tensor<S>&, int);
M2M_INSTANTIATE_OPS(float)
M2M_INSTANTIATE_OPS(double)
#undef M2M_INSTANTIATE_OPS

}  // namespace m2m
