#include "geofuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "geofuse/common.hpp"
#include "geofuse/threading.hpp"

namespace geofuse {
namespace ops {

namespace {

// Insertion sort for the tiny per-voxel gather buffers (<= views entries).
inline void sort_small(double* v, int m) {
  for (int i = 1; i < m; ++i) {
    double x = v[i];
    int j = i - 1;
    while (j >= 0 && v[j] > x) {
      v[j + 1] = v[j];
      --j;
    }
    v[j + 1] = x;
  }
}

// Ascending-order sum. Summands are sorted by value first, so the result
// depends only on the multiset of contributions, never on their order of
// arrival; this is what makes view-permutation equivariance bit-exact.
inline double sorted_sum(double* v, int m) {
  sort_small(v, m);
  double acc = 0.0;
  for (int i = 0; i < m; ++i) acc += v[i];
  return acc;
}

inline int64_t rows_of(const Tensor& x) {
  return x.numel() / x.shape().back();
}

constexpr int kMaxViews = 64;

}  // namespace

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  require(x.shape().size() >= 1 && W.shape().size() == 2 && b.shape().size() == 1,
          "linear: bad ranks");
  const int64_t cin = x.shape().back();
  const int64_t cout = W.dim(0);
  require(W.dim(1) == cin, "linear: weight shape " + shape_str(W.shape()) +
                               " does not match input " + shape_str(x.shape()));
  require(b.dim(0) == cout, "linear: bias shape mismatch");

  const int64_t rows = rows_of(x);
  Shape out_shape = x.shape();
  out_shape.back() = cout;
  std::vector<double> y(rows * cout);
  {
    const double* xv = x.values().data();
    const double* wv = W.values().data();
    const double* bv = b.values().data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const double* xr = xv + r * cin;
        double* yr = y.data() + r * cout;
        for (int64_t o = 0; o < cout; ++o) {
          const double* wr = wv + o * cin;
          double acc = bv[o];
          for (int64_t i = 0; i < cin; ++i) acc += xr[i] * wr[i];
          yr[o] = acc;
        }
      }
    });
  }

  return Tensor::make_op(std::move(out_shape), std::move(y), {x, W, b},
                         [rows, cin, cout](TensorNode& self) {
                           auto& X = *self.parents[0];
                           auto& Wn = *self.parents[1];
                           auto& B = *self.parents[2];
                           const double* gy = self.grad.data();
                           if (X.requires_grad) {
                             double* gx = X.grad.data();
                             const double* wv = Wn.value.data();
                             parallel_for(rows, [&](int64_t r0, int64_t r1) {
                               for (int64_t r = r0; r < r1; ++r) {
                                 const double* gyr = gy + r * cout;
                                 double* gxr = gx + r * cin;
                                 for (int64_t o = 0; o < cout; ++o) {
                                   const double c = gyr[o];
                                   if (c == 0.0) continue;
                                   const double* wr = wv + o * cin;
                                   for (int64_t i = 0; i < cin; ++i) gxr[i] += c * wr[i];
                                 }
                               }
                             });
                           }
                           if (Wn.requires_grad) {
                             double* gw = Wn.grad.data();
                             const double* xv = X.value.data();
                             parallel_for(cout, [&](int64_t o0, int64_t o1) {
                               for (int64_t o = o0; o < o1; ++o) {
                                 double* gwr = gw + o * cin;
                                 for (int64_t r = 0; r < rows; ++r) {
                                   const double c = gy[r * cout + o];
                                   if (c == 0.0) continue;
                                   const double* xr = xv + r * cin;
                                   for (int64_t i = 0; i < cin; ++i) gwr[i] += c * xr[i];
                                 }
                               }
                             });
                           }
                           if (B.requires_grad) {
                             double* gb = B.grad.data();
                             for (int64_t r = 0; r < rows; ++r)
                               for (int64_t o = 0; o < cout; ++o) gb[o] += gy[r * cout + o];
                           }
                         });
}

Tensor relu(const Tensor& x) {
  std::vector<double> y(x.values());
  for (auto& v : y) v = v > 0.0 ? v : 0.0;
  return Tensor::make_op(x.shape(), std::move(y), {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    const double* xv = X.value.data();
    double* gx = X.grad.data();
    for (int64_t i = 0; i < n; ++i)
      if (xv[i] > 0.0) gx[i] += gy[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> y(x.values());
  for (auto& v : y) v = 1.0 / (1.0 + std::exp(-v));
  return Tensor::make_op(x.shape(), std::move(y), {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    const double* yv = self.value.data();
    double* gx = X.grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  });
}

Tensor tanh_op(const Tensor& x) {
  std::vector<double> y(x.values());
  for (auto& v : y) v = std::tanh(v);
  return Tensor::make_op(x.shape(), std::move(y), {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    const double* yv = self.value.data();
    double* gx = X.grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
  });
}

Tensor symlog(const Tensor& x) {
  std::vector<double> y(x.values());
  for (auto& v : y) v = std::copysign(std::log1p(std::abs(v)), v);
  return Tensor::make_op(x.shape(), std::move(y), {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    const double* xv = X.value.data();
    double* gx = X.grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] / (1.0 + std::abs(xv[i]));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(shape_equal(a.shape(), b.shape()), "add: shape mismatch");
  std::vector<double> y(a.values());
  const double* bv = b.values().data();
  for (size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return Tensor::make_op(a.shape(), std::move(y), {a, b}, [](TensorNode& self) {
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    for (int k = 0; k < 2; ++k) {
      auto& P = *self.parents[k];
      if (!P.requires_grad) continue;
      double* gp = P.grad.data();
      for (int64_t i = 0; i < n; ++i) gp[i] += gy[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(shape_equal(a.shape(), b.shape()), "sub: shape mismatch");
  std::vector<double> y(a.values());
  const double* bv = b.values().data();
  for (size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return Tensor::make_op(a.shape(), std::move(y), {a, b}, [](TensorNode& self) {
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    auto& A = *self.parents[0];
    if (A.requires_grad) {
      double* ga = A.grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    auto& B = *self.parents[1];
    if (B.requires_grad) {
      double* gb = B.grad.data();
      for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(shape_equal(a.shape(), b.shape()), "mul: shape mismatch");
  std::vector<double> y(a.values());
  const double* bv = b.values().data();
  for (size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return Tensor::make_op(a.shape(), std::move(y), {a, b}, [](TensorNode& self) {
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    auto& A = *self.parents[0];
    auto& B = *self.parents[1];
    if (A.requires_grad) {
      double* ga = A.grad.data();
      const double* bv2 = B.value.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * bv2[i];
    }
    if (B.requires_grad) {
      double* gb = B.grad.data();
      const double* av = A.value.data();
      for (int64_t i = 0; i < n; ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> y(x.values());
  for (auto& v : y) v *= c;
  return Tensor::make_op(x.shape(), std::move(y), {x}, [c](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const int64_t n = static_cast<int64_t>(self.value.size());
    const double* gy = self.grad.data();
    double* gx = X.grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * c;
  });
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_last: empty input list");
  Shape base = xs[0].shape();
  int64_t ctotal = 0;
  for (const auto& x : xs) {
    require(x.shape().size() == base.size(), "concat_last: rank mismatch");
    for (size_t d = 0; d + 1 < base.size(); ++d)
      require(x.shape()[d] == base[d], "concat_last: leading dim mismatch");
    ctotal += x.shape().back();
  }
  const int64_t rows = rows_of(xs[0]);
  Shape out_shape = base;
  out_shape.back() = ctotal;
  std::vector<double> y(rows * ctotal);
  std::vector<int64_t> widths, offsets;
  int64_t off = 0;
  for (const auto& x : xs) {
    widths.push_back(x.shape().back());
    offsets.push_back(off);
    off += x.shape().back();
  }
  for (size_t k = 0; k < xs.size(); ++k) {
    const double* xv = xs[k].values().data();
    const int64_t w = widths[k], o = offsets[k];
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r)
        std::memcpy(y.data() + r * ctotal + o, xv + r * w, w * sizeof(double));
    });
  }
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return Tensor::make_op(std::move(out_shape), std::move(y), std::move(parents),
                         [rows, ctotal, widths, offsets](TensorNode& self) {
                           const double* gy = self.grad.data();
                           for (size_t k = 0; k < self.parents.size(); ++k) {
                             auto& P = *self.parents[k];
                             if (!P.requires_grad) continue;
                             double* gp = P.grad.data();
                             const int64_t w = widths[k], o = offsets[k];
                             parallel_for(rows, [&](int64_t r0, int64_t r1) {
                               for (int64_t r = r0; r < r1; ++r) {
                                 const double* g = gy + r * ctotal + o;
                                 double* dst = gp + r * w;
                                 for (int64_t i = 0; i < w; ++i) dst[i] += g[i];
                               }
                             });
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int64_t c = x.shape().back();
  require(gamma.numel() == c && beta.numel() == c, "layer_norm: scale/shift size mismatch");
  const int64_t rows = rows_of(x);
  std::vector<double> y(x.numel());
  std::vector<double> inv_std(rows), mean(rows);
  {
    const double* xv = x.values().data();
    const double* gv = gamma.values().data();
    const double* bv = beta.values().data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const double* xr = xv + r * c;
        double mu = 0.0;
        for (int64_t i = 0; i < c; ++i) mu += xr[i];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          const double d = xr[i] - mu;
          var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = inv;
        double* yr = y.data() + r * c;
        for (int64_t i = 0; i < c; ++i) yr[i] = (xr[i] - mu) * inv * gv[i] + bv[i];
      }
    });
  }
  return Tensor::make_op(
      x.shape(), std::move(y), {x, gamma, beta},
      [rows, c, mean = std::move(mean), inv_std = std::move(inv_std)](TensorNode& self) {
        auto& X = *self.parents[0];
        auto& G = *self.parents[1];
        auto& B = *self.parents[2];
        const double* gy = self.grad.data();
        const double* xv = X.value.data();
        const double* gv = G.value.data();
        if (X.requires_grad) {
          double* gx = X.grad.data();
          parallel_for(rows, [&](int64_t r0, int64_t r1) {
            for (int64_t r = r0; r < r1; ++r) {
              const double* xr = xv + r * c;
              const double* gyr = gy + r * c;
              const double inv = inv_std[r], mu = mean[r];
              double sum_g = 0.0, sum_gxh = 0.0;
              for (int64_t i = 0; i < c; ++i) {
                const double xh = (xr[i] - mu) * inv;
                const double g = gyr[i] * gv[i];
                sum_g += g;
                sum_gxh += g * xh;
              }
              const double cinv = 1.0 / static_cast<double>(c);
              double* gxr = gx + r * c;
              for (int64_t i = 0; i < c; ++i) {
                const double xh = (xr[i] - mu) * inv;
                const double g = gyr[i] * gv[i];
                gxr[i] += inv * (g - sum_g * cinv - xh * sum_gxh * cinv);
              }
            }
          });
        }
        if (G.requires_grad || B.requires_grad) {
          double* gg = G.requires_grad ? G.grad.data() : nullptr;
          double* gb = B.requires_grad ? B.grad.data() : nullptr;
          for (int64_t r = 0; r < rows; ++r) {
            const double* xr = xv + r * c;
            const double* gyr = gy + r * c;
            const double inv = inv_std[r], mu = mean[r];
            for (int64_t i = 0; i < c; ++i) {
              if (gg) gg[i] += gyr[i] * (xr[i] - mu) * inv;
              if (gb) gb[i] += gyr[i];
            }
          }
        }
      });
}

Tensor softmax_last(const Tensor& x, const std::vector<double>* additive_mask) {
  const int64_t c = x.shape().back();
  const int64_t rows = rows_of(x);
  if (additive_mask)
    require(static_cast<int64_t>(additive_mask->size()) == x.numel(),
            "softmax_last: mask size mismatch");
  std::vector<double> y(x.numel(), 0.0);
  {
    const double* xv = x.values().data();
    const double* mv = additive_mask ? additive_mask->data() : nullptr;
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const double* xr = xv + r * c;
        double* yr = y.data() + r * c;
        double m = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < c; ++i) {
          const double v = xr[i] + (mv ? mv[r * c + i] : 0.0);
          if (v > m) m = v;
        }
        if (!std::isfinite(m)) continue;  // fully masked row -> zeros
        double denom = 0.0;
        for (int64_t i = 0; i < c; ++i) {
          const double v = xr[i] + (mv ? mv[r * c + i] : 0.0);
          const double e = std::isfinite(v) ? std::exp(v - m) : 0.0;
          yr[i] = e;
          denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t i = 0; i < c; ++i) yr[i] *= inv;
      }
    });
  }
  return Tensor::make_op(x.shape(), std::move(y), {x}, [rows, c](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const double* gy = self.grad.data();
    const double* yv = self.value.data();
    double* gx = X.grad.data();
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const double* yr = yv + r * c;
        const double* gyr = gy + r * c;
        double dot = 0.0;
        for (int64_t i = 0; i < c; ++i) dot += gyr[i] * yr[i];
        double* gxr = gx + r * c;
        for (int64_t i = 0; i < c; ++i) gxr[i] += yr[i] * (gyr[i] - dot);
      }
    });
  });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return Tensor::make_op({1}, {acc}, {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const double g = self.grad[0];
    double* gx = X.grad.data();
    for (size_t i = 0; i < X.value.size(); ++i) gx[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  acc *= inv;
  return Tensor::make_op({1}, {acc}, {x}, [inv](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const double g = self.grad[0] * inv;
    double* gx = X.grad.data();
    for (size_t i = 0; i < X.value.size(); ++i) gx[i] += g;
  });
}

Tensor weighted_sum_scalars(const std::vector<std::pair<double, Tensor>>& terms) {
  require(!terms.empty(), "weighted_sum_scalars: empty");
  double acc = 0.0;
  std::vector<Tensor> parents;
  std::vector<double> coeffs;
  for (const auto& [c, t] : terms) {
    require(t.numel() == 1, "weighted_sum_scalars: non-scalar term");
    acc += c * t.scalar_value();
    parents.push_back(t);
    coeffs.push_back(c);
  }
  return Tensor::make_op({1}, {acc}, std::move(parents), [coeffs](TensorNode& self) {
    const double g = self.grad[0];
    for (size_t k = 0; k < self.parents.size(); ++k) {
      auto& P = *self.parents[k];
      if (P.requires_grad) P.grad[0] += g * coeffs[k];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape: element count mismatch");
  std::vector<double> y(x.values());
  return Tensor::make_op(std::move(shape), std::move(y), {x}, [](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    double* gx = X.grad.data();
    const double* gy = self.grad.data();
    for (size_t i = 0; i < X.value.size(); ++i) gx[i] += gy[i];
  });
}

Tensor mask_rows(const Tensor& x, const ViewMask& mask) {
  require(x.shape().size() == 3, "mask_rows: expected [T, N, C]");
  const int64_t T = x.dim(0), N = x.dim(1), C = x.dim(2);
  require(T == mask.views && N == mask.voxels, "mask_rows: mask size mismatch");
  std::vector<double> y(x.values());
  parallel_for(T * N, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i)
      if (!mask.valid[i]) std::memset(y.data() + i * C, 0, C * sizeof(double));
  });
  const std::vector<uint8_t> valid = mask.valid;
  return Tensor::make_op(x.shape(), std::move(y), {x}, [valid, T, N, C](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const double* gy = self.grad.data();
    double* gx = X.grad.data();
    parallel_for(T * N, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) {
        if (!valid[i]) continue;
        const double* g = gy + i * C;
        double* d = gx + i * C;
        for (int64_t cidx = 0; cidx < C; ++cidx) d[cidx] += g[cidx];
      }
    });
  });
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

Tensor attention_scores(const Tensor& q, const Tensor& k, int heads) {
  require(q.shape().size() == 3 && shape_equal(q.shape(), k.shape()),
          "attention_scores: expected matching [T, N, C]");
  const int64_t T = q.dim(0), N = q.dim(1), C = q.dim(2);
  require(heads > 0 && C % heads == 0, "attention_scores: channels not divisible by heads");
  const int64_t H = heads, Dh = C / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(Dh));

  std::vector<double> s(H * T * T * N);
  {
    const double* qv = q.values().data();
    const double* kv = k.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t i = 0; i < T; ++i) {
            const double* qr = qv + (i * N + n) * C + h * Dh;
            for (int64_t j = 0; j < T; ++j) {
              const double* kr = kv + (j * N + n) * C + h * Dh;
              double acc = 0.0;
              for (int64_t d = 0; d < Dh; ++d) acc += qr[d] * kr[d];
              s[((h * T + i) * T + j) * N + n] = acc * scl;
            }
          }
    });
  }
  return Tensor::make_op(
      {H, T, T, N}, std::move(s), {q, k}, [T, N, C, H, Dh, scl](TensorNode& self) {
        auto& Q = *self.parents[0];
        auto& K = *self.parents[1];
        const double* gs = self.grad.data();
        const double* qv = Q.value.data();
        const double* kv = K.value.data();
        double* gq = Q.requires_grad ? Q.grad.data() : nullptr;
        double* gk = K.requires_grad ? K.grad.data() : nullptr;
        parallel_for(N, [&](int64_t n0, int64_t n1) {
          for (int64_t n = n0; n < n1; ++n)
            for (int64_t h = 0; h < H; ++h)
              for (int64_t i = 0; i < T; ++i)
                for (int64_t j = 0; j < T; ++j) {
                  const double g = gs[((h * T + i) * T + j) * N + n] * scl;
                  if (g == 0.0) continue;
                  const int64_t qoff = (i * N + n) * C + h * Dh;
                  const int64_t koff = (j * N + n) * C + h * Dh;
                  if (gq)
                    for (int64_t d = 0; d < Dh; ++d) gq[qoff + d] += g * kv[koff + d];
                  if (gk)
                    for (int64_t d = 0; d < Dh; ++d) gk[koff + d] += g * qv[qoff + d];
                }
        });
      });
}

Tensor attention_softmax(const Tensor& scores, const ViewMask& mask) {
  require(scores.shape().size() == 4, "attention_softmax: expected [H, T, T, N]");
  const int64_t H = scores.dim(0), T = scores.dim(1), N = scores.dim(3);
  require(scores.dim(2) == T && mask.views == T && mask.voxels == N,
          "attention_softmax: shape/mask mismatch");
  require(T <= kMaxViews, "attention_softmax: too many views");

  std::vector<double> y(scores.numel(), 0.0);
  {
    const double* sv = scores.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      double buf[kMaxViews];
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t i = 0; i < T; ++i) {
            if (!mask.at(i, n)) continue;  // invalid query -> zero row
            int m = 0;
            for (int64_t j = 0; j < T; ++j)
              if (mask.at(j, n)) buf[m++] = sv[((h * T + i) * T + j) * N + n];
            if (m == 0) continue;
            sort_small(buf, m);
            const double mx = buf[m - 1];
            double denom = 0.0;
            for (int t = 0; t < m; ++t) denom += std::exp(buf[t] - mx);
            const double inv = 1.0 / denom;
            for (int64_t j = 0; j < T; ++j)
              if (mask.at(j, n)) {
                const int64_t idx = ((h * T + i) * T + j) * N + n;
                y[idx] = std::exp(sv[idx] - mx) * inv;
              }
          }
    });
  }
  const std::vector<uint8_t> valid = mask.valid;
  return Tensor::make_op(scores.shape(), std::move(y), {scores},
                         [H, T, N, valid](TensorNode& self) {
                           auto& S = *self.parents[0];
                           if (!S.requires_grad) return;
                           const double* gy = self.grad.data();
                           const double* yv = self.value.data();
                           double* gs = S.grad.data();
                           parallel_for(N, [&](int64_t n0, int64_t n1) {
                             for (int64_t n = n0; n < n1; ++n)
                               for (int64_t h = 0; h < H; ++h)
                                 for (int64_t i = 0; i < T; ++i) {
                                   if (!valid[i * N + n]) continue;
                                   double dot = 0.0;
                                   for (int64_t j = 0; j < T; ++j) {
                                     const int64_t idx = ((h * T + i) * T + j) * N + n;
                                     dot += gy[idx] * yv[idx];
                                   }
                                   for (int64_t j = 0; j < T; ++j) {
                                     if (!valid[j * N + n]) continue;
                                     const int64_t idx = ((h * T + i) * T + j) * N + n;
                                     gs[idx] += yv[idx] * (gy[idx] - dot);
                                   }
                                 }
                           });
                         });
}

Tensor attention_apply(const Tensor& weights, const Tensor& v, int heads) {
  require(weights.shape().size() == 4 && v.shape().size() == 3,
          "attention_apply: expected [H, T, T, N] and [T, N, C]");
  const int64_t H = weights.dim(0), T = weights.dim(1), N = weights.dim(3);
  const int64_t C = v.dim(2);
  require(v.dim(0) == T && v.dim(1) == N && H == heads && C % H == 0,
          "attention_apply: shape mismatch");
  require(T <= kMaxViews, "attention_apply: too many views");
  const int64_t Dh = C / H;

  std::vector<double> y(T * N * C);
  {
    const double* wv = weights.values().data();
    const double* vv = v.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      double buf[kMaxViews];
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t i = 0; i < T; ++i) {
          double* yr = y.data() + (i * N + n) * C;
          for (int64_t c = 0; c < C; ++c) {
            const int64_t h = c / Dh;
            int m = 0;
            for (int64_t j = 0; j < T; ++j) {
              const double w = wv[((h * T + i) * T + j) * N + n];
              if (w != 0.0) buf[m++] = w * vv[(j * N + n) * C + c];
            }
            yr[c] = sorted_sum(buf, m);
          }
        }
    });
  }
  return Tensor::make_op(
      {T, N, C}, std::move(y), {weights, v}, [H, T, N, C, Dh](TensorNode& self) {
        auto& W = *self.parents[0];
        auto& V = *self.parents[1];
        const double* gy = self.grad.data();
        const double* wv = W.value.data();
        const double* vv = V.value.data();
        double* gw = W.requires_grad ? W.grad.data() : nullptr;
        double* gv = V.requires_grad ? V.grad.data() : nullptr;
        parallel_for(N, [&](int64_t n0, int64_t n1) {
          for (int64_t n = n0; n < n1; ++n) {
            if (gw) {
              for (int64_t h = 0; h < H; ++h)
                for (int64_t i = 0; i < T; ++i)
                  for (int64_t j = 0; j < T; ++j) {
                    const double* gyr = gy + (i * N + n) * C + h * Dh;
                    const double* vr = vv + (j * N + n) * C + h * Dh;
                    double acc = 0.0;
                    for (int64_t d = 0; d < Dh; ++d) acc += gyr[d] * vr[d];
                    gw[((h * T + i) * T + j) * N + n] += acc;
                  }
            }
            if (gv) {
              for (int64_t j = 0; j < T; ++j) {
                double* gvr = gv + (j * N + n) * C;
                for (int64_t i = 0; i < T; ++i) {
                  const double* gyr = gy + (i * N + n) * C;
                  for (int64_t c = 0; c < C; ++c) {
                    const double w = wv[((c / Dh * T + i) * T + j) * N + n];
                    if (w != 0.0) gvr[c] += w * gyr[c];
                  }
                }
              }
            }
          }
        });
      });
}

Tensor head_average(const Tensor& weights) {
  require(weights.shape().size() == 4, "head_average: expected [H, T, T, N]");
  const int64_t H = weights.dim(0);
  const int64_t rest = weights.numel() / H;
  std::vector<double> y(rest, 0.0);
  const double inv = 1.0 / static_cast<double>(H);
  const double* wv = weights.values().data();
  parallel_for(rest, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      double acc = 0.0;
      for (int64_t h = 0; h < H; ++h) acc += wv[h * rest + i];
      y[i] = acc * inv;
    }
  });
  Shape out{weights.dim(1), weights.dim(2), weights.dim(3)};
  return Tensor::make_op(std::move(out), std::move(y), {weights},
                         [H, rest, inv](TensorNode& self) {
                           auto& W = *self.parents[0];
                           if (!W.requires_grad) return;
                           const double* gy = self.grad.data();
                           double* gw = W.grad.data();
                           parallel_for(rest, [&](int64_t i0, int64_t i1) {
                             for (int64_t i = i0; i < i1; ++i) {
                               const double g = gy[i] * inv;
                               for (int64_t h = 0; h < H; ++h) gw[h * rest + i] += g;
                             }
                           });
                         });
}

namespace {

// Shared mean/std gather over valid attention-row entries. Identical values
// short-circuit so per-construction-uniform rows report exactly zero spread.
struct RowStats {
  double mean = 0.0;
  double stddev = 0.0;
  int count = 0;
};

inline RowStats row_stats_of(const double* A, const std::vector<uint8_t>& valid, int64_t T,
                             int64_t N, int64_t i, int64_t n) {
  RowStats r;
  if (!valid[i * N + n]) return r;
  double buf[kMaxViews];
  int m = 0;
  for (int64_t j = 0; j < T; ++j)
    if (valid[j * N + n]) buf[m++] = A[(i * T + j) * N + n];
  if (m == 0) return r;
  sort_small(buf, m);
  r.count = m;
  if (buf[0] == buf[m - 1]) {  // all equal
    r.mean = buf[0];
    r.stddev = 0.0;
    return r;
  }
  double acc = 0.0;
  for (int t = 0; t < m; ++t) acc += buf[t];
  r.mean = acc / m;
  double dev[kMaxViews];
  for (int t = 0; t < m; ++t) {
    const double d = buf[t] - r.mean;
    dev[t] = d * d;
  }
  r.stddev = std::sqrt(sorted_sum(dev, m) / m);
  return r;
}

}  // namespace

Tensor attention_row_mean(const Tensor& A, const ViewMask& mask) {
  require(A.shape().size() == 3 && A.dim(0) == A.dim(1), "attention_row_mean: expected [T, T, N]");
  const int64_t T = A.dim(0), N = A.dim(2);
  require(mask.views == T && mask.voxels == N, "attention_row_mean: mask mismatch");
  std::vector<double> y(T * N, 0.0);
  const double* av = A.values().data();
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n)
      for (int64_t i = 0; i < T; ++i) y[i * N + n] = row_stats_of(av, mask.valid, T, N, i, n).mean;
  });
  const std::vector<uint8_t> valid = mask.valid;
  return Tensor::make_op({T, N}, std::move(y), {A}, [T, N, valid](TensorNode& self) {
    auto& An = *self.parents[0];
    if (!An.requires_grad) return;
    const double* gy = self.grad.data();
    double* ga = An.grad.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t i = 0; i < T; ++i) {
          if (!valid[i * N + n]) continue;
          const double g = gy[i * N + n];
          if (g == 0.0) continue;
          int m = 0;
          for (int64_t j = 0; j < T; ++j)
            if (valid[j * N + n]) ++m;
          const double ginv = g / m;
          for (int64_t j = 0; j < T; ++j)
            if (valid[j * N + n]) ga[(i * T + j) * N + n] += ginv;
        }
    });
  });
}

Tensor attention_row_std(const Tensor& A, const ViewMask& mask) {
  require(A.shape().size() == 3 && A.dim(0) == A.dim(1), "attention_row_std: expected [T, T, N]");
  const int64_t T = A.dim(0), N = A.dim(2);
  require(mask.views == T && mask.voxels == N, "attention_row_std: mask mismatch");
  std::vector<double> y(T * N, 0.0);
  const double* av = A.values().data();
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n)
      for (int64_t i = 0; i < T; ++i)
        y[i * N + n] = row_stats_of(av, mask.valid, T, N, i, n).stddev;
  });
  const std::vector<uint8_t> valid = mask.valid;
  return Tensor::make_op({T, N}, std::move(y), {A}, [T, N, valid](TensorNode& self) {
    auto& An = *self.parents[0];
    if (!An.requires_grad) return;
    const double* gy = self.grad.data();
    const double* av2 = An.value.data();
    const double* yv = self.value.data();
    double* ga = An.grad.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t i = 0; i < T; ++i) {
          if (!valid[i * N + n]) continue;
          const double g = gy[i * N + n];
          const double sd = yv[i * N + n];
          if (g == 0.0 || sd < 1e-12) continue;  // flat rows: subgradient 0
          const RowStats st = row_stats_of(av2, valid, T, N, i, n);
          const double coeff = g / (st.count * sd);
          for (int64_t j = 0; j < T; ++j)
            if (valid[j * N + n])
              ga[(i * T + j) * N + n] += coeff * (av2[(i * T + j) * N + n] - st.mean);
        }
    });
  });
}

// ---------------------------------------------------------------------------
// fusion
// ---------------------------------------------------------------------------

Tensor assemble_fusion_features(const Tensor& attn_mean, const Tensor& attn_std,
                                const std::vector<double>& pose_mean,
                                const std::vector<double>& pose_std, const Tensor& occ,
                                const std::vector<int>& slot_view) {
  require(attn_mean.shape().size() == 2, "assemble_fusion_features: attn_mean must be [T, N]");
  const int64_t T = attn_mean.dim(0), N = attn_mean.dim(1);
  require(shape_equal(attn_mean.shape(), attn_std.shape()) &&
              shape_equal(attn_mean.shape(), occ.shape()),
          "assemble_fusion_features: shape mismatch");
  require(static_cast<int64_t>(pose_mean.size()) == 3 * T &&
              static_cast<int64_t>(pose_std.size()) == 3 * T,
          "assemble_fusion_features: pose stats must have 3T entries");
  require(static_cast<int64_t>(slot_view.size()) == T,
          "assemble_fusion_features: slot order must have T entries");
  const int64_t C = 9 * T;
  std::vector<double> y(N * C);
  {
    const double* mu = attn_mean.values().data();
    const double* sd = attn_std.values().data();
    const double* oc = occ.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n) {
        double* r = y.data() + n * C;
        for (int64_t s = 0; s < T; ++s) {
          const int64_t v = slot_view[s];
          r[s] = mu[v * N + n];
          r[T + s] = sd[v * N + n];
          r[8 * T + s] = oc[v * N + n];
        }
        for (int64_t t = 0; t < 3 * T; ++t) r[2 * T + t] = pose_mean[t];
        for (int64_t t = 0; t < 3 * T; ++t) r[5 * T + t] = pose_std[t];
      }
    });
  }
  std::vector<int> order = slot_view;
  return Tensor::make_op({N, C}, std::move(y), {attn_mean, attn_std, occ},
                         [T, N, C, order = std::move(order)](TensorNode& self) {
                           const double* gy = self.grad.data();
                           auto scatter = [&](TensorNode& P, int64_t offset) {
                             if (!P.requires_grad) return;
                             double* gp = P.grad.data();
                             parallel_for(N, [&](int64_t n0, int64_t n1) {
                               for (int64_t n = n0; n < n1; ++n)
                                 for (int64_t s = 0; s < T; ++s)
                                   gp[order[s] * N + n] += gy[n * C + offset + s];
                             });
                           };
                           scatter(*self.parents[0], 0);
                           scatter(*self.parents[1], T);
                           scatter(*self.parents[2], 8 * T);
                         });
}

Tensor scatter_columns(const Tensor& x, const std::vector<int>& view_of_col) {
  require(x.shape().size() == 2, "scatter_columns: expected [N, T]");
  const int64_t N = x.dim(0), T = x.dim(1);
  require(static_cast<int64_t>(view_of_col.size()) == T, "scatter_columns: bad permutation");
  std::vector<double> y(N * T);
  const double* xv = x.values().data();
  parallel_for(N, [&](int64_t n0, int64_t n1) {
    for (int64_t n = n0; n < n1; ++n)
      for (int64_t s = 0; s < T; ++s) y[n * T + view_of_col[s]] = xv[n * T + s];
  });
  std::vector<int> order = view_of_col;
  return Tensor::make_op({N, T}, std::move(y), {x}, [N, T, order = std::move(order)](TensorNode& self) {
    auto& X = *self.parents[0];
    if (!X.requires_grad) return;
    const double* gy = self.grad.data();
    double* gx = X.grad.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t s = 0; s < T; ++s) gx[n * T + s] += gy[n * T + order[s]];
    });
  });
}

Tensor view_softmax(const Tensor& logits, const ViewMask& mask) {
  require(logits.shape().size() == 2, "view_softmax: expected [N, T]");
  const int64_t N = logits.dim(0), T = logits.dim(1);
  require(mask.views == T && mask.voxels == N, "view_softmax: mask mismatch");
  require(T <= kMaxViews, "view_softmax: too many views");
  std::vector<double> y(N * T, 0.0);
  {
    const double* lv = logits.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      double buf[kMaxViews];
      for (int64_t n = n0; n < n1; ++n) {
        int m = 0;
        for (int64_t t = 0; t < T; ++t)
          if (mask.at(t, n)) buf[m++] = lv[n * T + t];
        if (m == 0) continue;
        sort_small(buf, m);
        const double mx = buf[m - 1];
        double denom = 0.0;
        for (int t = 0; t < m; ++t) denom += std::exp(buf[t] - mx);
        const double inv = 1.0 / denom;
        for (int64_t t = 0; t < T; ++t)
          if (mask.at(t, n)) y[n * T + t] = std::exp(lv[n * T + t] - mx) * inv;
      }
    });
  }
  const std::vector<uint8_t> valid = mask.valid;
  return Tensor::make_op({N, T}, std::move(y), {logits}, [N, T, valid](TensorNode& self) {
    auto& L = *self.parents[0];
    if (!L.requires_grad) return;
    const double* gy = self.grad.data();
    const double* yv = self.value.data();
    double* gl = L.grad.data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n) {
        double dot = 0.0;
        for (int64_t t = 0; t < T; ++t) dot += gy[n * T + t] * yv[n * T + t];
        for (int64_t t = 0; t < T; ++t) {
          if (!valid[t * N + n]) continue;
          gl[n * T + t] += yv[n * T + t] * (gy[n * T + t] - dot);
        }
      }
    });
  });
}

Tensor weighted_view_sum(const Tensor& w, const Tensor& x) {
  require(w.shape().size() == 2 && x.shape().size() == 3, "weighted_view_sum: bad ranks");
  const int64_t N = w.dim(0), T = w.dim(1), C = x.dim(2);
  require(x.dim(0) == T && x.dim(1) == N, "weighted_view_sum: shape mismatch");
  require(T <= kMaxViews, "weighted_view_sum: too many views");
  std::vector<double> y(N * C);
  {
    const double* wv = w.values().data();
    const double* xv = x.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      double buf[kMaxViews];
      for (int64_t n = n0; n < n1; ++n) {
        double* yr = y.data() + n * C;
        for (int64_t c = 0; c < C; ++c) {
          int m = 0;
          for (int64_t t = 0; t < T; ++t) {
            const double wt = wv[n * T + t];
            if (wt != 0.0) buf[m++] = wt * xv[(t * N + n) * C + c];
          }
          yr[c] = sorted_sum(buf, m);
        }
      }
    });
  }
  return Tensor::make_op({N, C}, std::move(y), {w, x}, [N, T, C](TensorNode& self) {
    auto& W = *self.parents[0];
    auto& X = *self.parents[1];
    const double* gy = self.grad.data();
    const double* wv = W.value.data();
    const double* xv = X.value.data();
    double* gw = W.requires_grad ? W.grad.data() : nullptr;
    double* gx = X.requires_grad ? X.grad.data() : nullptr;
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n) {
        const double* gyr = gy + n * C;
        for (int64_t t = 0; t < T; ++t) {
          const double* xr = xv + (t * N + n) * C;
          if (gw) {
            double acc = 0.0;
            for (int64_t c = 0; c < C; ++c) acc += gyr[c] * xr[c];
            gw[n * T + t] += acc;
          }
          if (gx) {
            const double wt = wv[n * T + t];
            if (wt != 0.0) {
              double* gxr = gx + (t * N + n) * C;
              for (int64_t c = 0; c < C; ++c) gxr[c] += wt * gyr[c];
            }
          }
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// spatial
// ---------------------------------------------------------------------------

namespace {

inline int64_t clamp_idx(int64_t v, int64_t n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// Clamped source index for each of the 27 taps around voxel p.
inline void tap_sources(int64_t x, int64_t y, int64_t z, const Dims3& d, int64_t* src) {
  int t = 0;
  for (int64_t dz = -1; dz <= 1; ++dz) {
    const int64_t zz = clamp_idx(z + dz, d.nz);
    for (int64_t dy = -1; dy <= 1; ++dy) {
      const int64_t yy = clamp_idx(y + dy, d.ny);
      const int64_t base = (zz * d.ny + yy) * d.nx;
      for (int64_t dx = -1; dx <= 1; ++dx, ++t) src[t] = base + clamp_idx(x + dx, d.nx);
    }
  }
}

}  // namespace

Tensor conv3x3x3(const Tensor& x, const Tensor& W, const Tensor& b, Dims3 dims) {
  require(x.shape().size() == 2, "conv3x3x3: expected [N, C_in]");
  const int64_t N = x.dim(0), cin = x.dim(1);
  require(N == dims.count(), "conv3x3x3: dims do not match voxel count");
  require(W.shape().size() == 2 && W.dim(1) == 27 * cin, "conv3x3x3: weight must be [C_out, 27*C_in]");
  const int64_t cout = W.dim(0);
  require(b.numel() == cout, "conv3x3x3: bias size mismatch");

  std::vector<double> y(N * cout);
  {
    const double* xv = x.values().data();
    const double* wv = W.values().data();
    const double* bv = b.values().data();
    parallel_for(dims.nz, [&](int64_t z0, int64_t z1) {
      int64_t src[27];
      for (int64_t z = z0; z < z1; ++z)
        for (int64_t yy = 0; yy < dims.ny; ++yy)
          for (int64_t xx = 0; xx < dims.nx; ++xx) {
            const int64_t p = (z * dims.ny + yy) * dims.nx + xx;
            tap_sources(xx, yy, z, dims, src);
            double* yr = y.data() + p * cout;
            for (int64_t o = 0; o < cout; ++o) {
              const double* wr = wv + o * 27 * cin;
              double acc = bv[o];
              for (int t = 0; t < 27; ++t) {
                const double* xr = xv + src[t] * cin;
                const double* wt = wr + t * cin;
                for (int64_t ci = 0; ci < cin; ++ci) acc += wt[ci] * xr[ci];
              }
              yr[o] = acc;
            }
          }
    });
  }
  return Tensor::make_op(
      {N, cout}, std::move(y), {x, W, b}, [N, cin, cout, dims](TensorNode& self) {
        auto& X = *self.parents[0];
        auto& Wn = *self.parents[1];
        auto& B = *self.parents[2];
        const double* gy = self.grad.data();
        const double* xv = X.value.data();
        const double* wv = Wn.value.data();
        if (B.requires_grad) {
          double* gb = B.grad.data();
          for (int64_t p = 0; p < N; ++p)
            for (int64_t o = 0; o < cout; ++o) gb[o] += gy[p * cout + o];
        }
        if (Wn.requires_grad) {
          double* gw = Wn.grad.data();
          parallel_for(cout, [&](int64_t o0, int64_t o1) {
            int64_t src[27];
            for (int64_t z = 0; z < dims.nz; ++z)
              for (int64_t yy = 0; yy < dims.ny; ++yy)
                for (int64_t xx = 0; xx < dims.nx; ++xx) {
                  const int64_t p = (z * dims.ny + yy) * dims.nx + xx;
                  tap_sources(xx, yy, z, dims, src);
                  for (int64_t o = o0; o < o1; ++o) {
                    const double g = gy[p * cout + o];
                    if (g == 0.0) continue;
                    double* gwr = gw + o * 27 * cin;
                    for (int t = 0; t < 27; ++t) {
                      const double* xr = xv + src[t] * cin;
                      double* gwt = gwr + t * cin;
                      for (int64_t ci = 0; ci < cin; ++ci) gwt[ci] += g * xr[ci];
                    }
                  }
                }
          });
        }
        if (X.requires_grad) {
          // Scatter into gx by z-slabs of fixed height, even slabs then odd,
          // so the accumulation order is independent of the thread budget.
          double* gx = X.grad.data();
          const int64_t slab = 4;
          const int64_t nslabs = (dims.nz + slab - 1) / slab;
          for (int phase = 0; phase < 2; ++phase) {
            const int64_t pslabs = (nslabs + 1 - phase) / 2;
            parallel_for(pslabs, [&](int64_t s0, int64_t s1) {
              int64_t src[27];
              for (int64_t s = s0; s < s1; ++s) {
                const int64_t k = 2 * s + phase;
                const int64_t zlo = k * slab;
                const int64_t zhi = std::min(dims.nz, zlo + slab);
                for (int64_t z = zlo; z < zhi; ++z)
                  for (int64_t yy = 0; yy < dims.ny; ++yy)
                    for (int64_t xx = 0; xx < dims.nx; ++xx) {
                      const int64_t p = (z * dims.ny + yy) * dims.nx + xx;
                      tap_sources(xx, yy, z, dims, src);
                      const double* gyr = gy + p * cout;
                      for (int64_t o = 0; o < cout; ++o) {
                        const double g = gyr[o];
                        if (g == 0.0) continue;
                        const double* wr = wv + o * 27 * cin;
                        for (int t = 0; t < 27; ++t) {
                          double* gxr = gx + src[t] * cin;
                          const double* wt = wr + t * cin;
                          for (int64_t ci = 0; ci < cin; ++ci) gxr[ci] += g * wt[ci];
                        }
                      }
                    }
              }
            });
          }
        }
      });
}

Tensor gather_bilinear(const Tensor& image, const BilinearPlan& plan) {
  require(image.shape().size() == 2, "gather_bilinear: expected [HW, C]");
  const int64_t C = image.dim(1);
  require(image.dim(0) == plan.source_size, "gather_bilinear: image size does not match plan");
  const int64_t N = plan.rows;
  std::vector<double> y(N * C, 0.0);
  {
    const double* iv = image.values().data();
    parallel_for(N, [&](int64_t n0, int64_t n1) {
      for (int64_t n = n0; n < n1; ++n) {
        if (!plan.valid[n]) continue;
        double* yr = y.data() + n * C;
        for (int k = 0; k < 4; ++k) {
          const double wk = plan.weight[n * 4 + k];
          if (wk == 0.0) continue;
          const double* src = iv + static_cast<int64_t>(plan.index[n * 4 + k]) * C;
          for (int64_t c = 0; c < C; ++c) yr[c] += wk * src[c];
        }
      }
    });
  }
  // The plan outlives the op (owned by the caller's scene cache); copy the
  // small parts backward needs.
  std::vector<int32_t> idx = plan.index;
  std::vector<double> wgt = plan.weight;
  std::vector<uint8_t> val = plan.valid;
  return Tensor::make_op({N, C}, std::move(y), {image},
                         [N, C, idx = std::move(idx), wgt = std::move(wgt),
                          val = std::move(val)](TensorNode& self) {
                           auto& I = *self.parents[0];
                           if (!I.requires_grad) return;
                           const double* gy = self.grad.data();
                           double* gi = I.grad.data();
                           // Channel-parallel: each channel column scatters
                           // independently in fixed row order.
                           parallel_for(C, [&](int64_t c0, int64_t c1) {
                             for (int64_t c = c0; c < c1; ++c)
                               for (int64_t n = 0; n < N; ++n) {
                                 if (!val[n]) continue;
                                 const double g = gy[n * C + c];
                                 if (g == 0.0) continue;
                                 for (int k = 0; k < 4; ++k)
                                   gi[static_cast<int64_t>(idx[n * 4 + k]) * C + c] +=
                                       wgt[n * 4 + k] * g;
                               }
                           });
                         });
}

Tensor stack_views(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "stack_views: empty");
  const Shape inner = xs[0].shape();
  require(inner.size() == 2, "stack_views: expected [N, C] slices");
  for (const auto& x : xs) require(shape_equal(x.shape(), inner), "stack_views: shape mismatch");
  const int64_t T = static_cast<int64_t>(xs.size());
  const int64_t sz = xs[0].numel();
  std::vector<double> y(T * sz);
  for (int64_t t = 0; t < T; ++t)
    std::memcpy(y.data() + t * sz, xs[t].values().data(), sz * sizeof(double));
  std::vector<Tensor> parents(xs.begin(), xs.end());
  return Tensor::make_op({T, inner[0], inner[1]}, std::move(y), std::move(parents),
                         [sz](TensorNode& self) {
                           const double* gy = self.grad.data();
                           for (size_t t = 0; t < self.parents.size(); ++t) {
                             auto& P = *self.parents[t];
                             if (!P.requires_grad) continue;
                             double* gp = P.grad.data();
                             const double* g = gy + t * sz;
                             for (int64_t i = 0; i < sz; ++i) gp[i] += g[i];
                           }
                         });
}

Tensor stencil_gradient(const Tensor& s, Dims3 dims, double scale) {
  require(s.shape().size() == 1 && s.dim(0) == dims.count(), "stencil_gradient: bad shape");
  const int64_t N = dims.count();
  std::vector<double> y(N * 3, 0.0);
  {
    const double* sv = s.values().data();
    const int64_t sx = 1, sy = dims.nx, sz = dims.nx * dims.ny;
    parallel_for(dims.nz, [&](int64_t z0, int64_t z1) {
      for (int64_t z = z0; z < z1; ++z) {
        if (z < 1 || z >= dims.nz - 1) continue;
        for (int64_t yy = 1; yy < dims.ny - 1; ++yy)
          for (int64_t xx = 1; xx < dims.nx - 1; ++xx) {
            const int64_t p = z * sz + yy * sy + xx;
            double gx = 0.0, gy2 = 0.0, gz = 0.0;
            for (int64_t a = -1; a <= 1; ++a)
              for (int64_t bb = -1; bb <= 1; ++bb) {
                gx += sv[p + sx + a * sy + bb * sz] - sv[p - sx + a * sy + bb * sz];
                gy2 += sv[p + sy + a * sx + bb * sz] - sv[p - sy + a * sx + bb * sz];
                gz += sv[p + sz + a * sx + bb * sy] - sv[p - sz + a * sx + bb * sy];
              }
            y[p * 3 + 0] = gx * scale;
            y[p * 3 + 1] = gy2 * scale;
            y[p * 3 + 2] = gz * scale;
          }
      }
    });
  }
  return Tensor::make_op({N, 3}, std::move(y), {s}, [dims, scale](TensorNode& self) {
    auto& S = *self.parents[0];
    if (!S.requires_grad) return;
    const double* gy = self.grad.data();
    double* gs = S.grad.data();
    const int64_t sx = 1, sy = dims.nx, sz = dims.nx * dims.ny;
    for (int64_t z = 1; z < dims.nz - 1; ++z)
      for (int64_t yy = 1; yy < dims.ny - 1; ++yy)
        for (int64_t xx = 1; xx < dims.nx - 1; ++xx) {
          const int64_t p = z * sz + yy * sy + xx;
          const double ggx = gy[p * 3 + 0] * scale;
          const double ggy = gy[p * 3 + 1] * scale;
          const double ggz = gy[p * 3 + 2] * scale;
          if (ggx == 0.0 && ggy == 0.0 && ggz == 0.0) continue;
          for (int64_t a = -1; a <= 1; ++a)
            for (int64_t bb = -1; bb <= 1; ++bb) {
              gs[p + sx + a * sy + bb * sz] += ggx;
              gs[p - sx + a * sy + bb * sz] -= ggx;
              gs[p + sy + a * sx + bb * sz] += ggy;
              gs[p - sy + a * sx + bb * sz] -= ggy;
              gs[p + sz + a * sx + bb * sy] += ggz;
              gs[p - sz + a * sx + bb * sy] -= ggz;
            }
        }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Tensor bce_mean(const Tensor& p, const std::vector<double>& target,
                const std::vector<uint8_t>& mask, double eps) {
  const int64_t n = p.numel();
  require(static_cast<int64_t>(target.size()) == n && static_cast<int64_t>(mask.size()) == n,
          "bce_mean: size mismatch");
  int64_t count = 0;
  double acc = 0.0;
  const double* pv = p.values().data();
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    const double pc = std::min(1.0 - eps, std::max(eps, pv[i]));
    acc -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
  }
  const double value = count > 0 ? acc / count : 0.0;
  std::vector<double> tgt = target;
  std::vector<uint8_t> msk = mask;
  return Tensor::make_op(
      {1}, {value}, {p},
      [n, count, eps, tgt = std::move(tgt), msk = std::move(msk)](TensorNode& self) {
        auto& P = *self.parents[0];
        if (!P.requires_grad || count == 0) return;
        const double g = self.grad[0] / count;
        const double* pv2 = P.value.data();
        double* gp = P.grad.data();
        for (int64_t i = 0; i < n; ++i) {
          if (!msk[i]) continue;
          const double praw = pv2[i];
          if (praw <= eps || praw >= 1.0 - eps) continue;  // clamp region: flat
          gp[i] += g * (-tgt[i] / praw + (1.0 - tgt[i]) / (1.0 - praw));
        }
      });
}

Tensor mae_masked(const Tensor& pred, const std::vector<double>& target,
                  const std::vector<uint8_t>& mask) {
  const int64_t n = pred.numel();
  require(static_cast<int64_t>(target.size()) == n && static_cast<int64_t>(mask.size()) == n,
          "mae_masked: size mismatch");
  int64_t count = 0;
  double acc = 0.0;
  const double* pv = pred.values().data();
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    acc += std::abs(pv[i] - target[i]);
  }
  const double value = count > 0 ? acc / count : 0.0;
  std::vector<double> tgt = target;
  std::vector<uint8_t> msk = mask;
  return Tensor::make_op({1}, {value}, {pred},
                         [n, count, tgt = std::move(tgt), msk = std::move(msk)](TensorNode& self) {
                           auto& P = *self.parents[0];
                           if (!P.requires_grad || count == 0) return;
                           const double g = self.grad[0] / count;
                           const double* pv2 = P.value.data();
                           double* gp = P.grad.data();
                           for (int64_t i = 0; i < n; ++i) {
                             if (!msk[i]) continue;
                             const double d = pv2[i] - tgt[i];
                             gp[i] += d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
                           }
                         });
}

Tensor cosine_direction_loss(const Tensor& g, const std::vector<double>& reference,
                             const std::vector<double>& w) {
  require(g.shape().size() == 2 && g.dim(1) == 3, "cosine_direction_loss: expected [N, 3]");
  const int64_t n = g.dim(0);
  require(static_cast<int64_t>(reference.size()) == 3 * n &&
              static_cast<int64_t>(w.size()) == n,
          "cosine_direction_loss: size mismatch");
  int64_t count = 0;
  double acc = 0.0;
  const double* gv = g.values().data();
  for (int64_t i = 0; i < n; ++i) {
    if (w[i] <= 0.0) continue;
    ++count;
    const double* gr = gv + i * 3;
    const double norm = std::sqrt(gr[0] * gr[0] + gr[1] * gr[1] + gr[2] * gr[2]);
    if (norm < 1e-300) continue;
    const double* nr = reference.data() + i * 3;
    acc += w[i] * (gr[0] * nr[0] + gr[1] * nr[1] + gr[2] * nr[2]) / norm;
  }
  const double value = count > 0 ? 1.0 - acc / count : 0.0;
  std::vector<double> ref = reference;
  std::vector<double> wc = w;
  return Tensor::make_op(
      {1}, {value}, {g},
      [n, count, ref = std::move(ref), wc = std::move(wc)](TensorNode& self) {
        auto& G = *self.parents[0];
        if (!G.requires_grad || count == 0) return;
        const double gout = self.grad[0];
        const double* gv2 = G.value.data();
        double* gg = G.grad.data();
        for (int64_t i = 0; i < n; ++i) {
          if (wc[i] <= 0.0) continue;
          const double* gr = gv2 + i * 3;
          const double norm2 = gr[0] * gr[0] + gr[1] * gr[1] + gr[2] * gr[2];
          const double norm = std::sqrt(norm2);
          if (norm < 1e-300) continue;
          const double* nr = ref.data() + i * 3;
          const double dot = gr[0] * nr[0] + gr[1] * nr[1] + gr[2] * nr[2];
          const double coeff = -gout * wc[i] / (count * norm);
          for (int k = 0; k < 3; ++k)
            gg[i * 3 + k] += coeff * (nr[k] - gr[k] * dot / norm2);
        }
      });
}

}  // namespace ops
}  // namespace geofuse
