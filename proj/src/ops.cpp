#include "emovad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace emovad::grad {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_rank2(const Dims& d, const char* op) {
  require(d.size() == 2, std::string(op) + " expects a rank-2 tensor, got " + dims_to_string(d));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul shape mismatch: " + dims_to_string(av.dims()) + " x " + dims_to_string(bv.dims()));
  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  MapR<T>(out.storage().data(), m, n).noalias() =
      CMapR<T>(av.storage().data(), m, k) * CMapR<T>(bv.storage().data(), k, n);
  return a.graph->emit(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& g, std::span<const T> go) {
    CMapR<T> G(go.data(), m, n);
    if (g.needs_grad(a)) {
      MapR<T>(g.adjoint(a).data(), m, k).noalias() +=
          G * CMapR<T>(g.value(b).storage().data(), k, n).transpose();
    }
    if (g.needs_grad(b)) {
      MapR<T>(g.adjoint(b).data(), k, n).noalias() +=
          CMapR<T>(g.value(a).storage().data(), m, k).transpose() * G;
    }
  });
}

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> bias) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = bias.value();
  require_rank2(xv.dims(), "conv1d input");
  require(wv.rank() == 3 && wv.dim(1) == xv.dim(0),
          "conv1d weight " + dims_to_string(wv.dims()) + " incompatible with input " +
              dims_to_string(xv.dims()));
  const auto c_in = xv.dim(0), t_len = xv.dim(1), c_out = wv.dim(0), k = wv.dim(2);
  if (k % 2 == 0) throw ConfigError("conv1d kernel size must be odd, got " + std::to_string(k));
  require(bv.rank() == 1 && bv.dim(0) == c_out,
          "conv1d bias " + dims_to_string(bv.dims()) + " does not match " + std::to_string(c_out) +
              " output channels");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);

  // col[(c*K + j), t] = x[c, t + j - pad], zero outside the signal.
  auto col = std::make_shared<MatR<T>>(MatR<T>::Zero(c_in * k, t_len));
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* xr = xv.storage().data() + c * t_len;
    for (std::size_t j = 0; j < k; ++j) {
      T* cr = col->data() + (c * k + j) * t_len;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
      for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(t_len); ++t) {
        const std::ptrdiff_t src = t + shift;
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(t_len)) cr[t] = xr[src];
      }
    }
  }
  Tensor<T> out({c_out, t_len});
  MapR<T> Y(out.storage().data(), c_out, t_len);
  Y.noalias() = CMapR<T>(wv.storage().data(), c_out, c_in * k) * (*col);
  for (std::size_t o = 0; o < c_out; ++o) Y.row(o).array() += bv[o];

  return x.graph->emit(
      std::move(out), {x, w, bias},
      [x, w, bias, col, c_in, c_out, t_len, k, pad](Graph<T>& g, std::span<const T> go) {
        CMapR<T> G(go.data(), c_out, t_len);
        if (g.needs_grad(w)) MapR<T>(g.adjoint(w).data(), c_out, c_in * k).noalias() += G * col->transpose();
        if (g.needs_grad(bias)) {
          auto gb = g.adjoint(bias);
          for (std::size_t o = 0; o < c_out; ++o) gb[o] += G.row(o).sum();
        }
        if (g.needs_grad(x)) {
          MatR<T> dcol = CMapR<T>(g.value(w).storage().data(), c_out, c_in * k).transpose() * G;
          auto gx = g.adjoint(x);
          for (std::size_t c = 0; c < c_in; ++c) {
            T* xr = gx.data() + c * t_len;
            for (std::size_t j = 0; j < k; ++j) {
              const T* cr = dcol.data() + (c * k + j) * t_len;
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
              for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(t_len); ++t) {
                const std::ptrdiff_t src = t + shift;
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(t_len)) xr[src] += cr[t];
              }
            }
          }
        }
      });
}

namespace {

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Dims& d, std::size_t axis) {
  require(axis < d.size(), "softmax axis " + std::to_string(axis) + " out of range for " + dims_to_string(d));
  AxisSplit s{1, d[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= d[i];
  for (std::size_t i = axis + 1; i < d.size(); ++i) s.inner *= d[i];
  return s;
}

}  // namespace

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto s = split_axis(xv.dims(), axis);
  Tensor<T> out(xv.dims());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      T mx = xv[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  // The node about to be emitted; its value is the softmax output.
  const Var<T> self{x.graph, static_cast<int>(x.graph->size())};
  return x.graph->emit(std::move(out), {x}, [x, s, self](Graph<T>& g, std::span<const T> go) {
    const auto& yv = g.value(self);
    auto gx = g.adjoint(x);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < s.n; ++j) dot += go[base + j * s.inner] * yv[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t q = base + j * s.inner;
          gx[q] += yv[q] * (go[q] - dot);
        }
      }
    }
  });
}

namespace {

template <typename T>
Var<T> rectifier(Var<T> x, T slope) {
  const auto& xv = x.value();
  Tensor<T> out(xv.dims());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] >= T(0) ? xv[i] : slope * xv[i];
  return x.graph->emit(std::move(out), {x}, [x, slope](Graph<T>& g, std::span<const T> go) {
    const auto& xv = g.value(x);
    auto gx = g.adjoint(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] >= T(0) ? go[i] : slope * go[i];
  });
}

}  // namespace

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  if (!(slope > T(0) && slope < T(1)))
    throw ConfigError("leaky_relu slope must lie in (0, 1), got " + std::to_string(slope));
  return rectifier(x, slope);
}

template <typename T>
Var<T> relu(Var<T> x) {
  return rectifier(x, T(0));
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.dims() == bv.dims();
  const bool broadcast = !same && av.rank() == 2 && bv.rank() == 2 && bv.dim(0) == av.dim(0) && bv.dim(1) == 1;
  require(same || broadcast,
          "hadamard shape mismatch: " + dims_to_string(av.dims()) + " vs " + dims_to_string(bv.dims()));
  const std::size_t cols = broadcast ? av.dim(1) : 1;
  Tensor<T> out(av.dims());
  // Adding +0 turns the -0 of (negative x 0) into +0, so zeroed rows are bitwise zero.
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i / cols] + T(0);
  return a.graph->emit(std::move(out), {a, b}, [a, b, cols](Graph<T>& g, std::span<const T> go) {
    const auto& av = g.value(a);
    const auto& bv = g.value(b);
    if (g.needs_grad(a)) {
      auto ga = g.adjoint(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i / cols];
    }
    if (g.needs_grad(b)) {
      auto gb = g.adjoint(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i / cols] += go[i] * av[i];
    }
  });
}

template <typename T>
Var<T> mean_pool(Var<T> x, std::size_t kernel, std::size_t stride) {
  const auto& xv = x.value();
  require_rank2(xv.dims(), "mean_pool");
  const auto c = xv.dim(0), t_len = xv.dim(1);
  if (kernel == 0 || stride == 0) throw ConfigError("mean_pool kernel and stride must be positive");
  require(kernel <= t_len, "mean_pool kernel " + std::to_string(kernel) + " exceeds input length " +
                               std::to_string(t_len));
  const std::size_t t_out = (t_len - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel);
  Tensor<T> out({c, t_out});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t o = 0; o < t_out; ++o) {
      T acc = 0;
      for (std::size_t j = 0; j < kernel; ++j) acc += xv[ch * t_len + o * stride + j];
      out[ch * t_out + o] = acc * inv;
    }
  return x.graph->emit(std::move(out), {x}, [x, c, t_len, t_out, kernel, stride, inv](Graph<T>& g, std::span<const T> go) {
    auto gx = g.adjoint(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t o = 0; o < t_out; ++o)
        for (std::size_t j = 0; j < kernel; ++j) gx[ch * t_len + o * stride + j] += go[ch * t_out + o] * inv;
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> probs, std::span<const int> labels) {
  const auto& pv = probs.value();
  require(pv.rank() == 1 || pv.rank() == 2,
          "cross_entropy expects [C] or [rows x C], got " + dims_to_string(pv.dims()));
  const std::size_t rows = pv.rank() == 1 ? 1 : pv.dim(0);
  const std::size_t classes = pv.dims().back();
  require(labels.size() == rows, "cross_entropy got " + std::to_string(labels.size()) + " labels for " +
                                     std::to_string(rows) + " rows");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw Error("cross_entropy label " + std::to_string(l) + " out of range [0, " + std::to_string(classes) + ")");
  const T floor = static_cast<T>(kProbabilityFloor);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) total -= std::log(std::max(pv[r * classes + lab[r]], floor));
  Tensor<T> out({1}, total / static_cast<T>(rows));
  return probs.graph->emit(std::move(out), {probs},
                           [probs, lab = std::move(lab), rows, classes, floor](Graph<T>& g, std::span<const T> go) {
                             const auto& pv = g.value(probs);
                             auto gp = g.adjoint(probs);
                             const T scale = go[0] / static_cast<T>(rows);
                             for (std::size_t r = 0; r < rows; ++r) {
                               const std::size_t q = r * classes + lab[r];
                               if (pv[q] > floor) gp[q] -= scale / pv[q];
                             }
                           });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const auto& xv = x.value();
  require_rank2(xv.dims(), "transpose");
  const auto m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({n, m});
  MapR<T>(out.storage().data(), n, m) = CMapR<T>(xv.storage().data(), m, n).transpose();
  return x.graph->emit(std::move(out), {x}, [x, m, n](Graph<T>& g, std::span<const T> go) {
    MapR<T>(g.adjoint(x).data(), m, n) += CMapR<T>(go.data(), n, m).transpose();
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Dims dims) {
  Tensor<T> out = x.value();
  out.reshape(std::move(dims));
  return x.graph->emit(std::move(out), {x}, [x](Graph<T>& g, std::span<const T> go) {
    auto gx = g.adjoint(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  const auto& xv = x.value();
  const auto& bv = b.value();
  require(xv.rank() == 2 && bv.rank() == 1 && bv.dim(0) == xv.dim(1),
          "add_bias shape mismatch: " + dims_to_string(xv.dims()) + " + " + dims_to_string(bv.dims()));
  const auto m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return x.graph->emit(std::move(out), {x, b}, [x, b, m, n](Graph<T>& g, std::span<const T> go) {
    if (g.needs_grad(x)) {
      auto gx = g.adjoint(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    }
    if (g.needs_grad(b)) {
      auto gb = g.adjoint(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
    }
  });
}

template <typename T>
Var<T> column(Var<T> x, std::size_t j) {
  const auto& xv = x.value();
  require(xv.rank() == 2 && j < xv.dim(1),
          "column " + std::to_string(j) + " out of range for " + dims_to_string(xv.dims()));
  const auto m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out({m, 1});
  for (std::size_t i = 0; i < m; ++i) out[i] = xv[i * n + j];
  return x.graph->emit(std::move(out), {x}, [x, m, n, j](Graph<T>& g, std::span<const T> go) {
    auto gx = g.adjoint(x);
    for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += go[i];
  });
}

template <typename T>
Var<T> straight_through(Var<T> soft, Tensor<T> hard) {
  require(hard.dims() == soft.dims(), "straight_through shape mismatch: " + dims_to_string(soft.dims()) +
                                          " vs " + dims_to_string(hard.dims()));
  return soft.graph->emit(std::move(hard), {soft}, [soft](Graph<T>& g, std::span<const T> go) {
    auto gs = g.adjoint(soft);
    for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += go[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (auto v : x.value().data()) total += v;
  return x.graph->emit(Tensor<T>({1}, total), {x}, [x](Graph<T>& g, std::span<const T> go) {
    auto gx = g.adjoint(x);
    for (auto& v : gx) v += go[0];
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return x.graph->emit(std::move(out), {x}, [x, factor](Graph<T>& g, std::span<const T> go) {
    auto gx = g.adjoint(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * factor;
  });
}

#define EMOVAD_INSTANTIATE_OPS(T)                                        \
  template Var<T> matmul(Var<T>, Var<T>);                                \
  template Var<T> conv1d(Var<T>, Var<T>, Var<T>);                        \
  template Var<T> softmax(Var<T>, std::size_t);                          \
  template Var<T> leaky_relu(Var<T>, T);                                 \
  template Var<T> relu(Var<T>);                                          \
  template Var<T> hadamard(Var<T>, Var<T>);                              \
  template Var<T> mean_pool(Var<T>, std::size_t, std::size_t);           \
  template Var<T> cross_entropy(Var<T>, std::span<const int>);           \
  template Var<T> transpose(Var<T>);                                     \
  template Var<T> reshape(Var<T>, Dims);                                 \
  template Var<T> add_bias(Var<T>, Var<T>);                              \
  template Var<T> column(Var<T>, std::size_t);                           \
  template Var<T> straight_through(Var<T>, Tensor<T>);                   \
  template Var<T> sum(Var<T>);                                           \
  template Var<T> scale(Var<T>, T);

EMOVAD_INSTANTIATE_OPS(float)
EMOVAD_INSTANTIATE_OPS(double)

}  // namespace emovad::grad
