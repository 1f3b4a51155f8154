// SPDX-License-Identifier: Apache-2.0
#include "rge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace rge::ops {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Records `out` on the active tape when any input needs a gradient. The
// backward closure is only built in that case.
template <typename T, typename MakeBackward>
void attach(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, MakeBackward&& make_backward) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr || !GradMode::enabled()) return;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return;
  out.node()->requires_grad = true;
  out.node()->is_leaf = false;
  std::vector<std::uint64_t> ids;
  ids.reserve(inputs.size());
  for (const auto* t : inputs) ids.push_back(t->node_id());
  tape->record(std::move(ids), out, make_backward());
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + shape_to_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

// C[m x n] += A[m x k] . B[k x n]. Each output row depends only on its own
// input row, accumulated in k order, so a row's value does not depend on how
// many other rows are in the product.
template <typename T>
void mm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k x n] += A[m x k]^T . G[m x n]
template <typename T>
void mm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(std::span<const T> x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

template <typename T>
Tensor<T> make(Shape shape, std::vector<T> data) {
  return Tensor<T>::from_data(std::move(shape), std::move(data), false);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()));
  }
  std::vector<T> c(m * n, T{0});
  mm_acc(a.data().data(), b.data().data(), c.data(), m, k, n);
  auto out = make<T>({m, n}, std::move(c));
  attach(out, {&a, &b}, [&] {
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    return [an, bn, on, m, k, n] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto bt = transpose<T>(bn->data, k, n);  // [n x k]
        mm_acc(g.data(), bt.data(), an->ensure_grad().data(), m, n, k);
      }
      if (bn->requires_grad) mm_tn_acc(an->data.data(), g.data(), bn->ensure_grad().data(), m, k, n);
    };
  });
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_to_string(a.shape()) + " . " +
                         shape_to_string(b.shape()) + "^T");
  }
  auto bt = transpose<T>(b.data(), n, k);  // [k x n]
  std::vector<T> c(m * n, T{0});
  mm_acc(a.data().data(), bt.data(), c.data(), m, k, n);
  auto out = make<T>({m, n}, std::move(c));
  attach(out, {&a, &b}, [&] {
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    return [an, bn, on, m, k, n] {
      const auto& g = on->grad;
      if (an->requires_grad) mm_acc(g.data(), bn->data.data(), an->ensure_grad().data(), m, n, k);
      if (bn->requires_grad) mm_tn_acc(g.data(), an->data.data(), bn->ensure_grad().data(), m, n, k);
    };
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> c(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ad[i] + bd[i];
  auto out = make<T>(a.shape(), std::move(c));
  attach(out, {&a, &b}, [&] {
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    return [an, bn, on] {
      an->accumulate_grad(on->grad);
      bn->accumulate_grad(on->grad);
    };
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> c(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ad[i] - bd[i];
  auto out = make<T>(a.shape(), std::move(c));
  attach(out, {&a, &b}, [&] {
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    return [an, bn, on] {
      an->accumulate_grad(on->grad);
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= on->grad[i];
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> c(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ad[i] * bd[i];
  auto out = make<T>(a.shape(), std::move(c));
  attach(out, {&a, &b}, [&] {
    NodePtr<T> an = a.node(), bn = b.node(), on = out.node();
    return [an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> d(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ad[i] * c;
  auto out = make<T>(a.shape(), std::move(d));
  attach(out, {&a}, [&] {
    NodePtr<T> an = a.node(), on = out.node();
    return [an, on, c] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * c;
    };
  });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kA = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kB = T(0.044715);
  std::vector<T> y(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = xd[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kA * (v + kB * v * v * v)));
  }
  auto out = make<T>(x.shape(), std::move(y));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T v = xn->data[i];
        const T t = std::tanh(kA * (v + kB * v * v * v));
        const T dt = (T(1) - t * t) * kA * (T(1) + T(3) * kB * v * v);
        gx[i] += on->grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw DimensionError("log_softmax_lastdim: empty last dimension");
  const std::size_t rows = x.rows();
  std::vector<T> y(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T* o = y.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  auto out = make<T>(x.shape(), std::move(y));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on, rows, n] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows; ++r) {
        T gs = 0;
        for (std::size_t j = 0; j < n; ++j) gs += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r * n + j] - std::exp(on->data[r * n + j]) * gs;
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> causal_softmax(const Tensor<T>& x, std::size_t offset) {
  require_matrix(x, "causal_softmax");
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  std::vector<T> p(x.numel(), T{0});
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible = std::min(n, r + offset + 1);
    const T* in = xd.data() + r * n;
    T* o = p.data() + r * n;
    const T mx = *std::max_element(in, in + visible);
    T s = 0;
    for (std::size_t j = 0; j < visible; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < visible; ++j) o[j] /= s;
  }
  auto out = make<T>(x.shape(), std::move(p));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on, rows, n, offset] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      const auto& pv = on->data;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t visible = std::min(n, r + offset + 1);
        T dot = 0;
        for (std::size_t j = 0; j < visible; ++j) dot += pv[r * n + j] * g[r * n + j];
        for (std::size_t j = 0; j < visible; ++j) gx[r * n + j] += pv[r * n + j] * (g[r * n + j] - dot);
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  const std::size_t n = x.cols();
  const std::size_t rows = x.rows();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_to_string(gain.shape()) + "/" +
                         shape_to_string(bias.shape()) + " do not match input " + shape_to_string(x.shape()));
  }
  std::vector<T> y(x.numel()), xhat(x.numel()), inv_std(rows);
  const auto xd = x.data(), gd = gain.data(), bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + T(kLayerNormEps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mu) * is;
      y[r * n + j] = gd[j] * xhat[r * n + j] + bd[j];
    }
  }
  auto out = make<T>(x.shape(), std::move(y));
  attach(out, {&x, &gain, &bias}, [&] {
    NodePtr<T> xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    return [xn, gn, bn, on, rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& g = on->grad;
      if (gn->requires_grad) {
        auto& gg = gn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
      if (xn->requires_grad) {
        auto& gx = xn->ensure_grad();
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
          T s1 = 0, s2 = 0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = g[r * n + j] * gn->data[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xhat[r * n + j];
          }
          const T k = inv_std[r] / T(n);
          for (std::size_t j = 0; j < n; ++j)
            gx[r * n + j] += k * (T(n) * dxhat[j] - s1 - xhat[r * n + j] * s2);
        }
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> cosine_similarity_matrix(const Tensor<T>& q, const Tensor<T>& t) {
  require_matrix(q, "cosine_similarity_matrix");
  require_matrix(t, "cosine_similarity_matrix");
  const std::size_t b = q.shape()[0], bt = t.shape()[0], d = q.shape()[1];
  if (t.shape()[1] != d || d == 0) {
    throw DimensionError("cosine_similarity_matrix: " + shape_to_string(q.shape()) + " vs " +
                         shape_to_string(t.shape()));
  }
  const auto qd = q.data(), td = t.data();
  auto norms = [d](std::span<const T> x, std::size_t rows) {
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      T s = 0;
      for (std::size_t j = 0; j < d; ++j) s += x[r * d + j] * x[r * d + j];
      out[r] = std::sqrt(s);
    }
    return out;
  };
  auto qnorm = norms(qd, b);
  auto tnorm = norms(td, bt);
  std::vector<T> s(b * bt, T{0});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < bt; ++j) {
      if (qnorm[i] == T{0} || tnorm[j] == T{0}) continue;
      T dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += qd[i * d + k] * td[j * d + k];
      s[i * bt + j] = dot / (qnorm[i] * tnorm[j]);
    }
  }
  auto out = make<T>({b, bt}, std::move(s));
  attach(out, {&q, &t}, [&] {
    NodePtr<T> qn = q.node(), tn = t.node(), on = out.node();
    return [qn, tn, on, b, bt, d, qnorm = std::move(qnorm), tnorm = std::move(tnorm)] {
      const auto& g = on->grad;
      const auto& sv = on->data;
      // d cos / d q_i = (t_j/|t_j| - cos * q_i/|q_i|) / |q_i|
      if (qn->requires_grad) {
        auto& gq = qn->ensure_grad();
        for (std::size_t i = 0; i < b; ++i) {
          if (qnorm[i] == T{0}) continue;
          for (std::size_t j = 0; j < bt; ++j) {
            if (tnorm[j] == T{0}) continue;
            const T gij = g[i * bt + j];
            const T c = sv[i * bt + j];
            for (std::size_t k = 0; k < d; ++k) {
              gq[i * d + k] += gij * (tn->data[j * d + k] / tnorm[j] - c * qn->data[i * d + k] / qnorm[i]) / qnorm[i];
            }
          }
        }
      }
      if (tn->requires_grad) {
        auto& gt = tn->ensure_grad();
        for (std::size_t j = 0; j < bt; ++j) {
          if (tnorm[j] == T{0}) continue;
          for (std::size_t i = 0; i < b; ++i) {
            if (qnorm[i] == T{0}) continue;
            const T gij = g[i * bt + j];
            const T c = sv[i * bt + j];
            for (std::size_t k = 0; k < d; ++k) {
              gt[j * d + k] += gij * (qn->data[i * d + k] / qnorm[i] - c * tn->data[j * d + k] / tnorm[j]) / tnorm[j];
            }
          }
        }
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<T> y(ids.size() * d);
  const auto td = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(v) +
                           " rows");
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[r]) * d, d, y.data() + r * d);
  }
  auto out = make<T>({ids.size(), d}, std::move(y));
  attach(out, {&table}, [&] {
    NodePtr<T> tn = table.node(), on = out.node();
    return [tn, on, d, idv = std::vector<std::int32_t>(ids.begin(), ids.end())] {
      auto& gt = tn->ensure_grad();
      for (std::size_t r = 0; r < idv.size(); ++r) {
        T* dst = gt.data() + static_cast<std::size_t>(idv[r]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += on->grad[r * d + j];
      }
    };
  });
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_rows");
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  if (begin + count > rows) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(x.shape()));
  }
  const auto xd = x.data();
  std::vector<T> y(xd.begin() + static_cast<std::ptrdiff_t>(begin * n),
                   xd.begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  auto out = make<T>({count, n}, std::move(y));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on, begin, n] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) gx[begin * n + i] += on->grad[i];
    };
  });
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t rows = x.shape()[0], n = x.shape()[1];
  if (begin + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_to_string(x.shape()));
  }
  std::vector<T> y(rows * count);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xd.data() + r * n + begin, count, y.data() + r * count);
  auto out = make<T>({rows, count}, std::move(y));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on, rows, n, begin, count] {
      auto& gx = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) gx[r * n + begin + j] += on->grad[r * count + j];
    };
  });
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n || p.rank() == 0 || p.rank() > 2) {
      throw DimensionError("concat_rows: " + shape_to_string(p.shape()) + " incompatible with width " +
                           std::to_string(n));
    }
    rows += p.rows();
  }
  std::vector<T> y;
  y.reserve(rows * n);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  auto out = make<T>({rows, n}, std::move(y));
  Tape<T>* tape = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && GradMode::enabled() && any) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
    std::vector<std::uint64_t> ids;
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) {
      ids.push_back(p.node_id());
      nodes.push_back(p.node());
    }
    NodePtr<T> on = out.node();
    tape->record(std::move(ids), out, [nodes = std::move(nodes), on] {
      std::size_t off = 0;
      for (const auto& pn : nodes) {
        const std::size_t len = pn->data.size();
        if (pn->requires_grad) {
          auto& gp = pn->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) gp[i] += on->grad[off + i];
        }
        off += len;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t width = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: " + shape_to_string(p.shape()) + " has " + std::to_string(p.rows()) +
                           " rows, expected " + std::to_string(rows));
    }
    width += p.cols();
  }
  std::vector<T> y(rows * width);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.data().data() + r * w, w, y.data() + r * width + col);
    col += w;
  }
  auto out = make<T>({rows, width}, std::move(y));
  Tape<T>* tape = active_tape<T>();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && GradMode::enabled() && any) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
    std::vector<std::uint64_t> ids;
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) {
      ids.push_back(p.node_id());
      nodes.push_back(p.node());
    }
    NodePtr<T> on = out.node();
    tape->record(std::move(ids), out, [nodes = std::move(nodes), on, rows, width] {
      std::size_t c0 = 0;
      for (const auto& pn : nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          auto& gp = pn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += on->grad[r * width + c0 + j];
        }
        c0 += w;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_to_string(x.shape()) + " to " + shape_to_string(shape));
  }
  auto out = make<T>(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on] { xn->accumulate_grad(on->grad); };
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  auto out = make<T>({}, {s});
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    return [xn, on] {
      auto& gx = xn->ensure_grad();
      for (auto& g : gx) g += on->grad[0];
    };
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> gather_elements(const Tensor<T>& x, std::span<const std::pair<std::size_t, std::size_t>> index) {
  const std::size_t rows = x.rows(), n = x.cols();
  std::vector<T> y(index.size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto [r, c] = index[i];
    if (r >= rows || c >= n) {
      throw DimensionError("gather_elements: (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                           shape_to_string(x.shape()));
    }
    y[i] = xd[r * n + c];
  }
  auto out = make<T>({index.size()}, std::move(y));
  attach(out, {&x}, [&] {
    NodePtr<T> xn = x.node(), on = out.node();
    std::vector<std::size_t> flat(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) flat[i] = index[i].first * n + index[i].second;
    return [xn, on, flat = std::move(flat)] {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < flat.size(); ++i) gx[flat[i]] += on->grad[i];
    };
  });
  return out;
}

#define RGE_INSTANTIATE(T)                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                        \
  template Tensor<T> log_softmax_lastdim(const Tensor<T>&);                                         \
  template Tensor<T> causal_softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> cosine_similarity_matrix(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int32_t>);                  \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> mean(const Tensor<T>&);                                                        \
  template Tensor<T> gather_elements(const Tensor<T>&, std::span<const std::pair<std::size_t, std::size_t>>);

RGE_INSTANTIATE(float)
RGE_INSTANTIATE(double)

#undef RGE_INSTANTIATE

}  // namespace rge::ops
