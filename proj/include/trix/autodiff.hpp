#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trix/errors.hpp"

/**
 * A small tape-based reverse-mode differentiation kernel.
 *
 * Only the primitives the message-passing model needs are provided. All
 * values are dense row-major tensors of rank <= 2. Reductions accumulate in
 * ascending index order, so a forward pass is bitwise reproducible.
 */
namespace trix::ad {

using index_t = std::uint32_t;

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) throw shape_error("tensor data length does not match shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Leading dimension; a rank-1 tensor is treated as a column.
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (element_count(shape) != size()) throw shape_error("reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

/// Index list that either borrows caller memory or owns a moved-in vector.
class Index {
 public:
  Index(std::span<const index_t> view) : view_(view) {}
  Index(const std::vector<index_t>& v) : view_(v) {}
  Index(std::vector<index_t>&& v)
      : owned_(std::make_shared<const std::vector<index_t>>(std::move(v))), view_(*owned_) {}

  std::span<const index_t> view() const noexcept { return view_; }
  std::size_t size() const noexcept { return view_.size(); }
  index_t operator[](std::size_t i) const { return view_[i]; }

 private:
  std::shared_ptr<const std::vector<index_t>> owned_;
  std::span<const index_t> view_;
};

template <class T>
class Tape;

/// Handle to a value recorded on a tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> parameter(std::string name, Tensor<T> value) {
    auto v = push(std::move(value), true, nullptr);
    nodes_[v.id].param_name = std::move(name);
    nodes_[v.id].is_param = true;
    return v;
  }

  /// Records an op result. The node needs a gradient iff any parent does.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Upstream gradient of node `id` during backward.
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of a parent, or nullptr when the parent needs none.
  Tensor<T>* grad_sink(Var<T> parent) {
    Node& n = nodes_[parent.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  /**
   * Reverse-mode sweep from a scalar loss. Returns the gradient of every
   * parameter on the tape, zero-filled for parameters the loss does not use.
   */
  std::map<std::string, Tensor<T>> backward(Var<T> loss) {
    if (value(loss).size() != 1) throw shape_error("backward requires a scalar loss");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (nodes_[loss.id].requires_grad) {
      nodes_[loss.id].grad = Tensor<T>(nodes_[loss.id].value.shape(), T(1));
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && n.grad.size() == n.value.size()) n.backward(*this, i);
      }
    }
    std::map<std::string, Tensor<T>> out;
    for (auto& n : nodes_) {
      if (!n.is_param) continue;
      Tensor<T> g = n.grad.size() == n.value.size() ? n.grad : Tensor<T>(n.value.shape());
      auto [it, fresh] = out.emplace(n.param_name, g);
      if (!fresh)
        for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += g[k];
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool is_param = false;
    std::string param_name;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, false, {}, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw shape_error(what);
}

inline void require_index(std::span<const index_t> idx, std::size_t bound, const char* op) {
  for (index_t i : idx)
    if (i >= bound) throw bounds_error(std::string(op) + ": index " + std::to_string(i) +
                                       " out of range " + std::to_string(bound));
}

template <class T>
Tensor<T> matrix_like(std::size_t rows, std::size_t cols) {
  return Tensor<T>({rows, cols});
}

}  // namespace detail

/// out[i, :] = src[idx[i], :]
template <class T>
Var<T> gather(Var<T> src, Index idx) {
  Tape<T>& tape = *src.tape;
  const Tensor<T>& s = src.value();
  detail::require_index(idx.view(), s.rows(), "gather");
  const std::size_t d = s.cols();
  Tensor<T> out = detail::matrix_like<T>(idx.size(), d);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(s.row(idx[i]).begin(), d, out.row(i).begin());
  return tape.record(std::move(out), {src}, [src, idx, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* gs = t.grad_sink(src))
      for (std::size_t i = 0; i < idx.size(); ++i) {
        T* dst = gs->row(idx[i]).data();
        const T* from = g.row(i).data();
        for (std::size_t k = 0; k < d; ++k) dst[k] += from[k];
      }
  });
}

template <class T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require(av.shape() == bv.shape(), "hadamard: shape mismatch");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * t.value(b)[i];
    if (Tensor<T>* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * t.value(a)[i];
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require(av.shape() == bv.shape(), "add: shape mismatch");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    for (Var<T> p : {a, b})
      if (Tensor<T>* gp = t.grad_sink(p))
        for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
  });
}

/// out[j, :] = sum over i with dst[i] == j of msgs[i, :], accumulated in ascending i.
template <class T>
Var<T> scatter_sum(Var<T> msgs, Index dst, std::size_t out_rows) {
  const Tensor<T>& m = msgs.value();
  detail::require(m.rows() == dst.size() || (m.size() == 0 && dst.size() == 0),
                  "scatter_sum: one destination per message row");
  detail::require_index(dst.view(), out_rows, "scatter_sum");
  const std::size_t d = m.ndim() < 2 ? (m.size() == 0 ? 0 : 1) : m.cols();
  Tensor<T> out = detail::matrix_like<T>(out_rows, d);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    T* o = out.row(dst[i]).data();
    const T* from = m.row(i).data();
    for (std::size_t k = 0; k < d; ++k) o[k] += from[k];
  }
  return msgs.tape->record(std::move(out), {msgs}, [msgs, dst, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* gm = t.grad_sink(msgs))
      for (std::size_t i = 0; i < dst.size(); ++i) {
        T* to = gm->row(i).data();
        const T* from = g.row(dst[i]).data();
        for (std::size_t k = 0; k < d; ++k) to[k] += from[k];
      }
  });
}

/// x W + bias, with x [M x k], W [k x d], bias [d].
template <class T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const Tensor<T>& bv = bias.value();
  const std::size_t m = xv.rows(), k = xv.cols(), d = wv.cols();
  detail::require(wv.ndim() == 2 && wv.rows() == k, "affine: weight rows must equal input columns");
  detail::require(bv.size() == d, "affine: bias length must equal output columns");
  Tensor<T> out = detail::matrix_like<T>(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.row(i).data();
    std::copy_n(bv.data().data(), d, o);
    const T* xr = xv.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const T xp = xr[p];
      if (xp == T(0)) continue;
      const T* wr = wv.row(p).data();
      for (std::size_t j = 0; j < d; ++j) o[j] += xp * wr[j];
    }
  }
  return x.tape->record(std::move(out), {x, w, bias}, [x, w, bias, m, k, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(w);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < m; ++i) {
        const T* gr = g.row(i).data();
        T* out = gx->row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
          const T* wr = wv.row(p).data();
          T acc = 0;
          for (std::size_t j = 0; j < d; ++j) acc += gr[j] * wr[j];
          out[p] += acc;
        }
      }
    if (Tensor<T>* gw = t.grad_sink(w))
      for (std::size_t i = 0; i < m; ++i) {
        const T* gr = g.row(i).data();
        const T* xr = xv.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
          const T xp = xr[p];
          if (xp == T(0)) continue;
          T* out = gw->row(p).data();
          for (std::size_t j = 0; j < d; ++j) out[j] += xp * gr[j];
        }
      }
    if (Tensor<T>* gb = t.grad_sink(bias))
      for (std::size_t i = 0; i < m; ++i) {
        const T* gr = g.row(i).data();
        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gr[j];
      }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  Tensor<T> out(x.value().shape());
  // NaN passes through so that non-finite values surface in the loss.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] < T(0) ? T(0) : x.value()[i];
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > T(0)) (*gx)[i] += g[i];
  });
}

/// Per row: (x - mean) / sqrt(var + eps), without learned scale or shift.
template <class T>
Var<T> layer_norm(Var<T> x, T eps = T(1e-5)) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), d = xv.cols();
  Tensor<T> out(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xv.row(i).data();
    T mean = 0;
    for (std::size_t k = 0; k < d; ++k) mean += row[k];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t k = 0; k < d; ++k) var += (row[k] - mean) * (row[k] - mean);
    var /= static_cast<T>(d);
    const T s = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = s;
    for (std::size_t k = 0; k < d; ++k) out(i, k) = (row[k] - mean) * s;
  }
  return x.tape->record(std::move(out), {x}, [x, inv_std, m, d](Tape<T>& t, std::size_t self) {
    Tensor<T>* gx = t.grad_sink(x);
    if (!gx) return;
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    for (std::size_t i = 0; i < m; ++i) {
      T mean_g = 0, mean_gy = 0;
      for (std::size_t k = 0; k < d; ++k) {
        mean_g += g(i, k);
        mean_gy += g(i, k) * y(i, k);
      }
      mean_g /= static_cast<T>(d);
      mean_gy /= static_cast<T>(d);
      for (std::size_t k = 0; k < d; ++k)
        (*gx)(i, k) += (*inv_std)[i] * (g(i, k) - mean_g - y(i, k) * mean_gy);
    }
  });
}

/// Column-wise concatenation of [M x p] and [M x q].
template <class T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require(av.rows() == bv.rows(), "concat_cols: row counts differ");
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  Tensor<T> out = detail::matrix_like<T>(m, p + q);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.row(i).begin(), p, out.row(i).begin());
    std::copy_n(bv.row(i).begin(), q, out.row(i).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, m, p, q](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* ga = t.grad_sink(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) (*ga)(i, j) += g(i, j);
    if (Tensor<T>* gb = t.grad_sink(b))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) (*gb)(i, j) += g(i, p + j);
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <class T>
Var<T> log(Var<T> x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.value()[i]);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / xv[i];
  });
}

/// log(sigmoid(x)), evaluated without overflow for large |x|.
template <class T>
Var<T> log_sigmoid(Var<T> x) {
  Tensor<T> out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = v >= 0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v));
  }
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xv = t.value(x);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv[i];
        // d/dx log sigmoid(x) = sigmoid(-x)
        const T s = v >= 0 ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
        (*gx)[i] += g[i] * s;
      }
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(acc), {x}, [x](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
  });
}

/// sum_i weights[i] * x[i] over the flattened tensor.
template <class T>
Var<T> weighted_sum(Var<T> x, std::vector<T> weights) {
  detail::require(weights.size() == x.value().size(), "weighted_sum: weight count mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.value()[i];
  return x.tape->record(Tensor<T>::scalar(acc), {x},
                        [x, w = std::move(weights)](Tape<T>& t, std::size_t self) {
                          const T g = t.grad(self)[0];
                          if (Tensor<T>* gx = t.grad_sink(x))
                            for (std::size_t i = 0; i < w.size(); ++i) (*gx)[i] += g * w[i];
                        });
}

template <class T>
Var<T> reshape(Var<T> x, std::vector<std::size_t> shape) {
  return x.tape->record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (Tensor<T>* gx = t.grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

/// One factor of a fused message: rows of `source` selected by `index`.
template <class T>
struct Factor {
  Var<T> source;
  Index index;
};

/// Accumulation order of message_aggregate.
enum class Summation : std::uint8_t {
  /// Ascending message index.
  INDEX_ORDER,
  /// Per destination, messages sorted lexicographically by value. Equal
  /// message multisets then give bitwise-equal sums regardless of indexing.
  CANONICAL,
};

/**
 * Fused gather / Hadamard / scatter-sum:
 *   out[dst[i], :] += weight[i] * prod_f factors[f].source[factors[f].index[i], :]
 *
 * Equivalent to composing gather, hadamard, scale and scatter_sum, without
 * materialising the per-message rows. Null `weights` means weight 1.
 */
template <class T>
Var<T> message_aggregate(std::vector<Factor<T>> factors, std::shared_ptr<const std::vector<T>> weights,
                         Index dst, std::size_t out_rows, Summation order = Summation::INDEX_ORDER) {
  detail::require(!factors.empty(), "message_aggregate: no factors");
  Tape<T>& tape = *factors.front().source.tape;
  const std::size_t m = dst.size();
  const std::size_t d = factors.front().source.value().cols();
  for (const auto& f : factors) {
    detail::require(f.index.size() == m, "message_aggregate: index length mismatch");
    detail::require(f.source.value().cols() == d, "message_aggregate: factor widths differ");
    detail::require_index(f.index.view(), f.source.value().rows(), "message_aggregate");
  }
  detail::require(!weights || weights->size() == m, "message_aggregate: weight count mismatch");
  detail::require_index(dst.view(), out_rows, "message_aggregate");

  Tensor<T> out = detail::matrix_like<T>(out_rows, d);
  auto message = [&](std::size_t i, T* msg) {
    const T w = weights ? (*weights)[i] : T(1);
    for (std::size_t k = 0; k < d; ++k) msg[k] = w;
    for (const auto& f : factors) {
      const T* row = f.source.value().row(f.index[i]).data();
      for (std::size_t k = 0; k < d; ++k) msg[k] *= row[k];
    }
  };
  if (order == Summation::INDEX_ORDER) {
    std::vector<T> msg(d);
    for (std::size_t i = 0; i < m; ++i) {
      if (weights && (*weights)[i] == T(0)) continue;
      message(i, msg.data());
      T* o = out.row(dst[i]).data();
      for (std::size_t k = 0; k < d; ++k) o[k] += msg[k];
    }
  } else {
    std::vector<T> msgs(m * d);
    for (std::size_t i = 0; i < m; ++i) message(i, msgs.data() + i * d);
    std::vector<std::size_t> ids(m);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      if (dst[a] != dst[b]) return dst[a] < dst[b];
      return std::lexicographical_compare(msgs.begin() + a * d, msgs.begin() + (a + 1) * d, msgs.begin() + b * d,
                                          msgs.begin() + (b + 1) * d);
    });
    for (std::size_t i : ids) {
      T* o = out.row(dst[i]).data();
      for (std::size_t k = 0; k < d; ++k) o[k] += msgs[i * d + k];
    }
  }

  bool needs = false;
  for (const auto& f : factors) needs = needs || tape.requires_grad(f.source);
  if (!needs) return tape.constant(std::move(out));

  // record() takes an initializer list; pass the first factor and capture the rest.
  auto backward = [factors, weights, dst, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const std::size_t nf = factors.size();
    std::vector<Tensor<T>*> sinks(nf);
    for (std::size_t f = 0; f < nf; ++f) sinks[f] = t.grad_sink(factors[f].source);
    std::vector<T> partial(d);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const T w = weights ? (*weights)[i] : T(1);
      if (w == T(0)) continue;
      const T* gr = g.row(dst[i]).data();
      for (std::size_t f = 0; f < nf; ++f) {
        if (!sinks[f]) continue;
        for (std::size_t k = 0; k < d; ++k) partial[k] = w * gr[k];
        for (std::size_t o = 0; o < nf; ++o) {
          if (o == f) continue;
          const T* row = t.value(factors[o].source.id).row(factors[o].index[i]).data();
          for (std::size_t k = 0; k < d; ++k) partial[k] *= row[k];
        }
        T* to = sinks[f]->row(factors[f].index[i]).data();
        for (std::size_t k = 0; k < d; ++k) to[k] += partial[k];
      }
    }
  };
  // Mark the node as differentiable through whichever factor requires grad.
  Var<T> anchor = factors.front().source;
  for (const auto& f : factors)
    if (tape.requires_grad(f.source)) anchor = f.source;
  return tape.record(std::move(out), {anchor}, std::move(backward));
}

}  // namespace trix::ad
