#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqseg {

[[noreturn]] inline void fail_input(const std::string& msg) {
  throw std::invalid_argument(msg);
}

#define SS_CHECK(cond, msg)                  \
  do {                                       \
    if (!(cond)) {                           \
      std::ostringstream ss_check_os_;       \
      ss_check_os_ << msg;                   \
      ::seqseg::fail_input(ss_check_os_.str()); \
    }                                        \
  } while (0)

// Dense 4-D shape, NCHW.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  long long numel() const { return 1LL * n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

template <class S>
class Tape;

// Value-semantic dense tensor. The payload is shared; ops never mutate an
// existing payload, they allocate a fresh one. A tensor is "tracked" when it
// carries a node id on some tape; detached tensors never receive gradient.
template <class S>
struct Tensor {
  Shape shape{};
  std::shared_ptr<std::vector<S>> store;
  Tape<S>* tape = nullptr;
  int node = -1;

  Tensor() = default;
  explicit Tensor(Shape sh)
      : shape(sh), store(std::make_shared<std::vector<S>>(sh.numel(), S(0))) {}

  static Tensor zeros(Shape sh) { return Tensor(sh); }

  static Tensor full(Shape sh, S v) {
    Tensor t(sh);
    std::fill(t.store->begin(), t.store->end(), v);
    return t;
  }

  static Tensor from(Shape sh, std::vector<S> v) {
    SS_CHECK((long long)v.size() == sh.numel(),
             "tensor data length " << v.size() << " does not match shape " << sh.str());
    Tensor t;
    t.shape = sh;
    t.store = std::make_shared<std::vector<S>>(std::move(v));
    return t;
  }

  bool defined() const { return store != nullptr; }
  long long numel() const { return shape.numel(); }
  S* data() { return store->data(); }
  const S* data() const { return store->data(); }

  S& at(int in, int ic, int iy, int ix) {
    return (*store)[((1LL * in * shape.c + ic) * shape.h + iy) * shape.w + ix];
  }
  S at(int in, int ic, int iy, int ix) const {
    return (*store)[((1LL * in * shape.c + ic) * shape.h + iy) * shape.w + ix];
  }

  bool tracked() const { return tape != nullptr && node >= 0; }

  Tensor detached() const {
    Tensor t = *this;
    t.tape = nullptr;
    t.node = -1;
    return t;
  }
};

// Reverse-mode tape. Nodes are appended in execution order, so every input
// node id precedes its consumers; backward walks the list once in reverse.
template <class S>
class Tape {
 public:
  using BackFn = std::function<void(Tape<S>&)>;

  Tape() : id_(next_id()++) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  uint64_t id() const { return id_; }
  int size() const { return (int)nodes_.size(); }

  int leaf(const Shape& sh) {
    nodes_.push_back({sh, nullptr});
    grads_.emplace_back();
    return (int)nodes_.size() - 1;
  }

  int record(const Shape& sh, BackFn back) {
    nodes_.push_back({sh, std::move(back)});
    grads_.emplace_back();
    return (int)nodes_.size() - 1;
  }

  // Registers an untracked tensor as a leaf on this tape.
  Tensor<S> track(const Tensor<S>& t) {
    SS_CHECK(!t.tracked(), "track: tensor already belongs to a tape");
    Tensor<S> r = t;
    r.tape = this;
    r.node = leaf(t.shape);
    return r;
  }

  // Gradient buffer of a node; allocated lazily so unreachable nodes stay zero.
  std::vector<S>& grad(int node) {
    SS_CHECK(node >= 0 && node < (int)nodes_.size(), "grad: bad node id " << node);
    auto& g = grads_[node];
    if (g.empty()) g.assign(nodes_[node].shape.numel(), S(0));
    return g;
  }

  void backward(const Tensor<S>& root) {
    SS_CHECK(root.tracked() && root.tape == this, "backward: root is not tracked on this tape");
    SS_CHECK(root.numel() == 1, "backward: root must be scalar, got " << root.shape.str());
    for (auto& g : grads_)
      if (!g.empty()) std::fill(g.begin(), g.end(), S(0));
    grad(root.node)[0] = S(1);
    for (int i = root.node; i >= 0; --i) {
      if (nodes_[i].back && !grads_[i].empty()) nodes_[i].back(*this);
    }
  }

 private:
  struct Node {
    Shape shape;
    BackFn back;
  };

  static uint64_t& next_id() {
    static uint64_t id = 1;
    return id;
  }

  uint64_t id_;
  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
};

// A named trainable buffer. `use` binds it once per tape so gradients from
// repeated uses (e.g. a convLSTM kernel applied at every frame) accumulate
// on a single leaf node.
template <class S>
struct Param {
  std::string name;
  Tensor<S> value;

  Tensor<S> use(Tape<S>* tp) {
    if (!tp) return value;
    if (bound_tape_id_ != tp->id()) {
      tracked_ = tp->track(value);
      bound_tape_id_ = tp->id();
    }
    return tracked_;
  }

  // Valid after use() on the given tape.
  int node_on(const Tape<S>& tp) const {
    return bound_tape_id_ == tp.id() ? tracked_.node : -1;
  }

 private:
  Tensor<S> tracked_;
  uint64_t bound_tape_id_ = 0;
};

namespace detail {

template <class S>
inline Tape<S>* common_tape(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.tape && b.tape)
    SS_CHECK(a.tape == b.tape, "binary op: operands live on different tapes");
  return a.tape ? a.tape : b.tape;
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  SS_CHECK(a.shape == b.shape,
           "add: shape mismatch " << a.shape.str() << " vs " << b.shape.str());
  Tensor<S> out(a.shape);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (long long i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  if (Tape<S>* tp = detail::common_tape(a, b)) {
    int an = a.node, bn = b.node, on = tp->size();
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, on](Tape<S>& t) {
      const auto& go = t.grad(on);
      if (an >= 0) {
        auto& ga = t.grad(an);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad(bn);
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  SS_CHECK(a.shape == b.shape,
           "mul: shape mismatch " << a.shape.str() << " vs " << b.shape.str());
  Tensor<S> out(a.shape);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (long long i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  if (Tape<S>* tp = detail::common_tape(a, b)) {
    int an = a.node, bn = b.node, on = tp->size();
    auto sa = a.store, sb = b.store;
    out.tape = tp;
    out.node = tp->record(out.shape, [an, bn, on, sa, sb](Tape<S>& t) {
      const auto& go = t.grad(on);
      if (an >= 0) {
        auto& ga = t.grad(an);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (*sb)[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad(bn);
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * (*sa)[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S s) {
  Tensor<S> out(x.shape);
  const S* px = x.data();
  S* po = out.data();
  for (long long i = 0; i < out.numel(); ++i) po[i] = px[i] * s;
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, s](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * s;
    });
  }
  return out;
}

namespace detail {

// Pointwise op where dy/dx is a function of (x, y).
template <class S, class F, class D>
Tensor<S> pointwise(const Tensor<S>& x, F f, D dydx) {
  Tensor<S> out(x.shape);
  const S* px = x.data();
  S* po = out.data();
  for (long long i = 0; i < out.numel(); ++i) po[i] = f(px[i]);
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    auto sx = x.store, sy = out.store;
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on, sx, sy, dydx](Tape<S>& t) {
      const auto& go = t.grad(on);
      auto& gx = t.grad(xn);
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dydx((*sx)[i], (*sy)[i]);
    });
  }
  return out;
}

}  // namespace detail

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> tanh_t(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::pointwise(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

// Sum of all elements, as a (1,1,1,1) tensor.
template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  Tensor<S> out(Shape{1, 1, 1, 1});
  S acc = 0;
  const S* px = x.data();
  for (long long i = 0; i < x.numel(); ++i) acc += px[i];
  out.data()[0] = acc;
  if (x.tape) {
    int xn = x.node, on = x.tape->size();
    out.tape = x.tape;
    out.node = x.tape->record(out.shape, [xn, on](Tape<S>& t) {
      S g = t.grad(on)[0];
      auto& gx = t.grad(xn);
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
  SS_CHECK(!xs.empty(), "concat_channels: no inputs");
  Shape sh = xs[0].shape;
  int ctot = 0;
  Tape<S>* tp = nullptr;
  for (const auto& x : xs) {
    SS_CHECK(x.shape.n == sh.n && x.shape.h == sh.h && x.shape.w == sh.w,
             "concat_channels: spatial/batch mismatch " << x.shape.str() << " vs " << sh.str());
    ctot += x.shape.c;
    if (x.tape) {
      SS_CHECK(!tp || tp == x.tape, "concat_channels: operands on different tapes");
      tp = x.tape;
    }
  }
  Tensor<S> out(Shape{sh.n, ctot, sh.h, sh.w});
  long long plane = 1LL * sh.h * sh.w;
  for (int in = 0; in < sh.n; ++in) {
    long long co = 0;
    for (const auto& x : xs) {
      const S* px = x.data() + 1LL * in * x.shape.c * plane;
      S* po = out.data() + (1LL * in * ctot + co) * plane;
      std::copy(px, px + 1LL * x.shape.c * plane, po);
      co += x.shape.c;
    }
  }
  if (tp) {
    std::vector<int> nodes;
    std::vector<int> chans;
    for (const auto& x : xs) {
      nodes.push_back(x.node);
      chans.push_back(x.shape.c);
    }
    int on = tp->size();
    int n = sh.n;
    out.tape = tp;
    out.node = tp->record(out.shape, [nodes, chans, on, n, ctot, plane](Tape<S>& t) {
      const auto& go = t.grad(on);
      for (int in = 0; in < n; ++in) {
        long long co = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
          if (nodes[k] >= 0) {
            auto& gx = t.grad(nodes[k]);
            const S* pg = go.data() + (1LL * in * ctot + co) * plane;
            S* px = gx.data() + 1LL * in * chans[k] * plane;
            for (long long i = 0; i < chans[k] * plane; ++i) px[i] += pg[i];
          }
          co += chans[k];
        }
      }
    });
  }
  return out;
}

}  // namespace seqseg
