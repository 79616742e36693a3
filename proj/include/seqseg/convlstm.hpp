#pragma once

#include "seqseg/nn_ops.hpp"

namespace seqseg {

template <class S>
struct ConvLstmState {
  Tensor<S> h, c;
};

// Peephole-free convLSTM cell with fixed 3x3 same-padded gate convolutions.
// Output channels equal input channels.
template <class S>
struct ConvLstmCell {
  int channels = 0;
  Param<S> w_xi, w_hi, w_xf, w_hf, w_xg, w_hg, w_xo, w_ho;
  Param<S> b_i, b_f, b_g, b_o;
  // Reserved: peephole (Hadamard cell-to-gate) terms are not implemented.
  bool peephole = false;

  ConvLstmCell() = default;

  ConvLstmCell(int ch, const std::string& prefix) : channels(ch) {
    Shape ks{ch, ch, 3, 3};
    auto init = [&](Param<S>& p, const char* n, Shape sh) {
      p.name = prefix + "." + n;
      p.value = Tensor<S>::zeros(sh);
    };
    init(w_xi, "w_xi", ks);
    init(w_hi, "w_hi", ks);
    init(w_xf, "w_xf", ks);
    init(w_hf, "w_hf", ks);
    init(w_xg, "w_xg", ks);
    init(w_hg, "w_hg", ks);
    init(w_xo, "w_xo", ks);
    init(w_ho, "w_ho", ks);
    init(b_i, "b_i", Shape{ch, 1, 1, 1});
    init(b_f, "b_f", Shape{ch, 1, 1, 1});
    init(b_g, "b_g", Shape{ch, 1, 1, 1});
    init(b_o, "b_o", Shape{ch, 1, 1, 1});
  }

  std::vector<Param<S>*> params() {
    return {&w_xi, &w_hi, &w_xf, &w_hf, &w_xg, &w_hg, &w_xo, &w_ho,
            &b_i,  &b_f,  &b_g,  &b_o};
  }

  ConvLstmState<S> zero_state(int n, int h, int w) const {
    SS_CHECK(n >= 1 && h >= 1 && w >= 1, "zero_state: non-positive dims");
    Shape sh{n, channels, h, w};
    return {Tensor<S>::zeros(sh), Tensor<S>::zeros(sh)};
  }

  // i = s(Wxi*x + Whi*h + bi), f = s(Wxf*x + Whf*h + bf),
  // g = tanh(Wxg*x + Whg*h + bg), o = s(Wxo*x + Who*h + bo),
  // c' = f.c + i.g, h' = o.tanh(c').
  std::pair<Tensor<S>, ConvLstmState<S>> step(const Tensor<S>& x,
                                              const ConvLstmState<S>& s, Tape<S>* tp) {
    SS_CHECK(x.shape.c == channels,
             "convlstm step: input channels " << x.shape.c << " != cell channels " << channels);
    SS_CHECK(x.shape.n == s.h.shape.n && x.shape.h == s.h.shape.h && x.shape.w == s.h.shape.w,
             "convlstm step: input " << x.shape.str() << " vs state " << s.h.shape.str());
    Tensor<S> none;
    auto gate = [&](Param<S>& wx, Param<S>& wh, Param<S>& b) {
      return add(conv2d(x, wx.use(tp), b.use(tp), 1, 1, 1),
                 conv2d(s.h, wh.use(tp), none, 1, 1, 1));
    };
    auto i = sigmoid(gate(w_xi, w_hi, b_i));
    auto f = sigmoid(gate(w_xf, w_hf, b_f));
    auto g = tanh_t(gate(w_xg, w_hg, b_g));
    auto o = sigmoid(gate(w_xo, w_ho, b_o));
    auto c2 = add(mul(f, s.c), mul(i, g));
    auto h2 = mul(o, tanh_t(c2));
    return {h2, ConvLstmState<S>{h2, c2}};
  }

  // Folds step over the frames from a zero state; the tape spans all frames
  // (full backpropagation through time).
  Tensor<S> run_sequence(const std::vector<Tensor<S>>& frames, Tape<S>* tp) {
    SS_CHECK(!frames.empty(), "run_sequence: empty sequence");
    for (const auto& fr : frames)
      SS_CHECK(fr.shape == frames[0].shape, "run_sequence: non-uniform frame shapes");
    auto st = zero_state(frames[0].shape.n, frames[0].shape.h, frames[0].shape.w);
    Tensor<S> h;
    for (const auto& fr : frames) {
      auto [hh, st2] = step(fr, st, tp);
      h = hh;
      st = st2;
    }
    return h;
  }
};

}  // namespace seqseg
