#pragma once

#include "seqseg/network.hpp"

namespace seqseg {

template <class S>
struct Conv2dLayer {
  Param<S> w, b;
  int stride = 1, pad = 1, dilation = 1;

  Conv2dLayer() = default;

  Conv2dLayer(const std::string& prefix, int cin, int cout, int k, int stride_ = 1,
              int pad_ = -1, int dilation_ = 1)
      : stride(stride_), pad(pad_ < 0 ? (k / 2) * dilation_ : pad_), dilation(dilation_) {
    w.name = prefix + ".w";
    w.value = Tensor<S>::zeros(Shape{cout, cin, k, k});
    b.name = prefix + ".b";
    b.value = Tensor<S>::zeros(Shape{cout, 1, 1, 1});
  }

  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tp) {
    return conv2d(x, w.use(tp), b.use(tp), stride, pad, dilation);
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// conv-relu-conv plus identity (or 1x1 projected) skip, relu at the end.
template <class S>
struct ResidualBlock {
  Conv2dLayer<S> conv1, conv2, proj;
  bool has_proj = false;

  ResidualBlock() = default;

  ResidualBlock(const std::string& prefix, int cin, int cout, int stride = 1) {
    conv1 = Conv2dLayer<S>(prefix + ".conv1", cin, cout, 3, stride);
    conv2 = Conv2dLayer<S>(prefix + ".conv2", cout, cout, 3, 1);
    has_proj = stride != 1 || cin != cout;
    if (has_proj) proj = Conv2dLayer<S>(prefix + ".proj", cin, cout, 1, stride, 0);
  }

  Tensor<S> forward(const Tensor<S>& x, Tape<S>* tp) {
    auto y = conv2.forward(relu(conv1.forward(x, tp)), tp);
    auto skip = has_proj ? proj.forward(x, tp) : x;
    return relu(add(y, skip));
  }

  void collect(std::vector<Param<S>*>& out) {
    conv1.collect(out);
    conv2.collect(out);
    if (has_proj) proj.collect(out);
  }
};

}  // namespace seqseg
