#pragma once

#include "seqseg/layers.hpp"

namespace seqseg {

// Cascade Feature Fusion: coarse path is upsampled x2 and passed through a
// dilated 3x3 conv, fine path through a 1x1 projection; the sum is relu'd.
// Auxiliary K-channel logits hang off the upsampled coarse path for cascade
// label guidance during training.
template <class S>
struct Cff {
  Conv2dLayer<S> dil, proj, aux;

  Cff() = default;

  Cff(const std::string& prefix, int cf, int num_classes)
      : dil(prefix + ".dil", cf, cf, 3, 1, 2, 2),
        proj(prefix + ".proj", cf, cf, 1, 1, 0),
        aux(prefix + ".aux", cf, num_classes, 1, 1, 0) {}

  std::pair<Tensor<S>, Tensor<S>> forward(const Tensor<S>& low, const Tensor<S>& high,
                                          Tape<S>* tp) {
    SS_CHECK(low.shape.h * 2 == high.shape.h && low.shape.w * 2 == high.shape.w,
             "cff: low " << low.shape.str() << " must be half the size of high "
                         << high.shape.str());
    auto up = bilinear_upsample(low, 2);
    auto fused = relu(add(dil.forward(up, tp), proj.forward(high, tp)));
    auto aux_logits = aux.forward(up, tp);
    return {fused, aux_logits};
  }

  void collect(std::vector<Param<S>*>& out) {
    dil.collect(out);
    proj.collect(out);
    aux.collect(out);
  }
};

// Three-branch cascade network. Branch output strides are 16 (low, deep stack
// with pyramid pooling), 8 (medium) and 4 (high, shallow); CFF1 fuses low
// into medium, CFF2 fuses the result into high, and two upsample+conv stages
// bring the stride-4 map back to input resolution. ConvLSTM placements:
//   v1: end of high branch        v2: in front of the softmax
//   v3: end of low branch         v4: v3 + end of medium branch
//   v5: end of every branch       v6: v5 + v2
template <class S>
class ICNet : public Network<S> {
 public:
  explicit ICNet(const NetworkSpec& spec) : spec_(spec) {
    spec_.validate();
    SS_CHECK(spec_.family == Family::icnet, "ICNet: spec family mismatch");
    const int d = spec_.channel_scale;
    s1_ = 32 / d;
    s2_ = 64 / d;
    cf_ = 128 / d;
    h1_ = 64 / d;
    h2_ = 32 / d;
    SS_CHECK(s1_ >= 1 && h2_ >= 1, "ICNet: channel_scale " << d << " leaves a stage empty");
    const int k = spec_.num_classes;

    high_a_ = Conv2dLayer<S>("high.conv0", 3, s1_, 3, 2);
    high_b_ = Conv2dLayer<S>("high.conv1", s1_, s2_, 3, 2);
    high_c_ = Conv2dLayer<S>("high.conv2", s2_, cf_, 3, 1);

    med_a_ = Conv2dLayer<S>("med.conv0", 3, s1_, 3, 2);
    med_b_ = Conv2dLayer<S>("med.conv1", s1_, s2_, 3, 2);
    med_res_ = ResidualBlock<S>("med.res0", s2_, s2_, 1);
    med_c_ = Conv2dLayer<S>("med.conv2", s2_, cf_, 3, 1);

    low_a_ = Conv2dLayer<S>("low.conv0", 3, s1_, 3, 2);
    low_b_ = Conv2dLayer<S>("low.conv1", s1_, s2_, 3, 2);
    low_res1_ = ResidualBlock<S>("low.res0", s2_, s2_, 1);
    low_res2_ = ResidualBlock<S>("low.res1", s2_, cf_, 1);
    psp_proj_ = Conv2dLayer<S>("low.psp_proj", cf_ * 5, cf_, 1, 1, 0);

    cff1_ = Cff<S>("cff1", cf_, k);
    mid_conv_ = Conv2dLayer<S>("mid.conv0", cf_, cf_, 3, 1);
    cff2_ = Cff<S>("cff2", cf_, k);

    head_a_ = Conv2dLayer<S>("headup.conv0", cf_, h1_, 3, 1);
    head_b_ = Conv2dLayer<S>("headup.conv1", h1_, h2_, 3, 1);
    head_cls_ = Conv2dLayer<S>("head", h2_, k, 1, 1, 0);

    const int v = spec_.version;
    const int H = spec_.input_h, W = spec_.input_w;
    if (v == 3 || v == 4 || v == 5 || v == 6) {
      cell_low_ = ConvLstmCell<S>(cf_, "lstm_low");
      cell_shapes_.push_back(Shape{1, cf_, H / 16, W / 16});
    }
    if (v == 4 || v == 5 || v == 6) {
      cell_med_ = ConvLstmCell<S>(cf_, "lstm_med");
      cell_shapes_.push_back(Shape{1, cf_, H / 8, W / 8});
    }
    if (v == 1 || v == 5 || v == 6) {
      cell_high_ = ConvLstmCell<S>(cf_, "lstm_high");
      cell_shapes_.push_back(Shape{1, cf_, H / 4, W / 4});
    }
    if (v == 2 || v == 6) {
      cell_presoftmax_ = ConvLstmCell<S>(k, "lstm_presoftmax");
      cell_shapes_.push_back(Shape{1, k, H, W});
    }
  }

  StepOut<S> forward(const Tensor<S>& frame, std::vector<ConvLstmState<S>>& states,
                     Tape<S>* tp) override {
    SS_CHECK(frame.shape.c == 3 && frame.shape.h == spec_.input_h &&
                 frame.shape.w == spec_.input_w,
             "ICNet forward: frame " << frame.shape.str() << " does not match spec input (3,"
                                     << spec_.input_h << "," << spec_.input_w << ")");
    SS_CHECK(states.size() == cell_shapes_.size(), "ICNet forward: wrong state count");
    auto half = avgpool2x2(frame);
    auto quarter = avgpool2x2(half);

    auto f_high = relu(high_c_.forward(relu(high_b_.forward(relu(high_a_.forward(frame, tp)), tp)), tp));

    auto m = relu(med_b_.forward(relu(med_a_.forward(half, tp)), tp));
    m = med_res_.forward(m, tp);
    auto f_med = relu(med_c_.forward(m, tp));

    auto l = relu(low_b_.forward(relu(low_a_.forward(quarter, tp)), tp));
    l = low_res2_.forward(low_res1_.forward(l, tp), tp);
    std::vector<Tensor<S>> pyramid{l};
    for (int bins : {1, 2, 3, 6})
      pyramid.push_back(nearest_resize(adaptive_avg_pool(l, bins), l.shape.h, l.shape.w));
    auto f_low = relu(psp_proj_.forward(concat_channels(pyramid), tp));

    int si = 0;
    auto apply_cell = [&](ConvLstmCell<S>& cell, Tensor<S>& x) {
      if (cell.channels == 0) return;
      auto [h, s2] = cell.step(x, states[si], tp);
      x = h;
      states[si++] = s2;
    };
    apply_cell(cell_low_, f_low);
    apply_cell(cell_med_, f_med);
    apply_cell(cell_high_, f_high);

    StepOut<S> out;
    auto [fused1, aux1] = cff1_.forward(f_low, f_med, tp);
    auto mid = relu(mid_conv_.forward(fused1, tp));
    auto [fused2, aux2] = cff2_.forward(mid, f_high, tp);

    auto y = relu(head_a_.forward(bilinear_upsample(fused2, 2), tp));
    y = relu(head_b_.forward(bilinear_upsample(y, 2), tp));
    out.logits = head_cls_.forward(y, tp);
    apply_cell(cell_presoftmax_, out.logits);
    out.probs = softmax_channels(out.logits);
    out.aux = {aux1, aux2};
    return out;
  }

  std::vector<Param<S>*> params() override {
    std::vector<Param<S>*> ps;
    high_a_.collect(ps);
    high_b_.collect(ps);
    high_c_.collect(ps);
    med_a_.collect(ps);
    med_b_.collect(ps);
    med_res_.collect(ps);
    med_c_.collect(ps);
    low_a_.collect(ps);
    low_b_.collect(ps);
    low_res1_.collect(ps);
    low_res2_.collect(ps);
    psp_proj_.collect(ps);
    cff1_.collect(ps);
    mid_conv_.collect(ps);
    cff2_.collect(ps);
    head_a_.collect(ps);
    head_b_.collect(ps);
    head_cls_.collect(ps);
    for (auto* cell : {&cell_low_, &cell_med_, &cell_high_, &cell_presoftmax_})
      if (cell->channels > 0)
        for (auto* p : cell->params()) ps.push_back(p);
    return ps;
  }

  std::vector<CellInfo<S>> cells() override {
    std::vector<CellInfo<S>> cs;
    size_t k = 0;
    if (cell_low_.channels > 0) cs.push_back({"low", &cell_low_, cell_shapes_[k++]});
    if (cell_med_.channels > 0) cs.push_back({"med", &cell_med_, cell_shapes_[k++]});
    if (cell_high_.channels > 0) cs.push_back({"high", &cell_high_, cell_shapes_[k++]});
    if (cell_presoftmax_.channels > 0)
      cs.push_back({"presoftmax", &cell_presoftmax_, cell_shapes_[k++]});
    return cs;
  }

  const NetworkSpec& spec() const override { return spec_; }

 private:
  NetworkSpec spec_;
  int s1_, s2_, cf_, h1_, h2_;
  Conv2dLayer<S> high_a_, high_b_, high_c_;
  Conv2dLayer<S> med_a_, med_b_, med_c_;
  ResidualBlock<S> med_res_;
  Conv2dLayer<S> low_a_, low_b_, psp_proj_;
  ResidualBlock<S> low_res1_, low_res2_;
  Cff<S> cff1_, cff2_;
  Conv2dLayer<S> mid_conv_;
  Conv2dLayer<S> head_a_, head_b_, head_cls_;
  ConvLstmCell<S> cell_low_, cell_med_, cell_high_, cell_presoftmax_;
  std::vector<Shape> cell_shapes_;
};

}  // namespace seqseg
